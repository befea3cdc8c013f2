#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "artistid/crnn.hpp"
#include "artistid/data.hpp"

namespace artistid {

/// K x K counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  void add(int truth, int predicted, std::uint64_t count = 1);
  std::uint64_t at(int truth, int predicted) const;
  int classes() const { return k_; }
  std::uint64_t total() const;
  std::uint64_t row_sum(int truth) const;
  std::uint64_t col_sum(int predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_ = 0;
  std::vector<std::uint64_t> counts_;
};

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

/// Precision, recall and F1 per class. A zero denominator scores 0.
std::vector<ClassScore> class_scores(const ConfusionMatrix& cm);

/// Support-weighted mean of per-class F1. Requires a non-empty matrix.
double weighted_f1(const ConfusionMatrix& cm);

enum class EvalLevel { frame, song };
std::string to_string(EvalLevel level);
EvalLevel parse_eval_level(std::string_view s);

struct EvalReport {
  EvalLevel level = EvalLevel::frame;
  ConfusionMatrix confusion;
  std::vector<ClassScore> classes;
  double weighted_f1 = 0.0;
};

EvalReport make_report(EvalLevel level, const ConfusionMatrix& cm);

struct ReportHeader {
  std::string split_mode;
  double clip_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// Header block, one row per class, then "weighted_f1=<value>".
std::string format_report(const EvalReport& report, const ReportHeader& header,
                          const std::vector<std::string>& class_names);

struct ClipPrediction {
  ClipRef ref;
  int label = 0;
  int predicted = 0;
  std::vector<float> probabilities;
};

/// Runs the model in inference mode over every clip, in dataset order.
std::vector<ClipPrediction> predict_clips(Crnn& model, const ClipDataset& clips, std::size_t batch_size = 32);

/// Modal class of one song's frame predictions. Ties go to the class with the
/// larger summed softmax probability (when `summed_probs` is given, indexed by
/// class), then to the lowest class index.
int song_vote(std::span<const int> frame_predictions, std::span<const double> summed_probs = {});

struct SongPrediction {
  std::uint32_t track_id = 0;
  int label = 0;
  int predicted = 0;
  std::size_t frames = 0;
};

/// Groups clip predictions by track and votes each track.
std::vector<SongPrediction> vote_songs(const std::vector<ClipPrediction>& clips);

EvalReport frame_report(const std::vector<ClipPrediction>& clips, int n_classes);
EvalReport song_report(const std::vector<ClipPrediction>& clips, int n_classes);

/// Frame level: every clip is one sample.
EvalReport frame_eval(Crnn& model, const ClipDataset& clips);
/// Song level: majority vote per track, one sample per track.
EvalReport song_eval(Crnn& model, const ClipDataset& clips);

/// Writes one tab-separated row per clip: track_id, artist, clip_index,
/// e0..e{units-1} (the bottleneck vector). Returns the number of rows.
std::size_t export_embeddings(Crnn& model, const ClipDataset& clips, const std::vector<std::string>& class_names,
                              const std::filesystem::path& out_path);

}  // namespace artistid
