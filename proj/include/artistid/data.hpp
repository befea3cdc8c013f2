#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "artistid/dsp.hpp"
#include "artistid/ingest.hpp"
#include "artistid/tensor.hpp"

namespace artistid {

enum class SplitMode { song, album };

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view s);

struct SplitSpec {
  SplitMode mode = SplitMode::song;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> train;  // each list sorted ascending
  std::vector<std::uint32_t> val;
  std::vector<std::uint32_t> test;

  bool operator==(const SplitSpec&) const = default;
};

/// Artist name <-> 0-based class index over sorted names.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> sorted_artists);
  static LabelMap from_manifest(const DatasetManifest& manifest) { return LabelMap(manifest.artists); }

  int index(const std::string& artist) const;
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int, std::less<>> index_;
};

/// ceil(n / 10) in integer arithmetic.
std::size_t tenth_ceil(std::size_t n);

/// Per artist: ceil(10%) of songs to test, then ceil(10%) of the remainder to
/// validation, rest to train. Songs are chosen by a seeded shuffle within each
/// artist, visiting artists in sorted order.
SplitSpec song_split(const DatasetManifest& manifest, std::uint64_t seed);

/// Per artist: one seeded-random album to test, another to validation, the
/// remaining albums to train.
SplitSpec album_split(const DatasetManifest& manifest, std::uint64_t seed);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);
std::string split_to_string(const SplitSpec& split);

struct ClipRef {
  std::uint32_t track_id = 0;
  std::uint32_t clip_index = 0;
  bool operator==(const ClipRef&) const = default;
};

struct Batch {
  Tensor<float> inputs;  // batch x 1 x n_mels x clip_frames
  std::vector<int> labels;
  std::vector<ClipRef> provenance;

  std::size_t size() const { return labels.size(); }
};

/// All clips of a set of tracks, held in memory after slicing their cached
/// spectrograms. Clips are ordered by ascending track_id, then clip index.
class ClipDataset {
 public:
  static ClipDataset load(const DatasetManifest& manifest, const LabelMap& labels,
                          std::vector<std::uint32_t> track_ids, const std::filesystem::path& cache_dir,
                          const DspParams& params, double clip_seconds);

  /// Builds a dataset directly from spectrograms (used by tests and the
  /// synthetic pipeline). Each entry pairs a spectrogram with its label.
  static ClipDataset from_spectrograms(const std::vector<std::pair<MelSpectrogram, int>>& songs,
                                       double clip_seconds);

  std::size_t size() const { return refs_.size(); }
  bool empty() const { return refs_.empty(); }
  int n_mels() const { return n_mels_; }
  int clip_frames() const { return clip_frames_; }
  const ClipRef& ref(std::size_t i) const { return refs_[i]; }
  int label(std::size_t i) const { return labels_[i]; }
  const Eigen::MatrixXf& clip(std::size_t i) const { return clips_[i]; }
  std::size_t tracks_without_clips() const { return short_tracks_; }

  /// Gathers the listed clip positions into one batch.
  Batch gather(std::span<const std::size_t> positions) const;

 private:
  int n_mels_ = 0;
  int clip_frames_ = 0;
  std::size_t short_tracks_ = 0;
  std::vector<ClipRef> refs_;
  std::vector<int> labels_;
  std::vector<Eigen::MatrixXf> clips_;
};

/// Clip positions in batch order. Without shuffling this is the dataset's own
/// order; with shuffling it is a seeded Fisher-Yates permutation.
std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, bool shuffle);

/// Splits the dataset into consecutive batches of batch_size (last one may
/// be shorter).
std::vector<Batch> make_batches(const ClipDataset& data, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);

/// Loads clips for the listed tracks and batches them in one call.
std::vector<Batch> make_batches(const DatasetManifest& manifest, const LabelMap& labels,
                                const std::vector<std::uint32_t>& track_ids,
                                const std::filesystem::path& cache_dir, const DspParams& params,
                                double clip_seconds, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);

}  // namespace artistid
