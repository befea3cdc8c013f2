#include "artistid/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "artistid/error.hpp"
#include "artistid/kv.hpp"

namespace artistid {

ConfusionMatrix::ConfusionMatrix(int classes)
    : k_(classes), counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0) {
  if (classes < 0) throw ShapeError("confusion matrix needs a non-negative class count");
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) {
    throw ShapeError("confusion matrix index outside [0, " + std::to_string(k_) + ")");
  }
  counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(predicted));
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
  std::uint64_t s = 0;
  for (int j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(int predicted) const {
  std::uint64_t s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, predicted);
  return s;
}

std::vector<ClassScore> class_scores(const ConfusionMatrix& cm) {
  std::vector<ClassScore> out(static_cast<std::size_t>(cm.classes()));
  for (int k = 0; k < cm.classes(); ++k) {
    auto& s = out[static_cast<std::size_t>(k)];
    const auto tp = cm.at(k, k);
    const auto predicted = cm.col_sum(k);
    s.support = cm.row_sum(k);
    s.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    s.recall = s.support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(s.support);
    const double denom = s.precision + s.recall;
    s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  }
  return out;
}

double weighted_f1(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw DataError("weighted F1 of an empty confusion matrix");
  double acc = 0.0;
  for (const auto& s : class_scores(cm)) acc += static_cast<double>(s.support) * s.f1;
  return acc / static_cast<double>(total);
}

std::string to_string(EvalLevel level) { return level == EvalLevel::frame ? "frame" : "song"; }

EvalLevel parse_eval_level(std::string_view s) {
  if (s == "frame") return EvalLevel::frame;
  if (s == "song") return EvalLevel::song;
  throw ConfigError("level must be 'frame' or 'song', got '" + std::string(s) + "'");
}

EvalReport make_report(EvalLevel level, const ConfusionMatrix& cm) {
  EvalReport r;
  r.level = level;
  r.confusion = cm;
  r.classes = class_scores(cm);
  r.weighted_f1 = weighted_f1(cm);
  return r;
}

std::string format_report(const EvalReport& report, const ReportHeader& header,
                          const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "level=" << to_string(report.level) << '\n';
  out << "split_mode=" << header.split_mode << '\n';
  out << "clip_seconds=" << format_real(header.clip_seconds) << '\n';
  out << "seed=" << header.seed << '\n';
  out << "class\tartist\tprecision\trecall\tf1\tsupport\n";
  for (std::size_t k = 0; k < report.classes.size(); ++k) {
    const auto& s = report.classes[k];
    const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
    out << k << '\t' << name << '\t' << format_real(s.precision) << '\t' << format_real(s.recall) << '\t'
        << format_real(s.f1) << '\t' << s.support << '\n';
  }
  out << "weighted_f1=" << format_real(report.weighted_f1) << '\n';
  return out.str();
}

std::vector<ClipPrediction> predict_clips(Crnn& model, const ClipDataset& clips, std::size_t batch_size) {
  std::vector<ClipPrediction> out;
  out.reserve(clips.size());
  for (const auto& batch : make_batches(clips, batch_size, 0, false)) {
    const auto probs = model.predict_proba(batch.inputs);
    const auto k = probs.dim(1);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      ClipPrediction p;
      p.ref = batch.provenance[b];
      p.label = batch.labels[b];
      p.probabilities.assign(probs.raw() + b * k, probs.raw() + (b + 1) * k);
      p.predicted = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                     p.probabilities.begin());
      out.push_back(std::move(p));
    }
  }
  return out;
}

int song_vote(std::span<const int> frame_predictions, std::span<const double> summed_probs) {
  if (frame_predictions.empty()) throw DataError("song vote needs at least one frame prediction");
  std::map<int, std::size_t> counts;
  for (int c : frame_predictions) ++counts[c];
  int best = -1;
  std::size_t best_count = 0;
  double best_prob = 0.0;
  // Ascending class order, so equal counts and probabilities keep the lowest index.
  for (const auto& [cls, count] : counts) {
    const double prob = static_cast<std::size_t>(cls) < summed_probs.size() ? summed_probs[static_cast<std::size_t>(cls)] : 0.0;
    if (best < 0 || count > best_count || (count == best_count && prob > best_prob)) {
      best = cls;
      best_count = count;
      best_prob = prob;
    }
  }
  return best;
}

std::vector<SongPrediction> vote_songs(const std::vector<ClipPrediction>& clips) {
  std::map<std::uint32_t, std::vector<const ClipPrediction*>> by_track;
  for (const auto& c : clips) by_track[c.ref.track_id].push_back(&c);
  std::vector<SongPrediction> out;
  for (const auto& [track, frames] : by_track) {
    std::vector<int> preds;
    std::vector<double> sums;
    for (const auto* f : frames) {
      preds.push_back(f->predicted);
      if (sums.size() < f->probabilities.size()) sums.resize(f->probabilities.size(), 0.0);
      for (std::size_t k = 0; k < f->probabilities.size(); ++k) sums[k] += f->probabilities[k];
      if (f->label != frames.front()->label) {
        throw DataError("track " + std::to_string(track) + " has clips with different labels");
      }
    }
    out.push_back({track, frames.front()->label, song_vote(preds, sums), frames.size()});
  }
  return out;
}

EvalReport frame_report(const std::vector<ClipPrediction>& clips, int n_classes) {
  if (clips.empty()) throw DataError("frame evaluation on an empty test set");
  ConfusionMatrix cm(n_classes);
  for (const auto& c : clips) cm.add(c.label, c.predicted);
  return make_report(EvalLevel::frame, cm);
}

EvalReport song_report(const std::vector<ClipPrediction>& clips, int n_classes) {
  if (clips.empty()) throw DataError("song evaluation on an empty test set");
  ConfusionMatrix cm(n_classes);
  for (const auto& s : vote_songs(clips)) cm.add(s.label, s.predicted);
  return make_report(EvalLevel::song, cm);
}

EvalReport frame_eval(Crnn& model, const ClipDataset& clips) {
  if (clips.empty()) throw DataError("frame evaluation on an empty test set");
  return frame_report(predict_clips(model, clips), model.config().n_classes);
}

EvalReport song_eval(Crnn& model, const ClipDataset& clips) {
  if (clips.empty()) throw DataError("song evaluation on an empty test set");
  return song_report(predict_clips(model, clips), model.config().n_classes);
}

std::size_t export_embeddings(Crnn& model, const ClipDataset& clips, const std::vector<std::string>& class_names,
                              const std::filesystem::path& out_path) {
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write embeddings to " + out_path.string());
  const auto units = static_cast<std::size_t>(model.config().bottleneck_size());
  out << "track_id\tartist\tclip_index";
  for (std::size_t u = 0; u < units; ++u) out << "\te" << u;
  out << '\n';
  std::size_t rows = 0;
  for (const auto& batch : make_batches(clips, 32, 0, false)) {
    const auto res = model.forward(batch.inputs, Mode::infer);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ref = batch.provenance[b];
      const auto label = static_cast<std::size_t>(batch.labels[b]);
      out << ref.track_id << '\t' << (label < class_names.size() ? class_names[label] : std::to_string(label)) << '\t'
          << ref.clip_index;
      for (std::size_t u = 0; u < units; ++u) out << '\t' << format_real(res.bottleneck[b * units + u]);
      out << '\n';
      ++rows;
    }
  }
  if (!out) throw DataError("write failed: " + out_path.string());
  return rows;
}

}  // namespace artistid
