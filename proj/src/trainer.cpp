#include "artistid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "artistid/error.hpp"
#include "artistid/evalkit.hpp"
#include "artistid/kv.hpp"
#include "artistid/random.hpp"

namespace artistid {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch normalization)");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(clip_seconds > 0.0)) throw ConfigError("clip_seconds must be positive");
}

EarlyStopping::EarlyStopping(int patience, double tolerance)
    : patience_(patience), tolerance_(tolerance), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

StopDecision EarlyStopping::update(double val_loss) {
  improved_ = val_loss < best_ - tolerance_;
  if (improved_) {
    best_ = val_loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_ ? StopDecision::stop : StopDecision::keep_going;
}

std::vector<EpochStats> run_epochs(int max_epochs, int patience, const std::function<EpochStats(int)>& run_epoch,
                                   const std::function<void(const EpochStats&)>& on_best) {
  EarlyStopping stopper(patience);
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    history.push_back(run_epoch(epoch));
    const auto decision = stopper.update(history.back().val_loss);
    if (stopper.improved() && on_best) on_best(history.back());
    if (decision == StopDecision::stop) break;
  }
  return history;
}

double mean_loss(Crnn& model, const ClipDataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("loss of an empty dataset");
  double total = 0.0;
  for (const auto& batch : make_batches(data, batch_size, 0, false)) {
    const auto out = model.forward(batch.inputs, Mode::infer);
    total += static_cast<double>(softmax_cross_entropy(out.logits, batch.labels).loss) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(Crnn model, const ClipDataset& train_set, const ClipDataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");

  Adam<float> optimizer(model.parameters(), AdamConfig{cfg.lr});
  std::vector<Tensor<float>> best_state = model.snapshot();
  EpochStats best_stats;

  const auto run_epoch = [&](int epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = batch_order(train_set.size(), mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), true);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const auto count = std::min(cfg.batch_size, order.size() - begin);
      if (count < 2) continue;
      const auto batch = train_set.gather(std::span(order).subspan(begin, count));
      optimizer.zero_grad();
      const auto out = model.forward(batch.inputs, Mode::train);
      const auto loss = softmax_cross_entropy(out.logits, batch.labels);
      if (!std::isfinite(loss.loss)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      model.backward(loss.d_logits);
      optimizer.step();
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(count);
      seen += count;
    }
    if (seen == 0) throw DataError("training set has fewer than two clips");

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    double val_loss = 0.0;
    ConfusionMatrix cm(model.config().n_classes);
    for (const auto& batch : make_batches(val_set, 32, 0, false)) {
      const auto out = model.forward(batch.inputs, Mode::infer);
      val_loss += static_cast<double>(softmax_cross_entropy(out.logits, batch.labels).loss) *
                  static_cast<double>(batch.size());
      const auto k = out.logits.dim(1);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const float* row = out.logits.raw() + b * k;
        cm.add(batch.labels[b], static_cast<int>(std::max_element(row, row + k) - row));
      }
    }
    stats.val_loss = val_loss / static_cast<double>(val_set.size());
    if (!std::isfinite(stats.val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    stats.val_f1 = weighted_f1(cm);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(stats);
    return stats;
  };

  const auto on_best = [&](const EpochStats& s) {
    best_state = model.snapshot();
    best_stats = s;
  };

  auto history = run_epochs(cfg.max_epochs, cfg.patience, run_epoch, on_best);
  model.restore(best_state);
  model.meta.epoch = best_stats.epoch;
  model.meta.best_val_loss = best_stats.val_loss;
  model.meta.best_val_f1 = best_stats.val_f1;
  model.meta.seed = cfg.seed;
  model.meta.clip_seconds = cfg.clip_seconds;
  return TrainResult{std::move(model), std::move(history), best_stats.epoch};
}

std::string history_table(const std::vector<EpochStats>& history, bool include_time) {
  std::ostringstream out;
  out << "epoch\ttrain_loss\tval_loss\tval_f1";
  if (include_time) out << "\tseconds";
  out << '\n';
  for (const auto& s : history) {
    out << s.epoch << '\t' << format_real(s.train_loss) << '\t' << format_real(s.val_loss) << '\t'
        << format_real(s.val_f1);
    if (include_time) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", s.seconds);
      out << '\t' << buf;
    }
    out << '\n';
  }
  return out.str();
}

void save_history(const std::vector<EpochStats>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write history to " + path.string());
  out << history_table(history);
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace artistid
