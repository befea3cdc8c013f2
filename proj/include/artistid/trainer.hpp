#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "artistid/crnn.hpp"
#include "artistid/data.hpp"

namespace artistid {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 16;
  int max_epochs = 400;
  int patience = 10;
  double clip_seconds = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  double seconds = 0.0;
};

enum class StopDecision { keep_going, stop };

/// Tracks the best validation loss. An epoch counts as an improvement only if
/// it beats the best by more than `tolerance`.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience, double tolerance = 1e-6);

  StopDecision update(double val_loss);
  bool improved() const { return improved_; }  // whether the last update improved
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }
  int patience() const { return patience_; }

 private:
  int patience_;
  double tolerance_;
  double best_;
  int stale_ = 0;
  bool improved_ = false;
};

/// Epoch driver shared by train(): runs `run_epoch(epoch)` for epochs
/// 1..max_epochs, calls `on_best` whenever validation loss improves and stops
/// after `patience` stale epochs. Returns the history.
std::vector<EpochStats> run_epochs(int max_epochs, int patience, const std::function<EpochStats(int)>& run_epoch,
                                   const std::function<void(const EpochStats&)>& on_best);

struct TrainResult {
  Crnn model;  // weights from the best-validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mean cross-entropy over every clip, inference mode.
double mean_loss(Crnn& model, const ClipDataset& data, std::size_t batch_size = 32);

/// Cross-entropy + Adam with early stopping on validation loss. Train batches
/// are reshuffled each epoch from a seed derived from cfg.seed; a final batch
/// of a single clip is skipped because batch normalization needs two.
TrainResult train(Crnn model, const ClipDataset& train_set, const ClipDataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Tab-separated: epoch, train_loss, val_loss, val_f1, seconds.
std::string history_table(const std::vector<EpochStats>& history, bool include_time = true);
void save_history(const std::vector<EpochStats>& history, const std::filesystem::path& path);

}  // namespace artistid
