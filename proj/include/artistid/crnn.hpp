#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "artistid/dsp.hpp"
#include "artistid/kv.hpp"
#include "artistid/layers.hpp"

namespace artistid {

struct PoolSize {
  std::size_t freq = 1;
  std::size_t time = 1;
  bool operator==(const PoolSize&) const = default;
};

struct CrnnConfig {
  int n_mels = 128;
  int n_classes = 20;
  int clip_frames = 93;  // 3 s at 16 kHz / hop 512
  std::vector<int> conv_channels{64, 128, 128, 128};
  int kernel_size = 3;
  std::vector<PoolSize> pools{{4, 2}, {4, 2}, {4, 2}, {2, 2}};
  double conv_dropout = 0.1;
  std::vector<int> gru_units{32, 32};
  double final_dropout = 0.3;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Time extent after each pooling stage, starting with clip_frames.
  std::vector<int> time_chain() const;
  /// Frequency extent after each pooling stage, starting with n_mels.
  std::vector<int> freq_chain() const;
  /// Steps entering the recurrent stage.
  int sequence_length() const { return time_chain().back(); }
  /// Smallest clip_frames that survives every time pool.
  int min_clip_frames() const;
  int bottleneck_size() const { return gru_units.back(); }

  void write(KeyValueDoc& doc) const;
  static CrnnConfig read(const KeyValueDoc& doc);

  bool operator==(const CrnnConfig&) const = default;
};

/// Stored alongside the weights so a checkpoint is enough to evaluate.
struct TrainingMeta {
  int epoch = 0;  // 1-based epoch the weights come from; 0 = untrained
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_val_f1 = 0.0;
  std::uint64_t seed = 0;
  double clip_seconds = 3.0;
  DspParams dsp;

  bool operator==(const TrainingMeta&) const = default;
};

struct CrnnOutput {
  Tensor<float> logits;      // batch x n_classes
  Tensor<float> bottleneck;  // batch x final GRU units
};

/// Convolutional-recurrent classifier:
///   4 x [conv 3x3 -> batch norm -> ELU -> max pool -> dropout]
///   -> (batch, time, channels) sequence -> GRU -> GRU (last state is the
///   bottleneck) -> dropout -> dense logits.
/// Softmax is left to the loss and to callers that want probabilities.
class Crnn {
 public:
  struct Block {
    Conv2d<float> conv;
    NormEluPool<float> norm;  // batch norm, ELU, max pool
    Dropout<float> drop;
  };

  Crnn(CrnnConfig config, std::uint64_t seed);

  const CrnnConfig& config() const { return config_; }

  CrnnOutput forward(const Tensor<float>& inputs, Mode mode);
  /// Backpropagates d_logits from the last forward() (which must have been
  /// run in training mode) into the parameter gradients.
  void backward(const Tensor<float>& d_logits);

  std::vector<Parameter<float>*> parameters();
  /// Every tensor that defines the model: parameters plus batch-norm running
  /// statistics, with unique names, in a fixed order.
  std::vector<std::pair<std::string, Tensor<float>*>> state();
  std::vector<std::pair<std::string, const Tensor<float>*>> state() const;

  std::vector<Tensor<float>> snapshot() const;
  void restore(const std::vector<Tensor<float>>& snap);

  /// Probability rows for a batch in inference mode.
  Tensor<float> predict_proba(const Tensor<float>& inputs);

  TrainingMeta meta;

 private:
  CrnnConfig config_;
  std::vector<Block> blocks_;
  std::vector<Gru<float>> grus_;
  Dropout<float> final_drop_;
  Dense<float> head_;
  // cached shapes from the last forward
  Shape conv_out_shape_;
  std::size_t seq_len_ = 0;
};

/// Validates the config and returns a freshly initialised model.
Crnn build_model(const CrnnConfig& config, std::uint64_t seed);

// Checkpoint: "CRNN", version 0x01, u32 LE length + key/value config blob,
// then records {u16 LE name length, name, u8 ndim, ndim x u32 LE dims,
// f32 LE data} until end of file.
void save_checkpoint(const Crnn& model, const std::filesystem::path& path);
std::string checkpoint_bytes(const Crnn& model);

/// Loads a checkpoint. When `expected` is given, a differing embedded config
/// is rejected with a ConfigError.
Crnn load_checkpoint(const std::filesystem::path& path, const CrnnConfig* expected = nullptr);

}  // namespace artistid
