#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "artistid/crnn.hpp"
#include "artistid/dsp.hpp"
#include "artistid/kv.hpp"
#include "artistid/trainer.hpp"

namespace artistid::cli {

/// Every tunable of a pipeline run. Defaults are the published FFT settings
/// plus the trainer and architecture defaults.
struct RunConfig {
  DspParams dsp;
  TrainConfig train;
  CrnnConfig model;
  std::filesystem::path dataset_root;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path split_file;
  std::filesystem::path checkpoint;
  std::filesystem::path output;

  static const std::vector<std::string>& keys();

  /// Applies every entry of `doc`; unknown keys are a ConfigError.
  void apply(const KeyValueDoc& doc);
  void set(const std::string& key, const std::string& value);
  KeyValueDoc to_doc() const;
};

inline constexpr const char* kCacheDirEnv = "ARTISTID_CACHE_DIR";
inline constexpr const char* kOutputDirEnv = "ARTISTID_OUTPUT_DIR";

/// Entry point behind the `artistid` binary. Returns the process exit code;
/// diagnostics go to `err`, reports to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace artistid::cli
