#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "artistid/ingest.hpp"

namespace artistid {

struct DspParams {
  int sample_rate = 16000;
  int n_fft = 2048;
  int hop = 512;
  int n_mels = 128;
  double ref_power = 1.0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  bool operator==(const DspParams&) const = default;
};

struct MelFilterbank {
  Eigen::MatrixXd weights;           // n_mels x (n_fft/2 + 1)
  std::vector<double> center_freqs;  // Hz, strictly increasing
};

struct MelSpectrogram {
  Eigen::MatrixXf values;  // n_mels x n_frames, dB
  DspParams params;
  std::uint32_t track_id = 0;

  int n_mels() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
};

inline constexpr double kPowerFloor = 1e-10;

/// Periodic Hann window: w[k] = 0.5 (1 - cos(2 pi k / n)).
std::vector<double> hann_window(int n);

/// Number of frames produced under centre padding: 1 + floor(len / hop).
int frame_count(std::size_t n_samples, int hop);

/// Power spectrogram |X[k, m]|^2, shape (n_fft/2 + 1) x n_frames. The signal
/// is reflect-padded by n_fft/2 on both sides and frame m starts at m*hop.
/// Frames are transformed in parallel; each frame is independent, so the
/// result does not depend on the thread count.
Eigen::MatrixXd stft_power(const Waveform& wave, const DspParams& params);

/// Single-threaded version of stft_power, kept as the reference for tests
/// and benchmarks. Bit-identical to the parallel path.
Eigen::MatrixXd stft_power_serial(const Waveform& wave, const DspParams& params);

double mel_scale(double hz);
double mel_to_hz(double mel);

MelFilterbank mel_filterbank(const DspParams& params);

double power_to_db(double power, double ref_power);

MelSpectrogram mel_spectrogram(const Waveform& wave, const DspParams& params);

/// Same, reusing a prebuilt filterbank for batch preprocessing.
MelSpectrogram mel_spectrogram(const Waveform& wave, const DspParams& params,
                               const MelFilterbank& bank);

/// floor(seconds * sample_rate / hop).
int clip_frames(double seconds, const DspParams& params);

/// Disjoint consecutive clips of clip_frames(seconds) columns; a trailing
/// partial clip is dropped. Songs shorter than one clip give an empty list.
std::vector<Eigen::MatrixXf> slice_clips(const MelSpectrogram& spec, double seconds);

// "MELS" cache: magic, version 0x01, u32 n_mels, u32 n_frames, u32 track_id,
// then f32 values in mel-major row order. All integers little-endian.
void save_mel_cache(const MelSpectrogram& spec, const std::filesystem::path& path);
/// The cache stores no DSP parameters, so the caller supplies them; n_mels must match.
MelSpectrogram load_mel_cache(const std::filesystem::path& path, const DspParams& params);
std::filesystem::path mel_cache_path(const std::filesystem::path& cache_dir, std::uint32_t track_id);

}  // namespace artistid
