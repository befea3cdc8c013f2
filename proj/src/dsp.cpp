#include "artistid/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "artistid/binio.hpp"
#include "artistid/error.hpp"
#include "artistid/fft.hpp"

namespace artistid {

void DspParams::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (n_fft <= 0 || !std::has_single_bit(static_cast<unsigned>(n_fft))) {
    throw ConfigError("n_fft must be a power of two");
  }
  if (hop <= 0 || hop > n_fft) throw ConfigError("hop must satisfy 0 < hop <= n_fft");
  if (n_mels < 1) throw ConfigError("n_mels must be at least 1");
  if (!(ref_power > 0.0)) throw ConfigError("ref_power must be positive");
}

std::vector<double> hann_window(int n) {
  if (n < 1) throw ConfigError("window length must be at least 1");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    w[static_cast<std::size_t>(k)] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / n));
  }
  return w;
}

int frame_count(std::size_t n_samples, int hop) {
  return 1 + static_cast<int>(n_samples / static_cast<std::size_t>(hop));
}

namespace {

// Reflection about the end samples without repeating them, bouncing as many
// times as needed so signals shorter than the pad still work.
std::size_t reflect_index(std::ptrdiff_t j, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  j = std::abs(j) % period;
  if (j >= static_cast<std::ptrdiff_t>(len)) j = period - j;
  return static_cast<std::size_t>(j);
}

struct StftPlan {
  Fft fft;
  std::vector<double> window;
  int n_frames;
  int n_bins;
};

StftPlan make_plan(const Waveform& wave, const DspParams& params) {
  params.validate();
  if (wave.sample_rate != params.sample_rate) {
    throw DataError("waveform sample rate " + std::to_string(wave.sample_rate) +
                    " does not match " + std::to_string(params.sample_rate));
  }
  if (wave.samples.empty()) throw DataError("waveform is empty");
  return StftPlan{Fft(static_cast<std::size_t>(params.n_fft)), hann_window(params.n_fft),
                  frame_count(wave.samples.size(), params.hop), params.n_fft / 2 + 1};
}

void stft_frame(const Waveform& wave, const DspParams& params, const StftPlan& plan, int m,
                std::vector<std::complex<double>>& buf, Eigen::MatrixXd& out) {
  const std::ptrdiff_t pad = params.n_fft / 2;
  const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(m) * params.hop - pad;
  const auto len = wave.samples.size();
  for (int n = 0; n < params.n_fft; ++n) {
    const auto idx = reflect_index(start + n, len);
    buf[static_cast<std::size_t>(n)] = {wave.samples[idx] * plan.window[static_cast<std::size_t>(n)], 0.0};
  }
  plan.fft.transform(buf);
  for (int k = 0; k < plan.n_bins; ++k) out(k, m) = std::norm(buf[static_cast<std::size_t>(k)]);
}

}  // namespace

Eigen::MatrixXd stft_power(const Waveform& wave, const DspParams& params) {
  const auto plan = make_plan(wave, params);
  Eigen::MatrixXd out(plan.n_bins, plan.n_frames);
#pragma omp parallel
  {
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(params.n_fft));
#pragma omp for schedule(static)
    for (int m = 0; m < plan.n_frames; ++m) stft_frame(wave, params, plan, m, buf, out);
  }
  return out;
}

Eigen::MatrixXd stft_power_serial(const Waveform& wave, const DspParams& params) {
  const auto plan = make_plan(wave, params);
  Eigen::MatrixXd out(plan.n_bins, plan.n_frames);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(params.n_fft));
  for (int m = 0; m < plan.n_frames; ++m) stft_frame(wave, params, plan, m, buf, out);
  return out;
}

double mel_scale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(const DspParams& params) {
  params.validate();
  const int n_bins = params.n_fft / 2 + 1;
  const double nyquist = params.sample_rate / 2.0;
  const double mel_max = mel_scale(nyquist);

  // n_mels + 2 equally spaced mel points; filter i spans points i..i+2.
  std::vector<double> hz(static_cast<std::size_t>(params.n_mels + 2));
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(params.n_mels + 1));
  }

  const double bin_hz = static_cast<double>(params.sample_rate) / params.n_fft;
  for (int i = 0; i + 1 < params.n_mels; ++i) {
    const auto a = std::lround(hz[static_cast<std::size_t>(i + 1)] / bin_hz);
    const auto b = std::lround(hz[static_cast<std::size_t>(i + 2)] / bin_hz);
    if (a == b) {
      throw ConfigError("n_mels=" + std::to_string(params.n_mels) +
                        " is too large for n_fft=" + std::to_string(params.n_fft) +
                        ": mel centres " + std::to_string(i) + " and " + std::to_string(i + 1) +
                        " fall in the same FFT bin");
    }
  }

  MelFilterbank bank;
  bank.weights = Eigen::MatrixXd::Zero(params.n_mels, n_bins);
  bank.center_freqs.resize(static_cast<std::size_t>(params.n_mels));
  for (int i = 0; i < params.n_mels; ++i) {
    const double lo = hz[static_cast<std::size_t>(i)];
    const double centre = hz[static_cast<std::size_t>(i + 1)];
    const double hi = hz[static_cast<std::size_t>(i + 2)];
    bank.center_freqs[static_cast<std::size_t>(i)] = centre;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      const double rise = (f - lo) / (centre - lo);
      const double fall = (hi - f) / (hi - centre);
      bank.weights(i, k) = std::max(0.0, std::min(rise, fall));
    }
    if (bank.weights.row(i).maxCoeff() <= 0.0) {
      throw ConfigError("mel filter " + std::to_string(i) + " covers no FFT bin");
    }
  }
  return bank;
}

double power_to_db(double power, double ref_power) {
  return 10.0 * std::log10(std::max(power, kPowerFloor) / ref_power);
}

MelSpectrogram mel_spectrogram(const Waveform& wave, const DspParams& params) {
  return mel_spectrogram(wave, params, mel_filterbank(params));
}

MelSpectrogram mel_spectrogram(const Waveform& wave, const DspParams& params,
                               const MelFilterbank& bank) {
  if (bank.weights.rows() != params.n_mels || bank.weights.cols() != params.n_fft / 2 + 1) {
    throw ShapeError("filterbank does not match DSP parameters");
  }
  const Eigen::MatrixXd power = stft_power(wave, params);
  const Eigen::MatrixXd mel = bank.weights * power;
  MelSpectrogram spec;
  spec.params = params;
  spec.values.resize(mel.rows(), mel.cols());
  for (Eigen::Index c = 0; c < mel.cols(); ++c) {
    for (Eigen::Index r = 0; r < mel.rows(); ++r) {
      spec.values(r, c) = static_cast<float>(power_to_db(mel(r, c), params.ref_power));
    }
  }
  return spec;
}

int clip_frames(double seconds, const DspParams& params) {
  if (!(seconds > 0.0)) throw ConfigError("clip length must be positive");
  return static_cast<int>(std::floor(seconds * params.sample_rate / params.hop));
}

std::vector<Eigen::MatrixXf> slice_clips(const MelSpectrogram& spec, double seconds) {
  const int width = clip_frames(seconds, spec.params);
  std::vector<Eigen::MatrixXf> clips;
  if (width < 1) return clips;
  const int count = spec.n_frames() / width;
  clips.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) clips.emplace_back(spec.values.middleCols(i * width, width));
  return clips;
}

std::filesystem::path mel_cache_path(const std::filesystem::path& cache_dir, std::uint32_t track_id) {
  char name[32];
  std::snprintf(name, sizeof(name), "track_%06u.mels", track_id);
  return cache_dir / name;
}

void save_mel_cache(const MelSpectrogram& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("MELS", 4);
  binio::put_u8(out, 0x01);
  binio::put_u32(out, static_cast<std::uint32_t>(spec.values.rows()));
  binio::put_u32(out, static_cast<std::uint32_t>(spec.values.cols()));
  binio::put_u32(out, spec.track_id);
  for (Eigen::Index r = 0; r < spec.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < spec.values.cols(); ++c) binio::put_f32(out, spec.values(r, c));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

MelSpectrogram load_mel_cache(const std::filesystem::path& path, const DspParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing spectrogram cache " + path.string());
  const std::string what = "spectrogram cache " + path.string();
  char magic[4];
  binio::get_bytes(in, magic, 4, what);
  if (std::string_view(magic, 4) != "MELS") throw FormatError(what + ": bad magic");
  if (binio::get_u8(in, what) != 0x01) throw FormatError(what + ": unsupported version");
  const auto n_mels = binio::get_u32(in, what);
  const auto n_frames = binio::get_u32(in, what);
  MelSpectrogram spec;
  spec.track_id = binio::get_u32(in, what);
  spec.params = params;
  if (static_cast<int>(n_mels) != params.n_mels) {
    throw FormatError(what + ": has " + std::to_string(n_mels) + " mel bins, expected " +
                      std::to_string(params.n_mels));
  }
  spec.values.resize(n_mels, n_frames);
  std::vector<unsigned char> raw(static_cast<std::size_t>(n_mels) * n_frames * 4);
  binio::get_bytes(in, reinterpret_cast<char*>(raw.data()), raw.size(), what);
  std::size_t i = 0;
  for (std::uint32_t r = 0; r < n_mels; ++r) {
    for (std::uint32_t c = 0; c < n_frames; ++c, i += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(raw[i]) |
                                 (static_cast<std::uint32_t>(raw[i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(raw[i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(raw[i + 3]) << 24);
      spec.values(r, c) = std::bit_cast<float>(bits);
    }
  }
  return spec;
}

}  // namespace artistid
