#include "artistid/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "artistid/error.hpp"
#include "artistid/random.hpp"

namespace artistid {

namespace {

struct ArtistProfile {
  double base_hz;
  double rolloff;  // harmonic h has amplitude h^-rolloff
  bool odd_only;
  double noise_hz;
};

constexpr std::array<ArtistProfile, 8> kProfiles{{
    {98.0, 0.6, false, 400.0},
    {147.0, 1.0, true, 1200.0},
    {220.0, 1.6, false, 2800.0},
    {330.0, 2.2, true, 5200.0},
    {123.0, 0.8, true, 3600.0},
    {185.0, 1.3, false, 700.0},
    {262.0, 0.5, true, 1800.0},
    {392.0, 1.9, false, 6400.0},
}};

constexpr std::array<int, 8> kScale{0, 2, 4, 5, 7, 9, 11, 12};
constexpr int kHarmonics = 8;

}  // namespace

Waveform synth_song(int artist, int album, int song, const SynthConfig& cfg) {
  if (artist < 0 || album < 0 || song < 0) throw ConfigError("synthetic indices must be non-negative");
  const auto& prof = kProfiles[static_cast<std::size_t>(artist) % kProfiles.size()];
  // Artists past the table reuse a timbre an octave up.
  const double octave = std::pow(2.0, static_cast<double>(static_cast<std::size_t>(artist) / kProfiles.size()));
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(artist) * 1000003u + static_cast<std::uint64_t>(song)));

  const double fs = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.seconds * fs));
  const double album_gain = 0.6 + 0.05 * (album % 6);
  const double gain = album_gain * uniform(rng, 0.8, 1.0);
  const double noise_level = uniform(rng, 0.2, 0.6);
  const double note_len = uniform(rng, 0.2, 0.6);
  // Per-song key and timbre drift; registers of neighbouring artists overlap.
  const double key = std::pow(2.0, uniform(rng, -7.0, 7.0) / 12.0);
  const double rolloff = prof.rolloff + uniform(rng, -0.4, 0.4);
  const double noise_hz = prof.noise_hz * uniform(rng, 0.7, 1.4);
  const double beat_level = uniform(rng, 0.0, 0.5);
  const double beat_period = uniform(rng, 0.3, 0.7);
  const double nyquist = fs / 2.0;

  std::vector<double> tone(n, 0.0);
  const auto note_samples = std::max<std::size_t>(1, static_cast<std::size_t>(note_len * fs));
  std::array<double, kHarmonics> phase{};
  for (auto& p : phase) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double root_hz = prof.base_hz * octave * key;
  double f0 = root_hz;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t in_note = i % note_samples;
    if (in_note == 0) {
      const int step = kScale[static_cast<std::size_t>(uniform_index(rng, kScale.size()))];
      f0 = root_hz * std::pow(2.0, step / 12.0);
    }
    const double t = static_cast<double>(in_note) / fs;
    const double env = std::exp(-3.0 * t / note_len) * (1.0 - std::exp(-60.0 * t)) + 0.1;
    double v = 0.0;
    for (int h = 0; h < kHarmonics; ++h) {
      const int mult = prof.odd_only ? 2 * h + 1 : h + 1;
      const double f = f0 * mult;
      if (f >= nyquist) break;
      auto& ph = phase[static_cast<std::size_t>(h)];
      ph += 2.0 * std::numbers::pi * f / fs;
      if (ph > 2.0 * std::numbers::pi) ph -= 2.0 * std::numbers::pi;
      v += std::pow(static_cast<double>(mult), -rolloff) * std::sin(ph);
    }
    tone[i] = env * v;
  }

  // Band-limited noise: white noise through a constant-peak-gain biquad bandpass.
  const double w0 = 2.0 * std::numbers::pi * std::min(noise_hz * octave, 0.45 * fs) / fs;
  const double q = 4.0;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  std::vector<double> noise(n);
  double noise_peak = 1e-12, tone_peak = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = normal(rng);
    const double y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    noise[i] = y;
    noise_peak = std::max(noise_peak, std::abs(y));
    tone_peak = std::max(tone_peak, std::abs(tone[i]));
  }

  // Percussion shared by all artists: decaying broadband bursts on a beat grid.
  const auto beat_samples = std::max<std::size_t>(1, static_cast<std::size_t>(beat_period * fs));
  std::vector<double> beat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i % beat_samples) / fs;
    beat[i] = std::exp(-40.0 * t) * uniform(rng, -1.0, 1.0);
  }

  // One break: a 2.5-4 s stretch where only the shared layers play. A clip
  // that falls inside it carries no artist information.
  std::vector<double> presence(n, 1.0);
  if (const auto len = static_cast<std::size_t>(uniform(rng, 2.5, 4.0) * fs); len < n) {
    const auto start = static_cast<std::size_t>(uniform_index(rng, n - len));
    for (std::size_t i = start; i < start + len; ++i) presence[i] = 0.0;
  }

  Waveform wave;
  wave.sample_rate = cfg.sample_rate;
  wave.samples.resize(n);
  double peak = 1e-12;
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) {
    mix[i] = presence[i] * (tone[i] / tone_peak + noise_level * noise[i] / noise_peak) + beat_level * beat[i] +
             (1.0 - presence[i]) * 0.3 * uniform(rng, -1.0, 1.0);
    peak = std::max(peak, std::abs(mix[i]));
  }
  for (std::size_t i = 0; i < n; ++i) wave.samples[i] = static_cast<float>(0.9 * gain * mix[i] / peak);
  return wave;
}

DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg) {
  if (cfg.artists < 1 || cfg.albums_per_artist < 1 || cfg.songs_per_artist < cfg.albums_per_artist) {
    throw ConfigError("synthetic dataset needs >= 1 artist and at least one song per album");
  }
  for (int a = 0; a < cfg.artists; ++a) {
    for (int s = 0; s < cfg.songs_per_artist; ++s) {
      const int album = s * cfg.albums_per_artist / cfg.songs_per_artist;
      char dir[64], file[32];
      std::snprintf(dir, sizeof(dir), "artist_%02d/album_%02d", a, album);
      std::snprintf(file, sizeof(file), "song_%02d.wav", s);
      const auto d = root / dir;
      std::filesystem::create_directories(d);
      write_wav(d / file, synth_song(a, album, s, cfg));
    }
  }
  return scan_dataset(root);
}

}  // namespace artistid
