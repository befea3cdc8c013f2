#pragma once

#include <cstdint>
#include <filesystem>

#include "artistid/ingest.hpp"

namespace artistid {

/// Synthetic "artists" for desk-scale end-to-end runs. Each artist has a
/// fixed timbre (fundamental register, harmonic roll-off, odd/all harmonics)
/// and a band-limited noise signature; songs vary key, note sequence, tempo,
/// gain, timbre detail, noise level and a percussion layer shared by all
/// artists.
struct SynthConfig {
  int artists = 4;
  int albums_per_artist = 6;
  int songs_per_artist = 24;
  double seconds = 12.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
};

Waveform synth_song(int artist, int album, int song, const SynthConfig& cfg);

/// Writes root/artist_XX/album_YY/song_ZZ.wav for every song and returns the
/// scanned manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg);

}  // namespace artistid
