#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace artistid {

/// Mono PCM audio. Samples are normalized to [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;
};

struct TrackMeta {
  std::string artist;
  std::string album;
  std::string title;
  std::filesystem::path path;
  std::uint32_t track_id = 0;
};

struct DatasetManifest {
  std::vector<TrackMeta> tracks;
  std::vector<std::string> artists;  // sorted, unique
  std::size_t skipped_files = 0;     // non-audio or misplaced files seen by scan_dataset

  const TrackMeta& track(std::uint32_t track_id) const;
};

/// Walks root/<artist>/<album>/<track>.wav. Track ids follow sorted path
/// order, so two scans of the same tree give identical manifests.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Tab-separated manifest file: header line, then
/// track_id, artist, album, title, path per row.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Reads a RIFF/WAVE file holding 16-bit integer or 32-bit float PCM with one
/// or two channels. Stereo is averaged to mono.
Waveform decode_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples outside [-1, 1] are clipped.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Linear-interpolation resampler; returns a copy when the rates match.
Waveform resample(const Waveform& wave, int target_rate);

}  // namespace artistid
