#include "artistid/ingest.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "artistid/binio.hpp"
#include "artistid/error.hpp"
#include "artistid/kv.hpp"

namespace artistid {

namespace fs = std::filesystem;

const TrackMeta& DatasetManifest::track(std::uint32_t track_id) const {
  // Ids are assigned densely by scan_dataset, but manifests loaded from disk
  // may have been filtered, so fall back to a search.
  if (track_id < tracks.size() && tracks[track_id].track_id == track_id) return tracks[track_id];
  auto it = std::find_if(tracks.begin(), tracks.end(),
                         [&](const TrackMeta& t) { return t.track_id == track_id; });
  if (it == tracks.end()) throw DataError("unknown track_id " + std::to_string(track_id));
  return *it;
}

namespace {

bool is_wav(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());

  DatasetManifest manifest;
  std::vector<fs::path> audio;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root);
    const auto depth = std::distance(rel.begin(), rel.end());
    if (depth != 3 || !is_wav(entry.path())) {
      ++manifest.skipped_files;
      continue;
    }
    audio.push_back(entry.path());
  }
  std::sort(audio.begin(), audio.end());

  std::set<std::string> artists;
  std::uint32_t next_id = 0;
  for (const auto& p : audio) {
    TrackMeta t;
    t.album = p.parent_path().filename().string();
    t.artist = p.parent_path().parent_path().filename().string();
    t.title = p.stem().string();
    t.path = p;
    t.track_id = next_id++;
    artists.insert(t.artist);
    manifest.tracks.push_back(std::move(t));
  }
  manifest.artists.assign(artists.begin(), artists.end());
  if (manifest.skipped_files > 0) {
    std::cerr << "warning: skipped " << manifest.skipped_files << " non-audio file(s) under "
              << root.string() << "\n";
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "track_id\tartist\talbum\ttitle\tpath\n";
  for (const auto& t : manifest.tracks) {
    out << t.track_id << '\t' << t.artist << '\t' << t.album << '\t' << t.title << '\t'
        << t.path.generic_string() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  std::getline(in, line);
  if (line != "track_id\tartist\talbum\ttitle\tpath") {
    throw FormatError(path.string() + ": bad manifest header");
  }
  std::set<std::string> artists;
  std::set<std::uint32_t> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_list(line, '\t');
    if (cols.size() != 5) throw FormatError(path.string() + ": expected 5 columns: " + line);
    TrackMeta t;
    t.track_id = static_cast<std::uint32_t>(parse_int(cols[0], "track_id"));
    t.artist = cols[1];
    t.album = cols[2];
    t.title = cols[3];
    t.path = cols[4];
    if (t.artist.empty() || t.album.empty()) {
      throw FormatError(path.string() + ": empty artist or album for track " + cols[0]);
    }
    if (!ids.insert(t.track_id).second) {
      throw FormatError(path.string() + ": duplicate track_id " + cols[0]);
    }
    artists.insert(t.artist);
    manifest.tracks.push_back(std::move(t));
  }
  manifest.artists.assign(artists.begin(), artists.end());
  return manifest;
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct FmtInfo {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Waveform decode_wav(const fs::path& path) {
  const auto fail = [&](const std::string& why) -> DecodeError {
    return DecodeError(path.string() + ": " + why);
  };

  std::ifstream in(path, std::ios::binary);
  if (!in) throw fail("cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  FmtInfo fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Some writers leave a bogus size on the final data chunk; clamp it.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      fmt.format = le16(f);
      fmt.channels = le16(f + 2);
      fmt.sample_rate = le32(f + 4);
      fmt.block_align = le16(f + 12);
      fmt.bits = le16(f + 14);
      if (fmt.format == kFormatExtensible) {
        if (avail < 26) throw fail("extensible fmt chunk too short");
        fmt.format = le16(f + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (fmt.channels != 1 && fmt.channels != 2) {
    throw fail("unsupported channel count " + std::to_string(fmt.channels));
  }
  if (fmt.sample_rate == 0) throw fail("sample rate is zero");
  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  const bool float32 = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !float32) {
    throw fail("unsupported codec (format " + std::to_string(fmt.format) + ", " +
               std::to_string(fmt.bits) + " bits)");
  }
  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (fmt.block_align != frame_bytes) throw fail("inconsistent block alignment");

  const std::size_t n_frames = data_size / frame_bytes;
  Waveform wave;
  wave.sample_rate = static_cast<int>(fmt.sample_rate);
  wave.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const unsigned char* s = data + i * frame_bytes + c * bytes_per_sample;
      double v;
      if (pcm16) {
        v = static_cast<double>(static_cast<std::int16_t>(le16(s))) / 32768.0;
      } else {
        v = std::bit_cast<float>(le32(s));
        if (!std::isfinite(v)) throw fail("non-finite float sample at frame " + std::to_string(i));
        v = std::clamp(v, -1.0, 1.0);
      }
      acc += v;
    }
    wave.samples[i] = static_cast<float>(acc / fmt.channels);
  }
  return wave;
}

void write_wav(const fs::path& path, const Waveform& wave) {
  if (wave.sample_rate <= 0) throw DataError("write_wav: sample rate must be positive");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  binio::put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  binio::put_u32(out, 16);
  binio::put_u16(out, kFormatPcm);
  binio::put_u16(out, 1);
  binio::put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  binio::put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  binio::put_u16(out, 2);
  binio::put_u16(out, 16);
  out.write("data", 4);
  binio::put_u32(out, data_bytes);
  for (float s : wave.samples) {
    const double q = std::round(static_cast<double>(s) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
    binio::put_u16(out, static_cast<std::uint16_t>(v));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (target_rate <= 0) throw DataError("resample: target rate must be positive");
  if (wave.sample_rate <= 0) throw DataError("resample: source rate must be positive");
  if (wave.sample_rate == target_rate) return wave;

  const auto n_in = wave.samples.size();
  const double ratio = static_cast<double>(target_rate) / wave.sample_rate;
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  if (n_in == 0) return out;
  const double step = static_cast<double>(wave.sample_rate) / target_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double src = static_cast<double>(i) * step;
    const auto i0 = std::min(static_cast<std::size_t>(src), n_in - 1);
    const auto i1 = std::min(i0 + 1, n_in - 1);
    const double frac = src - static_cast<double>(i0);
    const double a = wave.samples[i0];
    const double b = wave.samples[i1];
    out.samples[i] = static_cast<float>(a + (b - a) * std::min(frac, 1.0));
  }
  return out;
}

}  // namespace artistid
