#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "artistid/binio.hpp"
#include "artistid/dsp.hpp"
#include "artistid/error.hpp"
#include "artistid/ingest.hpp"
#include "oracles.hpp"

using namespace artistid;
namespace fs = std::filesystem;

namespace {

// Minimal RIFF writer for formats write_wav does not produce.
void write_raw_wav(const fs::path& path, std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                   std::uint16_t bits, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  out.write("RIFF", 4);
  binio::put_u32(out, static_cast<std::uint32_t>(36 + data.size()));
  out.write("WAVEfmt ", 8);
  binio::put_u32(out, 16);
  binio::put_u16(out, format);
  binio::put_u16(out, channels);
  binio::put_u32(out, rate);
  binio::put_u32(out, rate * block);
  binio::put_u16(out, block);
  binio::put_u16(out, bits);
  out.write("data", 4);
  binio::put_u32(out, static_cast<std::uint32_t>(data.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

std::string pcm16(std::initializer_list<std::int16_t> values) {
  std::string s;
  for (auto v : values) {
    const auto u = static_cast<std::uint16_t>(v);
    s.push_back(static_cast<char>(u & 0xff));
    s.push_back(static_cast<char>(u >> 8));
  }
  return s;
}

}  // namespace

TEST_CASE("decode_wav normalises 16-bit samples by 32768") {
  oracle::TempDir dir("decode16");
  write_raw_wav(dir / "a.wav", 1, 1, 16000, 16, pcm16({0, 32767, -32768, 16384}));
  const auto w = decode_wav(dir / "a.wav");
  REQUIRE(w.samples.size() == 4);
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples[0] == 0.0f);
  CHECK(w.samples[1] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-9));
  CHECK(w.samples[2] == -1.0f);
  CHECK(w.samples[3] == 0.5f);
}

TEST_CASE("decode_wav averages stereo to mono") {
  oracle::TempDir dir("stereo");
  write_raw_wav(dir / "s.wav", 1, 2, 8000, 16, pcm16({16384, -16384, 8192, 8192}));
  const auto w = decode_wav(dir / "s.wav");
  REQUIRE(w.samples.size() == 2);
  CHECK(w.samples[0] == 0.0f);
  CHECK(w.samples[1] == 0.25f);
}

TEST_CASE("decode_wav reads and clamps float32") {
  oracle::TempDir dir("float");
  std::string data;
  for (float v : {0.25f, -2.0f}) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) data.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  write_raw_wav(dir / "f.wav", 3, 1, 16000, 32, data);
  const auto w = decode_wav(dir / "f.wav");
  REQUIRE(w.samples.size() == 2);
  CHECK(w.samples[0] == 0.25f);
  CHECK(w.samples[1] == -1.0f);
}

TEST_CASE("decode_wav errors name the file") {
  oracle::TempDir dir("bad");
  {
    std::ofstream(dir / "junk.wav") << "not a wav file at all";
  }
  try {
    decode_wav(dir / "junk.wav");
    FAIL("expected a decode error");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("junk.wav") != std::string::npos);
  }
  write_raw_wav(dir / "pcm8.wav", 1, 1, 16000, 8, "abcd");
  CHECK_THROWS_AS(decode_wav(dir / "pcm8.wav"), DecodeError);
  CHECK_THROWS_AS(decode_wav(dir / "missing.wav"), DecodeError);
}

TEST_CASE("write_wav then decode_wav is exact for 16-bit grid values") {
  oracle::TempDir dir("roundtrip");
  Waveform w{{0.0f, 0.5f, -0.25f, 32767.0f / 32768.0f}, 22050};
  write_wav(dir / "r.wav", w);
  const auto back = decode_wav(dir / "r.wav");
  CHECK(back.sample_rate == 22050);
  CHECK(back.samples == w.samples);
}

TEST_CASE("resample") {
  SUBCASE("identity when rates match") {
    Waveform w{{0.1f, -0.7f, 0.3f}, 16000};
    CHECK(resample(w, 16000).samples == w.samples);
  }
  SUBCASE("constant stays constant") {
    for (auto [from, to] : {std::pair{44100, 16000}, std::pair{8000, 16000}, std::pair{22050, 11025}}) {
      Waveform w{std::vector<float>(5000, 0.3f), from};
      const auto r = resample(w, to);
      CHECK(r.sample_rate == to);
      CHECK(r.samples.size() == static_cast<std::size_t>(std::llround(5000.0 * to / from)));
      for (float v : r.samples) CHECK(v == doctest::Approx(0.3f).epsilon(1e-7));
    }
  }
  SUBCASE("a 1 kHz tone keeps its dominant bin after 32 kHz -> 16 kHz") {
    Waveform w;
    w.sample_rate = 32000;
    for (int i = 0; i < 32000; ++i) w.samples.push_back(static_cast<float>(0.5 * std::cos(2 * M_PI * 1000.0 * i / 32000)));
    const auto r = resample(w, 16000);
    const DspParams p;
    const auto power = oracle::naive_stft_power(Waveform{std::vector<float>(r.samples.begin(), r.samples.begin() + 4096), 16000}, p);
    Eigen::Index bin;
    power.col(2).maxCoeff(&bin);
    CHECK(bin == 128);  // 1000 Hz / (16000 / 2048)
  }
}

TEST_CASE("scan_dataset") {
  oracle::TempDir dir("scan");
  SUBCASE("empty root") {
    const auto m = scan_dataset(dir.path());
    CHECK(m.tracks.empty());
    CHECK(m.artists.empty());
  }
  SUBCASE("two artists, one album, two tracks each") {
    for (const char* a : {"beta", "alpha"}) {
      for (const char* t : {"t1.wav", "t2.wav"}) oracle::write_tone(dir.path() / a / "album" / t, 440, 0.1);
    }
    { std::ofstream(dir.path() / "alpha" / "album" / "cover.jpg") << "x"; }
    { std::ofstream(dir.path() / "stray.wav") << "x"; }
    const auto m = scan_dataset(dir.path());
    REQUIRE(m.tracks.size() == 4);
    CHECK(m.artists == std::vector<std::string>{"alpha", "beta"});
    CHECK(m.skipped_files == 2);
    for (std::uint32_t i = 0; i < 4; ++i) CHECK(m.tracks[i].track_id == i);
    CHECK(m.tracks[0].artist == "alpha");
    CHECK(m.tracks[0].title == "t1");

    save_manifest(m, dir / "manifest.tsv");
    const auto back = load_manifest(dir / "manifest.tsv");
    REQUIRE(back.tracks.size() == 4);
    CHECK(back.artists == m.artists);
    CHECK(back.tracks[3].path == m.tracks[3].path);
  }
  SUBCASE("twenty artists with six albums each") {
    for (int a = 0; a < 20; ++a) {
      for (int b = 0; b < 6; ++b) {
        const auto p = dir.path() / ("artist" + std::to_string(a)) / ("album" + std::to_string(b)) / "x.wav";
        fs::create_directories(p.parent_path());
        std::ofstream(p) << "";
      }
    }
    const auto m = scan_dataset(dir.path());
    CHECK(m.artists.size() == 20);
    std::map<std::string, std::set<std::string>> albums;
    for (const auto& t : m.tracks) albums[t.artist].insert(t.album);
    for (const auto& [artist, set] : albums) CHECK(set.size() == 6);
  }
  CHECK_THROWS_AS(scan_dataset(dir / "nope"), DataError);
}
