#include <doctest.h>

#include <fstream>
#include <sstream>

#include "artistid/error.hpp"
#include "artistid/evalkit.hpp"
#include "oracles.hpp"

using namespace artistid;

namespace {

ConfusionMatrix from_pairs(int k, const std::vector<std::pair<int, int>>& pairs) {
  ConfusionMatrix cm(k);
  for (auto [t, p] : pairs) cm.add(t, p);
  return cm;
}

ClipPrediction clip(std::uint32_t track, int label, int predicted) {
  ClipPrediction c;
  c.ref = {track, 0};
  c.label = label;
  c.predicted = predicted;
  c.probabilities.assign(3, 0.0f);
  c.probabilities[static_cast<std::size_t>(predicted)] = 1.0f;
  return c;
}

}  // namespace

TEST_CASE("weighted F1 by hand") {
  // truth [A, A, B], predicted [A, B, B]: F1_A = 2/3, F1_B = 2/3.
  const auto cm = from_pairs(2, {{0, 0}, {0, 1}, {1, 1}});
  CHECK(weighted_f1(cm) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // Everything predicted as one of four balanced classes: F1 = 0.4 for it.
  ConfusionMatrix one(4);
  for (int t = 0; t < 4; ++t) one.add(t, 0, 5);
  CHECK(weighted_f1(one) == doctest::Approx(0.1).epsilon(1e-12));

  // [[1, 1], [0, 1]]
  const auto s = class_scores(from_pairs(2, {{0, 0}, {0, 1}, {1, 1}}));
  CHECK(s[0].precision == 1.0);
  CHECK(s[0].recall == 0.5);
  CHECK(s[1].precision == 0.5);
  CHECK(s[1].recall == 1.0);
  CHECK(s[0].support == 2);

  ConfusionMatrix perfect(3);
  for (int t = 0; t < 3; ++t) perfect.add(t, t, 2);
  CHECK(weighted_f1(perfect) == 1.0);
  CHECK_THROWS(weighted_f1(ConfusionMatrix(3)));
}

TEST_CASE("weighted F1 agrees with the counting oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(uniform_index(rng, 6));
    std::vector<std::pair<int, int>> samples;
    const auto n = 1 + uniform_index(rng, 60);
    for (std::size_t i = 0; i < n; ++i) {
      samples.emplace_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k))),
                           static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k))));
    }
    CHECK(weighted_f1(from_pairs(k, samples)) == oracle::brute_force_weighted_f1(samples, k));
  }
}

TEST_CASE("song votes") {
  CHECK(song_vote(std::vector<int>{3, 3, 7, 3, 1}) == 3);
  const std::vector<double> probs{0, 0, 1.3, 0, 0, 1.4};
  CHECK(song_vote(std::vector<int>{2, 2, 5, 5}, probs) == 5);
  CHECK(song_vote(std::vector<int>{2, 2, 5, 5}) == 2);
  CHECK_THROWS_AS(song_vote(std::vector<int>{}), DataError);

  const std::vector<ClipPrediction> clips{clip(4, 1, 1), clip(4, 1, 2), clip(4, 1, 1), clip(9, 0, 2)};
  const auto songs = vote_songs(clips);
  REQUIRE(songs.size() == 2);
  CHECK(songs[0].track_id == 4);
  CHECK(songs[0].predicted == 1);
  CHECK(songs[0].frames == 3);
  CHECK(songs[1].predicted == 2);
  CHECK(song_report(clips, 3).confusion.total() == 2);
  CHECK(frame_report(clips, 3).confusion.total() == 4);
}

TEST_CASE("report text") {
  const auto report = make_report(EvalLevel::song, from_pairs(2, {{0, 0}, {1, 1}, {1, 0}}));
  const auto text = format_report(report, {"album", 3.0, 7}, {"alpha", "beta"});
  CHECK(text.find("level=song\n") != std::string::npos);
  CHECK(text.find("split_mode=album\n") != std::string::npos);
  CHECK(text.find("clip_seconds=3\n") != std::string::npos);
  CHECK(text.find("seed=7\n") != std::string::npos);
  CHECK(text.find("\talpha\t") != std::string::npos);
  CHECK(text.rfind("weighted_f1=") != std::string::npos);
  CHECK(parse_eval_level("frame") == EvalLevel::frame);
  CHECK_THROWS(parse_eval_level("album"));
}

TEST_CASE("embedding export") {
  DspParams params;
  params.n_mels = 16;
  CrnnConfig cfg;
  cfg.n_mels = 16;
  cfg.n_classes = 2;
  cfg.clip_frames = clip_frames(1.0, params);
  cfg.conv_channels = {4, 4};
  cfg.pools = {{4, 2}, {4, 2}};
  cfg.gru_units = {4, 3};
  Crnn model(cfg, 1);

  std::vector<std::pair<MelSpectrogram, int>> songs;
  Rng rng(2);
  for (std::uint32_t t = 0; t < 2; ++t) {
    MelSpectrogram mel;
    mel.params = params;
    mel.track_id = t;
    mel.values = Eigen::MatrixXf::Random(16, 3 * cfg.clip_frames);
    songs.emplace_back(mel, static_cast<int>(t));
  }
  const auto clips = ClipDataset::from_spectrograms(songs, 1.0);
  REQUIRE(clips.size() == 6);

  oracle::TempDir dir("emb");
  CHECK(export_embeddings(model, clips, {"a", "b"}, dir / "e.tsv") == 6);
  std::ifstream in(dir / "e.tsv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "track_id\tartist\tclip_index\te0\te1\te2");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), '\t') == 5);
  }
  CHECK(rows == 6);

  const auto preds = predict_clips(model, clips);
  CHECK(preds.size() == 6);
  CHECK(preds[5].ref.track_id == 1);
  CHECK(preds[5].ref.clip_index == 2);
}
