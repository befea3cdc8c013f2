#include <doctest.h>

#include "artistid/error.hpp"
#include "artistid/trainer.hpp"

using namespace artistid;

namespace {

struct Tiny {
  CrnnConfig cfg;
  ClipDataset train, val;
};

// Two "artists" whose spectrograms differ in which half of the mel axis is loud.
Tiny tiny_problem() {
  DspParams params;
  params.n_mels = 16;
  Tiny t;
  t.cfg.n_mels = 16;
  t.cfg.n_classes = 2;
  t.cfg.clip_frames = clip_frames(1.0, params);
  t.cfg.conv_channels = {4, 4};
  t.cfg.pools = {{4, 2}, {4, 2}};
  t.cfg.gru_units = {4, 4};
  Rng rng(5);
  auto song = [&](std::uint32_t id, int label) {
    MelSpectrogram mel;
    mel.params = params;
    mel.track_id = id;
    mel.values = Eigen::MatrixXf::Random(16, 2 * t.cfg.clip_frames) * 5.0f;
    mel.values.middleRows(label == 0 ? 0 : 8, 8).array() += 20.0f;
    return std::make_pair(mel, label);
  };
  std::vector<std::pair<MelSpectrogram, int>> tr, va;
  for (std::uint32_t i = 0; i < 8; ++i) tr.push_back(song(i, static_cast<int>(i % 2)));
  for (std::uint32_t i = 8; i < 10; ++i) va.push_back(song(i, static_cast<int>(i % 2)));
  t.train = ClipDataset::from_spectrograms(tr, 1.0);
  t.val = ClipDataset::from_spectrograms(va, 1.0);
  return t;
}

}  // namespace

TEST_CASE("early stopping") {
  SUBCASE("improvements reset the counter") {
    EarlyStopping es(2);
    CHECK(es.update(1.0) == StopDecision::keep_going);
    CHECK(es.improved());
    CHECK(es.update(1.5) == StopDecision::keep_going);
    CHECK(es.update(0.5) == StopDecision::keep_going);
    CHECK(es.stale_epochs() == 0);
    CHECK(es.update(0.6) == StopDecision::keep_going);
    CHECK(es.update(0.7) == StopDecision::stop);
    CHECK(es.best() == 0.5);
  }
  SUBCASE("changes within tolerance are not improvements") {
    EarlyStopping es(1, 1e-6);
    es.update(1.0);
    CHECK(es.update(1.0 - 5e-7) == StopDecision::stop);
    CHECK_FALSE(es.improved());
  }
  SUBCASE("patience 1 on 1.0, 0.9, 0.95") {
    const std::vector<double> losses{1.0, 0.9, 0.95, 0.1};
    int best = 0;
    const auto history = run_epochs(
        10, 1,
        [&](int epoch) {
          EpochStats s;
          s.epoch = epoch;
          s.val_loss = losses[static_cast<std::size_t>(epoch - 1)];
          return s;
        },
        [&](const EpochStats& s) { best = s.epoch; });
    CHECK(history.size() == 3);
    CHECK(best == 2);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training a tiny problem") {
  const auto t = tiny_problem();
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 4;
  cfg.max_epochs = 6;
  cfg.clip_seconds = 1.0;
  cfg.seed = 3;
  auto a = train(Crnn(t.cfg, cfg.seed), t.train, t.val, cfg);
  CHECK(a.history.size() == 6);
  CHECK(a.history.back().train_loss < a.history.front().train_loss);
  CHECK(a.model.meta.epoch == a.best_epoch);
  CHECK(a.model.meta.clip_seconds == 1.0);

  SUBCASE("the same seed reproduces the run exactly") {
    auto b = train(Crnn(t.cfg, cfg.seed), t.train, t.val, cfg);
    CHECK(history_table(a.history, false) == history_table(b.history, false));
    CHECK(checkpoint_bytes(a.model) == checkpoint_bytes(b.model));
  }
  SUBCASE("history table") {
    const auto table = history_table(a.history);
    CHECK(table.rfind("epoch\ttrain_loss\tval_loss\tval_f1\tseconds\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 7);
  }
}
