#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "artistid/cli.hpp"
#include "oracles.hpp"

using namespace artistid;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small dataset, cache and song split shared by the cases below.
class Workspace {
 public:
  Workspace() : dir_("cli") {
    check(run({"synth", "--out", s(dir_ / "data"), "--artists", "2", "--albums", "3", "--songs", "6", "--seconds", "4",
               "--seed", "2"}));
    check(run({"preprocess", "--root", s(dir_ / "data"), "--cache", cache()}));
    check(run({"split", "--cache", cache(), "--mode", "song", "--seed", "1", "--out", s(dir_ / "split.txt")}));
  }
  static void check(const Result& r) {
    INFO(r.err);
    REQUIRE(r.code == 0);
  }
  static std::string s(const std::filesystem::path& p) { return p.string(); }
  std::string cache() const { return s(dir_ / "cache"); }
  std::string split() const { return s(dir_ / "split.txt"); }
  std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  oracle::TempDir dir_;
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("album split is reproducible byte for byte") {
  auto& ws = workspace();
  for (const char* name : {"a1.txt", "a2.txt"}) {
    Workspace::check(run({"split", "--cache", ws.cache(), "--mode", "album", "--seed", "7", "--out", Workspace::s(ws / name)}));
  }
  const auto a = slurp(ws / "a1.txt");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(ws / "a2.txt"));
}

TEST_CASE("train, evaluate and export embeddings") {
  auto& ws = workspace();
  const auto ckpt = Workspace::s(ws / "m.crnn");
  Workspace::check(run({"train", "--cache", ws.cache(), "--split", ws.split(), "--clip-seconds", "1", "--max-epochs",
                        "2", "--checkpoint", ckpt, "--history", Workspace::s(ws / "h.tsv")}));
  CHECK(std::filesystem::exists(ckpt));
  CHECK(slurp(ws / "h.tsv").rfind("epoch\ttrain_loss\tval_loss\tval_f1\n", 0) == 0);

  const auto song = run({"eval", "--cache", ws.cache(), "--split", ws.split(), "--checkpoint", ckpt, "--level", "song"});
  REQUIRE(song.code == 0);
  CHECK(song.out.find("level=song") != std::string::npos);
  CHECK(song.out.find("split_mode=song") != std::string::npos);
  CHECK(song.out.find("weighted_f1=") != std::string::npos);

  const auto emb = Workspace::s(ws / "emb.tsv");
  Workspace::check(run({"embed", "--cache", ws.cache(), "--split", ws.split(), "--checkpoint", ckpt, "--out", emb}));
  CHECK(slurp(emb).rfind("track_id\tartist\tclip_index\te0\t", 0) == 0);
}

TEST_CASE("sweep writes one report per clip length") {
  auto& ws = workspace();
  const auto out_dir = Workspace::s(ws / "sweep");
  const auto r = run({"sweep", "--cache", ws.cache(), "--split", ws.split(), "--clip-seconds", "1,3", "--max-epochs",
                      "1", "--output-dir", out_dir});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto one = slurp(ws / "sweep/t1s/report_song.txt");
  const auto three = slurp(ws / "sweep/t3s/report_song.txt");
  CHECK(one.find("clip_seconds=1\n") != std::string::npos);
  CHECK(three.find("clip_seconds=3\n") != std::string::npos);
  CHECK(std::filesystem::exists(ws / "sweep/t3s/model.crnn"));
}

TEST_CASE("errors") {
  auto& ws = workspace();
  {
    std::ofstream(ws / "bad.conf") << "learning_rat = 0.1\n";
  }
  const auto r = run({"split", "--config", Workspace::s(ws / "bad.conf"), "--cache", ws.cache()});
  CHECK(r.code != 0);
  CHECK(r.err.find("learning_rat") != std::string::npos);
  CHECK(run({"split", "--cache", ws.cache(), "--mode", "artist"}).code != 0);
  CHECK(run({"eval", "--cache", ws.cache(), "--checkpoint", Workspace::s(ws / "none.crnn")}).code != 0);
  CHECK(run({"frobnicate"}).code != 0);

  // The installed binary reports the same failure through its exit status.
  const std::string cmd = std::string(ARTISTID_CLI_PATH) + " split --config " + Workspace::s(ws / "bad.conf") +
                          " >/dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) != 0);
}
