#include "artistid/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "artistid/data.hpp"
#include "artistid/error.hpp"
#include "artistid/evalkit.hpp"
#include "artistid/ingest.hpp"
#include "artistid/synth.hpp"

namespace artistid::cli {
namespace fs = std::filesystem;

namespace {

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ConfigError(std::string(what) + ": expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

int parse_small_int(std::string_view s, std::string_view what) {
  const std::int64_t v = parse_int(s, what);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(std::string(what) + ": out of range");
  }
  return static_cast<int>(v);
}

std::vector<int> parse_small_list(std::string_view s, std::string_view what) {
  std::vector<int> out;
  for (auto v : parse_int_list(s, what)) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<PoolSize> parse_pools(std::string_view s) {
  std::vector<PoolSize> pools;
  for (const auto& item : split_list(s)) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("pools: expected FxT entries, got '" + item + "'");
    const auto f = parse_int(std::string_view(item).substr(0, x), "pools");
    const auto t = parse_int(std::string_view(item).substr(x + 1), "pools");
    if (f < 1 || t < 1) throw ConfigError("pools: sizes must be positive");
    pools.push_back({static_cast<std::size_t>(f), static_cast<std::size_t>(t)});
  }
  return pools;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

const char* manifest_name = "manifest.tsv";
const char* dsp_name = "dsp.conf";

DspParams read_cache_dsp(const fs::path& cache_dir, const DspParams& fallback) {
  const fs::path p = cache_dir / dsp_name;
  if (!fs::exists(p)) return fallback;
  const auto doc = KeyValueDoc::load(p);
  DspParams d;
  d.sample_rate = parse_small_int(doc.require("sample_rate"), "sample_rate");
  d.n_fft = parse_small_int(doc.require("n_fft"), "n_fft");
  d.hop = parse_small_int(doc.require("hop"), "hop");
  d.n_mels = parse_small_int(doc.require("n_mels"), "n_mels");
  d.ref_power = parse_real(doc.require("ref_power"), "ref_power");
  d.validate();
  return d;
}

DatasetManifest read_manifest(const fs::path& cache_dir) {
  const fs::path p = cache_dir / manifest_name;
  if (!fs::exists(p)) throw DataError("no manifest at " + p.string() + " (run preprocess first)");
  return load_manifest(p);
}

const std::vector<std::uint32_t>& pick_set(const SplitSpec& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw ConfigError("unknown set '" + name + "' (expected train, val or test)");
}

fs::path under(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

// Flags that map one-to-one onto RunConfig keys.
struct KeyFlags {
  std::map<std::string, std::string> storage;
  std::vector<std::pair<CLI::Option*, std::string>> options;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = storage[key + "@" + app->get_name()];
    options.emplace_back(app->add_option(flag, slot, help), key);
  }

  void apply_given(RunConfig& cfg) const {
    for (const auto& [opt, key] : options) {
      if (opt->count() > 0) cfg.set(key, opt->as<std::string>());
    }
  }
};

struct TrainOutcome {
  Crnn model;
  std::vector<EpochStats> history;
};

TrainOutcome train_one(const RunConfig& cfg, const DatasetManifest& manifest, const SplitSpec& split,
                       const DspParams& dsp, std::ostream& log) {
  cfg.train.validate();
  const LabelMap labels = LabelMap::from_manifest(manifest);
  CrnnConfig model_cfg = cfg.model;
  model_cfg.n_mels = dsp.n_mels;
  model_cfg.n_classes = labels.size();
  model_cfg.clip_frames = clip_frames(cfg.train.clip_seconds, dsp);
  model_cfg.validate();

  const auto train_set =
      ClipDataset::load(manifest, labels, split.train, cfg.cache_dir, dsp, cfg.train.clip_seconds);
  const auto val_set = ClipDataset::load(manifest, labels, split.val, cfg.cache_dir, dsp, cfg.train.clip_seconds);
  if (train_set.empty()) throw DataError("training set has no clips");
  if (val_set.empty()) throw DataError("validation set has no clips");

  auto result = train(build_model(model_cfg, cfg.train.seed), train_set, val_set, cfg.train,
                      [&log](const EpochStats& s) {
                        log << "epoch " << s.epoch << " train_loss=" << format_real(s.train_loss)
                            << " val_loss=" << format_real(s.val_loss) << " val_f1=" << format_real(s.val_f1)
                            << '\n';
                      });
  result.model.meta.dsp = dsp;
  return {std::move(result.model), std::move(result.history)};
}

std::string evaluate(Crnn& model, const DatasetManifest& manifest, const SplitSpec& split, const fs::path& cache,
                     const std::string& set_name, EvalLevel level) {
  const LabelMap labels = LabelMap::from_manifest(manifest);
  if (labels.size() != model.config().n_classes) {
    throw ConfigError("checkpoint has " + std::to_string(model.config().n_classes) + " classes but the manifest has " +
                      std::to_string(labels.size()) + " artists");
  }
  const auto clips =
      ClipDataset::load(manifest, labels, pick_set(split, set_name), cache, model.meta.dsp, model.meta.clip_seconds);
  const auto preds = predict_clips(model, clips);
  if (preds.empty()) throw DataError("no clips to evaluate in the " + set_name + " set");
  const EvalReport report =
      level == EvalLevel::frame ? frame_report(preds, labels.size()) : song_report(preds, labels.size());
  return format_report(report, {to_string(split.mode), model.meta.clip_seconds, model.meta.seed}, labels.names());
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "sample_rate", "n_fft",      "hop",         "n_mels",       "ref_power",     "lr",
      "batch_size",  "max_epochs", "patience",    "clip_seconds", "seed",          "conv_channels",
      "kernel_size", "pools",      "conv_dropout", "gru_units",   "final_dropout", "dataset_root",
      "cache_dir",   "split_file", "checkpoint",  "output_dir"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "sample_rate") dsp.sample_rate = parse_small_int(value, key);
  else if (key == "n_fft") dsp.n_fft = parse_small_int(value, key);
  else if (key == "hop") dsp.hop = parse_small_int(value, key);
  else if (key == "n_mels") dsp.n_mels = parse_small_int(value, key);
  else if (key == "ref_power") dsp.ref_power = parse_real(value, key);
  else if (key == "lr") train.lr = parse_real(value, key);
  else if (key == "batch_size") {
    const auto v = parse_int(value, key);
    if (v < 0) throw ConfigError("batch_size must be positive");
    train.batch_size = static_cast<std::size_t>(v);
  } else if (key == "max_epochs") train.max_epochs = parse_small_int(value, key);
  else if (key == "patience") train.patience = parse_small_int(value, key);
  else if (key == "clip_seconds") train.clip_seconds = parse_real(value, key);
  else if (key == "seed") train.seed = parse_u64(value, key);
  else if (key == "conv_channels") model.conv_channels = parse_small_list(value, key);
  else if (key == "kernel_size") model.kernel_size = parse_small_int(value, key);
  else if (key == "pools") model.pools = parse_pools(value);
  else if (key == "conv_dropout") model.conv_dropout = parse_real(value, key);
  else if (key == "gru_units") model.gru_units = parse_small_list(value, key);
  else if (key == "final_dropout") model.final_dropout = parse_real(value, key);
  else if (key == "dataset_root") dataset_root = value;
  else if (key == "cache_dir") cache_dir = value;
  else if (key == "split_file") split_file = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "output_dir") output = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply(const KeyValueDoc& doc) {
  for (const auto& [k, v] : doc.entries()) set(k, v);
}

KeyValueDoc RunConfig::to_doc() const {
  KeyValueDoc d;
  d.set("sample_rate", std::to_string(dsp.sample_rate));
  d.set("n_fft", std::to_string(dsp.n_fft));
  d.set("hop", std::to_string(dsp.hop));
  d.set("n_mels", std::to_string(dsp.n_mels));
  d.set("ref_power", format_real(dsp.ref_power));
  d.set("lr", format_real(train.lr));
  d.set("batch_size", std::to_string(train.batch_size));
  d.set("max_epochs", std::to_string(train.max_epochs));
  d.set("patience", std::to_string(train.patience));
  d.set("clip_seconds", format_real(train.clip_seconds));
  d.set("seed", std::to_string(train.seed));
  d.set("conv_channels", join_list(model.conv_channels));
  d.set("kernel_size", std::to_string(model.kernel_size));
  std::vector<std::string> pools;
  for (const auto& p : model.pools) pools.push_back(std::to_string(p.freq) + "x" + std::to_string(p.time));
  d.set("pools", join_list(pools));
  d.set("conv_dropout", format_real(model.conv_dropout));
  d.set("gru_units", join_list(model.gru_units));
  d.set("final_dropout", format_real(model.final_dropout));
  d.set("dataset_root", dataset_root.string());
  d.set("cache_dir", cache_dir.string());
  d.set("split_file", split_file.string());
  d.set("checkpoint", checkpoint.string());
  d.set("output_dir", output.string());
  return d;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Artist classification from mel spectrograms with a convolutional-recurrent network", "artistid"};
  app.require_subcommand(1);

  KeyFlags keys;
  std::map<std::string, std::string> config_file;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file[sub->get_name()], "key=value config file");
    keys.add(sub, "--cache", "cache_dir", "manifest and spectrogram cache directory");
    keys.add(sub, "--output-dir", "output_dir", "base directory for relative output paths");
  };
  auto train_flags = [&](CLI::App* sub) {
    keys.add(sub, "--split", "split_file", "split file");
    keys.add(sub, "--lr", "lr", "Adam learning rate");
    keys.add(sub, "--batch-size", "batch_size", "mini-batch size");
    keys.add(sub, "--max-epochs", "max_epochs", "epoch cap");
    keys.add(sub, "--patience", "patience", "early-stopping patience");
    keys.add(sub, "--seed", "seed", "initialisation and shuffling seed");
  };

  auto* pre = app.add_subcommand("preprocess", "scan a dataset and cache mel spectrograms");
  common(pre);
  keys.add(pre, "--root", "dataset_root", "dataset root (<artist>/<album>/<track>.wav)");

  std::string split_mode = "song", split_out;
  auto* spl = app.add_subcommand("split", "write a train/validation/test split");
  common(spl);
  spl->add_option("--mode", split_mode, "song or album");
  keys.add(spl, "--seed", "seed", "split seed");
  auto* spl_out = spl->add_option("--out", split_out, "split file to write (defaults to split_file)");

  std::string history_out;
  auto* trn = app.add_subcommand("train", "train one model");
  common(trn);
  train_flags(trn);
  keys.add(trn, "--clip-seconds", "clip_seconds", "clip length in seconds");
  keys.add(trn, "--checkpoint", "checkpoint", "checkpoint to write");
  trn->add_option("--history", history_out, "per-epoch loss table to write");

  std::string level = "frame", set_name = "test", report_out;
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  common(evl);
  keys.add(evl, "--checkpoint", "checkpoint", "checkpoint to evaluate");
  keys.add(evl, "--split", "split_file", "split file");
  evl->add_option("--level", level, "frame or song");
  evl->add_option("--set", set_name, "train, val or test");
  evl->add_option("--out", report_out, "also write the report here");

  std::string embed_out, embed_set = "test";
  auto* emb = app.add_subcommand("embed", "export bottleneck embeddings");
  common(emb);
  keys.add(emb, "--checkpoint", "checkpoint", "checkpoint to use");
  keys.add(emb, "--split", "split_file", "split file");
  emb->add_option("--out", embed_out, "embeddings TSV to write")->required();
  emb->add_option("--set", embed_set, "train, val or test");

  std::string sweep_lengths = "1,3,5,10,20,30";
  auto* swp = app.add_subcommand("sweep", "train and evaluate once per clip length");
  common(swp);
  train_flags(swp);
  swp->add_option("--clip-seconds", sweep_lengths, "comma-separated clip lengths");

  SynthConfig synth_cfg;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth", "write a synthetic dataset");
  syn->add_option("--out", synth_out, "dataset root to create")->required();
  syn->add_option("--artists", synth_cfg.artists, "number of artists");
  syn->add_option("--albums", synth_cfg.albums_per_artist, "albums per artist");
  syn->add_option("--songs", synth_cfg.songs_per_artist, "songs per artist");
  syn->add_option("--seconds", synth_cfg.seconds, "song length");
  syn->add_option("--sample-rate", synth_cfg.sample_rate, "sample rate");
  syn->add_option("--seed", synth_cfg.seed, "generator seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig cfg;
    if (const auto it = config_file.find(sub->get_name()); it != config_file.end() && !it->second.empty()) {
      cfg.apply(KeyValueDoc::load(it->second));
    }
    if (const char* v = std::getenv(kCacheDirEnv); v && *v) cfg.cache_dir = v;
    if (const char* v = std::getenv(kOutputDirEnv); v && *v) cfg.output = v;
    keys.apply_given(cfg);

    if (sub == syn) {
      const auto manifest = write_synthetic_dataset(synth_out, synth_cfg);
      out << "wrote " << manifest.tracks.size() << " tracks under " << synth_out << '\n';
      return 0;
    }

    if (sub == pre) {
      if (cfg.dataset_root.empty()) throw ConfigError("preprocess needs --root or dataset_root");
      cfg.dsp.validate();
      const auto manifest = scan_dataset(cfg.dataset_root);
      if (manifest.tracks.empty()) throw DataError("no tracks found under " + cfg.dataset_root.string());
      fs::create_directories(cfg.cache_dir);
      const MelFilterbank bank = mel_filterbank(cfg.dsp);
      const auto n = static_cast<std::ptrdiff_t>(manifest.tracks.size());
      std::vector<std::string> failures(manifest.tracks.size());
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& track = manifest.tracks[static_cast<std::size_t>(i)];
        try {
          Waveform wave = resample(decode_wav(track.path), cfg.dsp.sample_rate);
          MelSpectrogram spec = mel_spectrogram(wave, cfg.dsp, bank);
          spec.track_id = track.track_id;
          save_mel_cache(spec, mel_cache_path(cfg.cache_dir, track.track_id));
        } catch (const std::exception& e) {
          failures[static_cast<std::size_t>(i)] = e.what();
        }
      }
      for (const auto& f : failures) {
        if (!f.empty()) throw DataError(f);
      }
      save_manifest(manifest, cfg.cache_dir / manifest_name);
      KeyValueDoc dsp_doc;
      dsp_doc.set("sample_rate", std::to_string(cfg.dsp.sample_rate));
      dsp_doc.set("n_fft", std::to_string(cfg.dsp.n_fft));
      dsp_doc.set("hop", std::to_string(cfg.dsp.hop));
      dsp_doc.set("n_mels", std::to_string(cfg.dsp.n_mels));
      dsp_doc.set("ref_power", format_real(cfg.dsp.ref_power));
      dsp_doc.save(cfg.cache_dir / dsp_name);
      out << "cached " << manifest.tracks.size() << " tracks, " << manifest.artists.size() << " artists\n";
      return 0;
    }

    if (sub == spl) {
      const auto manifest = read_manifest(cfg.cache_dir);
      const SplitMode mode = parse_split_mode(split_mode);
      const SplitSpec split =
          mode == SplitMode::song ? song_split(manifest, cfg.train.seed) : album_split(manifest, cfg.train.seed);
      const fs::path dest = under(cfg.output, spl_out->count() > 0 ? fs::path(split_out) : cfg.split_file);
      if (dest.empty()) throw ConfigError("split needs --out or split_file");
      write_text(dest, split_to_string(split));
      out << "train=" << split.train.size() << " val=" << split.val.size() << " test=" << split.test.size() << '\n';
      return 0;
    }

    if (cfg.split_file.empty()) throw ConfigError("missing --split or split_file");
    const auto manifest = read_manifest(cfg.cache_dir);
    const SplitSpec split = load_split(cfg.split_file);

    if (sub == trn) {
      if (cfg.checkpoint.empty()) throw ConfigError("train needs --checkpoint or checkpoint");
      const DspParams dsp = read_cache_dsp(cfg.cache_dir, cfg.dsp);
      auto result = train_one(cfg, manifest, split, dsp, err);
      save_checkpoint(result.model, under(cfg.output, cfg.checkpoint));
      if (!history_out.empty()) write_text(under(cfg.output, history_out), history_table(result.history, false));
      out << "best_epoch=" << result.model.meta.epoch << " val_loss=" << format_real(result.model.meta.best_val_loss)
          << " val_f1=" << format_real(result.model.meta.best_val_f1) << '\n';
      return 0;
    }

    if (sub == evl || sub == emb) {
      if (cfg.checkpoint.empty()) throw ConfigError("missing --checkpoint or checkpoint");
      Crnn model = load_checkpoint(cfg.checkpoint);
      if (sub == evl) {
        const std::string report =
            evaluate(model, manifest, split, cfg.cache_dir, set_name, parse_eval_level(level));
        out << report;
        if (!report_out.empty()) write_text(under(cfg.output, report_out), report);
        return 0;
      }
      const LabelMap labels = LabelMap::from_manifest(manifest);
      const auto clips = ClipDataset::load(manifest, labels, pick_set(split, embed_set), cfg.cache_dir,
                                           model.meta.dsp, model.meta.clip_seconds);
      const fs::path dest = under(cfg.output, embed_out);
      if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
      const auto rows = export_embeddings(model, clips, labels.names(), dest);
      out << "wrote " << rows << " embeddings to " << dest.string() << '\n';
      return 0;
    }

    if (sub == swp) {
      const auto lengths = parse_real_list(sweep_lengths, "clip-seconds");
      if (lengths.empty()) throw ConfigError("sweep needs at least one clip length");
      const DspParams dsp = read_cache_dsp(cfg.cache_dir, cfg.dsp);
      const fs::path base = cfg.output.empty() ? fs::path("sweep") : cfg.output;
      for (const double t : lengths) {
        RunConfig one = cfg;
        one.train.clip_seconds = t;
        auto result = train_one(one, manifest, split, dsp, err);
        const fs::path dir = base / ("t" + format_real(t) + "s");
        fs::create_directories(dir);
        save_checkpoint(result.model, dir / "model.crnn");
        write_text(dir / "history.tsv", history_table(result.history, false));
        for (const EvalLevel lv : {EvalLevel::frame, EvalLevel::song}) {
          const std::string report = evaluate(result.model, manifest, split, cfg.cache_dir, "test", lv);
          write_text(dir / ("report_" + to_string(lv) + ".txt"), report);
          out << report << '\n';
        }
      }
      return 0;
    }
    throw ConfigError("unhandled subcommand " + sub->get_name());
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    err << "error: " << msg << '\n';
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace artistid::cli
