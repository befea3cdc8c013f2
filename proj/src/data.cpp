#include "artistid/data.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "artistid/error.hpp"
#include "artistid/kv.hpp"
#include "artistid/random.hpp"

namespace artistid {

std::string to_string(SplitMode mode) { return mode == SplitMode::song ? "song" : "album"; }

SplitMode parse_split_mode(std::string_view s) {
  if (s == "song") return SplitMode::song;
  if (s == "album") return SplitMode::album;
  throw ConfigError("split mode must be 'song' or 'album', got '" + std::string(s) + "'");
}

LabelMap::LabelMap(std::vector<std::string> sorted_artists) : names_(std::move(sorted_artists)) {
  if (!std::is_sorted(names_.begin(), names_.end())) throw DataError("artist list is not sorted");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate artist '" + names_[i] + "'");
    }
  }
}

int LabelMap::index(const std::string& artist) const {
  auto it = index_.find(artist);
  if (it == index_.end()) throw DataError("unknown artist '" + artist + "'");
  return it->second;
}

std::size_t tenth_ceil(std::size_t n) { return (n + 9) / 10; }

namespace {

std::map<std::string, std::vector<const TrackMeta*>> tracks_by_artist(const DatasetManifest& manifest) {
  std::map<std::string, std::vector<const TrackMeta*>> by_artist;
  for (const auto& t : manifest.tracks) by_artist[t.artist].push_back(&t);
  for (auto& [artist, tracks] : by_artist) {
    std::sort(tracks.begin(), tracks.end(),
              [](const TrackMeta* a, const TrackMeta* b) { return a->track_id < b->track_id; });
  }
  return by_artist;
}

void finish(SplitSpec& split) {
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
}

}  // namespace

SplitSpec song_split(const DatasetManifest& manifest, std::uint64_t seed) {
  SplitSpec split;
  split.mode = SplitMode::song;
  split.seed = seed;
  Rng rng(seed);
  for (const auto& [artist, tracks] : tracks_by_artist(manifest)) {
    if (tracks.size() < 3) {
      throw DataError("artist '" + artist + "' has " + std::to_string(tracks.size()) +
                      " song(s); a song split needs at least 3");
    }
    std::vector<std::uint32_t> ids;
    for (const auto* t : tracks) ids.push_back(t->track_id);
    shuffle(std::span(ids), rng);
    const auto n_test = tenth_ceil(ids.size());
    const auto n_val = tenth_ceil(ids.size() - n_test);
    split.test.insert(split.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.val.insert(split.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    split.train.insert(split.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
  }
  finish(split);
  return split;
}

SplitSpec album_split(const DatasetManifest& manifest, std::uint64_t seed) {
  SplitSpec split;
  split.mode = SplitMode::album;
  split.seed = seed;
  Rng rng(seed);
  for (const auto& [artist, tracks] : tracks_by_artist(manifest)) {
    std::vector<std::string> albums;
    for (const auto* t : tracks) albums.push_back(t->album);
    std::sort(albums.begin(), albums.end());
    albums.erase(std::unique(albums.begin(), albums.end()), albums.end());
    if (albums.size() < 3) {
      throw DataError("artist '" + artist + "' has " + std::to_string(albums.size()) +
                      " album(s); an album split needs at least 3");
    }
    shuffle(std::span(albums), rng);
    for (const auto* t : tracks) {
      if (t->album == albums[0]) {
        split.test.push_back(t->track_id);
      } else if (t->album == albums[1]) {
        split.val.push_back(t->track_id);
      } else {
        split.train.push_back(t->track_id);
      }
    }
  }
  finish(split);
  return split;
}

std::string split_to_string(const SplitSpec& split) {
  KeyValueDoc doc;
  doc.set("mode", to_string(split.mode));
  doc.set("seed", std::to_string(split.seed));
  doc.set("train", join_list(split.train));
  doc.set("val", join_list(split.val));
  doc.set("test", join_list(split.test));
  return doc.str();
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
  KeyValueDoc::parse(split_to_string(split)).save(path);
}

SplitSpec load_split(const std::filesystem::path& path) {
  const auto doc = KeyValueDoc::load(path);
  for (const auto& [k, v] : doc.entries()) {
    if (k != "mode" && k != "seed" && k != "train" && k != "val" && k != "test") {
      throw FormatError(path.string() + ": unknown key '" + k + "'");
    }
  }
  SplitSpec split;
  split.mode = parse_split_mode(doc.require("mode"));
  split.seed = static_cast<std::uint64_t>(parse_int(doc.require("seed"), "seed"));
  const auto ids = [&](const char* key) {
    std::vector<std::uint32_t> out;
    for (auto v : parse_int_list(doc.require(key), key)) out.push_back(static_cast<std::uint32_t>(v));
    return out;
  };
  split.train = ids("train");
  split.val = ids("val");
  split.test = ids("test");
  finish(split);
  std::set<std::uint32_t> seen;
  for (const auto* list : {&split.train, &split.val, &split.test}) {
    for (auto id : *list) {
      if (!seen.insert(id).second) {
        throw FormatError(path.string() + ": track " + std::to_string(id) + " appears in two lists");
      }
    }
  }
  return split;
}

ClipDataset ClipDataset::load(const DatasetManifest& manifest, const LabelMap& labels,
                              std::vector<std::uint32_t> track_ids, const std::filesystem::path& cache_dir,
                              const DspParams& params, double clip_seconds) {
  std::sort(track_ids.begin(), track_ids.end());
  ClipDataset ds;
  ds.n_mels_ = params.n_mels;
  ds.clip_frames_ = artistid::clip_frames(clip_seconds, params);
  if (ds.clip_frames_ < 1) throw ConfigError("clip length shorter than one frame");
  for (auto id : track_ids) {
    const auto& meta = manifest.track(id);
    const int label = labels.index(meta.artist);
    const auto path = mel_cache_path(cache_dir, id);
    if (!std::filesystem::exists(path)) {
      throw DataError("missing spectrogram cache for track_id " + std::to_string(id) + " (" +
                      path.string() + ")");
    }
    const auto spec = load_mel_cache(path, params);
    if (spec.track_id != id) {
      throw DataError(path.string() + " holds track_id " + std::to_string(spec.track_id) +
                      ", expected " + std::to_string(id));
    }
    auto clips = slice_clips(spec, clip_seconds);
    if (clips.empty()) {
      ++ds.short_tracks_;
      std::cerr << "warning: track " << id << " is shorter than one " << clip_seconds
                << " s clip; skipped\n";
    }
    for (std::size_t c = 0; c < clips.size(); ++c) {
      ds.refs_.push_back({id, static_cast<std::uint32_t>(c)});
      ds.labels_.push_back(label);
      ds.clips_.push_back(std::move(clips[c]));
    }
  }
  return ds;
}

ClipDataset ClipDataset::from_spectrograms(const std::vector<std::pair<MelSpectrogram, int>>& songs,
                                           double clip_seconds) {
  ClipDataset ds;
  if (songs.empty()) return ds;
  ds.n_mels_ = songs.front().first.n_mels();
  ds.clip_frames_ = artistid::clip_frames(clip_seconds, songs.front().first.params);
  std::vector<std::size_t> order(songs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return songs[a].first.track_id < songs[b].first.track_id;
  });
  for (auto i : order) {
    const auto& [spec, label] = songs[i];
    if (spec.n_mels() != ds.n_mels_) throw ShapeError("spectrograms disagree on n_mels");
    auto clips = slice_clips(spec, clip_seconds);
    if (clips.empty()) ++ds.short_tracks_;
    for (std::size_t c = 0; c < clips.size(); ++c) {
      ds.refs_.push_back({spec.track_id, static_cast<std::uint32_t>(c)});
      ds.labels_.push_back(label);
      ds.clips_.push_back(std::move(clips[c]));
    }
  }
  return ds;
}

Batch ClipDataset::gather(std::span<const std::size_t> positions) const {
  Batch batch;
  const auto plane = static_cast<std::size_t>(n_mels_) * static_cast<std::size_t>(clip_frames_);
  batch.inputs = Tensor<float>({positions.size(), 1, static_cast<std::size_t>(n_mels_),
                                static_cast<std::size_t>(clip_frames_)});
  float* dst = batch.inputs.raw();
  for (std::size_t b = 0; b < positions.size(); ++b) {
    const auto i = positions[b];
    const auto& clip = clips_.at(i);
    // Eigen storage is column-major; the tensor wants mel rows contiguous.
    for (int r = 0; r < n_mels_; ++r) {
      for (int c = 0; c < clip_frames_; ++c) {
        dst[b * plane + static_cast<std::size_t>(r) * clip_frames_ + c] = clip(r, c);
      }
    }
    batch.labels.push_back(labels_[i]);
    batch.provenance.push_back(refs_[i]);
  }
  return batch;
}

std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, bool shuffle_flag) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_flag) {
    Rng rng(seed);
    shuffle(std::span(order), rng);
  }
  return order;
}

std::vector<Batch> make_batches(const ClipDataset& data, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle_flag) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const auto order = batch_order(data.size(), seed, shuffle_flag);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto count = std::min(batch_size, order.size() - start);
    batches.push_back(data.gather(std::span(order).subspan(start, count)));
  }
  return batches;
}

std::vector<Batch> make_batches(const DatasetManifest& manifest, const LabelMap& labels,
                                const std::vector<std::uint32_t>& track_ids,
                                const std::filesystem::path& cache_dir, const DspParams& params,
                                double clip_seconds, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle_flag) {
  const auto data = ClipDataset::load(manifest, labels, track_ids, cache_dir, params, clip_seconds);
  return make_batches(data, batch_size, seed, shuffle_flag);
}

}  // namespace artistid
