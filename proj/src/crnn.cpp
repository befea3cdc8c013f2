#include "artistid/crnn.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "artistid/binio.hpp"
#include "artistid/error.hpp"

namespace artistid {

void CrnnConfig::validate() const {
  if (n_mels < 1) throw ConfigError("n_mels must be positive");
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (conv_channels.empty()) throw ConfigError("at least one convolution block is required");
  if (conv_channels.size() != pools.size()) {
    throw ConfigError("conv_channels and pools must have the same length");
  }
  for (int c : conv_channels) {
    if (c < 1) throw ConfigError("conv channel counts must be positive");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be a positive odd number");
  std::size_t freq_product = 1;
  for (const auto& p : pools) {
    if (p.freq < 1 || p.time < 1) throw ConfigError("pool sizes must be at least 1");
    freq_product *= p.freq;
  }
  if (freq_product != static_cast<std::size_t>(n_mels)) {
    throw ConfigError("frequency pools multiply to " + std::to_string(freq_product) + " but n_mels is " +
                      std::to_string(n_mels) + "; the frequency axis must reduce to exactly 1");
  }
  if (gru_units.empty()) throw ConfigError("at least one GRU layer is required");
  for (int u : gru_units) {
    if (u < 1) throw ConfigError("GRU units must be positive");
  }
  for (double rate : {conv_dropout, final_dropout}) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rates must be in [0, 1)");
  }
  if (clip_frames < min_clip_frames()) {
    throw ConfigError("clip of " + std::to_string(clip_frames) +
                      " frames is too short: the time axis reaches 0 before the recurrent stage; need at least " +
                      std::to_string(min_clip_frames()) + " frames");
  }
}

std::vector<int> CrnnConfig::time_chain() const {
  std::vector<int> chain{clip_frames};
  for (const auto& p : pools) chain.push_back(chain.back() / static_cast<int>(p.time));
  return chain;
}

std::vector<int> CrnnConfig::freq_chain() const {
  std::vector<int> chain{n_mels};
  for (const auto& p : pools) chain.push_back(chain.back() / static_cast<int>(p.freq));
  return chain;
}

int CrnnConfig::min_clip_frames() const {
  int m = 1;
  for (const auto& p : pools) m *= static_cast<int>(p.time);
  return m;
}

void CrnnConfig::write(KeyValueDoc& doc) const {
  doc.set("n_mels", std::to_string(n_mels));
  doc.set("n_classes", std::to_string(n_classes));
  doc.set("clip_frames", std::to_string(clip_frames));
  doc.set("conv_channels", join_list(conv_channels));
  doc.set("kernel_size", std::to_string(kernel_size));
  std::vector<std::string> pool_strs;
  for (const auto& p : pools) pool_strs.push_back(std::to_string(p.freq) + "x" + std::to_string(p.time));
  doc.set("pools", join_list(pool_strs));
  doc.set("conv_dropout", format_real(conv_dropout));
  doc.set("gru_units", join_list(gru_units));
  doc.set("final_dropout", format_real(final_dropout));
}

CrnnConfig CrnnConfig::read(const KeyValueDoc& doc) {
  CrnnConfig c;
  c.n_mels = static_cast<int>(parse_int(doc.require("n_mels"), "n_mels"));
  c.n_classes = static_cast<int>(parse_int(doc.require("n_classes"), "n_classes"));
  c.clip_frames = static_cast<int>(parse_int(doc.require("clip_frames"), "clip_frames"));
  c.conv_channels.clear();
  for (auto v : parse_int_list(doc.require("conv_channels"), "conv_channels")) c.conv_channels.push_back(static_cast<int>(v));
  c.kernel_size = static_cast<int>(parse_int(doc.require("kernel_size"), "kernel_size"));
  c.pools.clear();
  for (const auto& item : split_list(doc.require("pools"))) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("pool entries look like FREQxTIME, got '" + item + "'");
    c.pools.push_back({static_cast<std::size_t>(parse_int(item.substr(0, x), "pools")),
                       static_cast<std::size_t>(parse_int(item.substr(x + 1), "pools"))});
  }
  c.conv_dropout = parse_real(doc.require("conv_dropout"), "conv_dropout");
  c.gru_units.clear();
  for (auto v : parse_int_list(doc.require("gru_units"), "gru_units")) c.gru_units.push_back(static_cast<int>(v));
  c.final_dropout = parse_real(doc.require("final_dropout"), "final_dropout");
  return c;
}

// ---------------------------------------------------------------------------

Crnn::Crnn(CrnnConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto k = static_cast<std::size_t>(config_.kernel_size);
  std::size_t c_in = 1;
  for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
    const auto c_out = static_cast<std::size_t>(config_.conv_channels[i]);
    const auto tag = std::to_string(i);
    Block block{Conv2d<float>("conv" + tag, c_in, c_out, k, k), NormEluPool<float>("bn" + tag, c_out, config_.pools[i].freq, config_.pools[i].time),
                Dropout<float>(config_.conv_dropout, mix_seed(seed, 100 + i))};
    block.conv.init(rng);
    blocks_.push_back(std::move(block));
    c_in = c_out;
  }
  std::size_t features = c_in;
  for (std::size_t i = 0; i < config_.gru_units.size(); ++i) {
    const auto units = static_cast<std::size_t>(config_.gru_units[i]);
    grus_.emplace_back("gru" + std::to_string(i), features, units);
    grus_.back().init(rng);
    features = units;
  }
  final_drop_ = Dropout<float>(config_.final_dropout, mix_seed(seed, 200));
  head_ = Dense<float>("dense", features, static_cast<std::size_t>(config_.n_classes));
  head_.init(rng);
  meta.seed = seed;
  meta.dsp.n_mels = config_.n_mels;
}

Crnn build_model(const CrnnConfig& config, std::uint64_t seed) { return Crnn(config, seed); }

CrnnOutput Crnn::forward(const Tensor<float>& inputs, Mode mode) {
  const auto batch = inputs.rank() == 4 ? inputs.dim(0) : 0;
  require_shape(inputs.shape(),
                {batch, 1, static_cast<std::size_t>(config_.n_mels), static_cast<std::size_t>(config_.clip_frames)},
                "model input");
  if (batch == 0) throw ShapeError("model input: empty batch");

  Tensor<float> x = inputs;
  for (auto& b : blocks_) {
    x = b.conv.forward(x);
    x = b.norm.forward(std::move(x), mode);
    x = b.drop.forward(x, mode);
  }
  // (B, C, 1, T) -> (B, T, C)
  conv_out_shape_ = x.shape();
  const auto C = x.dim(1), T = x.dim(3);
  if (x.dim(2) != 1) throw ShapeError("frequency axis did not collapse to 1");
  seq_len_ = T;
  Tensor<float> seq({batch, T, C});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) seq[(b * T + t) * C + c] = x[(b * C + c) * T + t];
    }
  }

  GruOutput<float> rec;
  for (auto& g : grus_) {
    rec = g.forward(seq);
    seq = std::move(rec.outputs);
  }
  CrnnOutput out;
  out.bottleneck = rec.final_state;
  out.logits = head_.forward(final_drop_.forward(rec.final_state, mode));
  return out;
}

void Crnn::backward(const Tensor<float>& d_logits) {
  auto d_state = final_drop_.backward(head_.backward(d_logits));
  const auto batch = d_state.dim(0);
  const auto T = seq_len_;

  // Only the last step of the top GRU feeds the classifier.
  const auto top_units = static_cast<std::size_t>(config_.gru_units.back());
  Tensor<float> d_seq({batch, T, top_units});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t u = 0; u < top_units; ++u) d_seq[(b * T + T - 1) * top_units + u] = d_state[b * top_units + u];
  }
  for (auto it = grus_.rbegin(); it != grus_.rend(); ++it) d_seq = it->backward(d_seq).dx;

  const auto C = conv_out_shape_[1];
  Tensor<float> dx(conv_out_shape_);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) dx[(b * C + c) * T + t] = d_seq[(b * T + t) * C + c];
    }
  }
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    auto& b = blocks_[i];
    dx = b.drop.backward(dx);
    dx = b.norm.backward(dx);
    dx = b.conv.backward(dx, /*need_input_grad=*/i > 0);
  }
}

std::vector<Parameter<float>*> Crnn::parameters() {
  std::vector<Parameter<float>*> params;
  for (auto& b : blocks_) {
    for (auto* p : b.conv.parameters()) params.push_back(p);
    for (auto* p : b.norm.parameters()) params.push_back(p);
  }
  for (auto& g : grus_) {
    for (auto* p : g.parameters()) params.push_back(p);
  }
  for (auto* p : head_.parameters()) params.push_back(p);
  return params;
}

std::vector<std::pair<std::string, Tensor<float>*>> Crnn::state() {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const auto tag = std::to_string(i);
    out.emplace_back(b.conv.kernel.name, &b.conv.kernel.value);
    out.emplace_back(b.conv.bias.name, &b.conv.bias.value);
    out.emplace_back(b.norm.gamma.name, &b.norm.gamma.value);
    out.emplace_back(b.norm.beta.name, &b.norm.beta.value);
    out.emplace_back("bn" + tag + ".running_mean", &b.norm.running_mean);
    out.emplace_back("bn" + tag + ".running_var", &b.norm.running_var);
  }
  for (auto& g : grus_) {
    for (auto* p : g.parameters()) out.emplace_back(p->name, &p->value);
  }
  for (auto* p : head_.parameters()) out.emplace_back(p->name, &p->value);
  return out;
}

std::vector<std::pair<std::string, const Tensor<float>*>> Crnn::state() const {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  for (auto& [name, t] : const_cast<Crnn*>(this)->state()) out.emplace_back(name, t);
  return out;
}

std::vector<Tensor<float>> Crnn::snapshot() const {
  std::vector<Tensor<float>> snap;
  for (const auto& [name, t] : state()) snap.push_back(*t);
  return snap;
}

void Crnn::restore(const std::vector<Tensor<float>>& snap) {
  auto st = state();
  if (snap.size() != st.size()) throw ShapeError("snapshot does not match model");
  for (std::size_t i = 0; i < st.size(); ++i) {
    require_shape(snap[i].shape(), st[i].second->shape(), st[i].first);
    *st[i].second = snap[i];
  }
}

Tensor<float> Crnn::predict_proba(const Tensor<float>& inputs) { return softmax(forward(inputs, Mode::infer).logits); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::uint8_t kCheckpointVersion = 0x01;

KeyValueDoc checkpoint_blob(const Crnn& model) {
  KeyValueDoc doc;
  model.config().write(doc);
  const auto& m = model.meta;
  doc.set("epoch", std::to_string(m.epoch));
  doc.set("best_val_loss", format_real(m.best_val_loss));
  doc.set("best_val_f1", format_real(m.best_val_f1));
  doc.set("seed", std::to_string(m.seed));
  doc.set("clip_seconds", format_real(m.clip_seconds));
  doc.set("sample_rate", std::to_string(m.dsp.sample_rate));
  doc.set("n_fft", std::to_string(m.dsp.n_fft));
  doc.set("hop", std::to_string(m.dsp.hop));
  doc.set("ref_power", format_real(m.dsp.ref_power));
  return doc;
}

TrainingMeta read_meta(const KeyValueDoc& doc, int n_mels) {
  TrainingMeta m;
  m.epoch = static_cast<int>(parse_int(doc.require("epoch"), "epoch"));
  const auto& loss = doc.require("best_val_loss");
  m.best_val_loss = loss == "inf" ? std::numeric_limits<double>::infinity() : parse_real(loss, "best_val_loss");
  m.best_val_f1 = parse_real(doc.require("best_val_f1"), "best_val_f1");
  m.seed = static_cast<std::uint64_t>(parse_int(doc.require("seed"), "seed"));
  m.clip_seconds = parse_real(doc.require("clip_seconds"), "clip_seconds");
  m.dsp.sample_rate = static_cast<int>(parse_int(doc.require("sample_rate"), "sample_rate"));
  m.dsp.n_fft = static_cast<int>(parse_int(doc.require("n_fft"), "n_fft"));
  m.dsp.hop = static_cast<int>(parse_int(doc.require("hop"), "hop"));
  m.dsp.ref_power = parse_real(doc.require("ref_power"), "ref_power");
  m.dsp.n_mels = n_mels;
  return m;
}

std::string describe_mismatch(const CrnnConfig& got, const CrnnConfig& want) {
  KeyValueDoc a, b;
  got.write(a);
  want.write(b);
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& [k, v] = a.entries()[i];
    const auto w = b.require(k);
    if (v != w) return k + " is " + v + " in the checkpoint but " + w + " was expected";
  }
  return "configs differ";
}

}  // namespace

std::string checkpoint_bytes(const Crnn& model) {
  std::ostringstream out(std::ios::binary);
  out.write("CRNN", 4);
  binio::put_u8(out, kCheckpointVersion);
  const auto blob = checkpoint_blob(model).str();
  binio::put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for (const auto& [name, t] : model.state()) {
    binio::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put_u8(out, static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->shape()) binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t->data()) binio::put_f32(out, v);
  }
  return out.str();
}

void save_checkpoint(const Crnn& model, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Crnn load_checkpoint(const std::filesystem::path& path, const CrnnConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  char magic[4];
  binio::get_bytes(in, magic, 4, what);
  if (std::string_view(magic, 4) != "CRNN") throw FormatError(what + ": bad magic");
  const auto version = binio::get_u8(in, what);
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const auto blob_len = binio::get_u32(in, what);
  std::string blob(blob_len, '\0');
  binio::get_bytes(in, blob.data(), blob_len, what + " config");
  const auto doc = KeyValueDoc::parse(blob);
  const auto config = CrnnConfig::read(doc);
  if (expected != nullptr && !(config == *expected)) {
    throw ConfigError(what + ": config mismatch: " + describe_mismatch(config, *expected));
  }

  std::map<std::string, Tensor<float>> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = binio::get_u16(in, what);
    std::string name(name_len, '\0');
    binio::get_bytes(in, name.data(), name_len, what + " record name");
    const auto ndim = binio::get_u8(in, what);
    Shape shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(binio::get_u32(in, what + " record " + name));
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = binio::get_f32(in, what + " record " + name);
    if (!records.emplace(name, std::move(t)).second) throw FormatError(what + ": duplicate record " + name);
  }

  Crnn model(config, static_cast<std::uint64_t>(parse_int(doc.require("seed"), "seed")));
  model.meta = read_meta(doc, config.n_mels);
  auto st = model.state();
  if (records.size() != st.size()) {
    throw FormatError(what + ": has " + std::to_string(records.size()) + " tensors, config needs " +
                      std::to_string(st.size()));
  }
  for (auto& [name, t] : st) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError(what + ": missing tensor " + name);
    if (it->second.shape() != t->shape()) {
      throw FormatError(what + ": tensor " + name + " has shape " + shape_str(it->second.shape()) +
                        ", config implies " + shape_str(t->shape()));
    }
    *t = std::move(it->second);
  }
  return model;
}

}  // namespace artistid
