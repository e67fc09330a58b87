#include "r2seg/models.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace r2seg {

namespace {

constexpr std::string_view kMagic = "R2SEG-CKPT";
constexpr int kVersion = 1;

std::string enc_name(std::size_t level) { return "enc" + std::to_string(level); }
std::string dec_name(std::size_t level) { return "dec" + std::to_string(level); }

std::size_t width_at(const ModelConfig& cfg, std::size_t level) {
  return cfg.base_width << level;
}

template <typename T>
T read_key(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string read_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) {
    throw FormatError(std::string("checkpoint truncated while reading ") +
                      what);
  }
  return line;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::unet: return "unet";
    case Variant::resunet: return "resunet";
    case Variant::dense_r2unet: return "dense_r2unet";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "unet") return Variant::unet;
  if (name == "resunet") return Variant::resunet;
  if (name == "dense_r2unet" || name == "dense-r2unet") {
    return Variant::dense_r2unet;
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

BlockKind block_kind(Variant v) {
  switch (v) {
    case Variant::unet: return BlockKind::plain;
    case Variant::resunet: return BlockKind::residual;
    case Variant::dense_r2unet: return BlockKind::dense_r2;
  }
  return BlockKind::plain;
}

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (t < 0) throw ConfigError("t must be >= 0");
  if (units < 1) throw ConfigError("units must be >= 1");
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must be in [0, 1)");
  }
  const std::size_t factor = std::size_t{1} << depth;
  if (input_h == 0 || input_w == 0 || input_h % factor != 0 ||
      input_w % factor != 0) {
    throw ConfigError("input size " + std::to_string(input_h) + "x" +
                      std::to_string(input_w) + " is not divisible by 2^" +
                      std::to_string(depth));
  }
}

BlockSpec ModelConfig::block_spec(std::size_t c_in, std::size_t c_out) const {
  BlockSpec s;
  s.kind = block_kind(variant);
  s.c_in = c_in;
  s.c_out = c_out;
  s.t = t;
  s.dropout_rate = dropout_rate;
  s.dense_growth = dense_growth;
  s.units = units;
  return s;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"variant", std::string(to_string(cfg.variant))},
      {"depth", cfg.depth},
      {"base_width", cfg.base_width},
      {"t", cfg.t},
      {"dropout_rate", cfg.dropout_rate},
      {"input_size", {cfg.input_h, cfg.input_w}},
      {"in_channels", cfg.in_channels},
      {"units", cfg.units},
      {"dense_growth", cfg.dense_growth},
      {"seed", cfg.seed},
  };
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{
      "variant", "depth",       "base_width", "t",            "dropout_rate",
      "input_size", "in_channels", "units",   "dense_growth", "seed"};
  return keys;
}

ModelConfig model_config_from_json(const nlohmann::json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const auto& keys = model_config_keys();
  if (strict) {
    for (const auto& [key, _] : j.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  }
  ModelConfig c;
  if (j.contains("variant")) {
    c.variant = parse_variant(read_key<std::string>(j, "variant"));
  }
  if (j.contains("depth")) c.depth = read_key<std::size_t>(j, "depth");
  if (j.contains("base_width")) {
    c.base_width = read_key<std::size_t>(j, "base_width");
  }
  if (j.contains("t")) c.t = read_key<int>(j, "t");
  if (j.contains("dropout_rate")) {
    c.dropout_rate = read_key<double>(j, "dropout_rate");
  }
  if (j.contains("input_size")) {
    const auto& v = j.at("input_size");
    if (v.is_array() && v.size() == 2) {
      c.input_h = read_key<std::size_t>(nlohmann::json{{"h", v[0]}}, "h");
      c.input_w = read_key<std::size_t>(nlohmann::json{{"w", v[1]}}, "w");
    } else {
      c.input_h = c.input_w = read_key<std::size_t>(j, "input_size");
    }
  }
  if (j.contains("in_channels")) {
    c.in_channels = read_key<std::size_t>(j, "in_channels");
  }
  if (j.contains("units")) c.units = read_key<std::size_t>(j, "units");
  if (j.contains("dense_growth")) {
    c.dense_growth = read_key<std::size_t>(j, "dense_growth");
  }
  if (j.contains("seed")) c.seed = read_key<std::uint64_t>(j, "seed");
  return c;
}

Model build(const ModelConfig& cfg) {
  cfg.validate();
  Model m{cfg, {}};
  std::size_t c_prev = cfg.in_channels;
  for (std::size_t level = 0; level < cfg.depth; ++level) {
    const std::size_t c = width_at(cfg, level);
    declare_block(cfg.block_spec(c_prev, c), enc_name(level), m.params,
                  cfg.seed);
    c_prev = c;
  }
  declare_block(cfg.block_spec(c_prev, width_at(cfg, cfg.depth)), "bottleneck",
                m.params, cfg.seed);
  for (std::size_t level = cfg.depth; level-- > 0;) {
    const std::size_t c_below = width_at(cfg, level + 1);
    const std::size_t c = width_at(cfg, level);
    const std::string name = dec_name(level);
    m.params.add(name + ".up.w",
                 he_init(Shape4{c_below, c, 3, 3}, c_below * 9,
                         mix_seed(cfg.seed, m.params.size())));
    m.params.add(name + ".up.b", zeros(Shape4{1, c, 1, 1}));
    declare_block(cfg.block_spec(2 * c, c), name, m.params, cfg.seed);
  }
  const std::size_t c0 = width_at(cfg, 0);
  m.params.add("head.w", he_init(Shape4{1, c0, 1, 1}, c0,
                                 mix_seed(cfg.seed, m.params.size())));
  m.params.add("head.b", zeros(Shape4{1, 1, 1, 1}));
  return m;
}

VarId forward_logits(Tape& tape, const Model& model, const BoundParams& params,
                     VarId x, Mode mode, std::uint64_t dropout_seed) {
  const ModelConfig& cfg = model.config;
  const Shape4& xs = tape.shape(x);
  if (xs.c != cfg.in_channels || xs.h != cfg.input_h || xs.w != cfg.input_w) {
    throw ShapeError("model expects input (n," +
                     std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + "), got " + to_string(xs));
  }
  std::uint64_t block_index = 0;
  auto next_seed = [&] { return mix_seed(dropout_seed, block_index++); };

  std::vector<VarId> skips;
  VarId h = x;
  std::size_t c_prev = cfg.in_channels;
  for (std::size_t level = 0; level < cfg.depth; ++level) {
    const std::size_t c = width_at(cfg, level);
    h = block_forward(tape, h, cfg.block_spec(c_prev, c), enc_name(level),
                      params, mode, next_seed());
    skips.push_back(h);
    h = maxpool2d(tape, h);
    c_prev = c;
  }
  h = block_forward(tape, h, cfg.block_spec(c_prev, width_at(cfg, cfg.depth)),
                    "bottleneck", params, mode, next_seed());
  for (std::size_t level = cfg.depth; level-- > 0;) {
    const std::size_t c = width_at(cfg, level);
    const std::string name = dec_name(level);
    const VarId up =
        conv_transpose2d(tape, h, params(name + ".up.w"), params(name + ".up.b"));
    const VarId parts[] = {skips[level], up};
    h = block_forward(tape, concat_channels(tape, parts),
                      cfg.block_spec(2 * c, c), name, params, mode,
                      next_seed());
  }
  return conv2d(tape, h, params("head.w"), params("head.b"));
}

Tensor4 predict(const Model& model, const Tensor4& x, Mode mode,
                std::uint64_t dropout_seed) {
  Tape tape;
  const BoundParams params(tape, model.params, false);
  const VarId logits =
      forward_logits(tape, model, params, tape.constant(x), mode, dropout_seed);
  return sigmoid(tape.value(logits));
}

std::size_t count_params(const Model& model) {
  return model.params.count_scalars();
}

void save(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " +
                             path.string());
  os << kMagic << " v" << kVersion << "\n";
  os << to_json(model.config).dump() << "\n";
  os << "tensors " << model.params.size() << "\n";
  for (const auto& e : model.params.entries()) {
    const auto& s = e.value.shape();
    os << e.name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w
       << "\n";
  }
  os << "data\n";
  for (const auto& e : model.params.entries()) write_tensor(os, e.value);
  if (!os) throw FormatError("failed writing checkpoint: " + path.string());
}

Model load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());

  const std::string magic = read_line(is, "magic");
  const std::string expected =
      std::string(kMagic) + " v" + std::to_string(kVersion);
  if (magic != expected) {
    if (magic.rfind(kMagic, 0) == 0) {
      throw VersionError("unsupported checkpoint version '" + magic +
                         "', expected '" + expected + "'");
    }
    throw VersionError("not a checkpoint (bad magic) or unsupported version: " +
                       path.string());
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_line(is, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") +
                      e.what());
  }
  Model model = build(model_config_from_json(header));

  std::istringstream count_line(read_line(is, "manifest"));
  std::string word;
  std::size_t count = 0;
  if (!(count_line >> word >> count) || word != "tensors") {
    throw FormatError("checkpoint manifest header malformed");
  }
  if (count != model.params.size()) {
    throw FormatError("checkpoint lists " + std::to_string(count) +
                      " tensors, config builds " +
                      std::to_string(model.params.size()));
  }
  for (const auto& e : model.params.entries()) {
    std::istringstream line(read_line(is, "manifest"));
    std::string name;
    Shape4 s;
    if (!(line >> name >> s.n >> s.c >> s.h >> s.w)) {
      throw FormatError("checkpoint manifest line malformed");
    }
    if (name != e.name || s != e.value.shape()) {
      throw FormatError("checkpoint manifest entry '" + name + "' " +
                        to_string(s) + " does not match model parameter '" +
                        e.name + "' " + to_string(e.value.shape()));
    }
  }
  if (read_line(is, "data marker") != "data") {
    throw FormatError("checkpoint data marker missing");
  }
  for (auto& e : model.params.entries()) {
    Tensor4 t = read_tensor(is);
    if (t.shape() != e.value.shape()) {
      throw FormatError("checkpoint tensor '" + e.name + "' has shape " +
                        to_string(t.shape()));
    }
    e.value = std::move(t);
  }
  return model;
}

}  // namespace r2seg
