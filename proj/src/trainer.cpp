#include "r2seg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace r2seg {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0xD209;
constexpr std::uint64_t kFlipStream = 0xF119;

template <typename T>
T read_key(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

Tensor4 stack(const std::vector<Tensor4>& items,
              std::span<const std::size_t> idx) {
  const Shape4 s = items[idx[0]].shape();
  Tensor4 out(Shape4{idx.size(), s.c, s.h, s.w});
  const std::size_t len = s.c * s.plane();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor4& t = items[idx[i]];
    if (t.shape() != s) throw ShapeError("batch items differ in shape");
    std::copy(t.data().begin(), t.data().end(),
              out.data().begin() + std::ptrdiff_t(i * len));
  }
  return out;
}

void flip_sample(Tensor4& t, std::size_t n) {
  const auto& s = t.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    double* p = t.plane(n, c);
    for (std::size_t y = 0; y < s.h; ++y) {
      std::reverse(p + y * s.w, p + (y + 1) * s.w);
    }
  }
}

void check_finite(const std::vector<NamedTensor>& params, std::size_t epoch,
                  std::size_t step) {
  for (const auto& p : params) {
    if (!p.value.all_finite()) {
      throw NumericError("parameter '" + p.name +
                         "' became non-finite at epoch " +
                         std::to_string(epoch) + ", step " +
                         std::to_string(step));
    }
  }
}

void check_set(const SampleSet& set, const ModelConfig& cfg, const char* which) {
  if (set.empty()) throw DataError(std::string(which) + " set is empty");
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set.images[i].shape();
    if (s.n != 1 || s.c != cfg.in_channels || s.h != cfg.input_h ||
        s.w != cfg.input_w) {
      throw ShapeError(std::string(which) + " sample '" + set.ids[i] +
                       "' has shape " + to_string(s) +
                       ", model expects (1," + std::to_string(cfg.in_channels) +
                       "," + std::to_string(cfg.input_h) + "," +
                       std::to_string(cfg.input_w) + ")");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be finite and >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (!(dice_threshold > 0.0 && dice_threshold < 1.0)) {
    throw ConfigError("dice_threshold must be in (0, 1)");
  }
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "optimizer",  "lr",     "beta1",      "beta2",          "eps",
      "momentum",   "batch_size", "epochs", "train_seed", "dice_threshold",
      "augment_flips"};
  return keys;
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd_momentum"},
      {"lr", c.lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"eps", c.eps},
      {"momentum", c.momentum},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"train_seed", c.seed},
      {"dice_threshold", c.dice_threshold},
      {"augment_flips", c.augment_flips},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const auto& keys = train_config_keys();
  if (strict) {
    for (const auto& [key, _] : j.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  }
  TrainConfig c;
  if (j.contains("optimizer")) {
    const auto name = read_key<std::string>(j, "optimizer");
    if (name == "adam") {
      c.optimizer = Optimizer::adam;
    } else if (name == "sgd_momentum" || name == "sgd") {
      c.optimizer = Optimizer::sgd_momentum;
    } else {
      throw ConfigError("config key 'optimizer': unknown optimizer '" + name +
                        "'");
    }
  }
  if (j.contains("lr")) c.lr = read_key<double>(j, "lr");
  if (j.contains("beta1")) c.beta1 = read_key<double>(j, "beta1");
  if (j.contains("beta2")) c.beta2 = read_key<double>(j, "beta2");
  if (j.contains("eps")) c.eps = read_key<double>(j, "eps");
  if (j.contains("momentum")) c.momentum = read_key<double>(j, "momentum");
  if (j.contains("batch_size")) {
    c.batch_size = read_key<std::size_t>(j, "batch_size");
  }
  if (j.contains("epochs")) c.epochs = read_key<std::size_t>(j, "epochs");
  if (j.contains("train_seed")) {
    c.seed = read_key<std::uint64_t>(j, "train_seed");
  }
  if (j.contains("dice_threshold")) {
    c.dice_threshold = read_key<double>(j, "dice_threshold");
  }
  if (j.contains("augment_flips")) {
    c.augment_flips = read_key<bool>(j, "augment_flips");
  }
  return c;
}

// ------------------------------------------------------------ optimizers

void adam_step(std::span<NamedTensor> params, std::span<const Tensor4> grads,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: parameter and gradient counts differ");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape(), 0.0);
      state.v.emplace_back(p.value.shape(), 0.0);
    }
  }
  ++state.step;
  const double corr1 = 1.0 - std::pow(beta1, double(state.step));
  const double corr2 = 1.0 - std::pow(beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor4& p = params[k].value;
    const Tensor4& g = grads[k];
    if (g.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " +
                       params[k].name);
    }
    Tensor4& m = state.m[k];
    Tensor4& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double m_hat = m[i] / corr1;
      const double v_hat = v[i] / corr2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

void sgd_momentum_step(std::span<NamedTensor> params,
                       std::span<const Tensor4> grads, MomentumState& state,
                       double lr, double momentum) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_momentum_step: parameter and gradient counts differ");
  }
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.value.shape(), 0.0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor4& p = params[k].value;
    Tensor4& vel = state.velocity[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = momentum * vel[i] + grads[k][i];
      p[i] -= lr * vel[i];
    }
  }
}

// ------------------------------------------------------------------ dice

double dice_of_batch(const Tensor4& probs, const Tensor4& targets,
                     double threshold) {
  if (probs.shape() != targets.shape()) {
    throw ShapeError("dice_of_batch: shape mismatch " +
                     to_string(probs.shape()) + " vs " +
                     to_string(targets.shape()));
  }
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool truth = targets[i] >= 0.5;
    tp += double(pred && truth);
    fp += double(pred && !truth);
    fn += double(!pred && truth);
  }
  return (2.0 * tp + 1.0) / (2.0 * tp + fp + fn + 1.0);
}

std::vector<Tensor4> predict_set(const Model& model, const SampleSet& set,
                                 std::size_t batch_size) {
  std::vector<Tensor4> out;
  out.reserve(set.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor4 probs = predict(model, stack(set.images, idx));
    const auto& s = probs.shape();
    const std::size_t len = s.c * s.plane();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Tensor4 one(Shape4{1, s.c, s.h, s.w});
      std::copy_n(probs.data().begin() + std::ptrdiff_t(i * len), len,
                  one.data().begin());
      out.push_back(std::move(one));
    }
  }
  return out;
}

double mean_dice(const Model& model, const SampleSet& set, double threshold,
                 std::size_t batch_size) {
  const auto probs = predict_set(model, set, batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    total += dice_of_batch(probs[i], set.masks[i], threshold);
  }
  return total / double(probs.size());
}

// ----------------------------------------------------------------- train

TrainResult train(Model model, const SampleSet& train_set,
                  const SampleSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_set(train_set, model.config, "train");
  check_set(val_set, model.config, "validation");

  TrainResult result;
  AdamState adam;
  MomentumState sgd;
  auto& params = model.params.entries();
  std::size_t step = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(mix_seed(cfg.seed, kShuffleStream), epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 flip_rng(mix_seed(mix_seed(cfg.seed, kFlipStream), epoch));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor4 x = stack(train_set.images, idx);
      Tensor4 y = stack(train_set.masks, idx);
      if (cfg.augment_flips) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (flip_rng() & 1U) {
            flip_sample(x, i);
            flip_sample(y, i);
          }
        }
      }

      Tape tape;
      const BoundParams bound(tape, model.params, true);
      const VarId logits = forward_logits(
          tape, model, bound, tape.constant(std::move(x)), Mode::train,
          mix_seed(mix_seed(cfg.seed, kDropoutStream), step));
      const VarId loss = bce_loss(tape, logits, tape.constant(std::move(y)));
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }
      const Gradients grads = backward(tape, loss);
      std::vector<Tensor4> g;
      g.reserve(params.size());
      for (VarId id : bound.ids()) g.push_back(grads.of(id));

      if (cfg.optimizer == Optimizer::adam) {
        adam_step(params, g, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
      } else {
        sgd_momentum_step(params, g, sgd, cfg.lr, cfg.momentum);
      }
      check_finite(params, epoch, step);
      loss_sum += loss_value * double(idx.size());
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train_set.size());
    rec.train_dice = mean_dice(model, train_set, cfg.dice_threshold,
                               cfg.batch_size);
    rec.val_dice = mean_dice(model, val_set, cfg.dice_threshold, cfg.batch_size);
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- curves

void write_curves_csv(const std::filesystem::path& path,
                      std::span<const EpochRecord> records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_loss,train_dice,val_dice,seconds\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.3f\n", r.epoch,
                  r.train_loss, r.train_dice, r.val_dice, r.seconds);
    os << line;
  }
}

void write_curves_svg(const std::filesystem::path& path,
                      std::span<const EpochRecord> records,
                      const std::string& title) {
  constexpr double kW = 640, kH = 360, kL = 50, kR = 20, kT = 30, kB = 40;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  const double n = std::max<double>(1.0, double(records.size()) - 1.0);
  auto px = [&](std::size_t i) { return kL + (kW - kL - kR) * double(i) / n; };
  auto py = [&](double v) {
    return kT + (kH - kT - kB) * (1.0 - std::clamp(v, 0.0, 1.0));
  };
  auto polyline = [&](auto field, const char* colour) {
    os << "<polyline fill=\"none\" stroke=\"" << colour
       << "\" stroke-width=\"2\" points=\"";
    char buf[64];
    for (std::size_t i = 0; i < records.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(i), py(field(records[i])));
      os << buf;
    }
    os << "\"/>\n";
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
     << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kL << "\" y=\"20\" font-size=\"14\">" << title
     << "</text>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR
     << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL
     << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kL - 30 << "\" y=\"" << kT + 5 << "\" font-size=\"11\">1.0</text>\n";
  os << "<text x=\"" << kL - 30 << "\" y=\"" << kH - kB << "\" font-size=\"11\">0.0</text>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10
     << "\" font-size=\"12\">epoch</text>\n";
  polyline([](const EpochRecord& r) { return r.train_dice; }, "steelblue");
  polyline([](const EpochRecord& r) { return r.val_dice; }, "darkorange");
  os << "<text x=\"" << kW - 160 << "\" y=\"" << kT + 15
     << "\" font-size=\"11\" fill=\"steelblue\">train dice</text>\n";
  os << "<text x=\"" << kW - 160 << "\" y=\"" << kT + 30
     << "\" font-size=\"11\" fill=\"darkorange\">validation dice</text>\n";
  os << "</svg>\n";
}

}  // namespace r2seg
