#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "r2seg/dataio.hpp"
#include "r2seg/errors.hpp"
#include "r2seg/grad_cases.hpp"
#include "r2seg/metrics.hpp"
#include "r2seg/models.hpp"
#include "r2seg/trainer.hpp"

namespace r2seg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool has_input_size = false;
};

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " +
                      e.what());
  }
}

// A config file holds model and training keys side by side.
RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto& mk = model_config_keys();
  const auto& tk = train_config_keys();
  json mj = json::object(), tj = json::object();
  for (const auto& [key, value] : j.items()) {
    if (std::find(mk.begin(), mk.end(), key) != mk.end()) {
      mj[key] = value;
    } else if (std::find(tk.begin(), tk.end(), key) != tk.end()) {
      tj[key] = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  RunConfig rc;
  rc.model = model_config_from_json(mj);
  rc.train = train_config_from_json(tj);
  rc.has_input_size = mj.contains("input_size");
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_run_config(read_json_file(path));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError("cannot create output directory " + dir.string());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

SampleSet load_data(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("data directory not found: " + dir.string());
  }
  return load_dataset(dir);
}

SplitIndices load_or_make_split(const fs::path& dir, const SampleSet& set,
                                std::uint64_t seed) {
  const fs::path p = dir / "split.json";
  return fs::exists(p) ? read_split(p) : split(set, kDefaultSplit, seed);
}

// Fills in the data's size when the config leaves input_size out, then
// resamples the set to the model's input.
SampleSet fit_to_model(const SampleSet& set, ModelConfig& cfg,
                       bool has_input_size) {
  if (set.empty()) return set;
  const Shape4 s = set.images.front().shape();
  if (s.c != cfg.in_channels) {
    throw ShapeError("data has " + std::to_string(s.c) +
                     " channel(s) but the model expects " +
                     std::to_string(cfg.in_channels));
  }
  if (!has_input_size) {
    cfg.input_h = s.h;
    cfg.input_w = s.w;
  }
  cfg.validate();
  return resize_set(set, cfg.input_h, cfg.input_w);
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::unet: return "U-Net";
    case Variant::resunet: return "ResUNet";
    case Variant::dense_r2unet: return "Dense R2UNet";
  }
  return "?";
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

EpochCallback progress(std::ostream& err, const std::string& tag) {
  return [&err, tag](const EpochRecord& r) {
    err << tag << " epoch " << r.epoch << " loss " << fixed(r.train_loss, 5)
        << " train_dice " << fixed(r.train_dice, 4) << " val_dice "
        << fixed(r.val_dice, 4) << " (" << fixed(r.seconds, 2) << "s)\n";
  };
}

struct Trained {
  TrainResult result;
  SampleSet test;
};

Trained train_variant(Variant variant, const RunConfig& rc,
                      const SampleSet& data, const SplitIndices& sp,
                      const fs::path& out, std::ostream& err) {
  ModelConfig mc = rc.model;
  mc.variant = variant;
  const SampleSet fitted = fit_to_model(data, mc, rc.has_input_size);
  const SampleSet train_set = fitted.subset(sp.train);
  const SampleSet val_set = fitted.subset(sp.val);
  ensure_dir(out);
  TrainResult result = train(build(mc), train_set, val_set, rc.train,
                             progress(err, std::string(to_string(variant))));
  save(result.model, out / "model.ckpt");
  write_curves_csv(out / "curves.csv", result.records);
  write_curves_svg(out / "curves.svg", result.records, display_name(variant));
  json resolved = to_json(mc);
  resolved.update(to_json(rc.train));
  write_text(out / "config.json", resolved.dump(2) + "\n");
  return {std::move(result), fitted.subset(sp.test)};
}

// ------------------------------------------------------------ commands

int cmd_synth(std::size_t n, std::size_t size, std::uint64_t seed,
              const fs::path& out, std::ostream& o, std::ostream& err) {
  if (n == 0) throw ConfigError("synth: --n must be positive");
  if (size < 4) throw ConfigError("synth: --size must be at least 4");
  if (size % 4 != 0) {
    err << "warning: size " << size
        << " is not divisible by 4; depth-2 models will resample it\n";
  }
  const SampleSet set = synth_generate(n, size, seed);
  ensure_dir(out);
  save_dataset(set, out);
  write_split(out / "split.json", split(set, kDefaultSplit, seed));
  o << "wrote " << n << " samples of " << size << "x" << size << " to "
    << out.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& model, const fs::path& data,
              const std::string& config, const fs::path& out, std::ostream& o,
              std::ostream& err) {
  const Variant variant = parse_variant(model);
  const RunConfig rc = load_run_config(config);
  const SampleSet set = load_data(data);
  const SplitIndices sp = load_or_make_split(data, set, rc.train.seed);
  const Trained t = train_variant(variant, rc, set, sp, out, err);
  const EpochRecord& last = t.result.records.back();
  o << display_name(variant) << ": " << t.result.records.size()
    << " epochs, train dice " << fixed(last.train_dice, 4) << ", val dice "
    << fixed(last.val_dice, 4) << ", params "
    << count_params(t.result.model) << "\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data,
             const std::string& which, const fs::path& out, std::ostream& o) {
  if (!fs::exists(checkpoint)) {
    throw DataError("checkpoint not found: " + checkpoint.string());
  }
  Model model = load(checkpoint);
  const SampleSet set = load_data(data);
  SampleSet chosen = set;
  if (which != "all") {
    const SplitIndices sp = load_or_make_split(data, set, 0);
    if (which == "train") chosen = set.subset(sp.train);
    else if (which == "val") chosen = set.subset(sp.val);
    else if (which == "test") chosen = set.subset(sp.test);
    else throw ConfigError("unknown split '" + which + "'");
  }
  if (chosen.empty()) throw DataError("split '" + which + "' is empty");
  const SampleSet fitted = fit_to_model(chosen, model.config, true);
  const MetricsRow row = evaluate_predictions(predict_set(model, fitted),
                                              fitted.masks);
  const std::vector<ModelRow> rows{
      {display_name(model.config.variant), row, count_params(model)}};
  ensure_dir(out);
  write_text(out / "metrics.csv", report_csv(rows, true));
  o << report_table(rows, true);
  return kOk;
}

int cmd_gradcheck(const std::string& block, std::uint64_t seed,
                  std::ostream& o) {
  bool ok = true;
  std::string worst_name;
  double worst = -1.0;
  for (const GradCase& c : make_grad_cases(block, seed)) {
    const GradReport r = run_grad_case(c);
    for (const ParamError& p : r.params) {
      o << c.name << " " << p.name << " max_rel_error " << p.max_rel_error
        << " checked " << p.checked;
      if (p.unresolved) o << " unresolved " << p.unresolved;
      o << "\n";
      if (p.max_rel_error > worst) {
        worst = p.max_rel_error;
        worst_name = c.name + ":" + p.name;
      }
    }
    o << c.name << (r.passed() ? " PASS" : " FAIL") << "\n";
    ok = ok && r.passed();
  }
  if (!ok) {
    o << "gradcheck failed; worst tensor " << worst_name << " ("
      << worst << ")\n";
    return kNumericError;
  }
  return kOk;
}

int cmd_benchmark(const fs::path& data, const std::string& config,
                  const fs::path& out, std::ostream& o, std::ostream& err) {
  const RunConfig rc = load_run_config(config);
  const SampleSet set = load_data(data);
  const SplitIndices sp = load_or_make_split(data, set, rc.train.seed);
  if (sp.test.empty()) throw DataError("benchmark: test split is empty");
  ensure_dir(out);

  std::vector<ModelRow> rows;
  for (Variant v : {Variant::unet, Variant::resunet, Variant::dense_r2unet}) {
    const std::string key(to_string(v));
    const Trained t = train_variant(v, rc, set, sp, out / key, err);
    const MetricsRow m = evaluate_predictions(
        predict_set(t.result.model, t.test), t.test.masks,
        rc.train.dice_threshold);
    rows.push_back({display_name(v), m, count_params(t.result.model)});
    write_text(out / (key + ".csv"), report_csv({rows.back()}, true));
  }
  write_text(out / "table.csv", report_csv(rows, true));

  ModelConfig mc = rc.model;
  std::ostringstream md;
  md << "# Segmentation benchmark\n\n"
     << "Test samples: " << sp.test.size() << " (train " << sp.train.size()
     << ", val " << sp.val.size() << "). Depth " << mc.depth
     << ", base width " << mc.base_width << ", t " << mc.t << ", "
     << rc.train.epochs << " epochs, model seed " << mc.seed
     << ", train seed " << rc.train.seed << ".\n\n"
     << report_table(rows, true) << "\n"
     << "Params ratio Dense R2UNet / U-Net: "
     << fixed(double(rows[2].params) / double(rows[0].params), 3) << "\n\n"
     << "Published full-scale reference (LUNA, not comparable, not a gate): "
        "Dense R2UNet DSC 0.981 ± 0.009\n";
  write_text(out / "table.md", md.str());
  o << md.str();
  return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& o,
             std::ostream& err) {
  CLI::App app{"Dense R2UNet segmentation kit", "r2seg"};
  app.require_subcommand(1);

  std::size_t n = 0, size = 0;
  std::uint64_t seed = 0;
  std::string out, data, config, model, checkpoint, which = "test",
                                                    block = "all";

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--n", n, "Number of samples")->required();
  synth->add_option("--size", size, "Image side length")->required();
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--model", model, "unet | resunet | dense-r2unet")
      ->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "JSON config file");
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", which, "train | val | test | all");
  ev->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks");
  gc->add_option("--block", block, "Case to run")
      ->check(CLI::IsMember(grad_case_names()));
  gc->add_option("--seed", seed, "Input seed");

  auto* bm = app.add_subcommand("benchmark", "Train and compare all models");
  bm->add_option("--data", data, "Dataset directory")->required();
  bm->add_option("--config", config, "JSON config file");
  bm->add_option("--out", out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, o, err) == 0 ? kOk : kUsage;
  }

  if (*synth) return cmd_synth(n, size, seed, out, o, err);
  if (*tr) return cmd_train(model, data, config, out, o, err);
  if (*ev) return cmd_eval(checkpoint, data, which, out, o);
  if (*gc) return cmd_gradcheck(block, seed, o);
  return cmd_benchmark(data, config, out, o, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace r2seg::cli
