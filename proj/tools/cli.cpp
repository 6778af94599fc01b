#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cei/archive.hpp"
#include "cei/blend.hpp"
#include "cei/blocks.hpp"
#include "cei/dataset.hpp"
#include "cei/gradcheck.hpp"
#include "cei/image.hpp"
#include "cei/metrics.hpp"
#include "cei/training.hpp"

namespace cei::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitDiverged = 3;
constexpr std::size_t kHeaderRows = 12;

/// Error that maps to a specific exit code.
struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

DsanModel load_model(const std::string& path) {
  try {
    return DsanModel::from_params(load_archive(path));
  } catch (const IncompatibleModels& e) {
    throw CommandError(kExitBadInput, path + ": not a smoothing-network archive: " + e.report().first_mismatch());
  }
}

/// Predicts on an image of any size by padding to even extents and cropping back.
Image predict_image(const DsanModel& model, const Image& input) {
  const Image padded = pad_to_even(input);
  const Image out = model.predict(padded);
  if (padded.shape() == input.shape()) return out;
  return crop(out, 0, 0, input.shape().h, input.shape().w);
}

DatasetManifest checked_manifest(const std::string& path) {
  DatasetManifest m = read_manifest(path);
  const auto problems = validate_manifest(m);
  if (!problems.empty()) {
    std::string msg = path + ": invalid manifest";
    for (const auto& p : problems) msg += "\n  " + p;
    throw CommandError(kExitBadInput, msg);
  }
  return m;
}

BlendSpec make_spec(const std::string& mode_text, double coeff, double floor) {
  const auto mode = parse_blend_mode(mode_text);
  if (!mode) throw CommandError(kExitBadInput, "unknown blend mode '" + mode_text + "' (use i, f, b, fts, bts)");
  BlendSpec spec{*mode, coeff, floor};
  spec.validate();
  return spec;
}

ParamSet checked_blend(const ParamSet& a, const ParamSet& b, const BlendSpec& spec) {
  const CompatReport report = compat_check(a, b);
  if (!report.compatible) {
    throw CommandError(kExitBadInput, "models are not blend-compatible: " + report.first_mismatch() + "\n" +
                                          report.describe());
  }
  return blend(a, b, spec);
}

// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string out;
  std::string inputs;
  std::size_t count = 20;
  std::size_t size = 64;
  double sigma_a = 1.0;
  double sigma_b = 3.0;
  std::uint64_t seed = 1;
};

int gen_data(const GenDataOpts& o, std::ostream& out, std::ostream& err) {
  const fs::path root(o.out);
  fs::path inputs = o.inputs.empty() ? root / "inputs" : fs::path(o.inputs);
  if (o.inputs.empty()) {
    if (o.size == 0 || o.count == 0) throw CommandError(kExitBadInput, "--count and --size must be positive");
    write_synthetic_corpus(inputs, o.count, o.size, o.size, o.seed);
  }
  for (const auto& [name, sigma] : {std::pair{"A", o.sigma_a}, std::pair{"B", o.sigma_b}}) {
    auto res = make_dataset(inputs, EffectDescriptor{"gaussian", sigma}, root / name, o.seed);
    for (const auto& w : res.warnings) err << "warning: " << w << '\n';
    out << name << '\t' << res.manifest_path.generic_string() << '\t' << res.manifest.records.size() << " records ("
        << res.manifest.count(Split::Val) << " val)\n";
  }
  return 0;
}

struct TrainOpts {
  std::vector<std::string> data;
  std::string strategy = "a2b2a";
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> channels;
  std::optional<std::size_t> patch;
  bool quiet = false;
};

int train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.channels) cfg.channels = *o.channels;
  if (o.patch) cfg.patch = *o.patch;
  cfg.validate();
  const StrategyPlan plan = strategy_preset(o.strategy);

  std::map<std::string, std::vector<ImagePair>> datasets;
  if (o.strategy == "single") {
    if (o.data.size() != 1) throw CommandError(kExitBadInput, "strategy single takes exactly one --data manifest");
    datasets["effect"] = load_pairs(checked_manifest(o.data[0]), Split::Train);
    datasets["identity"] = identity_pairs(datasets["effect"]);
  } else {
    if (o.data.size() != 2) {
      throw CommandError(kExitBadInput, "strategy " + o.strategy + " takes two --data manifests (effect A, then effect B)");
    }
    datasets["A"] = load_pairs(checked_manifest(o.data[0]), Split::Train);
    datasets["B"] = load_pairs(checked_manifest(o.data[1]), Split::Train);
  }

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  {
    std::ofstream cf(dir / "config.json");
    cf << train_config_to_json(cfg) << '\n';
  }
  ProgressFn progress;
  if (!o.quiet) {
    progress = [&err, &cfg](const std::string& stage, const EpochRecord& r) {
      if (r.epoch % 10 == 0 || r.epoch + 1 == cfg.epochs) {
        err << stage << " epoch " << r.epoch << " loss " << fmt("%.5f", r.mean_loss) << " lr " << fmt("%.3g", r.lr)
            << '\n';
      }
    };
  }
  StrategyResult res;
  try {
    res = run_strategy(plan, datasets, cfg, progress);
  } catch (const TrainingDiverged& e) {
    throw CommandError(kExitDiverged, e.what());
  }
  for (const auto& [name, params] : res.models) {
    const fs::path archive = dir / ("model" + name + ".cei");
    save_archive(params, archive);
    std::ofstream tf(dir / ("trace_" + name + ".csv"));
    tf << format_trace(res.traces.at(name));
    out << name << '\t' << archive.generic_string() << '\t' << fmt("%.6f", res.traces.at(name).back().mean_loss)
        << '\n';
  }
  out << "blend pair\t" << plan.blend_pair.first << '\t' << plan.blend_pair.second << '\n';
  return 0;
}

struct BlendOpts {
  std::string model_a, model_b, mode = "i", out;
  double coeff = 0.5;
  double floor = kDefaultEpsilonFloor;
};

int blend_cmd(const BlendOpts& o, std::ostream& out, std::ostream&) {
  const BlendSpec spec = make_spec(o.mode, o.coeff, o.floor);
  const ParamSet a = load_archive(o.model_a);
  const ParamSet b = load_archive(o.model_b);
  save_archive(checked_blend(a, b, spec), o.out);
  out << "mode\t" << mode_short_name(spec.mode) << "\ncoeff\t" << fmt("%.6g", spec.coeff) << "\nfloor\t"
      << fmt("%.6g", spec.epsilon_floor) << "\nformula\t" << spec.formula() << "\nwrote\t" << o.out << '\n';
  return 0;
}

struct PredictOpts {
  std::string model, input, output;
};

int predict_cmd(const PredictOpts& o, std::ostream& out, std::ostream&) {
  const DsanModel model = load_model(o.model);
  const Image img = read_image(o.input);
  write_image(predict_image(model, img), o.output);
  out << "wrote\t" << o.output << '\n';
  return 0;
}

struct EvalOpts {
  std::string model, data, split = "val";
};

int eval_cmd(const EvalOpts& o, std::ostream& out, std::ostream&) {
  if (o.split != "val" && o.split != "train") throw CommandError(kExitBadInput, "--split must be val or train");
  const DsanModel model = load_model(o.model);
  const DatasetManifest m = checked_manifest(o.data);
  const Split split = o.split == "val" ? Split::Val : Split::Train;
  std::vector<std::string> names;
  for (const auto& r : m.records) {
    if (r.split == split) names.push_back(r.input.generic_string());
  }
  const auto pairs = load_pairs(m, split);
  if (pairs.empty()) throw CommandError(kExitBadInput, o.data + ": split '" + o.split + "' is empty");

  out << "image\tpsnr_db\tssim\tssim_db\n";
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Image pred = predict_image(model, pairs[i].input);
    const double p = psnr(pred, pairs[i].label);
    const double s = ssim(pred, pairs[i].label);
    sum_psnr += p;
    sum_ssim += s;
    out << names[i] << '\t' << fmt("%.2f", p) << '\t' << fmt("%.6f", s) << '\t' << fmt("%.2f", ssim_db(s)) << '\n';
  }
  const double n = static_cast<double>(pairs.size());
  out << "mean\t" << fmt("%.2f", sum_psnr / n) << '\t' << fmt("%.6f", sum_ssim / n) << '\t'
      << fmt("%.2f", ssim_db(sum_ssim / n)) << '\n';
  return 0;
}

struct SweepOpts {
  std::string model_a, model_b, mode = "i", input, out_dir;
  std::vector<double> coeffs;
  double floor = kDefaultEpsilonFloor;
};

int sweep_cmd(const SweepOpts& o, std::ostream& out, std::ostream& err) {
  if (o.coeffs.empty()) throw CommandError(kExitBadInput, "--coeffs needs at least one value");
  std::vector<BlendSpec> specs;
  for (double c : o.coeffs) specs.push_back(make_spec(o.mode, c, o.floor));
  const ParamSet a = load_archive(o.model_a);
  const ParamSet b = load_archive(o.model_b);
  const Image input = read_image(o.input);
  if (input.shape().h % 2 || input.shape().w % 2) {
    err << "note: " << o.input << " has odd extents; padding by edge replication for prediction\n";
  }
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);

  std::ostringstream table;
  table << "index\tcoeff\ttv\tpsnr_vs_input\tmean_abs_residual\n";
  std::vector<Image> tiles;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const DsanModel model = DsanModel::from_params(checked_blend(a, b, specs[i]));
    const Image output = predict_image(model, input);
    Image residual(output.shape());
    for (std::size_t k = 0; k < residual.size(); ++k) residual[k] = std::abs(input[k] - output[k]);

    char stem[32];
    std::snprintf(stem, sizeof stem, "%02zu", i);
    write_image(output, dir / (std::string("output_") + stem + ".pgm"));
    write_image(residual, dir / (std::string("residual_") + stem + ".pgm"));

    table << i << '\t' << fmt("%.6g", specs[i].coeff) << '\t' << fmt("%.6f", total_variation(output)) << '\t'
          << fmt("%.2f", psnr(output, input)) << '\t' << fmt("%.6f", mean_abs_difference(output, input)) << '\n';

    const Shape& s = output.shape();
    Image tile(Shape{1, s.c, s.h + kHeaderRows, s.w}, 1.0f);
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        std::copy_n(&output.at(0, c, y, 0), s.w, &tile.at(0, c, y + kHeaderRows, 0));
      }
    }
    draw_text(tile, 2, 2, fmt("%.3g", specs[i].coeff), 0.0f);
    tiles.push_back(std::move(tile));
  }
  const fs::path sheet_path = dir / (input.shape().c == 3 ? "contact_sheet.ppm" : "contact_sheet.pgm");
  write_image(tile_horizontal(tiles, 2, 1.0f), sheet_path);
  {
    std::ofstream tf(dir / "metrics.tsv");
    tf << table.str();
  }
  out << "# mode " << mode_short_name(specs.front().mode) << ", " << specs.size() << " coefficients\n" << table.str();
  return 0;
}

struct GradcheckOpts {
  std::uint64_t seed = 1;
  std::string corrupt;
  double corrupt_factor = 1.5;
  std::vector<std::string> only;
  double tolerance = 1e-3;
  double step = 1e-3;
};

int gradcheck_cmd(const GradcheckOpts& o, std::ostream& out, std::ostream&) {
  GradCheckOptions opts;
  opts.seed = o.seed;
  opts.tolerance = o.tolerance;
  opts.step = o.step;
  opts.only = o.only;
  opts.corrupt_factor = o.corrupt_factor;
  if (!o.corrupt.empty()) {
    opts.corrupt = op_from_name(o.corrupt);
    if (!opts.corrupt) throw CommandError(kExitBadInput, "unknown op '" + o.corrupt + "'");
  }
  const auto known = gradcheck_names();
  for (const auto& n : o.only) {
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw CommandError(kExitBadInput, "unknown check '" + n + "'");
    }
  }
  const auto results = run_gradcheck_suite(opts);
  out << format_gradcheck_report(results, opts);
  const bool ok = std::all_of(results.begin(), results.end(), [](const GradCheckResult& r) { return r.passed; });
  return ok ? 0 : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train image-smoothing networks and blend their weights into new operators"};
  app.name("cei");
  app.require_subcommand(1);
  app.allow_extras(false);

  GenDataOpts gd;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic corpus and Gaussian-label datasets A and B");
  c_gen->add_option("--out", gd.out, "Output directory")->required();
  c_gen->add_option("--inputs", gd.inputs, "Use images from this directory instead of synthesizing");
  c_gen->add_option("--count", gd.count, "Number of synthetic images")->capture_default_str();
  c_gen->add_option("--size", gd.size, "Synthetic image side length")->capture_default_str();
  c_gen->add_option("--sigma-a", gd.sigma_a, "Gaussian sigma of effect A")->capture_default_str();
  c_gen->add_option("--sigma-b", gd.sigma_b, "Gaussian sigma of effect B")->capture_default_str();
  c_gen->add_option("--seed", gd.seed, "Random seed")->capture_default_str();

  TrainOpts tr;
  std::uint64_t tr_seed = 0;
  std::size_t tr_epochs = 0, tr_channels = 0, tr_patch = 0;
  auto* c_train = app.add_subcommand("train", "Run a learning strategy and write one archive per model");
  c_train->add_option("--data", tr.data, "Dataset manifest (A then B; one for single)")->required();
  c_train->add_option("--strategy", tr.strategy, "a2b2a, b2a, b2a2b or single")
      ->check(CLI::IsMember({"a2b2a", "b2a", "b2a2b", "single"}))
      ->capture_default_str();
  c_train->add_option("--config", tr.config, "JSON training configuration")->check(CLI::ExistingFile);
  c_train->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  auto* o_seed = c_train->add_option("--seed", tr_seed, "Override the configured seed");
  auto* o_epochs = c_train->add_option("--epochs", tr_epochs, "Override the configured epoch count");
  auto* o_channels = c_train->add_option("--channels", tr_channels, "Override the network width");
  auto* o_patch = c_train->add_option("--patch", tr_patch, "Override the training patch size");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  BlendOpts bl;
  auto* c_blend = app.add_subcommand("blend", "Blend two archives into a new one");
  c_blend->add_option("--model-a", bl.model_a)->required()->check(CLI::ExistingFile);
  c_blend->add_option("--model-b", bl.model_b)->required()->check(CLI::ExistingFile);
  c_blend->add_option("--mode", bl.mode, "i, f, b, fts or bts")->capture_default_str();
  c_blend->add_option("--coeff", bl.coeff, "Blend coefficient in [0, 1]")->required();
  c_blend->add_option("--floor", bl.floor, "Smallest allowed extrapolation denominator")->capture_default_str();
  c_blend->add_option("--out", bl.out, "Output archive")->required();

  PredictOpts pr;
  auto* c_predict = app.add_subcommand("predict", "Run a model on one image");
  c_predict->add_option("--model", pr.model)->required()->check(CLI::ExistingFile);
  c_predict->add_option("--input", pr.input)->required()->check(CLI::ExistingFile);
  c_predict->add_option("--output", pr.output)->required();

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "PSNR and SSIM of a model over a dataset split");
  c_eval->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--split", ev.split, "val or train")->capture_default_str();

  SweepOpts sw;
  auto* c_sweep = app.add_subcommand("sweep", "Blend, predict and measure over a list of coefficients");
  c_sweep->add_option("--model-a", sw.model_a)->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--model-b", sw.model_b)->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--mode", sw.mode, "i, f, b, fts or bts")->capture_default_str();
  c_sweep->add_option("--coeffs", sw.coeffs, "Comma-separated coefficients")->required()->delimiter(',');
  c_sweep->add_option("--input", sw.input)->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--out-dir", sw.out_dir)->required();
  c_sweep->add_option("--floor", sw.floor, "Smallest allowed extrapolation denominator")->capture_default_str();

  GradcheckOpts gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and block");
  c_grad->add_option("--seed", gc.seed)->capture_default_str();
  c_grad->add_option("--only", gc.only, "Run only these checks");
  c_grad->add_option("--tolerance", gc.tolerance)->capture_default_str();
  c_grad->add_option("--step", gc.step)->capture_default_str();
  c_grad->add_option("--corrupt", gc.corrupt, "Fault injection: scale this op's backward rule");
  c_grad->add_option("--corrupt-factor", gc.corrupt_factor)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*c_gen) return gen_data(gd, out, err);
    if (*c_train) {
      if (*o_seed) tr.seed = tr_seed;
      if (*o_epochs) tr.epochs = tr_epochs;
      if (*o_channels) tr.channels = tr_channels;
      if (*o_patch) tr.patch = tr_patch;
      return train(tr, out, err);
    }
    if (*c_blend) return blend_cmd(bl, out, err);
    if (*c_predict) return predict_cmd(pr, out, err);
    if (*c_eval) return eval_cmd(ev, out, err);
    if (*c_sweep) return sweep_cmd(sw, out, err);
    if (*c_grad) return gradcheck_cmd(gc, out, err);
  } catch (const CommandError& e) {
    err << "error: " << e.what() << '\n';
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitBadInput;
}

}  // namespace cei::cli
