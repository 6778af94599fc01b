#include "cei/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cei {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0 must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor must lie in (0, 1]");
  if (decay_period == 0) fail("decay_period must be positive");
  if (batch == 0) fail("batch must be positive");
  if (patch == 0 || patch % 2 != 0) fail("patch must be even and positive");
  if (channels == 0) fail("channels must be positive");
  loss.validate();
}

namespace {

template <typename V>
void take(json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("train config: key '") + key + "' has the wrong type");
  }
  j.erase(it);
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("train config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("train config: top level must be a JSON object");
  TrainConfig cfg;
  take(j, "lr0", cfg.lr0);
  take(j, "beta1", cfg.beta1);
  take(j, "beta2", cfg.beta2);
  take(j, "epsilon", cfg.epsilon);
  take(j, "decay_factor", cfg.decay_factor);
  take(j, "decay_period", cfg.decay_period);
  take(j, "epochs", cfg.epochs);
  take(j, "batch", cfg.batch);
  take(j, "patch", cfg.patch);
  take(j, "steps_per_epoch", cfg.steps_per_epoch);
  take(j, "augment", cfg.augment);
  take(j, "seed", cfg.seed);
  take(j, "channels", cfg.channels);
  take(j, "phi", cfg.loss.phi);
  take(j, "ssim_window", cfg.loss.ssim_window);
  take(j, "ssim_sigma", cfg.loss.ssim_sigma);
  take(j, "k1", cfg.loss.k1);
  take(j, "k2", cfg.loss.k2);
  take(j, "dynamic_range", cfg.loss.dynamic_range);
  if (!j.empty()) throw std::invalid_argument("train config: unknown key '" + j.begin().key() + "'");
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("train config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j{{"lr0", cfg.lr0},
         {"beta1", cfg.beta1},
         {"beta2", cfg.beta2},
         {"epsilon", cfg.epsilon},
         {"decay_factor", cfg.decay_factor},
         {"decay_period", cfg.decay_period},
         {"epochs", cfg.epochs},
         {"batch", cfg.batch},
         {"patch", cfg.patch},
         {"steps_per_epoch", cfg.steps_per_epoch},
         {"augment", cfg.augment},
         {"seed", cfg.seed},
         {"channels", cfg.channels},
         {"phi", cfg.loss.phi},
         {"ssim_window", cfg.loss.ssim_window},
         {"ssim_sigma", cfg.loss.ssim_sigma},
         {"k1", cfg.loss.k1},
         {"k2", cfg.loss.k2},
         {"dynamic_range", cfg.loss.dynamic_range}};
  return j.dump(2);
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  const auto decays = static_cast<double>(epoch / cfg.decay_period);
  return cfg.lr0 * std::pow(cfg.decay_factor, decays);
}

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.tensor.shape());
    s.v.emplace_back(e.tensor.shape());
  }
  return s;
}

void adam_step(AdamState& state, ParamSet& params, const std::vector<Tensor>& grads, double lr,
               const AdamOptions& opts) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].tensor.shape(), grads[i].shape(), "adam_step gradient");
    require_same_shape(params[i].tensor.shape(), state.m[i].shape(), "adam_step moment");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * gk;
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] = static_cast<float>(static_cast<double>(p[k]) - lr * mhat / (std::sqrt(vhat) + opts.epsilon));
    }
  }
}

FlipDraw draw_flips(Rng& rng) {
  FlipDraw d;
  d.horizontal = rng.bernoulli(0.5);
  d.vertical = rng.bernoulli(0.5);
  return d;
}

void apply_flips(Tensor& t, std::size_t n, FlipDraw flips) {
  const Shape& s = t.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    auto p = t.plane(n, c);
    if (flips.horizontal) {
      for (std::size_t y = 0; y < s.h; ++y) std::reverse(p.begin() + y * s.w, p.begin() + (y + 1) * s.w);
    }
    if (flips.vertical) {
      for (std::size_t y = 0; y < s.h / 2; ++y) {
        std::swap_ranges(p.begin() + y * s.w, p.begin() + (y + 1) * s.w, p.begin() + (s.h - 1 - y) * s.w);
      }
    }
  }
}

void augment(PatchBatch& batch, Rng& rng) {
  require_same_shape(batch.input.shape(), batch.label.shape(), "augment");
  for (std::size_t n = 0; n < batch.input.shape().n; ++n) {
    const FlipDraw d = draw_flips(rng);
    apply_flips(batch.input, n, d);
    apply_flips(batch.label, n, d);
  }
}

std::string format_trace(const std::vector<EpochRecord>& trace) {
  std::ostringstream os;
  os << "epoch,mean_loss,lr\n";
  char line[96];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", r.epoch, r.mean_loss, r.lr);
    os << line;
  }
  return os.str();
}

TrainingDiverged::TrainingDiverged(std::string stage, std::size_t epoch, std::size_t batch_index)
    : std::runtime_error("training stage '" + stage + "' diverged: non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_index)),
      stage_(std::move(stage)),
      epoch_(epoch),
      batch_index_(batch_index) {}

TrainResult train_operator(const DsanModel& model, const std::vector<ImagePair>& train, const TrainConfig& cfg,
                           const std::string& stage, std::uint64_t stream, const ProgressFn& progress) {
  cfg.validate();
  if (train.empty()) throw DatasetError("training stage '" + stage + "': no training images");
  check_patch_size(train, cfg.patch);
  if (train.front().input.shape().c != model.config().image_channels) {
    throw ShapeError("training stage '" + stage + "': images have " + std::to_string(train.front().input.shape().c) +
                     " channels, model expects " + std::to_string(model.config().image_channels));
  }

  DsanModel work = model;
  AdamState adam = AdamState::zeros_like(work.params());
  const AdamOptions opts{cfg.beta1, cfg.beta2, cfg.epsilon};
  Rng rng = Rng(cfg.seed).fork(stream);
  const std::size_t steps =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (train.size() + cfg.batch - 1) / cfg.batch;

  TrainResult res;
  std::vector<Tensor> grads(work.params().size());
  std::size_t batch_index = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    double total = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++batch_index) {
      PatchBatch batch = sample_patches(train, cfg.patch, cfg.batch, rng);
      if (cfg.augment) augment(batch, rng);

      Tape tape;
      auto vars = bind_parameters(tape, work.params(), true);
      Var x = tape.constant(std::move(batch.input));
      Var y = tape.constant(std::move(batch.label));
      Var loss = smoothing_loss(tape, work.forward(tape, vars, x), y, cfg.loss);
      const double value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(value)) throw TrainingDiverged(stage, epoch, batch_index);
      tape.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) grads[i] = tape.grad(vars[i]);
      adam_step(adam, work.mutable_params(), grads, lr, opts);
      total += value;
    }
    EpochRecord rec{epoch, total / static_cast<double>(steps), lr};
    res.trace.push_back(rec);
    if (progress) progress(stage, rec);
  }
  res.params = work.params();
  return res;
}

void StrategyPlan::validate() const {
  if (stages.empty()) throw std::invalid_argument("strategy '" + name + "' has no stages");
  if (stages.front().from_previous) {
    throw std::invalid_argument("strategy '" + name + "': the first stage must start from random weights");
  }
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (!stages[i].from_previous) {
      throw std::invalid_argument("strategy '" + name + "': stage '" + stages[i].model +
                                  "' must start from the previous stage");
    }
  }
}

StrategyPlan strategy_preset(const std::string& name) {
  if (name == "a2b2a") return {name, {{"A0", "A", false}, {"B", "B", true}, {"A", "A", true}}, {"A", "B"}};
  if (name == "b2a") return {name, {{"B", "B", false}, {"A", "A", true}}, {"A", "B"}};
  if (name == "b2a2b") return {name, {{"B0", "B", false}, {"A", "A", true}, {"B", "B", true}}, {"A", "B"}};
  if (name == "single") {
    return {name, {{"Effect", "effect", false}, {"Identity", "identity", true}}, {"Identity", "Effect"}};
  }
  throw std::invalid_argument("unknown strategy '" + name + "' (known: a2b2a, b2a, b2a2b, single)");
}

const ParamSet& StrategyResult::model(const std::string& name) const {
  for (const auto& [n, p] : models) {
    if (n == name) return p;
  }
  throw std::out_of_range("strategy result has no model '" + name + "'");
}

StrategyResult run_strategy(const StrategyPlan& plan, const std::map<std::string, std::vector<ImagePair>>& datasets,
                            const TrainConfig& cfg, const ProgressFn& progress) {
  plan.validate();
  cfg.validate();
  for (const auto& st : plan.stages) {
    auto it = datasets.find(st.dataset);
    if (it == datasets.end() || it->second.empty()) {
      throw DatasetError("strategy '" + plan.name + "', stage '" + st.model + "': missing dataset '" + st.dataset + "'");
    }
  }
  const std::size_t image_channels = datasets.at(plan.stages.front().dataset).front().input.shape().c;
  DsanModel current = DsanModel::create(DsanConfig{cfg.channels, image_channels, kDefaultLeakySlope}, cfg.seed);

  StrategyResult res;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& st = plan.stages[i];
    TrainConfig stage_cfg = cfg;
    if (st.epochs) stage_cfg.epochs = st.epochs;
    TrainResult tr = train_operator(current, datasets.at(st.dataset), stage_cfg, st.model, i + 1, progress);
    current.set_params(tr.params);
    res.models.emplace_back(st.model, std::move(tr.params));
    res.traces[st.model] = std::move(tr.trace);
  }
  return res;
}

}  // namespace cei
