#include "cei/blocks.hpp"

#include <cmath>
#include <utility>

namespace cei {

namespace {

constexpr ConvGeometry kSame3x3{1, 1, 1};
constexpr ConvGeometry kPointwise{1, 1, 0};
constexpr ConvGeometry kDown{2, 1, 1};
// 4x4 kernel, stride 2, pad 1: exactly doubles the spatial extent.
constexpr ConvGeometry kUp{2, 1, 1};

}  // namespace

// ---------------------------------------------------------------------------
// ParamBuilder

template <typename T>
std::size_t ParamBuilder<T>::add_weight(const std::string& name, Shape shape, double fan_in) {
  BasicTensor<T> w(shape);
  if (rng_ != nullptr) {
    const double bound = std::sqrt(3.0 / fan_in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng_->uniform(-bound, bound));
  }
  return params_.add(name, std::move(w));
}

template <typename T>
std::size_t ParamBuilder<T>::add_bias(const std::string& name, std::size_t channels) {
  return params_.add(name, BasicTensor<T>(Shape{1, channels, 1, 1}));
}

template <typename T>
ConvLayer ParamBuilder<T>::conv(const std::string& name, std::size_t out_ch, std::size_t in_ch, std::size_t k,
                                const ConvGeometry& geom) {
  ConvLayer layer;
  layer.weight = add_weight(name + ".weight", Shape{out_ch, in_ch, k, k}, static_cast<double>(in_ch * k * k));
  layer.bias = add_bias(name + ".bias", out_ch);
  layer.geom = geom;
  return layer;
}

template <typename T>
ConvLayer ParamBuilder<T>::conv_transpose(const std::string& name, std::size_t in_ch, std::size_t out_ch,
                                          std::size_t k, const ConvGeometry& geom) {
  ConvLayer layer;
  const double taps = static_cast<double>(k * k) / static_cast<double>(geom.stride * geom.stride);
  layer.weight = add_weight(name + ".weight", Shape{in_ch, out_ch, k, k}, static_cast<double>(in_ch) * taps);
  layer.bias = add_bias(name + ".bias", out_ch);
  layer.geom = geom;
  layer.transposed = true;
  return layer;
}

template <typename T>
DsaBlock ParamBuilder<T>::dsa(const std::string& name, std::size_t c) {
  DsaBlock blk;
  for (std::size_t u = 0; u < 4; ++u) {
    const std::string unit = name + ".dcs" + std::to_string(u + 1);
    const double fan_in = static_cast<double>(2 * c * 9);
    blk.units[u].left = add_weight(unit + ".left", Shape{c, c, 3, 3}, fan_in);
    blk.units[u].right = add_weight(unit + ".right", Shape{c, c, 3, 3}, fan_in);
    blk.units[u].bias = add_bias(unit + ".bias", c);
  }
  return blk;
}

template <typename T>
ResDsaBlock ParamBuilder<T>::res_dsa(const std::string& name, std::size_t c) {
  ResDsaBlock blk;
  blk.conv_a = conv(name + ".conv_a", c, c, 3, kSame3x3);
  blk.conv_b = conv(name + ".conv_b", c, c, 3, kSame3x3);
  blk.dsa = dsa(name + ".dsa", c);
  return blk;
}

template <typename T>
PcanBlock ParamBuilder<T>::pcan(const std::string& name, std::size_t c) {
  PcanBlock blk;
  for (std::size_t i = 0; i < kPcanDilations.size(); ++i) {
    const int d = kPcanDilations[i];
    blk.branches[i] = conv(name + ".branch_d" + std::to_string(d), c, c, 3, ConvGeometry{1, d, d});
  }
  blk.fuse = conv(name + ".fuse", c, 3 * c, 1, kPointwise);
  return blk;
}

template <typename T>
MsacBlock ParamBuilder<T>::msac(const std::string& name, std::size_t c) {
  MsacBlock blk;
  for (std::size_t i = 0; i < 3; ++i) blk.stages[i] = pcan(name + ".pcan" + std::to_string(i + 1), c);
  for (std::size_t i = 0; i < 3; ++i) {
    blk.rearrange[i] = conv(name + ".rearrange" + std::to_string(i + 1), c, c, 1, kPointwise);
  }
  blk.shrink = conv(name + ".shrink", c, 3 * c, 1, kPointwise);
  return blk;
}

template <typename T>
DsanLayout ParamBuilder<T>::dsan(const DsanConfig& cfg) {
  if (cfg.channels == 0 || cfg.image_channels == 0) {
    throw std::invalid_argument("network configuration needs positive channel counts");
  }
  const std::size_t c = cfg.channels;
  DsanLayout l;
  l.ifi = conv("ifi", c, cfg.image_channels, 3, kSame3x3);
  l.lfa_res[0] = res_dsa("lfa.res1", c);
  l.lfa_res[1] = res_dsa("lfa.res2", c);
  l.lfa_dsa = dsa("lfa.dsa", c);
  l.down = conv("nla.down", c, c, 3, kDown);
  l.msac[0] = msac("nla.msac1", c);
  l.nla_res[0] = res_dsa("nla.res3", c);
  l.msac[1] = msac("nla.msac2", c);
  l.nla_res[1] = res_dsa("nla.res4", c);
  l.nla_dsa = dsa("nla.dsa", c);
  l.up = conv_transpose("uro.up", c, c, 4, kUp);
  l.halve = conv("uro.halve", c, 2 * c, 1, kPointwise);
  l.uro_res = res_dsa("uro.res5", c);
  l.out = conv("uro.out", cfg.image_channels, c, 3, kSame3x3);
  return l;
}

template class ParamBuilder<float>;
template class ParamBuilder<double>;

// ---------------------------------------------------------------------------
// Forward passes

template <class G>
GraphVar<G> conv_forward(const BlockContext<G>& ctx, const ConvLayer& layer, const GraphVar<G>& x) {
  const auto& w = ctx.params[layer.weight];
  const auto& b = ctx.params[layer.bias];
  if (layer.transposed) return conv_transpose2d(ctx.graph, x, w, b, layer.geom);
  return conv2d(ctx.graph, x, w, b, layer.geom);
}

namespace {

template <class G>
GraphVar<G> dcs_forward(const BlockContext<G>& ctx, const DcsUnit& u, const GraphVar<G>& s0, const GraphVar<G>& s1) {
  auto left = conv2d(ctx.graph, s0, ctx.params[u.left], ctx.params[u.bias], kSame3x3);
  auto right = conv2d(ctx.graph, s1, ctx.params[u.right], GraphVar<G>{}, kSame3x3);
  return add(ctx.graph, left, right);
}

template <class G>
GraphVar<G> lrelu(const BlockContext<G>& ctx, const GraphVar<G>& x) {
  return activation(ctx.graph, x, Activation::LeakyRelu, ctx.slope);
}

}  // namespace

template <class G>
std::array<GraphVar<G>, 3> dsa_terms(const BlockContext<G>& ctx, const DsaBlock& blk, const GraphVar<G>& s0,
                                     const GraphVar<G>& s1) {
  const Shape& a = ctx.graph.value(s0).shape();
  const Shape& b = ctx.graph.value(s1).shape();
  require_same_shape(a, b, "dsa");
  auto& g = ctx.graph;

  auto t0 = dcs_forward(ctx, blk.units[0], s0, s1);
  auto t1_pos = lrelu(ctx, t0);
  auto t1_neg = lrelu(ctx, scale(g, t0, -1.0));
  auto t2 = activation(g, dcs_forward(ctx, blk.units[1], s0, s1), Activation::Tanh);
  auto t3 = activation(g, dcs_forward(ctx, blk.units[2], s0, s1), Activation::Tanh);
  auto t4 = activation(g, dcs_forward(ctx, blk.units[3], s0, s1), Activation::Sigmoid);

  auto e1 = mul(g, t1_pos, t2);
  auto e2 = mul(g, t1_neg, t3);
  auto e3 = mul(g, t4, activation(g, s1, Activation::Tanh));
  return {e1, e2, e3};
}

template <class G>
GraphVar<G> dsa_forward(const BlockContext<G>& ctx, const DsaBlock& blk, const GraphVar<G>& s0,
                        const GraphVar<G>& s1) {
  auto [e1, e2, e3] = dsa_terms(ctx, blk, s0, s1);
  return add(ctx.graph, add(ctx.graph, e1, e2), e3);
}

template <class G>
GraphVar<G> res_dsa_forward(const BlockContext<G>& ctx, const ResDsaBlock& blk, const GraphVar<G>& x) {
  auto h = lrelu(ctx, conv_forward(ctx, blk.conv_a, x));
  auto s1 = lrelu(ctx, conv_forward(ctx, blk.conv_b, h));
  return dsa_forward(ctx, blk.dsa, x, s1);
}

template <class G>
GraphVar<G> pcan_forward(const BlockContext<G>& ctx, const PcanBlock& blk, const GraphVar<G>& x) {
  std::array<GraphVar<G>, 3> branches;
  for (std::size_t i = 0; i < branches.size(); ++i) branches[i] = lrelu(ctx, conv_forward(ctx, blk.branches[i], x));
  auto cat = concat_channels(ctx.graph, std::span<const GraphVar<G>>(branches));
  return conv_forward(ctx, blk.fuse, cat);
}

template <class G>
GraphVar<G> msac_forward(const BlockContext<G>& ctx, const MsacBlock& blk, const GraphVar<G>& x) {
  std::array<GraphVar<G>, 3> rearranged;
  GraphVar<G> stage = x;
  for (std::size_t i = 0; i < 3; ++i) {
    stage = pcan_forward(ctx, blk.stages[i], stage);
    rearranged[i] = conv_forward(ctx, blk.rearrange[i], stage);
  }
  auto cat = concat_channels(ctx.graph, std::span<const GraphVar<G>>(rearranged));
  return conv_forward(ctx, blk.shrink, cat);
}

template <class G>
GraphVar<G> dsan_forward(const BlockContext<G>& ctx, const DsanLayout& l, const GraphVar<G>& image) {
  const Shape& s = ctx.graph.value(image).shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("network input " + to_string(s) +
                     " has an odd spatial extent; resize or pad the image to even height and width");
  }
  auto& g = ctx.graph;
  auto ifi = lrelu(ctx, conv_forward(ctx, l.ifi, image));

  auto s0 = res_dsa_forward(ctx, l.lfa_res[0], ifi);
  auto s1 = res_dsa_forward(ctx, l.lfa_res[1], s0);
  auto lfa = dsa_forward(ctx, l.lfa_dsa, s0, s1);

  auto half = conv_forward(ctx, l.down, lfa);
  auto ic = res_dsa_forward(ctx, l.nla_res[0], msac_forward(ctx, l.msac[0], half));
  auto nonlocal = res_dsa_forward(ctx, l.nla_res[1], msac_forward(ctx, l.msac[1], ic));
  auto nla = dsa_forward(ctx, l.nla_dsa, ic, nonlocal);

  auto full = conv_forward(ctx, l.up, nla);
  std::array<GraphVar<G>, 2> parts{full, lfa};
  auto h = conv_forward(ctx, l.halve, concat_channels(g, std::span<const GraphVar<G>>(parts)));
  return conv_forward(ctx, l.out, res_dsa_forward(ctx, l.uro_res, h));
}

#define CEI_INSTANTIATE(G)                                                                                  \
  template GraphVar<G> conv_forward(const BlockContext<G>&, const ConvLayer&, const GraphVar<G>&);          \
  template std::array<GraphVar<G>, 3> dsa_terms(const BlockContext<G>&, const DsaBlock&, const GraphVar<G>&, \
                                                const GraphVar<G>&);                                        \
  template GraphVar<G> dsa_forward(const BlockContext<G>&, const DsaBlock&, const GraphVar<G>&,             \
                                   const GraphVar<G>&);                                                     \
  template GraphVar<G> res_dsa_forward(const BlockContext<G>&, const ResDsaBlock&, const GraphVar<G>&);     \
  template GraphVar<G> pcan_forward(const BlockContext<G>&, const PcanBlock&, const GraphVar<G>&);          \
  template GraphVar<G> msac_forward(const BlockContext<G>&, const MsacBlock&, const GraphVar<G>&);          \
  template GraphVar<G> dsan_forward(const BlockContext<G>&, const DsanLayout&, const GraphVar<G>&);
CEI_INSTANTIATE(Tape)
CEI_INSTANTIATE(Tape64)
CEI_INSTANTIATE(BasicEvaluator<float>)
CEI_INSTANTIATE(BasicEvaluator<double>)
#undef CEI_INSTANTIATE

// ---------------------------------------------------------------------------
// Binding and the model wrapper

template <typename T>
std::vector<Var> bind_parameters(BasicTape<T>& tape, const BasicParamSet<T>& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) vars.push_back(trainable ? tape.parameter(e.tensor) : tape.constant(e.tensor));
  return vars;
}

template <typename T>
std::vector<EvalVar<T>> bind_parameters(BasicEvaluator<T>& ev, const BasicParamSet<T>& params) {
  std::vector<EvalVar<T>> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) vars.push_back(ev.borrow(e.tensor));
  return vars;
}

template std::vector<Var> bind_parameters(BasicTape<float>&, const BasicParamSet<float>&, bool);
template std::vector<Var> bind_parameters(BasicTape<double>&, const BasicParamSet<double>&, bool);
template std::vector<EvalVar<float>> bind_parameters(BasicEvaluator<float>&, const BasicParamSet<float>&);
template std::vector<EvalVar<double>> bind_parameters(BasicEvaluator<double>&, const BasicParamSet<double>&);

template <typename T>
BasicDsanModel<T> BasicDsanModel<T>::create(const DsanConfig& cfg, std::uint64_t seed) {
  BasicDsanModel m;
  m.config_ = cfg;
  Rng rng(seed);
  ParamBuilder<T> builder(m.params_, &rng);
  m.layout_ = builder.dsan(cfg);
  m.params_.meta().channel_width = cfg.channels;
  return m;
}

template <typename T>
BasicDsanModel<T> BasicDsanModel<T>::from_params(BasicParamSet<T> params, double leaky_slope) {
  auto ifi = params.find("ifi.weight");
  if (!ifi || params[*ifi].tensor.shape().h != 3 || params[*ifi].tensor.shape().w != 3) {
    CompatReport report;
    report.compatible = false;
    report.diffs.push_back(EntryDiff{0, params.size() ? params[0].name : "", "ifi.weight", std::nullopt, std::nullopt,
                                     "parameters do not start with a 3x3 'ifi.weight' entry"});
    throw IncompatibleModels(std::move(report));
  }
  DsanConfig cfg;
  cfg.channels = params[*ifi].tensor.shape().n;
  cfg.image_channels = params[*ifi].tensor.shape().c;
  cfg.leaky_slope = leaky_slope;

  BasicDsanModel m;
  m.config_ = cfg;
  BasicParamSet<T> reference;
  ParamBuilder<T> builder(reference, nullptr);
  m.layout_ = builder.dsan(cfg);
  CompatReport report = compat_check(reference, params);
  if (!report.compatible) throw IncompatibleModels(std::move(report));
  m.params_ = std::move(params);
  m.params_.meta().channel_width = cfg.channels;
  return m;
}

template <typename T>
void BasicDsanModel<T>::set_params(BasicParamSet<T> params) {
  CompatReport report = compat_check(params_, params);
  if (!report.compatible) throw IncompatibleModels(std::move(report));
  params_ = std::move(params);
  params_.meta().channel_width = config_.channels;
}

template <typename T>
Var BasicDsanModel<T>::forward(BasicTape<T>& tape, std::span<const Var> params, Var image) const {
  BlockContext<BasicTape<T>> ctx{tape, params, config_.leaky_slope};
  return dsan_forward(ctx, layout_, image);
}

template <typename T>
BasicTensor<T> BasicDsanModel<T>::predict(const BasicTensor<T>& image) const {
  if (image.shape().c != config_.image_channels) {
    throw ShapeError("predict: image " + to_string(image.shape()) + " has " + std::to_string(image.shape().c) +
                     " channels, model expects " + std::to_string(config_.image_channels));
  }
  BasicEvaluator<T> ev;
  auto vars = bind_parameters(ev, params_);
  BlockContext<BasicEvaluator<T>> ctx{ev, vars, config_.leaky_slope};
  auto out = dsan_forward(ctx, layout_, ev.borrow(image));
  return ev.value(out);
}

template class BasicDsanModel<float>;
template class BasicDsanModel<double>;

}  // namespace cei
