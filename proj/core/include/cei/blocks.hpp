#pragma once

// Network building blocks and the assembled smoothing network.
//
// Every block is described by a layout struct holding indices into a parameter
// set. The forward functions are written once over a "graph" type (the gradient
// tape or the eager evaluator) that supplies conv2d/activation/add/... overloads.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cei/autodiff.hpp"
#include "cei/evaluator.hpp"
#include "cei/kernels.hpp"
#include "cei/param_set.hpp"
#include "cei/random.hpp"

namespace cei {

struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  ConvGeometry geom{};
  bool transposed = false;
};

/// One dual-convolution-summation unit: s0 (*) left + s1 (*) right + bias.
struct DcsUnit {
  std::size_t left = 0;
  std::size_t right = 0;
  std::size_t bias = 0;
};

/// Double-state aggregation: four DCS units fused through gated activations.
struct DsaBlock {
  std::array<DcsUnit, 4> units{};
};

/// Residual block whose shortcut and conv branch are merged by a DSA block.
struct ResDsaBlock {
  ConvLayer conv_a;
  ConvLayer conv_b;
  DsaBlock dsa;
};

inline constexpr std::array<int, 3> kPcanDilations{1, 4, 8};

/// Parallel atrous branches (dilations 1, 4, 8) -> concat -> 1x1 fuse.
struct PcanBlock {
  std::array<ConvLayer, 3> branches{};
  ConvLayer fuse;
};

/// Three cascaded P-CAN stages, each rearranged by a 1x1 conv, concatenated and shrunk back to c.
struct MsacBlock {
  std::array<PcanBlock, 3> stages{};
  std::array<ConvLayer, 3> rearrange{};
  ConvLayer shrink;
};

struct DsanLayout {
  ConvLayer ifi;
  std::array<ResDsaBlock, 2> lfa_res{};
  DsaBlock lfa_dsa;
  ConvLayer down;
  std::array<MsacBlock, 2> msac{};
  std::array<ResDsaBlock, 2> nla_res{};
  DsaBlock nla_dsa;
  ConvLayer up;
  ConvLayer halve;
  ResDsaBlock uro_res;
  ConvLayer out;
};

struct DsanConfig {
  std::size_t channels = 16;
  std::size_t image_channels = 1;
  double leaky_slope = kDefaultLeakySlope;
};

/// Appends named parameters to a set and returns block layouts.
///
/// Weights are drawn uniformly from [-sqrt(3/fan_in), sqrt(3/fan_in)]; biases
/// start at zero. With no generator every parameter is zero.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(BasicParamSet<T>& params, Rng* rng) : params_(params), rng_(rng) {}

  ConvLayer conv(const std::string& name, std::size_t out_ch, std::size_t in_ch, std::size_t k,
                 const ConvGeometry& geom);
  /// Transposed conv from `in_ch` to `out_ch` channels.
  ConvLayer conv_transpose(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                           const ConvGeometry& geom);
  DsaBlock dsa(const std::string& name, std::size_t c);
  ResDsaBlock res_dsa(const std::string& name, std::size_t c);
  PcanBlock pcan(const std::string& name, std::size_t c);
  MsacBlock msac(const std::string& name, std::size_t c);
  DsanLayout dsan(const DsanConfig& cfg);

 private:
  std::size_t add_weight(const std::string& name, Shape shape, double fan_in);
  std::size_t add_bias(const std::string& name, std::size_t channels);

  BasicParamSet<T>& params_;
  Rng* rng_;
};

/// Graph plus the bound parameter handles (one per parameter-set entry).
template <class G>
struct BlockContext {
  G& graph;
  std::span<const typename G::var_type> params;
  double slope = kDefaultLeakySlope;
};

template <class G>
using GraphVar = typename G::var_type;

template <class G>
GraphVar<G> conv_forward(const BlockContext<G>& ctx, const ConvLayer& layer, const GraphVar<G>& x);

/// Returns E1 + E2 + E3 for the two input states.
template <class G>
GraphVar<G> dsa_forward(const BlockContext<G>& ctx, const DsaBlock& blk, const GraphVar<G>& s0,
                        const GraphVar<G>& s1);

/// The three DSA terms before summation, for inspection and tests.
template <class G>
std::array<GraphVar<G>, 3> dsa_terms(const BlockContext<G>& ctx, const DsaBlock& blk, const GraphVar<G>& s0,
                                     const GraphVar<G>& s1);

template <class G>
GraphVar<G> res_dsa_forward(const BlockContext<G>& ctx, const ResDsaBlock& blk, const GraphVar<G>& x);

template <class G>
GraphVar<G> pcan_forward(const BlockContext<G>& ctx, const PcanBlock& blk, const GraphVar<G>& x);

template <class G>
GraphVar<G> msac_forward(const BlockContext<G>& ctx, const MsacBlock& blk, const GraphVar<G>& x);

/// Full network. Rejects odd spatial extents.
template <class G>
GraphVar<G> dsan_forward(const BlockContext<G>& ctx, const DsanLayout& layout, const GraphVar<G>& image);

/// Registers every entry on the tape, as trainable parameters or constants.
template <typename T>
std::vector<Var> bind_parameters(BasicTape<T>& tape, const BasicParamSet<T>& params, bool trainable);

template <typename T>
std::vector<EvalVar<T>> bind_parameters(BasicEvaluator<T>& ev, const BasicParamSet<T>& params);

/// Configuration, layout and parameters of one smoothing network.
template <typename T>
class BasicDsanModel {
 public:
  /// Fresh model with seeded random weights.
  static BasicDsanModel create(const DsanConfig& cfg, std::uint64_t seed);
  /// Wraps existing parameters, inferring the configuration from their shapes.
  /// Throws IncompatibleModels if they do not form a valid network.
  static BasicDsanModel from_params(BasicParamSet<T> params, double leaky_slope = kDefaultLeakySlope);

  [[nodiscard]] const DsanConfig& config() const noexcept { return config_; }
  [[nodiscard]] const DsanLayout& layout() const noexcept { return layout_; }
  [[nodiscard]] const BasicParamSet<T>& params() const noexcept { return params_; }
  [[nodiscard]] BasicParamSet<T>& mutable_params() noexcept { return params_; }
  /// Replaces parameters; they must be blend-compatible with the current ones.
  void set_params(BasicParamSet<T> params);

  /// Forward on an existing tape with parameters from bind_parameters().
  Var forward(BasicTape<T>& tape, std::span<const Var> params, Var image) const;

  /// Gradient-free prediction for an (n, image_channels, H, W) tensor with even H, W.
  [[nodiscard]] BasicTensor<T> predict(const BasicTensor<T>& image) const;

  template <typename U>
  [[nodiscard]] BasicDsanModel<U> cast() const {
    return BasicDsanModel<U>::from_params(params_.template cast<U>(), config_.leaky_slope);
  }

 private:
  DsanConfig config_;
  DsanLayout layout_;
  BasicParamSet<T> params_;
};

using DsanModel = BasicDsanModel<float>;
using DsanModel64 = BasicDsanModel<double>;

extern template class BasicDsanModel<float>;
extern template class BasicDsanModel<double>;

}  // namespace cei
