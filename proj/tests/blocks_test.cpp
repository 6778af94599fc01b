#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cei/blocks.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cei {
namespace {

using test::DsaFixture;
using test::random_tensor;
using test::ScalarDsa;

TEST(Dsa, MatchesScalarOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    DsaFixture<double> fx(1, &rng);
    // Biases start at zero; give them values so every term is exercised.
    for (std::size_t u = 0; u < 4; ++u) fx.params[fx.blk.units[u].bias].tensor[0] = rng.uniform(-0.5, 0.5);
    const ScalarDsa oracle = test::scalar_oracle(fx);
    const Tensor64 s0 = random_tensor<double>({1, 1, 3, 3}, rng, -2, 2);
    const Tensor64 s1 = random_tensor<double>({1, 1, 3, 3}, rng, -2, 2);
    const Tensor64 got = fx.forward(s0, s1);
    const std::vector<double> want = oracle.run(s0.storage(), s1.storage(), 3, 3);
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_LT(std::abs(got[i] - want[i]) / std::max(std::abs(want[i]), 1e-12), 1e-6) << "pixel " << i;
    }
  }
}

TEST(Dsa, ZeroParametersGiveHalfTanh) {
  Rng rng(22);
  DsaFixture<float> fx(3, nullptr);
  const Tensor s0 = random_tensor({2, 3, 5, 4}, rng, -3, 3);
  const Tensor s1 = random_tensor({2, 3, 5, 4}, rng, -3, 3);
  const Tensor out = fx.forward(s0, s1);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.5f * std::tanh(s1[i]));
}

TEST(Dsa, ZeroStatesZeroBiasGiveZero) {
  Rng rng(23);
  DsaFixture<float> fx(2, &rng);
  const Tensor z(Shape{1, 2, 4, 4});
  const Tensor out = fx.forward(z, z);
  for (float v : out.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(Dsa, FusedOutputIsSumOfTerms) {
  Rng rng(24);
  DsaFixture<float> fx(4, &rng);
  const Tensor s0 = random_tensor({1, 4, 6, 6}, rng), s1 = random_tensor({1, 4, 6, 6}, rng);
  Evaluator ev;
  const auto handles = bind_parameters(ev, fx.params);
  BlockContext<Evaluator> ctx{ev, handles};
  const auto terms = dsa_terms(ctx, fx.blk, ev.constant(s0), ev.constant(s1));
  const Tensor& e1 = ev.value(terms[0]);
  const Tensor& e2 = ev.value(terms[1]);
  const Tensor& e3 = ev.value(terms[2]);
  const Tensor fused = fx.forward(s0, s1);
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_EQ(fused[i], (e1[i] + e2[i]) + e3[i]);
}

TEST(Dsa, ShapeMismatchRejected) {
  DsaFixture<float> fx(1, nullptr);
  EXPECT_THROW(fx.forward(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 5})), ShapeError);
}

TEST(Dsa, OutputBoundedForExtremeInputs) {
  Rng rng(25);
  DsaFixture<float> fx(2, &rng);
  const Tensor s0 = random_tensor({1, 2, 5, 5}, rng, -50, 50), s1 = random_tensor({1, 2, 5, 5}, rng, -50, 50);
  EXPECT_TRUE(fx.forward(s0, s1).all_finite());
}

template <typename Build, typename Run>
Tensor run_block(std::size_t c, Rng* rng, const Tensor& x, Build build, Run run) {
  ParamSet params;
  ParamBuilder<float> pb(params, rng);
  const auto blk = build(pb, c);
  Evaluator ev;
  const auto handles = bind_parameters(ev, params);
  BlockContext<Evaluator> ctx{ev, handles};
  return ev.value(run(ctx, blk, ev.constant(x)));
}

auto build_res = [](ParamBuilder<float>& pb, std::size_t c) { return pb.res_dsa("r", c); };
auto run_res = [](auto& ctx, const auto& blk, const auto& x) { return res_dsa_forward(ctx, blk, x); };
auto build_msac = [](ParamBuilder<float>& pb, std::size_t c) { return pb.msac("m", c); };
auto run_msac = [](auto& ctx, const auto& blk, const auto& x) { return msac_forward(ctx, blk, x); };
auto build_pcan = [](ParamBuilder<float>& pb, std::size_t c) { return pb.pcan("p", c); };
auto run_pcan = [](auto& ctx, const auto& blk, const auto& x) { return pcan_forward(ctx, blk, x); };

TEST(ResDsa, ZeroWeightsGiveZero) {
  Rng rng(26);
  // With everything zero, s1 = 0 and the output is 0.5 tanh(0).
  const Tensor out = run_block(3, nullptr, random_tensor({1, 3, 6, 6}, rng), build_res, run_res);
  for (float v : out.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(ResDsa, ShapePreservedForAnyExtent) {
  Rng rng(27);
  for (auto [h, w] : {std::pair{5, 7}, std::pair{8, 8}, std::pair{1, 3}}) {
    const Tensor x = random_tensor({1, 2, std::size_t(h), std::size_t(w)}, rng);
    EXPECT_EQ(run_block(2, &rng, x, build_res, run_res).shape(), x.shape());
  }
}

TEST(Msac, ZeroWeightsGiveZero) {
  Rng rng(28);
  const Tensor out = run_block(2, nullptr, random_tensor({1, 2, 16, 16}, rng), build_msac, run_msac);
  for (float v : out.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(Msac, ShapePreserved) {
  Rng rng(29);
  const Tensor x = random_tensor({1, 4, 16, 16}, rng);
  EXPECT_EQ(run_block(4, &rng, x, build_msac, run_msac).shape(), x.shape());
}

TEST(Pcan, ImpulseSupportIs17) {
  Rng rng(30);
  ParamSet params;
  ParamBuilder<float> pb(params, &rng);
  const PcanBlock blk = pb.pcan("p", 1);
  // Positive weights keep interior responses away from accidental cancellation.
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& v : params[i].tensor.data()) v = std::abs(v) + 0.01f;
  Tensor x(Shape{1, 1, 41, 41});
  x.at(0, 0, 20, 20) = 1.0f;
  Evaluator ev;
  const auto handles = bind_parameters(ev, params);
  BlockContext<Evaluator> ctx{ev, handles};
  const Tensor y = ev.value(pcan_forward(ctx, blk, ev.constant(x)));
  // Biases are positive here, so measure the support of the deviation from the impulse-free response.
  const Tensor y0 = ev.value(pcan_forward(ctx, blk, ev.constant(Tensor(x.shape()))));
  std::size_t lo_y = 41, hi_y = 0, lo_x = 41, hi_x = 0;
  for (std::size_t i = 0; i < 41; ++i)
    for (std::size_t j = 0; j < 41; ++j)
      if (y.at(0, 0, i, j) != y0.at(0, 0, i, j)) {
        lo_y = std::min(lo_y, i), hi_y = std::max(hi_y, i);
        lo_x = std::min(lo_x, j), hi_x = std::max(hi_x, j);
      }
  EXPECT_EQ(hi_y - lo_y + 1, 17u);
  EXPECT_EQ(hi_x - lo_x + 1, 17u);
}

TEST(Dsan, OutputShapeMatchesImage) {
  for (std::size_t ic : {1u, 3u}) {
    const DsanModel m = DsanModel::create({4, ic}, 7);
    Rng rng(31);
    const Tensor img = random_tensor({1, ic, 12, 10}, rng, 0, 1);
    EXPECT_EQ(m.predict(img).shape(), img.shape());
  }
}

TEST(Dsan, ZeroOutputConvGivesConstantBias) {
  DsanModel m = DsanModel::create({4, 1}, 8);
  auto& p = m.mutable_params();
  p[*p.find("uro.out.weight")].tensor.fill(0.0f);
  p[*p.find("uro.out.bias")].tensor.fill(0.37f);
  Rng rng(32);
  for (int k = 0; k < 2; ++k) {
    const Tensor out = m.predict(random_tensor({1, 1, 8, 8}, rng, 0, 1));
    for (float v : out.storage()) EXPECT_EQ(v, 0.37f);
  }
}

TEST(Dsan, OddExtentRejectedWithHint) {
  const DsanModel m = DsanModel::create({4, 1}, 9);
  try {
    (void)m.predict(Tensor(Shape{1, 1, 9, 8}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos) << e.what();
  }
}

TEST(Dsan, ResolutionAgnostic) {
  const DsanModel m = DsanModel::create({4, 1}, 10);
  Rng rng(33);
  for (std::size_t s : {8u, 16u, 22u}) {
    const Tensor out = m.predict(random_tensor({1, 1, s, s}, rng, 0, 1));
    EXPECT_EQ(out.shape(), (Shape{1, 1, s, s}));
    EXPECT_TRUE(out.all_finite());
  }
}

TEST(Dsan, TapeAndEvaluatorAgree) {
  const DsanModel m = DsanModel::create({4, 1}, 11);
  Rng rng(34);
  const Tensor img = random_tensor({2, 1, 8, 8}, rng, 0, 1);
  Tape tape;
  const auto vars = bind_parameters(tape, m.params(), false);
  const Tensor via_tape = tape.value(m.forward(tape, vars, tape.constant(img)));
  EXPECT_EQ(via_tape, m.predict(img));
}

TEST(Dsan, ParameterEnumerationIsStable) {
  const DsanModel a = DsanModel::create({8, 1}, 1);
  const DsanModel b = DsanModel::create({8, 1}, 2);
  ASSERT_EQ(a.params().size(), b.params().size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].name, b.params()[i].name);
    EXPECT_EQ(a.params()[i].tensor.shape(), b.params()[i].tensor.shape());
    names.insert(a.params()[i].name);
  }
  EXPECT_EQ(names.size(), a.params().size());
  EXPECT_EQ(a.params()[0].name, "ifi.weight");
  EXPECT_EQ(a.params()[a.params().size() - 1].name, "uro.out.bias");
  EXPECT_EQ(a.params().meta().channel_width, 8u);
}

TEST(Dsan, SameSeedSameWeights) {
  EXPECT_EQ(DsanModel::create({4, 1}, 5).params(), DsanModel::create({4, 1}, 5).params());
  EXPECT_NE(DsanModel::create({4, 1}, 5).params(), DsanModel::create({4, 1}, 6).params());
}

TEST(Dsan, InitializationBoundsAndZeroBiases) {
  const DsanModel m = DsanModel::create({4, 1}, 12);
  for (const auto& e : m.params().entries()) {
    const Shape s = e.tensor.shape();
    if (e.name.ends_with("bias")) {
      for (float v : e.tensor.storage()) EXPECT_EQ(v, 0.0f) << e.name;
      continue;
    }
    double fan_in = double(s.c * s.h * s.w);
    if (e.name.find(".dcs") != std::string::npos) fan_in *= 2;
    if (e.name == "uro.up.weight") fan_in = double(s.n * s.h * s.w) / 4;
    const double bound = std::sqrt(3.0 / fan_in);
    for (float v : e.tensor.storage()) EXPECT_LE(std::abs(v), bound + 1e-7) << e.name;
  }
}

TEST(Dsan, FromParamsInfersConfigAndRejectsBrokenSets) {
  const DsanModel m = DsanModel::create({6, 3}, 13);
  const DsanModel back = DsanModel::from_params(m.params());
  EXPECT_EQ(back.config().channels, 6u);
  EXPECT_EQ(back.config().image_channels, 3u);

  ParamSet missing;
  for (std::size_t i = 0; i + 1 < m.params().size(); ++i) missing.add(m.params()[i].name, m.params()[i].tensor);
  EXPECT_THROW(DsanModel::from_params(missing), IncompatibleModels);
}

TEST(Dsan, SetParamsRequiresCompatibleSet) {
  DsanModel m = DsanModel::create({4, 1}, 14);
  EXPECT_THROW(m.set_params(DsanModel::create({6, 1}, 14).params()), IncompatibleModels);
  const ParamSet other = DsanModel::create({4, 1}, 15).params();
  m.set_params(other);
  EXPECT_EQ(m.params(), other);
}

}  // namespace
}  // namespace cei
