#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "cei/archive.hpp"
#include "cei/blend.hpp"
#include "cei/blocks.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cei {
namespace {

using test::random_dsan64;
using test::random_tensor;

ParamSet64 scalar_set(double v) {
  ParamSet64 p;
  p.add("w", Tensor64(Shape{1, 1, 1, 1}, v));
  return p;
}

double blended_scalar(BlendMode mode, double a, double b, double coeff) {
  return blend(scalar_set(a), scalar_set(b), BlendSpec{mode, coeff})[0].tensor[0];
}

TEST(Blend, ScalarExamples) {
  EXPECT_EQ(blended_scalar(BlendMode::Interpolate, 2, 4, 0.25), 3.5);
  EXPECT_EQ(blended_scalar(BlendMode::Forward, 2, 4, 0.5), 0.0);
  EXPECT_EQ(blended_scalar(BlendMode::ForwardTwoStep, 2, 4, 0.5), 5.0);
  // (4 - 0.5*2) / 0.5
  EXPECT_EQ(blended_scalar(BlendMode::Back, 2, 4, 0.5), 6.0);
  // (1.5*2 - 0.5*4) / 1
  EXPECT_EQ(blended_scalar(BlendMode::BackTwoStep, 2, 4, 0.5), 1.0);
}

TEST(Blend, EndpointIdentitiesBitExact) {
  const ParamSet64 a = random_dsan64(4, 1), b = random_dsan64(4, 2);
  EXPECT_EQ(interpolate(a, b, 1.0), a);
  EXPECT_EQ(interpolate(a, b, 0.0), b);
  EXPECT_EQ(extrapolate_onestep(a, b, BlendMode::Forward, 1.0), a);
  EXPECT_EQ(extrapolate_onestep(a, b, BlendMode::Back, 0.0), b);
  EXPECT_EQ(extrapolate_twostep(a, b, BlendMode::ForwardTwoStep, 1.0), b);
  EXPECT_EQ(extrapolate_twostep(a, b, BlendMode::BackTwoStep, 1.0), a);
}

TEST(Blend, EndpointIdentitiesSinglePrecision) {
  const ParamSet a = DsanModel::create({4, 1}, 1).params(), b = DsanModel::create({4, 1}, 2).params();
  EXPECT_EQ(interpolate(a, b, 1.0), a);
  EXPECT_EQ(interpolate(a, b, 0.0), b);
  EXPECT_EQ(extrapolate_twostep(a, b, BlendMode::ForwardTwoStep, 1.0), b);
}

TEST(Blend, InterpolationSymmetryBitExact) {
  const ParamSet64 a = random_dsan64(2, 3), b = random_dsan64(2, 4);
  Rng rng(5);
  std::vector<double> gammas{0.0, 0.1, 0.25, 0.3, 0.5, 0.7, 0.9, 1.0};
  for (int i = 0; i < 20; ++i) gammas.push_back(rng.uniform());
  for (double g : gammas) EXPECT_EQ(interpolate(a, b, g), interpolate(b, a, 1.0 - g)) << "gamma " << g;
}

TEST(Blend, InterpolationWeightsSumToOne) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double g = rng.uniform();
    const auto [wa, wb] = interpolation_weights(g);
    EXPECT_EQ(wa + wb, 1.0);
    EXPECT_LE(std::abs(wa - g), 0x1p-53);
    const auto [sa, sb] = interpolation_weights(1.0 - g);
    EXPECT_EQ(sa, wb);
    EXPECT_EQ(sb, wa);
  }
}

TEST(Blend, InterpolationIsAffineInGamma) {
  const ParamSet64 a = random_dsan64(2, 7), b = random_dsan64(2, 8);
  auto dist = [](const ParamSet64& x, const ParamSet64& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < x[i].tensor.size(); ++k) {
        const double d = x[i].tensor[k] - y[i].tensor[k];
        s += d * d;
      }
    return std::sqrt(s);
  };
  const double ab = dist(a, b);
  for (auto [g1, g2] : {std::pair{0.1, 0.6}, std::pair{0.0, 1.0}, std::pair{0.33, 0.34}}) {
    EXPECT_NEAR(dist(interpolate(a, b, g1), interpolate(a, b, g2)), std::abs(g1 - g2) * ab, 1e-12 * ab);
  }
}

TEST(Blend, TwoStepEqualsOneStepThroughMidpoint) {
  const ParamSet64 a = random_dsan64(2, 9), b = random_dsan64(2, 10);
  const ParamSet64 mid = interpolate(a, b, 0.5);
  for (int k = 1; k <= 10; ++k) {
    const double c = k / 10.0;
    const ParamSet64 fts = extrapolate_twostep(a, b, BlendMode::ForwardTwoStep, c);
    const ParamSet64 via_b = extrapolate_onestep(b, mid, BlendMode::Forward, c);
    const ParamSet64 bts = extrapolate_twostep(a, b, BlendMode::BackTwoStep, c);
    const ParamSet64 via_a = extrapolate_onestep(a, mid, BlendMode::Forward, c);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_LT(test::rel_error(fts[i].tensor, via_b[i].tensor), 1e-6) << a[i].name;
      EXPECT_LT(test::rel_error(bts[i].tensor, via_a[i].tensor), 1e-6) << a[i].name;
    }
  }
}

// Blended parameters give per-layer outputs that are the same affine combination
// of the outputs under A and B.
TEST(Blend, AffineConsistencyPerLayer) {
  Rng rng(11);
  const std::vector<std::pair<BlendMode, double>> cases{{BlendMode::Interpolate, 0.3},
                                                        {BlendMode::Forward, 0.4},
                                                        {BlendMode::Back, 0.6},
                                                        {BlendMode::ForwardTwoStep, 0.25},
                                                        {BlendMode::BackTwoStep, 0.8}};
  for (const auto& [mode, k] : cases) {
    ParamSet64 a, b;
    a.add("w", random_tensor<double>({3, 2, 3, 3}, rng));
    a.add("b", random_tensor<double>({1, 3, 1, 1}, rng));
    b.add("w", random_tensor<double>({3, 2, 3, 3}, rng));
    b.add("b", random_tensor<double>({1, 3, 1, 1}, rng));
    const ParamSet64 v = blend(a, b, BlendSpec{mode, k});
    // Coefficients of A and B implied by the mode.
    const double ca = blend_value(1.0, 0.0, BlendSpec{mode, k});
    const double cb = blend_value(0.0, 1.0, BlendSpec{mode, k});
    EXPECT_NEAR(ca + cb, 1.0, 1e-12);
    const Tensor64 x = random_tensor<double>({1, 2, 7, 7}, rng);
    const ConvGeometry g{1, 1, 1};
    const Tensor64 ya = kernels::conv2d(x, a[0].tensor, &a[1].tensor, g);
    const Tensor64 yb = kernels::conv2d(x, b[0].tensor, &b[1].tensor, g);
    const Tensor64 yv = kernels::conv2d(x, v[0].tensor, &v[1].tensor, g);
    Tensor64 mix(ya.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = ca * ya[i] + cb * yb[i];
    EXPECT_LT(test::rel_error(yv, mix), 1e-10) << mode_short_name(mode);
  }
}

TEST(Blend, MetadataCopied) {
  const ParamSet a = DsanModel::create({4, 1}, 1).params(), b = DsanModel::create({4, 1}, 2).params();
  const ParamSet v = interpolate(a, b, 0.4);
  EXPECT_EQ(v.meta(), a.meta());
  EXPECT_TRUE(compat_check(v, a).compatible);
}

TEST(Blend, CoefficientFloor) {
  const ParamSet64 a = scalar_set(1), b = scalar_set(2);
  try {
    extrapolate_onestep(a, b, BlendMode::Forward, 0.01);
    FAIL() << "expected CoefficientError";
  } catch (const CoefficientError& e) {
    EXPECT_NE(std::string(e.what()).find("floor 0.05"), std::string::npos) << e.what();
  }
  EXPECT_THROW(extrapolate_onestep(a, b, BlendMode::Back, 0.99), CoefficientError);
  EXPECT_NO_THROW(extrapolate_onestep(a, b, BlendMode::Back, 0.95));
  EXPECT_THROW(extrapolate_twostep(a, b, BlendMode::ForwardTwoStep, 0.0), CoefficientError);
  EXPECT_THROW(extrapolate_twostep(a, b, BlendMode::BackTwoStep, 0.04), CoefficientError);
  EXPECT_THROW(interpolate(a, b, 1.5), CoefficientError);
  EXPECT_THROW(interpolate(a, b, -0.1), CoefficientError);
  EXPECT_THROW(interpolate(a, b, std::nan("")), CoefficientError);
  EXPECT_NO_THROW(extrapolate_onestep(a, b, BlendMode::Forward, 0.01, 0.01));
}

TEST(Blend, ModeNames) {
  for (BlendMode m : {BlendMode::Interpolate, BlendMode::Forward, BlendMode::Back, BlendMode::ForwardTwoStep,
                      BlendMode::BackTwoStep}) {
    EXPECT_EQ(parse_blend_mode(mode_short_name(m)), m);
  }
  EXPECT_EQ(parse_blend_mode("forward_ts"), BlendMode::ForwardTwoStep);
  EXPECT_FALSE(parse_blend_mode("x").has_value());
  EXPECT_EQ(BlendSpec(BlendMode::Forward, 0.5).formula(), "V = (A - (1-0.5)*B) / 0.5");
}

TEST(Compat, IdenticalArchitecturesPass) {
  const CompatReport r = compat_check(DsanModel::create({8, 1}, 1).params(), DsanModel::create({8, 1}, 2).params());
  EXPECT_TRUE(r.compatible);
  EXPECT_EQ(r.first_mismatch(), "");
}

TEST(Compat, DifferentWidthNamesFirstEntry) {
  const ParamSet a = DsanModel::create({16, 1}, 1).params(), b = DsanModel::create({24, 1}, 1).params();
  const CompatReport r = compat_check(a, b);
  EXPECT_FALSE(r.compatible);
  EXPECT_NE(r.first_mismatch().find("ifi.weight"), std::string::npos) << r.first_mismatch();
  // Every entry but the final (image channels) bias differs.
  EXPECT_EQ(r.diffs.size(), a.size() - 1);
  try {
    interpolate(a, b, 0.5);
    FAIL() << "expected IncompatibleModels";
  } catch (const IncompatibleModels& e) {
    EXPECT_NE(std::string(e.what()).find("ifi.weight"), std::string::npos) << e.what();
  }
}

TEST(Compat, OrderMatters) {
  const ParamSet a = DsanModel::create({4, 1}, 1).params();
  ParamSet reordered;
  reordered.add(a[1].name, a[1].tensor);
  reordered.add(a[0].name, a[0].tensor);
  for (std::size_t i = 2; i < a.size(); ++i) reordered.add(a[i].name, a[i].tensor);
  const CompatReport r = compat_check(a, reordered);
  EXPECT_FALSE(r.compatible);
  EXPECT_EQ(r.diffs.front().index, 0u);
  EXPECT_NE(r.describe().find("ifi.bias"), std::string::npos);
}

TEST(Compat, MissingEntryReported) {
  ParamSet a, b;
  a.add("x", Tensor(Shape{1, 1, 1, 2}));
  a.add("y", Tensor(Shape{1, 1, 1, 2}));
  b.add("x", Tensor(Shape{1, 1, 1, 2}));
  const CompatReport r = compat_check(a, b);
  EXPECT_FALSE(r.compatible);
  EXPECT_NE(r.first_mismatch().find("<missing>"), std::string::npos) << r.first_mismatch();
}

TEST(ParamSet, DuplicateNamesRejected) {
  ParamSet p;
  p.add("w", Tensor(Shape{1, 1, 1, 1}));
  EXPECT_THROW(p.add("w", Tensor(Shape{1, 1, 1, 1})), std::invalid_argument);
}

TEST(Archive, RoundTripBitIdentical) {
  test::TempDir dir("archive");
  const ParamSet p = DsanModel::create({8, 1}, 3).params();
  save_archive(p, dir / "m.cei");
  const ParamSet back = load_archive(dir / "m.cei");
  EXPECT_EQ(back.entries(), p.entries());
  EXPECT_EQ(encode_archive(back), encode_archive(p));
}

TEST(Archive, SpecialValuesSurvive) {
  ParamSet p;
  p.add("s", Tensor(Shape{1, 1, 1, 4}, std::vector<float>{-0.0f, 1e-40f, 3.4e38f, -1.5f}));
  const ParamSet back = decode_archive(encode_archive(p));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back[0].tensor[i]), std::bit_cast<std::uint32_t>(p[0].tensor[i]));
  }
}

TEST(Archive, LayoutIsLittleEndianWithCrc) {
  ParamSet p;
  p.add("ab", Tensor(Shape{1, 1, 1, 1}, 1.0f));
  const auto bytes = encode_archive(p);
  const std::vector<std::uint8_t> want_head{'C', 'E', 'I', '1', 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b',
                                            1,   0,   0,   0,   1, 0, 0, 0, 1, 0, 0, 0, 1,   0,
                                            0,   0,   0,   0,   0x80, 0x3f};
  ASSERT_EQ(bytes.size(), want_head.size() + 4);
  EXPECT_TRUE(std::equal(want_head.begin(), want_head.end(), bytes.begin()));
  const std::uint32_t crc = crc32(std::span(bytes).subspan(want_head.size() - 4, 4));
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
  EXPECT_EQ(stored, crc);
}

TEST(Archive, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

ArchiveError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_archive(bytes);
  } catch (const ArchiveError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "archive decoded without error";
  return ArchiveError::Kind::Io;
}

TEST(Archive, DistinctFailures) {
  const ParamSet p = DsanModel::create({4, 1}, 4).params();
  const auto good = encode_archive(p);

  auto flipped = good;
  flipped[good.size() - 100] ^= 0x01;
  EXPECT_EQ(decode_kind(flipped), ArchiveError::Kind::Checksum);

  auto version = good;
  version[3] = '2';
  EXPECT_EQ(decode_kind(version), ArchiveError::Kind::VersionMismatch);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), ArchiveError::Kind::BadMagic);

  EXPECT_EQ(decode_kind(std::vector<std::uint8_t>(good.begin(), good.end() - 7)), ArchiveError::Kind::Truncated);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_kind(trailing), ArchiveError::Kind::Malformed);
}

TEST(Archive, HugeExtentsRejectedWithoutOverflow) {
  ParamSet p;
  p.add("w", Tensor(Shape{1, 1, 1, 1}));
  auto bytes = encode_archive(p);
  // Shape extents start after magic, count, name length and the 1-byte name.
  for (std::size_t k = 0; k < 16; ++k) bytes[13 + k] = 0xff;
  EXPECT_EQ(decode_kind(bytes), ArchiveError::Kind::Truncated);
}

TEST(Archive, MissingFileIsIoError) {
  try {
    load_archive("/nonexistent/dir/model.cei");
    FAIL();
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.kind(), ArchiveError::Kind::Io);
  }
}

TEST(Archive, SameSeedSameBytes) {
  EXPECT_EQ(encode_archive(DsanModel::create({8, 1}, 42).params()),
            encode_archive(DsanModel::create({8, 1}, 42).params()));
}

}  // namespace
}  // namespace cei
