#include <gtest/gtest.h>

#include <tuple>

#include "orthoconv/core/conv.hpp"
#include "orthoconv/core/errors.hpp"
#include "test_util.hpp"

using namespace orthoconv;
using testutil::flat;
using testutil::naive_conv;
using testutil::random_map;
using testutil::random_tensor;

TEST(Tensor, ShapeAndIndexing) {
  Tensor4 k(2, 3, 4, 5);
  EXPECT_EQ(k.size(), 120u);
  k(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(k.values().back(), 7.0);
  EXPECT_EQ(k.shape_string(), "(2, 3, 4, 5)");
  EXPECT_THROW(Tensor4(0, 1, 1, 1), ShapeError);
  EXPECT_THROW(Tensor4(1, 1, 2, 2, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, DeltaIsCenteredIdentity) {
  const Tensor4 d = Tensor4::delta(3, 3, 3);
  double total = 0.0;
  for (double v : d.values()) total += v;
  EXPECT_EQ(total, 3.0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(d(c, c, 1, 1), 1.0);
}

TEST(Conv, IdentityKernelOneByOne) {
  std::mt19937_64 rng(1);
  const FeatureMap x = random_map(1, 4, 4, rng);
  const FeatureMap y = conv2d_forward(x, Tensor4(1, 1, 1, 1, {1.0}), ConvSpec{});
  EXPECT_EQ(max_abs_diff(x.values(), y.values()), 0.0);
}

TEST(Conv, CenteredDeltaWithPaddingOne) {
  std::mt19937_64 rng(2);
  const FeatureMap x = random_map(1, 4, 4, rng);
  ConvSpec spec;
  spec.padding = {1, 1, 1, 1};
  const FeatureMap y = conv2d_forward(x, Tensor4::delta(1, 3, 3), spec);
  EXPECT_EQ(max_abs_diff(x.values(), y.values()), 0.0);
}

TEST(Conv, OnesKernelStrideTwo) {
  const FeatureMap x(1, 4, 4, std::vector<double>(16, 1.0));
  const Tensor4 k(1, 1, 2, 2, {1, 1, 1, 1});
  const FeatureMap y = conv2d_forward(x, k, ConvSpec{}.with_stride(2));
  ASSERT_EQ(y.height(), 2);
  ASSERT_EQ(y.width(), 2);
  for (double v : y.values()) EXPECT_EQ(v, 4.0);
}

TEST(Conv, TransposedIdentityAndUpsampling) {
  std::mt19937_64 rng(3);
  const FeatureMap x = random_map(1, 3, 3, rng);
  ConvSpec spec;
  spec.transposed = true;
  const FeatureMap same = conv_transpose2d_forward(x, Tensor4(1, 1, 1, 1, {1.0}), spec);
  EXPECT_EQ(max_abs_diff(x.values(), same.values()), 0.0);

  spec.with_stride(2);
  const FeatureMap ones(1, 2, 2, std::vector<double>(4, 1.0));
  const FeatureMap up = conv_transpose2d_forward(ones, Tensor4(1, 1, 2, 2, {1, 1, 1, 1}), spec);
  ASSERT_EQ(up.height(), 4);
  ASSERT_EQ(up.width(), 4);
  for (double v : up.values()) EXPECT_EQ(v, 1.0);
}

TEST(Conv, CircularTransposedRejected) {
  ConvSpec spec;
  spec.transposed = true;
  spec.padding_mode = PaddingMode::circular;
  EXPECT_THROW(spec.validate(), ConfigError);
  const FeatureMap x(1, 3, 3);
  EXPECT_THROW(apply_conv(x, Tensor4(1, 1, 1, 1, {1.0}), spec), ConfigError);
}

TEST(Conv, ShapeMismatchThrows) {
  const FeatureMap x(3, 4, 4);
  EXPECT_THROW(conv2d_forward(x, Tensor4(2, 2, 1, 1), ConvSpec{}), ShapeError);
}

// (kernel, stride, dilation, groups, padding mode, c_in, c_out)
using ConvCase = std::tuple<int, int, int, int, PaddingMode, int, int>;

class ConvAgainstOracle : public ::testing::TestWithParam<ConvCase> {
 protected:
  ConvSpec spec() const {
    const auto [k, s, d, g, mode, ci, co] = GetParam();
    ConvSpec sp;
    sp.with_stride(s).with_dilation(d);
    sp.groups = g;
    sp.padding_mode = mode;
    sp.padding = same_padding(k, k, d, d);
    return sp;
  }
  Tensor4 kernel(std::mt19937_64& rng) const {
    const auto [k, s, d, g, mode, ci, co] = GetParam();
    return random_tensor(co, ci / g, k, k, rng);
  }
  int c_in() const { return std::get<5>(GetParam()); }
};

TEST_P(ConvAgainstOracle, ForwardMatchesSlidingWindow) {
  std::mt19937_64 rng(11);
  const Tensor4 k = kernel(rng);
  const FeatureMap x = random_map(c_in(), 7, 6, rng);
  const FeatureMap y = conv2d_forward(x, k, spec());
  const FeatureMap ref = naive_conv(x, k, spec());
  ASSERT_EQ(y.dims(), ref.dims());
  EXPECT_LT(max_abs_diff(y.values(), ref.values()), 1e-12);
}

TEST_P(ConvAgainstOracle, AdjointIdentity) {
  std::mt19937_64 rng(12);
  const Tensor4 k = kernel(rng);
  const ConvSpec sp = spec();
  const MapShape in{c_in(), 8, 8};
  const FeatureMap x = random_map(in.channels, in.height, in.width, rng);
  const MapShape out = conv_output_shape(k, sp, in);
  const FeatureMap y = random_map(out.channels, out.height, out.width, rng);
  const double lhs = dot(conv2d_forward(x, k, sp), y);
  const double rhs = dot(x, conv2d_adjoint(y, k, sp, in));
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST_P(ConvAgainstOracle, ToeplitzReproducesForward) {
  std::mt19937_64 rng(13);
  const Tensor4 k = kernel(rng);
  const ConvSpec sp = spec();
  const MapShape in{c_in(), 6, 6};
  const Eigen::MatrixXd m = toeplitz_assemble(k, sp, in, 2);
  for (int t = 0; t < 5; ++t) {
    const FeatureMap x = random_map(in.channels, in.height, in.width, rng);
    const Eigen::VectorXd ref = flat(conv2d_forward(x, k, sp));
    EXPECT_LT((m * flat(x) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(
    Grid, ConvAgainstOracle,
    ::testing::Combine(::testing::Values(1, 2, 3), ::testing::Values(1, 2), ::testing::Values(1, 2),
                       ::testing::Values(1, 2), ::testing::Values(PaddingMode::zero, PaddingMode::circular),
                       ::testing::Values(2), ::testing::Values(4)));

TEST(Conv, TransposedIsAdjointOfForward) {
  std::mt19937_64 rng(21);
  for (int s : {1, 2, 3}) {
    for (int g : {1, 2}) {
      const Tensor4 k = random_tensor(4, 2 / g * 1, 3, 3, rng);
      ConvSpec sp;
      sp.with_stride(s).with_dilation(s == 1 ? 2 : 1);
      sp.groups = g;
      sp.padding = {1, 2, 0, 1};
      const MapShape in{2, 9, 8};
      const FeatureMap x = random_map(2, 9, 8, rng);
      const MapShape out = conv_output_shape(k, sp, in);
      const FeatureMap y = random_map(out.channels, out.height, out.width, rng);
      ConvSpec tr = sp;
      tr.transposed = true;
      tr.output_padding_h = (in.height + 3 - (sp.dilation_h * 2 + 1)) % s;
      tr.output_padding_w = (in.width + 1 - (sp.dilation_w * 2 + 1)) % s;
      const FeatureMap xt = conv_transpose2d_forward(y, k, tr);
      ASSERT_EQ(shape_of(xt), in);
      EXPECT_NEAR(dot(conv2d_forward(x, k, sp), y), dot(x, xt), 1e-10);
    }
  }
}

TEST(Toeplitz, OneByOneIsScaledIdentity) {
  const Eigen::MatrixXd m = toeplitz_assemble(Tensor4(1, 1, 1, 1, {2.5}), ConvSpec{}, {1, 2, 2});
  EXPECT_TRUE(m.isApprox(2.5 * Eigen::MatrixXd::Identity(4, 4)));
}

TEST(Toeplitz, ZeroPaddingMatchesOracleOnTwentyInputs) {
  std::mt19937_64 rng(31);
  const Tensor4 k = random_tensor(1, 1, 3, 3, rng);
  ConvSpec sp;
  sp.padding = {1, 1, 1, 1};
  const Eigen::MatrixXd m = toeplitz_assemble(k, sp, {1, 4, 4});
  for (int t = 0; t < 20; ++t) {
    const FeatureMap x = random_map(1, 4, 4, rng);
    EXPECT_LT((m * flat(x) - flat(naive_conv(x, k, sp))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Toeplitz, StrideTwoRowCount) {
  std::mt19937_64 rng(32);
  const Tensor4 k = random_tensor(3, 2, 3, 3, rng);
  ConvSpec sp;
  sp.with_stride(2);
  sp.padding = same_padding(3, 3);
  for (int n : {4, 5, 7}) {
    const Eigen::MatrixXd m = toeplitz_assemble(k, sp, {2, n, n});
    const int q = (n + 1) / 2;
    EXPECT_EQ(m.rows(), 3 * q * q);
  }
}

TEST(Toeplitz, TransposedIsTransposeOfForward) {
  std::mt19937_64 rng(33);
  const Tensor4 k = random_tensor(4, 2, 3, 3, rng);
  ConvSpec sp;
  sp.with_stride(2);
  sp.padding = {1, 1, 1, 1};
  const MapShape in{2, 7, 7};
  const Eigen::MatrixXd f = toeplitz_assemble(k, sp, in);
  ConvSpec tr = sp;
  tr.transposed = true;
  const MapShape out = conv_output_shape(k, sp, in);
  const Eigen::MatrixXd t = toeplitz_assemble(k, tr, out);
  EXPECT_LT((f.transpose() - t).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Toeplitz, DeterministicAcrossThreadCounts) {
  std::mt19937_64 rng(34);
  const Tensor4 k = random_tensor(4, 4, 3, 3, rng);
  ConvSpec sp;
  sp.padding_mode = PaddingMode::circular;
  sp.padding = same_padding(3, 3);
  const Eigen::MatrixXd a = toeplitz_assemble(k, sp, {4, 6, 6}, 1);
  const Eigen::MatrixXd b = toeplitz_assemble(k, sp, {4, 6, 6}, 4);
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adjoint, KernelAndSpecReproduceAdjoint) {
  std::mt19937_64 rng(41);
  for (auto mode : {PaddingMode::zero, PaddingMode::circular}) {
    for (int k : {2, 3}) {
      const Tensor4 kern = random_tensor(4, 2, k, k, rng);
      ConvSpec sp;
      sp.groups = 2;
      sp.padding_mode = mode;
      sp.with_dilation(2);
      sp.padding = same_padding(k, k, 2, 2);
      const MapShape in{4, 6, 6};
      const FeatureMap y = random_map(4, 6, 6, rng);
      const FeatureMap ref = conv2d_adjoint(y, kern, sp, in);
      const FeatureMap got = conv2d_forward(y, adjoint_kernel(kern, 2), adjoint_spec(kern, sp));
      ASSERT_EQ(ref.dims(), got.dims());
      EXPECT_LT(max_abs_diff(ref.values(), got.values()), 1e-12);
    }
  }
}
