#include <gtest/gtest.h>

#include <cmath>

#include "orthoconv/core/errors.hpp"
#include "orthoconv/layers/layers.hpp"
#include "test_util.hpp"

using namespace orthoconv;
using namespace orthoconv::layers;
using testutil::flat;
using testutil::naive_conv;
using testutil::naive_matrix;
using testutil::random_map;
using testutil::random_tensor;
using testutil::singular_values;

namespace {

// Extreme singular values of the stored kernel's forward map on an n x n circular grid.
std::pair<double, double> circular_extremes(const Tensor4& k, int stride, int dilation, int groups, int n = 8) {
  ConvSpec sp;
  sp.with_stride(stride).with_dilation(dilation);
  sp.groups = groups;
  sp.padding_mode = PaddingMode::circular;
  sp.padding = same_padding(k.kh(), k.kw(), dilation, dilation);
  const Eigen::MatrixXd m = naive_matrix(k, sp, k.c_in() * groups, n, n);
  const Eigen::VectorXd s = singular_values(m);
  return {s(0), s(std::min(m.rows(), m.cols()) - 1)};
}

ConvSpec zero_full(const Tensor4& k) {
  ConvSpec sp;
  sp.padding = full_padding(k.kh(), k.kw());
  return sp;
}

}  // namespace

TEST(Fuse, DeltaIsIdentityElement) {
  std::mt19937_64 rng(1);
  const Tensor4 k = random_tensor(3, 2, 3, 3, rng);
  EXPECT_EQ(max_abs_diff(block_conv_fuse(k, Tensor4::delta(2)).values(), k.values()), 0.0);
  EXPECT_EQ(max_abs_diff(block_conv_fuse(Tensor4::delta(3), k).values(), k.values()), 0.0);
}

TEST(Fuse, OneByOneIsMatrixProduct) {
  std::mt19937_64 rng(2);
  const Tensor4 a = random_tensor(3, 4, 1, 1, rng);
  const Tensor4 b = random_tensor(4, 2, 1, 1, rng);
  const Tensor4 ab = block_conv_fuse(a, b);
  for (int o = 0; o < 3; ++o)
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int m = 0; m < 4; ++m) s += a(o, m, 0, 0) * b(m, c, 0, 0);
      EXPECT_NEAR(ab(o, c, 0, 0), s, 1e-15);
    }
}

TEST(Fuse, CompositionSingleChannelTwoByTwo) {
  std::mt19937_64 rng(3);
  const Tensor4 a = random_tensor(1, 1, 2, 2, rng);
  const Tensor4 b = random_tensor(1, 1, 2, 2, rng);
  const FeatureMap x = random_map(1, 6, 6, rng);
  const FeatureMap seq = naive_conv(naive_conv(x, b, zero_full(b)), a, zero_full(a));
  const Tensor4 f = block_conv_fuse(a, b);
  EXPECT_EQ(f.kh(), 3);
  const FeatureMap fused = naive_conv(x, f, zero_full(f));
  EXPECT_LT(max_abs_diff(seq.values(), fused.values()), 1e-10);
}

TEST(Fuse, CompositionStridedDilatedGrouped) {
  std::mt19937_64 rng(4);
  for (int g : {1, 2}) {
    for (int d : {1, 2}) {
      const Tensor4 inner = random_tensor(4, 4 / g, 3, 3, rng);
      const Tensor4 outer = random_tensor(6, 4 / g, 2, 2, rng);
      ConvSpec si;
      si.groups = g;
      si.with_dilation(d);
      si.padding = full_padding(3, 3, d, d);
      ConvSpec so = si;
      so.with_stride(2);
      so.padding = full_padding(2, 2, d, d);
      const FeatureMap x = random_map(4, 9, 9, rng);
      const FeatureMap seq = naive_conv(naive_conv(x, inner, si), outer, so);
      const Tensor4 f = block_conv_fuse(outer, inner, g);
      ConvSpec sf = so;
      sf.padding = full_padding(4, 4, d, d);
      const FeatureMap fused = naive_conv(x, f, sf);
      ASSERT_EQ(seq.dims(), fused.dims());
      EXPECT_LT(max_abs_diff(seq.values(), fused.values()), 1e-10) << "g=" << g << " d=" << d;
    }
  }
}

TEST(Fuse, ChannelMismatchThrows) {
  EXPECT_THROW(block_conv_fuse(Tensor4(2, 3, 1, 1), Tensor4(2, 2, 1, 1)), ShapeError);
}

TEST(Bcop, KernelOneIsOrthogonalMatrix) {
  Rng rng(5);
  const auto p = random_bcop_params(4, 1, rng);
  const Tensor4 k = bcop_kernel(p, 4, 1, {.method = dense::OrthoMethod::qr});
  EXPECT_EQ(k.kh(), 1);
  Eigen::MatrixXd m(4, 4);
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 4; ++i) m(o, i) = k(o, i, 0, 0);
  EXPECT_LT((m.transpose() * m - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-12);
}

TEST(Bcop, ElementaryProjectorKernelIsOrthogonal) {
  // [P | I - P] with P the projector onto a random plane in R^4.
  std::mt19937_64 rng(6);
  Eigen::MatrixXd u = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(4, 2)).householderQ();
  u = u.leftCols(2).eval();
  const Eigen::MatrixXd p = u * u.transpose();
  Tensor4 k(4, 4, 1, 2);
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 4; ++i) {
      k(o, i, 0, 0) = p(o, i);
      k(o, i, 0, 1) = (o == i ? 1.0 : 0.0) - p(o, i);
    }
  const auto [hi, lo] = circular_extremes(k, 1, 1, 1, 6);
  EXPECT_NEAR(hi, 1.0, 1e-12);
  EXPECT_NEAR(lo, 1.0, 1e-12);
}

TEST(Bcop, RandomThreeByThreeOrthogonal) {
  Rng rng(7);
  for (auto method : {dense::OrthoMethod::qr, dense::OrthoMethod::cayley, dense::OrthoMethod::bjorck}) {
    const auto p = random_bcop_params(4, 3, rng);
    const Tensor4 k = bcop_kernel(p, 4, 3, {.method = method});
    const auto [hi, lo] = circular_extremes(k, 1, 1, 1);
    EXPECT_NEAR(hi, 1.0, 1e-4) << dense::to_string(method);
    EXPECT_NEAR(lo, 1.0, 1e-4) << dense::to_string(method);
  }
}

TEST(Bcop, SingleChannelNeedsKernelOne) {
  Rng rng(8);
  EXPECT_THROW(bcop_kernel(random_bcop_params(1, 3, rng), 1, 3, {}), ShapeError);
}

TEST(Rko, StrideOneIsOrthogonalOneByOne) {
  Rng rng(9);
  const Tensor4 k = rko_kernel(random_rko_params(4, 4, 1, rng), 4, 4, 1, {.method = dense::OrthoMethod::qr});
  EXPECT_EQ(k.kh(), 1);
  const auto [hi, lo] = circular_extremes(k, 1, 1, 1);
  EXPECT_NEAR(hi, 1.0, 1e-12);
  EXPECT_NEAR(lo, 1.0, 1e-12);
}

TEST(Rko, PixelUnshuffleLikeBijection) {
  Rng rng(10);
  const Tensor4 k = rko_kernel(random_rko_params(1, 4, 2, rng), 1, 4, 2, {.method = dense::OrthoMethod::qr});
  ConvSpec sp;
  sp.with_stride(2);
  const Eigen::MatrixXd m = naive_matrix(k, sp, 1, 8, 8);
  ASSERT_EQ(m.rows(), m.cols());
  EXPECT_LT((m.transpose() * m - Eigen::MatrixXd::Identity(64, 64)).norm(), 1e-10);
}

TEST(Rko, CoIsometricWhenFewerOutputs) {
  Rng rng(11);
  const Tensor4 k = rko_kernel(random_rko_params(4, 4, 2, rng), 4, 4, 2, {.method = dense::OrthoMethod::qr});
  ConvSpec sp;
  sp.with_stride(2);
  const Eigen::MatrixXd m = naive_matrix(k, sp, 4, 8, 8);
  EXPECT_LT((m * m.transpose() - Eigen::MatrixXd::Identity(m.rows(), m.rows())).norm(), 1e-10);
}

TEST(Aoc, PureBcopPath) {
  Rng rng(12);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3};
  const Tensor4 k = aoc_kernel(random_aoc_params(cfg, rng), cfg);
  const auto [hi, lo] = circular_extremes(k, 1, 1, 1);
  EXPECT_NEAR(hi, 1.0, 1e-4);
  EXPECT_NEAR(lo, 1.0, 1e-4);
}

TEST(Aoc, PureRkoPath) {
  Rng rng(13);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 8, .kernel_size = 2, .stride = 2};
  const auto p = random_aoc_params(cfg, rng);
  const Tensor4 k = aoc_kernel(p, cfg);
  EXPECT_EQ(k.kh(), 2);
  // The BCOP factor is 1x1, so the kernel is the RKO kernel times an orthogonal matrix.
  ConvSpec sp;
  sp.with_stride(2);
  const Eigen::MatrixXd m = naive_matrix(k, sp, 4, 8, 8);
  EXPECT_LT((m * m.transpose() - Eigen::MatrixXd::Identity(m.rows(), m.rows())).norm(), 1e-10);
}

TEST(Aoc, StridedGroupedCircular) {
  Rng rng(14);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 8, .kernel_size = 3, .stride = 2, .groups = 2};
  const Tensor4 k = aoc_kernel(random_aoc_params(cfg, rng), cfg);
  ConvSpec sp = layer_spec(cfg, k);
  const Eigen::VectorXd s = singular_values(naive_matrix(k, sp, 4, 8, 8));
  EXPECT_LT(s.maxCoeff(), 1 + 1e-4);
  EXPECT_GT(s.minCoeff(), 1 - 1e-4);
}

TEST(Aoc, DilationPreservesOrthogonality) {
  Rng rng(15);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3, .dilation = 2};
  const Tensor4 k = aoc_kernel(random_aoc_params(cfg, rng), cfg);
  const auto [hi, lo] = circular_extremes(k, 1, 2, 1);
  EXPECT_NEAR(hi, 1.0, 1e-4);
  EXPECT_NEAR(lo, 1.0, 1e-4);
}

TEST(Aoc, RejectsKernelSmallerThanStride) {
  Rng rng(16);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 1, .stride = 2};
  EXPECT_THROW(aoc_kernel(random_aoc_params(cfg, rng), cfg), ConfigError);
}

TEST(Aoc, ConstructionIsDeterministic) {
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 8, .kernel_size = 3, .stride = 2, .groups = 2};
  Rng a(17), b(17);
  const Tensor4 ka = aoc_kernel(random_aoc_params(cfg, a), cfg);
  const Tensor4 kb = aoc_kernel(random_aoc_params(cfg, b), cfg);
  EXPECT_EQ(max_abs_diff(ka.values(), kb.values()), 0.0);
}

TEST(Aoc, TransposedLayerIsAdjointOfStoredForward) {
  Rng rng(18);
  const ConvLayerConfig cfg{.c_in = 8, .c_out = 4, .kernel_size = 3, .stride = 2, .transposed = true,
                            .padding_mode = PaddingMode::zero};
  const Tensor4 k = aoc_kernel(random_aoc_params(cfg, rng), cfg);
  EXPECT_EQ(k.c_out(), 8);
  EXPECT_EQ(k.c_in(), 4);
  const ConvLayer layer = make_aoc_layer(random_aoc_params(cfg, rng), cfg);
  const FeatureMap x = random_map(8, 4, 4, rng);
  const FeatureMap y = layer.forward(x);
  EXPECT_EQ(y.channels(), 4);
  EXPECT_EQ(y.height(), 8);
}

TEST(Skew, AntisymmetricUnderAdjoint) {
  std::mt19937_64 rng(19);
  for (int k : {2, 3}) {
    const Tensor4 s = skew_symmetrize(random_tensor(4, 4, k, k, rng));
    EXPECT_EQ(s.kh() % 2, 1);
    const Tensor4 adj = adjoint_kernel(s);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.values()[i], -adj.values()[i], 1e-15);
  }
}

TEST(Skew, SymmetricKernelVanishes) {
  Tensor4 k(2, 2, 3, 3);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k(a, b, i, j) = 1.0 + (i - 1) * (i - 1) + (j - 1) * (j - 1) + a + b;
  const Tensor4 s = skew_symmetrize(k);
  EXPECT_EQ(s.frobenius_norm(), 0.0);
  const ConvLayerConfig cfg{.c_in = 2, .c_out = 2, .kernel_size = 3};
  const Tensor4 e = soc_explicit_kernel({k, {}}, cfg);
  const Tensor4 d = Tensor4::delta(2, e.kh(), e.kw());
  EXPECT_EQ(max_abs_diff(e.values(), d.values()), 0.0);
}

TEST(Soc, ZeroKernelGivesDelta) {
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3};
  const Tensor4 e = soc_explicit_kernel({Tensor4(4, 4, 3, 3), {}}, cfg);
  EXPECT_EQ(max_abs_diff(e.values(), Tensor4::delta(4, e.kh(), e.kw()).values()), 0.0);
}

TEST(Soc, SeriesKernelSize) {
  std::mt19937_64 rng(20);
  for (int terms : {1, 3, 8}) {
    const Tensor4 g = soc_generator(random_tensor(4, 4, 3, 3, rng));
    EXPECT_EQ(soc_series_kernel(g, terms).kh(), terms * 2 + 1);
  }
}

TEST(Soc, GeneratorHasUnitAolBound) {
  std::mt19937_64 rng(21);
  const Tensor4 g = soc_generator(random_tensor(4, 4, 3, 3, rng));
  const auto d = aol_channel_bounds(g);
  EXPECT_NEAR(*std::max_element(d.begin(), d.end()), 1.0, 1e-12);
}

TEST(Soc, ExplicitMatchesImplicitSeries) {
  Rng rng(22);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3};
  const auto p = random_soc_params(cfg, rng);
  const Tensor4 e = soc_explicit_kernel(p, cfg);
  const Tensor4 g = soc_generator(p.kernel);
  const ConvSpec se = circular_same_spec(e);
  const ConvSpec sg = circular_same_spec(g);
  for (int t = 0; t < 10; ++t) {
    const FeatureMap x = random_map(4, 8, 8, rng);
    const FeatureMap a = conv2d_forward(x, e, se);
    const FeatureMap b = soc_implicit_apply(x, g, cfg.soc_terms, sg);
    EXPECT_LT((a - b).norm(), 1e-6 * b.norm());
  }
}

TEST(Soc, OrthogonalWithinTolerance) {
  Rng rng(23);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3};
  const Tensor4 e = soc_explicit_kernel(random_soc_params(cfg, rng), cfg);
  const auto [hi, lo] = circular_extremes(e, 1, 1, 1);
  EXPECT_NEAR(hi, 1.0, 5e-3);
  EXPECT_NEAR(lo, 1.0, 5e-3);
}

TEST(Soc, StridedChannelChangeUsesRko) {
  Rng rng(24);
  const ConvLayerConfig cfg{.c_in = 4, .c_out = 8, .kernel_size = 3, .stride = 2};
  const auto p = random_soc_params(cfg, rng);
  EXPECT_FALSE(p.rko.empty());
  const Tensor4 e = soc_explicit_kernel(p, cfg);
  const Eigen::VectorXd s = singular_values(naive_matrix(e, layer_spec(cfg, e), 4, 8, 8));
  EXPECT_LT(s.maxCoeff(), 1 + 5e-3);
  EXPECT_GT(s.minCoeff(), 1 - 5e-3);
}

TEST(Soc, RejectsZeroTerms) {
  Rng rng(25);
  ConvLayerConfig cfg{.c_in = 4, .c_out = 4, .kernel_size = 3};
  cfg.soc_terms = 0;
  EXPECT_THROW(soc_explicit_kernel(random_soc_params({.c_in = 4, .c_out = 4}, rng), cfg), ConfigError);
}
