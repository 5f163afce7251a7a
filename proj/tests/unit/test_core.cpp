#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "seqflow/core/adam.hpp"
#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/mlp.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/core/time_embed.hpp"

using namespace seqflow;

namespace {

MlpConfig small_config(std::size_t in, std::vector<std::size_t> hidden, std::size_t out, Activation act = Activation::tanh) {
  MlpConfig c;
  c.input_dim = in;
  c.hidden_dims = std::move(hidden);
  c.output_dim = out;
  c.activation = act;
  return c;
}

// Straight-line reference forward pass written against the documented layout:
// per layer, W (fan_out x fan_in, row-major) then b.
VectorD reference_forward(const VectorD& p, const MlpConfig& c, const VectorD& x) {
  std::vector<std::size_t> dims{c.input_dim};
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  dims.push_back(c.output_dim);
  std::vector<double> h(x.data(), x.data() + x.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    std::vector<double> z(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = p[static_cast<Eigen::Index>(off + in * out + i)];
      for (std::size_t j = 0; j < in; ++j) s += p[static_cast<Eigen::Index>(off + i * in + j)] * h[j];
      const bool last = l + 2 == dims.size();
      if (last) {
        z[i] = s;
      } else if (c.activation == Activation::tanh) {
        z[i] = std::tanh(s);
      } else {
        z[i] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
      }
    }
    off += in * out + out;
    h = z;
  }
  return Eigen::Map<VectorD>(h.data(), static_cast<Eigen::Index>(h.size()));
}

double max_rel_err(const VectorD& a, const VectorD& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST(Mlp, ZeroNetGivesZeroOutput) {
  const auto c = small_config(4, {8, 8}, 3);
  const VectorD p = VectorD::Zero(static_cast<Eigen::Index>(param_count(c)));
  const VectorD y = mlp_forward(p, c, VectorD(VectorD::Constant(4, 2.5)));
  EXPECT_TRUE(y.isZero(0.0));
}

TEST(Mlp, SingleLinearLayerIdentity) {
  const auto c = small_config(3, {}, 3);
  VectorD p = VectorD::Zero(static_cast<Eigen::Index>(param_count(c)));
  for (int i = 0; i < 3; ++i) p[i * 3 + i] = 1.0;
  const VectorD v = (VectorD(3) << 0.5, -2.0, 7.25).finished();
  EXPECT_EQ(mlp_forward(p, c, v), v);
}

TEST(Mlp, ParamCountDependsOnlyOnConfig) {
  const auto c = small_config(5, {7, 3}, 2);
  EXPECT_EQ(param_count(c), 5u * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2);
}

TEST(Mlp, MatchesReferenceImplementation) {
  for (auto act : {Activation::tanh, Activation::gelu}) {
    const auto c = small_config(6, {16, 9}, 4, act);
    Rng rng(42);
    const VectorD p = init_params<double>(c, rng);
    const VectorD x = rng.normal_vector<double>(6);
    EXPECT_LT((mlp_forward(p, c, x) - reference_forward(p, c, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, InitWithinFanInBounds) {
  const auto c = small_config(16, {32}, 2);
  Rng rng(1);
  const VectorD p = init_params<double>(c, rng);
  const auto layers = layer_layout(c);
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
    for (std::size_t i = l.weight_offset; i < l.bias_offset + l.fan_out; ++i) EXPECT_LE(std::abs(p[static_cast<Eigen::Index>(i)]), bound);
  }
}

TEST(Mlp, DimensionErrorNamesSizes) {
  const auto c = small_config(3, {4}, 2);
  const VectorD p = VectorD::Zero(static_cast<Eigen::Index>(param_count(c)));
  try {
    mlp_forward(p, c, VectorD(VectorD::Zero(5)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.expected(), 3u);
    EXPECT_EQ(e.actual(), 5u);
  }
}

TEST(Mlp, NonFiniteOutputRaises) {
  const auto c = small_config(2, {3}, 1);
  VectorD p = VectorD::Zero(static_cast<Eigen::Index>(param_count(c)));
  p[p.size() - 1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(mlp_forward(p, c, VectorD(VectorD::Zero(2))), NumericError);
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
  const auto c = small_config(3, {5}, 2);
  Rng rng(3);
  const VectorD p = init_params<double>(c, rng);
  const auto g = mlp_backward(p, c, rng.normal_vector<double>(3), VectorD(VectorD::Zero(2)));
  EXPECT_TRUE(g.params.isZero(0.0));
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(MlpBackward, LinearLayerClosedForm) {
  const auto c = small_config(3, {}, 2);
  Rng rng(4);
  const VectorD p = init_params<double>(c, rng);
  const VectorD x = (VectorD(3) << 1.0, -2.0, 0.5).finished();
  const VectorD u = (VectorD(2) << 3.0, -1.0).finished();
  const auto g = mlp_backward(p, c, x, u);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(g.params[i * 3 + j], u[i] * x[j]);
    EXPECT_DOUBLE_EQ(g.params[6 + i], u[i]);
  }
}

// Central differences of <u, f(theta, x)> in 64-bit for random shapes.
TEST(MlpBackward, MatchesFiniteDifferences) {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> hidden(1 + rng.below(3));
    for (auto& h : hidden) h = 2 + rng.below(7);
    const auto c = small_config(1 + rng.below(5), hidden, 1 + rng.below(4), trial % 2 ? Activation::gelu : Activation::tanh);
    const VectorD p = init_params<double>(c, rng);
    const VectorD x = rng.normal_vector<double>(static_cast<Eigen::Index>(c.input_dim));
    const VectorD u = rng.normal_vector<double>(static_cast<Eigen::Index>(c.output_dim));
    const auto g = mlp_backward(p, c, x, u);
    const double h = 1e-6;
    VectorD fd_p(p.size()), fd_x(x.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      VectorD pp = p, pm = p;
      pp[i] += h;
      pm[i] -= h;
      fd_p[i] = (u.dot(mlp_forward(pp, c, x)) - u.dot(mlp_forward(pm, c, x))) / (2 * h);
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      VectorD xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd_x[i] = (u.dot(mlp_forward(p, c, xp)) - u.dot(mlp_forward(p, c, xm))) / (2 * h);
    }
    worst = std::max({worst, max_rel_err(g.params, fd_p), max_rel_err(g.input, fd_x)});
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(MlpBackward, BatchGradientIsSumOfSingles) {
  const auto c = small_config(3, {6}, 2, Activation::gelu);
  Rng rng(5);
  const VectorD p = init_params<double>(c, rng);
  MatrixD x(4, 3), u(4, 2);
  for (Eigen::Index i = 0; i < 4; ++i) {
    x.row(i) = rng.normal_vector<double>(3).transpose();
    u.row(i) = rng.normal_vector<double>(2).transpose();
  }
  MlpTape<double> tape;
  mlp_forward_batch(p, c, x, &tape);
  VectorD batch = VectorD::Zero(p.size());
  mlp_backward_batch(p, c, tape, u, batch);
  VectorD sum = VectorD::Zero(p.size());
  for (Eigen::Index i = 0; i < 4; ++i) sum += mlp_backward(p, c, VectorD(x.row(i).transpose()), VectorD(u.row(i).transpose())).params;
  EXPECT_LT((batch - sum).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParams) {
  auto s = OptimizerState<double>::zeros(3);
  const VectorD p = (VectorD(3) << 1, 2, 3).finished();
  auto [s2, p2] = adam_step(s, p, VectorD(VectorD::Zero(3)));
  EXPECT_EQ(p2, p);
  EXPECT_EQ(s2.step, 1u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  auto s = OptimizerState<double>::zeros(3, 1e-3);
  const VectorD p = VectorD::Zero(3);
  const VectorD g = (VectorD(3) << 0.7, -3.0, 1e-2).finished();
  auto [s2, p2] = adam_step(s, p, g);
  for (int i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    const double expected = -1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p2[i], expected, 1e-15);
  }
}

TEST(Adam, DescendsQuadratic) {
  auto s = OptimizerState<double>::zeros(1, 1e-2);
  VectorD p = VectorD::Constant(1, 3.0);
  double prev = p[0];
  for (int k = 0; k < 200; ++k) {
    adam_update(s, p, VectorD(VectorD::Constant(1, 2.0 * p[0])));
    EXPECT_LT(p[0], prev);
    prev = p[0];
  }
  EXPECT_LT(p[0], 1.5);
}

TEST(Adam, NonFiniteGradientNamesIndex) {
  auto s = OptimizerState<double>::zeros(4);
  VectorD p = VectorD::Zero(4);
  VectorD g = VectorD::Zero(4);
  g[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_update(s, p, g);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 2);
    EXPECT_EQ(s.step, 0u);
  }
}

TEST(TimeEmbed, ZeroTimeIsSinZeroCosOne) {
  const auto v = time_embed(0.0, 8);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(v[k], 0.0);
    EXPECT_EQ(v[4 + k], 1.0);
  }
}

TEST(TimeEmbed, HandComputedValues) {
  // half = 2: w_0 = 1000, w_1 = 1000 * 1e4^(-1/2) = 10.
  const auto v = time_embed(0.5, 4);
  EXPECT_NEAR(v[0], std::sin(500.0), 1e-12);
  EXPECT_NEAR(v[1], std::sin(5.0), 1e-12);
  EXPECT_NEAR(v[2], std::cos(500.0), 1e-12);
  EXPECT_NEAR(v[3], std::cos(5.0), 1e-12);
}

TEST(TimeEmbed, DeterministicAndRangeChecked) {
  EXPECT_EQ(time_embed(0.37, 16), time_embed(0.37, 16));
  EXPECT_THROW(time_embed(1.01, 4), ValidationError);
  EXPECT_THROW(time_embed(-1e-9, 4), ValidationError);
}

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
  EXPECT_EQ(derive_seed(7, "data", 3), derive_seed(7, "data", 3));
  EXPECT_NE(derive_seed(7, "data", 3), derive_seed(7, "data", 4));
  EXPECT_NE(derive_seed(7, "data", 3), derive_seed(7, "init", 3));
  EXPECT_NE(derive_seed(7, "data", 3), derive_seed(8, "data", 3));
  Rng a(1, "x", 2), b(1, "x", 2);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Checkpoint, RoundTripIsExact) {
  Checkpoint ck;
  ck.config = small_config(5, {4}, 2);
  ck.config.time_embed_dim = 2;
  ck.meta.task = "toy";
  ck.meta.unit_dim = 2;
  ck.meta.horizon = 1;
  ck.meta.obs_dim = 1;
  ck.meta.window = 1;
  ck.meta.seed = 99;
  ck.meta.state_norm = {{0.5, -1.0}, {2.0, 3.0}};
  ck.meta.obs_norm = Normalization::identity(1);
  Rng rng(1);
  ck.params = init_params<float>(ck.config, rng);
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 4), "SFMC");
  EXPECT_EQ(static_cast<int>(bytes[4]), 1);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  Checkpoint ck;
  ck.config = small_config(2, {2}, 1);
  ck.meta.unit_dim = 1;
  ck.meta.obs_dim = 1;
  ck.meta.state_norm = Normalization::identity(1);
  ck.meta.obs_norm = Normalization::identity(1);
  ck.params = VectorF::Zero(static_cast<Eigen::Index>(param_count(ck.config)));
  auto bytes = encode_checkpoint(ck);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 4)), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
}

TEST(Matrix, RequireFiniteReportsRowMajorIndex) {
  MatrixD m = MatrixD::Zero(2, 3);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    require_finite(m, "m");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 3);
  }
}
