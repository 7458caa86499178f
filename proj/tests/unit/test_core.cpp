#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mda/error.hpp"
#include "mda/filters.hpp"
#include "mda/ops.hpp"
#include "oracles.hpp"

using namespace mda;

namespace {

using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

// Max relative error between backprop and central differences of
// sum(out ⊙ R) over every input coordinate.
double grad_error(const Fn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7, double h = 1e-5) {
  std::vector<ag::Var> vars;
  for (auto& t : inputs) vars.push_back(ag::Var::parameter(t));
  const Tensor probe_shape = f(vars).value();
  const Tensor r = oracle::random_tensor(probe_shape.shape(), seed);
  auto loss = [&](const std::vector<ag::Var>& v) { return ag::sum(ag::mul(f(v), ag::Var::constant(r))); };
  ag::backward(loss(vars));
  double worst = 0.0;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor g = vars[i].grad();
    for (std::size_t k = 0; k < g.size(); ++k) {
      double& x = vars[i].mutable_value()[k];
      const double num = oracle::central_difference(
          [&] {
            ag::NoGradGuard guard;
            return loss(vars).item();
          },
          x, h);
      worst = std::max(worst, oracle::relative_error(g[k], num, 1e-6));
    }
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.channels(), 2);
  EXPECT_EQ(t.height(), 3);
  EXPECT_EQ(t.width(), 4);
  t.at(1, 2, 3) = 7.0;
  EXPECT_EQ(t[23], 7.0);
  EXPECT_DOUBLE_EQ(t.sum(), 1.5 * 23 + 7.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Autograd, ChainRuleThroughSharedNode) {
  auto x = ag::Var::parameter(Tensor({1}, 3.0));
  auto y = ag::mul(x, x);
  auto z = ag::add(y, ag::scale(x, 2.0));
  ag::backward(z);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 2.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto x = ag::Var::parameter(Tensor({3}, 1.0));
  ag::Var y;
  {
    ag::NoGradGuard guard;
    y = ag::square(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Ops, ElementwiseGradients) {
  const auto a = oracle::random_tensor({2, 3, 3}, 1);
  const auto b = oracle::random_tensor({2, 3, 3}, 2, 0.5, 1.5);
  EXPECT_LT(grad_error([](auto& v) { return ag::add(v[0], v[1]); }, {a, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::sub(v[0], v[1]); }, {a, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::mul(v[0], v[1]); }, {a, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::div(v[0], v[1]); }, {a, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::sigmoid(v[0]); }, {a}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::tanh(v[0]); }, {a}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::square(v[0]); }, {a}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::mse(v[0], v[1]); }, {a, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::mean(v[0]); }, {a}), 1e-6);
}

TEST(Ops, PreluAndChannelGradients) {
  const auto x = oracle::random_tensor({3, 4, 4}, 3);
  const auto s = oracle::random_tensor({3}, 4, 0.1, 0.4);
  EXPECT_LT(grad_error([](auto& v) { return ag::prelu(v[0], v[1]); }, {x, s}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::mul_channel(v[0], v[1]); }, {x, s}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::gap(v[0]); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::gram(v[0]); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::slice_channels(v[0], 1, 2); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::concat_channels({v[0], v[0]}); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::crop(v[0], 1, 2, 2, 2); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::reshape(v[0], {48}); }, {x}), 1e-6);
}

TEST(Ops, SpatialGradients) {
  const auto x = oracle::random_tensor({2, 6, 6}, 5);
  EXPECT_LT(grad_error([](auto& v) { return ag::upsample_bilinear(v[0], 2); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::upsample_bilinear(v[0], 4); }, {x}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::maxpool2(v[0]); }, {x}), 1e-6);
  const Kernel g = gaussian_kernel(3, 1.0);
  for (Border b : {Border::Valid, Border::Zero, Border::Replicate})
    EXPECT_LT(grad_error([&](auto& v) { return ag::filter(v[0], g, b); }, {x}), 1e-6);
  const auto one = oracle::random_tensor({1, 6, 6}, 6, 0.0, 1.0);
  EXPECT_LT(grad_error([](auto& v) { return ag::replicate_normalize(v[0], {0.4, 0.5, 0.6}, {0.2, 0.25, 0.3}); },
                       {one}),
            1e-6);
}

TEST(Ops, LinearGradient) {
  const auto x = oracle::random_tensor({5}, 8), w = oracle::random_tensor({3, 5}, 9), b = oracle::random_tensor({3}, 10);
  EXPECT_LT(grad_error([](auto& v) { return ag::linear(v[0], v[1], v[2]); }, {x, w, b}), 1e-6);
}

TEST(Conv2d, MatchesDirectOracle) {
  for (int stride : {1, 2, 4})
    for (int k : {1, 3}) {
      const auto x = oracle::random_tensor({3, 12, 12}, 11 + stride);
      const auto w = oracle::random_tensor({4, 3, k, k}, 12 + k);
      const auto b = oracle::random_tensor({4}, 13);
      const Tensor got = ag::conv2d(ag::Var::constant(x), ag::Var::constant(w), ag::Var::constant(b), stride, k / 2).value();
      const Tensor want = oracle::conv2d(x, w, &b, stride, k / 2);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Conv2d, LargeInputChunkedMatchesOracle) {
  const auto x = oracle::random_tensor({8, 70, 70}, 21);
  const auto w = oracle::random_tensor({5, 8, 3, 3}, 22);
  const Tensor got = ag::conv2d(ag::Var::constant(x), ag::Var::constant(w), {}, 1, 1).value();
  const Tensor want = oracle::conv2d(x, w, nullptr, 1, 1);
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-11);
}

TEST(Conv2d, Gradients) {
  const auto x = oracle::random_tensor({2, 5, 5}, 14);
  const auto w = oracle::random_tensor({3, 2, 3, 3}, 15);
  const auto b = oracle::random_tensor({3}, 16);
  EXPECT_LT(grad_error([](auto& v) { return ag::conv2d(v[0], v[1], v[2], 1, 1); }, {x, w, b}), 1e-6);
  EXPECT_LT(grad_error([](auto& v) { return ag::conv2d(v[0], v[1], v[2], 2, 1); }, {x, w, b}), 1e-6);
}

TEST(Conv2d, ChannelMismatchThrows) {
  auto x = ag::Var::constant(Tensor({2, 4, 4}));
  auto w = ag::Var::constant(Tensor({1, 3, 3, 3}));
  EXPECT_THROW(ag::conv2d(x, w, {}, 1, 1), ShapeError);
}

TEST(Filters, KernelNormalization) {
  const Kernel g = gaussian_kernel(11, 1.5);
  EXPECT_NEAR(std::accumulate(g.taps.begin(), g.taps.end(), 0.0), 1.0, 1e-14);
  const auto want = oracle::gaussian(11, 1.5);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(g.taps[i], want[i], 1e-15);
  const Kernel l = log_kernel(7, 1.0);
  EXPECT_NEAR(std::accumulate(l.taps.begin(), l.taps.end(), 0.0), 0.0, 1e-14);
  EXPECT_LT(l(3, 3), 0.0);
  EXPECT_THROW(gaussian_kernel(4, 1.0), PreconditionError);
}

TEST(Filters, LogOfLinearRampIsZeroInside) {
  const int h = 20, w = 20;
  std::vector<double> ramp(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp[y * w + x] = 0.01 * x + 0.02 * y;
  const auto out = correlate(ramp, h, w, log_kernel(), Border::Replicate);
  for (int y = 3; y < h - 3; ++y)
    for (int x = 3; x < w - 3; ++x) EXPECT_NEAR(out[y * w + x], 0.0, 1e-12);
}

TEST(Filters, AdjointIdentity) {
  const int h = 9, w = 7;
  const Kernel k = log_kernel(5, 1.0);
  for (Border b : {Border::Valid, Border::Zero, Border::Replicate}) {
    const auto x = oracle::random_tensor({h * w}, 30);
    int oh = 0, ow = 0;
    const auto ax = correlate(x.span(), h, w, k, b, &oh, &ow);
    const auto y = oracle::random_tensor({oh * ow}, 31);
    std::vector<double> aty(h * w, 0.0);
    correlate_adjoint(y.span(), h, w, k, b, aty);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax[i] * y[i];
    for (std::size_t i = 0; i < aty.size(); ++i) rhs += x[i] * aty[i];
    EXPECT_NEAR(lhs, rhs, 1e-11);
  }
}
