#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "chaosgrad/autodiff/derivatives.hpp"
#include "chaosgrad/estimators.hpp"
#include "chaosgrad/systems/unroll.hpp"
#include "chaosgrad/systems/zoo.hpp"

using namespace chaosgrad;
using namespace chaosgrad::estimators;
using systems::SystemSpec;

namespace {

// Mean unrolled loss over one step equals a * theta^2 + c * theta.
struct PolynomialLoss {
  double a = 1.0;
  double c = 0.0;

  template <class T>
  std::vector<T> step(std::span<const T> s, std::span<const T>, systems::StepContext) const {
    return {s[0]};
  }

  template <class T>
  T loss(std::span<const T>, std::span<const T> th, systems::StepContext) const {
    return 0.5 * (a * th[0] * th[0] + c * th[0]);
  }
};

SystemSpec polynomial(double a, double c) {
  return systems::make_system("polynomial", 1, 1, PolynomialLoss{a, c}, {0.0}, {0.0});
}

// (1/N) sum_t t (1 - theta)^(2t - 1) w0^2 with a minus sign, for lambda = 1.
double sgd_closed_form(double theta, double w0, std::size_t n) {
  double acc = 0.0;
  for (std::size_t t = 1; t <= n; ++t) {
    acc -= static_cast<double>(t) * std::pow(1.0 - theta, 2.0 * t - 1.0) * w0 * w0;
  }
  return acc / static_cast<double>(n);
}

Vector fd_of_loss(const SystemSpec& sys, const Vector& theta, const Vector& s0, std::size_t n,
                  double h = 1e-6) {
  return ad::finite_difference_gradient(
      [&](const std::vector<double>& th) { return systems::mean_unrolled_loss(sys, th, s0, n); },
      theta, h);
}

struct ZooCase {
  SystemSpec sys;
  Vector theta;
};

std::vector<ZooCase> stable_zoo() {
  systems::PdeConfig heat;
  heat.n = 12;
  heat.dt = 0.4 * heat.dx() * heat.dx();
  systems::PdeConfig drift = heat;
  drift.beta = 0.5;
  return {
      {systems::make_linear_map(Matrix{{0.9, 0.2}, {-0.1, 0.8}}), {}},
      {systems::make_time_varying_map(std::vector<Matrix>(20, Matrix{{0.5, 0.5}, {-0.5, 0.5}})), {}},
      {systems::make_heat_equation(heat), {}},
      {systems::make_drift_diffusion(drift), {}},
      {systems::make_sinusoid_loss(5.0), {1.3}},
      {systems::make_double_pendulum(), {0.1, -0.05, 0.02, 0.0}},
      {systems::make_sgd_unroll({1.0, 0.5, 0.1}), {0.9}},
      {systems::make_logistic_map(2.8, 0.3), {2.8}},
  };
}

void expect_close(const Vector& a, const Vector& b, double rel, const std::string& what) {
  ASSERT_EQ(a.size(), b.size()) << what;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::abs(a[i] - b[i]), rel * std::max(1.0, std::abs(b[i]))) << what << " [" << i << "]";
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// full gradient

TEST(FullGradient, SgdMatchesFiniteDifferencesAndClosedForm) {
  const auto sys = systems::make_sgd_unroll({1.0});
  const Vector g = full_gradient(sys, Vector{0.5}, Vector{1.0}, 2);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0], fd_of_loss(sys, {0.5}, {1.0}, 2)[0], 1e-8);
  EXPECT_NEAR(g[0], -0.375, 1e-15);
}

TEST(FullGradient, ParameterlessSystemGivesEmptyGradient) {
  const auto sys = systems::make_linear_map(Matrix::identity(3));
  EXPECT_TRUE(full_gradient(sys, {}, Vector{1, 2, 3}, 4).empty());
}

TEST(FullGradient, UnstableSgdGrowsByFourPerStep) {
  const auto sys = systems::make_sgd_unroll({1.0});
  double prev = 0.0;
  for (std::size_t n = 1; n <= 40; ++n) {
    const double g = full_gradient(sys, Vector{3.0}, Vector{1.0}, n)[0];
    EXPECT_NEAR(g / sgd_closed_form(3.0, 1.0, n), 1.0, 1e-12) << "N=" << n;
    if (n >= 20) {
      EXPECT_NEAR(g / prev, 4.0, 0.2) << "N=" << n;
    }
    prev = g;
  }
}

TEST(FullGradient, MatchesFiniteDifferencesAcrossStableZoo) {
  for (const auto& [sys, theta] : stable_zoo()) {
    for (std::size_t n : {1u, 7u, 20u}) {
      const Vector g = full_gradient(sys, theta, sys.default_s0, n);
      const Vector fd = fd_of_loss(sys, theta, sys.default_s0, n);
      ASSERT_EQ(g.size(), fd.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_LT(std::abs(g[i] - fd[i]), 1e-5 * std::max(1e-3, std::abs(fd[i])))
            << sys.name << " N=" << n;
      }
    }
  }
}

TEST(FullGradient, BlowupReportsStep) {
  const auto sys = systems::make_sgd_unroll({1.0});
  try {
    full_gradient(sys, Vector{3.0}, Vector{1.0}, 600);
    FAIL() << "expected GradientBlowupError";
  } catch (const GradientBlowupError& e) {
    ASSERT_TRUE(e.step().has_value());
    // d l_t / d theta = t 2^(2t-1) first passes 1e100 at t = 163.
    EXPECT_EQ(*e.step(), 163u);
  }
}

TEST(InitialStateGradient, MatchesFiniteDifferences) {
  systems::PdeConfig heat;
  heat.n = 10;
  heat.dt = 0.3 * heat.dx() * heat.dx();
  const std::vector<SystemSpec> systems_under_test = {
      systems::make_linear_map(Matrix{{0.9, 0.2}, {-0.1, 0.8}}),
      systems::make_heat_equation(heat),
      systems::make_sgd_unroll({1.0, 0.5}),
  };
  for (const auto& sys : systems_under_test) {
    const Vector theta = sys.param_dim ? Vector{0.7} : Vector{};
    const Vector g = initial_state_gradient(sys, theta, sys.default_s0, 9);
    const Vector fd = ad::finite_difference_gradient(
        [&](const std::vector<double>& s) { return systems::mean_unrolled_loss(sys, theta, s, 9); },
        sys.default_s0);
    expect_close(g, fd, 1e-6, sys.name);
  }
}

TEST(InitialStateGradient, ScalarLinearClosedForm) {
  // L = (1/N) sum_{t=0..N} (a^t s)^2, dL/ds = (2 s / N) sum a^{2t}.
  const double a = 0.8, s = 1.5;
  const std::size_t n = 6;
  double sum = 0.0;
  for (std::size_t t = 0; t <= n; ++t) sum += std::pow(a, 2.0 * t);
  const auto g = initial_state_gradient(systems::make_linear_map(Matrix{{a}}), {}, Vector{s}, n);
  EXPECT_NEAR(g[0], 2.0 * s * sum / n, 1e-13);
}

// ---------------------------------------------------------------------------
// explicit assembly

TEST(Eq8Assembly, MatchesFullGradientAcrossStableZoo) {
  for (const auto& [sys, theta] : stable_zoo()) {
    for (std::size_t n : {1u, 2u, 9u, 20u}) {
      const Vector g = full_gradient(sys, theta, sys.default_s0, n);
      const Vector e = eq8_assembled_gradient(systems::unroll(sys, theta, sys.default_s0, n, true));
      expect_close(e, g, 1e-8, sys.name + " N=" + std::to_string(n));
    }
  }
}

TEST(Eq8Assembly, TwoStepHandExpansionOnDiagonalSgd) {
  const Vector lambda{1.0, 0.5};
  const double th = 0.7;
  const Vector w0{1.0, -2.0};
  const auto sys = systems::make_sgd_unroll(lambda);
  const auto traj = systems::unroll(sys, Vector{th}, w0, 2, true);
  double hand = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double j = 1.0 - th * lambda[i];
    const double w1 = j * w0[i], w2 = j * w1;
    const double ds1 = -lambda[i] * w0[i], ds2 = -lambda[i] * w1;
    hand += lambda[i] * w1 * ds1;          // l1 through s1
    hand += lambda[i] * w2 * ds2;          // l2 through s2
    hand += lambda[i] * w2 * j * ds1;      // l2 through s1
  }
  hand /= 2.0;
  EXPECT_NEAR(eq8_assembled_gradient(traj)[0], hand, 1e-14);
}

TEST(Eq8Assembly, SingleStepHasNoProducts) {
  const auto sys = systems::make_double_pendulum();
  const Vector th{0.2, 0.1, 0.0, 0.3};
  const auto traj = systems::unroll(sys, th, sys.default_s0, 1, true);
  Vector expect = add(traj.loss_param_grads[0], traj.loss_param_grads[1]);
  expect = add(expect, left_multiply(traj.loss_state_grads[1], traj.param_jacobians[0]));
  const Vector got = eq8_assembled_gradient(traj);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], expect[i], 1e-14);
}

TEST(Eq8Assembly, MissingJacobiansIsAnError) {
  const auto sys = systems::make_sgd_unroll({1.0});
  EXPECT_THROW(eq8_assembled_gradient(systems::unroll(sys, Vector{0.5}, Vector{1.0}, 3, false)), Error);
}

// ---------------------------------------------------------------------------
// truncation

TEST(Truncation, FullLengthIsBitIdentical) {
  for (const auto& [sys, theta] : stable_zoo()) {
    for (std::size_t n : {1u, 6u, 15u}) {
      EXPECT_EQ(truncated_gradient(sys, theta, sys.default_s0, n, {n}),
                full_gradient(sys, theta, sys.default_s0, n))
          << sys.name;
    }
  }
}

TEST(Truncation, DropsProductsCrossingCuts) {
  // Oracle from trajectory factors: the (t, k) term survives only when no
  // cut index m = L, 2L, ... lies in [k, t).
  const auto sys = systems::make_sgd_unroll({1.0, 0.3});
  const Vector th{0.8}, w0{1.0, -0.5};
  const std::size_t n = 10;
  const auto traj = systems::unroll(sys, th, w0, n, true);
  for (std::size_t len : {1u, 2u, 3u, 4u}) {
    double oracle = 0.0;
    for (std::size_t t = 0; t <= n; ++t) {
      oracle += traj.loss_param_grads[t][0];
      Vector row = traj.loss_state_grads[t];
      for (std::size_t k = t; k >= 1; --k) {
        oracle += left_multiply(row, traj.param_jacobians[k - 1])[0];
        if (k - 1 == 0 || (k - 1) % len == 0) break;
        row = left_multiply(row, traj.state_jacobians[k - 1]);
      }
    }
    oracle /= static_cast<double>(n);
    EXPECT_NEAR(truncated_gradient(sys, th, w0, n, {len})[0], oracle, 1e-14) << "t=" << len;
  }
}

TEST(Truncation, LengthOneKeepsOnlyDiagonalTerms) {
  const auto sys = systems::make_double_pendulum();
  const Vector th{0.3, 0.1, 0.0, 0.0};
  const std::size_t n = 12;
  const auto traj = systems::unroll(sys, th, sys.default_s0, n, true);
  Vector oracle(4, 0.0);
  for (std::size_t t = 0; t <= n; ++t) {
    oracle = add(oracle, traj.loss_param_grads[t]);
    if (t > 0) oracle = add(oracle, left_multiply(traj.loss_state_grads[t], traj.param_jacobians[t - 1]));
  }
  const Vector got = truncated_gradient(sys, th, sys.default_s0, n, {1});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], oracle[i] / n, 1e-12);
}

TEST(Truncation, UnstableSgdTruncatedShrinksRelativeToFull) {
  const auto sys = systems::make_sgd_unroll({1.0});
  double prev_ratio = 0.0;
  for (std::size_t n = 20; n <= 60; n += 10) {
    const double full = std::abs(full_gradient(sys, Vector{3.0}, Vector{1.0}, n)[0]);
    const double trunc = std::abs(truncated_gradient(sys, Vector{3.0}, Vector{1.0}, n, {2})[0]);
    EXPECT_GE(full, std::pow(2.0, static_cast<double>(n) - 5.0));
    // Cut every two steps the gradient is 1.2 * 4^N / N; the full one tends to (2/3) 4^N.
    EXPECT_NEAR(trunc * static_cast<double>(n) / std::pow(4.0, static_cast<double>(n)), 1.2, 1e-9);
    const double ratio = full / trunc;
    EXPECT_GT(ratio, prev_ratio);
    prev_ratio = ratio;
  }
}

TEST(Truncation, ValidatesLength) {
  const auto sys = systems::make_sgd_unroll({1.0});
  EXPECT_THROW(truncated_gradient(sys, Vector{0.5}, Vector{1.0}, 5, {0}), DomainError);
  EXPECT_THROW(truncated_gradient(sys, Vector{0.5}, Vector{1.0}, 5, {6}), DomainError);
}

// ---------------------------------------------------------------------------
// clipping

TEST(Clip, Examples) {
  EXPECT_EQ(clip_gradient(Vector{0.3, -0.4}, {ClipMode::GlobalNorm, 1.0}), (Vector{0.3, -0.4}));
  const Vector c = clip_gradient(Vector{3.0, 4.0}, {ClipMode::GlobalNorm, 1.0});
  EXPECT_NEAR(c[0], 0.6, 1e-15);
  EXPECT_NEAR(c[1], 0.8, 1e-15);
  const Vector g{12.5, -7e3, 1e-4};
  EXPECT_EQ(clip_gradient(g, {ClipMode::GlobalNorm, 1e300}), g);
  EXPECT_EQ(clip_gradient(g, {ClipMode::PerCoordinate, 1e300}), g);
  EXPECT_EQ(clip_gradient(g, {ClipMode::PerCoordinate, 10.0}), (Vector{10.0, -10.0, 1e-4}));
}

TEST(Clip, NormBoundAndIdempotence) {
  const std::vector<Vector> gs = {{1e8, -3e7}, {0.1, 0.2, -0.3}, {5.0, 5.0, 5.0, 5.0}, {-2.0}};
  for (const auto& g : gs) {
    for (double thr : {0.5, 1.0, 7.0}) {
      const ClipConfig global{ClipMode::GlobalNorm, thr}, coord{ClipMode::PerCoordinate, thr};
      const Vector a = clip_gradient(g, global);
      EXPECT_LE(norm2(a), thr * (1.0 + 1e-15));
      EXPECT_EQ(clip_gradient(a, global), a);
      const Vector b = clip_gradient(g, coord);
      EXPECT_EQ(clip_gradient(b, coord), b);
    }
  }
}

TEST(Clip, Errors) {
  EXPECT_THROW(clip_gradient(Vector{1.0, NAN}, {ClipMode::GlobalNorm, 1.0}), NonFiniteError);
  EXPECT_THROW(clip_gradient(Vector{1.0}, {ClipMode::GlobalNorm, 0.0}), DomainError);
}

// ---------------------------------------------------------------------------
// smoothing

TEST(SmoothingConfig, Validation) {
  SmoothingConfig c;
  c.num_samples = 3;
  EXPECT_THROW(c.validate(), DomainError);
  c.antithetic = false;
  EXPECT_NO_THROW(c.validate());
  c.sigma = -1.0;
  EXPECT_THROW(c.validate(), DomainError);
  c.sigma = 0.3;
  c.num_samples = 0;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Reparam, ZeroSigmaSingleSampleIsFullGradient) {
  const auto sys = systems::make_sinusoid_loss(4.0);
  const SmoothingConfig c{0.0, 1, false, 9};
  const auto est = reparam_smoothed_gradient(sys, Vector{2.2}, sys.default_s0, 1, c);
  EXPECT_EQ(est.mean, full_gradient(sys, Vector{2.2}, sys.default_s0, 1));
  EXPECT_EQ(est.variance[0], 0.0);
}

TEST(Reparam, SelfConsistentSummary) {
  const auto sys = systems::make_sgd_unroll({1.0, 0.2});
  const SmoothingConfig c{0.2, 500, true, 4};
  const auto est = reparam_smoothed_gradient(sys, Vector{0.8}, Vector{1.0, 1.0}, 6, c);
  ASSERT_EQ(est.samples.size(), 500u);
  double m = 0.0;
  for (const auto& s : est.samples) m += s[0];
  m /= 500.0;
  double v = 0.0;
  for (const auto& s : est.samples) v += (s[0] - m) * (s[0] - m);
  v /= 499.0;
  EXPECT_NEAR(est.mean[0], m, 1e-12 * std::max(1.0, std::abs(m)));
  EXPECT_NEAR(est.variance[0], v, 1e-12 * std::max(1.0, v));
  EXPECT_GE(est.variance[0], 0.0);
  EXPECT_EQ(est.max_variance, est.variance[0]);
  EXPECT_EQ(est.excluded, 0u);
}

TEST(Reparam, VarianceFollowsLeadingOrderInFrequency) {
  // Var over eps of 0.1 (w/pi) cos((theta + 0.3 eps) w/pi), maximised over theta.
  const SmoothingConfig c{0.3, 20000, true, 1};
  for (double w : {16.0, 32.0}) {
    const auto sys = systems::make_sinusoid_loss(w);
    double worst = 0.0;
    for (int k = -10; k <= 10; ++k) {
      worst = std::max(worst, reparam_smoothed_gradient(sys, Vector{static_cast<double>(k)},
                                                        sys.default_s0, 1, c).max_variance);
    }
    const double a = 0.1 * w / std::numbers::pi, z = 0.3 * w / std::numbers::pi;
    // For a cosine at a random Gaussian phase the variance is at most a^2 (1 + e^{-2 z^2}) / 2.
    const double bound = a * a * (1.0 + std::exp(-2.0 * z * z)) / 2.0;
    EXPECT_LT(worst, 1.1 * bound) << "w=" << w;
    EXPECT_GT(worst, 0.5 * a * a * (1.0 - std::exp(-z * z)) * (1.0 - std::exp(-z * z))) << "w=" << w;
  }
}

TEST(Reparam, NonFiniteSamplesAreCountedAndExcluded) {
  // Logistic map with r far above 4 escapes to infinity for most perturbations.
  const auto sys = systems::make_logistic_map(4.0, 0.3);
  const SmoothingConfig c{3.0, 200, true, 2};
  const auto est = reparam_smoothed_gradient(sys, Vector{4.0}, sys.default_s0, 200, c);
  EXPECT_GT(est.excluded, 0u);
  std::size_t bad = 0;
  for (bool f : est.finite) bad += f ? 0 : 1;
  EXPECT_EQ(bad, est.excluded);
  if (est.included() > 0) {
    EXPECT_TRUE(std::isfinite(est.mean[0]));
  }
}

TEST(Reparam, SampleIndependentOfBatchSize) {
  const auto sys = systems::make_sinusoid_loss(8.0);
  const auto small = reparam_smoothed_gradient(sys, Vector{1.0}, sys.default_s0, 1, {0.3, 10, true, 5});
  const auto large = reparam_smoothed_gradient(sys, Vector{1.0}, sys.default_s0, 1, {0.3, 1000, true, 5});
  for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(small.samples[j], large.samples[j]);
}

TEST(Es, QuadraticMeanIsTrueGradient) {
  const auto sys = polynomial(1.0, 0.0);
  for (double th : {-1.5, 0.0, 2.0}) {
    const auto est = blackbox_es_gradient(sys, Vector{th}, Vector{0.0}, 1, {0.3, 100000, true, 3});
    const double se = std::sqrt(est.variance[0] / est.included());
    EXPECT_NEAR(est.mean[0], 2.0 * th, 3.0 * se + 1e-12) << "theta=" << th;
  }
}

TEST(Es, LinearLossPairs) {
  const double c = 2.5;
  const auto sys = polynomial(0.0, c);
  const SmoothingConfig cfg{0.4, 20000, true, 8};
  const auto est = blackbox_es_gradient(sys, Vector{0.7}, Vector{0.0}, 1, cfg);
  ASSERT_EQ(est.samples.size(), 10000u);
  for (std::size_t m = 0; m < 10; ++m) {
    const double eps = estimators::detail::perturbation(cfg, 2 * m, 1)[0];
    EXPECT_NEAR(est.samples[m][0], c * eps * eps, 1e-12);
  }
  const double se = std::sqrt(est.variance[0] / est.included());
  EXPECT_NEAR(est.mean[0], c, 3.0 * se);
}

TEST(Es, UnpairedFormAndSigmaRequirement) {
  const auto sys = polynomial(1.0, 0.0);
  const auto est = blackbox_es_gradient(sys, Vector{1.0}, Vector{0.0}, 1, {0.3, 50001, false, 7});
  EXPECT_EQ(est.samples.size(), 50001u);
  EXPECT_NEAR(est.mean[0], 2.0, 3.0 * std::sqrt(est.variance[0] / est.included()));
  EXPECT_THROW(blackbox_es_gradient(sys, Vector{1.0}, Vector{0.0}, 1, {0.0, 10, true, 0}), DomainError);
}

TEST(Es, VarianceBoundedInFrequency) {
  const SmoothingConfig c{0.3, 4000, true, 11};
  std::vector<double> worst;
  for (double w : {1.0, 64.0}) {
    const auto sys = systems::make_sinusoid_loss(w);
    double m = 0.0;
    for (int k = -10; k <= 10; ++k) {
      m = std::max(m, blackbox_es_gradient(sys, Vector{static_cast<double>(k)}, sys.default_s0, 1, c).max_variance);
    }
    worst.push_back(m);
  }
  EXPECT_LT(worst[1], 3.0 * worst[0]);
  EXPECT_GT(worst[1], worst[0] / 3.0);
}

TEST(SmoothedLoss, ZeroSigmaQuadraticAndSinusoid) {
  const auto sin_sys = systems::make_sinusoid_loss(3.0);
  const auto exact = smoothed_loss_estimate(sin_sys, Vector{1.7}, sin_sys.default_s0, 1, {0.0, 4, true, 0});
  EXPECT_EQ(exact.mean, systems::mean_unrolled_loss(sin_sys, Vector{1.7}, sin_sys.default_s0, 1));

  const auto quad = polynomial(1.0, 0.0);
  const auto q = smoothed_loss_estimate(quad, Vector{1.5}, Vector{0.0}, 1, {0.5, 200000, true, 2});
  double var = 0.0;
  for (double l : q.per_sample) var += (l - q.mean) * (l - q.mean);
  const double se = std::sqrt(var / (q.per_sample.size() - 1) / q.per_sample.size());
  EXPECT_NEAR(q.mean, 1.5 * 1.5 + 0.25, 4.0 * se);

  // Gaussian convolution damps the sine by exp(-(sigma w / pi)^2 / 2).
  const double w = 6.0, sigma = 0.3, th = 0.4;
  const auto s = smoothed_loss_estimate(systems::make_sinusoid_loss(w), Vector{th}, Vector{0.0}, 1,
                                        {sigma, 200000, true, 6});
  const double k = w / std::numbers::pi;
  const double closed = 0.1 * std::exp(-0.5 * sigma * sigma * k * k) * std::sin(th * k) +
                        (th * th + sigma * sigma) / 100.0 + 0.1;
  EXPECT_NEAR(s.mean, closed, 5e-4);
}

TEST(OracleAgreement, SmoothedEstimatorsMatchDifferencedSmoothedLoss) {
  struct Case {
    SystemSpec sys;
    Vector theta;
    Vector s0;
    std::size_t n;
  };
  const std::vector<Case> cases = {
      {systems::make_sinusoid_loss(4.0), {1.1}, {0.0}, 1},
      {systems::make_sgd_unroll({1.0}), {0.6}, {1.0}, 5},
  };
  for (const auto& [sys, theta, s0, n] : cases) {
    const std::uint64_t seed = 21;
    const double h = 1e-3;
    // Common random numbers: both shifted evaluations reuse the same eps.
    const SmoothingConfig big{0.3, 1000000, true, seed};
    const double lp = smoothed_loss_estimate(sys, Vector{theta[0] + h}, s0, n, big).mean;
    const double lm = smoothed_loss_estimate(sys, Vector{theta[0] - h}, s0, n, big).mean;
    const double oracle = (lp - lm) / (2.0 * h);
    const SmoothingConfig c{0.3, 100000, true, seed + 1};
    for (const auto& est : {reparam_smoothed_gradient(sys, theta, s0, n, c),
                            blackbox_es_gradient(sys, theta, s0, n, c)}) {
      const double se = std::sqrt(est.variance[0] / est.included());
      EXPECT_NEAR(est.mean[0], oracle, 3.0 * se + 1e-9) << sys.name;
    }
  }
}

// ---------------------------------------------------------------------------
// crossover and variance sweeps

TEST(Crossover, ReparamBelowEsAtLowFrequencyAboveAtHigh) {
  const SmoothingConfig c{0.3, 2000, true, 13};
  auto worst = [&](double w, bool es) {
    const auto sys = systems::make_sinusoid_loss(w);
    double m = 0.0;
    for (int k = -20; k <= 20; ++k) {
      const Vector th{0.5 * k};
      m = std::max(m, es ? blackbox_es_gradient(sys, th, sys.default_s0, 1, c).max_variance
                         : reparam_smoothed_gradient(sys, th, sys.default_s0, 1, c).max_variance);
    }
    return m;
  };
  EXPECT_LT(worst(1.0, false), worst(1.0, true));
  EXPECT_GT(worst(64.0, false), worst(64.0, true));
}

TEST(VarianceSweep, DeterministicMethodsHaveZeroVariance) {
  const auto sys = systems::make_sgd_unroll({1.0});
  EstimatorChoice choice;
  choice.method = Method::Full;
  const auto cells = gradient_variance_sweep(sys, {{0.5}, {3.0}}, Vector{1.0}, {5, 10}, choice, 4, 1);
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& c : cells) EXPECT_EQ(c.max_variance, 0.0);
  choice.method = Method::Reparam;
  choice.smoothing = {0.0, 2, true, 0};
  for (const auto& c : gradient_variance_sweep(sys, {{0.5}}, Vector{1.0}, {5}, choice, 3, 1)) {
    EXPECT_EQ(c.max_variance, 0.0);
  }
}

TEST(VarianceSweep, StableFlatUnstableGeometric) {
  const auto sys = systems::make_sgd_unroll({1.0});
  EstimatorChoice choice;
  choice.method = Method::Reparam;
  choice.smoothing = {0.02, 20, true, 0};
  const std::vector<std::size_t> steps{5, 10, 15, 20};
  const auto stable = gradient_variance_sweep(sys, {{0.5}}, Vector{1.0}, steps, choice, 16, 3);
  // Stable gradients decay like 1/N, so the variance must not grow.
  for (std::size_t i = 1; i < stable.size(); ++i) {
    EXPECT_LE(stable[i].max_variance, stable[i - 1].max_variance * (1.0 + 1e-9));
  }
  const auto unstable = gradient_variance_sweep(sys, {{3.0}}, Vector{1.0}, steps, choice, 16, 3);
  std::vector<double> logs;
  for (const auto& c : unstable) logs.push_back(std::log(c.max_variance));
  for (std::size_t i = 1; i < logs.size(); ++i) {
    const double slope = (logs[i] - logs[i - 1]) / 5.0;
    EXPECT_GT(slope, 1.5) << "between N=" << steps[i - 1] << " and " << steps[i];
    EXPECT_LT(slope, 4.0);
  }
}

TEST(VarianceSweep, Errors) {
  const auto sys = systems::make_sgd_unroll({1.0});
  EXPECT_THROW(gradient_variance_sweep(sys, {}, Vector{1.0}, {5}, {}, 2), DomainError);
  EXPECT_THROW(gradient_variance_sweep(sys, {{0.5}}, Vector{1.0}, {}, {}, 2), DomainError);
}

TEST(MethodNames, RoundTrip) {
  for (auto name : {"full", "eq8", "truncated", "clipped", "reparam", "es"}) {
    const auto m = parse_method(name);
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(method_name(*m), name);
  }
  EXPECT_FALSE(parse_method("adam").has_value());
}

TEST(EstimateGradient, DispatchAgreesWithDirectCalls) {
  const auto sys = systems::make_sgd_unroll({1.0, 0.5});
  const Vector th{0.7}, w0{1.0, 1.0};
  EstimatorChoice c;
  c.method = Method::Eq8;
  EXPECT_NEAR(estimate_gradient(sys, th, w0, 8, c).mean[0], full_gradient(sys, th, w0, 8)[0], 1e-12);
  c.method = Method::Clipped;
  c.clip = {ClipMode::GlobalNorm, 1e-3};
  EXPECT_NEAR(std::abs(estimate_gradient(sys, th, w0, 8, c).mean[0]), 1e-3, 1e-15);
  c.method = Method::Truncated;
  c.truncation = {3};
  EXPECT_EQ(estimate_gradient(sys, th, w0, 8, c).mean, truncated_gradient(sys, th, w0, 8, c.truncation));
}
