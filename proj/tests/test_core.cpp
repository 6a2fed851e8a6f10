#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/core/rng.hpp"

using namespace chaosgrad;

TEST(Matrix, ShapeMismatchIsAnError) {
  const Matrix a(2, 3), b(2, 3);
  EXPECT_THROW(a * b, DimensionError);
  EXPECT_THROW(a * (Vector{1.0, 2.0}), DimensionError);
  EXPECT_THROW(a + Matrix(3, 2), DimensionError);
  EXPECT_THROW(dot(Vector{1.0}, Vector{1.0, 2.0}), DimensionError);
}

TEST(Matrix, ProductsAndTranspose) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0, 1}, {1, 0}};
  EXPECT_EQ(a * b, (Matrix{{2, 1}, {4, 3}}));
  EXPECT_EQ(transpose(a), (Matrix{{1, 3}, {2, 4}}));
  EXPECT_EQ(a * (Vector{1, 1}), (Vector{3, 7}));
  EXPECT_EQ(left_multiply(Vector{1, 1}, a), (Vector{4, 6}));
  EXPECT_DOUBLE_EQ(trace(a), 5.0);
}

TEST(Matrix, DeterminantAndInverse) {
  const Matrix a{{4, 7, 2}, {3, 6, 1}, {2, 5, 3}};
  EXPECT_NEAR(determinant(a), 9.0, 1e-12);
  const Matrix prod = a * inverse(a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-12);
  }
  const Matrix singular{{1, 2}, {2, 4}};
  EXPECT_EQ(determinant(singular), 0.0);
  EXPECT_THROW(inverse(singular), DomainError);
}

TEST(Rng, CountersAreReproducibleAndIndependentOfOrder) {
  const CounterRng a(42, 3), b(42, 3);
  const double late = a.normal_at(1000);
  for (int i = 0; i < 10; ++i) (void)b.normal_at(i);
  EXPECT_EQ(late, b.normal_at(1000));
  EXPECT_NE(CounterRng(42, 3).normal_at(0), CounterRng(42, 4).normal_at(0));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

TEST(Rng, UniformsInUnitIntervalAndNormalMoments) {
  const CounterRng r(7, 0);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform_at(i);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = r.normal_at(i);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
