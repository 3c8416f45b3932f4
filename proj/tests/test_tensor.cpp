#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "hfo/tensor.hpp"

using hfo::Tensor;

TEST_CASE("zeros and full") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.rank() == 2);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f[i] == 2.5);
}

TEST_CASE("scalar wraps one value") {
  Tensor s = Tensor::scalar(-1.25);
  CHECK(s.rank() == 1);
  CHECK(s.size() == 1);
  CHECK(s[0] == -1.25);
}

TEST_CASE("reshaped keeps data, changes metadata") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
  CHECK(r.dim(1) == 2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r[i] == t[i]);
  CHECK_THROWS(t.reshaped({4, 2}));
}

TEST_CASE("all_finite flags nan and inf") {
  Tensor t({2}, {1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
  t[1] = INFINITY;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("matmul against hand product") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const double a[] = {1, 2, 3, 4};
  const double b[] = {5, 6, 7, 8};
  double c[4] = {0, 0, 0, 0};
  hfo::matmul(a, b, c, 2, 2, 2);
  CHECK(c[0] == 19.0);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  CHECK(c[3] == 50.0);
}

TEST_CASE("matmul rectangular") {
  // (1x3)*(3x2)
  const double a[] = {1, 2, 3};
  const double b[] = {1, 4, 2, 5, 3, 6};
  double c[2] = {0, 0};
  hfo::matmul(a, b, c, 1, 3, 2);
  CHECK(c[0] == 14.0);
  CHECK(c[1] == 32.0);
}

TEST_CASE("matmul_at_b transposes the left operand") {
  // A is (K=2, M=3) stored row-major; A^T * B with B (2,1)
  const double a[] = {1, 2, 3, 4, 5, 6};
  const double b[] = {10, 100};
  double c[3] = {0, 0, 0};
  hfo::matmul_at_b(a, b, c, 3, 2, 1);
  CHECK(c[0] == 1 * 10 + 4 * 100);
  CHECK(c[1] == 2 * 10 + 5 * 100);
  CHECK(c[2] == 3 * 10 + 6 * 100);
}

TEST_CASE("matmul_a_bt_acc accumulates") {
  // A (1,2) * B^T with B (2,2)
  const double a[] = {1, 2};
  const double b[] = {3, 4, 5, 6};
  double c[2] = {100, 200};
  hfo::matmul_a_bt_acc(a, b, c, 1, 2, 2);
  CHECK(c[0] == 100 + 1 * 3 + 2 * 4);
  CHECK(c[1] == 200 + 1 * 5 + 2 * 6);
}

TEST_CASE("matmul_acc adds onto existing values") {
  const double a[] = {2};
  const double b[] = {3};
  double c[1] = {1};
  hfo::matmul_acc(a, b, c, 1, 1, 1);
  CHECK(c[0] == 7.0);
}

TEST_CASE("shape_numel") {
  CHECK(hfo::shape_numel({}) == 1);
  CHECK(hfo::shape_numel({5}) == 5);
  CHECK(hfo::shape_numel({2, 3, 4}) == 24);
}
