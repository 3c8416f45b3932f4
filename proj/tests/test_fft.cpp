#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "hfo/fft.hpp"
#include "hfo/rng.hpp"

using cplx = std::complex<double>;

namespace {

// O(n^2) reference transform
std::vector<cplx> dft(const std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      double ang = sign * 2.0 * M_PI * double(k) * double(t) / double(n);
      acc += a[t] * cplx{std::cos(ang), std::sin(ang)};
    }
    out[k] = inverse ? acc / double(n) : acc;
  }
  return out;
}

}  // namespace

TEST_CASE("fft matches the direct transform") {
  hfo::Rng rng = hfo::Rng::stream(3, "fft");
  std::vector<cplx> a(64);
  for (auto& v : a) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  std::vector<cplx> want = dft(a, false);
  std::vector<cplx> got = a;
  hfo::fft(got, false);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(got[i] - want[i]) < 1e-9);
  }
}

TEST_CASE("inverse undoes forward") {
  hfo::Rng rng = hfo::Rng::stream(4, "fft");
  std::vector<cplx> a(128);
  for (auto& v : a) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  std::vector<cplx> b = a;
  hfo::fft(b, false);
  hfo::fft(b, true);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(b[i] - a[i]) < 1e-12);
  }
}

TEST_CASE("impulse transforms to all-ones") {
  std::vector<cplx> a(16, cplx{0, 0});
  a[0] = {1, 0};
  hfo::fft(a, false);
  for (const auto& v : a) CHECK(std::abs(v - cplx{1, 0}) < 1e-12);
}

TEST_CASE("pure tone lands in one bin") {
  const std::size_t n = 64;
  std::vector<cplx> a(n);
  for (std::size_t t = 0; t < n; ++t) {
    a[t] = {std::cos(2.0 * M_PI * 5.0 * double(t) / double(n)), 0.0};
  }
  hfo::fft(a, false);
  // cos splits between bins 5 and n-5, each of magnitude n/2
  CHECK(std::abs(a[5]) == doctest::Approx(double(n) / 2).epsilon(1e-9));
  CHECK(std::abs(a[n - 5]) == doctest::Approx(double(n) / 2).epsilon(1e-9));
  for (std::size_t k = 0; k < n; ++k) {
    if (k != 5 && k != n - 5) CHECK(std::abs(a[k]) < 1e-9);
  }
}

TEST_CASE("next_pow2") {
  CHECK(hfo::next_pow2(1) == 1);
  CHECK(hfo::next_pow2(2) == 2);
  CHECK(hfo::next_pow2(3) == 4);
  CHECK(hfo::next_pow2(1024) == 1024);
  CHECK(hfo::next_pow2(1025) == 2048);
}

TEST_CASE("non power of two rejected") {
  std::vector<cplx> a(12);
  CHECK_THROWS(hfo::fft(a, false));
}
