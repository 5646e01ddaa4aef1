#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "onarch/rng.hpp"
#include "onarch/simulate.hpp"

using namespace onarch;

TEST_CASE("identical keys give identical streams") {
  Rng a(12345, 7), b(12345, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct stream ids decorrelate") {
  Rng a(12345, 0), b(12345, 1);
  int agree = 0;
  for (int i = 0; i < 1000; ++i) agree += a.next_u64() == b.next_u64();
  CHECK(agree == 0);
}

TEST_CASE("splitmix64 walks the golden-ratio sequence deterministically") {
  std::uint64_t s1 = 42, s2 = 42;
  for (int i = 0; i < 16; ++i) CHECK(splitmix64(s1) == splitmix64(s2));
  CHECK(s1 == s2);
  CHECK(s1 == 42 + 16 * 0x9e3779b97f4a7c15ULL);
}

TEST_CASE("uniform stays inside the half-open interval") {
  Rng rng(3, 0);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("ranged uniform avoids its endpoints") {
  Rng rng(4, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u > -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("gaussian moments") {
  Rng rng(5, 0);
  const long n = 1000000;
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (long i = 0; i < n; ++i) {
    const double x = rng.gaussian();
    m1 += x; m2 += x * x; m3 += x * x * x; m4 += x * x * x * x;
  }
  m1 /= n; m2 /= n; m3 /= n; m4 /= n;
  CHECK(std::abs(m1) < 0.005);
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.01));
  CHECK(std::abs(m3) < 0.02);
  CHECK(m4 == doctest::Approx(3.0).epsilon(0.03));
}

TEST_CASE("classical student has variance nu/(nu-2)") {
  const double nu = 8.0;
  Rng rng(6, 0);
  const long n = 1000000;
  double m2 = 0;
  for (long i = 0; i < n; ++i) {
    const double x = rng.student_t(nu);
    m2 += x * x;
  }
  m2 /= n;
  CHECK(m2 == doctest::Approx(nu / (nu - 2.0)).epsilon(0.02));
}

TEST_CASE("unit student is the classical draw rescaled") {
  Rng a(7, 3), b(7, 3);
  for (int i = 0; i < 100; ++i) {
    const double x = a.student_t(5.0);
    const double y = b.student_unit(5.0);
    CHECK(y == doctest::Approx(x * std::sqrt(3.0 / 5.0)).epsilon(1e-15));
  }
}

TEST_CASE("sampled student vector is deterministic and unit variance") {
  const Eigen::VectorXd x = sample_student(6.0, 500000, 99);
  const Eigen::VectorXd y = sample_student(6.0, 500000, 99);
  CHECK((x - y).cwiseAbs().maxCoeff() == 0.0);

  const double m2 = x.squaredNorm() / double(x.size());
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(x.mean()) < 0.01);

  const Eigen::VectorXd z = sample_student(6.0, 1000, 100);
  CHECK((x.head(1000) - z).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("unit student kurtosis follows 3 + 6/(nu-4)") {
  // Kurtosis of the unit-variance draw; nu = 20 keeps the eighth moment
  // finite so the sample estimate concentrates.
  const double nu = 20.0;
  const Eigen::VectorXd x = sample_student(nu, 4000000, 17);
  const double m2 = x.squaredNorm() / double(x.size());
  const double m4 = x.array().pow(4).mean();
  const double kurt = m4 / (m2 * m2);
  CHECK(kurt == doctest::Approx(3.0 + 6.0 / (nu - 4.0)).epsilon(0.03));
}

TEST_CASE("tail heaviness orders by nu") {
  // P(|x| > 4) should decrease with nu at fixed unit variance.
  auto tail = [](double nu) {
    const Eigen::VectorXd x = sample_student(nu, 400000, 23);
    return double((x.cwiseAbs().array() > 4.0).count()) / double(x.size());
  };
  const double t3 = tail(3.0), t10 = tail(10.0), t100 = tail(100.0);
  CHECK(t3 > t10);
  CHECK(t10 > t100);
  CHECK(t3 > 1e-3);
}
