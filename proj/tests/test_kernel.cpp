#include <catch2/catch_amalgamated.hpp>

#include "kronid/kernel.hpp"

using namespace kronid;

namespace {

// Dense assembly of Theorem-style diagonal scale operators:
// X = (A (x) B) (A (x) I + I (x) B)^{-1} for diagonal A, B.
Eigen::VectorXd kron_diag_scales(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index na = a.size(), nb = b.size();
  Eigen::MatrixXd prod = Eigen::MatrixXd::Zero(na * nb, na * nb);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(na * nb, na * nb);
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) {
      prod(i * nb + j, i * nb + j) = a(i) * b(j);
      sum(i * nb + j, i * nb + j) = a(i) + b(j);
    }
  Eigen::VectorXd out(na * nb);
  for (Eigen::Index i = 0; i < na * nb; ++i) {
    out(i) = sum(i, i) > 0.0 ? prod(i, i) / sum(i, i) : 0.0;
  }
  return out;
}

}  // namespace

TEST_CASE("stable spline entry formula at T=1") {
  const auto k = build_stable_spline(KernelShape(0.5, 0.1), 1);
  REQUIRE(k.size() == 1);
  CHECK_THAT(k.matrix()(0, 0), Catch::Matchers::WithinAbs(std::exp(-1.5) / 3.0, 1e-16));
}

TEST_CASE("stable spline hand evaluation at random entries") {
  Rng rng(42);
  for (int rep = 0; rep < 10; ++rep) {
    const KernelShape shape(rng.uniform(0.05, 0.95), rng.uniform(0.05, 3.0));
    const int t_len = rng.uniform_int(2, 30);
    const auto k = build_stable_spline(shape, t_len);
    const int t = rng.uniform_int(1, t_len);
    const int s = rng.uniform_int(1, t_len);
    const double b = shape.beta;
    const int mx = std::max(t, s);
    const double expected =
        (std::exp(-b * (t + s)) * std::exp(-b * mx) / 2.0 - std::exp(-3.0 * b * mx) / 6.0) *
        std::cos(shape.omega0 * (t - s));
    CHECK_THAT(k.matrix()(t - 1, s - 1), Catch::Matchers::WithinAbs(expected, 1e-14));
  }
}

TEST_CASE("stable spline matrix is exactly symmetric") {
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const auto k =
        build_stable_spline(KernelShape(rng.uniform(0.05, 0.95), rng.uniform(0.05, 3.0)), 17);
    CHECK((k.matrix() - k.matrix().transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("stable spline is positive semidefinite") {
  const auto k = build_stable_spline(KernelShape(0.3, 0.5), 20);
  CHECK(k.min_eigenvalue_ratio() >= -1e-10);
}

TEST_CASE("stable spline diagonal decays and obeys the coarse bound") {
  const KernelShape shape(0.4, 1.2);
  const int t_len = 30;
  const auto k = build_stable_spline(shape, t_len);
  for (int t = 1; t <= t_len; ++t) {
    CHECK(k.matrix()(t - 1, t - 1) <= k.matrix()(0, 0) + 1e-18);
    CHECK(k.matrix()(t - 1, t - 1) <= std::exp(-shape.beta * t));
  }
}

TEST_CASE("kernel shape validation") {
  CHECK_THROWS_AS(KernelShape(0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(KernelShape(1.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(KernelShape(0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelShape(0.5, M_PI), std::invalid_argument);
  CHECK_THROWS_AS(build_stable_spline(KernelShape(0.5, 0.1), 0), std::invalid_argument);
}

TEST_CASE("effective block scale basics") {
  CHECK(effective_block_scale(0.0, 0.0) == 0.0);
  CHECK(effective_block_scale(2.0, 2.0) == 1.0);
  CHECK(effective_block_scale(3.0, 0.0) == 0.0);
  CHECK(effective_block_scale(0.0, 3.0) == 0.0);
  CHECK_THROWS_AS(effective_block_scale(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("effective block scale is symmetric, monotone and below the min") {
  const std::vector<double> grid{0.0, 0.1, 0.5, 1.0, 3.0, 10.0};
  for (double a : grid)
    for (double b : grid) {
      const double v = effective_block_scale(a, b);
      CHECK(v == effective_block_scale(b, a));
      CHECK(v <= std::min(a, b) + 1e-15);
      for (double a2 : grid) {
        if (a2 >= a) CHECK(effective_block_scale(a2, b) >= v - 1e-15);
      }
    }
}

TEST_CASE("block_scales_K with unit scales gives one half everywhere") {
  const Dims d(2, 3, 2);
  KroneckerScales xi(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(9), Eigen::VectorXd::Ones(2),
                     Eigen::VectorXd::Ones(6));
  const auto s = block_scales_K(xi, d);
  CHECK((s.g.array() == 0.5).all());
  CHECK((s.f.array() == 0.5).all());
}

TEST_CASE("block_scales_K zero lambda wipes the whole (h, j) block row") {
  const Dims d(3, 2, 1);
  Rng rng(11);
  Eigen::VectorXd lambda(9), gamma(4), pi(3), omega(2);
  for (int i = 0; i < 9; ++i) lambda(i) = rng.uniform(0.5, 2.0);
  for (int i = 0; i < 4; ++i) gamma(i) = rng.uniform(0.5, 2.0);
  for (int i = 0; i < 3; ++i) pi(i) = rng.uniform(0.5, 2.0);
  for (int i = 0; i < 2; ++i) omega(i) = rng.uniform(0.5, 2.0);
  lambda(1 * 3 + 2) = 0.0;  // block (h=2, j=3), 0-based (1, 2)
  const auto s = block_scales_K(KroneckerScales(lambda, gamma, pi, omega), d);
  for (int k = 0; k < d.p2; ++k)
    for (int l = 0; l < d.p2; ++l) {
      CHECK(s.g(d.channel(1, k), d.channel(2, l)) == 0.0);
    }
  CHECK(s.g.sum() > 0.0);
}

TEST_CASE("block_scales_K matches the dense Kronecker assembly for all dims <= (3,3,2)") {
  Rng rng(1234);
  for (int p1 = 1; p1 <= 3; ++p1)
    for (int p2 = 1; p2 <= 3; ++p2)
      for (int m = 0; m <= 2; ++m) {
        const Dims d(p1, p2, m);
        Eigen::VectorXd lambda(p1 * p1), gamma(p2 * p2), pi(m > 0 ? p1 : 0), omega(p2 * m);
        for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda(i) = rng.uniform(0.0, 3.0);
        for (Eigen::Index i = 0; i < gamma.size(); ++i) gamma(i) = rng.uniform(0.0, 3.0);
        for (Eigen::Index i = 0; i < pi.size(); ++i) pi(i) = rng.uniform(0.0, 3.0);
        for (Eigen::Index i = 0; i < omega.size(); ++i) omega(i) = rng.uniform(0.0, 3.0);
        const auto s = block_scales_K(KroneckerScales(lambda, gamma, pi, omega), d);

        const Eigen::VectorXd xg = kron_diag_scales(lambda, gamma);
        for (int h = 0; h < p1; ++h)
          for (int j = 0; j < p1; ++j)
            for (int k = 0; k < p2; ++k)
              for (int l = 0; l < p2; ++l) {
                const double dense = xg((h * p1 + j) * p2 * p2 + k * p2 + l);
                REQUIRE_THAT(s.g(d.channel(h, k), d.channel(j, l)),
                             Catch::Matchers::WithinAbs(dense, 1e-12));
              }
        if (m > 0) {
          const Eigen::VectorXd xf = kron_diag_scales(pi, omega);
          for (int h = 0; h < p1; ++h)
            for (int k = 0; k < p2; ++k)
              for (int i = 0; i < m; ++i) {
                const double dense = xf(h * p2 * m + k * m + i);
                REQUIRE_THAT(s.f(d.channel(h, k), i), Catch::Matchers::WithinAbs(dense, 1e-12));
              }
        }
      }
}

TEST_CASE("block_scales_S identity reshaping") {
  const Dims d(2, 2, 1);
  SECTION("all ones") {
    const auto s = block_scales_S(Eigen::VectorXd::Ones(16 + 4), d);
    CHECK((s.g.array() == 1.0).all());
    CHECK((s.f.array() == 1.0).all());
  }
  SECTION("single zero stays single") {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(20);
    v(5) = 0.0;  // (h,j,k,l) = (0,1,0,1)
    const auto s = block_scales_S(v, d);
    CHECK(s.g(d.channel(0, 0), d.channel(1, 1)) == 0.0);
    CHECK(s.g.sum() + s.f.sum() == 19.0);
  }
  SECTION("random vector matches the index map") {
    Rng rng(3);
    Eigen::VectorXd v(20);
    for (int i = 0; i < 20; ++i) v(i) = rng.uniform(0.0, 1.0);
    const auto s = block_scales_S(v, d);
    for (int h = 0; h < 2; ++h)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) {
            CHECK(s.g(d.channel(h, k), d.channel(j, l)) == v(((h * 2 + j) * 2 + k) * 2 + l));
          }
    for (int h = 0; h < 2; ++h)
      for (int k = 0; k < 2; ++k) {
        CHECK(s.f(d.channel(h, k), 0) == v(16 + d.channel(h, k)));
      }
  }
  CHECK_THROWS_AS(block_scales_S(Eigen::VectorXd::Ones(7), d), std::invalid_argument);
}

TEST_CASE("block_scales_SS constants and counts") {
  const Dims d(3, 2, 2);
  const auto s = block_scales_SS(0.7, 0.3, d);
  CHECK(s.g.size() == 36);
  CHECK(s.f.size() == 12);
  CHECK((s.g.array() == 0.7).all());
  CHECK((s.f.array() == 0.3).all());
  const auto z = block_scales_SS(0.0, 0.0, d);
  CHECK(z.g.sum() == 0.0);
  CHECK(z.f.sum() == 0.0);
  CHECK_THROWS_AS(block_scales_SS(-0.1, 0.0, d), std::invalid_argument);
}

TEST_CASE("block_scales_H hierarchical combination") {
  const Dims d(2, 2, 0);
  SECTION("all twos give ones") {
    const auto s = block_scales_H(Eigen::VectorXd::Constant(4, 2.0), d);
    CHECK((s.g.array() == 1.0).all());
  }
  SECTION("zero lambda annihilates both factor roles") {
    Eigen::VectorXd lambda = Eigen::VectorXd::Ones(4);
    lambda(1) = 0.0;  // (h,j) = (0,1)
    const auto s = block_scales_H(lambda, d);
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) {
        CHECK(s.g(d.channel(0, k), d.channel(1, l)) == 0.0);  // first role
        CHECK(s.g(d.channel(k, 0), d.channel(l, 1)) == 0.0);  // second role
      }
  }
  SECTION("random lambda matches the dense Kronecker assembly") {
    Rng rng(99);
    Eigen::VectorXd lambda(4);
    for (int i = 0; i < 4; ++i) lambda(i) = rng.uniform(0.0, 2.0);
    const auto s = block_scales_H(lambda, d);
    const Eigen::VectorXd x = kron_diag_scales(lambda, lambda);
    for (int h = 0; h < 2; ++h)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) {
            CHECK_THAT(s.g(d.channel(h, k), d.channel(j, l)),
                       Catch::Matchers::WithinAbs(x((h * 2 + j) * 4 + k * 2 + l), 1e-12));
          }
  }
  CHECK_THROWS_AS(block_scales_H(Eigen::VectorXd::Ones(4), Dims(2, 2, 1)), std::invalid_argument);
  CHECK_THROWS_AS(block_scales_H(Eigen::VectorXd::Ones(4), Dims(2, 3, 0)), std::invalid_argument);
}

TEST_CASE("PSD check holds across random shapes at T=50") {
  Rng rng(2024);
  for (int rep = 0; rep < 20; ++rep) {
    const auto k =
        build_stable_spline(KernelShape(rng.uniform(0.05, 0.95), rng.uniform(0.05, 3.0)), 50);
    REQUIRE(k.min_eigenvalue_ratio() >= -1e-10);
  }
}
