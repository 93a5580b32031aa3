#pragma once

#include <complex>

#include "kronid/hyperopt.hpp"

namespace kronid {

/// Ground-truth system for the synthetic protocol: truncated impulse-response
/// coefficients of G_TR(z) and F_TR(z), the Kronecker support they respect,
/// and the innovation variances used for simulation.
struct GroundTruth {
  std::vector<Eigen::MatrixXd> g;  // t_sim lag matrices, channels x channels
  std::vector<Eigen::MatrixXd> f;  // t_sim lag matrices, channels x m
  NetworkSupport support;
  NoiseModel noise;
  Dims dims;
  std::uint64_t seed = 0;

  int t_sim() const { return static_cast<int>(g.size()); }
};

/// Bernoulli(density) adjacency factors, each resampled until it has at
/// least one nonzero entry.
inline NetworkSupport random_support(const Dims& d, double density, std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw std::invalid_argument("random_support: density must lie in (0, 1]");
  }
  Rng rng(seed);
  const auto draw = [&](int rows, int cols) {
    Eigen::MatrixXi m(rows, cols);
    do {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(density) ? 1 : 0;
    } while (m.sum() == 0);
    return m;
  };
  NetworkSupport s;
  s.e1 = draw(d.p1, d.p1);
  s.e2 = draw(d.p2, d.p2);
  s.a1 = d.m > 0 ? draw(d.p1, 1) : Eigen::MatrixXi::Zero(d.p1, 1);
  s.a2 = d.m > 0 ? draw(d.p2, d.m) : Eigen::MatrixXi::Zero(d.p2, 0);
  return s;
}

namespace detail {

inline double spectral_radius_dense(const Eigen::MatrixXd& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

// Impulse response h_t = c^T A^{t-1} b of a random strictly causal state
// space with spectral radius drawn from [0.5, pole_radius].
inline Eigen::VectorXd random_entry_impulse(Rng& rng, int order, double pole_radius, int t_sim) {
  Eigen::MatrixXd a;
  double rho = 0.0;
  do {
    a = rng.normal_matrix(order, order) / std::sqrt(static_cast<double>(order));
    rho = spectral_radius_dense(a);
  } while (rho < 1e-12);
  a *= rng.uniform(0.5, pole_radius) / rho;
  const Eigen::VectorXd b = rng.normal_vector(order);
  const Eigen::VectorXd c = rng.normal_vector(order);
  Eigen::VectorXd h(t_sim);
  Eigen::VectorXd state = b;
  for (int t = 0; t < t_sim; ++t) {
    h(t) = c.dot(state);
    state = a * state;
  }
  return h;
}

// Growth-rate estimate of the spectral radius of the block companion matrix
// of y(t) = sum_tau G_tau y(t-tau): power iteration on the full companion
// state (the whole lag history), matrix-free and deterministic.
inline double var_spectral_radius(const std::vector<Eigen::MatrixXd>& lags, double scale) {
  const int t_sim = static_cast<int>(lags.size());
  if (t_sim == 0) return 0.0;
  const int nch = static_cast<int>(lags[0].rows());
  const int warmup = 200;
  const int window = 400;
  double best = 0.0;
  for (std::uint64_t start = 0; start < 2; ++start) {
    Rng rng = Rng::child(0x5eed5eedULL, start);
    std::vector<Eigen::VectorXd> hist(t_sim);
    double total_sq = 0.0;
    for (auto& v : hist) {
      v = rng.normal_vector(nch);
      total_sq += v.squaredNorm();
    }
    const double init_norm = std::sqrt(total_sq);
    for (auto& v : hist) v /= init_norm;
    double log_growth = 0.0;
    for (int step = 0; step < warmup + window; ++step) {
      Eigen::VectorXd next = Eigen::VectorXd::Zero(nch);
      for (int tau = 0; tau < t_sim; ++tau) {
        next.noalias() += scale * (lags[tau] * hist[tau]);
      }
      // shift the companion state and renormalize it as a whole
      double norm_sq = next.squaredNorm();
      for (int tau = 0; tau < t_sim - 1; ++tau) norm_sq += hist[tau].squaredNorm();
      for (int tau = t_sim - 1; tau > 0; --tau) hist[tau] = std::move(hist[tau - 1]);
      hist[0] = std::move(next);
      const double norm = std::sqrt(norm_sq);
      if (norm < 1e-290) return 0.0;
      if (step >= warmup) log_growth += std::log(norm);
      for (auto& v : hist) v /= norm;
    }
    best = std::max(best, std::exp(log_growth / window));
  }
  return best;
}

}  // namespace detail

/// Random sparse Kronecker ground truth: every in-support scalar entry is the
/// truncated impulse response of a random order-`order` system with poles
/// inside pole_radius, then G_TR is globally scaled by the largest c <= 1
/// keeping the closed-loop companion spectral radius at or below 0.95.
/// Systems needing c < 0.1 are rejected and resampled.
inline GroundTruth random_system(const NetworkSupport& support, const Dims& d, int order,
                                 double pole_radius, std::uint64_t seed,
                                 const Eigen::VectorXd* sigma2 = nullptr, int t_sim = 200) {
  if (order < 1) throw std::invalid_argument("random_system: order must be >= 1");
  if (!(pole_radius > 0.0 && pole_radius < 1.0)) {
    throw std::invalid_argument("random_system: pole_radius must lie in (0, 1)");
  }
  const Eigen::MatrixXi g_mask = support.g_mask();
  const Eigen::MatrixXi f_mask = d.m > 0 ? support.f_mask() : Eigen::MatrixXi(d.channels(), 0);

  for (int attempt = 0; attempt < 50; ++attempt) {
    Rng rng = Rng::child(seed, static_cast<std::uint64_t>(attempt));
    GroundTruth gt;
    gt.dims = d;
    gt.seed = seed;
    gt.support = support;
    gt.g.assign(t_sim, Eigen::MatrixXd::Zero(d.channels(), d.channels()));
    gt.f.assign(t_sim, Eigen::MatrixXd::Zero(d.channels(), d.m));
    for (int r = 0; r < d.channels(); ++r)
      for (int c = 0; c < d.channels(); ++c) {
        if (g_mask(r, c) == 0) continue;
        const Eigen::VectorXd h = detail::random_entry_impulse(rng, order, pole_radius, t_sim);
        for (int t = 0; t < t_sim; ++t) gt.g[t](r, c) = h(t);
      }
    for (int r = 0; r < d.channels(); ++r)
      for (int i = 0; i < d.m; ++i) {
        if (f_mask(r, i) == 0) continue;
        const Eigen::VectorXd h = detail::random_entry_impulse(rng, order, pole_radius, t_sim);
        for (int t = 0; t < t_sim; ++t) gt.f[t](r, i) = h(t);
      }

    double scale = 1.0;
    if (detail::var_spectral_radius(gt.g, 1.0) > 0.95) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        (detail::var_spectral_radius(gt.g, mid) <= 0.95 ? lo : hi) = mid;
      }
      scale = lo;
    }
    if (scale < 0.1) continue;
    if (scale < 1.0) {
      for (auto& lag : gt.g) lag *= scale;
    }
    gt.noise = NoiseModel(sigma2 ? *sigma2 : Eigen::VectorXd::Ones(d.channels()));
    return gt;
  }
  throw std::runtime_error("random_system: rejection limit exceeded (unstabilizable draws)");
}

/// Order-8 Butterworth lowpass (bilinear transform), cutoff as a fraction of
/// the Nyquist frequency. Cascade of biquads, zero initial state.
class ButterworthLowpass {
 public:
  explicit ButterworthLowpass(double cutoff) {
    if (!(cutoff > 0.0 && cutoff < 1.0)) {
      throw std::invalid_argument("ButterworthLowpass: cutoff must lie in (0, 1)");
    }
    const double warped = std::tan(M_PI * cutoff / 2.0);
    const int n = 8;
    for (int k = 0; k < n / 2; ++k) {
      const double phi = M_PI / 2.0 + M_PI * (2.0 * k + 1.0) / (2.0 * n);
      const double re = warped * std::cos(phi);
      const double r2 = warped * warped;
      const double d0 = 1.0 - 2.0 * re + r2;
      Biquad s;
      s.b0 = r2 / d0;
      s.b1 = 2.0 * r2 / d0;
      s.b2 = r2 / d0;
      s.a1 = (2.0 * r2 - 2.0) / d0;
      s.a2 = (1.0 + 2.0 * re + r2) / d0;
      sections_[k] = s;
    }
  }

  Eigen::VectorXd filter(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = x;
    for (const auto& s : sections_) {
      double z1 = 0.0, z2 = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double in = y(i);
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        y(i) = out;
      }
    }
    return y;
  }

  // |H(e^{i omega})| for verification against the design targets.
  double gain(double omega) const {
    const std::complex<double> z = std::polar(1.0, -omega);
    std::complex<double> h(1.0, 0.0);
    for (const auto& s : sections_) {
      h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
    }
    return std::abs(h);
  }

 private:
  struct Biquad {
    double b0 = 0, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  };
  std::array<Biquad, 4> sections_;
};

struct InputSpec {
  double band = 0.4;  // lowpass cutoff as fraction of Nyquist; >= 1 disables
};

/// Simulates the closed-loop recursion with band-limited unit-variance
/// Gaussian input and per-channel Gaussian innovations; the first `burn_in`
/// samples are discarded.
inline Dataset simulate(const GroundTruth& gt, int n, const InputSpec& input, std::uint64_t seed,
                        int burn_in = 200) {
  if (n < 1) throw std::invalid_argument("simulate: N must be >= 1");
  const Dims& d = gt.dims;
  const int total = n + burn_in;
  const int t_sim = gt.t_sim();
  Rng rng(seed);

  Eigen::MatrixXd u(total, d.m);
  if (d.m > 0) {
    std::optional<ButterworthLowpass> lp;
    if (input.band < 1.0) lp.emplace(input.band);
    for (int i = 0; i < d.m; ++i) {
      Eigen::VectorXd w(total);
      for (int t = 0; t < total; ++t) w(t) = rng.normal();
      if (lp) w = lp->filter(w);
      const double sd = std::sqrt(w.squaredNorm() / total);
      u.col(i) = w / (sd > 1e-300 ? sd : 1.0);
    }
  }

  Eigen::MatrixXd y(total, d.channels());
  Eigen::VectorXd sigma = gt.noise.sigma2.cwiseSqrt();
  for (int t = 0; t < total; ++t) {
    Eigen::VectorXd acc(d.channels());
    for (int ch = 0; ch < d.channels(); ++ch) acc(ch) = sigma(ch) * rng.normal();
    const int maxlag = std::min(t, t_sim);
    for (int tau = 1; tau <= maxlag; ++tau) {
      acc.noalias() += gt.g[tau - 1] * y.row(t - tau).transpose();
      if (d.m > 0) acc.noalias() += gt.f[tau - 1] * u.row(t - tau).transpose();
    }
    if (!acc.allFinite() || acc.cwiseAbs().maxCoeff() > 1e12) {
      throw std::runtime_error("simulate: numerical overflow (seed " + std::to_string(seed) + ")");
    }
    y.row(t) = acc.transpose();
  }
  return Dataset(y.bottomRows(n), u.bottomRows(n), d);
}

}  // namespace kronid
