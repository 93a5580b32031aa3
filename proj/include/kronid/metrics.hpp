#pragma once

#include <chrono>
#include <map>

#include "kronid/netgen.hpp"

namespace kronid {

namespace detail {

// 100 * (1 - sqrt(sum_t ||A_t - B_t||^2 / sum_t ||A_t - Abar||^2)),
// Abar the lag-mean of the true coefficients over the compared horizon.
inline double fit_score(const std::vector<Eigen::MatrixXd>& truth,
                        const std::vector<Eigen::MatrixXd>& est, int horizon) {
  if (static_cast<int>(truth.size()) < horizon || static_cast<int>(est.size()) < horizon) {
    throw std::invalid_argument("airf: horizon exceeds available lags");
  }
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(truth[0].rows(), truth[0].cols());
  for (int t = 0; t < horizon; ++t) mean += truth[t];
  mean /= horizon;
  double num = 0.0, den = 0.0;
  for (int t = 0; t < horizon; ++t) {
    num += (truth[t] - est[t]).squaredNorm();
    den += (truth[t] - mean).squaredNorm();
  }
  if (den <= 0.0) {
    throw std::invalid_argument("airf: constant true response (zero denominator)");
  }
  return 100.0 * (1.0 - std::sqrt(num / den));
}

inline int hamming(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("err: support dimension mismatch");
  }
  return (a - b).cwiseAbs().sum();
}

}  // namespace detail

/// Average impulse response fit over the first `horizon` lags; fit(G) alone
/// when the system has no input, otherwise the mean of fit(G) and fit(F).
inline double airf(const GroundTruth& truth, const ImpulseEstimate& est, int horizon) {
  const double g = detail::fit_score(truth.g, est.g, horizon);
  if (truth.dims.m == 0) return g;
  return 0.5 * g + 0.5 * detail::fit_score(truth.f, est.f, horizon);
}

/// Fraction of misspecified edges between elementwise supports. With inputs:
///   |G mask diff| / (2 p1^2 p2^2) + |F mask diff| / (2 p1 p2 m);
/// without inputs the G term alone with denominator p1^2 p2^2.
inline double err_masks(const Eigen::MatrixXi& g_true, const Eigen::MatrixXi& g_est,
                        const Eigen::MatrixXi& f_true, const Eigen::MatrixXi& f_est) {
  const double ng = static_cast<double>(g_true.rows()) * g_true.cols();
  if (f_true.cols() == 0) {
    return detail::hamming(g_true, g_est) / ng;
  }
  const double nf = static_cast<double>(f_true.rows()) * f_true.cols();
  return detail::hamming(g_true, g_est) / (2.0 * ng) + detail::hamming(f_true, f_est) / (2.0 * nf);
}

inline double err(const NetworkSupport& truth, const NetworkSupport& est) {
  return err_masks(truth.g_mask(), est.g_mask(), truth.f_mask(), est.f_mask());
}

// --- Monte Carlo orchestration --------------------------------------------------

struct McProtocol {
  Dims dims{2, 2, 1};
  double density = 0.6;
  int samples = 500;       // N
  int runs = 100;
  std::uint64_t master_seed = 1;
  std::vector<Variant> estimators{Variant::K, Variant::S, Variant::SS};
  EstimatorConfig config;  // variant field overridden per estimator
  int system_order = 20;
  double pole_radius = 0.95;
  double input_band = 0.4;
  double sigma2 = 1.0;

  void validate() const {
    if (runs < 1) throw std::invalid_argument("monte_carlo: runs must be >= 1");
    if (estimators.empty()) throw std::invalid_argument("monte_carlo: no estimators selected");
    for (Variant v : estimators) {
      if (v == Variant::H && (dims.m > 0 || dims.p1 != dims.p2)) {
        throw std::invalid_argument(
            "monte_carlo: estimator H needs a no-input protocol with p1 == p2");
      }
    }
  }
};

struct EstimatorOutcome {
  bool ok = false;
  double airf = 0.0;
  double err = 0.0;
  double nll = 0.0;
  double wall_seconds = 0.0;
  std::string error;
};

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  bool generated = false;  // ground truth + dataset produced
  std::string error;
  std::map<std::string, EstimatorOutcome> outcomes;
};

struct EstimatorSummary {
  int ok = 0;
  int failed = 0;
  double airf_median = 0.0, airf_q1 = 0.0, airf_q3 = 0.0;
  double err_median = 0.0, err_q1 = 0.0, err_q3 = 0.0;
  double nll_median = 0.0;
  double wall_mean_seconds = 0.0;
};

struct McResult {
  std::vector<RunRecord> records;
  std::map<std::string, EstimatorSummary> summary;
};

/// Runs the synthetic protocol: per run draw a support, a stable system and a
/// dataset, then fit every requested estimator and score it. Deterministic
/// given the master seed; runs execute concurrently and failures are recorded
/// rather than fatal.
inline McResult monte_carlo(const McProtocol& proto) {
  proto.validate();
  McResult result;
  result.records.resize(proto.runs);

  parallel_for(proto.runs, [&](int run) {
    RunRecord rec;
    rec.run = run;
    rec.seed = splitmix64(proto.master_seed + 0x1000 * static_cast<std::uint64_t>(run) + 1);
    try {
      const NetworkSupport support =
          random_support(proto.dims, proto.density, splitmix64(rec.seed ^ 0xA));
      const Eigen::VectorXd sigma2 =
          Eigen::VectorXd::Constant(proto.dims.channels(), proto.sigma2);
      const GroundTruth gt = random_system(support, proto.dims, proto.system_order,
                                           proto.pole_radius, splitmix64(rec.seed ^ 0xB), &sigma2);
      InputSpec input;
      input.band = proto.input_band;
      const Dataset data = simulate(gt, proto.samples, input, splitmix64(rec.seed ^ 0xC));
      rec.generated = true;

      for (Variant v : proto.estimators) {
        EstimatorOutcome out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          EstimatorConfig cfg = proto.config;
          cfg.variant = v;
          cfg.seed = splitmix64(rec.seed ^ (0xD0 + static_cast<std::uint64_t>(v)));
          const FitResult fr = fit(data, cfg);
          out.airf = airf(gt, fr.estimate, cfg.truncation);
          out.err = err_masks(gt.support.g_mask(), fr.g_support, gt.support.f_mask(),
                              fr.f_support);
          out.nll = fr.nll_value;
          out.ok = true;
        } catch (const std::exception& e) {
          out.error = e.what();
        }
        out.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.outcomes[variant_name(v)] = out;
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    result.records[run] = std::move(rec);
  });

  for (Variant v : proto.estimators) {
    const std::string name = variant_name(v);
    EstimatorSummary s;
    std::vector<double> airfs, errs, nlls;
    double wall = 0.0;
    for (const auto& rec : result.records) {
      const auto it = rec.outcomes.find(name);
      if (it == rec.outcomes.end() || !it->second.ok) {
        ++s.failed;
        continue;
      }
      ++s.ok;
      airfs.push_back(it->second.airf);
      errs.push_back(it->second.err);
      nlls.push_back(it->second.nll);
      wall += it->second.wall_seconds;
    }
    if (s.ok > 0) {
      s.airf_median = quantile_type7(airfs, 0.5);
      s.airf_q1 = quantile_type7(airfs, 0.25);
      s.airf_q3 = quantile_type7(airfs, 0.75);
      s.err_median = quantile_type7(errs, 0.5);
      s.err_q1 = quantile_type7(errs, 0.25);
      s.err_q3 = quantile_type7(errs, 0.75);
      s.nll_median = quantile_type7(nlls, 0.5);
      s.wall_mean_seconds = wall / s.ok;
    }
    result.summary[name] = s;
  }
  return result;
}

}  // namespace kronid
