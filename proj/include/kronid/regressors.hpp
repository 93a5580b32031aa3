#pragma once

#include <memory>
#include <vector>

#include "kronid/dataset.hpp"

namespace kronid {

enum class RegressorMode { Standard, SpatioTemporal };

/// Truncated Toeplitz regression matrices. Row s (0-based) predicts
/// y(N - s); g-block (j,l) occupies columns [(j*p2+l)*T, ...+T) of A with
/// lag n = column offset + 1; f-block i occupies columns [i*T, ...+T) of B.
/// Indices referencing time <= 0 are zero (zero initial conditions).
///
/// In standard mode every channel shares one (A, B) pair. In spatio-temporal
/// mode channels of output block h share group h, where input blocks j < h
/// (and input components of period position < h) gain one lag of lead,
/// i.e. use y(N - s - n + 2) instead of y(N - s - n + 1).
class RegressorSet {
 public:
  RegressorSet(const Dataset& d, int T, RegressorMode mode) : dims_(d.dims), t_(T), mode_(mode) {
    if (T < 1) throw std::invalid_argument("build_regressors: T must be >= 1");
    const int n = d.samples();
    if (mode == RegressorMode::SpatioTemporal && dims_.m > 0 && dims_.m % dims_.p1 != 0) {
      throw std::invalid_argument(
          "build_regressors: spatio-temporal mode requires m divisible by p1");
    }
    const int groups = mode == RegressorMode::Standard ? 1 : dims_.p1;
    a_.reserve(groups);
    b_.reserve(groups);
    for (int g = 0; g < groups; ++g) {
      a_.push_back(build_a(d, g));
      b_.push_back(build_b(d, g));
    }
    n_ = n;
  }

  const Dims& dims() const { return dims_; }
  int truncation() const { return t_; }
  int samples() const { return n_; }
  RegressorMode mode() const { return mode_; }
  int group_count() const { return static_cast<int>(a_.size()); }

  // Regressor group used by channel (h*p2 + k).
  int group_of_channel(int channel) const {
    return mode_ == RegressorMode::Standard ? 0 : channel / dims_.p2;
  }

  const Eigen::MatrixXd& a(int group) const { return a_[group]; }
  const Eigen::MatrixXd& b(int group) const { return b_[group]; }
  const Eigen::MatrixXd& a_for_channel(int channel) const { return a_[group_of_channel(channel)]; }
  const Eigen::MatrixXd& b_for_channel(int channel) const { return b_[group_of_channel(channel)]; }

  // Drops the rows predicting the k earliest outputs y(1..k), the ones most
  // affected by the zero-initial-condition truncation.
  void discard_transient(int k) {
    if (k < 0 || k >= n_) throw std::invalid_argument("discard: k out of range");
    if (k == 0) return;
    const int keep = n_ - k;
    for (auto& m : a_) m = m.topRows(keep).eval();
    for (auto& m : b_) m = m.topRows(keep).eval();
    n_ = keep;
  }

 private:
  // value of series column c at 1-based time tau, zero outside 1..N
  static double at(const Eigen::MatrixXd& series, int tau, int c) {
    if (tau < 1 || tau > series.rows()) return 0.0;
    return series(tau - 1, c);
  }

  Eigen::MatrixXd build_a(const Dataset& d, int group) const {
    const int n = d.samples();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dims_.channels()) * t_);
    for (int j = 0; j < dims_.p1; ++j) {
      const bool lead = mode_ == RegressorMode::SpatioTemporal && j < group;
      for (int l = 0; l < dims_.p2; ++l) {
        const int col0 = d.dims.channel(j, l) * t_;
        for (int s = 1; s <= n; ++s)
          for (int lag = 1; lag <= t_; ++lag) {
            const int tau = n - s - lag + (lead ? 2 : 1);
            a(s - 1, col0 + lag - 1) = at(d.y, tau, d.dims.channel(j, l));
          }
      }
    }
    return a;
  }

  Eigen::MatrixXd build_b(const Dataset& d, int group) const {
    const int n = d.samples();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dims_.m) * t_);
    const int m_tilde = mode_ == RegressorMode::SpatioTemporal && dims_.m > 0 ? dims_.m / dims_.p1 : 0;
    for (int i = 0; i < dims_.m; ++i) {
      const bool lead = mode_ == RegressorMode::SpatioTemporal && (i / m_tilde) < group;
      const int col0 = i * t_;
      for (int s = 1; s <= n; ++s)
        for (int lag = 1; lag <= t_; ++lag) {
          const int tau = n - s - lag + (lead ? 2 : 1);
          b(s - 1, col0 + lag - 1) = at(d.u, tau, i);
        }
    }
    return b;
  }

  Dims dims_;
  int t_;
  int n_ = 0;
  RegressorMode mode_;
  std::vector<Eigen::MatrixXd> a_;
  std::vector<Eigen::MatrixXd> b_;
};

inline RegressorSet build_regressors(const Dataset& d, int T,
                                     RegressorMode mode = RegressorMode::Standard) {
  return RegressorSet(d, T, mode);
}

/// Time-reversed output stacking: column ch of the result is
/// [y_ch(N), ..., y_ch(1)]^T.
inline Eigen::MatrixXd make_y_plus(const Dataset& d) {
  return d.y.colwise().reverse();
}

}  // namespace kronid
