#pragma once

#include <cmath>
#include <stdexcept>

#include "kronid/common.hpp"

namespace kronid {

/// Shape hyperparameters of the modulated stable-spline kernel.
/// beta tunes the decay rate, omega0 the frequency content.
struct KernelShape {
  double beta;
  double omega0;

  KernelShape(double beta_, double omega0_) : beta(beta_), omega0(omega0_) {
    if (!(beta > 0.0 && beta < 1.0)) {
      throw std::invalid_argument("KernelShape: beta must lie in (0,1)");
    }
    if (!(omega0 > 0.0 && omega0 < M_PI)) {
      throw std::invalid_argument("KernelShape: omega0 must lie in (0,pi)");
    }
  }
};

/// Dense T x T stable-spline kernel matrix over lag indices 1..T.
/// Symmetric by construction; the diagonal decays as exp(-3*beta*t)/3.
class BaseKernelMatrix {
 public:
  BaseKernelMatrix(Eigen::MatrixXd entries, KernelShape shape)
      : entries_(std::move(entries)), shape_(shape) {}

  const Eigen::MatrixXd& matrix() const { return entries_; }
  const KernelShape& shape() const { return shape_; }
  int size() const { return static_cast<int>(entries_.rows()); }

  // Smallest eigenvalue relative to the trace; >= -1e-10 for valid kernels.
  double min_eigenvalue_ratio() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
    const double tr = entries_.trace();
    return es.eigenvalues().minCoeff() / (tr > 0.0 ? tr : 1.0);
  }

 private:
  Eigen::MatrixXd entries_;
  KernelShape shape_;
};

inline double stable_spline_entry(const KernelShape& shape, int t, int s) {
  const double b = shape.beta;
  const int mx = std::max(t, s);
  const double decay =
      std::exp(-b * (t + s)) * std::exp(-b * mx) / 2.0 - std::exp(-3.0 * b * mx) / 6.0;
  return decay * std::cos(shape.omega0 * (t - s));
}

inline BaseKernelMatrix build_stable_spline(const KernelShape& shape, int T) {
  if (T < 1) throw std::invalid_argument("build_stable_spline: T must be >= 1");
  Eigen::MatrixXd k(T, T);
  for (int t = 1; t <= T; ++t) {
    for (int s = 1; s <= t; ++s) {
      const double v = stable_spline_entry(shape, t, s);
      k(t - 1, s - 1) = v;
      k(s - 1, t - 1) = v;
    }
  }
  return BaseKernelMatrix(std::move(k), shape);
}

/// Harmonic combination a*b/(a+b); 0 by continuity when a = b = 0.
inline double effective_block_scale(double a, double b) {
  if (a < 0.0 || b < 0.0) {
    throw std::invalid_argument("effective_block_scale: negative input");
  }
  if (a == 0.0 || b == 0.0) return 0.0;
  return a * b / (a + b);
}

/// ARD scale vectors: diagonals of Lambda (p1^2, pair (h,j) row-major),
/// Gamma (p2^2, pair (k,l) row-major), Pi (p1), Omega (p2*m, (k,i) row-major).
struct KroneckerScales {
  Eigen::VectorXd lambda;
  Eigen::VectorXd gamma;
  Eigen::VectorXd pi;
  Eigen::VectorXd omega;

  KroneckerScales() = default;
  KroneckerScales(Eigen::VectorXd lambda_, Eigen::VectorXd gamma_, Eigen::VectorXd pi_,
                  Eigen::VectorXd omega_)
      : lambda(std::move(lambda_)),
        gamma(std::move(gamma_)),
        pi(std::move(pi_)),
        omega(std::move(omega_)) {
    for (const auto* v : {&lambda, &gamma, &pi, &omega}) {
      if (v->size() > 0 && v->minCoeff() < 0.0) {
        throw std::invalid_argument("KroneckerScales: entries must be nonnegative");
      }
    }
  }

  void validate_dims(const Dims& d) const {
    const bool pi_ok = pi.size() == d.p1 || (d.m == 0 && pi.size() == 0);
    const bool ok = lambda.size() == static_cast<Eigen::Index>(d.p1) * d.p1 &&
                    gamma.size() == static_cast<Eigen::Index>(d.p2) * d.p2 && pi_ok &&
                    omega.size() == static_cast<Eigen::Index>(d.p2) * d.m;
    if (!ok) throw std::invalid_argument("KroneckerScales: size mismatch with dims");
  }
};

/// Effective per-block prior scales. g(row, col) multiplies the base kernel P
/// for the impulse-response block from input block col = (j-1)*p2+l to output
/// channel row = (h-1)*p2+k; f(row, i) plays the same role for input i and R.
struct BlockScaleMatrix {
  Eigen::MatrixXd g;  // channels() x channels()
  Eigen::MatrixXd f;  // channels() x m
};

inline BlockScaleMatrix block_scales_K(const KroneckerScales& xi, const Dims& d) {
  xi.validate_dims(d);
  BlockScaleMatrix out;
  out.g.resize(d.channels(), d.channels());
  out.f.resize(d.channels(), d.m);
  for (int h = 0; h < d.p1; ++h) {
    for (int k = 0; k < d.p2; ++k) {
      const int row = d.channel(h, k);
      for (int j = 0; j < d.p1; ++j) {
        for (int l = 0; l < d.p2; ++l) {
          out.g(row, d.channel(j, l)) =
              effective_block_scale(xi.lambda(h * d.p1 + j), xi.gamma(k * d.p2 + l));
        }
      }
      for (int i = 0; i < d.m; ++i) {
        out.f(row, i) = effective_block_scale(xi.pi(h), xi.omega(k * d.m + i));
      }
    }
  }
  return out;
}

/// Unstructured per-block scales lambda_{hjkl}, pi_{hki}, stacked with
/// (h,j,k,l) respectively (h,k,i) row-major. No harmonic combination.
inline BlockScaleMatrix block_scales_S(const Eigen::VectorXd& scales, const Dims& d) {
  const int ng = d.p1 * d.p1 * d.p2 * d.p2;
  const int nf = d.channels() * d.m;
  if (scales.size() != ng + nf) {
    throw std::invalid_argument("block_scales_S: scale vector size mismatch");
  }
  if (ng + nf > 0 && scales.minCoeff() < 0.0) {
    throw std::invalid_argument("block_scales_S: negative scale");
  }
  BlockScaleMatrix out;
  out.g.resize(d.channels(), d.channels());
  out.f.resize(d.channels(), d.m);
  for (int h = 0; h < d.p1; ++h)
    for (int j = 0; j < d.p1; ++j)
      for (int k = 0; k < d.p2; ++k)
        for (int l = 0; l < d.p2; ++l) {
          const int idx = ((h * d.p1 + j) * d.p2 + k) * d.p2 + l;
          out.g(d.channel(h, k), d.channel(j, l)) = scales(idx);
        }
  for (int h = 0; h < d.p1; ++h)
    for (int k = 0; k < d.p2; ++k)
      for (int i = 0; i < d.m; ++i) {
        out.f(d.channel(h, k), i) = scales(ng + d.channel(h, k) * d.m + i);
      }
  return out;
}

/// Single shared scale per kernel: lambda for every G block, pi for every F block.
inline BlockScaleMatrix block_scales_SS(double lambda, double pi, const Dims& d) {
  if (lambda < 0.0 || pi < 0.0) {
    throw std::invalid_argument("block_scales_SS: negative scale");
  }
  BlockScaleMatrix out;
  out.g = Eigen::MatrixXd::Constant(d.channels(), d.channels(), lambda);
  out.f = Eigen::MatrixXd::Constant(d.channels(), d.m, pi);
  return out;
}

/// Hierarchical kernel: p1 = p2, no input; block scale is the harmonic
/// combination of lambda_{hj} and lambda_{kl} from the same initiator.
inline BlockScaleMatrix block_scales_H(const Eigen::VectorXd& lambda, const Dims& d) {
  if (d.p1 != d.p2 || d.m != 0) {
    throw std::invalid_argument("block_scales_H: requires p1 == p2 and m == 0");
  }
  if (lambda.size() != static_cast<Eigen::Index>(d.p1) * d.p1) {
    throw std::invalid_argument("block_scales_H: lambda size mismatch");
  }
  if (lambda.size() > 0 && lambda.minCoeff() < 0.0) {
    throw std::invalid_argument("block_scales_H: negative scale");
  }
  BlockScaleMatrix out;
  out.g.resize(d.channels(), d.channels());
  out.f.resize(d.channels(), 0);
  for (int h = 0; h < d.p1; ++h)
    for (int k = 0; k < d.p2; ++k)
      for (int j = 0; j < d.p1; ++j)
        for (int l = 0; l < d.p2; ++l) {
          out.g(d.channel(h, k), d.channel(j, l)) =
              effective_block_scale(lambda(h * d.p1 + j), lambda(k * d.p1 + l));
        }
  return out;
}

}  // namespace kronid
