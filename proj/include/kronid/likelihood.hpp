#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "kronid/kernel.hpp"
#include "kronid/regressors.hpp"

namespace kronid {

/// Per-channel innovation variances, channel order (h,k) row-major.
struct NoiseModel {
  Eigen::VectorXd sigma2;

  NoiseModel() = default;
  explicit NoiseModel(Eigen::VectorXd s) : sigma2(std::move(s)) {
    if (sigma2.size() == 0 || sigma2.minCoeff() <= 0.0) {
      throw std::invalid_argument("NoiseModel: variances must be positive");
    }
  }
};

/// Truncated predictor impulse responses: g[t](row, col) is the lag-(t+1)
/// coefficient from output channel col to output channel row, f[t](row, i)
/// from input i to channel row.
struct ImpulseEstimate {
  std::vector<Eigen::MatrixXd> g;
  std::vector<Eigen::MatrixXd> f;

  int truncation() const { return static_cast<int>(g.size()); }
};

/// Kernel-independent precomputation shared across likelihood evaluations:
/// regressor Grams C^T C per group, projections C^T y per channel. Building
/// this once makes kernel-shape sweeps cheap.
struct RegressorGram {
  std::shared_ptr<const RegressorSet> regs;
  Eigen::MatrixXd y_plus;               // n x channels, time-reversed stacking
  std::vector<Eigen::MatrixXd> gram;    // per group, q x q with q = (channels+m)*T
  std::vector<Eigen::VectorXd> cty;     // per channel, q
  std::vector<double> yty;              // per channel

  RegressorGram(std::shared_ptr<const RegressorSet> regs_, Eigen::MatrixXd y_plus_)
      : regs(std::move(regs_)), y_plus(std::move(y_plus_)) {
    const Dims& d = regs->dims();
    const int n = regs->samples();
    const int t = regs->truncation();
    const Eigen::Index qa = static_cast<Eigen::Index>(d.channels()) * t;
    const Eigen::Index qb = static_cast<Eigen::Index>(d.m) * t;
    if (y_plus.rows() != n || y_plus.cols() != d.channels()) {
      throw std::invalid_argument("RegressorGram: y_plus shape mismatch");
    }
    gram.resize(regs->group_count());
    for (int g = 0; g < regs->group_count(); ++g) {
      Eigen::MatrixXd s(qa + qb, qa + qb);
      s.topLeftCorner(qa, qa) = regs->a(g).transpose() * regs->a(g);
      if (qb > 0) {
        s.topRightCorner(qa, qb) = regs->a(g).transpose() * regs->b(g);
        s.bottomLeftCorner(qb, qa) = s.topRightCorner(qa, qb).transpose();
        s.bottomRightCorner(qb, qb) = regs->b(g).transpose() * regs->b(g);
      }
      gram[g] = std::move(s);
    }
    cty.resize(d.channels());
    yty.resize(d.channels());
    for (int ch = 0; ch < d.channels(); ++ch) {
      const int g = regs->group_of_channel(ch);
      Eigen::VectorXd c(qa + qb);
      c.head(qa) = regs->a(g).transpose() * y_plus.col(ch);
      if (qb > 0) c.tail(qb) = regs->b(g).transpose() * y_plus.col(ch);
      cty[ch] = std::move(c);
      yty[ch] = y_plus.col(ch).squaredNorm();
    }
  }
};

inline std::shared_ptr<const RegressorGram> make_gram(const Dataset& d, int t,
                                                      RegressorMode mode = RegressorMode::Standard) {
  auto regs = std::make_shared<const RegressorSet>(d, t, mode);
  return std::make_shared<const RegressorGram>(regs, make_y_plus(d));
}

/// Marginal-likelihood engine over the channel-decomposed Gaussian model
///   V_ch = sum_b s_b(ch) * phi_b K_b phi_b^T + sigma2_ch I,
/// with K_b = P for the channels*T output blocks and K_b = R for the m*T
/// input blocks. The full p1p2N x p1p2N covariance is block diagonal across
/// channels, so everything is evaluated channelwise and never materialized.
///
/// When the coefficient count (channels+m)*T is below N, solves run in
/// coefficient space (Woodbury form); otherwise in data space. Both paths
/// produce identical values and both are kept tested against each other.
///
/// Immutable after construction; const methods are safe to call concurrently.
class LikelihoodEngine {
 public:
  enum class Path { Auto, DataSpace, CoeffSpace };

  LikelihoodEngine(std::shared_ptr<const RegressorGram> gram, const BaseKernelMatrix& p,
                   const std::optional<BaseKernelMatrix>& r, NoiseModel noise,
                   Path path = Path::Auto)
      : gram_(std::move(gram)), noise_(std::move(noise)) {
    const RegressorSet& regs = *gram_->regs;
    const Dims& d = regs.dims();
    nch_ = d.channels();
    nblocks_ = nch_ + d.m;
    t_ = regs.truncation();
    n_ = regs.samples();
    if (p.size() != t_) throw std::invalid_argument("LikelihoodEngine: P size != T");
    if (d.m > 0 && (!r || r->size() != t_)) {
      throw std::invalid_argument("LikelihoodEngine: R required with size T when m > 0");
    }
    if (noise_.sigma2.size() != nch_) {
      throw std::invalid_argument("LikelihoodEngine: noise size mismatch");
    }
    coeff_space_ =
        path == Path::Auto ? static_cast<Eigen::Index>(nblocks_) * t_ < n_ : path == Path::CoeffSpace;

    kp_ = p.matrix();
    lp_ = robust_cholesky(kp_, -1);
    lp_inv_ = lp_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(t_, t_));
    if (d.m > 0) {
      kr_ = r->matrix();
      lr_ = robust_cholesky(kr_, -1);
      lr_inv_ = lr_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(t_, t_));
    }

    shat_.resize(regs.group_count());
    for (int g = 0; g < regs.group_count(); ++g) {
      const Eigen::MatrixXd& s = gram_->gram[g];
      Eigen::MatrixXd sh(s.rows(), s.cols());
      for (int b = 0; b < nblocks_; ++b)
        for (int b2 = 0; b2 <= b; ++b2) {
          sh.block(b * t_, b2 * t_, t_, t_) =
              factor_of(b).transpose() * s.block(b * t_, b2 * t_, t_, t_) * factor_of(b2);
          if (b2 != b) {
            sh.block(b2 * t_, b * t_, t_, t_) = sh.block(b * t_, b2 * t_, t_, t_).transpose();
          }
        }
      shat_[g] = std::move(sh);
    }
    if (!coeff_space_) {
      mblocks_.resize(regs.group_count());
      for (int g = 0; g < regs.group_count(); ++g) {
        mblocks_[g].resize(nblocks_);
        for (int b = 0; b < nblocks_; ++b) {
          const Eigen::MatrixXd w = block_columns(g, b) * factor_of(b);
          mblocks_[g][b] = w * w.transpose();
        }
      }
    }
    chat_.resize(nch_);
    for (int ch = 0; ch < nch_; ++ch) {
      Eigen::VectorXd chat(static_cast<Eigen::Index>(nblocks_) * t_);
      for (int b = 0; b < nblocks_; ++b) {
        chat.segment(b * t_, t_) = factor_of(b).transpose() * gram_->cty[ch].segment(b * t_, t_);
      }
      chat_[ch] = std::move(chat);
    }
  }

  bool coefficient_space() const { return coeff_space_; }
  const Dims& dims() const { return gram_->regs->dims(); }
  int samples() const { return n_; }
  int truncation() const { return t_; }

  double nll(const BlockScaleMatrix& s) const {
    double total = 0.0;
    for (int ch = 0; ch < nch_; ++ch) total += channel_eval(ch, s, nullptr);
    return total;
  }

  std::vector<double> nll_terms(const BlockScaleMatrix& s) const {
    std::vector<double> terms(nch_);
    for (int ch = 0; ch < nch_; ++ch) terms[ch] = channel_eval(ch, s, nullptr);
    return terms;
  }

  /// NLL and its gradient with respect to every per-channel block scale.
  double nll_grad(const BlockScaleMatrix& s, BlockScaleMatrix& grad) const {
    grad.g = Eigen::MatrixXd::Zero(nch_, nch_);
    grad.f = Eigen::MatrixXd::Zero(nch_, dims().m);
    double total = 0.0;
    for (int ch = 0; ch < nch_; ++ch) total += channel_eval(ch, s, &grad);
    return total;
  }

  /// Posterior-mean impulse responses; blocks with zero scale are exactly zero.
  /// Coefficient regime: direct ridge solve in the primal variables through an
  /// augmented QR (equal to the dual form, but with sensitivity cond(C) rather
  /// than cond(C)^2). Data regime: the dual form scale * K * phi^T V^{-1} y.
  ImpulseEstimate posterior_mean(const BlockScaleMatrix& s) const {
    ImpulseEstimate est;
    est.g.assign(t_, Eigen::MatrixXd::Zero(nch_, nch_));
    est.f.assign(t_, Eigen::MatrixXd::Zero(nch_, dims().m));
    for (int ch = 0; ch < nch_; ++ch) {
      const int g = gram_->regs->group_of_channel(ch);
      const auto active = active_blocks(ch, s);
      const int na = static_cast<int>(active.size());
      if (na == 0) continue;
      Eigen::VectorXd theta;
      if (coeff_space_) {
        const int qa = na * t_;
        const double sigma = std::sqrt(noise_.sigma2(ch));
        Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n_ + qa, qa);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_ + qa);
        rhs.head(n_) = gram_->y_plus.col(ch);
        for (int ia = 0; ia < na; ++ia) {
          aug.block(0, ia * t_, n_, t_) = block_columns(g, active[ia]);
          aug.block(n_ + ia * t_, ia * t_, t_, t_) =
              (sigma / std::sqrt(scale_of(s, ch, active[ia]))) * factor_inverse_of(active[ia]);
        }
        theta = aug.householderQr().solve(rhs);
      } else {
        const Eigen::VectorXd alpha = channel_alpha(ch, s);
        theta.resize(na * t_);
        for (int ia = 0; ia < na; ++ia) {
          const int b = active[ia];
          theta.segment(ia * t_, t_) =
              scale_of(s, ch, b) * (kernel_of(b) * (block_columns(g, b).transpose() * alpha));
        }
      }
      for (int ia = 0; ia < na; ++ia) {
        const int b = active[ia];
        for (int lag = 0; lag < t_; ++lag) {
          if (b < nch_) {
            est.g[lag](ch, b) = theta(ia * t_ + lag);
          } else {
            est.f[lag](ch, b - nch_) = theta(ia * t_ + lag);
          }
        }
      }
    }
    return est;
  }

 private:
  double channel_eval(int ch, const BlockScaleMatrix& s, BlockScaleMatrix* grad) const {
    return coeff_space_ ? channel_eval_coeff(ch, s, grad) : channel_eval_data(ch, s, grad);
  }

  double channel_eval_coeff(int ch, const BlockScaleMatrix& s, BlockScaleMatrix* grad) const {
    const int g = gram_->regs->group_of_channel(ch);
    const auto active = active_blocks(ch, s);
    const int na = static_cast<int>(active.size());
    const int qa = na * t_;

    Eigen::MatrixXd h(qa, qa);
    Eigen::VectorXd u_ty(qa);
    for (int ia = 0; ia < na; ++ia) {
      const double si = std::sqrt(scale_of(s, ch, active[ia]));
      u_ty.segment(ia * t_, t_) = si * chat_[ch].segment(active[ia] * t_, t_);
      for (int ja = 0; ja <= ia; ++ja) {
        const double sj = std::sqrt(scale_of(s, ch, active[ja]));
        h.block(ia * t_, ja * t_, t_, t_) =
            (si * sj) * shat_[g].block(active[ia] * t_, active[ja] * t_, t_, t_);
        if (ja != ia) {
          h.block(ja * t_, ia * t_, t_, t_) = h.block(ia * t_, ja * t_, t_, t_).transpose();
        }
      }
    }
    // jitter inflates the noise floor consistently across every term
    double sigma2 = noise_.sigma2(ch);
    h.diagonal().array() += sigma2;
    double jitter = 0.0;
    const Eigen::MatrixXd lh = robust_cholesky(h, ch, &jitter);
    sigma2 += jitter;

    double logdet = static_cast<double>(n_ - qa) * std::log(sigma2);
    for (int i = 0; i < qa; ++i) logdet += 2.0 * std::log(lh(i, i));
    const Eigen::VectorXd w = lh.triangularView<Eigen::Lower>().solve(u_ty);
    const double quad = (gram_->yty[ch] - w.squaredNorm()) / sigma2;
    const double value = 0.5 * (logdet + quad);

    if (grad) {
      Eigen::MatrixXd x(qa, t_);
      for (int b = 0; b < nblocks_; ++b) {
        for (int ia = 0; ia < na; ++ia) {
          const double si = std::sqrt(scale_of(s, ch, active[ia]));
          x.middleRows(ia * t_, t_) = si * shat_[g].block(active[ia] * t_, b * t_, t_, t_);
        }
        const Eigen::MatrixXd yb = lh.triangularView<Eigen::Lower>().solve(x);
        const double trace_vinv_mb =
            (shat_[g].block(b * t_, b * t_, t_, t_).trace() - yb.squaredNorm()) / sigma2;
        const Eigen::VectorXd v = (chat_[ch].segment(b * t_, t_) - yb.transpose() * w) / sigma2;
        set_grad(grad, ch, b, 0.5 * (trace_vinv_mb - v.squaredNorm()));
      }
    }
    return value;
  }

  double channel_eval_data(int ch, const BlockScaleMatrix& s, BlockScaleMatrix* grad) const {
    const int g = gram_->regs->group_of_channel(ch);
    const double sigma2 = noise_.sigma2(ch);
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n_, n_);
    for (int b = 0; b < nblocks_; ++b) {
      const double sb = scale_of(s, ch, b);
      if (sb > 0.0) v += sb * mblocks_[g][b];
    }
    v.diagonal().array() += sigma2;
    const Eigen::MatrixXd lv = robust_cholesky(v, ch, nullptr);
    double logdet = 0.0;
    for (int i = 0; i < n_; ++i) logdet += 2.0 * std::log(lv(i, i));
    const Eigen::VectorXd w =
        lv.triangularView<Eigen::Lower>().solve(gram_->y_plus.col(ch));
    const double value = 0.5 * (logdet + w.squaredNorm());

    if (grad) {
      const Eigen::VectorXd alpha = lv.transpose().triangularView<Eigen::Upper>().solve(w);
      for (int b = 0; b < nblocks_; ++b) {
        const Eigen::MatrixXd wb = block_columns(g, b) * factor_of(b);
        const Eigen::MatrixXd z = lv.triangularView<Eigen::Lower>().solve(wb);
        const double quad_b = (wb.transpose() * alpha).squaredNorm();
        set_grad(grad, ch, b, 0.5 * (z.squaredNorm() - quad_b));
      }
    }
    return value;
  }

  // alpha = V^{-1} y via the ridge-regression residual form. The augmented
  // QR keeps the error sensitivity at cond(U) rather than cond(U)^2, which
  // matters when the noise floor sits many orders below the signal.
  Eigen::VectorXd channel_alpha(int ch, const BlockScaleMatrix& s) const {
    const int g = gram_->regs->group_of_channel(ch);
    const double sigma2 = noise_.sigma2(ch);
    const Eigen::VectorXd y = gram_->y_plus.col(ch);
    const auto active = active_blocks(ch, s);
    const int qa = static_cast<int>(active.size()) * t_;
    if (qa == 0) return y / sigma2;
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n_ + qa, qa);
    for (int ia = 0; ia < static_cast<int>(active.size()); ++ia) {
      const double si = std::sqrt(scale_of(s, ch, active[ia]));
      aug.block(0, ia * t_, n_, t_) =
          si * (block_columns(g, active[ia]) * factor_of(active[ia]));
    }
    aug.bottomRows(qa).diagonal().setConstant(std::sqrt(sigma2));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_ + qa);
    rhs.head(n_) = y;
    const Eigen::VectorXd theta = aug.householderQr().solve(rhs);
    return (y - aug.topRows(n_) * theta) / sigma2;
  }

  std::vector<int> active_blocks(int ch, const BlockScaleMatrix& s) const {
    std::vector<int> act;
    act.reserve(nblocks_);
    for (int b = 0; b < nblocks_; ++b) {
      if (scale_of(s, ch, b) > 0.0) act.push_back(b);
    }
    return act;
  }

  double scale_of(const BlockScaleMatrix& s, int ch, int b) const {
    const double v = b < nch_ ? s.g(ch, b) : s.f(ch, b - nch_);
    if (v < 0.0) throw std::invalid_argument("LikelihoodEngine: negative block scale");
    return v;
  }

  void set_grad(BlockScaleMatrix* grad, int ch, int b, double v) const {
    if (b < nch_) {
      grad->g(ch, b) = v;
    } else {
      grad->f(ch, b - nch_) = v;
    }
  }

  const Eigen::MatrixXd& kernel_of(int b) const { return b < nch_ ? kp_ : kr_; }
  const Eigen::MatrixXd& factor_of(int b) const { return b < nch_ ? lp_ : lr_; }
  const Eigen::MatrixXd& factor_inverse_of(int b) const { return b < nch_ ? lp_inv_ : lr_inv_; }

  Eigen::Block<const Eigen::MatrixXd> block_columns(int g, int b) const {
    if (b < nch_) return gram_->regs->a(g).block(0, b * t_, n_, t_);
    return gram_->regs->b(g).block(0, (b - nch_) * t_, n_, t_);
  }

  // Cholesky with the jitter policy: on failure add 1e-10 * mean-diagonal,
  // retry 3 times with 10x escalation, then fail carrying the channel. The
  // applied jitter is reported so callers can fold it into the noise floor
  // and keep every downstream formula consistent.
  static Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& m, int channel,
                                         double* jitter_out = nullptr) {
    if (jitter_out) *jitter_out = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    double jitter = 1e-10 * m.diagonal().mean();
    for (int attempt = 0; attempt < 3; ++attempt) {
      Eigen::MatrixXd mj = m;
      mj.diagonal().array() += jitter;
      llt.compute(mj);
      if (llt.info() == Eigen::Success) {
        if (jitter_out) *jitter_out = jitter;
        return llt.matrixL();
      }
      jitter *= 10.0;
    }
    throw CholeskyError("Cholesky failed after jitter retries", channel);
  }

  std::shared_ptr<const RegressorGram> gram_;
  NoiseModel noise_;
  int nch_ = 0;
  int nblocks_ = 0;
  int t_ = 0;
  int n_ = 0;
  bool coeff_space_ = false;
  Eigen::MatrixXd kp_, kr_;
  Eigen::MatrixXd lp_, lr_;
  Eigen::MatrixXd lp_inv_, lr_inv_;
  std::vector<Eigen::MatrixXd> shat_;
  std::vector<std::vector<Eigen::MatrixXd>> mblocks_;
  std::vector<Eigen::VectorXd> chat_;
};

inline double nll(const BlockScaleMatrix& s, const BaseKernelMatrix& p,
                  const std::optional<BaseKernelMatrix>& r, const RegressorSet& regs,
                  const NoiseModel& noise, const Eigen::MatrixXd& y_plus) {
  auto shared = std::make_shared<const RegressorSet>(regs);
  auto gram = std::make_shared<const RegressorGram>(shared, y_plus);
  return LikelihoodEngine(gram, p, r, noise).nll(s);
}

inline ImpulseEstimate posterior_mean(const BlockScaleMatrix& s, const BaseKernelMatrix& p,
                                      const std::optional<BaseKernelMatrix>& r,
                                      const RegressorSet& regs, const NoiseModel& noise,
                                      const Eigen::MatrixXd& y_plus) {
  auto shared = std::make_shared<const RegressorSet>(regs);
  auto gram = std::make_shared<const RegressorGram>(shared, y_plus);
  return LikelihoodEngine(gram, p, r, noise).posterior_mean(s);
}

}  // namespace kronid
