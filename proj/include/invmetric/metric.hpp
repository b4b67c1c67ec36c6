#pragma once

// Marginalized second-order metric.
//
//   f(k, q) = 1/2 k^T A k + 1/2 q^T A q + k^T B q + c^T (k + q) + b
//   A = M M^T (PSD), B = -N N^T (NSD)
//
// k is the probe representation and q the gallery one. Smaller f means more
// similar. Pairs are scored with the logistic loss
// log(1 + exp(y f)), y = +1 for matched and -1 for unmatched pairs. Gaussian
// corruption of k is marginalized with the exact per-dimension second
// derivative of that loss.

#include "invmetric/core.hpp"
#include "invmetric/numerics.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace invmetric {

struct MetricParams {
    Matrix M;     // D x r_A
    Matrix N;     // D x r_B
    double bias = 0.0;
    Vector c;     // D, zero unless set explicitly

    Eigen::Index dim() const noexcept { return M.rows(); }
    Matrix A() const { return M * M.transpose(); }
    Matrix B() const { return -(N * N.transpose()); }

    /// M, N i.i.d. normal with scale 1/sqrt(D), bias and c zero.
    static MetricParams random(Eigen::Index dim, Eigen::Index rank_a, Eigen::Index rank_b, Rng& rng) {
        std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        MetricParams p{Matrix(dim, rank_a), Matrix(dim, rank_b), 0.0, Vector::Zero(dim)};
        for (Eigen::Index i = 0; i < p.M.size(); ++i) p.M.data()[i] = nd(rng);
        for (Eigen::Index i = 0; i < p.N.size(); ++i) p.N.data()[i] = nd(rng);
        return p;
    }

    /// Trainable entries (M, N, bias), flattened column-major.
    Vector pack() const {
        Vector v(M.size() + N.size() + 1);
        v.head(M.size()) = M.reshaped();
        v.segment(M.size(), N.size()) = N.reshaped();
        v[v.size() - 1] = bias;
        return v;
    }

    void unpack(const Vector& v) {
        require_dims(v.size() == M.size() + N.size() + 1, "MetricParams::unpack: length mismatch");
        M.reshaped() = v.head(M.size());
        N.reshaped() = v.segment(M.size(), N.size());
        bias = v[v.size() - 1];
    }
};

struct MetricConfig {
    Eigen::Index dim = 400;
    double sigma = 0.01;
    double lambda_a = 1e-8;
    double lambda_b = 1e-7;
    Eigen::Index rank_a = 0;  // 0 = full rank (dim)
    Eigen::Index rank_b = 0;
    int negatives_per_positive = 10;
    int max_iter = 300;
    bool enable_marginalization = true;
    /// Also marginalize corruption of the gallery representation k'.
    bool corrupt_both = false;

    Eigen::Index effective_rank_a() const noexcept { return rank_a > 0 ? rank_a : dim; }
    Eigen::Index effective_rank_b() const noexcept { return rank_b > 0 ? rank_b : dim; }

    void validate() const {
        if (dim <= 0) throw ConfigError("metric: dimension must be positive");
        if (!(sigma >= 0)) throw ConfigError("metric: sigma must be nonnegative");
        if (!(lambda_a >= 0) || !(lambda_b >= 0)) throw ConfigError("metric: penalties must be nonnegative");
        if (rank_a < 0 || rank_b < 0) throw ConfigError("metric: ranks must be nonnegative");
        if (negatives_per_positive <= 0) throw ConfigError("metric: negatives_per_positive must be positive");
        if (max_iter < 0) throw ConfigError("metric: max_iter must be nonnegative");
    }
};

/// Labeled representation pairs: column i of `probe` against column i of
/// `gallery`, label +1 (same identity) or -1 (different).
struct LabeledPairs {
    Matrix probe;    // D x n
    Matrix gallery;  // D x n
    Vector labels;   // n

    Eigen::Index size() const noexcept { return probe.cols(); }

    void validate(Eigen::Index dim) const {
        if (probe.cols() == 0) throw ConfigError("metric: empty pair set");
        require_dims(probe.rows() == dim && gallery.rows() == dim, "metric: representation dimension mismatch");
        require_dims(gallery.cols() == probe.cols() && labels.size() == probe.cols(), "metric: pair count mismatch");
        for (double y : labels)
            if (y != 1.0 && y != -1.0) throw DomainError("metric: labels must be +1 or -1");
    }
};

inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline double logistic(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline double decision_f(const MetricParams& p, const Eigen::Ref<const Vector>& k, const Eigen::Ref<const Vector>& kp) {
    require_dims(k.size() == p.dim() && kp.size() == p.dim(), "decision_f: representation dimension mismatch");
    const Vector mk = p.M.transpose() * k;
    const Vector mkp = p.M.transpose() * kp;
    double f = 0.5 * mk.squaredNorm() + 0.5 * mkp.squaredNorm() - (p.N.transpose() * k).dot(p.N.transpose() * kp) + p.bias;
    if (p.c.size() == p.dim()) f += p.c.dot(k + kp);
    return f;
}

/// Ranking score: the decision function, ascending = more similar.
inline double dissimilarity(const MetricParams& p, const Eigen::Ref<const Vector>& k, const Eigen::Ref<const Vector>& kp) {
    return decision_f(p, k, kp);
}

/// log(1 + exp(y f)), evaluated without overflow.
inline double pair_loss(const MetricParams& p, const Eigen::Ref<const Vector>& k, const Eigen::Ref<const Vector>& kp, double y) {
    if (y != 1.0 && y != -1.0) throw DomainError("metric pair_loss: label must be +1 or -1");
    return softplus(y * decision_f(p, k, kp));
}

/// Exact diagonal of the Hessian of the pair loss with respect to k:
/// g''(yf) (df/dk_d)^2 + y g'(yf) A_dd, where df/dk = Ak + Bk' + c.
inline Vector metric_loss_hessian_diag(const MetricParams& p, const Eigen::Ref<const Vector>& k,
                                       const Eigen::Ref<const Vector>& kp, double y) {
    if (y != 1.0 && y != -1.0) throw DomainError("metric hessian: label must be +1 or -1");
    const double s = logistic(y * decision_f(p, k, kp));
    Vector u = p.M * (p.M.transpose() * k) - p.N * (p.N.transpose() * kp);
    if (p.c.size() == p.dim()) u += p.c;
    const Vector a_diag = p.M.rowwise().squaredNorm();
    return (s * (1.0 - s)) * u.array().square().matrix() + (y * s) * a_diag;
}

/// 1/2 sigma^2 sum_d d^2 loss / dk_d^2.
inline double marginal_penalty_metric(const MetricParams& p, const Eigen::Ref<const Vector>& k,
                                      const Eigen::Ref<const Vector>& kp, double y, double sigma) {
    return 0.5 * sigma * sigma * metric_loss_hessian_diag(p, k, kp, y).sum();
}

/// Full score matrix f(probe_i, gallery_j) for representations stored as columns.
inline Matrix score_matrix(const MetricParams& p, const Matrix& probes, const Matrix& gallery) {
    require_dims(probes.rows() == p.dim() && gallery.rows() == p.dim(), "score_matrix: dimension mismatch");
    const Matrix pm = p.M.transpose() * probes;
    const Matrix gm = p.M.transpose() * gallery;
    const Matrix pn = p.N.transpose() * probes;
    const Matrix gn = p.N.transpose() * gallery;
    Matrix s = -(pn.transpose() * gn);
    s.colwise() += 0.5 * pm.colwise().squaredNorm().transpose();
    s.rowwise() += 0.5 * gm.colwise().squaredNorm();
    s.array() += p.bias;
    if (p.c.size() == p.dim()) {
        s.colwise() += (p.c.transpose() * probes).transpose();
        s.rowwise() += p.c.transpose() * gallery;
    }
    return s;
}

struct MetricObjective {
    double value = 0.0;
    Vector gradient;  // over (M, N, bias), MetricParams::pack layout
};

/// Mean over pairs of (loss + marginalization penalty) plus
/// lambda_A ||A||_F^2 + lambda_B ||B||_F^2, with the analytic gradient.
inline MetricObjective metric_objective(const MetricParams& p, const LabeledPairs& pairs, const MetricConfig& cfg,
                                        bool want_gradient = true) {
    pairs.validate(p.dim());
    const double n = static_cast<double>(pairs.size());
    const Matrix& K = pairs.probe;
    const Matrix& Kp = pairs.gallery;
    const bool has_c = p.c.size() == p.dim();

    const Matrix P = p.M.transpose() * K;
    const Matrix Pp = p.M.transpose() * Kp;
    const Matrix Q = p.N.transpose() * K;
    const Matrix Qp = p.N.transpose() * Kp;

    Vector f = 0.5 * (P.colwise().squaredNorm() + Pp.colwise().squaredNorm()).transpose() -
               (Q.array() * Qp.array()).colwise().sum().matrix().transpose();
    f.array() += p.bias;
    if (has_c) f += (p.c.transpose() * (K + Kp)).transpose();

    const Eigen::Index count = pairs.size();
    Vector s(count), weight_f(count);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) {
        const double t = pairs.labels[i] * f[i];
        s[i] = logistic(t);
        loss += softplus(t);
        weight_f[i] = pairs.labels[i] * s[i];
    }

    const bool marg = cfg.enable_marginalization;
    const double var = cfg.sigma * cfg.sigma;
    const double trace_a = p.M.squaredNorm();
    double penalty = 0.0;

    // Penalty pieces for the corrupted side (x) against the clean side (xo):
    // u = Ax + Bxo + c; penalty = 1/2 var (g'' |u|^2 + y g' trA).
    Matrix grad_M = Matrix::Zero(p.M.rows(), p.M.cols());
    Matrix grad_N = Matrix::Zero(p.N.rows(), p.N.cols());
    double trace_weight = 0.0;  // multiplies d trA / dM = 2M
    const auto add_penalty = [&](const Matrix& X, const Matrix& Xo, const Matrix& PX, const Matrix& QXo) {
        Matrix U = p.M * PX - p.N * QXo;
        if (has_c) U.colwise() += p.c;
        const Vector unorm = U.colwise().squaredNorm().transpose();
        Vector beta(count);
        for (Eigen::Index i = 0; i < count; ++i) {
            const double y = pairs.labels[i];
            const double g2 = s[i] * (1.0 - s[i]);
            const double g3 = g2 * (1.0 - 2.0 * s[i]);
            penalty += 0.5 * var * (g2 * unorm[i] + y * s[i] * trace_a);
            weight_f[i] += 0.5 * var * (g3 * y * unorm[i] + g2 * trace_a);
            beta[i] = var * g2;
            trace_weight += 0.5 * var * y * s[i];
        }
        if (!want_gradient) return;
        const Matrix UB = U * beta.asDiagonal();
        grad_M += UB * PX.transpose() + X * beta.asDiagonal() * (p.M.transpose() * U).transpose();
        grad_N -= UB * QXo.transpose() + Xo * beta.asDiagonal() * (p.N.transpose() * U).transpose();
    };
    if (marg) {
        add_penalty(K, Kp, P, Qp);
        if (cfg.corrupt_both) add_penalty(Kp, K, Pp, Q);
    }

    const Matrix MtM = p.M.transpose() * p.M;
    const Matrix NtN = p.N.transpose() * p.N;
    const double reg = cfg.lambda_a * MtM.squaredNorm() + cfg.lambda_b * NtN.squaredNorm();

    MetricObjective out;
    out.value = (loss + penalty) / n + reg;
    if (!std::isfinite(out.value)) throw DivergenceError("metric objective is not finite");
    if (!want_gradient) return out;

    const Matrix KW = K * weight_f.asDiagonal();
    const Matrix KpW = Kp * weight_f.asDiagonal();
    grad_M += KW * P.transpose() + KpW * Pp.transpose() + 2.0 * trace_weight * p.M;
    grad_N -= KW * Qp.transpose() + KpW * Q.transpose();
    grad_M /= n;
    grad_N /= n;
    grad_M += 4.0 * cfg.lambda_a * p.M * MtM;
    grad_N += 4.0 * cfg.lambda_b * p.N * NtN;

    out.gradient.resize(p.M.size() + p.N.size() + 1);
    out.gradient.head(p.M.size()) = grad_M.reshaped();
    out.gradient.segment(p.M.size(), p.N.size()) = grad_N.reshaped();
    out.gradient[out.gradient.size() - 1] = weight_f.sum() / n;
    if (!out.gradient.allFinite()) throw DivergenceError("metric objective gradient is not finite");
    return out;
}

/// Positive pairs (i, i) and, for each, up to `ratio` distinct negatives
/// (i, j != i) drawn uniformly without replacement.
inline LabeledPairs build_metric_pairs(const Matrix& probe, const Matrix& gallery, int ratio, std::uint64_t seed) {
    require_dims(probe.cols() == gallery.cols() && probe.rows() == gallery.rows(), "build_metric_pairs: shape mismatch");
    const Eigen::Index n = probe.cols();
    if (n < 2) throw ConfigError("metric: need at least two identities to form negative pairs");
    const Eigen::Index negs = std::min<Eigen::Index>(ratio, n - 1);
    auto rng = make_rng(seed, "metric.negatives");

    LabeledPairs out{Matrix(probe.rows(), n * (1 + negs)), Matrix(probe.rows(), n * (1 + negs)), Vector(n * (1 + negs))};
    std::vector<Eigen::Index> others(static_cast<std::size_t>(n - 1));
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        out.probe.col(col) = probe.col(i);
        out.gallery.col(col) = gallery.col(i);
        out.labels[col++] = 1.0;
        std::iota(others.begin(), others.end(), Eigen::Index{0});
        for (auto& j : others)
            if (j >= i) ++j;
        for (Eigen::Index k = 0; k < negs; ++k) {  // partial Fisher-Yates
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), others.size() - 1);
            std::swap(others[static_cast<std::size_t>(k)], others[pick(rng)]);
            out.probe.col(col) = probe.col(i);
            out.gallery.col(col) = gallery.col(others[static_cast<std::size_t>(k)]);
            out.labels[col++] = -1.0;
        }
    }
    return out;
}

struct MetricModel {
    MetricParams params;
    std::vector<double> trace;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
};

/// Minimizes metric_objective over (M, N, bias) with L-BFGS from a seeded
/// random start. `observer` sees every iterate as packed parameters.
inline MetricModel train_metric(const LabeledPairs& pairs, const MetricConfig& cfg, std::uint64_t seed,
                                const IterateObserver& observer = {}) {
    cfg.validate();
    pairs.validate(cfg.dim);
    const bool has_pos = (pairs.labels.array() > 0).any();
    const bool has_neg = (pairs.labels.array() < 0).any();
    if (!has_pos || !has_neg) throw ConfigError("metric: training needs at least one positive and one negative pair");

    auto rng = make_rng(seed, "metric.init");
    MetricModel model;
    model.params = MetricParams::random(cfg.dim, cfg.effective_rank_a(), cfg.effective_rank_b(), rng);
    MetricParams work = model.params;

    const Objective f = [&](const Vector& x, Vector& grad) {
        work.unpack(x);
        auto obj = metric_objective(work, pairs, cfg);
        grad = std::move(obj.gradient);
        return obj.value;
    };
    LbfgsConfig lcfg;
    lcfg.max_iter = cfg.max_iter;
    const auto res = lbfgs_minimize(f, model.params.pack(), lcfg, observer);
    model.params.unpack(res.x);
    model.trace = res.trace;
    model.status = res.status;
    return model;
}

}  // namespace invmetric
