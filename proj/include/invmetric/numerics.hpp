#pragma once

// L-BFGS with a strong-Wolfe line search, finite-difference oracles and PCA.

#include "invmetric/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace invmetric {

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Vector& x, Vector& grad)>;
/// Value-only function, used by the finite-difference oracles.
using ScalarFunction = std::function<double(const Vector& x)>;

struct LbfgsConfig {
    int memory = 10;
    int max_iter = 300;
    double grad_tol = 1e-8;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search_evals = 30;

    void validate() const {
        if (memory < 1) throw ConfigError("L-BFGS memory must be at least 1");
        if (max_iter < 0) throw ConfigError("L-BFGS max_iter must be nonnegative");
        if (!(grad_tol > 0)) throw ConfigError("L-BFGS grad_tol must be positive");
        if (!(c1 > 0 && c1 < c2 && c2 < 1)) throw ConfigError("strong-Wolfe constants need 0 < c1 < c2 < 1");
        if (max_line_search_evals < 1) throw ConfigError("line search needs at least one evaluation");
    }
};

enum class LbfgsStatus { MaxIterations, GradientTolerance, LineSearchFailed };

inline const char* to_string(LbfgsStatus s) {
    switch (s) {
        case LbfgsStatus::MaxIterations: return "max_iterations";
        case LbfgsStatus::GradientTolerance: return "gradient_tolerance";
        case LbfgsStatus::LineSearchFailed: return "line_search_failed";
    }
    return "unknown";
}

struct LbfgsResult {
    Vector x;
    double value = 0.0;
    /// Objective at x0 followed by the objective after every accepted step.
    std::vector<double> trace;
    int iterations = 0;
    int evaluations = 0;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
};

/// Called with (iteration, x, f) for the starting point (iteration 0) and
/// after every accepted step.
using IterateObserver = std::function<void(int, const Vector&, double)>;

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb); falls
// back to bisection when the cubic has no real minimizer.
inline double cubic_minimizer(double a, double fa, double ga, double b, double fb, double gb) {
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    if (!(disc >= 0) || !std::isfinite(disc)) return 0.5 * (a + b);
    const double d2 = (b > a ? 1.0 : -1.0) * std::sqrt(disc);
    const double denom = gb - ga + 2.0 * d2;
    if (denom == 0 || !std::isfinite(denom)) return 0.5 * (a + b);
    return b - (b - a) * (gb + d2 - d1) / denom;
}

struct LinePoint {
    double alpha;
    double f;
    double df;
    Vector g;
};

class StrongWolfeSearch {
public:
    StrongWolfeSearch(const Objective& f, const Vector& x, const Vector& dir, double f0, double df0, const LbfgsConfig& cfg)
        : f_(f), x_(x), dir_(dir), f0_(f0), df0_(df0), cfg_(cfg) {}

    std::optional<LinePoint> run(double alpha_init) {
        LinePoint prev{0.0, f0_, df0_, Vector()};
        double alpha = alpha_init;
        for (int i = 0; evals_ < cfg_.max_line_search_evals; ++i) {
            LinePoint cur = eval(alpha);
            if (!std::isfinite(cur.f) || !cur.g.allFinite()) {
                alpha = 0.5 * (prev.alpha + alpha);  // backtrack out of the non-finite region
                continue;
            }
            if (cur.f > f0_ + cfg_.c1 * alpha * df0_ || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur);
            if (std::abs(cur.df) <= -cfg_.c2 * df0_) return cur;
            if (cur.df >= 0) return zoom(cur, prev);
            prev = std::move(cur);
            alpha *= 2.0;
        }
        return std::nullopt;
    }

    int evaluations() const noexcept { return evals_; }

private:
    LinePoint eval(double alpha) {
        ++evals_;
        LinePoint p{alpha, 0.0, 0.0, Vector(x_.size())};
        p.f = f_(x_ + alpha * dir_, p.g);
        p.df = p.g.dot(dir_);
        return p;
    }

    std::optional<LinePoint> zoom(LinePoint lo, LinePoint hi) {
        while (evals_ < cfg_.max_line_search_evals) {
            const double left = std::min(lo.alpha, hi.alpha);
            const double right = std::max(lo.alpha, hi.alpha);
            const double width = right - left;
            if (width <= std::numeric_limits<double>::epsilon() * std::max(1.0, right)) break;
            double alpha = cubic_minimizer(lo.alpha, lo.f, lo.df, hi.alpha, hi.f, hi.df);
            alpha = std::clamp(alpha, left + 0.1 * width, right - 0.1 * width);
            LinePoint cur = eval(alpha);
            if (!std::isfinite(cur.f) || cur.f > f0_ + cfg_.c1 * alpha * df0_ || cur.f >= lo.f) {
                hi = std::move(cur);
            } else {
                if (std::abs(cur.df) <= -cfg_.c2 * df0_) return cur;
                if (cur.df * (hi.alpha - lo.alpha) >= 0) hi = lo;
                lo = std::move(cur);
            }
        }
        // Out of budget: accept the best sufficient-decrease point, if any.
        if (lo.alpha > 0 && lo.f < f0_) return lo;
        return std::nullopt;
    }

    const Objective& f_;
    const Vector& x_;
    const Vector& dir_;
    double f0_;
    double df0_;
    const LbfgsConfig& cfg_;
    int evals_ = 0;
};

}  // namespace detail

/// Limited-memory BFGS. Terminates after `max_iter` accepted steps, when the
/// gradient infinity-norm drops to `grad_tol`, or when the line search fails
/// (reported in the status, not thrown).
inline LbfgsResult lbfgs_minimize(const Objective& f, const Vector& x0, const LbfgsConfig& cfg = {},
                                  const IterateObserver& observer = {}) {
    cfg.validate();
    LbfgsResult res;
    res.x = x0;
    Vector g(x0.size());
    double fx = f(res.x, g);
    res.evaluations = 1;
    if (!std::isfinite(fx) || !g.allFinite()) throw DivergenceError("objective is not finite at the starting point");
    res.trace.push_back(fx);
    if (observer) observer(0, res.x, fx);

    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;
    std::vector<double> alpha_buf(static_cast<std::size_t>(cfg.memory));

    for (;;) {
        if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
            res.status = LbfgsStatus::GradientTolerance;
            break;
        }
        if (res.iterations >= cfg.max_iter) {
            res.status = LbfgsStatus::MaxIterations;
            break;
        }

        // Two-loop recursion.
        Vector dir = -g;
        const auto m = s_hist.size();
        for (std::size_t i = m; i-- > 0;) {
            alpha_buf[i] = rho_hist[i] * s_hist[i].dot(dir);
            dir -= alpha_buf[i] * y_hist[i];
        }
        if (m > 0) dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (std::size_t i = 0; i < m; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(dir);
            dir += (alpha_buf[i] - beta) * s_hist[i];
        }
        double df0 = g.dot(dir);
        if (!(df0 < 0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g;
            df0 = -g.squaredNorm();
        }
        const double alpha_init = s_hist.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;

        detail::StrongWolfeSearch search(f, res.x, dir, fx, df0, cfg);
        auto step = search.run(alpha_init);
        res.evaluations += search.evaluations();
        if (!step) {
            res.status = LbfgsStatus::LineSearchFailed;
            break;
        }

        Vector s = step->alpha * dir;
        Vector y = step->g - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (static_cast<int>(s_hist.size()) == cfg.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
        }
        res.x += s;
        fx = step->f;
        g = std::move(step->g);
        ++res.iterations;
        res.trace.push_back(fx);
        if (observer) observer(res.iterations, res.x, fx);
    }
    res.value = fx;
    return res;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles

inline double fd_step(double x, double h) { return h * (1.0 + std::abs(x)); }

inline double checked_eval(const ScalarFunction& f, const Vector& x) {
    const double v = f(x);
    if (!std::isfinite(v)) throw DomainError("finite-difference evaluation is not finite");
    return v;
}

/// Central-difference gradient with per-coordinate step h*(1+|x_d|).
inline Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double h = 1e-5) {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double step = fd_step(x[d], h);
        xp[d] = x[d] + step;
        const double fp = checked_eval(f, xp);
        xp[d] = x[d] - step;
        const double fm = checked_eval(f, xp);
        xp[d] = x[d];
        g[d] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// Diagonal of the Hessian by second central differences.
inline Vector finite_diff_hess_diag(const ScalarFunction& f, const Vector& x, double h = 1e-4) {
    Vector out(x.size());
    Vector xp = x;
    const double f0 = checked_eval(f, x);
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double step = fd_step(x[d], h);
        xp[d] = x[d] + step;
        const double fp = checked_eval(f, xp);
        xp[d] = x[d] - step;
        const double fm = checked_eval(f, xp);
        xp[d] = x[d];
        out[d] = (fp - 2.0 * f0 + fm) / (step * step);
    }
    return out;
}

/// Largest entrywise relative error between `actual` and `expected`. Each
/// entry is scaled by max(|a|, |e|, floor * ||expected||_inf) so entries that
/// are tiny compared with the whole vector are judged on an absolute scale.
inline double max_relative_error(const Vector& actual, const Vector& expected, double floor = 1e-3) {
    require_dims(actual.size() == expected.size(), "max_relative_error: length mismatch");
    const double scale = std::max(floor * expected.lpNorm<Eigen::Infinity>(), std::numeric_limits<double>::min());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < actual.size(); ++i) {
        const double denom = std::max({std::abs(actual[i]), std::abs(expected[i]), scale});
        worst = std::max(worst, std::abs(actual[i] - expected[i]) / denom);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
    Vector mean;          // D_in
    Matrix basis;         // D_in x D_out, orthonormal columns
    Vector eigenvalues;   // D_out, descending

    Eigen::Index input_dim() const noexcept { return mean.size(); }
    Eigen::Index output_dim() const noexcept { return basis.cols(); }
};

namespace detail {

// Flip each column so its largest-magnitude entry is positive.
inline void fix_signs(Matrix& basis) {
    for (Eigen::Index k = 0; k < basis.cols(); ++k) {
        Eigen::Index arg = 0;
        basis.col(k).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, k) < 0) basis.col(k) = -basis.col(k);
    }
}

// Fills columns [from, cols) with unit vectors orthogonal to all earlier columns.
inline void complete_orthonormal(Matrix& basis, Eigen::Index from) {
    Eigen::Index next_axis = 0;
    for (Eigen::Index k = from; k < basis.cols(); ++k) {
        for (; next_axis < basis.rows(); ++next_axis) {
            Vector v = Vector::Unit(basis.rows(), next_axis);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index j = 0; j < k; ++j) v -= basis.col(j).dot(v) * basis.col(j);
            if (v.norm() > 0.5) {
                basis.col(k) = v.normalized();
                ++next_axis;
                break;
            }
        }
    }
}

}  // namespace detail

/// Principal components of the rows of `data`. Uses the covariance
/// eigendecomposition when D_in <= n and the Gram matrix otherwise.
inline PcaModel pca_fit(const Matrix& data, Eigen::Index out_dim) {
    const Eigen::Index n = data.rows();
    const Eigen::Index in_dim = data.cols();
    if (n < 2) throw DimensionError("pca_fit needs at least two samples");
    if (out_dim < 1 || out_dim > std::min(n - 1, in_dim))
        throw DimensionError("pca_fit: output dimension " + std::to_string(out_dim) + " exceeds min(n-1, D_in) = " +
                             std::to_string(std::min(n - 1, in_dim)));

    PcaModel model;
    model.mean = data.colwise().mean().transpose();
    const Matrix centered = data.rowwise() - model.mean.transpose();
    const double norm = 1.0 / static_cast<double>(n - 1);

    model.basis.resize(in_dim, out_dim);
    model.eigenvalues.resize(out_dim);
    if (in_dim <= n) {
        const Matrix cov = norm * (centered.transpose() * centered);
        Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
        for (Eigen::Index k = 0; k < out_dim; ++k) {
            const Eigen::Index src = in_dim - 1 - k;  // ascending order from the solver
            model.basis.col(k) = es.eigenvectors().col(src);
            model.eigenvalues[k] = std::max(0.0, es.eigenvalues()[src]);
        }
    } else {
        const Matrix gram = norm * (centered * centered.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
        const double top = std::max(es.eigenvalues()[n - 1], 0.0);
        Eigen::Index filled = 0;
        for (Eigen::Index k = 0; k < out_dim; ++k) {
            const Eigen::Index src = n - 1 - k;
            const double lambda = std::max(0.0, es.eigenvalues()[src]);
            model.eigenvalues[k] = lambda;
            if (filled == k && lambda > 1e-12 * top && lambda > 0) {
                model.basis.col(k) = (centered.transpose() * es.eigenvectors().col(src)).normalized();
                ++filled;
            }
        }
        detail::complete_orthonormal(model.basis, filled);
    }
    detail::fix_signs(model.basis);
    return model;
}

inline Vector pca_project(const PcaModel& m, const Eigen::Ref<const Vector>& x) {
    require_dims(x.size() == m.input_dim(), "pca_project: input dimension mismatch");
    return m.basis.transpose() * (x - m.mean);
}

/// Projects every row of `data`; returns n x D_out.
inline Matrix pca_project_rows(const PcaModel& m, const Matrix& data) {
    require_dims(data.cols() == m.input_dim(), "pca_project_rows: input dimension mismatch");
    return (data.rowwise() - m.mean.transpose()) * m.basis;
}

inline Vector pca_reconstruct(const PcaModel& m, const Eigen::Ref<const Vector>& y) {
    require_dims(y.size() == m.output_dim(), "pca_reconstruct: dimension mismatch");
    return m.mean + m.basis * y;
}

}  // namespace invmetric
