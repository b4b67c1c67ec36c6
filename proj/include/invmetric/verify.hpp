#pragma once

// Numerical self-checks: sigma = 0 collapse, Monte-Carlo expectation,
// gradient and Hessian-diagonal checks against finite differences,
// PSD/NSD factorization during training, and CMC against brute force.

#include "invmetric/core.hpp"
#include "invmetric/eval.hpp"
#include "invmetric/layer1.hpp"
#include "invmetric/metric.hpp"
#include "invmetric/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace invmetric {

struct CheckResult {
    std::string name;
    double error = 0.0;      // worst observed error
    double tolerance = 0.0;
    int instances = 0;
    bool passed = false;
    std::string detail;
};

struct VerifyOptions {
    int instances = 20;           // per gradient / Hessian check
    int collapse_instances = 50;
    int cmc_instances = 100;
    long monte_carlo_draws = 1000000;
    std::uint64_t seed = 0;
    /// Negative control: perturbs the analytic probe gradient.
    bool inject_fault = false;
};

namespace detail {

inline Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

inline Matrix normal_matrix(Eigen::Index r, Eigen::Index c, double scale, Rng& rng) {
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

inline EncoderParams random_encoder(Eigen::Index dim, Eigen::Index hidden, Rng& rng) {
    return {normal_matrix(hidden, dim, 0.5, rng), normal_matrix(hidden, 1, 0.1, rng).col(0),
            normal_matrix(dim, hidden, 0.5, rng), normal_matrix(dim, 1, 0.1, rng).col(0)};
}

inline PairBatch random_batch(Eigen::Index dim, Eigen::Index n, Rng& rng) {
    // kernel responses live in (0, 1]
    return {uniform_matrix(dim, n, 0.05, 1.0, rng), uniform_matrix(dim, n, 0.05, 1.0, rng)};
}

inline MetricParams random_metric(Eigen::Index dim, Eigen::Index ra, Eigen::Index rb, bool with_c, Rng& rng) {
    MetricParams p{normal_matrix(dim, ra, 0.4, rng), normal_matrix(dim, rb, 0.4, rng), normal_matrix(1, 1, 0.5, rng)(0, 0),
                   with_c ? Vector(normal_matrix(dim, 1, 0.2, rng).col(0)) : Vector::Zero(dim)};
    return p;
}

inline LabeledPairs random_pairs(Eigen::Index dim, Eigen::Index n, Rng& rng) {
    LabeledPairs pr{normal_matrix(dim, n, 1.0, rng), normal_matrix(dim, n, 1.0, rng), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) pr.labels[i] = i % 2 == 0 ? 1.0 : -1.0;
    return pr;
}

inline double relative_gap(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline CheckResult finish(std::string name, double error, double tol, int instances, std::string detail = {}) {
    return {std::move(name), error, tol, instances, error <= tol, std::move(detail)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual checks

/// Marginalized objectives with sigma = 0 against the unmarginalized ones.
inline CheckResult check_sigma_zero_collapse(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.collapse");
    double worst = 0.0;
    for (int t = 0; t < opt.collapse_instances; ++t) {
        const Eigen::Index dim = 3 + t % 5, hidden = 2 + t % 3;
        const auto pp = detail::random_encoder(dim, hidden, rng);
        const auto pg = detail::random_encoder(dim, hidden, rng);
        const auto batch = detail::random_batch(dim, 4, rng);
        Layer1Config on;
        on.hidden_dim = hidden;
        on.sigma = 0.0;
        on.lambda = 1e-3;
        on.enable_invariance = t % 4 != 3;
        Layer1Config off = on;
        off.enable_marginalization = false;
        worst = std::max(worst, detail::relative_gap(objective_probe(pp, pg, batch, on).value, objective_probe(pp, pg, batch, off).value));
        worst = std::max(worst,
                         detail::relative_gap(objective_gallery(pg, pp, batch, on).value, objective_gallery(pg, pp, batch, off).value));

        const auto mp = detail::random_metric(dim, 2, 2, t % 2 == 1, rng);
        const auto pairs = detail::random_pairs(dim, 6, rng);
        MetricConfig mon;
        mon.dim = dim;
        mon.sigma = 0.0;
        mon.corrupt_both = t % 3 == 0;
        MetricConfig moff = mon;
        moff.enable_marginalization = false;
        worst = std::max(worst, detail::relative_gap(metric_objective(mp, pairs, mon, false).value,
                                                     metric_objective(mp, pairs, moff, false).value));
    }
    return detail::finish("sigma0_collapse", worst, 1e-12, opt.collapse_instances);
}

/// Monte-Carlo mean of the invariance loss under Gaussian input corruption
/// against its closed form l_inv(phi) + sigma^2 sum_hd w_hd^2.
inline CheckResult check_invariance_expectation(const VerifyOptions& opt, Eigen::Index dim = 8, Eigen::Index hidden = 5,
                                                double sigma = 0.1) {
    auto rng = make_rng(opt.seed, "verify.monte_carlo");
    const auto p = detail::random_encoder(dim, hidden, rng);
    const Vector phi = detail::uniform_matrix(dim, 1, 0.05, 1.0, rng).col(0);
    const Vector target = detail::normal_matrix(hidden, 1, 0.5, rng).col(0);
    const Vector base = encode(p, phi) - target;
    const double exact = base.squaredNorm() + invariance_penalty(p, CorruptionSpec::uniform(dim, sigma));

    std::normal_distribution<double> nd(0.0, sigma);
    Vector noise(dim);
    double mean = 0.0, m2 = 0.0;  // Welford
    for (long i = 0; i < opt.monte_carlo_draws; ++i) {
        for (Eigen::Index d = 0; d < dim; ++d) noise[d] = nd(rng);
        const double v = (base + p.W_enc * noise).squaredNorm();
        const double delta = v - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (v - mean);
    }
    const double draws = static_cast<double>(opt.monte_carlo_draws);
    const double se = std::sqrt(m2 / (draws - 1.0) / draws);
    const double z = std::abs(mean - exact) / se;
    return detail::finish("monte_carlo_invariance", z, 3.0, 1,
                          "estimate " + format_double(mean) + ", closed form " + format_double(exact) + ", standard errors");
}

/// Layer-1 probe or gallery objective gradient against central differences.
inline CheckResult check_layer1_gradient(const VerifyOptions& opt, Network net) {
    auto rng = make_rng(opt.seed, net == Network::Probe ? "verify.grad.probe" : "verify.grad.gallery");
    const Eigen::Index dim = 6, hidden = 4;
    double worst = 0.0;
    for (int t = 0; t < opt.instances; ++t) {
        const auto pp = detail::random_encoder(dim, hidden, rng);
        const auto pg = detail::random_encoder(dim, hidden, rng);
        const auto batch = detail::random_batch(dim, 5, rng);
        Layer1Config cfg;
        cfg.hidden_dim = hidden;
        cfg.sigma = 0.3;
        cfg.lambda = 1e-2;
        cfg.enable_invariance = t % 5 != 4;
        cfg.enable_marginalization = t % 5 != 3;
        const auto corruption = CorruptionSpec{detail::uniform_matrix(dim, 1, 0.05, 0.5, rng).col(0)};

        const EncoderParams& own = net == Network::Probe ? pp : pg;
        const auto eval = [&](const EncoderParams& x, bool grad) {
            return net == Network::Probe ? side_objective(x, batch.probe, cfg.enable_invariance ? encode_batch(pg, batch.gallery) : Matrix(),
                                                          corruption, cfg, grad)
                                         : side_objective(x, batch.gallery, cfg.enable_invariance ? encode_batch(pp, batch.probe) : Matrix(),
                                                          corruption, cfg, grad);
        };
        Vector analytic = (net == Network::Probe ? objective_probe(pp, pg, batch, cfg, corruption)
                                                 : objective_gallery(pg, pp, batch, cfg, corruption))
                              .gradient.pack();
        if (opt.inject_fault && net == Network::Probe) analytic[0] *= 1.01;
        const Vector numeric = finite_diff_grad(
            [&](const Vector& x) { return eval(EncoderParams::unpack(x, dim, hidden), false).value; }, own.pack());
        worst = std::max(worst, max_relative_error(analytic, numeric));
    }
    return detail::finish(net == Network::Probe ? "gradient_objective_probe" : "gradient_objective_gallery", worst, 1e-5,
                          opt.instances);
}

inline CheckResult check_metric_gradient(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.grad.metric");
    const Eigen::Index dim = 5;
    double worst = 0.0;
    for (int t = 0; t < opt.instances; ++t) {
        auto p = detail::random_metric(dim, 2, 2, t % 2 == 1, rng);
        const auto pairs = detail::random_pairs(dim, 8, rng);
        MetricConfig cfg;
        cfg.dim = dim;
        cfg.sigma = 0.5;
        cfg.lambda_a = 1e-2;
        cfg.lambda_b = 2e-2;
        cfg.corrupt_both = t % 3 == 2;
        cfg.enable_marginalization = t % 4 != 3;
        const Vector analytic = metric_objective(p, pairs, cfg).gradient;
        MetricParams work = p;
        const Vector numeric = finite_diff_grad(
            [&](const Vector& x) {
                work.unpack(x);
                return metric_objective(work, pairs, cfg, false).value;
            },
            p.pack());
        worst = std::max(worst, max_relative_error(analytic, numeric));
    }
    return detail::finish("gradient_metric_objective", worst, 1e-5, opt.instances);
}

/// Second derivative of l_inv with respect to each input dimension against
/// 2 sum_h w_hd^2, and the invariance penalty against 1/2 sigma^2 times it.
inline CheckResult check_invariance_hessian(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.hess.invariance");
    double worst = 0.0;
    for (int t = 0; t < opt.instances; ++t) {
        const Eigen::Index dim = 6, hidden = 4;
        const auto p = detail::random_encoder(dim, hidden, rng);
        const Vector phi = detail::uniform_matrix(dim, 1, 0.05, 1.0, rng).col(0);
        const Vector target = detail::normal_matrix(hidden, 1, 0.5, rng).col(0);
        const Vector implemented = 2.0 * p.W_enc.colwise().squaredNorm().transpose();
        const Vector numeric = finite_diff_hess_diag([&](const Vector& x) { return (encode(p, x) - target).squaredNorm(); }, phi);
        worst = std::max(worst, max_relative_error(implemented, numeric));

        const auto c = CorruptionSpec{detail::uniform_matrix(dim, 1, 0.05, 0.5, rng).col(0)};
        const double from_fd = 0.5 * c.variances().dot(numeric);
        worst = std::max(worst, detail::relative_gap(invariance_penalty(p, c), from_fd));
    }
    return detail::finish("hessian_invariance", worst, 1e-4, opt.instances);
}

inline CheckResult check_metric_hessian(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.hess.metric");
    double worst = 0.0;
    for (int t = 0; t < opt.instances; ++t) {
        const Eigen::Index dim = 4;
        const auto p = detail::random_metric(dim, dim, dim, t % 2 == 1, rng);
        const Vector k = detail::normal_matrix(dim, 1, 1.0, rng).col(0);
        const Vector kp = detail::normal_matrix(dim, 1, 1.0, rng).col(0);
        const double y = t % 2 == 0 ? 1.0 : -1.0;
        const Vector implemented = metric_loss_hessian_diag(p, k, kp, y);
        const Vector numeric = finite_diff_hess_diag([&](const Vector& x) { return pair_loss(p, x, kp, y); }, k);
        worst = std::max(worst, max_relative_error(implemented, numeric));
        const double sigma = 0.3;
        worst = std::max(worst, detail::relative_gap(marginal_penalty_metric(p, k, kp, y, sigma), 0.5 * sigma * sigma * numeric.sum()));
    }
    return detail::finish("hessian_metric", worst, 1e-4, opt.instances);
}

/// Autoencoder penalty against sum_d 1/2 s_d^2 sum_h (d2l/dz_h^2)(dz_h/dphi_d)^2
/// with both factors taken by finite differences through z.
inline CheckResult check_autoencoder_hessian(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.hess.autoencoder");
    double worst = 0.0;
    for (int t = 0; t < opt.instances; ++t) {
        const Eigen::Index dim = 6, hidden = 4;
        const auto p = detail::random_encoder(dim, hidden, rng);
        const Vector phi = detail::uniform_matrix(dim, 1, 0.05, 1.0, rng).col(0);
        const auto c = CorruptionSpec{detail::uniform_matrix(dim, 1, 0.05, 0.5, rng).col(0)};

        const Vector z = encode(p, phi);
        const Vector curvature =
            finite_diff_hess_diag([&](const Vector& zz) { return (phi - decode(p, zz)).squaredNorm(); }, z, 1e-3);
        Matrix jac(hidden, dim);
        for (Eigen::Index h = 0; h < hidden; ++h)
            jac.row(h) = finite_diff_grad([&](const Vector& x) { return encode(p, x)[h]; }, phi).transpose();
        double oracle = 0.0;
        for (Eigen::Index d = 0; d < dim; ++d)
            for (Eigen::Index h = 0; h < hidden; ++h) oracle += 0.5 * c.variances()[d] * curvature[h] * jac(h, d) * jac(h, d);
        worst = std::max(worst, detail::relative_gap(autoencoder_penalty(p, c), oracle));
    }
    return detail::finish("hessian_autoencoder", worst, 1e-6, opt.instances);
}

/// Trains small metrics and inspects the spectrum of A and B at every iterate.
/// The reported error is the worst violation (positive = outside bounds).
inline CheckResult check_psd_nsd(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.psd");
    double worst_a = std::numeric_limits<double>::infinity();   // min eig A
    double worst_b = -std::numeric_limits<double>::infinity();  // max eig B
    int iterates = 0;
    const int runs = 3;
    for (int t = 0; t < runs; ++t) {
        const Eigen::Index dim = 6;
        MetricConfig cfg;
        cfg.dim = dim;
        cfg.rank_a = t == 1 ? 2 : 0;
        cfg.rank_b = t == 2 ? 3 : 0;
        cfg.sigma = 0.1;
        cfg.max_iter = 40;
        const Matrix probe = detail::normal_matrix(dim, 12, 1.0, rng);
        const Matrix gallery = probe + detail::normal_matrix(dim, 12, 0.3, rng);
        const auto pairs = build_metric_pairs(probe, gallery, 4, opt.seed + static_cast<std::uint64_t>(t));
        MetricParams work = MetricParams::random(dim, cfg.effective_rank_a(), cfg.effective_rank_b(), rng);
        train_metric(pairs, cfg, opt.seed + static_cast<std::uint64_t>(t), [&](int, const Vector& x, double) {
            work.unpack(x);
            Eigen::SelfAdjointEigenSolver<Matrix> ea(work.A(), Eigen::EigenvaluesOnly);
            Eigen::SelfAdjointEigenSolver<Matrix> eb(work.B(), Eigen::EigenvaluesOnly);
            worst_a = std::min(worst_a, ea.eigenvalues().minCoeff());
            worst_b = std::max(worst_b, eb.eigenvalues().maxCoeff());
            ++iterates;
        });
    }
    const bool ok = worst_a >= -1e-10 && worst_b <= 1e-10;
    CheckResult r{"psd_nsd_iterates", std::max(-worst_a, worst_b), 1e-10, iterates, ok,
                  "min eig A " + format_double(worst_a) + ", max eig B " + format_double(worst_b)};
    return r;
}

/// Rank of the true match by explicit sorting of (score, index) pairs.
inline std::vector<double> brute_force_cmc(const Matrix& scores, const std::vector<std::size_t>& truth) {
    const auto n_gal = static_cast<std::size_t>(scores.cols());
    std::vector<double> rates(n_gal, 0.0);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        std::vector<std::size_t> order(n_gal);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double sa = scores(i, static_cast<Eigen::Index>(a)), sb = scores(i, static_cast<Eigen::Index>(b));
            return sa < sb || (sa == sb && a < b);
        });
        const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), truth[static_cast<std::size_t>(i)]) - order.begin());
        for (std::size_t r = pos; r < n_gal; ++r) rates[r] += 1.0;
    }
    for (auto& r : rates) r /= static_cast<double>(scores.rows());
    return rates;
}

inline CheckResult check_cmc_oracle(const VerifyOptions& opt) {
    auto rng = make_rng(opt.seed, "verify.cmc");
    int mismatches = 0;
    for (int t = 0; t < opt.cmc_instances; ++t) {
        const int n = 10;
        ScoreMatrix s;
        s.scores.resize(n, n);
        // every other matrix draws from a small integer range to force ties
        std::uniform_int_distribution<int> small(0, 3);
        std::uniform_real_distribution<double> wide(-1.0, 1.0);
        for (Eigen::Index i = 0; i < s.scores.size(); ++i) s.scores.data()[i] = t % 2 == 0 ? small(rng) : wide(rng);
        if (t % 10 == 9) s.scores.setConstant(1.0);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::size_t> truth(n);
        for (int j = 0; j < n; ++j) s.gallery_ids.push_back("g" + std::to_string(j));
        for (int i = 0; i < n; ++i) {
            truth[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
            s.probe_ids.push_back(s.gallery_ids[perm[static_cast<std::size_t>(i)]]);
        }
        if (cmc(s).rates != brute_force_cmc(s.scores, truth)) ++mismatches;
    }
    return detail::finish("cmc_brute_force", mismatches, 0.0, opt.cmc_instances, "mismatching matrices");
}

/// Every check the `verify` command runs.
inline std::vector<CheckResult> run_verification(const VerifyOptions& opt) {
    return {check_sigma_zero_collapse(opt),
            check_invariance_expectation(opt),
            check_layer1_gradient(opt, Network::Probe),
            check_layer1_gradient(opt, Network::Gallery),
            check_metric_gradient(opt),
            check_invariance_hessian(opt),
            check_metric_hessian(opt),
            check_autoencoder_hessian(opt),
            check_psd_nsd(opt),
            check_cmc_oracle(opt)};
}

inline void print_report(std::ostream& os, const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
        os << (r.passed ? "PASS " : "FAIL ") << r.name << " error=" << format_double(r.error) << " tol=" << format_double(r.tolerance)
           << " instances=" << r.instances;
        if (!r.detail.empty()) os << " (" << r.detail << ')';
        os << '\n';
    }
}

}  // namespace invmetric
