#pragma once

// RBF-chi2 exemplar kernel map: each stripe descriptor becomes its vector of
// kernel similarities to a fixed set of training stripes.

#include "invmetric/core.hpp"

#include <cstdint>
#include <vector>

namespace invmetric {

/// Chi-squared histogram distance sum (x-y)^2/(x+y); 0/0 terms count as 0.
inline double chi2_distance(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
    if (x.size() != y.size())
        throw DimensionError("chi2_distance: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
    double acc = 0.0;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double a = x[d], b = y[d];
        if (a < 0 || b < 0) throw DomainError("chi2_distance: negative histogram entry at index " + std::to_string(d));
        const double s = a + b;
        if (s > 0) {
            const double diff = a - b;
            acc += diff * diff / s;
        }
    }
    return acc;
}

/// Anchor stripes (one per column) and the kernel bandwidth.
class ExemplarSet {
public:
    ExemplarSet(Matrix exemplars, double bandwidth) : exemplars_(std::move(exemplars)), bandwidth_(bandwidth) {
        if (exemplars_.cols() == 0) throw ConfigError("exemplar set is empty");
        if (!(bandwidth_ > 0) || !std::isfinite(bandwidth_)) throw ConfigError("kernel bandwidth must be positive");
    }

    Eigen::Index size() const noexcept { return exemplars_.cols(); }
    Eigen::Index dim() const noexcept { return exemplars_.rows(); }
    double bandwidth() const noexcept { return bandwidth_; }
    const Matrix& exemplars() const noexcept { return exemplars_; }

private:
    Matrix exemplars_;  // dim x count
    double bandwidth_;
};

/// Mean pairwise chi2 distance between exemplars (columns). All pairs are
/// used when there are at most `max_pairs`; otherwise `max_pairs` pairs are
/// drawn uniformly with a generator seeded from `seed`.
inline double estimate_bandwidth(const Matrix& exemplars, std::uint64_t seed = 0, std::size_t max_pairs = 100000) {
    const auto n = static_cast<std::size_t>(exemplars.cols());
    if (n < 2) throw ConfigError("bandwidth estimation needs at least two exemplars");
    const std::size_t total = n * (n - 1) / 2;
    double sum = 0.0;
    std::size_t count = 0;
    if (total <= max_pairs) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                sum += chi2_distance(exemplars.col(static_cast<Eigen::Index>(i)), exemplars.col(static_cast<Eigen::Index>(j)));
                ++count;
            }
    } else {
        auto rng = make_rng(seed, "kernelmap.bandwidth");
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        while (count < max_pairs) {
            const std::size_t i = pick(rng), j = pick(rng);
            if (i == j) continue;
            sum += chi2_distance(exemplars.col(static_cast<Eigen::Index>(i)), exemplars.col(static_cast<Eigen::Index>(j)));
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    if (!(mean > 0)) throw ConfigError("degenerate bandwidth: sampled exemplars are all identical");
    return mean;
}

/// Kernel response exp(-chi2(x, e_j) / (2 * bandwidth)) for every exemplar e_j.
inline Vector kernel_map(const Eigen::Ref<const Vector>& x, const ExemplarSet& ex) {
    require_dims(x.size() == ex.dim(), "kernel_map: descriptor length does not match exemplars");
    Vector out(ex.size());
    const double scale = -1.0 / (2.0 * ex.bandwidth());
    for (Eigen::Index j = 0; j < ex.size(); ++j) out[j] = std::exp(scale * chi2_distance(x, ex.exemplars().col(j)));
    return out;
}

/// Kernel responses of many descriptors (columns in, columns out).
inline Matrix kernel_map_batch(const Matrix& xs, const ExemplarSet& ex) {
    Matrix out(ex.size(), xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out.col(i) = kernel_map(xs.col(i), ex);
    return out;
}

}  // namespace invmetric
