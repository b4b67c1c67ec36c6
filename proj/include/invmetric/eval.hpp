#pragma once

// Single-shot evaluation: score matrices, CMC curves and per-query score fusion.

#include "invmetric/core.hpp"
#include "invmetric/data.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <vector>

namespace invmetric {

/// Dissimilarities, probes by rows and gallery entries by columns.
struct ScoreMatrix {
    Matrix scores;
    std::vector<std::string> probe_ids;
    std::vector<std::string> gallery_ids;

    void validate() const {
        require_dims(scores.rows() == static_cast<Eigen::Index>(probe_ids.size()) &&
                         scores.cols() == static_cast<Eigen::Index>(gallery_ids.size()),
                     "ScoreMatrix: id lists do not match score shape");
        if (!scores.allFinite()) throw DomainError("ScoreMatrix: non-finite score");
    }
};

/// rates[r] = fraction of probes whose true match is within the top r+1.
struct CmcCurve {
    std::vector<double> rates;

    /// Rate at a 1-based rank; ranks beyond the gallery size saturate.
    double at_rank(std::size_t rank) const {
        if (rates.empty() || rank == 0) return 0.0;
        return rates[std::min(rank, rates.size()) - 1];
    }
};

/// 1-based rank of the true match for each probe. Sorting is by ascending
/// score; ties go to the lower gallery index.
inline std::vector<std::size_t> match_ranks(const ScoreMatrix& s) {
    s.validate();
    std::map<std::string, Eigen::Index> gallery_index;
    for (std::size_t j = 0; j < s.gallery_ids.size(); ++j)
        if (!gallery_index.emplace(s.gallery_ids[j], static_cast<Eigen::Index>(j)).second)
            throw ProtocolError("gallery identity '" + s.gallery_ids[j] + "' appears more than once");
    std::vector<std::size_t> ranks;
    ranks.reserve(s.probe_ids.size());
    for (std::size_t i = 0; i < s.probe_ids.size(); ++i) {
        const auto it = gallery_index.find(s.probe_ids[i]);
        if (it == gallery_index.end()) throw ProtocolError("probe identity '" + s.probe_ids[i] + "' is not in the gallery");
        const Eigen::Index t = it->second;
        const double target = s.scores(static_cast<Eigen::Index>(i), t);
        std::size_t ahead = 0;
        for (Eigen::Index j = 0; j < s.scores.cols(); ++j) {
            const double v = s.scores(static_cast<Eigen::Index>(i), j);
            if (v < target || (v == target && j < t)) ++ahead;
        }
        ranks.push_back(ahead + 1);
    }
    return ranks;
}

inline CmcCurve cmc(const ScoreMatrix& s) {
    const auto ranks = match_ranks(s);
    CmcCurve curve;
    curve.rates.assign(s.gallery_ids.size(), 0.0);
    if (ranks.empty()) return curve;
    std::vector<std::size_t> hist(s.gallery_ids.size() + 1, 0);
    for (auto r : ranks) ++hist[r];
    std::size_t cumulative = 0;
    for (std::size_t r = 1; r <= s.gallery_ids.size(); ++r) {
        cumulative += hist[r];
        curve.rates[r - 1] = static_cast<double>(cumulative) / static_cast<double>(ranks.size());
    }
    return curve;
}

/// Min-max rescales each probe row of every method to [0,1] (constant rows
/// become zeros) and sums the rescaled matrices.
inline ScoreMatrix fuse_scores(const std::vector<ScoreMatrix>& methods) {
    if (methods.empty()) throw ConfigError("fuse_scores: no score matrices given");
    ScoreMatrix out{Matrix::Zero(methods.front().scores.rows(), methods.front().scores.cols()), methods.front().probe_ids,
                    methods.front().gallery_ids};
    for (const auto& m : methods) {
        m.validate();
        if (m.probe_ids != out.probe_ids || m.gallery_ids != out.gallery_ids)
            throw DimensionError("fuse_scores: probe/gallery layouts differ between methods");
        for (Eigen::Index i = 0; i < m.scores.rows(); ++i) {
            const double lo = m.scores.row(i).minCoeff();
            const double hi = m.scores.row(i).maxCoeff();
            if (hi > lo) out.scores.row(i).array() += (m.scores.row(i).array() - lo) / (hi - lo);
        }
    }
    return out;
}

/// Pairwise Euclidean distances between feature columns.
inline Matrix euclidean_distances(const Matrix& probe, const Matrix& gallery) {
    require_dims(probe.rows() == gallery.rows(), "euclidean_distances: feature dimension mismatch");
    Matrix d(probe.cols(), gallery.cols());
    for (Eigen::Index i = 0; i < probe.cols(); ++i)
        for (Eigen::Index j = 0; j < gallery.cols(); ++j) d(i, j) = (probe.col(i) - gallery.col(j)).norm();
    return d;
}

// ---------------------------------------------------------------------------
// Single-shot protocol

/// One probe (view A) and one gallery (view B) record per identity, aligned:
/// probe[i] and gallery[i] share an identity.
struct SingleShotSplit {
    std::vector<Record> probe;
    std::vector<Record> gallery;

    std::vector<std::string> identities() const {
        std::vector<std::string> ids;
        for (const auto& r : probe) ids.push_back(r.identity);
        return ids;
    }
};

/// Picks one image per identity and view (uniformly when there are several).
/// Identities missing either view are dropped with a warning.
inline SingleShotSplit single_shot_split(const Dataset& d, std::uint64_t seed) {
    std::map<std::string, std::vector<const Record*>> by_view[2];
    for (const auto& r : d.records) by_view[r.view == View::A ? 0 : 1][r.identity].push_back(&r);
    auto rng = make_rng(seed, "eval.single_shot");
    SingleShotSplit out;
    std::vector<std::string> dropped;
    for (const auto& id : d.identities()) {
        const auto a = by_view[0].find(id);
        const auto b = by_view[1].find(id);
        if (a == by_view[0].end() || b == by_view[1].end()) {
            dropped.push_back(id);
            continue;
        }
        const auto pick = [&](const std::vector<const Record*>& v) {
            if (v.size() == 1) return v.front();
            std::uniform_int_distribution<std::size_t> u(0, v.size() - 1);
            return v[u(rng)];
        };
        out.probe.push_back(*pick(a->second));
        out.gallery.push_back(*pick(b->second));
    }
    if (!dropped.empty())
        log_warning("single-shot split: " + std::to_string(dropped.size()) + " identities lack one view and were excluded");
    return out;
}

/// Concatenated raw stripe descriptors of each record, as columns.
inline Matrix concatenated_descriptors(const std::vector<Record>& records, int stripes = 6) {
    Matrix out(static_cast<Eigen::Index>(stripes) * StripeDescriptor::kDim, static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto descs = record_descriptors(records[i], stripes);
        require_dims(descs.size() == static_cast<std::size_t>(stripes), "record has the wrong number of stripes");
        for (int s = 0; s < stripes; ++s)
            out.col(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(s) * StripeDescriptor::kDim, StripeDescriptor::kDim) =
                descs[static_cast<std::size_t>(s)].values;
    }
    return out;
}

/// Raw-descriptor Euclidean ranking over a single-shot split.
inline ScoreMatrix euclidean_baseline(const SingleShotSplit& split, int stripes = 6) {
    ScoreMatrix s;
    s.scores = euclidean_distances(concatenated_descriptors(split.probe, stripes), concatenated_descriptors(split.gallery, stripes));
    for (const auto& r : split.probe) s.probe_ids.push_back(r.identity);
    for (const auto& r : split.gallery) s.gallery_ids.push_back(r.identity);
    return s;
}

}  // namespace invmetric
