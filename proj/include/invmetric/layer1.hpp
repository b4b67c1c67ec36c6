#pragma once

// Marginalized invariant feature layer.
//
// Two linear autoencoders, one per camera view, are coupled by an invariance
// term that pulls the latent codes of matched stripes together. Gaussian input
// corruption is marginalized analytically: each objective gains a closed-form
// penalty sigma_d^2 * sum_h w_hd^2 * (1 + sum_d' w'_d'h^2) on its weights.
// The two networks are trained alternately with L-BFGS.

#include "invmetric/core.hpp"
#include "invmetric/numerics.hpp"

#include <functional>
#include <string>
#include <vector>

namespace invmetric {

/// Linear encoder z = W_enc x + b_enc and decoder x' = W_dec z + b_dec.
struct EncoderParams {
    Matrix W_enc;  // D_h x D
    Vector b_enc;  // D_h
    Matrix W_dec;  // D x D_h
    Vector b_dec;  // D

    Eigen::Index input_dim() const noexcept { return W_enc.cols(); }
    Eigen::Index hidden_dim() const noexcept { return W_enc.rows(); }
    Eigen::Index parameter_count() const noexcept { return 2 * W_enc.size() + b_enc.size() + b_dec.size(); }

    static EncoderParams zeros(Eigen::Index input_dim, Eigen::Index hidden_dim) {
        return {Matrix::Zero(hidden_dim, input_dim), Vector::Zero(hidden_dim), Matrix::Zero(input_dim, hidden_dim),
                Vector::Zero(input_dim)};
    }

    /// Weights uniform in +-sqrt(6/(D+D_h)), biases zero.
    static EncoderParams random(Eigen::Index input_dim, Eigen::Index hidden_dim, Rng& rng) {
        auto p = zeros(input_dim, hidden_dim);
        const double r = std::sqrt(6.0 / static_cast<double>(input_dim + hidden_dim));
        std::uniform_real_distribution<double> u(-r, r);
        for (Eigen::Index i = 0; i < p.W_enc.size(); ++i) p.W_enc.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < p.W_dec.size(); ++i) p.W_dec.data()[i] = u(rng);
        return p;
    }

    void validate() const {
        require_dims(b_enc.size() == W_enc.rows() && W_dec.cols() == W_enc.rows() && W_dec.rows() == W_enc.cols() &&
                         b_dec.size() == W_dec.rows(),
                     "EncoderParams: inconsistent shapes");
        if (!W_enc.allFinite() || !b_enc.allFinite() || !W_dec.allFinite() || !b_dec.allFinite())
            throw DomainError("EncoderParams: non-finite entries");
    }

    /// Flattened as W_enc | b_enc | W_dec | b_dec (column-major blocks).
    Vector pack() const {
        Vector v(parameter_count());
        Eigen::Index o = 0;
        v.segment(o, W_enc.size()) = W_enc.reshaped();
        o += W_enc.size();
        v.segment(o, b_enc.size()) = b_enc;
        o += b_enc.size();
        v.segment(o, W_dec.size()) = W_dec.reshaped();
        o += W_dec.size();
        v.segment(o, b_dec.size()) = b_dec;
        return v;
    }

    static EncoderParams unpack(const Vector& v, Eigen::Index input_dim, Eigen::Index hidden_dim) {
        auto p = zeros(input_dim, hidden_dim);
        require_dims(v.size() == p.parameter_count(), "EncoderParams::unpack: length mismatch");
        Eigen::Index o = 0;
        p.W_enc.reshaped() = v.segment(o, p.W_enc.size());
        o += p.W_enc.size();
        p.b_enc = v.segment(o, hidden_dim);
        o += hidden_dim;
        p.W_dec.reshaped() = v.segment(o, p.W_dec.size());
        o += p.W_dec.size();
        p.b_dec = v.segment(o, input_dim);
        return p;
    }
};

/// Per-dimension standard deviations of additive Gaussian input corruption.
struct CorruptionSpec {
    Vector sigma;

    static CorruptionSpec uniform(Eigen::Index dim, double s) {
        if (!(s >= 0)) throw ConfigError("corruption sigma must be nonnegative");
        return {Vector::Constant(dim, s)};
    }
    Vector variances() const { return sigma.array().square().matrix(); }
};

struct Layer1Config {
    Eigen::Index hidden_dim = 800;
    double lambda = 1e-7;
    double sigma = 0.1;
    int kappa = 50;
    int max_iter = 300;
    bool enable_invariance = true;
    bool enable_marginalization = true;
    int lbfgs_memory = 10;

    void validate() const {
        if (hidden_dim <= 0) throw ConfigError("layer1: hidden dimension must be positive");
        if (!(lambda >= 0)) throw ConfigError("layer1: lambda must be nonnegative");
        if (!(sigma >= 0)) throw ConfigError("layer1: sigma must be nonnegative");
        if (kappa <= 0 || kappa > max_iter) throw ConfigError("layer1: need 0 < kappa <= max_iter");
        if (lbfgs_memory < 1) throw ConfigError("layer1: L-BFGS memory must be positive");
    }
};

/// Matched stripe pairs: column i of `probe` and of `gallery` are the kernel
/// responses of corresponding stripes of the same person in the two views.
struct PairBatch {
    Matrix probe;    // D x n
    Matrix gallery;  // D x n

    Eigen::Index size() const noexcept { return probe.cols(); }
    void validate() const {
        if (probe.cols() == 0) throw ConfigError("layer1: empty training batch");
        require_dims(probe.rows() == gallery.rows() && probe.cols() == gallery.cols(), "layer1: probe/gallery batch shapes differ");
    }
};

inline Vector encode(const EncoderParams& p, const Eigen::Ref<const Vector>& x) {
    require_dims(x.size() == p.input_dim(), "encode: input dimension mismatch");
    return p.W_enc * x + p.b_enc;
}

inline Vector decode(const EncoderParams& p, const Eigen::Ref<const Vector>& z) {
    require_dims(z.size() == p.hidden_dim(), "decode: latent dimension mismatch");
    return p.W_dec * z + p.b_dec;
}

/// Encodes every column of `xs`.
inline Matrix encode_batch(const EncoderParams& p, const Matrix& xs) {
    require_dims(xs.rows() == p.input_dim(), "encode_batch: input dimension mismatch");
    return (p.W_enc * xs).colwise() + p.b_enc;
}

/// Unmarginalized loss of one matched pair: both reconstruction errors plus,
/// when `invariance` is set, the squared latent distance.
inline double pair_loss(const EncoderParams& pp, const EncoderParams& pg, const Eigen::Ref<const Vector>& phi,
                        const Eigen::Ref<const Vector>& psi, bool invariance = true) {
    const Vector zp = encode(pp, phi);
    const Vector zg = encode(pg, psi);
    double loss = (phi - decode(pp, zp)).squaredNorm() + (psi - decode(pg, zg)).squaredNorm();
    if (invariance) loss += (zp - zg).squaredNorm();
    return loss;
}

/// Marginalization penalty of the invariance term: sum_d s_d^2 sum_h w_hd^2.
inline double invariance_penalty(const EncoderParams& p, const CorruptionSpec& c) {
    require_dims(c.sigma.size() == p.input_dim(), "invariance_penalty: sigma length mismatch");
    return (p.W_enc.array().square().matrix() * c.variances()).sum();
}

/// Marginalization penalty of the autoencoder term:
/// sum_d s_d^2 sum_h (sum_d' w_dec(d',h)^2) w_enc(h,d)^2.
inline double autoencoder_penalty(const EncoderParams& p, const CorruptionSpec& c) {
    require_dims(c.sigma.size() == p.input_dim(), "autoencoder_penalty: sigma length mismatch");
    const Vector dec_col_norms = p.W_dec.colwise().squaredNorm().transpose();
    return dec_col_norms.dot(p.W_enc.array().square().matrix() * c.variances());
}

inline double marginal_penalty(const EncoderParams& p, const CorruptionSpec& c, bool invariance = true) {
    return (invariance ? invariance_penalty(p, c) : 0.0) + autoencoder_penalty(p, c);
}

inline double marginal_penalty_probe(const EncoderParams& pp, const CorruptionSpec& c, bool invariance = true) {
    return marginal_penalty(pp, c, invariance);
}

inline double marginal_penalty_gallery(const EncoderParams& pg, const CorruptionSpec& c, bool invariance = true) {
    return marginal_penalty(pg, c, invariance);
}

/// Value and gradient of one network's objective.
struct SideObjective {
    double value = 0.0;
    EncoderParams gradient;
};

/// One network's objective with the counterpart's latent codes frozen:
///   mean_i(||x_i - dec(enc(x_i))||^2 + ||enc(x_i) - z_i||^2)
///   + marginalization penalty + lambda(||W_enc||^2 + ||W_dec||^2).
/// `counterpart_latent` is ignored when invariance is disabled.
inline SideObjective side_objective(const EncoderParams& own, const Matrix& inputs, const Matrix& counterpart_latent,
                                    const CorruptionSpec& corruption, const Layer1Config& cfg, bool want_gradient = true) {
    const auto n = static_cast<double>(inputs.cols());
    if (inputs.cols() == 0) throw ConfigError("layer1: empty training batch");
    require_dims(inputs.rows() == own.input_dim(), "layer1 objective: input dimension mismatch");
    const bool inv = cfg.enable_invariance;
    if (inv)
        require_dims(counterpart_latent.rows() == own.hidden_dim() && counterpart_latent.cols() == inputs.cols(),
                     "layer1 objective: counterpart latent shape mismatch");

    const Matrix z = encode_batch(own, inputs);
    const Matrix resid = inputs - ((own.W_dec * z).colwise() + own.b_dec);
    Matrix gap;
    if (inv) gap = z - counterpart_latent;

    const double recon = resid.squaredNorm() / n;
    const double invariance = inv ? gap.squaredNorm() / n : 0.0;
    double penalty = 0.0;
    Vector enc_weighted;  // t_h = sum_d s_d^2 w_hd^2
    Vector dec_norms;     // c_h = sum_d' w_dec(d',h)^2
    Vector variances;
    if (cfg.enable_marginalization) {
        require_dims(corruption.sigma.size() == own.input_dim(), "layer1 objective: sigma length mismatch");
        variances = corruption.variances();
        enc_weighted = own.W_enc.array().square().matrix() * variances;
        dec_norms = own.W_dec.colwise().squaredNorm().transpose();
        penalty = (inv ? enc_weighted.sum() : 0.0) + dec_norms.dot(enc_weighted);
    }
    const double decay = cfg.lambda * (own.W_enc.squaredNorm() + own.W_dec.squaredNorm());

    SideObjective out;
    out.value = recon + invariance + penalty + decay;
    if (!std::isfinite(recon)) throw DivergenceError("layer1 objective: reconstruction term is not finite");
    if (!std::isfinite(invariance)) throw DivergenceError("layer1 objective: invariance term is not finite");
    if (!std::isfinite(penalty)) throw DivergenceError("layer1 objective: marginalization penalty is not finite");
    if (!std::isfinite(decay)) throw DivergenceError("layer1 objective: weight decay is not finite");
    if (!want_gradient) return out;

    Matrix grad_z = (-2.0 / n) * (own.W_dec.transpose() * resid);
    if (inv) grad_z += (2.0 / n) * gap;

    auto& g = out.gradient;
    g.W_dec = (-2.0 / n) * (resid * z.transpose()) + 2.0 * cfg.lambda * own.W_dec;
    g.b_dec = (-2.0 / n) * resid.rowwise().sum();
    g.W_enc = grad_z * inputs.transpose() + 2.0 * cfg.lambda * own.W_enc;
    g.b_enc = grad_z.rowwise().sum();
    if (cfg.enable_marginalization) {
        const Vector coupling = dec_norms.array() + (inv ? 1.0 : 0.0);
        g.W_enc.array() += 2.0 * (coupling * variances.transpose()).array() * own.W_enc.array();
        g.W_dec += 2.0 * own.W_dec * enc_weighted.asDiagonal();
    }
    if (!g.W_enc.allFinite() || !g.W_dec.allFinite() || !g.b_enc.allFinite() || !g.b_dec.allFinite())
        throw DivergenceError("layer1 objective: gradient is not finite");
    return out;
}

/// Probe objective with the gallery network frozen.
inline SideObjective objective_probe(const EncoderParams& pp, const EncoderParams& pg, const PairBatch& batch,
                                     const Layer1Config& cfg, const CorruptionSpec& corruption) {
    batch.validate();
    const Matrix frozen = cfg.enable_invariance ? encode_batch(pg, batch.gallery) : Matrix();
    return side_objective(pp, batch.probe, frozen, corruption, cfg);
}

inline SideObjective objective_probe(const EncoderParams& pp, const EncoderParams& pg, const PairBatch& batch,
                                     const Layer1Config& cfg) {
    return objective_probe(pp, pg, batch, cfg, CorruptionSpec::uniform(batch.probe.rows(), cfg.sigma));
}

/// Gallery objective with the probe network frozen.
inline SideObjective objective_gallery(const EncoderParams& pg, const EncoderParams& pp, const PairBatch& batch,
                                       const Layer1Config& cfg, const CorruptionSpec& corruption) {
    batch.validate();
    const Matrix frozen = cfg.enable_invariance ? encode_batch(pp, batch.probe) : Matrix();
    return side_objective(pg, batch.gallery, frozen, corruption, cfg);
}

inline SideObjective objective_gallery(const EncoderParams& pg, const EncoderParams& pp, const PairBatch& batch,
                                       const Layer1Config& cfg) {
    return objective_gallery(pg, pp, batch, cfg, CorruptionSpec::uniform(batch.gallery.rows(), cfg.sigma));
}

// ---------------------------------------------------------------------------
// Alternating training

enum class Network { Probe, Gallery };

inline const char* to_string(Network n) { return n == Network::Probe ? "probe" : "gallery"; }

struct Layer1TraceEntry {
    int round;
    Network network;
    int iteration;  // 0 = block start
    double objective;
};

struct Layer1Model {
    EncoderParams probe;
    EncoderParams gallery;
    std::vector<Layer1TraceEntry> trace;
};

/// Rounds of the alternation schedule: each round runs a probe block and then a
/// gallery block of min(kappa, remaining) iterations until max_iter is spent.
inline std::vector<int> alternation_blocks(int kappa, int max_iter) {
    std::vector<int> blocks;
    for (int used = 0; used < max_iter; used += kappa) blocks.push_back(std::min(kappa, max_iter - used));
    return blocks;
}

/// Trains both networks by alternating L-BFGS blocks. Deterministic for a
/// fixed seed. A non-finite objective aborts with a DivergenceError naming
/// the round, network and iteration.
inline Layer1Model train_alternating(const PairBatch& batch, const Layer1Config& cfg, std::uint64_t seed,
                                     const std::function<void(const Layer1TraceEntry&)>& on_trace = {}) {
    cfg.validate();
    batch.validate();
    const Eigen::Index dim = batch.probe.rows();
    auto rng = make_rng(seed, "layer1.init");
    Layer1Model model;
    model.probe = EncoderParams::random(dim, cfg.hidden_dim, rng);
    model.gallery = EncoderParams::random(dim, cfg.hidden_dim, rng);
    const auto corruption = CorruptionSpec::uniform(dim, cfg.sigma);

    LbfgsConfig lcfg;
    lcfg.memory = cfg.lbfgs_memory;

    const auto blocks = alternation_blocks(cfg.kappa, cfg.max_iter);
    for (std::size_t round = 0; round < blocks.size(); ++round) {
        for (Network net : {Network::Probe, Network::Gallery}) {
            EncoderParams& own = net == Network::Probe ? model.probe : model.gallery;
            const EncoderParams& other = net == Network::Probe ? model.gallery : model.probe;
            const Matrix& inputs = net == Network::Probe ? batch.probe : batch.gallery;
            const Matrix& other_inputs = net == Network::Probe ? batch.gallery : batch.probe;
            const Matrix frozen = cfg.enable_invariance ? encode_batch(other, other_inputs) : Matrix();

            int iteration = 0;
            const Objective f = [&](const Vector& x, Vector& grad) {
                try {
                    auto obj = side_objective(EncoderParams::unpack(x, dim, cfg.hidden_dim), inputs, frozen, corruption, cfg);
                    grad = obj.gradient.pack();
                    return obj.value;
                } catch (const DivergenceError& e) {
                    throw DivergenceError(std::string(e.what()) + " (round " + std::to_string(round) + ", " + to_string(net) +
                                          " network, iteration " + std::to_string(iteration) + ")");
                }
            };
            lcfg.max_iter = blocks[round];
            const auto res = lbfgs_minimize(f, own.pack(), lcfg, [&](int it, const Vector&, double value) {
                iteration = it + 1;
                Layer1TraceEntry e{static_cast<int>(round), net, it, value};
                model.trace.push_back(e);
                if (on_trace) on_trace(e);
            });
            own = EncoderParams::unpack(res.x, dim, cfg.hidden_dim);
        }
    }
    return model;
}

}  // namespace invmetric
