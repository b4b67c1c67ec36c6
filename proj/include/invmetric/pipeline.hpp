#pragma once

// End-to-end pipeline: exemplar kernel map -> invariant layer -> stripe
// concatenation -> PCA -> metric, plus the flat key = value configuration.

#include "invmetric/core.hpp"
#include "invmetric/data.hpp"
#include "invmetric/eval.hpp"
#include "invmetric/io.hpp"
#include "invmetric/kernelmap.hpp"
#include "invmetric/layer1.hpp"
#include "invmetric/metric.hpp"
#include "invmetric/numerics.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace invmetric {

struct PipelineConfig {
    std::uint64_t seed = 0;
    int stripes = 6;
    int image_width = 0;   // 0 = keep the decoded size
    int image_height = 0;
    std::size_t train_count = 316;

    double kernel_bandwidth = 0.0;  // 0 = mean pairwise chi2
    std::size_t kernel_max_pairs = 100000;

    Layer1Config layer1;
    MetricConfig metric;  // metric.dim is the PCA output dimension

    bool no_marg = false;
    bool no_inv = false;

    SynthConfig synth;

    std::string data;
    std::string out = "out";

    int verify_instances = 20;
    bool verify_inject_fault = false;

    Layer1Config effective_layer1() const {
        Layer1Config c = layer1;
        c.enable_invariance = layer1.enable_invariance && !no_inv;
        c.enable_marginalization = layer1.enable_marginalization && !no_marg;
        return c;
    }
    MetricConfig effective_metric() const {
        MetricConfig c = metric;
        c.enable_marginalization = metric.enable_marginalization && !no_marg;
        return c;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) throw ConfigError("expected a number, got '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return x;
}

inline std::uint64_t parse_u64(const std::string& v) {
    char* end = nullptr;
    if (v.empty() || v[0] == '-') throw ConfigError("expected a nonnegative integer, got '" + v + "'");
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size()) throw ConfigError("expected a nonnegative integer, got '" + v + "'");
    return x;
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
    static const std::map<std::string, Setter> setters = {
        {"seed", [](PipelineConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
        {"stripes", [](PipelineConfig& c, const std::string& v) { c.stripes = static_cast<int>(parse_int(v)); }},
        {"image_width", [](PipelineConfig& c, const std::string& v) { c.image_width = static_cast<int>(parse_int(v)); }},
        {"image_height", [](PipelineConfig& c, const std::string& v) { c.image_height = static_cast<int>(parse_int(v)); }},
        {"train_count", [](PipelineConfig& c, const std::string& v) { c.train_count = parse_u64(v); }},
        {"kernel_bandwidth", [](PipelineConfig& c, const std::string& v) { c.kernel_bandwidth = parse_real(v); }},
        {"kernel_max_pairs", [](PipelineConfig& c, const std::string& v) { c.kernel_max_pairs = parse_u64(v); }},
        {"layer1_hidden", [](PipelineConfig& c, const std::string& v) { c.layer1.hidden_dim = parse_int(v); }},
        {"layer1_lambda", [](PipelineConfig& c, const std::string& v) { c.layer1.lambda = parse_real(v); }},
        {"layer1_sigma", [](PipelineConfig& c, const std::string& v) { c.layer1.sigma = parse_real(v); }},
        {"layer1_kappa", [](PipelineConfig& c, const std::string& v) { c.layer1.kappa = static_cast<int>(parse_int(v)); }},
        {"layer1_max_iter", [](PipelineConfig& c, const std::string& v) { c.layer1.max_iter = static_cast<int>(parse_int(v)); }},
        {"layer1_memory", [](PipelineConfig& c, const std::string& v) { c.layer1.lbfgs_memory = static_cast<int>(parse_int(v)); }},
        {"pca_dim", [](PipelineConfig& c, const std::string& v) { c.metric.dim = parse_int(v); }},
        {"metric_sigma", [](PipelineConfig& c, const std::string& v) { c.metric.sigma = parse_real(v); }},
        {"metric_lambda_a", [](PipelineConfig& c, const std::string& v) { c.metric.lambda_a = parse_real(v); }},
        {"metric_lambda_b", [](PipelineConfig& c, const std::string& v) { c.metric.lambda_b = parse_real(v); }},
        {"metric_rank_a", [](PipelineConfig& c, const std::string& v) { c.metric.rank_a = parse_int(v); }},
        {"metric_rank_b", [](PipelineConfig& c, const std::string& v) { c.metric.rank_b = parse_int(v); }},
        {"metric_negatives", [](PipelineConfig& c, const std::string& v) { c.metric.negatives_per_positive = static_cast<int>(parse_int(v)); }},
        {"metric_max_iter", [](PipelineConfig& c, const std::string& v) { c.metric.max_iter = static_cast<int>(parse_int(v)); }},
        {"metric_corrupt_both", [](PipelineConfig& c, const std::string& v) { c.metric.corrupt_both = parse_bool(v); }},
        {"no_marg", [](PipelineConfig& c, const std::string& v) { c.no_marg = parse_bool(v); }},
        {"no_inv", [](PipelineConfig& c, const std::string& v) { c.no_inv = parse_bool(v); }},
        {"synth_identities", [](PipelineConfig& c, const std::string& v) { c.synth.identities = static_cast<int>(parse_int(v)); }},
        {"synth_latent_dim", [](PipelineConfig& c, const std::string& v) { c.synth.latent_dim = static_cast<int>(parse_int(v)); }},
        {"synth_noise", [](PipelineConfig& c, const std::string& v) { c.synth.noise_scale = parse_real(v); }},
        {"synth_view_divergence", [](PipelineConfig& c, const std::string& v) { c.synth.view_divergence = parse_real(v); }},
        {"synth_images_per_view", [](PipelineConfig& c, const std::string& v) { c.synth.images_per_view = static_cast<int>(parse_int(v)); }},
        {"data", [](PipelineConfig& c, const std::string& v) { c.data = v; }},
        {"out", [](PipelineConfig& c, const std::string& v) { c.out = v; }},
        {"verify_instances", [](PipelineConfig& c, const std::string& v) { c.verify_instances = static_cast<int>(parse_int(v)); }},
        {"verify_inject_fault", [](PipelineConfig& c, const std::string& v) { c.verify_inject_fault = parse_bool(v); }},
    };
    return setters;
}

}  // namespace detail

/// Names of all accepted configuration keys.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::config_setters()) keys.push_back(k);
    return keys;
}

/// Applies one key = value assignment; unknown keys are errors.
inline void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    const auto& setters = detail::config_setters();
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second(cfg, value);
}

/// Parses flat "key = value" lines; '#' starts a comment.
inline PipelineConfig parse_config(const std::string& text, PipelineConfig cfg = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& p, PipelineConfig cfg = {}) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open config file " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(cfg));
}

// ---------------------------------------------------------------------------
// Data sources

/// Synthetic generator settings carried by the pipeline config.
inline SynthConfig synth_config(const PipelineConfig& cfg) {
    SynthConfig s = cfg.synth;
    s.stripes = cfg.stripes;
    s.seed = cfg.seed;
    return s;
}

/// Loads `cfg.data`: an image directory (view_a/, view_b/), a descriptor CSV
/// directory (index.csv) or, when empty, the synthetic generator. Images are
/// resized when image_width/image_height are set and reduced to descriptors.
inline Dataset load_pipeline_dataset(const PipelineConfig& cfg) {
    if (cfg.data.empty()) return synth_generate(synth_config(cfg));
    const std::filesystem::path root(cfg.data);
    if (!std::filesystem::is_directory(root)) throw IngestionError("data directory " + root.string() + " does not exist");
    if (std::filesystem::exists(root / "index.csv")) return read_descriptor_csv(root);
    Dataset d = load_dataset(root);
    if (cfg.image_width > 0 || cfg.image_height > 0) {
        for (auto& r : d.records) {
            auto& img = std::get<ImageRGB>(r.content);
            img = resize_bilinear(img, cfg.image_width > 0 ? cfg.image_width : img.width(),
                                  cfg.image_height > 0 ? cfg.image_height : img.height());
        }
    }
    return extract_descriptors(d, cfg.stripes);
}

// ---------------------------------------------------------------------------
// Model

struct PipelineModel {
    ExemplarSet exemplars;
    EncoderParams probe_net;
    EncoderParams gallery_net;
    PcaModel pca;
    MetricParams metric;
    int stripes = 6;
};

struct TrainingLog {
    std::vector<Layer1TraceEntry> layer1;
    std::vector<double> metric;

    void write_csv(const std::filesystem::path& p) const {
        auto out = open_csv(p);
        out << "stage,round,network,iteration,objective\n";
        for (const auto& e : layer1)
            out << "layer1," << e.round << ',' << to_string(e.network) << ',' << e.iteration << ',' << format_double(e.objective) << '\n';
        for (std::size_t i = 0; i < metric.size(); ++i) out << "metric,0,metric," << i << ',' << format_double(metric[i]) << '\n';
    }
};

/// Stripe descriptors of records as columns; record i, stripe s -> column i*S + s.
inline Matrix stripe_matrix(const std::vector<Record>& records, int stripes) {
    Matrix out(StripeDescriptor::kDim, static_cast<Eigen::Index>(records.size()) * stripes);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto descs = record_descriptors(records[i], stripes);
        if (descs.size() != static_cast<std::size_t>(stripes))
            throw DimensionError("image " + records[i].image_id + " has " + std::to_string(descs.size()) + " stripes, expected " +
                                 std::to_string(stripes));
        for (int s = 0; s < stripes; ++s)
            out.col(static_cast<Eigen::Index>(i) * stripes + s) = descs[static_cast<std::size_t>(s)].values;
    }
    return out;
}

/// Concatenated per-stripe latent codes, one column (S*D_h) per image.
inline Matrix global_representation(const EncoderParams& net, const Matrix& kernel_responses, int stripes) {
    const Matrix z = encode_batch(net, kernel_responses);
    return z.reshaped(z.rows() * stripes, z.cols() / stripes);
}

/// PCA-projected representations (D_ml x n) of records seen from `view`.
inline Matrix project_records(const PipelineModel& m, const std::vector<Record>& records, View view) {
    const Matrix responses = kernel_map_batch(stripe_matrix(records, m.stripes), m.exemplars);
    const Matrix global = global_representation(view == View::A ? m.probe_net : m.gallery_net, responses, m.stripes);
    return pca_project_rows(m.pca, global.transpose()).transpose();
}

/// Trains every stage on the training identities.
/// `on_stage` is told the name of each stage as it starts.
inline PipelineModel train_pipeline(const Dataset& train, const PipelineConfig& cfg, TrainingLog* log = nullptr,
                                    const std::function<void(const char*)>& on_stage = {}) {
    const auto stage = [&](const char* name) {
        if (on_stage) on_stage(name);
    };
    stage("pairing");
    const auto split = single_shot_split(train, stream_seed(cfg.seed, "pipeline.train_split"));
    if (split.probe.size() < 2) throw ConfigError("training needs at least two identities present in both views");
    const auto stripes = cfg.stripes;

    const Matrix probe_desc = stripe_matrix(split.probe, stripes);
    const Matrix gallery_desc = stripe_matrix(split.gallery, stripes);
    stage("kernel map");
    Matrix pooled(probe_desc.rows(), probe_desc.cols() + gallery_desc.cols());
    pooled << probe_desc, gallery_desc;
    const double bandwidth =
        cfg.kernel_bandwidth > 0 ? cfg.kernel_bandwidth : estimate_bandwidth(pooled, cfg.seed, cfg.kernel_max_pairs);

    PipelineModel model{ExemplarSet(std::move(pooled), bandwidth), {}, {}, {}, {}, stripes};
    PairBatch batch{kernel_map_batch(probe_desc, model.exemplars), kernel_map_batch(gallery_desc, model.exemplars)};

    stage("layer1");
    auto l1 = train_alternating(batch, cfg.effective_layer1(), stream_seed(cfg.seed, "pipeline.layer1"));
    model.probe_net = std::move(l1.probe);
    model.gallery_net = std::move(l1.gallery);

    stage("pca");
    const Matrix gp = global_representation(model.probe_net, batch.probe, stripes);
    const Matrix gg = global_representation(model.gallery_net, batch.gallery, stripes);
    Matrix rows(gp.cols() + gg.cols(), gp.rows());
    rows << gp.transpose(), gg.transpose();
    const auto mcfg = cfg.effective_metric();
    model.pca = pca_fit(rows, mcfg.dim);

    stage("metric");
    const Matrix kp = pca_project_rows(model.pca, gp.transpose()).transpose();
    const Matrix kg = pca_project_rows(model.pca, gg.transpose()).transpose();
    const auto pairs = build_metric_pairs(kp, kg, mcfg.negatives_per_positive, stream_seed(cfg.seed, "pipeline.pairs"));
    auto metric = train_metric(pairs, mcfg, stream_seed(cfg.seed, "pipeline.metric"));
    model.metric = std::move(metric.params);

    if (log) {
        log->layer1 = std::move(l1.trace);
        log->metric = std::move(metric.trace);
    }
    return model;
}

/// Metric scores of a single-shot split.
inline ScoreMatrix score_split(const PipelineModel& m, const SingleShotSplit& split) {
    ScoreMatrix s;
    s.scores = score_matrix(m.metric, project_records(m, split.probe, View::A), project_records(m, split.gallery, View::B));
    s.probe_ids = split.identities();
    for (const auto& r : split.gallery) s.gallery_ids.push_back(r.identity);
    return s;
}

struct Evaluation {
    ScoreMatrix metric;
    ScoreMatrix baseline;  // raw-descriptor Euclidean
};

/// Scores the test identities under the single-shot protocol.
inline Evaluation evaluate_pipeline(const PipelineModel& m, const Dataset& test, const PipelineConfig& cfg) {
    const auto split = single_shot_split(test, stream_seed(cfg.seed, "pipeline.test_split"));
    if (split.probe.empty()) throw ProtocolError("no test identity has images in both views");
    return {score_split(m, split), euclidean_baseline(split, cfg.stripes)};
}

inline void save_model(const PipelineModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_exemplars(m.exemplars, dir / "exemplars.bin");
    save_encoder(m.probe_net, dir / "probe_net.bin");
    save_encoder(m.gallery_net, dir / "gallery_net.bin");
    save_pca(m.pca, dir / "pca.bin");
    save_metric(m.metric, dir / "metric.bin");
}

inline PipelineModel load_model(const std::filesystem::path& dir, int stripes) {
    return {load_exemplars(dir / "exemplars.bin"), load_encoder(dir / "probe_net.bin"), load_encoder(dir / "gallery_net.bin"),
            load_pca(dir / "pca.bin"), load_metric(dir / "metric.bin"), stripes};
}

}  // namespace invmetric
