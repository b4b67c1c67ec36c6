// invmetric command-line driver: extract, synth, train, evaluate, verify.

#include "invmetric.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace invmetric;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool no_marg = false;
    bool no_inv = false;
    std::string out;
    std::string data;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "configuration file (key = value lines)");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_flag("--no-marg", o.no_marg, "disable marginalization (ablation)");
    cmd->add_flag("--no-inv", o.no_inv, "disable the invariance term (ablation)");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--data", o.data, "dataset directory (images or descriptor CSV)");
}

PipelineConfig resolve(const CommonOptions& o) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.no_marg) cfg.no_marg = true;
    if (o.no_inv) cfg.no_inv = true;
    if (!o.out.empty()) cfg.out = o.out;
    if (!o.data.empty()) cfg.data = o.data;
    return cfg;
}

std::pair<Dataset, Dataset> train_test(const Dataset& d, const PipelineConfig& cfg) {
    return split_train_test(d, cfg.train_count, cfg.seed);
}

int cmd_extract(const PipelineConfig& cfg) {
    if (cfg.data.empty()) throw IngestionError("extract needs --data");
    Dataset d = load_pipeline_dataset(cfg);
    write_descriptor_csv(d, cfg.out, cfg.stripes);
    std::cout << "extracted " << d.size() * static_cast<std::size_t>(cfg.stripes) << " stripe descriptors from " << d.size()
              << " images into " << cfg.out << '\n';
    return kExitOk;
}

int cmd_synth(const PipelineConfig& cfg) {
    const Dataset d = synth_generate(synth_config(cfg));
    write_descriptor_csv(d, cfg.out, cfg.stripes);
    std::cout << "wrote " << d.identities().size() << " synthetic identities (" << d.size() << " images) to " << cfg.out << '\n';
    return kExitOk;
}

int cmd_train(const PipelineConfig& cfg) {
    const Dataset d = load_pipeline_dataset(cfg);
    const auto [train, test] = train_test(d, cfg);
    const fs::path out(cfg.out);
    fs::create_directories(out);
    write_split_manifest(train, test, out / "split.csv");

    TrainingLog log;
    std::string current = "setup";
    try {
        const auto model = train_pipeline(train, cfg, &log, [&](const char* s) {
            current = s;
            std::clog << "train: " << s << '\n';
        });
        save_model(model, out);
    } catch (const Error& e) {
        std::cerr << "train: stage '" << current << "' failed: " << e.what() << '\n';
        throw;
    }
    log.write_csv(out / "train_log.csv");
    std::cout << "trained on " << train.identities().size() << " identities; model written to " << cfg.out << '\n';
    return kExitOk;
}

int cmd_evaluate(const PipelineConfig& cfg, const std::vector<std::string>& fuse) {
    const fs::path out(cfg.out);
    const Dataset d = load_pipeline_dataset(cfg);
    Dataset test;
    if (fs::exists(out / "split.csv")) {
        std::set<std::string> keep;
        for (const auto& [id, part] : read_split_manifest(out / "split.csv"))
            if (part == "test") keep.insert(id);
        test = d.subset(keep);
    } else {
        test = train_test(d, cfg).second;
    }

    const auto model = load_model(out, cfg.stripes);
    const auto ev = evaluate_pipeline(model, test, cfg);
    write_score_csv(ev.metric, out / "scores.csv");
    write_score_csv(ev.baseline, out / "scores_euclidean.csv");

    std::vector<std::pair<std::string, CmcCurve>> methods{{"metric", cmc(ev.metric)}, {"euclidean", cmc(ev.baseline)}};
    if (!fuse.empty()) {
        std::vector<ScoreMatrix> parts{ev.metric};
        for (const auto& f : fuse) parts.push_back(read_score_csv(f));
        const auto fused = fuse_scores(parts);
        write_score_csv(fused, out / "scores_fused.csv");
        methods.emplace_back("fused", cmc(fused));
    }
    write_cmc_csv(methods.front().second, out / "cmc.csv");
    write_rank_summary_csv(methods, out / "summary.csv");

    std::cout << "method,rank1,rank5,rank10,rank20\n";
    for (const auto& [name, curve] : methods) {
        std::cout << name;
        for (auto r : kSummaryRanks) std::cout << ',' << curve.at_rank(r);
        std::cout << '\n';
    }
    return kExitOk;
}

int cmd_verify(const PipelineConfig& cfg, bool inject_fault) {
    VerifyOptions opt;
    opt.seed = cfg.seed;
    opt.instances = cfg.verify_instances;
    opt.inject_fault = inject_fault || cfg.verify_inject_fault;
    const auto results = run_verification(opt);
    print_report(std::cout, results);
    for (const auto& r : results)
        if (!r.passed) return kExitFailure;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Invariant feature and metric learning for cross-view matching"};
    app.require_subcommand(1);

    CommonOptions common;
    auto* extract = app.add_subcommand("extract", "decode images and write stripe descriptor CSVs");
    auto* synth = app.add_subcommand("synth", "write a synthetic two-view descriptor dataset");
    auto* train = app.add_subcommand("train", "train kernel map, invariant layer, PCA and metric");
    auto* evaluate = app.add_subcommand("evaluate", "rank the test split and write CMC reports");
    auto* verify = app.add_subcommand("verify", "run gradient, Hessian, Monte-Carlo and CMC checks");
    for (auto* c : {extract, synth, train, evaluate, verify}) add_common(c, common);

    std::vector<std::string> fuse;
    evaluate->add_option("--fuse", fuse, "extra score CSVs to fuse with the metric scores");
    bool inject_fault = false;
    verify->add_flag("--inject-fault", inject_fault, "perturb one analytic gradient (negative control)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        const PipelineConfig cfg = resolve(common);
        if (*extract) return cmd_extract(cfg);
        if (*synth) return cmd_synth(cfg);
        if (*train) return cmd_train(cfg);
        if (*evaluate) return cmd_evaluate(cfg, fuse);
        if (*verify) return cmd_verify(cfg, inject_fault);
    } catch (const IngestionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ProtocolError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
