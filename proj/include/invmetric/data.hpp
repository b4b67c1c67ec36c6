#pragma once

// Two-view datasets: directory ingestion, descriptor CSV persistence,
// identity-level train/test splits and a synthetic generator.

#include "invmetric/core.hpp"
#include "invmetric/features.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

namespace invmetric {

enum class View { A, B };

inline const char* to_string(View v) { return v == View::A ? "a" : "b"; }

inline View parse_view(std::string_view s) {
    if (s == "a" || s == "A") return View::A;
    if (s == "b" || s == "B") return View::B;
    throw IngestionError("unknown view '" + std::string(s) + "'");
}

using StripeList = std::vector<StripeDescriptor>;

struct Record {
    std::string identity;
    View view = View::A;
    std::string image_id;
    std::variant<ImageRGB, StripeList> content;

    bool has_image() const noexcept { return std::holds_alternative<ImageRGB>(content); }
};

/// Stripe descriptors of a record, extracting them from the image if needed.
inline StripeList record_descriptors(const Record& r, int stripes = 6) {
    if (const auto* img = std::get_if<ImageRGB>(&r.content)) return image_descriptors(*img, stripes);
    return std::get<StripeList>(r.content);
}

struct Dataset {
    std::vector<Record> records;

    std::size_t size() const noexcept { return records.size(); }

    /// Sorted distinct identities.
    std::vector<std::string> identities() const {
        std::set<std::string> ids;
        for (const auto& r : records) ids.insert(r.identity);
        return {ids.begin(), ids.end()};
    }

    /// Records whose identity is in `keep`, original order preserved.
    Dataset subset(const std::set<std::string>& keep) const {
        Dataset out;
        for (const auto& r : records)
            if (keep.count(r.identity)) out.records.push_back(r);
        return out;
    }
};

inline void sort_records(Dataset& d) {
    std::stable_sort(d.records.begin(), d.records.end(), [](const Record& a, const Record& b) {
        return std::tie(a.identity, a.view, a.image_id) < std::tie(b.identity, b.view, b.image_id);
    });
}

/// Replaces every image with its precomputed stripe descriptors.
inline Dataset extract_descriptors(const Dataset& d, int stripes = 6) {
    Dataset out;
    out.records.reserve(d.size());
    for (const auto& r : d.records) out.records.push_back({r.identity, r.view, r.image_id, record_descriptors(r, stripes)});
    return out;
}

// ---------------------------------------------------------------------------
// Directory ingestion: root/view_a/<id>_<idx>.ppm, root/view_b/<id>_<idx>.ppm

/// Splits "<id>_<idx>" at the last underscore; idx must be decimal digits.
inline std::optional<std::pair<std::string, std::string>> parse_image_stem(const std::string& stem) {
    const auto us = stem.rfind('_');
    if (us == std::string::npos || us == 0 || us + 1 == stem.size()) return std::nullopt;
    const std::string idx = stem.substr(us + 1);
    if (!std::all_of(idx.begin(), idx.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
    return std::make_pair(stem.substr(0, us), idx);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Loads both views of a dataset. Every problem (missing view directory,
/// unparseable name, undecodable image) is collected and reported in one
/// IngestionError.
inline Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    Dataset d;
    std::vector<std::string> problems;
    for (View v : {View::A, View::B}) {
        const fs::path dir = root / (std::string("view_") + to_string(v));
        if (!fs::is_directory(dir)) {
            problems.push_back("missing view directory " + dir.string());
            continue;
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto parsed = f.extension() == ".ppm" ? parse_image_stem(f.stem().string()) : std::nullopt;
            if (!parsed) {
                problems.push_back("unparseable filename " + f.string() + " (expected <id>_<idx>.ppm)");
                continue;
            }
            try {
                const auto bytes = read_file_bytes(f);
                d.records.push_back({parsed->first, v, f.stem().string(), decode_ppm(bytes)});
            } catch (const Error& e) {
                problems.push_back(f.string() + ": " + e.what());
            }
        }
    }
    if (!problems.empty()) {
        std::string msg = "dataset ingestion failed:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IngestionError(msg);
    }
    sort_records(d);
    return d;
}

// ---------------------------------------------------------------------------
// Descriptor CSV: descriptors_view_a.csv / descriptors_view_b.csv hold one
// stripe per row (430 columns); index.csv maps (image_id, view, stripe) to
// the row within its view file.

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw IngestionError("bad number '" + s + "' in " + where);
    return v;
}

inline void write_descriptor_csv(const Dataset& d, const std::filesystem::path& dir, int stripes = 6) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.csv");
    std::ofstream va(dir / "descriptors_view_a.csv");
    std::ofstream vb(dir / "descriptors_view_b.csv");
    if (!index || !va || !vb) throw IngestionError("cannot write descriptor files in " + dir.string());
    index << "image_id,identity,view,stripe,row\n";
    for (auto* out : {&va, &vb}) {
        for (int c = 0; c < StripeDescriptor::kDim; ++c) *out << (c ? "," : "") << 'd' << c;
        *out << '\n';
    }
    std::size_t rows[2] = {0, 0};
    for (const auto& r : d.records) {
        auto& out = r.view == View::A ? va : vb;
        auto& row = rows[r.view == View::A ? 0 : 1];
        const auto descs = record_descriptors(r, stripes);
        for (std::size_t s = 0; s < descs.size(); ++s) {
            index << r.image_id << ',' << r.identity << ',' << to_string(r.view) << ',' << s << ',' << row++ << '\n';
            const auto& v = descs[s].values;
            for (Eigen::Index c = 0; c < v.size(); ++c) out << (c ? "," : "") << format_double(v[c]);
            out << '\n';
        }
    }
}

inline std::vector<Vector> read_descriptor_rows(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IngestionError("cannot open " + file.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<Vector> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != static_cast<std::size_t>(StripeDescriptor::kDim))
            throw IngestionError(file.string() + ": row " + std::to_string(rows.size()) + " has " + std::to_string(cells.size()) +
                                 " columns, expected 430");
        Vector v(StripeDescriptor::kDim);
        for (int c = 0; c < StripeDescriptor::kDim; ++c) v[c] = parse_double(cells[static_cast<std::size_t>(c)], file.string());
        rows.push_back(std::move(v));
    }
    return rows;
}

/// Loads a dataset of precomputed descriptors written by write_descriptor_csv.
inline Dataset read_descriptor_csv(const std::filesystem::path& dir) {
    const auto rows_a = read_descriptor_rows(dir / "descriptors_view_a.csv");
    const auto rows_b = read_descriptor_rows(dir / "descriptors_view_b.csv");
    std::ifstream index(dir / "index.csv");
    if (!index) throw IngestionError("cannot open " + (dir / "index.csv").string());
    std::string line;
    std::getline(index, line);

    struct Pending {
        std::string identity;
        View view;
        std::map<std::size_t, StripeDescriptor> stripes;
    };
    std::map<std::pair<int, std::string>, Pending> images;
    std::size_t lineno = 1;
    while (std::getline(index, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 5) throw IngestionError("index.csv line " + std::to_string(lineno) + ": expected 5 columns");
        const View v = parse_view(cells[2]);
        const auto stripe = static_cast<std::size_t>(parse_double(cells[3], "index.csv"));
        const auto row = static_cast<std::size_t>(parse_double(cells[4], "index.csv"));
        const auto& rows = v == View::A ? rows_a : rows_b;
        if (row >= rows.size()) throw IngestionError("index.csv line " + std::to_string(lineno) + ": row out of range");
        auto& img = images[{static_cast<int>(v), cells[0]}];
        img.identity = cells[1];
        img.view = v;
        img.stripes[stripe] = StripeDescriptor{rows[row]};
    }
    Dataset d;
    for (auto& [key, img] : images) {
        StripeList list;
        for (std::size_t s = 0; s < img.stripes.size(); ++s) {
            const auto it = img.stripes.find(s);
            if (it == img.stripes.end()) throw IngestionError("image " + key.second + " has non-contiguous stripe indices");
            list.push_back(it->second);
        }
        d.records.push_back({img.identity, img.view, key.second, std::move(list)});
    }
    sort_records(d);
    return d;
}

// ---------------------------------------------------------------------------
// Splits

/// Samples `train_count` identities uniformly without replacement into the
/// training partition; the rest form the test partition.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& d, std::size_t train_count, std::uint64_t seed) {
    auto ids = d.identities();
    if (train_count == 0 || train_count >= ids.size())
        throw ConfigError("train count " + std::to_string(train_count) + " must be in [1, " + std::to_string(ids.size()) + ")");
    auto rng = make_rng(seed, "data.split");
    for (std::size_t i = 0; i < train_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    const std::set<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_count));
    const std::set<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(train_count), ids.end());
    return {d.subset(train), d.subset(test)};
}

inline void write_split_manifest(const Dataset& train, const Dataset& test, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IngestionError("cannot write " + file.string());
    out << "identity,partition\n";
    for (const auto& id : train.identities()) out << id << ",train\n";
    for (const auto& id : test.identities()) out << id << ",test\n";
}

/// identity -> partition ("train" or "test").
inline std::map<std::string, std::string> read_split_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IngestionError("cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::string> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 2 || (cells[1] != "train" && cells[1] != "test"))
            throw IngestionError("malformed split manifest line: " + line);
        out[cells[0]] = cells[1];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic two-view data

struct SynthConfig {
    int identities = 64;
    int latent_dim = 16;
    double noise_scale = 0.05;
    /// 0 = both views share the same generator; 1 = independent generators.
    double view_divergence = 0.95;
    int images_per_view = 1;
    int stripes = 6;
    std::uint64_t seed = 0;

    void validate() const {
        if (identities <= 0 || latent_dim <= 0 || images_per_view <= 0 || stripes <= 0)
            throw ConfigError("synthetic data: counts must be positive");
        if (!(noise_scale >= 0)) throw ConfigError("synthetic data: noise_scale must be nonnegative");
        if (!(view_divergence >= 0 && view_divergence <= 1)) throw ConfigError("synthetic data: view_divergence must be in [0,1]");
    }
};

/// Histogram-like descriptors from a latent identity code u ~ N(0, I):
/// blocknorm(softplus(G_{v,s} u + h_{v,s} + eps)), eps ~ N(0, noise^2).
/// Gallery-view generators mix the probe-view ones with independent draws
/// according to view_divergence.
inline Dataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    constexpr int kDim = StripeDescriptor::kDim;
    auto gen_rng = make_rng(cfg.seed, "synth.generators");
    std::normal_distribution<double> unit(0.0, 1.0);
    const double gscale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    const double keep = std::sqrt(1.0 - cfg.view_divergence * cfg.view_divergence);

    struct Generator {
        Matrix G;
        Vector h;
    };
    std::vector<Generator> gens[2];
    for (int s = 0; s < cfg.stripes; ++s) {
        Generator a{Matrix(kDim, cfg.latent_dim), Vector(kDim)};
        Generator indep{Matrix(kDim, cfg.latent_dim), Vector(kDim)};
        for (Eigen::Index i = 0; i < a.G.size(); ++i) a.G.data()[i] = gscale * unit(gen_rng);
        for (Eigen::Index i = 0; i < kDim; ++i) a.h[i] = unit(gen_rng);
        for (Eigen::Index i = 0; i < indep.G.size(); ++i) indep.G.data()[i] = gscale * unit(gen_rng);
        for (Eigen::Index i = 0; i < kDim; ++i) indep.h[i] = unit(gen_rng);
        Generator b{keep * a.G + cfg.view_divergence * indep.G, keep * a.h + cfg.view_divergence * indep.h};
        gens[0].push_back(std::move(a));
        gens[1].push_back(std::move(b));
    }

    auto id_rng = make_rng(cfg.seed, "synth.identities");
    auto noise_rng = make_rng(cfg.seed, "synth.noise");
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset d;
    const int width = std::max(4, static_cast<int>(std::to_string(cfg.identities - 1).size()));
    for (int id = 0; id < cfg.identities; ++id) {
        Vector u(cfg.latent_dim);
        for (auto& x : u) x = unit(id_rng);
        std::string name = std::to_string(id);
        name = "id" + std::string(static_cast<std::size_t>(width) - name.size(), '0') + name;
        for (View v : {View::A, View::B}) {
            for (int img = 0; img < cfg.images_per_view; ++img) {
                StripeList stripes;
                for (int s = 0; s < cfg.stripes; ++s) {
                    const auto& g = gens[v == View::A ? 0 : 1][static_cast<std::size_t>(s)];
                    Vector pre = g.G * u + g.h;
                    for (auto& x : pre) x += cfg.noise_scale * noise(noise_rng);
                    Vector desc = pre.unaryExpr([](double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); });
                    normalize_blocks(desc);
                    stripes.push_back({std::move(desc)});
                }
                d.records.push_back({name, v, name + "_" + std::to_string(img), std::move(stripes)});
            }
        }
    }
    sort_records(d);
    return d;
}

}  // namespace invmetric
