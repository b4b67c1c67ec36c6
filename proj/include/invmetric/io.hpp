#pragma once

// Binary model files and CSV reports.
//
// Exemplar file (little-endian):
//   "IVMEXEM1" | u64 count | u64 dim | f64 bandwidth | count*dim f64, row-major
//   (one exemplar per row)
//
// Tensor container (little-endian), used for every other artifact:
//   "IVMTNSR1" | u64 tensor_count |
//   per tensor: u64 name_len | name bytes | u64 rank | rank*u64 dims | f64 data, row-major

#include "invmetric/core.hpp"
#include "invmetric/data.hpp"
#include "invmetric/eval.hpp"
#include "invmetric/kernelmap.hpp"
#include "invmetric/layer1.hpp"
#include "invmetric/metric.hpp"
#include "invmetric/numerics.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace invmetric {

namespace detail {

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& p) : out_(p, std::ios::binary), path_(p) {
        if (!out_) throw IngestionError("cannot write " + p.string());
    }
    void magic(const char (&m)[9]) { out_.write(m, 8); }
    void u64(std::uint64_t v) { raw(to_little(v)); }
    void f64(double v) { raw(to_little(v)); }
    void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
    void finish() {
        out_.flush();
        if (!out_) throw IngestionError("write failed for " + path_.string());
    }

private:
    template <typename T>
    void raw(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    std::ofstream out_;
    std::filesystem::path path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& p) : in_(p, std::ios::binary), path_(p) {
        if (!in_) throw IngestionError("cannot open " + p.string());
    }
    void expect_magic(const char (&m)[9]) {
        char buf[8];
        read(buf, 8);
        if (std::memcmp(buf, m, 8) != 0) throw IngestionError(path_.string() + ": bad magic, expected " + std::string(m, 8));
    }
    std::uint64_t u64() { return to_little(raw<std::uint64_t>()); }
    double f64() { return to_little(raw<double>()); }
    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

private:
    template <typename T>
    T raw() {
        T v;
        read(reinterpret_cast<char*>(&v), sizeof(T));
        return v;
    }
    void read(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) throw IngestionError(path_.string() + ": truncated file");
    }
    std::ifstream in_;
    std::filesystem::path path_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Exemplars

inline void save_exemplars(const ExemplarSet& ex, const std::filesystem::path& p) {
    detail::BinaryWriter w(p);
    w.magic("IVMEXEM1");
    w.u64(static_cast<std::uint64_t>(ex.size()));
    w.u64(static_cast<std::uint64_t>(ex.dim()));
    w.f64(ex.bandwidth());
    for (Eigen::Index j = 0; j < ex.size(); ++j)
        for (Eigen::Index d = 0; d < ex.dim(); ++d) w.f64(ex.exemplars()(d, j));
    w.finish();
}

inline ExemplarSet load_exemplars(const std::filesystem::path& p) {
    detail::BinaryReader r(p);
    r.expect_magic("IVMEXEM1");
    const auto count = r.u64();
    const auto dim = r.u64();
    const double bandwidth = r.f64();
    if (count == 0 || dim == 0 || count * dim > (std::uint64_t{1} << 34)) throw IngestionError(p.string() + ": implausible exemplar shape");
    Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index d = 0; d < m.rows(); ++d) m(d, j) = r.f64();
    return ExemplarSet(std::move(m), bandwidth);
}

// ---------------------------------------------------------------------------
// Tensor container

struct Tensor {
    std::vector<std::uint64_t> shape;
    std::vector<double> data;  // row-major

    static Tensor from(const Matrix& m) {
        Tensor t{{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
        t.data.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
        return t;
    }
    static Tensor from(const Vector& v) { return {{static_cast<std::uint64_t>(v.size())}, {v.data(), v.data() + v.size()}}; }
    static Tensor scalar(double v) { return {{}, {v}}; }

    Matrix matrix() const {
        if (shape.size() != 2) throw IngestionError("tensor is not a matrix");
        Matrix m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = data[k++];
        return m;
    }
    Vector vector() const {
        if (shape.size() != 1) throw IngestionError("tensor is not a vector");
        return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
    }
    double scalar_value() const {
        if (!shape.empty()) throw IngestionError("tensor is not a scalar");
        return data.at(0);
    }
};

using TensorMap = std::map<std::string, Tensor>;

inline void save_tensors(const TensorMap& tensors, const std::filesystem::path& p) {
    detail::BinaryWriter w(p);
    w.magic("IVMTNSR1");
    w.u64(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.u64(name.size());
        w.bytes(name);
        w.u64(t.shape.size());
        for (auto d : t.shape) w.u64(d);
        for (double v : t.data) w.f64(v);
    }
    w.finish();
}

inline TensorMap load_tensors(const std::filesystem::path& p) {
    detail::BinaryReader r(p);
    r.expect_magic("IVMTNSR1");
    const auto count = r.u64();
    if (count > 1024) throw IngestionError(p.string() + ": implausible tensor count");
    TensorMap out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.u64();
        if (name_len > 4096) throw IngestionError(p.string() + ": implausible tensor name length");
        std::string name = r.bytes(name_len);
        Tensor t;
        const auto rank = r.u64();
        if (rank > 8) throw IngestionError(p.string() + ": implausible tensor rank");
        std::uint64_t elems = 1;
        for (std::uint64_t k = 0; k < rank; ++k) {
            t.shape.push_back(r.u64());
            elems *= t.shape.back();
        }
        if (elems > (std::uint64_t{1} << 34)) throw IngestionError(p.string() + ": implausible tensor size");
        t.data.resize(elems);
        for (auto& v : t.data) v = r.f64();
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

inline const Tensor& require_tensor(const TensorMap& m, const std::string& name) {
    const auto it = m.find(name);
    if (it == m.end()) throw IngestionError("model file lacks tensor '" + name + "'");
    return it->second;
}

inline void save_encoder(const EncoderParams& p, const std::filesystem::path& path) {
    save_tensors({{"W_enc", Tensor::from(p.W_enc)},
                  {"b_enc", Tensor::from(p.b_enc)},
                  {"W_dec", Tensor::from(p.W_dec)},
                  {"b_dec", Tensor::from(p.b_dec)}},
                 path);
}

inline EncoderParams load_encoder(const std::filesystem::path& path) {
    const auto t = load_tensors(path);
    EncoderParams p{require_tensor(t, "W_enc").matrix(), require_tensor(t, "b_enc").vector(), require_tensor(t, "W_dec").matrix(),
                    require_tensor(t, "b_dec").vector()};
    p.validate();
    return p;
}

inline void save_pca(const PcaModel& m, const std::filesystem::path& path) {
    save_tensors({{"mean", Tensor::from(m.mean)}, {"basis", Tensor::from(m.basis)}, {"eigenvalues", Tensor::from(m.eigenvalues)}},
                 path);
}

inline PcaModel load_pca(const std::filesystem::path& path) {
    const auto t = load_tensors(path);
    PcaModel m{require_tensor(t, "mean").vector(), require_tensor(t, "basis").matrix(), require_tensor(t, "eigenvalues").vector()};
    require_dims(m.basis.rows() == m.mean.size() && m.basis.cols() == m.eigenvalues.size(), "PCA model: inconsistent shapes");
    return m;
}

inline void save_metric(const MetricParams& p, const std::filesystem::path& path) {
    const Vector c = p.c.size() == p.dim() ? p.c : Vector::Zero(p.dim());
    save_tensors({{"M", Tensor::from(p.M)}, {"N", Tensor::from(p.N)}, {"bias", Tensor::scalar(p.bias)}, {"c", Tensor::from(c)}},
                 path);
}

inline MetricParams load_metric(const std::filesystem::path& path) {
    const auto t = load_tensors(path);
    MetricParams p{require_tensor(t, "M").matrix(), require_tensor(t, "N").matrix(), require_tensor(t, "bias").scalar_value(),
                   require_tensor(t, "c").vector()};
    require_dims(p.N.rows() == p.M.rows() && p.c.size() == p.M.rows(), "metric model: inconsistent shapes");
    return p;
}

// ---------------------------------------------------------------------------
// CSV reports

inline std::ofstream open_csv(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw IngestionError("cannot write " + p.string());
    return out;
}

inline void write_cmc_csv(const CmcCurve& c, const std::filesystem::path& p) {
    auto out = open_csv(p);
    out << "rank,rate\n";
    for (std::size_t r = 0; r < c.rates.size(); ++r) out << r + 1 << ',' << format_double(c.rates[r]) << '\n';
}

/// Ranks reported in summaries.
inline constexpr std::size_t kSummaryRanks[] = {1, 5, 10, 20};

inline void write_rank_summary_csv(const std::vector<std::pair<std::string, CmcCurve>>& methods, const std::filesystem::path& p) {
    auto out = open_csv(p);
    out << "method";
    for (auto r : kSummaryRanks) out << ",rank" << r;
    out << '\n';
    for (const auto& [name, curve] : methods) {
        out << name;
        for (auto r : kSummaryRanks) out << ',' << format_double(curve.at_rank(r));
        out << '\n';
    }
}

/// First row "probe" followed by gallery ids; then one row per probe.
inline void write_score_csv(const ScoreMatrix& s, const std::filesystem::path& p) {
    s.validate();
    auto out = open_csv(p);
    out << "probe";
    for (const auto& g : s.gallery_ids) out << ',' << g;
    out << '\n';
    for (Eigen::Index i = 0; i < s.scores.rows(); ++i) {
        out << s.probe_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < s.scores.cols(); ++j) out << ',' << format_double(s.scores(i, j));
        out << '\n';
    }
}

inline ScoreMatrix read_score_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IngestionError("cannot open " + p.string());
    std::string line;
    if (!std::getline(in, line)) throw IngestionError(p.string() + ": empty score file");
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "probe") throw IngestionError(p.string() + ": missing 'probe' header");
    ScoreMatrix s;
    s.gallery_ids.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) throw IngestionError(p.string() + ": ragged score row");
        s.probe_ids.push_back(cells[0]);
        std::vector<double> row;
        for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(parse_double(cells[j], p.string()));
        rows.push_back(std::move(row));
    }
    s.scores.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(s.gallery_ids.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) s.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return s;
}

}  // namespace invmetric
