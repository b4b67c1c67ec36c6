#pragma once

// Shared vocabulary for the library: linear-algebra aliases, the error
// hierarchy and deterministic seed streams.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace invmetric {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed image bytes; the message names the byte offset.
class DecodeError : public Error {
public:
    DecodeError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Evaluation protocol violated (e.g. probe identity absent from gallery).
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Dataset files could not be read or parsed.
class IngestionError : public Error {
public:
    using Error::Error;
};

inline void log_warning(std::string_view msg) { std::clog << "warning: " << msg << '\n'; }

inline void require_dims(bool ok, std::string_view what) {
    if (!ok) throw DimensionError(std::string(what));
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent seed for a named stream, so each pipeline stage
/// draws from its own reproducible generator.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(seed ^ mix_seed(h));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view stream) { return Rng(stream_seed(seed, stream)); }

}  // namespace invmetric
