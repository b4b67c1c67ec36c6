#pragma once

// Per-stripe appearance descriptor: uniform LBP texture histograms plus
// eight 16-bin colour histograms, 430 values in ten l1-normalized blocks.

#include "invmetric/core.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace invmetric {

/// 8-bit RGB image, pixels stored row-major as interleaved triples.
class ImageRGB {
public:
    ImageRGB() = default;
    ImageRGB(int width, int height, std::vector<std::uint8_t> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (width <= 0 || height <= 0) throw DimensionError("image dimensions must be positive");
        if (pixels_.size() != static_cast<std::size_t>(width) * height * 3)
            throw DimensionError("pixel buffer size does not match image dimensions");
    }
    /// Uniformly coloured image.
    static ImageRGB filled(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height * 3);
        for (std::size_t i = 0; i < px.size(); i += 3) {
            px[i] = r;
            px[i + 1] = g;
            px[i + 2] = b;
        }
        return ImageRGB(width, height, std::move(px));
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

    std::array<std::uint8_t, 3> at(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
        return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
    }
    void set(int x, int y, std::array<std::uint8_t, 3> rgb) {
        const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
        pixels_[i] = rgb[0];
        pixels_[i + 1] = rgb[1];
        pixels_[i + 2] = rgb[2];
    }

    /// Rows [row_begin, row_end) as a new image.
    ImageRGB rows(int row_begin, int row_end) const {
        if (row_begin < 0 || row_end > height_ || row_begin >= row_end) throw DimensionError("invalid row range");
        const auto stride = static_cast<std::size_t>(width_) * 3;
        std::vector<std::uint8_t> px(pixels_.begin() + static_cast<std::ptrdiff_t>(row_begin * stride),
                                     pixels_.begin() + static_cast<std::ptrdiff_t>(row_end * stride));
        return ImageRGB(width_, row_end - row_begin, std::move(px));
    }

    friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

// ---------------------------------------------------------------------------
// PPM (binary P6) codec

namespace detail {

struct PpmCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_space_and_comments() {
        while (pos < bytes.size()) {
            if (is_space(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    long read_uint(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos;
        long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000'000L) throw DecodeError(std::string("PPM ") + field + " out of range", start);
            ++pos;
        }
        if (pos == start) throw DecodeError(std::string("PPM header: expected ") + field, pos);
        return v;
    }
};

}  // namespace detail

/// Decodes a binary P6 PPM with maxval 255.
inline ImageRGB decode_ppm(std::span<const std::uint8_t> bytes) {
    detail::PpmCursor cur{bytes};
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DecodeError("not a binary P6 PPM", 0);
    cur.pos = 2;
    if (cur.pos < bytes.size() && !detail::PpmCursor::is_space(bytes[cur.pos]) && bytes[cur.pos] != '#')
        throw DecodeError("PPM header: expected whitespace after magic", cur.pos);
    const long width = cur.read_uint("width");
    const long height = cur.read_uint("height");
    const std::size_t maxval_at = cur.pos;
    const long maxval = cur.read_uint("maxval");
    if (width <= 0 || height <= 0) throw DecodeError("PPM header: zero image dimension", maxval_at);
    if (maxval != 255) throw DecodeError("PPM maxval must be 255, got " + std::to_string(maxval), maxval_at);
    if (cur.pos >= bytes.size() || !detail::PpmCursor::is_space(bytes[cur.pos]))
        throw DecodeError("PPM header: expected single whitespace before raster", cur.pos);
    ++cur.pos;
    const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
    const std::size_t have = bytes.size() - cur.pos;
    if (have < need)
        throw DecodeError("PPM raster truncated: need " + std::to_string(need) + " bytes, have " + std::to_string(have),
                          bytes.size());
    std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos + need));
    return ImageRGB(static_cast<int>(width), static_cast<int>(height), std::move(px));
}

inline std::vector<std::uint8_t> encode_ppm(const ImageRGB& img) {
    const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels().begin(), img.pixels().end());
    return out;
}

/// Bilinear resampling to the requested size (pixel-centre aligned).
inline ImageRGB resize_bilinear(const ImageRGB& img, int width, int height) {
    if (width <= 0 || height <= 0) throw DimensionError("resize target must be positive");
    std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height * 3);
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double wx = fx - x0;
            const auto a = img.at(x0, y0), b = img.at(x1, y0), c = img.at(x0, y1), d = img.at(x1, y1);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (1 - wy) * ((1 - wx) * a[ch] + wx * b[ch]) + wy * ((1 - wx) * c[ch] + wx * d[ch]);
                px[(static_cast<std::size_t>(y) * width + x) * 3 + ch] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return ImageRGB(width, height, std::move(px));
}

// ---------------------------------------------------------------------------
// Stripes

/// Row boundaries of `n` stripes: stripe i covers [b[i], b[i+1]) with
/// b[i] = round(i*H/n), halves rounded up.
inline std::vector<int> stripe_boundaries(int height, int n) {
    if (n <= 0) throw ConfigError("stripe count must be positive");
    if (height < n)
        throw ConfigError("image height " + std::to_string(height) + " is smaller than stripe count " + std::to_string(n));
    std::vector<int> b(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) b[i] = static_cast<int>((2LL * i * height + n) / (2LL * n));
    return b;
}

/// Splits an image into `n` non-overlapping horizontal stripes, top to bottom.
inline std::vector<ImageRGB> split_stripes(const ImageRGB& img, int n = 6) {
    const auto b = stripe_boundaries(img.height(), n);
    std::vector<ImageRGB> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(img.rows(b[i], b[i + 1]));
    return out;
}

// ---------------------------------------------------------------------------
// Colour conversions

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

/// The eight colour channels in descriptor order (R,G,B,H,S,Y,U,V), each on [0,255].
inline std::array<double, 8> color_channels(std::array<std::uint8_t, 3> rgb) {
    const double r = rgb[0], g = rgb[1], b = rgb[2];
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;

    double hue_deg = 0.0;  // undefined hue (grey) maps to 0
    if (delta > 0) {
        if (mx == r)
            hue_deg = 60.0 * (g - b) / delta;
        else if (mx == g)
            hue_deg = 60.0 * ((b - r) / delta + 2.0);
        else
            hue_deg = 60.0 * ((r - g) / delta + 4.0);
        if (hue_deg < 0) hue_deg += 360.0;
    }
    const double sat = mx > 0 ? delta / mx * 255.0 : 0.0;
    const double y = luma(r, g, b);
    const double u = std::clamp(0.492 * (b - y) + 128.0, 0.0, 255.0);
    const double v = std::clamp(0.877 * (r - y) + 128.0, 0.0, 255.0);
    return {r, g, b, hue_deg / 360.0 * 255.0, sat, y, u, v};
}

inline int color_bin(double v) { return std::clamp(static_cast<int>(v / 16.0), 0, 15); }

/// Luma image as a real matrix (rows = image rows).
inline Matrix to_gray(const ImageRGB& img) {
    Matrix g(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const auto p = img.at(x, y);
            g(y, x) = luma(p[0], p[1], p[2]);
        }
    return g;
}

// ---------------------------------------------------------------------------
// Uniform LBP

namespace detail {

inline int circular_transitions(std::uint32_t code, int bits) {
    int t = 0;
    for (int i = 0; i < bits; ++i) {
        const auto a = (code >> i) & 1U;
        const auto b = (code >> ((i + 1) % bits)) & 1U;
        t += static_cast<int>(a != b);
    }
    return t;
}

/// Maps every P-bit code to its u2 bin: uniform codes in ascending order,
/// then a single bin shared by all non-uniform codes.
inline std::vector<std::uint16_t> build_uniform_table(int bits) {
    std::vector<std::uint16_t> table(std::size_t{1} << bits);
    const auto nonuniform = static_cast<std::uint16_t>(bits * (bits - 1) + 2);
    std::uint16_t next = 0;
    for (std::uint32_t c = 0; c < table.size(); ++c)
        table[c] = circular_transitions(c, bits) <= 2 ? next++ : nonuniform;
    return table;
}

inline const std::vector<std::uint16_t>& uniform_table(int bits) {
    static const auto t8 = build_uniform_table(8);
    static const auto t16 = build_uniform_table(16);
    return bits == 8 ? t8 : t16;
}

inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace detail

inline int lbp_bin_count(int neighbors) { return neighbors * (neighbors - 1) + 3; }

/// Bin holding the all-ones code (every neighbour >= centre).
inline int lbp_all_ones_bin(int neighbors) { return neighbors * (neighbors - 1) + 1; }

/// l1-normalized uniform LBP histogram with `neighbors` circular samples at
/// `radius`, bilinearly interpolated. A neighbour >= centre sets its bit.
/// Pixels closer than `radius` to the border are skipped; a block with no
/// interior pixel yields an all-zero histogram.
inline Vector lbp_histogram(const Matrix& gray, int neighbors, int radius) {
    if (!((neighbors == 8 && radius == 1) || (neighbors == 16 && radius == 2)))
        throw ConfigError("unsupported LBP configuration (" + std::to_string(neighbors) + "," + std::to_string(radius) + ")");
    Vector hist = Vector::Zero(lbp_bin_count(neighbors));
    const auto rows = static_cast<int>(gray.rows());
    const auto cols = static_cast<int>(gray.cols());
    if (rows <= 2 * radius || cols <= 2 * radius) {
        log_warning("stripe too small for LBP(" + std::to_string(neighbors) + "," + std::to_string(radius) +
                    "); emitting empty block");
        return hist;
    }

    std::vector<double> dx(neighbors), dy(neighbors);
    for (int p = 0; p < neighbors; ++p) {
        const double theta = 2.0 * std::numbers::pi * p / neighbors;
        dx[p] = detail::snap(radius * std::cos(theta));
        dy[p] = detail::snap(-radius * std::sin(theta));
    }
    const auto& table = detail::uniform_table(neighbors);

    // Bilinear interpolation weights can sum to 1 - ulp; the tolerance keeps
    // flat regions from flipping bits.
    constexpr double kTieTolerance = 1e-9;
    for (int y = radius; y < rows - radius; ++y) {
        for (int x = radius; x < cols - radius; ++x) {
            const double centre = gray(y, x);
            std::uint32_t code = 0;
            for (int p = 0; p < neighbors; ++p) {
                const double sx = x + dx[p];
                const double sy = y + dy[p];
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0;
                const double fy = sy - y0;
                double v = (1 - fx) * (1 - fy) * gray(y0, x0);
                if (fx > 0) v += fx * (1 - fy) * gray(y0, x0 + 1);
                if (fy > 0) v += (1 - fx) * fy * gray(y0 + 1, x0);
                if (fx > 0 && fy > 0) v += fx * fy * gray(y0 + 1, x0 + 1);
                if (v >= centre - kTieTolerance) code |= (1U << p);
            }
            hist[table[code]] += 1.0;
        }
    }
    hist /= hist.sum();
    return hist;
}

/// Eight l1-normalized 16-bin colour histograms, channel order R,G,B,H,S,Y,U,V.
inline Vector color_histograms(const ImageRGB& stripe) {
    Vector out = Vector::Zero(128);
    for (int y = 0; y < stripe.height(); ++y)
        for (int x = 0; x < stripe.width(); ++x) {
            const auto ch = color_channels(stripe.at(x, y));
            for (int c = 0; c < 8; ++c) out[c * 16 + color_bin(ch[c])] += 1.0;
        }
    out /= static_cast<double>(stripe.width()) * stripe.height();
    return out;
}

// ---------------------------------------------------------------------------
// Descriptor

struct DescriptorBlock {
    int offset;
    int length;
};

/// 430-dim stripe descriptor: LBP(8,1) 59 | LBP(16,2) 243 | colour 8x16.
struct StripeDescriptor {
    static constexpr int kDim = 430;
    static constexpr int kBlockCount = 10;

    Vector values;

    static constexpr std::array<DescriptorBlock, kBlockCount> blocks() {
        return {{{0, 59}, {59, 243}, {302, 16}, {318, 16}, {334, 16}, {350, 16}, {366, 16}, {382, 16}, {398, 16}, {414, 16}}};
    }
};

/// Checks length, nonnegativity and per-block unit mass (or all-zero).
inline bool is_valid_descriptor(const Vector& v, double tol = 1e-9) {
    if (v.size() != StripeDescriptor::kDim || !v.allFinite() || (v.array() < 0).any()) return false;
    for (const auto blk : StripeDescriptor::blocks()) {
        const double s = v.segment(blk.offset, blk.length).sum();
        if (s != 0.0 && std::abs(s - 1.0) > tol) return false;
    }
    return true;
}

/// Scales each descriptor block to unit l1 mass; all-zero blocks stay zero.
inline void normalize_blocks(Vector& v) {
    require_dims(v.size() == StripeDescriptor::kDim, "descriptor must have 430 entries");
    for (const auto blk : StripeDescriptor::blocks()) {
        auto seg = v.segment(blk.offset, blk.length);
        const double s = seg.sum();
        if (s > 0) seg /= s;
    }
}

inline StripeDescriptor stripe_descriptor(const ImageRGB& stripe) {
    const Matrix gray = to_gray(stripe);
    StripeDescriptor d{Vector(StripeDescriptor::kDim)};
    d.values.segment(0, 59) = lbp_histogram(gray, 8, 1);
    d.values.segment(59, 243) = lbp_histogram(gray, 16, 2);
    d.values.segment(302, 128) = color_histograms(stripe);
    return d;
}

/// Descriptors of the `n` horizontal stripes of an image, top to bottom.
inline std::vector<StripeDescriptor> image_descriptors(const ImageRGB& img, int n = 6) {
    std::vector<StripeDescriptor> out;
    for (const auto& s : split_stripes(img, n)) out.push_back(stripe_descriptor(s));
    return out;
}

}  // namespace invmetric
