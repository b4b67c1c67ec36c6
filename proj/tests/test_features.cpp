#include "invmetric/features.hpp"

#include <algorithm>
#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace invmetric;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& header, std::size_t payload, std::uint8_t fill = 7) {
    std::vector<std::uint8_t> b(header.begin(), header.end());
    b.insert(b.end(), payload, fill);
    return b;
}

ImageRGB random_image(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, 255);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
    for (auto& p : px) p = static_cast<std::uint8_t>(u(rng));
    return {w, h, std::move(px)};
}

ImageRGB shift_columns(const ImageRGB& img, int k) {
    ImageRGB out = img;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const auto p = img.at(x, y);
            out.set((x + k) % img.width(), y, p);
        }
    return out;
}

int argmax_bin(const Vector& h) {
    Eigen::Index i;
    h.maxCoeff(&i);
    return static_cast<int>(i);
}

}  // namespace

// --- decode_ppm -------------------------------------------------------------

TEST(DecodePpm, SingleWhitePixel) {
    const auto img = decode_ppm(bytes_of("P6\n1 1\n255\n", 3, 255));
    EXPECT_EQ(img, ImageRGB(1, 1, {255, 255, 255}));
}

TEST(DecodePpm, TwoByTwoWithSpaceSeparatedHeader) {
    auto b = bytes_of("P6 2 2 255\n", 0);
    for (int i = 0; i < 12; ++i) b.push_back(static_cast<std::uint8_t>(i * 20));
    const auto img = decode_ppm(b);
    ASSERT_EQ(img.width(), 2);
    ASSERT_EQ(img.height(), 2);
    EXPECT_EQ(img.at(1, 0), (std::array<std::uint8_t, 3>{60, 80, 100}));
    EXPECT_EQ(img.at(0, 1), (std::array<std::uint8_t, 3>{120, 140, 160}));
}

TEST(DecodePpm, TruncatedPayloadReportsOffset) {
    const std::string header = "P6 2 2 255\n";
    try {
        decode_ppm(bytes_of(header, 11));
        FAIL() << "expected DecodeError";
    } catch (const DecodeError& e) {
        EXPECT_EQ(e.offset(), header.size() + 11);
    }
}

TEST(DecodePpm, RejectsOtherMaxval) { EXPECT_THROW(decode_ppm(bytes_of("P6 1 1 65535\n", 6)), DecodeError); }

TEST(DecodePpm, RejectsWrongMagic) { EXPECT_THROW(decode_ppm(bytes_of("P3 1 1 255\n", 3)), DecodeError); }

TEST(DecodePpm, SkipsComments) {
    const auto img = decode_ppm(bytes_of("P6\n# made by hand\n1 1\n255\n", 3, 9));
    EXPECT_EQ(img.at(0, 0), (std::array<std::uint8_t, 3>{9, 9, 9}));
}

TEST(DecodePpm, EncodeRoundTrip) {
    const auto img = random_image(5, 7, 3);
    EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
}

// --- split_stripes ----------------------------------------------------------

TEST(SplitStripes, HeightsFor128Rows) {
    const auto stripes = split_stripes(ImageRGB::filled(48, 128, 1, 2, 3), 6);
    std::vector<int> heights;
    for (const auto& s : stripes) heights.push_back(s.height());
    EXPECT_EQ(heights, (std::vector<int>{21, 22, 21, 21, 22, 21}));
}

TEST(SplitStripes, SixRowsGiveOneRowEach) {
    const auto stripes = split_stripes(random_image(4, 6, 1), 6);
    ASSERT_EQ(stripes.size(), 6u);
    for (const auto& s : stripes) EXPECT_EQ(s.height(), 1);
}

TEST(SplitStripes, TooFewRowsIsConfigError) { EXPECT_THROW(split_stripes(ImageRGB::filled(4, 5, 0, 0, 0), 6), ConfigError); }

TEST(SplitStripes, BoundariesPartitionAllRows) {
    for (int h = 1; h <= 300; ++h)
        for (int n = 1; n <= std::min(h, 12); ++n) {
            const auto b = stripe_boundaries(h, n);
            ASSERT_EQ(b.size(), static_cast<std::size_t>(n + 1));
            EXPECT_EQ(b.front(), 0);
            EXPECT_EQ(b.back(), h);
            for (int i = 0; i < n; ++i) EXPECT_LT(b[i], b[i + 1]) << "h=" << h << " n=" << n;
        }
}

TEST(SplitStripes, StripesReassembleTheImage) {
    const auto img = random_image(6, 29, 5);
    int row = 0;
    for (const auto& s : split_stripes(img, 6))
        for (int y = 0; y < s.height(); ++y, ++row)
            for (int x = 0; x < img.width(); ++x) EXPECT_EQ(s.at(x, y), img.at(x, row));
    EXPECT_EQ(row, img.height());
}

// --- LBP --------------------------------------------------------------------

TEST(Lbp, BinCounts) {
    EXPECT_EQ(lbp_bin_count(8), 59);
    EXPECT_EQ(lbp_bin_count(16), 243);
    const auto uniform_codes = [](int bits) {
        const auto& t = detail::uniform_table(bits);
        return std::count_if(t.begin(), t.end(), [&](std::uint16_t b) { return b < lbp_bin_count(bits) - 1; });
    };
    EXPECT_EQ(detail::uniform_table(8).size(), 256u);
    EXPECT_EQ(uniform_codes(8), 58);
    EXPECT_EQ(uniform_codes(16), 242);
}

TEST(Lbp, ConstantStripePutsAllMassInAllOnesBin) {
    const Matrix gray = Matrix::Constant(10, 12, 77.0);
    for (auto [p, r] : {std::pair{8, 1}, std::pair{16, 2}}) {
        const Vector h = lbp_histogram(gray, p, r);
        ASSERT_EQ(h.size(), lbp_bin_count(p));
        EXPECT_DOUBLE_EQ(h[lbp_all_ones_bin(p)], 1.0);
        EXPECT_DOUBLE_EQ(h.sum(), 1.0);
    }
}

TEST(Lbp, DarkCentreIsAllOnesPattern) {
    Matrix gray(3, 3);
    gray << 5, 5, 5, 5, 1, 5, 5, 5, 5;
    const Vector h = lbp_histogram(gray, 8, 1);
    EXPECT_DOUBLE_EQ(h[lbp_all_ones_bin(8)], 1.0);
    EXPECT_DOUBLE_EQ(h.sum(), 1.0);
}

TEST(Lbp, BrightCentreIsAllZerosPattern) {
    Matrix gray(3, 3);
    gray << 1, 1, 1, 1, 5, 1, 1, 1, 1;
    const Vector h = lbp_histogram(gray, 8, 1);
    EXPECT_DOUBLE_EQ(h[0], 1.0);
}

TEST(Lbp, RandomStripeSumsToOne) {
    const auto img = random_image(48, 21, 11);
    const Matrix gray = to_gray(img);
    EXPECT_NEAR(lbp_histogram(gray, 8, 1).sum(), 1.0, 1e-9);
    EXPECT_NEAR(lbp_histogram(gray, 16, 2).sum(), 1.0, 1e-9);
}

TEST(Lbp, UnsupportedConfigurationThrows) { EXPECT_THROW(lbp_histogram(Matrix::Zero(9, 9), 8, 2), ConfigError); }

TEST(Lbp, TooSmallStripeGivesEmptyBlock) {
    const Vector h = lbp_histogram(Matrix::Constant(2, 10, 3.0), 8, 1);
    EXPECT_EQ(h.size(), 59);
    EXPECT_EQ(h.sum(), 0.0);
}

// --- colour histograms --------------------------------------------------------

TEST(ColorHistograms, BlackStripe) {
    const Vector h = color_histograms(ImageRGB::filled(8, 4, 0, 0, 0));
    ASSERT_EQ(h.size(), 128);
    // R, G, B, H, S, Y sit in bin 0; U and V are offset by 128 and sit in bin 8
    const int expected[8] = {0, 0, 0, 0, 0, 0, 8, 8};
    for (int c = 0; c < 8; ++c) {
        EXPECT_EQ(argmax_bin(h.segment(16 * c, 16)), expected[c]) << "channel " << c;
        EXPECT_DOUBLE_EQ(h.segment(16 * c, 16).maxCoeff(), 1.0);
    }
}

TEST(ColorHistograms, FullIntensityClampsToLastBin) {
    EXPECT_EQ(color_bin(255.0), 15);
    EXPECT_EQ(color_bin(256.0), 15);
    EXPECT_EQ(color_bin(0.0), 0);
    const Vector h = color_histograms(ImageRGB::filled(3, 3, 255, 255, 255));
    EXPECT_DOUBLE_EQ(h[15], 1.0);
}

TEST(ColorHistograms, PureRed) {
    const Vector h = color_histograms(ImageRGB::filled(5, 5, 255, 0, 0));
    const int expected[8] = {15, 0, 0, 0, 15, 4, 5, 15};
    for (int c = 0; c < 8; ++c) EXPECT_EQ(argmax_bin(h.segment(16 * c, 16)), expected[c]) << "channel " << c;
}

TEST(ColorHistograms, EachChannelSumsToOne) {
    const Vector h = color_histograms(random_image(13, 9, 2));
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(h.segment(16 * c, 16).sum(), 1.0, 1e-12);
}

// --- stripe descriptor ------------------------------------------------------

TEST(StripeDescriptor, LayoutAndBlockSums) {
    const auto d = stripe_descriptor(random_image(48, 21, 4));
    ASSERT_EQ(d.values.size(), 430);
    EXPECT_TRUE(is_valid_descriptor(d.values));
    int total = 0;
    for (const auto& b : StripeDescriptor::blocks()) {
        EXPECT_EQ(b.offset, total);
        total += b.length;
        EXPECT_NEAR(d.values.segment(b.offset, b.length).sum(), 1.0, 1e-9);
    }
    EXPECT_EQ(total, 430);
    EXPECT_TRUE((d.values.array() >= 0).all());
}

TEST(StripeDescriptor, ConstantGrayStripe) {
    const auto d = stripe_descriptor(ImageRGB::filled(20, 10, 128, 128, 128));
    EXPECT_DOUBLE_EQ(d.values[lbp_all_ones_bin(8)], 1.0);
    EXPECT_DOUBLE_EQ(d.values[59 + lbp_all_ones_bin(16)], 1.0);
    for (const auto& b : StripeDescriptor::blocks()) EXPECT_NEAR(d.values.segment(b.offset, b.length).sum(), 1.0, 1e-12);
}

TEST(StripeDescriptor, Deterministic) {
    const auto img = random_image(30, 20, 8);
    const auto a = stripe_descriptor(img);
    const auto b = stripe_descriptor(decode_ppm(encode_ppm(img)));
    EXPECT_EQ(a.values, b.values);
}

TEST(StripeDescriptor, ValidForManyRandomStripes) {
    for (std::uint64_t s = 0; s < 25; ++s) {
        const auto img = random_image(6 + static_cast<int>(s % 7) * 5, 5 + static_cast<int>(s % 5) * 4, 100 + s);
        EXPECT_TRUE(is_valid_descriptor(stripe_descriptor(img).values)) << "seed " << s;
    }
}

TEST(StripeDescriptor, ColorBlocksIgnoreCircularColumnShift) {
    for (int k : {1, 5, 17}) {
        const auto img = random_image(24, 12, 21);
        const auto a = stripe_descriptor(img).values;
        const auto b = stripe_descriptor(shift_columns(img, k)).values;
        EXPECT_EQ(a.tail(128), b.tail(128)) << "shift " << k;
    }
}

TEST(StripeDescriptor, ColumnConstantStripeIsShiftInvariant) {
    // every column identical: a circular shift reproduces the same pixels
    auto img = ImageRGB::filled(16, 12, 0, 0, 0);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> u(0, 255);
    for (int y = 0; y < img.height(); ++y) {
        const auto r = static_cast<std::uint8_t>(u(rng)), g = static_cast<std::uint8_t>(u(rng)), b = static_cast<std::uint8_t>(u(rng));
        for (int x = 0; x < img.width(); ++x) img.set(x, y, {r, g, b});
    }
    EXPECT_EQ(stripe_descriptor(img).values, stripe_descriptor(shift_columns(img, 7)).values);
}

TEST(StripeDescriptor, ImageGivesSixDescriptors) {
    const auto descs = image_descriptors(random_image(48, 128, 6));
    ASSERT_EQ(descs.size(), 6u);
    for (const auto& d : descs) EXPECT_EQ(d.values.size(), 430);
}

TEST(Resize, KeepsConstantImages) {
    const auto img = resize_bilinear(ImageRGB::filled(10, 30, 9, 99, 199), 48, 128);
    EXPECT_EQ(img.width(), 48);
    EXPECT_EQ(img.height(), 128);
    EXPECT_EQ(img.at(47, 127), (std::array<std::uint8_t, 3>{9, 99, 199}));
}
