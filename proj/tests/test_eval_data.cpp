#include "invmetric/io.hpp"
#include "invmetric/pipeline.hpp"
#include "invmetric/verify.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace fs = std::filesystem;
using namespace invmetric;

namespace {

ScoreMatrix scores(Matrix m, std::vector<std::string> probe, std::vector<std::string> gallery) {
    return {std::move(m), std::move(probe), std::move(gallery)};
}

Matrix mat(Eigen::Index r, Eigen::Index c, std::initializer_list<double> rowwise) {
    Matrix m(r, c);
    auto it = rowwise.begin();
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = *it++;
    return m;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("invmetric_test_" + tag + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write_image(const fs::path& file, int w, int h, std::uint8_t shade) {
    fs::create_directories(file.parent_path());
    const auto bytes = encode_ppm(ImageRGB::filled(w, h, shade, static_cast<std::uint8_t>(255 - shade), 40));
    std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void mock_dataset(const fs::path& root, int ids, int w = 4, int h = 12) {
    for (int i = 0; i < ids; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%03d_0.ppm", i);
        write_image(root / "view_a" / name, w, h, static_cast<std::uint8_t>(i % 251));
        write_image(root / "view_b" / name, w, h, static_cast<std::uint8_t>((i * 7) % 251));
    }
}

Dataset labelled(const std::vector<std::pair<std::string, View>>& items) {
    Dataset d;
    for (const auto& [id, v] : items) d.records.push_back({id, v, id, StripeList{}});
    return d;
}

}  // namespace

// --- CMC -----------------------------------------------------------------------

TEST(Cmc, HandInstance) {
    // true-match ranks 1, 2, 1
    const auto s = scores(mat(3, 3, {0.1, 0.5, 0.9, 0.2, 0.3, 0.4, 0.8, 0.9, 0.1}), {"a", "b", "c"}, {"a", "b", "c"});
    EXPECT_EQ(match_ranks(s), (std::vector<std::size_t>{1, 2, 1}));
    const auto c = cmc(s);
    EXPECT_DOUBLE_EQ(c.at_rank(1), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(c.at_rank(2), 1.0);
    EXPECT_DOUBLE_EQ(c.at_rank(3), 1.0);
    EXPECT_DOUBLE_EQ(c.at_rank(20), 1.0);
}

TEST(Cmc, TiesGoToLowerGalleryIndex) {
    const auto s = scores(Matrix::Zero(3, 3), {"a", "b", "c"}, {"a", "b", "c"});
    EXPECT_EQ(match_ranks(s), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Cmc, MissingProbeIdentity) {
    const auto s = scores(Matrix::Zero(1, 2), {"z"}, {"a", "b"});
    EXPECT_THROW(cmc(s), ProtocolError);
}

TEST(Cmc, DuplicateGalleryIdentity) {
    EXPECT_THROW(cmc(scores(Matrix::Zero(1, 2), {"a"}, {"a", "a"})), ProtocolError);
}

TEST(Cmc, NonFiniteScore) {
    auto s = scores(Matrix::Zero(1, 1), {"a"}, {"a"});
    s.scores(0, 0) = std::nan("");
    EXPECT_THROW(cmc(s), DomainError);
}

TEST(Cmc, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<std::string> ids;
    for (int i = 0; i < 12; ++i) ids.push_back("id" + std::to_string(i));
    Matrix m(12, 12);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    const auto a = cmc(scores(m, ids, ids));
    const auto b = cmc(scores(m.unaryExpr([](double x) { return std::exp(3 * x) + 1; }), ids, ids));
    EXPECT_EQ(a.rates, b.rates);
}

TEST(Cmc, BoundedAndMonotone) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back(std::to_string(i));
    for (int trial = 0; trial < 5; ++trial) {
        Matrix m(30, 30);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        const auto c = cmc(scores(m, ids, ids));
        ASSERT_EQ(c.rates.size(), 30u);
        for (std::size_t r = 0; r < c.rates.size(); ++r) {
            EXPECT_GE(c.rates[r], 0.0);
            EXPECT_LE(c.rates[r], 1.0);
            if (r) EXPECT_GE(c.rates[r], c.rates[r - 1]);
        }
        EXPECT_EQ(c.rates.back(), 1.0);
    }
}

TEST(Cmc, MatchesBruteForceOracle) {
    VerifyOptions opt;
    opt.seed = 9;
    const auto r = check_cmc_oracle(opt);
    EXPECT_TRUE(r.passed) << r.detail;
}

// --- fusion --------------------------------------------------------------------

TEST(Fusion, HandInstance) {
    const std::vector<std::string> p{"a", "b"}, g{"a", "b", "c"};
    const auto fused = fuse_scores({scores(mat(2, 3, {1, 2, 3, 4, 4, 4}), p, g), scores(mat(2, 3, {3, 1, 2, 0, 10, 5}), p, g)});
    EXPECT_TRUE(fused.scores.isApprox(mat(2, 3, {1.0, 0.5, 1.5, 0.0, 1.0, 0.5}), 1e-15));
}

TEST(Fusion, SingleMethodRescalesRows) {
    const auto fused = fuse_scores({scores(mat(1, 2, {2, 4}), {"a"}, {"a", "b"})});
    EXPECT_EQ(fused.scores, mat(1, 2, {0, 1}));
}

TEST(Fusion, ConstantRowBecomesZero) {
    const auto fused = fuse_scores({scores(mat(1, 3, {7, 7, 7}), {"a"}, {"a", "b", "c"})});
    EXPECT_EQ(fused.scores, Matrix::Zero(1, 3));
}

TEST(Fusion, AgreeingMethodsKeepRanking) {
    const std::vector<std::string> ids{"a", "b", "c"};
    const Matrix m = mat(3, 3, {0.1, 0.5, 0.9, 0.2, 0.3, 0.4, 0.8, 0.9, 0.1});
    const auto fused = fuse_scores({scores(m, ids, ids), scores(2 * m, ids, ids)});
    EXPECT_EQ(match_ranks(fused), match_ranks(scores(m, ids, ids)));
}

TEST(Fusion, LayoutMismatch) {
    EXPECT_THROW(fuse_scores({scores(Matrix::Zero(1, 2), {"a"}, {"a", "b"}), scores(Matrix::Zero(1, 2), {"a"}, {"b", "a"})}),
                 DimensionError);
    EXPECT_THROW(fuse_scores({}), ConfigError);
}

// --- baseline --------------------------------------------------------------------

TEST(Euclidean, HandInstance) {
    // columns are feature vectors
    const Matrix probe = mat(4, 4, {0.1, 1.0, 0.5, 0.0, 0.2, 0.0, 0.5, 0.0, 0.3, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0, 2.0});
    const Matrix gallery = mat(4, 4, {0.0, 0.0, 0.25, 1.0, 0.2, 1.0, 0.25, 1.0, 0.3, 0.0, 0.25, 1.0, 0.4, 0.0, 0.25, 1.0});
    const Matrix expect = mat(4, 4, {0.1, 0.9486832980505139, 0.22360679774997896, 1.5165750888103102,     //
                                     1.1357816691600546, 1.4142135623730951, 0.8660254037844386, 1.7320508075688772,  //
                                     0.7681145747868608, 0.7071067811865476, 0.5, 1.5811388300841898,                 //
                                     1.6401219466856727, 2.23606797749979, 1.8027756377319946, 2.0});
    EXPECT_TRUE(euclidean_distances(probe, gallery).isApprox(expect, 1e-14));
}

TEST(Euclidean, DimensionMismatch) { EXPECT_THROW(euclidean_distances(Matrix::Zero(2, 1), Matrix::Zero(3, 1)), DimensionError); }

// --- single-shot protocol ----------------------------------------------------

TEST(SingleShot, OnePerIdentityAndView) {
    SynthConfig sc;
    sc.identities = 10;
    sc.images_per_view = 3;
    const auto d = synth_generate(sc);
    const auto s = single_shot_split(d, 1);
    ASSERT_EQ(s.probe.size(), 10u);
    ASSERT_EQ(s.gallery.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(s.probe[i].identity, s.gallery[i].identity);
        EXPECT_EQ(s.probe[i].view, View::A);
        EXPECT_EQ(s.gallery[i].view, View::B);
    }
}

TEST(SingleShot, DropsIdentitiesMissingAView) {
    // 72 identities, 50 seen from both cameras
    std::vector<std::pair<std::string, View>> items;
    for (int i = 0; i < 72; ++i) {
        const std::string id = "p" + std::to_string(100 + i);
        items.push_back({id, i < 61 ? View::A : View::B});
        if (i < 50) items.push_back({id, View::B});
    }
    const auto s = single_shot_split(labelled(items), 0);
    EXPECT_EQ(s.probe.size(), 50u);
    Dataset shared;
    for (std::size_t i = 0; i < s.probe.size(); ++i) shared.records.push_back(s.probe[i]), shared.records.push_back(s.gallery[i]);
    const auto [train, test] = split_train_test(shared, 25, 3);
    EXPECT_EQ(train.identities().size(), 25u);
    EXPECT_EQ(test.identities().size(), 25u);
}

TEST(SingleShot, BaselineLayout) {
    SynthConfig sc;
    sc.identities = 5;
    const auto s = single_shot_split(synth_generate(sc), 0);
    const auto b = euclidean_baseline(s);
    EXPECT_EQ(b.scores.rows(), 5);
    EXPECT_EQ(b.scores.cols(), 5);
    EXPECT_EQ(concatenated_descriptors(s.probe).rows(), 6 * 430);
}

// --- train/test split --------------------------------------------------------

TEST(Split, HalfOfSixHundredThirtyTwo) {
    std::vector<std::pair<std::string, View>> items;
    for (int i = 0; i < 632; ++i) items.push_back({std::to_string(i), View::A});
    const auto d = labelled(items);
    const auto [train, test] = split_train_test(d, 316, 0);
    EXPECT_EQ(train.identities().size(), 316u);
    EXPECT_EQ(test.identities().size(), 316u);
    for (std::size_t p : {100u, 200u, 432u, 532u}) {
        const auto [tr, te] = split_train_test(d, p, 1);
        EXPECT_EQ(tr.identities().size(), p);
        EXPECT_EQ(te.identities().size(), 632 - p);
    }
    EXPECT_THROW(split_train_test(d, 0, 0), ConfigError);
    EXPECT_THROW(split_train_test(d, 632, 0), ConfigError);
}

TEST(Split, DisjointAndExhaustive) {
    std::vector<std::pair<std::string, View>> items;
    for (int i = 0; i < 40; ++i) items.push_back({std::to_string(i), View::A}), items.push_back({std::to_string(i), View::B});
    const auto d = labelled(items);
    const auto [train, test] = split_train_test(d, 13, 5);
    std::set<std::string> all;
    for (const auto& id : train.identities()) all.insert(id);
    for (const auto& id : test.identities()) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), 40u);
    EXPECT_EQ(train.size() + test.size(), d.size());
}

TEST(Split, DeterministicPerSeed) {
    std::vector<std::pair<std::string, View>> items;
    for (int i = 0; i < 50; ++i) items.push_back({std::to_string(i), View::A});
    const auto d = labelled(items);
    EXPECT_EQ(split_train_test(d, 20, 3).first.identities(), split_train_test(d, 20, 3).first.identities());
    EXPECT_NE(split_train_test(d, 20, 3).first.identities(), split_train_test(d, 20, 4).first.identities());
}

TEST(Split, ManifestRoundTrip) {
    TempDir tmp("manifest");
    SynthConfig sc;
    sc.identities = 8;
    const auto [train, test] = split_train_test(synth_generate(sc), 3, 0);
    write_split_manifest(train, test, tmp.path / "split.csv");
    const auto m = read_split_manifest(tmp.path / "split.csv");
    EXPECT_EQ(m.size(), 8u);
    for (const auto& id : train.identities()) EXPECT_EQ(m.at(id), "train");
    for (const auto& id : test.identities()) EXPECT_EQ(m.at(id), "test");
}

// --- synthetic data -----------------------------------------------------------

TEST(Synth, Deterministic) {
    SynthConfig sc;
    sc.identities = 6;
    const auto a = synth_generate(sc), b = synth_generate(sc);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(record_descriptors(a.records[i])[3].values, record_descriptors(b.records[i])[3].values);
}

TEST(Synth, ValidDescriptors) {
    SynthConfig sc;
    sc.identities = 4;
    sc.images_per_view = 2;
    const auto d = synth_generate(sc);
    EXPECT_EQ(d.size(), 16u);
    for (const auto& r : d.records)
        for (const auto& s : record_descriptors(r)) {
            EXPECT_TRUE(s.values.allFinite());
            EXPECT_GE(s.values.minCoeff(), 0.0);
            EXPECT_NEAR(s.values.sum(), 10.0, 1e-9);
        }
}

TEST(Synth, NoDivergenceNoNoiseGivesIdenticalViews) {
    SynthConfig sc;
    sc.identities = 5;
    sc.view_divergence = 0.0;
    sc.noise_scale = 0.0;
    const auto s = single_shot_split(synth_generate(sc), 0);
    for (std::size_t i = 0; i < s.probe.size(); ++i)
        EXPECT_EQ(concatenated_descriptors({s.probe[i]}), concatenated_descriptors({s.gallery[i]}));
}

TEST(Synth, BaselineBeatsChance) {
    SynthConfig sc;
    sc.identities = 100;
    const auto c = cmc(euclidean_baseline(single_shot_split(synth_generate(sc), 0)));
    EXPECT_GT(c.at_rank(1), 3.0 / 100);
}

TEST(Synth, InvalidConfig) {
    SynthConfig sc;
    sc.view_divergence = 1.5;
    EXPECT_THROW(synth_generate(sc), ConfigError);
    sc = {};
    sc.identities = 0;
    EXPECT_THROW(synth_generate(sc), ConfigError);
}

// --- ingestion -----------------------------------------------------------------

TEST(LoadDataset, TwoIdentities) {
    TempDir tmp("load2");
    write_image(tmp.path / "view_a" / "001_0.ppm", 4, 12, 10);
    write_image(tmp.path / "view_a" / "001_1.ppm", 4, 12, 20);
    write_image(tmp.path / "view_b" / "001_0.ppm", 4, 12, 30);
    write_image(tmp.path / "view_b" / "002_0.ppm", 4, 12, 40);
    const auto d = load_dataset(tmp.path);
    EXPECT_EQ(d.size(), 4u);
    EXPECT_EQ(d.identities(), (std::vector<std::string>{"001", "002"}));
}

TEST(LoadDataset, UnparseableNameIsReported) {
    TempDir tmp("loadbad");
    mock_dataset(tmp.path, 2);
    write_image(tmp.path / "view_b" / "abc.ppm", 4, 12, 0);
    try {
        load_dataset(tmp.path);
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        EXPECT_NE(std::string(e.what()).find("abc.ppm"), std::string::npos);
    }
}

TEST(LoadDataset, MissingViewAndCorruptImageReportedTogether) {
    TempDir tmp("loadcorrupt");
    write_image(tmp.path / "view_a" / "001_0.ppm", 4, 12, 10);
    std::ofstream(tmp.path / "view_a" / "002_0.ppm") << "P6\n4 12\n255\n";
    try {
        load_dataset(tmp.path);
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("view_b"), std::string::npos);
        EXPECT_NE(msg.find("002_0.ppm"), std::string::npos);
    }
}

TEST(LoadDataset, FullSizeMock) {
    TempDir tmp("load632");
    mock_dataset(tmp.path, 632, 2, 6);
    const auto d = load_dataset(tmp.path);
    EXPECT_EQ(d.size(), 1264u);
    EXPECT_EQ(d.identities().size(), 632u);
}

TEST(LoadDataset, ImageStemParsing) {
    EXPECT_EQ(parse_image_stem("person_12"), (std::pair<std::string, std::string>{"person", "12"}));
    EXPECT_EQ(parse_image_stem("a_b_3")->first, "a_b");
    EXPECT_FALSE(parse_image_stem("abc"));
    EXPECT_FALSE(parse_image_stem("abc_"));
    EXPECT_FALSE(parse_image_stem("abc_x1"));
}

// --- serialization -----------------------------------------------------------

TEST(DescriptorCsv, RoundTrip) {
    TempDir tmp("desc");
    SynthConfig sc;
    sc.identities = 3;
    const auto d = synth_generate(sc);
    write_descriptor_csv(d, tmp.path);
    const auto back = read_descriptor_csv(tmp.path);
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(back.records[i].identity, d.records[i].identity);
        EXPECT_EQ(back.records[i].view, d.records[i].view);
        const auto a = record_descriptors(d.records[i]), b = record_descriptors(back.records[i]);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].values, b[s].values);
    }
}

TEST(ScoreCsv, RoundTrip) {
    TempDir tmp("scores");
    const auto s = scores(mat(2, 3, {0.1, 1.0 / 3.0, -2e-300, 4, 5, 6}), {"a", "b"}, {"a", "b", "c"});
    write_score_csv(s, tmp.path / "s.csv");
    const auto back = read_score_csv(tmp.path / "s.csv");
    EXPECT_EQ(back.scores, s.scores);
    EXPECT_EQ(back.probe_ids, s.probe_ids);
    EXPECT_EQ(back.gallery_ids, s.gallery_ids);
}

TEST(ScoreCsv, RaggedFile) {
    TempDir tmp("ragged");
    std::ofstream(tmp.path / "s.csv") << "probe,a,b\na,1\n";
    EXPECT_THROW(read_score_csv(tmp.path / "s.csv"), IngestionError);
}

TEST(CmcCsv, SummaryHasRequestedRanks) {
    TempDir tmp("summary");
    CmcCurve c;
    for (int r = 1; r <= 30; ++r) c.rates.push_back(r / 30.0);
    write_rank_summary_csv({{"metric", c}}, tmp.path / "summary.csv");
    std::ifstream in(tmp.path / "summary.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "method,rank1,rank5,rank10,rank20");
    EXPECT_EQ(split_csv_line(row).size(), 5u);
    EXPECT_EQ(split_csv_line(row)[0], "metric");
}

TEST(BinaryIo, ModelPartsRoundTrip) {
    TempDir tmp("bin");
    Rng rng(7);
    const auto enc = EncoderParams::random(6, 4, rng);
    save_encoder(enc, tmp.path / "enc.bin");
    EXPECT_EQ(load_encoder(tmp.path / "enc.bin").pack(), enc.pack());

    auto metric = MetricParams::random(5, 3, 2, rng);
    metric.bias = -0.25;
    metric.c = Vector::LinSpaced(5, -1, 1);
    save_metric(metric, tmp.path / "metric.bin");
    const auto mb = load_metric(tmp.path / "metric.bin");
    EXPECT_EQ(mb.M, metric.M);
    EXPECT_EQ(mb.N, metric.N);
    EXPECT_EQ(mb.bias, metric.bias);
    EXPECT_EQ(mb.c, metric.c);

    const ExemplarSet ex(Matrix::Random(7, 3), 0.125);
    save_exemplars(ex, tmp.path / "ex.bin");
    const auto eb = load_exemplars(tmp.path / "ex.bin");
    EXPECT_EQ(eb.exemplars(), ex.exemplars());
    EXPECT_EQ(eb.bandwidth(), 0.125);

    const auto pca = pca_fit(Matrix::Random(10, 4), 2);
    save_pca(pca, tmp.path / "pca.bin");
    const auto pb = load_pca(tmp.path / "pca.bin");
    EXPECT_EQ(pb.basis, pca.basis);
    EXPECT_EQ(pb.mean, pca.mean);
}

TEST(BinaryIo, BadMagicAndTruncation) {
    TempDir tmp("badbin");
    std::ofstream(tmp.path / "x.bin") << "NOTMAGIC";
    EXPECT_THROW(load_encoder(tmp.path / "x.bin"), IngestionError);
    Rng rng(1);
    save_encoder(EncoderParams::random(3, 2, rng), tmp.path / "e.bin");
    fs::resize_file(tmp.path / "e.bin", fs::file_size(tmp.path / "e.bin") - 5);
    EXPECT_THROW(load_encoder(tmp.path / "e.bin"), IngestionError);
    EXPECT_THROW(load_encoder(tmp.path / "missing.bin"), IngestionError);
}

// --- configuration -----------------------------------------------------------

TEST(Config, ParsesKeysAndComments) {
    const auto cfg = parse_config("# header\nseed = 42\nlayer1_sigma=0.02  # inline\n\nno_marg = true\npca_dim = 12\ndata = /tmp/x\n");
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.layer1.sigma, 0.02);
    EXPECT_TRUE(cfg.no_marg);
    EXPECT_EQ(cfg.metric.dim, 12);
    EXPECT_EQ(cfg.data, "/tmp/x");
    EXPECT_FALSE(cfg.effective_layer1().enable_marginalization);
    EXPECT_FALSE(cfg.effective_metric().enable_marginalization);
}

TEST(Config, UnknownKeyNamesLine) {
    try {
        parse_config("seed = 1\nbogus = 2\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("bogus"), std::string::npos);
        EXPECT_NE(msg.find('2'), std::string::npos);
    }
}

TEST(Config, BadValues) {
    EXPECT_THROW(parse_config("seed = -1\n"), ConfigError);
    EXPECT_THROW(parse_config("layer1_sigma = abc\n"), ConfigError);
    EXPECT_THROW(parse_config("no_marg = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("seed 3\n"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
    for (const auto& e : fs::directory_iterator(fs::path(INVMETRIC_SOURCE_DIR) / "configs"))
        if (e.path().extension() == ".conf") EXPECT_NO_THROW(load_config(e.path())) << e.path();
}

TEST(Config, NoInvDisablesInvarianceOnly) {
    PipelineConfig cfg;
    cfg.no_inv = true;
    EXPECT_FALSE(cfg.effective_layer1().enable_invariance);
    EXPECT_TRUE(cfg.effective_layer1().enable_marginalization);
}
