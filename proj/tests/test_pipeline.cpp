#include "fragmenta/image_io.hpp"
#include "fragmenta/pipeline.hpp"
#include "fragmenta/synth.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <unistd.h>
#include <sstream>

using namespace fragmenta;
using namespace fragmenta::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
    if (!fs::exists(dir)) return 0;
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
    return n;
}

config::RunConfig small_config(const fs::path& root) {
    config::RunConfig c;
    c.seed = 11;
    c.paths = {(root / "images").string(), (root / "dataset").string(), (root / "run").string()};
    c.generator.t_max = 3;
    c.model.d_feat = 8;
    c.model.d_search = 8;
    c.model.conv_channels = 3;
    c.model.ff_hidden = 8;
    c.model.gcn_layers = 1;
    c.model.attn_layers = 1;
    c.model.l_max_match = 120;
    c.model.l_max_search = 64;
    c.model.batch_match = 2;
    c.model.batch_search = 6;
    c.model.match_steps = 2;
    c.model.search_steps = 2;
    c.inference.split = config::SplitSel::All;
    c.inference.top_k = 4;
    return c;
}

// One small dataset shared by the command tests.
class Commands : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("fragmenta_pipeline_test_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_ / "images");
        for (int k = 0; k < 4; ++k) {
            io::write_png_rgb(root_ / "images" / ("im" + std::to_string(k) + ".png"),
                              synth::procedural_image(400, 320, 50 + static_cast<std::uint64_t>(k)));
        }
        std::ofstream(root_ / "images" / "broken.png") << "not a png";
        corpus_ = cmd_generate(small_config(root_));
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    config::RunConfig cfg() const { return small_config(root_); }
    fs::path run() const { return root_ / "run"; }

    static inline fs::path root_;
    static inline dataset::Corpus corpus_;
};

} // namespace

TEST(Config, DefaultsRoundTrip) {
    const config::RunConfig c;
    const auto j = config::to_json(c);
    EXPECT_EQ(config::to_json(config::run_config_from_json(j)), j);
    EXPECT_EQ(j.at("inference").at("matching").at("eps").get<double>(), 0.006);
    EXPECT_EQ(j.at("inference").at("tau_rr").get<double>(), 10.0);
}

TEST(Config, PartialFileKeepsDefaults) {
    const auto c = config::run_config_from_json(json::parse(R"({"seed": 3, "model": {"d_feat": 16}})"));
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.model.d_feat, 16);
    EXPECT_EQ(c.model.d_search, 128);
}

TEST(Config, Rejections) {
    for (const char* bad : {R"({"bogus": 1})", R"({"model": {"d_feat": "x"}})", R"({"model": {"nope": 1}})",
                            R"({"inference": {"pairs": "some"}})", R"({"format_version": 2})", R"({"seed": -4})",
                            R"({"inference": {"tau_rr": 0}})", R"({"generator": {"tau": 1.5}})", R"([1, 2])",
                            R"({"inference": {"matching": {"orientation": "sideways"}}})"}) {
        EXPECT_THROW(config::run_config_from_json(json::parse(bad)), ConfigError) << bad;
    }
}

TEST(Config, SchemaListsEveryKeyWithItsDefault) {
    const json schema = dataset::read_json(fs::path(FRAGMENTA_SOURCE_DIR) / "docs" / "config.schema.json");
    std::function<void(const json&, const json&, const std::string&)> walk = [&](const json& v, const json& s,
                                                                                   const std::string& where) {
        if (v.is_object()) {
            ASSERT_TRUE(s.contains("properties")) << where;
            EXPECT_EQ(s.at("properties").size(), v.size()) << where;
            for (const auto& [k, child] : v.items()) {
                ASSERT_TRUE(s.at("properties").contains(k)) << where << "." << k;
                walk(child, s.at("properties").at(k), where + "." + k);
            }
        } else if (s.contains("default")) {
            EXPECT_EQ(s.at("default"), v) << where;
        }
    };
    walk(config::to_json(config::RunConfig{}), schema, "config");
    const json toy = dataset::read_json(fs::path(FRAGMENTA_SOURCE_DIR) / "configs" / "toy.json");
    EXPECT_NO_THROW(config::run_config_from_json(toy));
}

TEST(Splits, FiveOneFour) {
    EXPECT_EQ(dataset::split_counts(10), (std::array<std::size_t, 3>{5, 1, 4}));
    EXPECT_EQ(dataset::split_counts(20), (std::array<std::size_t, 3>{10, 2, 8}));
    for (std::size_t n = 1; n < 40; ++n) {
        const auto c = dataset::split_counts(n);
        EXPECT_EQ(c[0] + c[1] + c[2], n);
        const auto s = dataset::assign_splits(n, 5);
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), static_cast<dataset::Split>(k))), c[k]);
        }
    }
}

TEST(GtRows, SubsampledRowsDroppedAndPartnerSnaps) {
    nn::FragmentInput m, n;
    m.source = {0, 2, 4, 6};
    m.contour_length = 8;
    n.source = {0, 3, 6, 9};
    n.contour_length = 12;
    tearing::PairGroundTruth gt;
    gt.matches = {{0, 11}, {1, 10}, {2, 9}, {3, 8}, {4, 7}, {6, 5}};
    const auto rows = gt_rows(gt, m, n);
    const std::vector<std::pair<std::size_t, std::size_t>> expect{{0, 0}, {1, 3}, {2, 2}, {3, 2}};
    EXPECT_EQ(rows, expect);
}

TEST_F(Commands, GenerateSkipsBrokenImageAndKeepsSplitsByImage) {
    EXPECT_EQ(corpus_.images.size(), 4u);
    EXPECT_FALSE(corpus_.pairs.empty());
    for (const auto& p : corpus_.pairs) {
        EXPECT_EQ(corpus_.fragment(p.id_m).source_image_id, corpus_.fragment(p.id_n).source_image_id);
    }
    EXPECT_TRUE(fs::exists(fs::path(cfg().paths.dataset) / "config.json"));
}

TEST_F(Commands, ManifestRoundTripAndRerunIsByteIdentical) {
    const fs::path ds = cfg().paths.dataset;
    const auto before = slurp(ds / "manifest.json");
    const auto back = dataset::read_corpus(ds);
    EXPECT_EQ(dataset::manifest_json(back), dataset::manifest_json(corpus_));

    auto other = cfg();
    other.paths.dataset = (root_ / "dataset2").string();
    cmd_generate(other);
    EXPECT_EQ(slurp(fs::path(other.paths.dataset) / "manifest.json"), before);
    EXPECT_EQ(slurp(ds / "fragments" / dataset::fragment_file(0)),
              slurp(fs::path(other.paths.dataset) / "fragments" / dataset::fragment_file(0)));
}

TEST_F(Commands, ManifestWithUnknownVersionRejected) {
    const fs::path ds = root_ / "dataset_v2";
    fs::create_directories(ds);
    json j = dataset::manifest_json(corpus_);
    j["format_version"] = 2;
    std::ofstream(ds / "manifest.json") << j.dump();
    EXPECT_THROW(dataset::read_corpus(ds), DataError);
}

TEST_F(Commands, OracleMatchEvaluatesToPerfectRegistration) {
    auto c = cfg();
    c.inference.matcher = config::Matcher::Oracle;
    c.inference.render_samples = 3;
    const auto rep = cmd_match(c);
    EXPECT_EQ(rep.pairs.size(), corpus_.pairs.size());
    const auto ev = cmd_evaluate(c);
    const auto& all = ev.strata.at("all");
    EXPECT_EQ(all.rr, 1.0);
    EXPECT_LT(all.hd, 1e-6);
    EXPECT_LT(all.re, 1e-9);
    EXPECT_LT(all.nte, 1e-12);
    EXPECT_EQ(count_files(run() / "overlays", ".svg"), 3u);

    c.inference.render_samples = 0;
    cmd_evaluate(c);
    EXPECT_EQ(count_files(run() / "overlays", ".svg"), 0u);
    const json report = dataset::read_json(run() / "report.json");
    EXPECT_EQ(report.at("columns").size(), 10u);
    for (const char* row : {"High", "Medium", "Low", "All"}) EXPECT_TRUE(report.at("rows").contains(row));
}

TEST_F(Commands, AllPairsMode) {
    auto c = cfg();
    c.inference.matcher = config::Matcher::Oracle;
    c.inference.pairs = config::PairSource::All;
    const std::size_t n = corpus_.fragments.size();
    const auto rep = cmd_match(c);
    EXPECT_EQ(rep.pairs.size(), n * (n - 1) / 2);
    std::size_t with_model = 0;
    for (const auto& p : rep.pairs) with_model += p.has_model;
    EXPECT_EQ(with_model, corpus_.pairs.size());
}

TEST_F(Commands, ForeignIdInMatchReportAborts) {
    auto c = cfg();
    c.inference.matcher = config::Matcher::Oracle;
    cmd_match(c);
    json j = dataset::read_json(run() / "matches.json");
    j["pairs"][0]["id_n"] = 9999;
    std::ofstream(run() / "matches.json") << j.dump();
    try {
        cmd_evaluate(c);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("9999"), std::string::npos) << e.what();
    }
}

TEST_F(Commands, MissingCheckpointAborts) {
    auto c = cfg();
    c.paths.run = (root_ / "empty_run").string();
    EXPECT_THROW(cmd_search(c), DataError);
}

TEST_F(Commands, TrainSearchMatchEvaluateAndReproducible) {
    const auto c = cfg();
    const auto t = cmd_train(c);
    EXPECT_EQ(t.backbone_checksum_stage1, t.backbone_checksum_stage2);
    EXPECT_EQ(t.matching.loss_trace.size(), 2u);
    const auto s = cmd_search(c);
    const std::size_t n = corpus_.fragments.size();
    EXPECT_EQ(s.ranks.size(), n);
    for (const auto& [q, list] : s.ranks) EXPECT_EQ(std::count(list.begin(), list.end(), q), 0);
    EXPECT_LE(s.candidates.size(), n * c.inference.top_k);

    auto m = c;
    m.inference.pairs = config::PairSource::Candidates;
    cmd_match(m);
    EXPECT_NO_THROW(cmd_evaluate(m));

    const auto ckpt = slurp(run() / "matching.ckpt");
    const auto matches = slurp(run() / "matches.json");
    cmd_train(c);
    cmd_search(c);
    cmd_match(m);
    EXPECT_EQ(slurp(run() / "matching.ckpt"), ckpt);
    EXPECT_EQ(slurp(run() / "matches.json"), matches);
}
