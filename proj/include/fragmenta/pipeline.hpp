#pragma once
// generate -> train -> search -> match -> evaluate over a dataset directory.

#include "fragmenta/config.hpp"
#include "fragmenta/dataset.hpp"
#include "fragmenta/matching.hpp"
#include "fragmenta/metrics.hpp"
#include "fragmenta/nn/model.hpp"
#include "fragmenta/nn/train.hpp"
#include "fragmenta/searching.hpp"
#include "fragmenta/svg.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fragmenta::pipeline {

namespace fs = std::filesystem;
using config::RunConfig;
using dataset::Corpus;
using dataset::Split;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Encoding and dataset builders

struct EncodedSet {
    std::vector<int> ids;
    std::vector<nn::FragmentInput> inputs;
    std::map<int, std::size_t> slot; ///< fragment id -> position

    const nn::FragmentInput& at(int id) const { return inputs.at(slot.at(id)); }
};

inline EncodedSet encode_fragments(const Corpus& c, const std::vector<int>& ids, const nn::ModelConfig& cfg) {
    EncodedSet out;
    for (int id : ids) {
        const auto& f = c.fragment(id);
        if (f.contour.size() == 0) {
            spdlog::warn("fragment {} has an empty contour; skipped", id);
            continue;
        }
        out.slot[id] = out.ids.size();
        out.ids.push_back(id);
        out.inputs.push_back(nn::encode_fragment(f.pixels, f.mask, f.contour, cfg, cfg.l_max_match));
    }
    return out;
}

/// Row of `in` whose contour index is cyclically nearest to `idx`.
inline std::size_t nearest_row(const nn::FragmentInput& in, std::size_t idx) {
    const auto& src = in.source;
    auto it = std::lower_bound(src.begin(), src.end(), idx);
    const std::size_t hi = it == src.end() ? 0 : static_cast<std::size_t>(it - src.begin());
    const std::size_t lo = it == src.begin() ? src.size() - 1 : static_cast<std::size_t>(it - src.begin()) - 1;
    auto cyc = [&](std::size_t a) {
        const std::size_t d = a > idx ? a - idx : idx - a;
        return std::min(d, in.contour_length - d);
    };
    return cyc(src[lo]) <= cyc(src[hi]) ? lo : hi;
}

/// GT matches as (row of m, row of n). Rows of m that were subsampled away
/// are dropped; the partner snaps to the nearest kept row of n.
inline std::vector<std::pair<std::size_t, std::size_t>> gt_rows(const tearing::PairGroundTruth& gt,
                                                                const nn::FragmentInput& m,
                                                                const nn::FragmentInput& n) {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (const auto& mt : gt.matches) {
        auto it = std::lower_bound(m.source.begin(), m.source.end(), mt.m);
        if (it == m.source.end() || *it != mt.m) continue;
        out.insert({static_cast<std::size_t>(it - m.source.begin()), nearest_row(n, mt.n)});
    }
    return {out.begin(), out.end()};
}

inline std::vector<tearing::PairGroundTruth> pairs_of(const Corpus& c, config::SplitSel sel) {
    if (sel == config::SplitSel::All) return c.pairs;
    return c.pairs_in(static_cast<Split>(sel));
}

inline std::vector<int> ids_of(const Corpus& c, config::SplitSel sel) {
    if (sel != config::SplitSel::All) return c.fragment_ids(static_cast<Split>(sel));
    std::vector<int> out;
    for (const auto& f : c.fragments) out.push_back(f.id);
    return out;
}

inline nn::MatchingDataset build_matching_dataset(const EncodedSet& enc,
                                                  const std::vector<tearing::PairGroundTruth>& pairs) {
    nn::MatchingDataset d;
    d.inputs = enc.inputs;
    for (const auto& p : pairs) {
        if (!enc.slot.count(p.id_m) || !enc.slot.count(p.id_n)) continue;
        nn::MatchingSample s{enc.slot.at(p.id_m), enc.slot.at(p.id_n), {}};
        s.gt = gt_rows(p, d.inputs[s.m], d.inputs[s.n]);
        if (!s.gt.empty()) d.pairs.push_back(std::move(s));
    }
    return d;
}

inline nn::SearchingDataset build_searching_dataset(nn::MatchingModel& backbone, const EncodedSet& enc,
                                                    const std::vector<tearing::PairGroundTruth>& pairs) {
    nn::SearchingDataset d;
    for (const auto& in : enc.inputs) d.inputs.push_back(nn::make_search_input(backbone, in));
    for (const auto& p : pairs) {
        if (enc.slot.count(p.id_m) && enc.slot.count(p.id_n)) d.positives.emplace_back(enc.slot.at(p.id_m), enc.slot.at(p.id_n));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
    nn::TrainResult matching;
    nn::TrainResult searching;
    std::uint64_t backbone_checksum_stage1 = 0;
    std::uint64_t backbone_checksum_stage2 = 0;
    double seconds = 0.0;
};

/// Both stages on the given pairs; models are trained in place.
inline TrainOutcome train_two_step(const EncodedSet& enc, const std::vector<tearing::PairGroundTruth>& pairs,
                                   nn::MatchingModel& backbone, nn::SearchingModel& head, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t root = derive_seed(seed, "training");
    TrainOutcome out;
    auto log_every = [](const char* stage, int total) {
        return [stage, total](int step, double loss) {
            if (step % 10 == 0 || step + 1 == total) spdlog::info("{} step {}/{} loss {:.6g}", stage, step + 1, total, loss);
        };
    };
    const auto md = build_matching_dataset(enc, pairs);
    Rng match_rng = make_rng(root, "batches.matching");
    out.matching = nn::train_matching(backbone, md, match_rng, log_every("matching", backbone.config().match_steps));
    out.backbone_checksum_stage1 = backbone.params().checksum();

    const auto sd = build_searching_dataset(backbone, enc, pairs);
    Rng search_rng = make_rng(root, "batches.searching");
    out.searching = nn::train_searching(head, backbone, sd, search_rng, log_every("searching", head.config().search_steps));
    out.backbone_checksum_stage2 = backbone.params().checksum();
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline std::uint64_t model_seed(std::uint64_t seed, const char* which) {
    return derive_seed(derive_seed(seed, "training"), std::string("init.") + which);
}

inline std::string loss_csv(const nn::TrainResult& r) {
    std::ostringstream os;
    os << "step,loss,smoothed\n";
    os.precision(17);
    for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
        os << i << ',' << r.loss_trace[i] << ',' << (i < r.smoothed_trace.size() ? r.smoothed_trace[i] : r.loss_trace[i])
           << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Searching

inline searching::EmbeddingIndex embed_all(const EncodedSet& enc, nn::MatchingModel& backbone,
                                           nn::SearchingModel& head) {
    nn::Matrix v(static_cast<Eigen::Index>(enc.inputs.size()), head.config().d_search);
    for (std::size_t i = 0; i < enc.inputs.size(); ++i) {
        v.row(static_cast<Eigen::Index>(i)) = head.embed_value(nn::make_search_input(backbone, enc.inputs[i]));
    }
    return searching::make_index(std::move(v), enc.ids);
}

inline metrics::RankTable to_rank_table(const searching::EmbeddingIndex& index, std::size_t k) {
    metrics::RankTable t;
    const auto ranks = searching::rank_table(index, k);
    for (std::size_t r = 0; r < index.size(); ++r) t[index.ids[r]] = ranks[r];
    return t;
}

// ---------------------------------------------------------------------------
// Matching

struct PairMatch {
    int id_m = -1;
    int id_n = -1;
    bool has_model = false;
    RigidTransform2D transform;
    std::size_t inlier_count = 0;
    double match_score = 0.0;
    std::vector<matching::Correspondence> correspondences;
    std::string error;
};

inline std::uint64_t pair_seed(std::uint64_t seed, int a, int b) {
    return derive_seed(derive_seed(seed, "ransac"), (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
                                                        static_cast<std::uint32_t>(b));
}

/// Fused features per fragment, computed once.
class FeatureCache {
public:
    FeatureCache(nn::MatchingModel& model, const EncodedSet& enc) : model_(model), enc_(enc) {}

    const nn::Matrix& get(int id) {
        auto it = cache_.find(id);
        if (it == cache_.end()) it = cache_.emplace(id, model_.fused_features(enc_.at(id))).first;
        return it->second;
    }

private:
    nn::MatchingModel& model_;
    const EncodedSet& enc_;
    std::map<int, nn::Matrix> cache_;
};

inline PairMatch match_with_model(const Corpus& c, const EncodedSet& enc, FeatureCache& feats, int a, int b,
                                  const matching::MatchingConfig& cfg, std::uint64_t seed) {
    PairMatch pm;
    pm.id_m = a;
    pm.id_n = b;
    Rng rng(pair_seed(seed, a, b));
    try {
        auto r = matching::match_pair(feats.get(a), feats.get(b), c.fragment(a).contour.points,
                                      c.fragment(b).contour.points, cfg, rng, enc.at(a).source, enc.at(b).source);
        pm.has_model = true;
        pm.transform = r.transform;
        pm.inlier_count = r.inlier_count;
        pm.match_score = r.match_score;
        pm.correspondences = std::move(r.correspondences);
    } catch (const NoModel& e) {
        pm.error = e.what();
    }
    return pm;
}

/// GT correspondences straight into rigid_fit.
inline PairMatch match_with_oracle(const Corpus& c, const tearing::PairGroundTruth& gt) {
    PairMatch pm;
    pm.id_m = gt.id_m;
    pm.id_n = gt.id_n;
    std::vector<Point2> src, dst;
    for (const auto& m : gt.matches) {
        dst.push_back(c.fragment(gt.id_m).contour[m.m]);
        src.push_back(c.fragment(gt.id_n).contour[m.n]);
        pm.correspondences.push_back({m.m, m.n, 1.0});
    }
    try {
        pm.transform = rigid_fit(src, dst);
        pm.has_model = true;
        pm.inlier_count = src.size();
        pm.match_score = static_cast<double>(src.size());
    } catch (const Error& e) {
        pm.error = e.what();
    }
    return pm;
}

// ---------------------------------------------------------------------------
// File formats

inline constexpr int kRanksVersion = 1;
inline constexpr int kCandidatesVersion = 1;
inline constexpr int kMatchesVersion = 1;
inline constexpr int kReportVersion = 1;
inline constexpr std::size_t kCorrespondenceCap = 2000;

inline json ranks_json(const metrics::RankTable& t, std::size_t k, const std::string& corpus_id) {
    json rows = json::array();
    for (const auto& [q, list] : t) rows.push_back({{"query", q}, {"ranked", list}});
    return {{"format", "fragmenta-ranks"}, {"format_version", kRanksVersion}, {"corpus_id", corpus_id}, {"k", k}, {"rows", rows}};
}

inline metrics::RankTable ranks_from_json(const json& j) {
    dataset::require_format(j, "fragmenta-ranks", kRanksVersion);
    metrics::RankTable t;
    try {
        for (const auto& r : j.at("rows")) t[r.at("query").get<int>()] = r.at("ranked").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed rank table: ") + e.what());
    }
    return t;
}

inline json match_json(const PairMatch& m, bool cap) {
    json corr = json::array();
    const std::size_t n = cap ? std::min(m.correspondences.size(), kCorrespondenceCap) : m.correspondences.size();
    for (std::size_t k = 0; k < n; ++k) {
        const auto& c = m.correspondences[k];
        corr.push_back({c.i, c.j, c.score});
    }
    json j = {{"id_m", m.id_m},
              {"id_n", m.id_n},
              {"has_model", m.has_model},
              {"inlier_count", m.inlier_count},
              {"match_score", m.match_score},
              {"correspondence_count", m.correspondences.size()},
              {"correspondences", std::move(corr)}};
    if (m.has_model) j["transform"] = dataset::transform_to_json(m.transform);
    if (!m.error.empty()) j["error"] = m.error;
    return j;
}

inline PairMatch match_from_json(const json& j) {
    PairMatch m;
    m.id_m = j.at("id_m").get<int>();
    m.id_n = j.at("id_n").get<int>();
    m.has_model = j.at("has_model").get<bool>();
    m.inlier_count = j.at("inlier_count").get<std::size_t>();
    m.match_score = j.at("match_score").get<double>();
    if (m.has_model) m.transform = dataset::transform_from_json(j.at("transform"));
    for (const auto& c : j.at("correspondences")) {
        m.correspondences.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(), c.at(2).get<double>()});
    }
    if (j.contains("error")) m.error = j.at("error").get<std::string>();
    return m;
}

struct MatchReport {
    std::string corpus_id;
    std::string split;
    std::vector<PairMatch> pairs;
};

inline json match_report_json(const MatchReport& r, const config::InferenceConfig& inf, std::uint64_t seed) {
    json pairs = json::array();
    for (const auto& m : r.pairs) pairs.push_back(match_json(m, inf.cap_correspondences));
    return {{"format", "fragmenta-matches"},
            {"format_version", kMatchesVersion},
            {"corpus_id", r.corpus_id},
            {"split", r.split},
            {"pairs_source", config::enum_name(inf.pairs, config::kPairSourceNames)},
            {"matcher", config::enum_name(inf.matcher, config::kMatcherNames)},
            {"seed", seed},
            {"pairs", std::move(pairs)}};
}

inline MatchReport match_report_from_json(const json& j) {
    dataset::require_format(j, "fragmenta-matches", kMatchesVersion);
    MatchReport r;
    try {
        r.corpus_id = j.at("corpus_id").get<std::string>();
        r.split = j.at("split").get<std::string>();
        for (const auto& p : j.at("pairs")) r.pairs.push_back(match_from_json(p));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed match report: ") + e.what());
    }
    return r;
}

inline std::optional<double> nullable(const std::optional<std::array<double, 3>>& a, std::size_t i) {
    if (!a) return std::nullopt;
    return (*a)[i];
}

/// Table-style report: one row per difficulty plus "All".
inline json report_json(const metrics::EvalReport& rep, const Corpus& c, const std::string& split) {
    const std::vector<std::string> columns{"Recall@5", "Recall@10", "Recall@20", "NDCG@5", "NDCG@10",
                                           "NDCG@20",  "RR",        "HD",        "RE",     "NTE"};
    json rows = json::object();
    const std::vector<std::pair<std::string, std::string>> names{
        {"high", "High"}, {"medium", "Medium"}, {"low", "Low"}, {"all", "All"}};
    for (const auto& [key, label] : names) {
        const auto& s = rep.strata.at(key);
        json row;
        for (std::size_t i = 0; i < metrics::kReportKs.size(); ++i) {
            const auto r = nullable(s.recall, i);
            const auto n = nullable(s.ndcg, i);
            row[columns[i]] = r ? json(*r) : json(nullptr);
            row[columns[3 + i]] = n ? json(*n) : json(nullptr);
        }
        row["RR"] = s.rr;
        row["HD"] = s.model_count ? json(s.hd) : json(nullptr);
        row["RE"] = s.model_count ? json(s.re) : json(nullptr);
        row["NTE"] = s.model_count ? json(s.nte) : json(nullptr);
        row["pairs"] = s.pair_count;
        row["pairs_with_model"] = s.model_count;
        row["registered"] = s.registered_count;
        rows[label] = std::move(row);
    }
    json counts = {{"fragments", json::object()}, {"pairs", json::object()}};
    for (auto s : {Split::Train, Split::Val, Split::Test}) {
        counts["fragments"][dataset::to_string(s)] = c.fragment_ids(s).size();
        counts["pairs"][dataset::to_string(s)] = c.pairs_in(s).size();
    }
    return {{"format", "fragmenta-report"},
            {"format_version", kReportVersion},
            {"corpus_id", c.corpus_id},
            {"split", split},
            {"tau_rr", rep.tau_rr},
            {"columns", columns},
            {"rows", std::move(rows)},
            {"split_counts", std::move(counts)}};
}

// ---------------------------------------------------------------------------
// Evaluation

/// Looks up the estimate for a GT pair, inverting reversed entries.
inline std::optional<RigidTransform2D> estimate_for(const std::map<std::pair<int, int>, const PairMatch*>& by_ids,
                                                    const tearing::PairGroundTruth& gt) {
    if (auto it = by_ids.find({gt.id_m, gt.id_n}); it != by_ids.end()) {
        if (it->second->has_model) return it->second->transform;
        return std::nullopt;
    }
    if (auto it = by_ids.find({gt.id_n, gt.id_m}); it != by_ids.end()) {
        if (it->second->has_model) return it->second->transform.inverse();
    }
    return std::nullopt;
}

/// Ids used by the inputs that the manifest's selected split does not know.
inline void check_ids(const std::set<int>& known, const std::set<int>& used, const std::string& what) {
    std::vector<int> unknown;
    std::set_difference(used.begin(), used.end(), known.begin(), known.end(), std::back_inserter(unknown));
    if (unknown.empty()) return;
    std::ostringstream os;
    os << what << " references " << unknown.size() << " fragment id(s) outside the selected split:";
    for (std::size_t i = 0; i < std::min<std::size_t>(unknown.size(), 10); ++i) os << ' ' << unknown[i];
    if (unknown.size() > 10) os << " ...";
    throw DataError(os.str());
}

inline std::vector<metrics::PairOutcome> evaluate_matches(const Corpus& c,
                                                          const std::vector<tearing::PairGroundTruth>& gts,
                                                          const std::vector<PairMatch>& matches) {
    std::map<std::pair<int, int>, const PairMatch*> by_ids;
    for (const auto& m : matches) by_ids[{m.id_m, m.id_n}] = &m;
    std::vector<metrics::PairOutcome> out;
    for (const auto& gt : gts) {
        out.push_back(metrics::evaluate_pair(gt, c.fragment(gt.id_m), c.fragment(gt.id_n), estimate_for(by_ids, gt)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

inline fs::path dataset_dir(const RunConfig& cfg) { return cfg.paths.dataset; }
inline fs::path run_dir(const RunConfig& cfg) { return cfg.paths.run; }

inline std::string split_name(const RunConfig& cfg) {
    return config::enum_name(cfg.inference.split, config::kSplitNames);
}

inline Corpus cmd_generate(const RunConfig& cfg) {
    const auto images = dataset::load_images(cfg.paths.images);
    spdlog::info("generating from {} image(s)", images.size());
    auto corpus = dataset::generate_corpus(images, cfg.generator, cfg.seed, fs::path(cfg.paths.images).filename().string());
    const fs::path out = dataset_dir(cfg);
    dataset::write_corpus(out, corpus);
    dataset::write_text_atomic(out / "config.json", config::to_json(cfg).dump(1) + "\n");
    spdlog::info("wrote {} fragments and {} pairs to {}", corpus.fragments.size(), corpus.pairs.size(), out.string());
    return corpus;
}

inline TrainOutcome cmd_train(const RunConfig& cfg) {
    const auto corpus = dataset::read_corpus(dataset_dir(cfg));
    const auto ids = corpus.fragment_ids(Split::Train);
    const auto pairs = corpus.pairs_in(Split::Train);
    if (ids.empty() || pairs.empty()) throw DataError("train split has no fragments or no pairs");
    const fs::path out = run_dir(cfg);
    fs::create_directories(out);
    const auto enc = encode_fragments(corpus, ids, cfg.model);
    nn::MatchingModel backbone(cfg.model, model_seed(cfg.seed, "matching"));
    nn::SearchingModel head(cfg.model, model_seed(cfg.seed, "searching"));
    TrainOutcome res;
    try {
        res = train_two_step(enc, pairs, backbone, head, cfg.seed);
    } catch (const TrainingDiverged& e) {
        nn::TrainResult partial;
        partial.loss_trace = e.partial_trace;
        dataset::write_text_atomic(out / "loss_diverged.csv", loss_csv(partial));
        throw;
    }
    nn::save_checkpoint(out / "matching.ckpt", backbone.params());
    nn::save_checkpoint(out / "searching.ckpt", head.params());
    dataset::write_text_atomic(out / "loss_matching.csv", loss_csv(res.matching));
    dataset::write_text_atomic(out / "loss_searching.csv", loss_csv(res.searching));
    json summary = {{"format", "fragmenta-train"},
                    {"format_version", 1},
                    {"matching_steps", res.matching.steps},
                    {"searching_steps", res.searching.steps},
                    {"matching_loss_first", res.matching.loss_trace.empty() ? 0.0 : res.matching.loss_trace.front()},
                    {"matching_loss_last", res.matching.loss_trace.empty() ? 0.0 : res.matching.loss_trace.back()},
                    {"backbone_checksum", res.backbone_checksum_stage1},
                    {"backbone_checksum_after_search", res.backbone_checksum_stage2},
                    {"wall_seconds", res.seconds}};
    dataset::write_text_atomic(out / "train_summary.json", summary.dump(1) + "\n");
    return res;
}

/// Rebuilds both models from their checkpoints.
inline std::pair<nn::MatchingModel, nn::SearchingModel> load_models(const RunConfig& cfg) {
    const fs::path out = run_dir(cfg);
    for (const char* f : {"matching.ckpt", "searching.ckpt"}) {
        if (!fs::exists(out / f)) throw DataError("missing checkpoint '" + (out / f).string() + "'");
    }
    std::pair<nn::MatchingModel, nn::SearchingModel> m{nn::MatchingModel(cfg.model, 0), nn::SearchingModel(cfg.model, 0)};
    nn::load_checkpoint(out / "matching.ckpt", m.first.params());
    nn::load_checkpoint(out / "searching.ckpt", m.second.params());
    return m;
}

struct SearchOutput {
    searching::EmbeddingIndex index;
    metrics::RankTable ranks;
    std::vector<std::pair<int, int>> candidates;
};

inline SearchOutput cmd_search(const RunConfig& cfg) {
    auto [backbone, head] = load_models(cfg);
    const auto corpus = dataset::read_corpus(dataset_dir(cfg));
    const auto enc = encode_fragments(corpus, ids_of(corpus, cfg.inference.split), cfg.model);
    if (enc.ids.size() < 2) throw DataError("search needs at least two fragments in the selected split");
    SearchOutput s;
    s.index = embed_all(enc, backbone, head);
    s.ranks = to_rank_table(s.index, cfg.inference.top_k);
    s.candidates = searching::retrieve_candidate_pairs(s.index, cfg.inference.top_k);
    const fs::path out = run_dir(cfg);
    fs::create_directories(out);
    searching::write_index(out / "index.fsix", s.index);
    dataset::write_text_atomic(out / "ranks.json", ranks_json(s.ranks, cfg.inference.top_k, corpus.corpus_id).dump(1) + "\n");
    json cand = {{"format", "fragmenta-candidates"},
                 {"format_version", kCandidatesVersion},
                 {"corpus_id", corpus.corpus_id},
                 {"k", cfg.inference.top_k},
                 {"pairs", s.candidates}};
    dataset::write_text_atomic(out / "candidates.json", cand.dump(1) + "\n");
    spdlog::info("indexed {} fragments, {} candidate pairs", s.index.size(), s.candidates.size());
    return s;
}

inline std::vector<std::pair<int, int>> read_candidates(const fs::path& path) {
    const json j = dataset::read_json(path);
    dataset::require_format(j, "fragmenta-candidates", kCandidatesVersion);
    try {
        return j.at("pairs").get<std::vector<std::pair<int, int>>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed candidates file: ") + e.what());
    }
}

inline MatchReport cmd_match(const RunConfig& cfg) {
    const auto corpus = dataset::read_corpus(dataset_dir(cfg));
    const auto gts = pairs_of(corpus, cfg.inference.split);
    const auto ids = ids_of(corpus, cfg.inference.split);
    std::map<std::pair<int, int>, const tearing::PairGroundTruth*> gt_by_ids;
    for (const auto& g : gts) gt_by_ids[{g.id_m, g.id_n}] = &g;

    std::vector<std::pair<int, int>> todo;
    switch (cfg.inference.pairs) {
    case config::PairSource::Gt:
        for (const auto& g : gts) todo.emplace_back(g.id_m, g.id_n);
        break;
    case config::PairSource::Candidates: {
        const auto path = run_dir(cfg) / "candidates.json";
        if (!fs::exists(path)) throw DataError("no candidates file at '" + path.string() + "'; run search first");
        todo = read_candidates(path);
        check_ids({ids.begin(), ids.end()}, [&] {
            std::set<int> u;
            for (auto [a, b] : todo) u.insert(a), u.insert(b);
            return u;
        }(), "candidates file");
        break;
    }
    case config::PairSource::All:
        for (std::size_t a = 0; a < ids.size(); ++a) {
            for (std::size_t b = a + 1; b < ids.size(); ++b) todo.emplace_back(ids[a], ids[b]);
        }
        break;
    }
    // A GT pair keeps its own orientation so its transform is n -> m.
    for (auto& [a, b] : todo) {
        if (!gt_by_ids.count({a, b}) && gt_by_ids.count({b, a})) std::swap(a, b);
    }

    MatchReport rep;
    rep.corpus_id = corpus.corpus_id;
    rep.split = split_name(cfg);
    if (cfg.inference.matcher == config::Matcher::Oracle) {
        for (auto [a, b] : todo) {
            if (auto it = gt_by_ids.find({a, b}); it != gt_by_ids.end()) {
                rep.pairs.push_back(match_with_oracle(corpus, *it->second));
            } else {
                PairMatch pm;
                pm.id_m = a;
                pm.id_n = b;
                pm.error = "oracle: no ground truth for this pair";
                rep.pairs.push_back(std::move(pm));
            }
        }
    } else {
        auto [backbone, head] = load_models(cfg);
        std::set<int> used;
        for (auto [a, b] : todo) used.insert(a), used.insert(b);
        const auto enc = encode_fragments(corpus, {used.begin(), used.end()}, cfg.model);
        FeatureCache feats(backbone, enc);
        for (auto [a, b] : todo) {
            rep.pairs.push_back(match_with_model(corpus, enc, feats, a, b, cfg.inference.matching, cfg.seed));
        }
    }
    const fs::path out = run_dir(cfg);
    fs::create_directories(out);
    dataset::write_text_atomic(out / "matches.json", match_report_json(rep, cfg.inference, cfg.seed).dump(1) + "\n");
    std::size_t models = 0;
    for (const auto& p : rep.pairs) models += p.has_model;
    spdlog::info("matched {} pair(s), {} with a model", rep.pairs.size(), models);
    return rep;
}

inline void render_overlays(const RunConfig& cfg, const Corpus& corpus,
                            const std::vector<tearing::PairGroundTruth>& gts, const std::vector<PairMatch>& matches) {
    const fs::path dir = run_dir(cfg) / "overlays";
    fs::remove_all(dir);
    if (cfg.inference.render_samples == 0) return;
    fs::create_directories(dir);
    std::map<std::pair<int, int>, const PairMatch*> by_ids;
    for (const auto& m : matches) by_ids[{m.id_m, m.id_n}] = &m;
    std::vector<std::size_t> order(gts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, "render");
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg.inference.render_samples));
    if (n < static_cast<std::size_t>(cfg.inference.render_samples)) {
        spdlog::warn("only {} pair(s) available to render", n);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const auto& gt = gts[order[k]];
        svg::PairOverlay o;
        o.title = "pair " + std::to_string(gt.id_m) + " / " + std::to_string(gt.id_n);
        o.contour_m = corpus.fragment(gt.id_m).contour.points;
        o.contour_n = corpus.fragment(gt.id_n).contour.points;
        o.gt = gt.gt_transform;
        o.est = estimate_for(by_ids, gt);
        if (auto it = by_ids.find({gt.id_m, gt.id_n}); it != by_ids.end()) {
            for (const auto& c : it->second->correspondences) o.lines.emplace_back(c.i, c.j);
        }
        char name[64];
        std::snprintf(name, sizeof(name), "pair_%06d_%06d.svg", gt.id_m, gt.id_n);
        dataset::write_text_atomic(dir / name, svg::render_pair(o));
    }
}

inline metrics::EvalReport cmd_evaluate(const RunConfig& cfg) {
    const auto corpus = dataset::read_corpus(dataset_dir(cfg));
    const auto gts = pairs_of(corpus, cfg.inference.split);
    if (gts.empty()) throw DataError("no ground-truth pairs in split '" + split_name(cfg) + "'");
    const auto ids = ids_of(corpus, cfg.inference.split);
    const std::set<int> known(ids.begin(), ids.end());
    const fs::path out = run_dir(cfg);

    const auto report = match_report_from_json(dataset::read_json(out / "matches.json"));
    if (report.corpus_id != corpus.corpus_id) {
        throw DataError("match report is for corpus '" + report.corpus_id + "', dataset is '" + corpus.corpus_id + "'");
    }
    std::set<int> used;
    for (const auto& p : report.pairs) used.insert(p.id_m), used.insert(p.id_n);
    check_ids(known, used, "match report");

    std::optional<metrics::RankTable> ranks;
    if (fs::exists(out / "ranks.json")) {
        ranks = ranks_from_json(dataset::read_json(out / "ranks.json"));
        std::set<int> rused;
        for (const auto& [q, list] : *ranks) {
            rused.insert(q);
            rused.insert(list.begin(), list.end());
        }
        check_ids(known, rused, "rank table");
    }
    const auto outcomes = evaluate_matches(corpus, gts, report.pairs);
    const auto rep = metrics::stratified_report(outcomes, cfg.inference.tau_rr, ranks ? &*ranks : nullptr, gts);
    dataset::write_text_atomic(out / "report.json", report_json(rep, corpus, split_name(cfg)).dump(1) + "\n");
    render_overlays(cfg, corpus, gts, report.pairs);
    const auto& all = rep.strata.at("all");
    spdlog::info("RR {:.3f} over {} pair(s) (tau_rr {} px)", all.rr, all.pair_count, rep.tau_rr);
    return rep;
}

} // namespace fragmenta::pipeline
