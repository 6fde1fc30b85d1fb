// fragmenta: generate | train | search | match | evaluate

#include "fragmenta/alloc_tuning.hpp"
#include "fragmenta/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <optional>
#include <string>

using namespace fragmenta;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> top_k;
    std::optional<std::string> pairs;
    std::optional<std::string> matcher;
    std::optional<std::string> split;
    std::optional<double> tau_rr;
    std::optional<int> render_samples;
    std::optional<std::string> images, dataset, run;
    bool verbose = false;
};

config::RunConfig resolve(const Overrides& o) {
    config::RunConfig cfg = o.config.empty() ? config::RunConfig{} : config::load_run_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.top_k) cfg.inference.top_k = *o.top_k;
    if (o.pairs) cfg.inference.pairs = config::parse_enum(*o.pairs, config::kPairSourceNames, "--pairs");
    if (o.matcher) cfg.inference.matcher = config::parse_enum(*o.matcher, config::kMatcherNames, "--matcher");
    if (o.split) cfg.inference.split = config::parse_enum(*o.split, config::kSplitNames, "--split");
    if (o.tau_rr) cfg.inference.tau_rr = *o.tau_rr;
    if (o.render_samples) cfg.inference.render_samples = *o.render_samples;
    if (o.images) cfg.paths.images = *o.images;
    if (o.dataset) cfg.paths.dataset = *o.dataset;
    if (o.run) cfg.paths.run = *o.run;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Torn image fragment pair searching and matching"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config", o.config, "JSON run config (docs/config.schema.json)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "root seed");
    app.add_option("--top-k", o.top_k, "ranks kept per query and candidate depth");
    app.add_option("--pairs", o.pairs, "pairs to match")->check(CLI::IsMember({"gt", "candidates", "all"}));
    app.add_option("--matcher", o.matcher, "model or GT oracle")->check(CLI::IsMember({"model", "oracle"}));
    app.add_option("--split", o.split, "split used by search/match/evaluate")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    app.add_option("--tau-rr", o.tau_rr, "registration recall tolerance in px");
    app.add_option("--render-samples", o.render_samples, "SVG overlays written by evaluate");
    app.add_option("--images", o.images, "source image directory");
    app.add_option("--dataset", o.dataset, "dataset directory");
    app.add_option("--run", o.run, "run directory for checkpoints and reports");
    app.add_flag("-v,--verbose", o.verbose);

    auto* gen = app.add_subcommand("generate", "tear source images into a dataset");
    auto* train = app.add_subcommand("train", "two-step training on the train split");
    auto* search = app.add_subcommand("search", "embed fragments, write ranks and candidate pairs");
    auto* match = app.add_subcommand("match", "estimate a transform per pair");
    auto* eval = app.add_subcommand("evaluate", "metrics report and overlays");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        const auto cfg = resolve(o);
        if (gen->parsed()) pipeline::cmd_generate(cfg);
        if (train->parsed()) pipeline::cmd_train(cfg);
        if (search->parsed()) pipeline::cmd_search(cfg);
        if (match->parsed()) pipeline::cmd_match(cfg);
        if (eval->parsed()) pipeline::cmd_evaluate(cfg);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const DataError& e) {
        spdlog::error("data: {}", e.what());
        return 3;
    } catch (const TrainingDiverged& e) {
        spdlog::error("training diverged: {}", e.what());
        return 4;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
