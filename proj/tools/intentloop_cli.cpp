// intentloop command-line front end.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "intentloop/pipeline.hpp"
#include "intentloop/seed.hpp"

using namespace intentloop;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    std::string oracle;
    bool no_roles = false;
    bool no_merge = false;
    bool prune = false;
    std::string clusters;
    std::string pred;
    std::string gold;
    std::string embeddings;
    std::string logs;
    std::string dir;
    int top_k = 5;
    bool all = false;
};

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::OracleUnavailable:
        case ErrorCode::UnparseableResponse:
        case ErrorCode::EndpointUnavailable: return 2;
        default: return 1;
    }
}

pipeline::RunConfig load_config(const Options& o) {
    if (o.config.empty()) throw Error(ErrorCode::ConfigError, "--config is required");
    auto cfg = pipeline::load_run_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.no_roles) cfg.roles_enabled = false;
    if (o.no_merge) cfg.merge_enabled = false;
    if (o.prune) cfg.loop.pruning_enabled = true;
    if (!o.oracle.empty()) {
        oracle::BackendKind kind;
        if (o.oracle == "reference") kind = oracle::BackendKind::Reference;
        else if (o.oracle == "noisy") kind = oracle::BackendKind::NoisyReference;
        else if (o.oracle == "remote") kind = oracle::BackendKind::RemoteChat;
        else throw Error(ErrorCode::ConfigError, "--oracle must be reference, noisy or remote");
        std::vector<oracle::OracleBackendSpec> kept;
        for (const auto& b : cfg.oracles)
            if (b.kind == kind) kept.push_back(b);
        if (kept.empty()) {
            if (kind == oracle::BackendKind::RemoteChat)
                throw Error(ErrorCode::ConfigError, "--oracle remote needs a remote backend in the config");
            oracle::OracleBackendSpec spec;
            spec.kind = kind;
            if (kind == oracle::BackendKind::NoisyReference) spec.flip_rate = 0.1;
            kept.push_back(spec);
        }
        cfg.oracles = std::move(kept);
    }
    pipeline::validate(cfg);
    return cfg;
}

struct Loaded {
    io::Corpus corpus;
    EmbeddingMatrix embeddings;
};

Loaded load_inputs(const pipeline::RunConfig& cfg) {
    Loaded l;
    l.corpus = io::load_corpus(cfg.corpus_path);
    if (l.corpus.records.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus " + cfg.corpus_path + " is empty");
    l.embeddings = io::load_or_fetch_embeddings(l.corpus.records, cfg.embeddings);
    return l;
}

std::string clusters_path(const Options& o, const pipeline::RunConfig& cfg) {
    return o.clusters.empty() ? (fs::path(cfg.output_dir) / "clusters.jsonl").string() : o.clusters;
}

void write_clusters(const std::string& dir, const ClusterAssignment& clusters, const io::Corpus& corpus) {
    std::ostringstream out;
    io::write_clusters_jsonl(out, clusters, corpus.records);
    const auto path = (fs::path(dir) / "clusters.jsonl").string();
    io::write_text_file(path, out.str());
    std::cout << path << "\n";
}

int cmd_embed(const Options& o) {
    const auto cfg = load_config(o);
    const auto in = load_inputs(cfg);
    const auto path = (fs::path(cfg.output_dir) / "embeddings.bin").string();
    io::save_embeddings(path, in.embeddings);
    std::cout << fmt::format("{} rows x {} dims -> {}\n", in.embeddings.rows(), in.embeddings.dim(), path);
    return 0;
}

int cmd_run(const Options& o) {
    const auto cfg = load_config(o);
    const auto in = load_inputs(cfg);
    const auto result = pipeline::run(in.corpus.records, in.embeddings, cfg);
    pipeline::write_outputs(cfg.output_dir, in.corpus.records, result);
    std::cout << metrics::to_json(result.report);
    return 0;
}

int cmd_name(const Options& o) {
    const auto cfg = load_config(o);
    const auto in = load_inputs(cfg);
    auto clusters = io::load_clusters_jsonl(clusters_path(o, cfg), in.corpus.records);
    const auto panel = pipeline::make_panel(cfg);
    std::size_t calls = 0;
    pipeline::name_clusters(in.corpus.records, in.embeddings, clusters, cfg, panel, !o.all, calls);
    write_clusters(cfg.output_dir, clusters, in.corpus);
    return 0;
}

int cmd_merge(const Options& o) {
    const auto cfg = load_config(o);
    const auto in = load_inputs(cfg);
    auto clusters = io::load_clusters_jsonl(clusters_path(o, cfg), in.corpus.records);
    const auto panel = pipeline::make_panel(cfg);
    std::size_t calls = 0;
    pipeline::name_clusters(in.corpus.records, in.embeddings, clusters, cfg, panel, true, calls);
    const io::HashingEmbedder hashing(cfg.label_embedding_dim);
    std::unique_ptr<io::Embedder> remote;
    if (!cfg.embeddings.endpoint.empty()) {
        const auto& e = cfg.embeddings;
        remote = std::make_unique<io::RemoteEmbedder>(
            io::RemoteEmbedderSpec{e.endpoint, e.model, e.api_key, e.timeout_ms, e.max_retries, e.initial_backoff_ms,
                                   e.batch_size, e.max_in_flight},
            io::make_poster(e.endpoint, e.api_key, e.timeout_ms));
    }
    auto merged = pipeline::merge_stage(in.corpus.records, in.embeddings, clusters, cfg, panel,
                                        remote ? *remote : static_cast<const io::Embedder&>(hashing), calls);
    pipeline::evaluate_missing_verdicts(in.corpus.records, in.embeddings, merged, cfg, panel);
    write_clusters(cfg.output_dir, merged, in.corpus);
    return 0;
}

int cmd_roles(const Options& o) {
    const auto cfg = load_config(o);
    const auto in = load_inputs(cfg);
    auto clusters = io::load_clusters_jsonl(clusters_path(o, cfg), in.corpus.records);
    const auto panel = std::make_shared<const oracle::OraclePanel>(pipeline::make_panel(cfg));
    std::size_t calls = 0;
    pipeline::name_clusters(in.corpus.records, in.embeddings, clusters, cfg, *panel, true, calls);
    const auto lexicon = cfg.role_lexicon_path.empty() ? postprocess::RoleLexicon::defaults()
                                                       : postprocess::RoleLexicon::load(cfg.role_lexicon_path);
    const auto groups = postprocess::separate_roles(clusters, lexicon);
    auto out = postprocess::role_aware_recluster(groups, [&](std::span<const SentenceIndex> scope, Role role) {
        auto lc = cfg.loop;
        lc.seed = derive_seed(cfg.seed, "loop", 1 + static_cast<std::uint64_t>(role));
        auto lr = loop::run_pipeline(in.corpus.records, in.embeddings, scope, lc, *panel);
        if (!lr.residuals.empty()) {
            Cluster rest;
            rest.members = std::move(lr.residuals);
            rest.verdict = Verdict::Bad;
            rest.low_confidence = true;
            lr.clusters.clusters.push_back(std::move(rest));
        }
        pipeline::name_clusters(in.corpus.records, in.embeddings, lr.clusters, cfg, *panel, false, calls,
                                1 + static_cast<std::uint64_t>(role));
        return lr.clusters;
    });
    canonicalize(out);
    write_clusters(cfg.output_dir, out, in.corpus);
    return 0;
}

int cmd_eval(const Options& o) {
    if (o.pred.empty() || o.gold.empty()) throw Error(ErrorCode::ConfigError, "eval needs --pred and --gold");
    const auto corpus = io::load_corpus(o.gold);
    const auto clusters = io::load_clusters_jsonl(o.pred, corpus.records);
    std::optional<EmbeddingMatrix> emb;
    if (!o.embeddings.empty()) {
        emb = io::load_embeddings(o.embeddings);
        if (emb->rows() != corpus.records.size())
            throw Error(ErrorCode::ShapeMismatch, "embeddings do not match the gold corpus");
        emb->normalize_rows();
    }
    const auto report = pipeline::evaluate(corpus.records, emb ? &*emb : nullptr, clusters,
                                           metrics::Normalization::Arithmetic, {});
    const std::string dir = o.output_dir.empty() ? fs::path(o.pred).parent_path().string() : o.output_dir;
    const auto path = (fs::path(dir.empty() ? "." : dir) / "report.json").string();
    io::write_text_file(path, metrics::to_json(report));
    std::cout << metrics::to_json(report);
    return 0;
}

// Without --config the deterministic heuristic predicts the grid.
int cmd_prune(const Options& o) {
    if (o.top_k < 1) throw Error(ErrorCode::ConfigError, "--top-k must be >= 1");
    std::optional<pipeline::RunConfig> cfg;
    if (!o.config.empty()) cfg = load_config(o);
    if (o.logs.empty() && !cfg) throw Error(ErrorCode::ConfigError, "--logs or --config is required");
    const std::string path = o.logs.empty() ? (fs::path(cfg->output_dir) / "iterations.csv").string() : o.logs;
    std::istringstream in(io::read_text_file(path));
    const auto logs = io::read_iterations_csv(in);
    if (logs.empty()) throw Error(ErrorCode::ParseError, path + " has no iterations");
    const auto grid = cfg ? pipeline::make_panel(*cfg).predict(logs, o.top_k)
                          : oracle::heuristic_search_space(logs, o.top_k);
    std::cout << nlohmann::json(grid).dump() << "\n";
    return 0;
}

int cmd_report(const Options& o) {
    const std::string dir = !o.dir.empty() ? o.dir : !o.output_dir.empty() ? o.output_dir : ".";
    const auto r = metrics::report_from_json(io::read_text_file((fs::path(dir) / "report.json").string()));
    std::cout << fmt::format("clusters            {}\n", r.n_clusters)
              << fmt::format("nmi ({})   {:.4f}\n", metrics::to_string(r.nmi_normalization), r.nmi)
              << fmt::format("goodness_final      {:.4f}\n", r.goodness_final)
              << fmt::format("goodness_ratio      {:.4f}\n", r.goodness_ratio)
              << fmt::format("semantic_diversity  {:.4f}\n", r.semantic_diversity)
              << fmt::format("oracle calls        {} coherence + {} naming = {}\n", r.coherence_calls,
                             r.naming_calls, r.total_calls);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("intentloop"));

    CLI::App app{"Iterative oracle-guided intent clustering"};
    app.require_subcommand(1);
    Options o;
    std::string level = "warn";
    app.add_option("--log-level", level, "trace, debug, info, warn, error, off");

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run config (JSON)");
        sub->add_option("--seed", o.seed, "global seed");
        sub->add_option("--output-dir", o.output_dir, "output directory");
        sub->add_option("--oracle", o.oracle, "reference | noisy | remote")
            ->check(CLI::IsMember({"reference", "noisy", "remote"}));
        sub->add_flag("--no-roles", o.no_roles, "skip role separation");
        sub->add_flag("--no-merge", o.no_merge, "skip label-driven merging");
        sub->add_flag("--prune", o.prune, "prune candidates from iteration logs");
    };

    std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
    auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
        auto* sub = app.add_subcommand(name, help);
        common(sub);
        commands.emplace_back(sub, fn);
        return sub;
    };
    add("embed", "load or fetch corpus embeddings", cmd_embed);
    add("run", "full pipeline", cmd_run);
    add("merge", "merge clusters with similar labels", cmd_merge)->add_option("--clusters", o.clusters);
    add("roles", "role separation and re-clustering", cmd_roles)->add_option("--clusters", o.clusters);
    auto* name = add("name", "label clusters", cmd_name);
    name->add_option("--clusters", o.clusters);
    name->add_flag("--all", o.all, "rename labeled clusters too");
    auto* eval = add("eval", "score a clustering against gold labels", cmd_eval);
    eval->add_option("--pred", o.pred, "clusters.jsonl");
    eval->add_option("--gold", o.gold, "corpus JSONL with gold_label");
    eval->add_option("--embeddings", o.embeddings, "embedding matrix for semantic diversity");
    auto* prune = add("prune", "predict the next candidate grid", cmd_prune);
    prune->add_option("--logs", o.logs, "iterations.csv");
    prune->add_option("--top-k", o.top_k);
    add("report", "summarize report.json", cmd_report)->add_option("--dir", o.dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ERROR ConfigError: " << e.what() << "\n" << app.help();
        return 1;
    }

    const auto parsed = spdlog::level::from_str(level);
    spdlog::set_level(parsed == spdlog::level::off && level != "off" ? spdlog::level::warn : parsed);

    try {
        for (const auto& [sub, fn] : commands)
            if (sub->parsed()) return fn(o);
    } catch (const Error& e) {
        std::cerr << "ERROR " << to_string(e.code()) << ": " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "ERROR Internal: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
