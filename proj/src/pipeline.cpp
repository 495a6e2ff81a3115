#include "intentloop/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "intentloop/geometry.hpp"
#include "intentloop/parallel.hpp"
#include "intentloop/sampling.hpp"
#include "intentloop/seed.hpp"

namespace intentloop::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string resolve(const std::string& base, const std::string& path) {
    if (path.empty()) return path;
    const fs::path p(path);
    return p.is_absolute() ? path : (fs::path(base) / p).lexically_normal().string();
}

std::string interpolate_secret(const std::string& value, const char* fallback_env) {
    static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
    std::string out;
    std::sregex_iterator it(value.begin(), value.end(), var), end;
    std::size_t last = 0;
    for (; it != end; ++it) {
        out.append(value, last, static_cast<std::size_t>(it->position()) - last);
        const char* env = std::getenv((*it)[1].str().c_str());
        out += env ? env : "";
        last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(value, last);
    if (out.empty())
        if (const char* env = std::getenv(fallback_env)) out = env;
    return out;
}

template <typename T>
void get_if(const json& j, const char* key, T& into) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) into = it->get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw Error(ErrorCode::ConfigError, fmt::format("unknown key '{}' in {}", key, where));
    }
}

oracle::OracleBackendSpec parse_backend(const json& j, const std::string& base) {
    reject_unknown(j,
                   {"kind", "endpoint", "model", "api_key", "purity_threshold", "flip_rate", "timeout_ms",
                    "max_retries", "initial_backoff_ms", "seed", "coherence_fewshot", "naming_fewshot"},
                   "oracle backend");
    oracle::OracleBackendSpec spec;
    const std::string kind = j.value("kind", std::string("reference"));
    if (kind == "reference") spec.kind = oracle::BackendKind::Reference;
    else if (kind == "noisy" || kind == "noisy_reference") spec.kind = oracle::BackendKind::NoisyReference;
    else if (kind == "remote" || kind == "remote_chat") spec.kind = oracle::BackendKind::RemoteChat;
    else throw Error(ErrorCode::ConfigError, "unknown oracle kind '" + kind + "'");
    get_if(j, "endpoint", spec.endpoint);
    get_if(j, "model", spec.model_name);
    get_if(j, "api_key", spec.api_key);
    spec.api_key = interpolate_secret(spec.api_key, "ORACLE_API_KEY");
    get_if(j, "purity_threshold", spec.purity_threshold);
    get_if(j, "flip_rate", spec.flip_rate);
    get_if(j, "timeout_ms", spec.timeout_ms);
    get_if(j, "max_retries", spec.max_retries);
    get_if(j, "initial_backoff_ms", spec.initial_backoff_ms);
    get_if(j, "seed", spec.seed);
    get_if(j, "coherence_fewshot", spec.coherence_fewshot_path);
    get_if(j, "naming_fewshot", spec.naming_fewshot_path);
    spec.coherence_fewshot_path = resolve(base, spec.coherence_fewshot_path);
    spec.naming_fewshot_path = resolve(base, spec.naming_fewshot_path);
    return spec;
}

void parse_loop(const json& j, loop::LoopConfig& cfg) {
    reject_unknown(j,
                   {"candidate_ns", "epsilon", "t_max", "clustering", "pruning_enabled", "pruning_top_k",
                    "residual_policy", "max_in_flight"},
                   "loop");
    get_if(j, "candidate_ns", cfg.candidate_ns);
    get_if(j, "epsilon", cfg.epsilon);
    get_if(j, "t_max", cfg.t_max);
    get_if(j, "pruning_enabled", cfg.pruning_enabled);
    get_if(j, "pruning_top_k", cfg.pruning_top_k);
    get_if(j, "max_in_flight", cfg.max_in_flight);
    if (auto it = j.find("residual_policy"); it != j.end()) {
        const auto p = it->get<std::string>();
        if (p == "emit_flagged") cfg.residual_policy = loop::ResidualPolicy::EmitFlagged;
        else if (p == "drop") cfg.residual_policy = loop::ResidualPolicy::Drop;
        else throw Error(ErrorCode::ConfigError, "unknown residual_policy '" + p + "'");
    }
    if (auto it = j.find("clustering"); it != j.end()) {
        const json& c = *it;
        reject_unknown(c, {"algorithm", "linkage", "max_iter", "tol"}, "loop.clustering");
        const std::string algo = c.value("algorithm", std::string("hierarchical"));
        if (algo == "kmeans") cfg.clustering.algorithm = clustering::Algorithm::KMeans;
        else if (algo == "hierarchical") cfg.clustering.algorithm = clustering::Algorithm::Hierarchical;
        else throw Error(ErrorCode::ConfigError, "unknown clustering algorithm '" + algo + "'");
        const std::string link = c.value("linkage", std::string("ward"));
        if (link == "ward") cfg.clustering.linkage = clustering::Linkage::Ward;
        else if (link == "average") cfg.clustering.linkage = clustering::Linkage::Average;
        else if (link == "complete") cfg.clustering.linkage = clustering::Linkage::Complete;
        else throw Error(ErrorCode::ConfigError, "unknown linkage '" + link + "'");
        get_if(c, "max_iter", cfg.clustering.max_iter);
        get_if(c, "tol", cfg.clustering.tol);
    }
}

void parse_sampling(const json& j, sampling::SamplingSpec& spec) {
    reject_unknown(j, {"method", "sample_size", "repetitions_t", "hull_dim_d"}, "sampling");
    const std::string method = j.value("method", std::string("convex"));
    if (method == "convex") spec.method = sampling::Method::Convex;
    else if (method == "random") spec.method = sampling::Method::Random;
    else throw Error(ErrorCode::ConfigError, "unknown sampling method '" + method + "'");
    get_if(j, "sample_size", spec.sample_size);
    get_if(j, "repetitions_t", spec.repetitions_t);
    get_if(j, "hull_dim_d", spec.hull_dim_d);
}

void parse_merge(const json& j, postprocess::MergeConfig& cfg, bool& enabled) {
    reject_unknown(j, {"enabled", "theta", "tau", "kappa", "probability_mode"}, "merge");
    get_if(j, "enabled", enabled);
    get_if(j, "theta", cfg.theta);
    get_if(j, "tau", cfg.tau);
    get_if(j, "kappa", cfg.kappa);
    if (auto it = j.find("probability_mode"); it != j.end()) {
        const auto m = it->get<std::string>();
        if (m == "posterior") cfg.probability_mode = geometry::ProbabilityMode::Posterior;
        else if (m == "raw_density") cfg.probability_mode = geometry::ProbabilityMode::RawDensity;
        else if (m == "normalized") cfg.probability_mode = geometry::ProbabilityMode::Normalized;
        else throw Error(ErrorCode::ConfigError, "unknown probability_mode '" + m + "'");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
    RunConfig cfg;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
        reject_unknown(j,
                       {"corpus_path", "embeddings_path", "embedding", "oracles", "loop", "sampling", "merge",
                        "roles", "output_dir", "seed", "nmi_normalization", "label_embedding_dim"},
                       "config");
        get_if(j, "corpus_path", cfg.corpus_path);
        cfg.corpus_path = resolve(base_dir, cfg.corpus_path);
        get_if(j, "embeddings_path", cfg.embeddings.path);
        cfg.embeddings.path = resolve(base_dir, cfg.embeddings.path);
        if (auto it = j.find("embedding"); it != j.end()) {
            const json& e = *it;
            reject_unknown(e,
                           {"endpoint", "model", "api_key", "cache_dir", "timeout_ms", "max_retries",
                            "initial_backoff_ms", "batch_size", "max_in_flight"},
                           "embedding");
            get_if(e, "endpoint", cfg.embeddings.endpoint);
            get_if(e, "model", cfg.embeddings.model);
            get_if(e, "api_key", cfg.embeddings.api_key);
            get_if(e, "cache_dir", cfg.embeddings.cache_dir);
            get_if(e, "timeout_ms", cfg.embeddings.timeout_ms);
            get_if(e, "max_retries", cfg.embeddings.max_retries);
            get_if(e, "initial_backoff_ms", cfg.embeddings.initial_backoff_ms);
            get_if(e, "batch_size", cfg.embeddings.batch_size);
            get_if(e, "max_in_flight", cfg.embeddings.max_in_flight);
        }
        cfg.embeddings.api_key = interpolate_secret(cfg.embeddings.api_key, "EMBED_API_KEY");
        cfg.embeddings.cache_dir = resolve(base_dir, cfg.embeddings.cache_dir.empty() ? "." : cfg.embeddings.cache_dir);

        if (auto it = j.find("oracles"); it != j.end())
            for (const auto& b : *it) cfg.oracles.push_back(parse_backend(b, base_dir));
        if (auto it = j.find("loop"); it != j.end()) parse_loop(*it, cfg.loop);
        if (auto it = j.find("sampling"); it != j.end()) parse_sampling(*it, cfg.loop.sampling);
        if (auto it = j.find("merge"); it != j.end()) parse_merge(*it, cfg.merge, cfg.merge_enabled);
        if (auto it = j.find("roles"); it != j.end()) {
            reject_unknown(*it, {"enabled", "lexicon_path"}, "roles");
            get_if(*it, "enabled", cfg.roles_enabled);
            get_if(*it, "lexicon_path", cfg.role_lexicon_path);
            cfg.role_lexicon_path = resolve(base_dir, cfg.role_lexicon_path);
        }
        get_if(j, "output_dir", cfg.output_dir);
        cfg.output_dir = resolve(base_dir, cfg.output_dir);
        get_if(j, "seed", cfg.seed);
        if (auto it = j.find("nmi_normalization"); it != j.end()) {
            const auto n = metrics::parse_normalization(it->get<std::string>());
            if (!n) throw Error(ErrorCode::ConfigError, "unknown nmi_normalization");
            cfg.nmi_normalization = *n;
        }
        get_if(j, "label_embedding_dim", cfg.label_embedding_dim);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    const fs::path p(path);
    return parse_run_config(io::read_text_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

void validate(const RunConfig& config) {
    if (config.corpus_path.empty()) throw Error(ErrorCode::ConfigError, "corpus_path is required");
    if (config.embeddings.path.empty() == config.embeddings.endpoint.empty())
        throw Error(ErrorCode::ConfigError, "configure exactly one of embeddings_path and embedding.endpoint");
    if (config.oracles.empty()) throw Error(ErrorCode::ConfigError, "at least one oracle backend is required");
    for (const auto& o : config.oracles) oracle::validate(o);
    loop::validate(config.loop);
    postprocess::validate(config.merge);
    if (config.label_embedding_dim < 2) throw Error(ErrorCode::ConfigError, "label_embedding_dim must be >= 2");
}

oracle::OraclePanel make_panel(const RunConfig& config) {
    std::vector<std::shared_ptr<const oracle::OracleBackend>> backends;
    for (std::size_t i = 0; i < config.oracles.size(); ++i) {
        auto spec = config.oracles[i];
        spec.seed = derive_seed(config.seed ^ spec.seed, "oracle", i);
        backends.push_back(oracle::make_backend(spec));
    }
    return oracle::OraclePanel(std::move(backends));
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::vector<SentenceRecord> sample_records(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                                           const Cluster& cluster, sampling::SamplingSpec spec, std::uint64_t seed) {
    spec.seed = seed;
    std::vector<SentenceRecord> out;
    for (SentenceIndex i : sampling::sample_cluster(embeddings, cluster, spec)) out.push_back(corpus[i]);
    return out;
}

std::size_t workers(const RunConfig& config) { return static_cast<std::size_t>(std::max(config.loop.max_in_flight, 1)); }

}  // namespace

void name_clusters(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                   ClusterAssignment& clusters, const RunConfig& config, const oracle::OraclePanel& panel,
                   bool only_missing, std::size_t& naming_calls, std::uint64_t stream) {
    std::vector<std::size_t> todo;
    for (std::size_t c = 0; c < clusters.clusters.size(); ++c)
        if (!only_missing || !clusters.clusters[c].label) todo.push_back(c);
    parallel_for(todo.size(), workers(config), [&](std::size_t k) {
        Cluster& c = clusters.clusters[todo[k]];
        const auto seed = derive_seed(config.seed, fmt::format("name:{}", stream), todo[k]);
        c.label = panel.name(sample_records(corpus, embeddings, c, config.loop.sampling, seed));
    });
    naming_calls += todo.size();
}

ClusterAssignment merge_stage(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                              const ClusterAssignment& clusters, const RunConfig& config,
                              const oracle::OraclePanel& panel, const io::Embedder& label_embedder,
                              std::size_t& naming_calls, std::uint64_t stream) {
    if (clusters.clusters.size() < 2) return clusters;
    std::vector<std::string> names;
    for (const auto& c : clusters.clusters) {
        if (!c.label) throw Error(ErrorCode::MissingLabel, "merging needs a label on every cluster");
        names.push_back(c.label->str());
    }
    const EmbeddingMatrix vecs = label_embedder.embed(names);
    std::vector<geometry::UnitVector> labels;
    labels.reserve(vecs.rows());
    for (std::size_t i = 0; i < vecs.rows(); ++i) labels.push_back(geometry::normalize(vecs.row(i)));

    const auto graph = postprocess::build_affinity_graph(labels, config.merge);
    ClusterAssignment merged = postprocess::merge_clusters(clusters, graph);
    const auto renamed = postprocess::merged_cluster_indices(graph);
    if (!renamed.empty())
        spdlog::info("merged {} clusters into {}", clusters.clusters.size(), merged.clusters.size());
    parallel_for(renamed.size(), workers(config), [&](std::size_t k) {
        Cluster& c = merged.clusters[renamed[k]];
        const auto seed = derive_seed(config.seed, fmt::format("rename:{}", stream), renamed[k]);
        c.label = panel.name(sample_records(corpus, embeddings, c, config.loop.sampling, seed));
    });
    naming_calls += renamed.size();
    return merged;
}

std::size_t evaluate_missing_verdicts(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                                      ClusterAssignment& clusters, const RunConfig& config,
                                      const oracle::OraclePanel& panel) {
    std::vector<std::size_t> todo;
    for (std::size_t c = 0; c < clusters.clusters.size(); ++c)
        if (!clusters.clusters[c].verdict) todo.push_back(c);
    std::vector<char> failed(todo.size(), 0);
    parallel_for(todo.size(), workers(config), [&](std::size_t k) {
        Cluster& c = clusters.clusters[todo[k]];
        const auto seed = derive_seed(config.seed, "final", todo[k]);
        const auto v = panel.evaluate(sample_records(corpus, embeddings, c, config.loop.sampling, seed));
        if (!v) failed[k] = 1;
        c.verdict = v ? v->value : Verdict::Bad;
    });
    if (!todo.empty() && std::all_of(failed.begin(), failed.end(), [](char f) { return f != 0; }))
        throw Error(ErrorCode::OracleUnavailable, "every final coherence evaluation failed");
    return todo.size();
}

metrics::Report evaluate(std::span<const SentenceRecord> corpus, const EmbeddingMatrix* embeddings,
                         const ClusterAssignment& clusters, metrics::Normalization normalization,
                         const loop::CostReport& costs) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    metrics::Report r;
    r.nmi_normalization = normalization;
    r.n_clusters = clusters.clusters.size();
    std::vector<std::optional<std::string>> gold;
    gold.reserve(corpus.size());
    for (const auto& s : corpus) gold.push_back(s.gold_label);
    try {
        r.nmi = metrics::nmi(clusters, gold, normalization);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::MissingGoldLabel) throw;
        r.nmi = nan;
    }
    std::vector<Verdict> verdicts;
    for (const auto& c : clusters.clusters)
        if (c.verdict) verdicts.push_back(*c.verdict);
    r.goodness_final = verdicts.empty() ? nan : metrics::goodness_final(verdicts);
    r.goodness_ratio = verdicts.empty() ? nan : metrics::goodness_ratio(verdicts);
    r.semantic_diversity = embeddings ? metrics::semantic_diversity(*embeddings, clusters) : nan;
    r.coherence_calls = costs.coherence_calls;
    r.naming_calls = costs.naming_calls;
    r.total_calls = costs.total_calls;
    return r;
}

Result run(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings, const RunConfig& config,
           const Dependencies& deps) {
    if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus is empty");
    if (corpus.size() != embeddings.rows())
        throw Error(ErrorCode::ShapeMismatch, "corpus and embeddings are not aligned");
    loop::validate(config.loop);
    postprocess::validate(config.merge);

    const auto panel = deps.panel ? deps.panel : std::make_shared<const oracle::OraclePanel>(make_panel(config));
    std::shared_ptr<const io::Embedder> label_embedder = deps.label_embedder;
    if (!label_embedder) {
        if (!config.embeddings.endpoint.empty()) {
            const auto& e = config.embeddings;
            label_embedder = std::make_shared<io::RemoteEmbedder>(
                io::RemoteEmbedderSpec{e.endpoint, e.model, e.api_key, e.timeout_ms, e.max_retries,
                                       e.initial_backoff_ms, e.batch_size, e.max_in_flight},
                io::make_poster(e.endpoint, e.api_key, e.timeout_ms));
        } else {
            label_embedder = std::make_shared<io::HashingEmbedder>(config.label_embedding_dim);
        }
    }

    Result result;
    std::size_t naming_calls = 0;

    // One loop + naming + merge pass over a scope; `stream` separates seeds.
    auto refine = [&](std::span<const SentenceIndex> scope, std::uint64_t stream) {
        loop::LoopConfig lc = config.loop;
        lc.seed = derive_seed(config.seed, "loop", stream);
        loop::LoopResult lr = loop::run_pipeline(corpus, embeddings, scope, lc, *panel);
        const int offset = static_cast<int>(result.logs.size());
        for (auto& log : lr.logs) {
            log.epoch += offset;
            result.logs.push_back(std::move(log));
        }
        ClusterAssignment clusters = std::move(lr.clusters);
        if (!lr.residuals.empty()) {
            Cluster rest;
            rest.members = std::move(lr.residuals);
            rest.verdict = Verdict::Bad;
            rest.low_confidence = true;
            clusters.clusters.push_back(std::move(rest));
        }
        name_clusters(corpus, embeddings, clusters, config, *panel, false, naming_calls, stream);
        if (config.merge_enabled)
            clusters = merge_stage(corpus, embeddings, clusters, config, *panel, *label_embedder, naming_calls, stream);
        return clusters;
    };

    std::vector<SentenceIndex> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    ClusterAssignment clusters = refine(all, 0);

    if (config.roles_enabled) {
        const auto lexicon = config.role_lexicon_path.empty() ? postprocess::RoleLexicon::defaults()
                                                              : postprocess::RoleLexicon::load(config.role_lexicon_path);
        const auto groups = postprocess::separate_roles(clusters, lexicon);
        spdlog::info("role groups: {} customer, {} agent, {} unknown sentences", groups.customer.size(),
                     groups.agent.size(), groups.unknown.size());
        clusters = postprocess::role_aware_recluster(groups, [&](std::span<const SentenceIndex> scope, Role role) {
            return refine(scope, 1 + static_cast<std::uint64_t>(role));
        });
    }

    const std::size_t extra = evaluate_missing_verdicts(corpus, embeddings, clusters, config, *panel);
    canonicalize(clusters);
    if (!is_partition(clusters, corpus.size()))
        throw std::logic_error("pipeline output does not partition the corpus");

    result.costs = loop::account_costs(result.logs, naming_calls);
    result.costs.coherence_calls += extra;
    result.costs.total_calls += extra;
    result.clusters = std::move(clusters);
    result.report = evaluate(corpus, &embeddings, result.clusters, config.nmi_normalization, result.costs);
    return result;
}

void write_outputs(const std::string& dir, std::span<const SentenceRecord> corpus, const Result& result) {
    std::ostringstream clusters, iterations;
    io::write_clusters_jsonl(clusters, result.clusters, corpus);
    loop::write_iterations_csv(iterations, result.logs);
    const fs::path base(dir);
    io::write_text_file((base / "clusters.jsonl").string(), clusters.str());
    io::write_text_file((base / "iterations.csv").string(), iterations.str());
    io::write_text_file((base / "report.json").string(), metrics::to_json(result.report));
}

}  // namespace intentloop::pipeline
