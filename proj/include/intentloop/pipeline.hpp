#ifndef INTENTLOOP_PIPELINE_HPP
#define INTENTLOOP_PIPELINE_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "intentloop/io.hpp"
#include "intentloop/loop.hpp"
#include "intentloop/metrics.hpp"
#include "intentloop/oracle.hpp"
#include "intentloop/postprocess.hpp"

namespace intentloop::pipeline {

struct RunConfig {
    std::string corpus_path;
    io::EmbeddingSource embeddings;
    std::vector<oracle::OracleBackendSpec> oracles;
    loop::LoopConfig loop;
    postprocess::MergeConfig merge;
    std::string role_lexicon_path;  // empty: built-in lexicon
    bool merge_enabled = true;
    bool roles_enabled = true;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    metrics::Normalization nmi_normalization = metrics::Normalization::Arithmetic;
    std::size_t label_embedding_dim = 256;
};

/// Parses a JSON config. Relative paths resolve against `base_dir`;
/// "${NAME}" in api_key fields is replaced by the environment variable, and
/// empty keys fall back to ORACLE_API_KEY / EMBED_API_KEY. Throws
/// ConfigError.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

/// Throws ConfigError when an invariant of the config does not hold.
void validate(const RunConfig& config);

/// Backends with their seeds fanned out from the global seed.
oracle::OraclePanel make_panel(const RunConfig& config);

struct Result {
    ClusterAssignment clusters;
    std::vector<IterationLog> logs;  // main loop, then role-group loops
    loop::CostReport costs;
    metrics::Report report;
};

/// Runtime collaborators; defaults are built from the config when empty.
struct Dependencies {
    std::shared_ptr<const oracle::OraclePanel> panel;
    std::shared_ptr<const io::Embedder> label_embedder;
};

/// loop -> naming -> merge -> role re-clustering -> final verdicts ->
/// metrics. Every corpus sentence ends up in exactly one output cluster
/// (residuals are flagged low-confidence clusters).
Result run(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings, const RunConfig& config,
           const Dependencies& deps = {});

/// Single-stage helpers used by the CLI subcommands. Each returns the
/// number of oracle naming calls it made through `naming_calls`.
void name_clusters(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                   ClusterAssignment& clusters, const RunConfig& config, const oracle::OraclePanel& panel,
                   bool only_missing, std::size_t& naming_calls, std::uint64_t stream = 0);

ClusterAssignment merge_stage(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                              const ClusterAssignment& clusters, const RunConfig& config,
                              const oracle::OraclePanel& panel, const io::Embedder& label_embedder,
                              std::size_t& naming_calls, std::uint64_t stream = 0);

/// Sets verdicts on clusters that lack one; returns the number of
/// coherence evaluations.
std::size_t evaluate_missing_verdicts(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                                      ClusterAssignment& clusters, const RunConfig& config,
                                      const oracle::OraclePanel& panel);

metrics::Report evaluate(std::span<const SentenceRecord> corpus, const EmbeddingMatrix* embeddings,
                         const ClusterAssignment& clusters, metrics::Normalization normalization,
                         const loop::CostReport& costs);

/// clusters.jsonl, iterations.csv and report.json under `dir`.
void write_outputs(const std::string& dir, std::span<const SentenceRecord> corpus, const Result& result);

}  // namespace intentloop::pipeline

#endif  // INTENTLOOP_PIPELINE_HPP
