#ifndef INTENTLOOP_LOOP_HPP
#define INTENTLOOP_LOOP_HPP

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "intentloop/clustering.hpp"
#include "intentloop/core.hpp"
#include "intentloop/oracle.hpp"
#include "intentloop/sampling.hpp"

namespace intentloop::loop {

enum class ResidualPolicy { EmitFlagged, Drop };

struct LoopConfig {
    std::vector<int> candidate_ns;
    double epsilon = 0.02;
    int t_max = 10;
    clustering::ClusteringSpec clustering;
    sampling::SamplingSpec sampling;
    bool pruning_enabled = false;
    int pruning_top_k = 5;
    ResidualPolicy residual_policy = ResidualPolicy::EmitFlagged;
    int max_in_flight = 8;
    std::uint64_t seed = 0;
};

/// Throws ConfigError unless candidate_ns is non-empty, positive, distinct
/// and ascending, epsilon is in (0, 1], t_max >= 1 and pruning_top_k >= 1.
void validate(const LoopConfig& config);

struct CandidateResult {
    int n = 0;
    ClusterAssignment assignment;  // members are corpus indices
    std::vector<Verdict> verdicts;
    std::size_t oracle_calls = 0;
    std::size_t failed_calls = 0;
};

/// Clusters the working set into n clusters, samples each cluster and asks
/// the panel for a verdict. With repetitions_t > 1 the per-repetition
/// verdicts are majority-voted (ties Bad). A cluster whose every evaluation
/// failed is judged Bad. Throws TooFewPoints if n exceeds the working set.
CandidateResult evaluate_candidate(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                                   std::span<const SentenceIndex> working, int n, const LoopConfig& config,
                                   const oracle::OraclePanel& panel, int iteration = 0);

/// argmax over n of good / (bad + 1); ties go to the smaller n. Throws
/// NoCandidates for an empty map.
int select_best_n(const std::map<int, std::vector<Verdict>>& candidates);

struct LoopResult {
    ClusterAssignment clusters;
    std::vector<SentenceIndex> residuals;  // non-empty only under Drop
    std::vector<IterationLog> logs;
};

/// Iterative refinement over the sentences in `scope` (ascending corpus
/// indices). Good clusters of the best candidate are retained; the rest is
/// re-clustered until the residual fraction is at most epsilon or t_max
/// iterations ran. Throws EmptyCorpus for an empty scope and
/// OracleUnavailable when every evaluation of an iteration failed.
LoopResult run_pipeline(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                        std::span<const SentenceIndex> scope, const LoopConfig& config,
                        const oracle::OraclePanel& panel);

/// Whole-corpus convenience overload.
LoopResult run_pipeline(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                        const LoopConfig& config, const oracle::OraclePanel& panel);

struct CostReport {
    std::size_t coherence_calls = 0;
    std::size_t naming_calls = 0;
    std::size_t total_calls = 0;
};

CostReport account_costs(std::span<const IterationLog> logs, std::size_t naming_calls = 0);

/// epoch,n_cluster,good_clusters,bad_clusters,good_sentences,bad_sentences,
/// raw_ratio,smoothed_ratio,chosen
void write_iterations_csv(std::ostream& out, std::span<const IterationLog> logs);

}  // namespace intentloop::loop

#endif  // INTENTLOOP_LOOP_HPP
