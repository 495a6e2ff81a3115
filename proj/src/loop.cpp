#include "intentloop/loop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "intentloop/parallel.hpp"
#include "intentloop/seed.hpp"

namespace intentloop::loop {

void validate(const LoopConfig& config) {
    const auto& ns = config.candidate_ns;
    if (ns.empty()) throw Error(ErrorCode::ConfigError, "candidate_ns must not be empty");
    for (std::size_t i = 0; i < ns.size(); ++i) {
        if (ns[i] < 1) throw Error(ErrorCode::ConfigError, "candidate_ns must be positive");
        if (i > 0 && ns[i] <= ns[i - 1])
            throw Error(ErrorCode::ConfigError, "candidate_ns must be distinct and ascending");
    }
    if (!(config.epsilon > 0.0 && config.epsilon <= 1.0))
        throw Error(ErrorCode::ConfigError, "epsilon must be in (0, 1]");
    if (config.t_max < 1) throw Error(ErrorCode::ConfigError, "t_max must be >= 1");
    if (config.pruning_top_k < 1) throw Error(ErrorCode::ConfigError, "pruning_top_k must be >= 1");
    if (config.sampling.sample_size < 1 || config.sampling.repetitions_t < 1 || config.sampling.hull_dim_d < 2)
        throw Error(ErrorCode::ConfigError, "invalid sampling spec");
}

CandidateResult evaluate_candidate(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                                   std::span<const SentenceIndex> working, int n, const LoopConfig& config,
                                   const oracle::OraclePanel& panel, int iteration) {
    if (n < 1 || static_cast<std::size_t>(n) > working.size())
        throw Error(ErrorCode::TooFewPoints, fmt::format("cannot form {} clusters from {} sentences", n, working.size()));

    clustering::ClusteringSpec spec = config.clustering;
    spec.k = n;
    spec.seed = derive_seed(config.seed, fmt::format("cluster:{}", iteration), static_cast<std::uint64_t>(n));
    ClusterAssignment local = clustering::cluster(embeddings.select(working), spec);

    CandidateResult result;
    result.n = n;
    result.assignment.source_iteration = iteration;
    result.assignment.clusters.reserve(local.clusters.size());
    for (auto& c : local.clusters) {
        Cluster mapped;
        mapped.members.reserve(c.members.size());
        for (SentenceIndex i : c.members) mapped.members.push_back(working[i]);
        result.assignment.clusters.push_back(std::move(mapped));
    }

    const std::size_t k = result.assignment.clusters.size();
    std::vector<Verdict> verdicts(k, Verdict::Bad);
    std::vector<char> failed(k, 0);
    parallel_for(k, static_cast<std::size_t>(std::max(config.max_in_flight, 1)), [&](std::size_t j) {
        sampling::SamplingSpec sspec = config.sampling;
        sspec.seed = derive_seed(config.seed, fmt::format("sample:{}:{}", iteration, n), j);
        const auto samples = sampling::repeated_samples(embeddings, result.assignment.clusters[j], sspec);
        std::vector<oracle::CoherenceVerdict> answers;
        for (const auto& ids : samples) {
            std::vector<SentenceRecord> records;
            records.reserve(ids.size());
            for (SentenceIndex id : ids) records.push_back(corpus[id]);
            if (auto v = panel.evaluate(records)) answers.push_back(std::move(*v));
        }
        if (answers.empty()) {
            failed[j] = 1;
            spdlog::warn("cluster {} of candidate n={} has no verdict; judged Bad", j, n);
            return;
        }
        verdicts[j] = answers.size() == 1 ? answers.front().value : oracle::crowd_vote(answers).value;
    });

    result.verdicts = std::move(verdicts);
    result.oracle_calls = k;
    result.failed_calls = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
    return result;
}

int select_best_n(const std::map<int, std::vector<Verdict>>& candidates) {
    if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no candidate was evaluated");
    int best_n = 0;
    double best = -1.0;
    for (const auto& [n, g] : candidates) {  // ascending n: strict > keeps the smaller on ties
        const auto good = std::count(g.begin(), g.end(), Verdict::Good);
        const auto bad = static_cast<std::ptrdiff_t>(g.size()) - good;
        const double ratio = static_cast<double>(good) / (static_cast<double>(bad) + 1.0);
        if (ratio > best) {
            best = ratio;
            best_n = n;
        }
    }
    return best_n;
}

namespace {

std::vector<int> candidates_for(int iteration, std::size_t working_size, const LoopConfig& config,
                                std::span<const IterationLog> logs, const oracle::OraclePanel& panel) {
    std::vector<int> pool = config.candidate_ns;
    if (config.pruning_enabled && iteration >= 1 && !logs.empty()) {
        std::vector<int> predicted = panel.predict(logs, config.pruning_top_k);
        std::erase_if(predicted, [&](int n) { return n < 1 || static_cast<std::size_t>(n) > working_size; });
        if (!predicted.empty()) {
            std::sort(predicted.begin(), predicted.end());
            predicted.erase(std::unique(predicted.begin(), predicted.end()), predicted.end());
            return predicted;
        }
        spdlog::warn("search-space prediction gave no feasible candidate; using the full grid");
    }
    std::erase_if(pool, [&](int n) { return static_cast<std::size_t>(n) > working_size; });
    return pool;
}

void check_progress(const ClusterAssignment& retained, std::span<const SentenceIndex> working,
                    std::span<const SentenceIndex> scope) {
    std::vector<SentenceIndex> all(working.begin(), working.end());
    for (const auto& c : retained.clusters) all.insert(all.end(), c.members.begin(), c.members.end());
    std::sort(all.begin(), all.end());
    if (!std::equal(all.begin(), all.end(), scope.begin(), scope.end()))
        throw std::logic_error("retained clusters and residuals no longer partition the input");
}

}  // namespace

LoopResult run_pipeline(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                        std::span<const SentenceIndex> scope, const LoopConfig& config,
                        const oracle::OraclePanel& panel) {
    validate(config);
    if (scope.empty()) throw Error(ErrorCode::EmptyCorpus, "nothing to cluster");
    if (corpus.size() != embeddings.rows())
        throw Error(ErrorCode::ShapeMismatch, "corpus and embeddings are not aligned");
    if (!std::is_sorted(scope.begin(), scope.end()) || scope.back() >= corpus.size())
        throw Error(ErrorCode::IndexOutOfRange, "scope must be ascending corpus indices");

    LoopResult result;
    std::vector<SentenceIndex> working(scope.begin(), scope.end());
    std::vector<Cluster> last_bad;
    bool ran = false;
    std::size_t calls = 0;
    const double total = static_cast<double>(scope.size());

    for (int t = 0; t < config.t_max && static_cast<double>(working.size()) / total > config.epsilon; ++t) {
        const auto ns = candidates_for(t, working.size(), config, result.logs, panel);
        std::map<int, CandidateResult> evaluated;
        std::size_t iteration_calls = 0;
        std::size_t iteration_failures = 0;
        for (int n : ns) {
            try {
                auto cand = evaluate_candidate(corpus, embeddings, working, n, config, panel, t);
                iteration_calls += cand.oracle_calls;
                iteration_failures += cand.failed_calls;
                evaluated.emplace(n, std::move(cand));
            } catch (const Error& e) {
                if (e.code() == ErrorCode::OracleUnavailable) throw;
                spdlog::warn("candidate n={} skipped: {}", n, e.what());
            }
        }
        if (evaluated.empty()) {
            spdlog::warn("iteration {}: no feasible candidate for {} sentences", t, working.size());
            break;
        }
        if (iteration_calls > 0 && iteration_failures == iteration_calls)
            throw Error(ErrorCode::OracleUnavailable, fmt::format("every oracle evaluation failed in iteration {}", t));
        calls += iteration_calls;

        IterationLog log;
        log.epoch = t;
        std::map<int, std::vector<Verdict>> verdicts;
        for (const auto& [n, cand] : evaluated) {
            std::vector<std::size_t> sizes;
            for (const auto& c : cand.assignment.clusters) sizes.push_back(c.members.size());
            log.rows.push_back(make_iteration_row(n, cand.verdicts, sizes));
            verdicts.emplace(n, cand.verdicts);
        }
        log.chosen_n = select_best_n(verdicts);
        log.oracle_calls = calls;

        auto& best = evaluated.at(log.chosen_n);
        std::vector<SentenceIndex> retained;
        last_bad.clear();
        for (std::size_t j = 0; j < best.assignment.clusters.size(); ++j) {
            Cluster c = std::move(best.assignment.clusters[j]);
            c.verdict = best.verdicts[j];
            if (c.verdict == Verdict::Good) {
                retained.insert(retained.end(), c.members.begin(), c.members.end());
                result.clusters.clusters.push_back(std::move(c));
            } else {
                last_bad.push_back(std::move(c));
            }
        }
        std::sort(retained.begin(), retained.end());
        std::vector<SentenceIndex> next;
        std::set_difference(working.begin(), working.end(), retained.begin(), retained.end(), std::back_inserter(next));
        working = std::move(next);
        ran = true;
        spdlog::info("iteration {}: n*={} retained {} sentences, {} remain", t, log.chosen_n, retained.size(),
                     working.size());
        result.logs.push_back(std::move(log));
        result.clusters.source_iteration = t;
        check_progress(result.clusters, working, scope);
    }

    if (!working.empty()) {
        if (config.residual_policy == ResidualPolicy::Drop) {
            result.residuals = working;
        } else if (ran && !last_bad.empty()) {
            for (auto& c : last_bad) {
                c.verdict = Verdict::Bad;
                c.low_confidence = true;
                result.clusters.clusters.push_back(std::move(c));
            }
        } else {
            Cluster c;
            c.members = working;
            c.verdict = Verdict::Bad;
            c.low_confidence = true;
            result.clusters.clusters.push_back(std::move(c));
        }
    }
    return result;
}

LoopResult run_pipeline(std::span<const SentenceRecord> corpus, const EmbeddingMatrix& embeddings,
                        const LoopConfig& config, const oracle::OraclePanel& panel) {
    std::vector<SentenceIndex> scope(corpus.size());
    for (std::size_t i = 0; i < scope.size(); ++i) scope[i] = i;
    return run_pipeline(corpus, embeddings, scope, config, panel);
}

CostReport account_costs(std::span<const IterationLog> logs, std::size_t naming_calls) {
    CostReport report;
    for (const auto& log : logs)
        for (const auto& row : log.rows) report.coherence_calls += static_cast<std::size_t>(row.n_cluster);
    report.naming_calls = naming_calls;
    report.total_calls = report.coherence_calls + report.naming_calls;
    return report;
}

namespace {

std::string format_ratio(double v) {
    if (std::isinf(v)) return "inf";
    return fmt::format("{:.6f}", v);
}

}  // namespace

void write_iterations_csv(std::ostream& out, std::span<const IterationLog> logs) {
    out << "epoch,n_cluster,good_clusters,bad_clusters,good_sentences,bad_sentences,raw_ratio,smoothed_ratio,chosen\n";
    for (const auto& log : logs) {
        for (const auto& row : log.rows) {
            out << fmt::format("{},{},{},{},{},{},{},{},{}\n", log.epoch, row.n_cluster, row.good_clusters,
                               row.bad_clusters, row.good_sentences, row.bad_sentences, format_ratio(row.raw_ratio),
                               format_ratio(row.smoothed_ratio), row.n_cluster == log.chosen_n ? "true" : "false");
        }
    }
}

}  // namespace intentloop::loop
