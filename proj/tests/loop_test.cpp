#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <sstream>

#include "intentloop/loop.hpp"
#include "test_support.hpp"

using namespace intentloop;
using namespace intentloop::loop;
using testsupport::ConstantOracle;
using testsupport::DeadOracle;
using testsupport::RandomOracle;

namespace {

constexpr Verdict G = Verdict::Good;
constexpr Verdict B = Verdict::Bad;

LoopConfig small_config(std::vector<int> ns, int t_max = 5) {
    LoopConfig c;
    c.candidate_ns = std::move(ns);
    c.t_max = t_max;
    c.clustering.algorithm = clustering::Algorithm::KMeans;
    c.sampling.sample_size = 5;
    c.max_in_flight = 2;
    return c;
}

std::vector<SentenceIndex> covered(const LoopResult& r) {
    std::vector<SentenceIndex> all(r.residuals);
    for (const auto& c : r.clusters.clusters) all.insert(all.end(), c.members.begin(), c.members.end());
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<SentenceIndex> iota_n(std::size_t n) {
    std::vector<SentenceIndex> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST(SelectBestN, WorkedExamples) {
    EXPECT_EQ(select_best_n({{3, {G, G, B}}, {5, {G, G, G, B, G}}}), 5);
    EXPECT_EQ(select_best_n({{4, {G, G, G, G}}}), 4);
    EXPECT_EQ(select_best_n({{2, {G, B}}, {6, {G, G, G, B, B, B}}}), 6);  // 0.5 vs 0.75
    EXPECT_EQ(select_best_n({{2, {G, G, B}}, {6, {G, G, G, G, B, B}}}), 6);  // 1.0 vs 1.33
}

TEST(SelectBestN, TiesGoToSmallerAndEmptyThrows) {
    EXPECT_EQ(select_best_n({{3, {G, B}}, {7, {G, B}}}), 3);
    EXPECT_EQ(select_best_n({{3, {B, B}}, {7, {B}}}), 3);
    try {
        select_best_n({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoCandidates);
    }
}

TEST(SelectBestN, MatchesDirectArgmax) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::map<int, std::vector<Verdict>> m;
        const int count = 1 + static_cast<int>(rng() % 6);
        for (int c = 0; c < count; ++c) {
            const int n = 1 + static_cast<int>(rng() % 40);
            std::vector<Verdict> v(static_cast<std::size_t>(n));
            for (auto& x : v) x = rng() % 2 ? G : B;
            m[n] = v;
        }
        int best = -1;
        std::ptrdiff_t bg = 0, bb = 0;
        for (const auto& [n, v] : m) {
            const auto g = std::count(v.begin(), v.end(), G);
            const auto b = static_cast<std::ptrdiff_t>(v.size()) - g;
            // g/(b+1) > bg/(bb+1) in exact integer arithmetic
            if (best < 0 || g * (bb + 1) > bg * (b + 1)) {
                best = n;
                bg = g;
                bb = b;
            }
        }
        EXPECT_EQ(select_best_n(m), best);
    }
}

TEST(EvaluateCandidate, CallsAndVerdictsAligned) {
    const auto s = testsupport::make_blobs(4, 10, 6, 0.05, 1);
    const auto working = iota_n(40);
    const auto panel = testsupport::panel_of<oracle::ReferenceOracle>(1.0);
    const auto r = evaluate_candidate(s.records, s.embeddings, working, 4, small_config({4}), panel);
    EXPECT_EQ(r.n, 4);
    EXPECT_EQ(r.oracle_calls, 4u);
    EXPECT_EQ(r.verdicts.size(), 4u);
    EXPECT_EQ(r.failed_calls, 0u);
    EXPECT_TRUE(is_partition(r.assignment, 40));
    for (std::size_t j = 0; j < 4; ++j) {
        std::set<int> gold;
        for (SentenceIndex i : r.assignment.clusters[j].members) gold.insert(s.gold[i]);
        if (gold.size() == 1) EXPECT_EQ(r.verdicts[j], G);  // a pure cluster has only pure samples
    }

    try {
        evaluate_candidate(s.records, s.embeddings, working, 41, small_config({4}), panel);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewPoints);
    }
}

TEST(EvaluateCandidate, RepetitionsAreVoted) {
    const auto s = testsupport::make_blobs(2, 20, 6, 0.05, 2);
    auto cfg = small_config({2});
    cfg.sampling.repetitions_t = 3;
    auto good = std::make_shared<ConstantOracle>(G);
    const oracle::OraclePanel panel({good});
    const auto r = evaluate_candidate(s.records, s.embeddings, iota_n(40), 2, cfg, panel);
    EXPECT_EQ(r.oracle_calls, 2u);
    EXPECT_EQ(good->calls.load(), 6u);  // t samples per cluster
    EXPECT_EQ(r.verdicts, (std::vector<Verdict>{G, G}));
}

TEST(EvaluateCandidate, DeadOracleJudgesBad) {
    const auto s = testsupport::make_blobs(2, 10, 6, 0.05, 3);
    const auto panel = testsupport::panel_of<DeadOracle>();
    const auto r = evaluate_candidate(s.records, s.embeddings, iota_n(20), 2, small_config({2}), panel);
    EXPECT_EQ(r.failed_calls, 2u);
    EXPECT_EQ(r.verdicts, (std::vector<Verdict>{B, B}));
}

TEST(RunPipeline, AlwaysBadRunsToTmaxWithFullResiduals) {
    const auto s = testsupport::make_blobs(5, 20, 8, 0.1, 4);
    auto cfg = small_config({10, 30, 50, 70}, 3);
    cfg.residual_policy = ResidualPolicy::Drop;
    const auto panel = testsupport::panel_of<ConstantOracle>(B);
    const auto r = run_pipeline(s.records, s.embeddings, cfg, panel);
    EXPECT_EQ(r.logs.size(), 3u);
    EXPECT_TRUE(r.clusters.clusters.empty());
    EXPECT_EQ(r.residuals, iota_n(100));
    const auto costs = account_costs(r.logs);
    EXPECT_EQ(costs.coherence_calls, 480u);
    EXPECT_EQ(r.logs.back().oracle_calls, 480u);
    for (const auto& log : r.logs) EXPECT_EQ(log.chosen_n, 10);
}

TEST(RunPipeline, AlwaysBadEmitsFlaggedClusters) {
    const auto s = testsupport::make_blobs(3, 10, 8, 0.1, 5);
    const auto panel = testsupport::panel_of<ConstantOracle>(B);
    const auto r = run_pipeline(s.records, s.embeddings, small_config({3, 6}, 2), panel);
    EXPECT_TRUE(r.residuals.empty());
    EXPECT_TRUE(is_partition(r.clusters, 30));
    for (const auto& c : r.clusters.clusters) {
        EXPECT_TRUE(c.low_confidence);
        EXPECT_EQ(c.verdict, B);
    }
}

TEST(RunPipeline, AlwaysGoodStopsAfterOneIteration) {
    const auto s = testsupport::make_blobs(4, 15, 8, 0.1, 6);
    const auto panel = testsupport::panel_of<ConstantOracle>(G);
    const auto r = run_pipeline(s.records, s.embeddings, small_config({4, 8, 12}), panel);
    ASSERT_EQ(r.logs.size(), 1u);
    EXPECT_EQ(r.logs[0].chosen_n, 12);
    EXPECT_EQ(r.clusters.clusters.size(), 12u);
    EXPECT_TRUE(is_partition(r.clusters, 60));
    for (const auto& c : r.clusters.clusters) EXPECT_FALSE(c.low_confidence);
}

TEST(RunPipeline, EpsilonOneMeansNoIteration) {
    const auto s = testsupport::make_blobs(2, 5, 4, 0.1, 7);
    auto cfg = small_config({2});
    cfg.epsilon = 1.0;
    const auto r = run_pipeline(s.records, s.embeddings, cfg, testsupport::panel_of<ConstantOracle>(G));
    EXPECT_TRUE(r.logs.empty());
    ASSERT_EQ(r.clusters.clusters.size(), 1u);
    EXPECT_TRUE(r.clusters.clusters[0].low_confidence);
    EXPECT_EQ(r.clusters.clusters[0].members.size(), 10u);
}

TEST(RunPipeline, InfeasibleCandidatesStopTheLoop) {
    const auto s = testsupport::make_blobs(2, 5, 4, 0.1, 8);
    const auto r = run_pipeline(s.records, s.embeddings, small_config({50, 60}),
                                testsupport::panel_of<ConstantOracle>(G));
    EXPECT_TRUE(r.logs.empty());
    EXPECT_TRUE(is_partition(r.clusters, 10));
}

TEST(RunPipeline, DeadOracleRaises) {
    const auto s = testsupport::make_blobs(2, 5, 4, 0.1, 9);
    try {
        run_pipeline(s.records, s.embeddings, small_config({2}), testsupport::panel_of<DeadOracle>());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OracleUnavailable);
    }
}

TEST(RunPipeline, InputErrors) {
    const auto s = testsupport::make_blobs(2, 5, 4, 0.1, 10);
    const auto panel = testsupport::panel_of<ConstantOracle>(G);
    auto code = [&](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InvalidArgument;
    };
    std::vector<SentenceIndex> none;
    EXPECT_EQ(code([&] { run_pipeline(s.records, s.embeddings, none, small_config({2}), panel); }),
              ErrorCode::EmptyCorpus);
    std::vector<SentenceIndex> bad{3, 99};
    EXPECT_EQ(code([&] { run_pipeline(s.records, s.embeddings, bad, small_config({2}), panel); }),
              ErrorCode::IndexOutOfRange);
    EXPECT_EQ(code([&] { run_pipeline(s.records, s.embeddings, small_config({3, 2}), panel); }),
              ErrorCode::ConfigError);
    EXPECT_EQ(code([&] {
                  std::span<const SentenceRecord> fewer(s.records.data(), 4);
                  run_pipeline(fewer, s.embeddings, small_config({2}), panel);
              }),
              ErrorCode::ShapeMismatch);
}

TEST(RunPipeline, ScopeRestrictsTheWork) {
    const auto s = testsupport::make_blobs(4, 10, 6, 0.05, 11);
    std::vector<SentenceIndex> scope;
    for (SentenceIndex i = 0; i < 40; i += 2) scope.push_back(i);
    const auto r = run_pipeline(s.records, s.embeddings, scope, small_config({2, 4}),
                                testsupport::panel_of<oracle::ReferenceOracle>(1.0));
    EXPECT_EQ(covered(r), scope);
}

TEST(RunPipeline, PruningUsesPredictedCandidates) {
    const auto s = testsupport::make_blobs(6, 20, 8, 0.3, 12);
    auto cfg = small_config({4, 8, 16, 32}, 3);
    cfg.pruning_enabled = true;
    cfg.pruning_top_k = 2;
    cfg.residual_policy = ResidualPolicy::Drop;
    const auto r = run_pipeline(s.records, s.embeddings, cfg, testsupport::panel_of<ConstantOracle>(B));
    ASSERT_EQ(r.logs.size(), 3u);
    EXPECT_EQ(r.logs[0].rows.size(), 4u);
    // chosen 4 with no history: heuristic centre 2 and 1
    ASSERT_EQ(r.logs[1].rows.size(), 2u);
    EXPECT_EQ(r.logs[1].rows[0].n_cluster, 1);
    EXPECT_EQ(r.logs[1].rows[1].n_cluster, 2);
}

TEST(RunPipeline, PartitionFuzz) {
    std::mt19937_64 rng(2024);
    for (int run = 0; run < 200; ++run) {
        const int k = 2 + static_cast<int>(rng() % 4);
        const int per = 3 + static_cast<int>(rng() % 8);
        const auto s = testsupport::make_blobs(k, per, 5, 0.3, rng());
        auto cfg = small_config({1 + static_cast<int>(rng() % 3), 4, 7}, 1 + static_cast<int>(rng() % 4));
        cfg.residual_policy = rng() % 2 ? ResidualPolicy::Drop : ResidualPolicy::EmitFlagged;
        cfg.seed = rng();
        const auto panel = testsupport::panel_of<RandomOracle>(rng(), 0.5);
        const auto r = run_pipeline(s.records, s.embeddings, cfg, panel);
        EXPECT_EQ(covered(r), iota_n(s.records.size()));
        EXPECT_TRUE(is_disjoint(r.clusters, s.records.size()));
    }
}

TEST(RunPipeline, Deterministic) {
    const auto s = testsupport::make_blobs(5, 12, 6, 0.2, 13);
    auto cfg = small_config({3, 5, 8});
    cfg.seed = 77;
    const auto panel = testsupport::panel_of<RandomOracle>(3, 0.6);
    const auto a = run_pipeline(s.records, s.embeddings, cfg, panel);
    const auto b = run_pipeline(s.records, s.embeddings, cfg, panel);
    ASSERT_EQ(a.clusters.clusters.size(), b.clusters.clusters.size());
    for (std::size_t i = 0; i < a.clusters.clusters.size(); ++i)
        EXPECT_EQ(a.clusters.clusters[i].members, b.clusters.clusters[i].members);
    std::ostringstream ca, cb;
    write_iterations_csv(ca, a.logs);
    write_iterations_csv(cb, b.logs);
    EXPECT_EQ(ca.str(), cb.str());
}

TEST(Costs, AccountingFromLogs) {
    std::vector<IterationLog> logs(3);
    for (auto& l : logs)
        for (int n : {10, 30, 50, 70}) l.rows.push_back({n, 0, n, 0, 100, 0.0, 0.0});
    const auto one = account_costs(std::span<const IterationLog>(logs.data(), 1));
    EXPECT_EQ(one.coherence_calls, 160u);
    const auto c = account_costs(logs, 12);
    EXPECT_EQ(c.coherence_calls, 480u);
    EXPECT_EQ(c.naming_calls, 12u);
    EXPECT_EQ(c.total_calls, 492u);
    EXPECT_EQ(account_costs({}).total_calls, 0u);
}

TEST(Costs, IterationsCsvFormat) {
    IterationLog log;
    log.epoch = 2;
    log.chosen_n = 4;
    const std::vector<Verdict> v{G, G, G, B};
    const std::vector<std::size_t> sizes{52184, 0, 0, 2901};
    log.rows.push_back(make_iteration_row(4, v, sizes));
    const std::vector<Verdict> all_good{G};
    const std::vector<std::size_t> one{5};
    log.rows.push_back(make_iteration_row(1, all_good, one));
    std::ostringstream out;
    write_iterations_csv(out, std::span<const IterationLog>(&log, 1));
    EXPECT_EQ(out.str(),
              "epoch,n_cluster,good_clusters,bad_clusters,good_sentences,bad_sentences,raw_ratio,smoothed_ratio,"
              "chosen\n"
              "2,4,3,1,52184,2901,17.988280,1.500000,true\n"
              "2,1,1,0,5,0,inf,1.000000,false\n");
}
