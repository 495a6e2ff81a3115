// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "intentloop/io.hpp"
#include "intentloop/loop.hpp"
#include "intentloop/metrics.hpp"
#include "intentloop/pipeline.hpp"
#include "intentloop/postprocess.hpp"
#include "intentloop/sampling.hpp"
#include "test_support.hpp"

using namespace intentloop;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::vector<SentenceIndex> iota_n(std::size_t n) {
    std::vector<SentenceIndex> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// AC1 ----------------------------------------------------------------------
Outcome cost_accounting() {
    Outcome o;
    std::vector<IterationLog> logs(3);
    for (auto& l : logs)
        for (int n : {10, 30, 50, 70}) l.rows.push_back({n, 0, n, 0, 0, 0.0, 0.0});
    o.require(loop::account_costs(std::span<const IterationLog>(logs.data(), 1)).coherence_calls == 160,
              "one iteration != 160");
    o.require(loop::account_costs(logs).coherence_calls == 480, "three iterations != 480");

    const auto s = testsupport::make_blobs(77, 40, 16, 0.2, 101);
    loop::LoopConfig cfg;
    cfg.candidate_ns = {10, 30, 50, 70};
    cfg.t_max = 3;
    cfg.clustering.algorithm = clustering::Algorithm::KMeans;
    cfg.seed = 1;
    const auto panel = testsupport::panel_of<oracle::ReferenceOracle>(1.0);
    const auto t0 = Clock::now();
    const auto r = loop::run_pipeline(s.records, s.embeddings, cfg, panel);
    const double secs = seconds_since(t0);
    const auto costs = loop::account_costs(r.logs);
    for (const auto& l : r.logs) {
        std::size_t sum = 0;
        for (const auto& row : l.rows) sum += static_cast<std::size_t>(row.n_cluster);
        o.require(sum == 160, fmt::format("epoch {} made {} calls", l.epoch, sum));
    }
    o.require(r.logs.size() == 3, fmt::format("{} iterations", r.logs.size()));
    o.require(costs.coherence_calls == 480, fmt::format("{} calls", costs.coherence_calls));
    o.require(!r.logs.empty() && r.logs.back().oracle_calls == costs.coherence_calls, "log counter disagrees");
    o.require(secs < 1.0, fmt::format("{:.3f} s", secs));
    std::size_t retained = 0;
    for (const auto& c : r.clusters.clusters) retained += c.low_confidence ? 0 : c.members.size();
    if (o.pass)
        o.detail = fmt::format("160/iteration, 480 total, {} of 3080 sentences retained in {:.3f} s", retained, secs);
    return o;
}

// AC2 ----------------------------------------------------------------------
Outcome log_ratio() {
    Outcome o;
    const std::vector<Verdict> v{Verdict::Good, Verdict::Bad};
    const std::vector<std::size_t> sizes{52184, 2901};
    const auto row = make_iteration_row(2, v, sizes);
    const double direct = metrics::goodness_ratio(std::size_t{52184}, std::size_t{2901});
    o.require(std::abs(row.raw_ratio - 17.988) <= 0.001, fmt::format("row ratio {:.6f}", row.raw_ratio));
    o.require(std::abs(direct - 17.988) <= 0.001, fmt::format("ratio {:.6f}", direct));
    if (o.pass) o.detail = fmt::format("52184/2901 = {:.6f}", row.raw_ratio);
    return o;
}

// AC3 ----------------------------------------------------------------------
double brute_nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    std::map<int, std::size_t> ca, cb;
    std::map<std::pair<int, int>, std::size_t> cab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++cab[{a[i], b[i]}];
    }
    std::map<int, double> pa, pb;
    std::map<std::pair<int, int>, double> pab;
    for (auto& [k, c] : ca) pa[k] = static_cast<double>(c) / n;
    for (auto& [k, c] : cb) pb[k] = static_cast<double>(c) / n;
    for (auto& [k, c] : cab) pab[k] = static_cast<double>(c) / n;
    double ha = 0, hb = 0, mi = 0;
    for (auto& [k, p] : pa) ha -= p * std::log(p);
    for (auto& [k, p] : pb) hb -= p * std::log(p);
    for (auto& [k, p] : pab) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
    if (ha == 0 && hb == 0) return 1.0;
    return std::clamp(mi / ((ha + hb) / 2), 0.0, 1.0);
}

Outcome nmi_equivalence() {
    Outcome o;
    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 100;
        const int ka = 1 + static_cast<int>(rng() % 15), kb = 1 + static_cast<int>(rng() % 15);
        std::vector<int> a(n), b(n);
        for (auto& x : a) x = static_cast<int>(rng() % ka);
        for (auto& x : b) x = static_cast<int>(rng() % kb);
        worst = std::max(worst, std::abs(metrics::nmi(a, b) - brute_nmi(a, b)));
    }
    o.require(worst <= 1e-9, fmt::format("max deviation {:.3g}", worst));
    const std::vector<int> p{0, 0, 1, 1, 2, 3}, q{4, 4, 9, 9, 1, 0}, single(6, 0);
    o.require(metrics::nmi(p, q) == 1.0, "identical partitions");
    o.require(metrics::nmi(single, p) == 0.0, "single cluster");
    if (o.pass) o.detail = fmt::format("200 partitions, max deviation {:.3g}", worst);
    return o;
}

// AC4 ----------------------------------------------------------------------
Outcome vmf_suite() {
    Outcome o;
    double worst = 0.0;
    for (double k : {0.1, 1.0, 10.0, 100.0}) {
        // log C_3 = log k - log(4 pi sinh k), sinh expanded stably
        const double log_sinh = k + std::log1p(-std::exp(-2 * k)) - std::log(2.0);
        const double closed = std::log(k) - std::log(4 * std::numbers::pi) - log_sinh;
        worst = std::max(worst, std::abs(geometry::log_vmf_normalizer(3, k) - closed) / std::abs(closed));
    }
    o.require(worst <= 1e-9, fmt::format("d=3 rel error {:.3g}", worst));

    std::mt19937_64 rng(77);
    std::normal_distribution<double> nd;
    const auto mu = geometry::normalize(std::vector<double>{0.3, -0.5, 0.8});
    const double kappa = 5.0;
    const double log_c = geometry::log_vmf_normalizer(3, kappa);
    double sum = 0.0;
    const int samples = 1'000'000;
    for (int i = 0; i < samples; ++i) {
        const double x = nd(rng), y = nd(rng), z = nd(rng);
        const double r = std::sqrt(x * x + y * y + z * z);
        sum += std::exp(log_c + kappa * (x * mu[0] + y * mu[1] + z * mu[2]) / r);
    }
    const double integral = sum / samples * 4 * std::numbers::pi;
    o.require(std::abs(integral - 1.0) <= 0.02, fmt::format("integral {:.4f}", integral));

    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (double k = 0.01; k <= 1e4 * (1 + 1e-12); k *= 1.25) {
        const double v = geometry::log_vmf_normalizer(1024, k);
        monotone = monotone && std::isfinite(v) && v < prev;
        prev = v;
    }
    const double top = geometry::log_vmf_normalizer(1024, 1e4);
    monotone = monotone && std::isfinite(top) && top < prev + 1e-9;
    o.require(monotone, "d=1024 normalizer not finite/monotone");
    if (o.pass) o.detail = fmt::format("d=3 rel error {:.2g}, MC integral {:.4f}, d=1024 monotone", worst, integral);
    return o;
}

// AC5 ----------------------------------------------------------------------
Outcome end_to_end(double overlap) {
    Outcome o;
    const auto t0 = Clock::now();
    double nmi_pipe = 0, nmi_km = 0, good_pipe = 0, good_km = 0;
    const int seeds = 5;
    for (int seed = 0; seed < seeds; ++seed) {
        const auto s = testsupport::make_blobs(40, 50, 32, overlap, 500 + seed, [](int c) {
            return c < 20 ? fmt::format("inquire-topic{}", c) : fmt::format("answer-topic{}", c);
        });
        pipeline::RunConfig cfg;
        oracle::OracleBackendSpec ref;
        ref.purity_threshold = 0.9;
        cfg.oracles = {ref};
        cfg.loop.candidate_ns = {20, 30, 40, 50, 60};
        cfg.loop.t_max = 5;
        cfg.loop.clustering.algorithm = clustering::Algorithm::KMeans;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const auto r = pipeline::run(s.records, s.embeddings, cfg);

        clustering::ClusteringSpec km;
        km.algorithm = clustering::Algorithm::KMeans;
        km.k = 40;
        km.seed = derive_seed(cfg.seed, "baseline");
        auto baseline = clustering::cluster(s.embeddings, km);
        const auto panel = pipeline::make_panel(cfg);
        pipeline::evaluate_missing_verdicts(s.records, s.embeddings, baseline, cfg, panel);
        const auto base_report = pipeline::evaluate(s.records, &s.embeddings, baseline, cfg.nmi_normalization, {});

        nmi_pipe += r.report.nmi / seeds;
        good_pipe += r.report.goodness_final / seeds;
        nmi_km += base_report.nmi / seeds;
        good_km += base_report.goodness_final / seeds;
    }
    const double secs = seconds_since(t0);
    o.require(nmi_pipe >= nmi_km, fmt::format("NMI {:.4f} < k-means {:.4f}", nmi_pipe, nmi_km));
    o.require(good_pipe >= good_km, fmt::format("goodness {:.4f} < k-means {:.4f}", good_pipe, good_km));
    o.require(secs < 30.0, fmt::format("{:.1f} s", secs));
    o.detail += (o.detail.empty() ? "" : "; ") +
                fmt::format("sigma {}: NMI {:.4f} vs {:.4f}, goodness {:.4f} vs {:.4f}, {:.1f} s", overlap, nmi_pipe, nmi_km, good_pipe,
                            good_km, secs);
    return o;
}

// AC6 ----------------------------------------------------------------------
Outcome merge_correctness() {
    Outcome o;
    std::mt19937_64 rng(6);
    const io::HashingEmbedder embedder(256);
    const char* actions[] = {"inquire", "request", "answer", "explain", "confirm", "complain"};
    const char* objects[] = {"insurance", "refund", "balance", "address", "accident", "password", "delivery",
                             "promotion", "card", "loan", "fee", "claim"};
    int duplicates = 0, missed = 0, partition_broken = 0, not_idempotent = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t k = 3 + rng() % 10;
        std::vector<std::string> names;
        for (std::size_t i = 0; i < k; ++i)
            names.push_back(fmt::format("{}-{}", actions[rng() % 6], objects[rng() % 12]));
        const std::size_t a = rng() % k, b = (a + 1 + rng() % (k - 1)) % k;
        names[b] = names[a];
        const auto m = embedder.embed(names);
        std::vector<geometry::UnitVector> labels;
        for (std::size_t i = 0; i < k; ++i) labels.push_back(geometry::normalize(m.row(i)));
        ClusterAssignment clusters;
        for (std::size_t i = 0; i < k; ++i) {
            Cluster c;
            for (std::size_t j = 0; j < 3; ++j) c.members.push_back(3 * i + j);
            c.label = parse_intent_label(names[i]);
            clusters.clusters.push_back(c);
        }
        const auto graph = postprocess::build_affinity_graph(labels, {});
        const auto merged = postprocess::merge_clusters(clusters, graph);
        ++duplicates;
        bool together = false;
        const SentenceIndex ia = 3 * a, ib = 3 * b;
        for (const auto& c : merged.clusters) {
            const bool ha = std::binary_search(c.members.begin(), c.members.end(), ia);
            const bool hb = std::binary_search(c.members.begin(), c.members.end(), ib);
            together = together || (ha && hb);
        }
        missed += together ? 0 : 1;
        partition_broken += is_partition(merged, 3 * k) ? 0 : 1;

        // idempotence: re-embed the surviving labels of the merged clusters
        std::vector<geometry::UnitVector> second;
        std::vector<std::string> survivors;
        for (const auto& c : merged.clusters) survivors.push_back(c.label ? c.label->str() : "");
        for (std::size_t i = 0; i < merged.clusters.size(); ++i) {
            if (!merged.clusters[i].label) {  // unioned: inherits its smallest part's label
                const SentenceIndex first = merged.clusters[i].members.front();
                survivors[i] = names[first / 3];
            }
        }
        const auto m2 = embedder.embed(survivors);
        for (std::size_t i = 0; i < m2.rows(); ++i) second.push_back(geometry::normalize(m2.row(i)));
        const auto g2 = postprocess::build_affinity_graph(second, {});
        if (g2.edges.empty()) {
            const auto again = postprocess::merge_clusters(merged, g2);
            bool same = again.clusters.size() == merged.clusters.size();
            for (std::size_t i = 0; same && i < again.clusters.size(); ++i)
                same = again.clusters[i].members == merged.clusters[i].members;
            not_idempotent += same ? 0 : 1;
        }
    }
    o.require(missed == 0, fmt::format("{} duplicated-label pairs not merged", missed));
    o.require(partition_broken == 0, fmt::format("{} merges broke the partition", partition_broken));
    o.require(not_idempotent == 0, fmt::format("{} merges not idempotent", not_idempotent));

    int antipodal_edges = 0;
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> v(16);
        std::normal_distribution<double> nd;
        for (auto& x : v) x = nd(rng);
        const auto u = geometry::normalize(v);
        for (auto& x : v) x = -x;
        const std::vector<geometry::UnitVector> pair{u, geometry::normalize(v)};
        for (auto mode : {geometry::ProbabilityMode::Normalized, geometry::ProbabilityMode::Posterior,
                          geometry::ProbabilityMode::RawDensity}) {
            postprocess::MergeConfig cfg;
            cfg.probability_mode = mode;
            antipodal_edges += static_cast<int>(postprocess::build_affinity_graph(pair, cfg).edges.size());
        }
    }
    o.require(antipodal_edges == 0, fmt::format("{} antipodal edges", antipodal_edges));
    if (o.pass) o.detail = fmt::format("{} duplicated-label cases merged, 300 antipodal pairs kept apart", duplicates);
    return o;
}

// AC7 ----------------------------------------------------------------------
Outcome crowd_vote() {
    Outcome o;
    std::vector<std::shared_ptr<const oracle::OracleBackend>> crowd;
    for (int i = 0; i < 5; ++i)
        crowd.push_back(std::make_shared<oracle::NoisyReferenceOracle>(1.0, 0.1, derive_seed(42, "crowd", i)));
    const oracle::OraclePanel panel(crowd);
    const oracle::ReferenceOracle truth(1.0);
    std::mt19937_64 rng(7);
    const int clusters = 2000;
    int errors = 0;
    for (int c = 0; c < clusters; ++c) {
        std::vector<SentenceRecord> members;
        const int size = 5 + static_cast<int>(rng() % 16);
        const bool pure = rng() % 2 == 0;
        for (int i = 0; i < size; ++i) {
            const std::string label = pure || rng() % 3 ? "inquire-a" : "answer-b";
            members.push_back({fmt::format("c{}_{}", c, i), "t", label, {}});
        }
        errors += panel.evaluate(members)->value != truth.evaluate_coherence(members).value ? 1 : 0;
    }
    const double p = 0.1;
    double tail = 0.0;
    for (int k = 3; k <= 5; ++k)
        tail += std::tgamma(6.0) / (std::tgamma(k + 1.0) * std::tgamma(6.0 - k)) * std::pow(p, k) *
                std::pow(1 - p, 5 - k);
    const double bound = tail + 3 * std::sqrt(tail * (1 - tail) / clusters);
    const double rate = static_cast<double>(errors) / clusters;
    o.require(rate <= bound, fmt::format("error {:.4f} > bound {:.4f}", rate, bound));
    o.detail = fmt::format("error {:.4f} <= {:.4f} (tail {:.4f})", rate, bound, tail);
    return o;
}

// AC8 ----------------------------------------------------------------------
Outcome loop_safety() {
    Outcome o;
    const auto s = testsupport::make_blobs(6, 20, 8, 0.2, 8);
    loop::LoopConfig cfg;
    cfg.candidate_ns = {3, 6, 12};
    cfg.t_max = 4;
    cfg.clustering.algorithm = clustering::Algorithm::KMeans;
    cfg.residual_policy = loop::ResidualPolicy::Drop;
    const auto bad = loop::run_pipeline(s.records, s.embeddings, cfg, testsupport::panel_of<testsupport::ConstantOracle>(Verdict::Bad));
    o.require(static_cast<int>(bad.logs.size()) == cfg.t_max, "always-Bad did not reach t_max");
    o.require(bad.residuals == iota_n(120) && bad.clusters.clusters.empty(), "always-Bad residuals incomplete");
    const auto good = loop::run_pipeline(s.records, s.embeddings, cfg, testsupport::panel_of<testsupport::ConstantOracle>(Verdict::Good));
    o.require(good.logs.size() == 1 && good.residuals.empty(), "always-Good took more than one iteration");

    std::mt19937_64 rng(888);
    int broken = 0;
    for (int run = 0; run < 1000; ++run) {
        const auto d = testsupport::make_blobs(2 + static_cast<int>(rng() % 4), 3 + static_cast<int>(rng() % 8), 4,
                                               0.3, rng());
        loop::LoopConfig c;
        c.candidate_ns = {1 + static_cast<int>(rng() % 2), 3, 5 + static_cast<int>(rng() % 4)};
        c.t_max = 1 + static_cast<int>(rng() % 5);
        c.clustering.algorithm = rng() % 2 ? clustering::Algorithm::KMeans : clustering::Algorithm::Hierarchical;
        c.sampling.method = rng() % 2 ? sampling::Method::Convex : sampling::Method::Random;
        c.residual_policy = rng() % 2 ? loop::ResidualPolicy::Drop : loop::ResidualPolicy::EmitFlagged;
        c.pruning_enabled = rng() % 2 == 0;
        c.seed = rng();
        c.max_in_flight = 1;
        const auto r = loop::run_pipeline(d.records, d.embeddings, c,
                                          testsupport::panel_of<testsupport::RandomOracle>(rng(), 0.5));
        std::vector<SentenceIndex> all(r.residuals);
        for (const auto& cl : r.clusters.clusters) all.insert(all.end(), cl.members.begin(), cl.members.end());
        std::sort(all.begin(), all.end());
        broken += all == iota_n(d.records.size()) ? 0 : 1;
    }
    o.require(broken == 0, fmt::format("{} fuzz runs lost or duplicated sentences", broken));
    if (o.pass) o.detail = "always-Bad hit t_max, always-Good stopped after 1 iteration, 1000 fuzz runs partitioned";
    return o;
}

// AC9 ----------------------------------------------------------------------
Outcome determinism() {
    Outcome o;
    const auto s = testsupport::make_blobs(8, 20, 16, 0.15, 9, [](int c) {
        return c % 2 ? fmt::format("answer-item{}", c) : fmt::format("inquire-item{}", c);
    });
    pipeline::RunConfig cfg;
    cfg.oracles = {oracle::OracleBackendSpec{}};
    cfg.loop.candidate_ns = {4, 8, 12};
    cfg.seed = 1234;
    const auto base = fs::temp_directory_path() / "intentloop_acceptance_det";
    fs::remove_all(base);
    for (const char* run : {"a", "b"}) {
        const auto r = pipeline::run(s.records, s.embeddings, cfg);
        pipeline::write_outputs((base / run).string(), s.records, r);
    }
    for (const char* f : {"clusters.jsonl", "iterations.csv", "report.json"}) {
        const auto a = io::read_text_file((base / "a" / f).string());
        const auto b = io::read_text_file((base / "b" / f).string());
        o.require(a == b && !a.empty(), fmt::format("{} differs", f));
    }
    if (o.pass) o.detail = "clusters.jsonl, iterations.csv, report.json byte-identical";
    return o;
}

// AC10 ---------------------------------------------------------------------
Outcome convex_sampling() {
    Outcome o;
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int checked = 0, missed = 0;
    for (int t = 0; t < 500; ++t) {
        const std::size_t m = 5 + rng() % 146;
        std::vector<double> xy;
        const int shape = static_cast<int>(rng() % 3);
        for (std::size_t i = 0; i < m; ++i) {
            if (shape == 0) {  // points on a circle, every one a hull vertex
                const double a = 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(m) + u(rng) * 0.01;
                xy.push_back(std::cos(a) + 3.0);
                xy.push_back(std::sin(a) - 1.0);
            } else if (shape == 1) {
                xy.push_back(u(rng));
                xy.push_back(u(rng));
            } else {  // gaussian-ish cloud
                xy.push_back(u(rng) + u(rng) + u(rng));
                xy.push_back(0.3 * (u(rng) + u(rng)));
            }
        }
        const auto hull = testsupport::brute_force_hull_2d(xy);
        if (hull.size() > 20) continue;
        ++checked;
        const EmbeddingMatrix points(m, 2, xy);
        Cluster c;
        c.members = iota_n(m);
        sampling::SamplingSpec spec;
        spec.seed = rng();
        const auto sample = sampling::sample_cluster(points, c, spec);
        for (std::size_t v : hull)
            if (!std::binary_search(sample.begin(), sample.end(), v)) ++missed;
    }
    o.require(missed == 0, fmt::format("{} hull vertices missing", missed));
    o.require(checked > 0, "no set had <= 20 hull vertices");
    if (o.pass) o.detail = fmt::format("{} of 500 sets checked, all hull vertices sampled", checked);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    // per-coordinate noise of the end-to-end corpus; larger means more overlap
    const double overlap = argc > 1 ? std::stod(argv[1]) : 0.18;
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"AC1 cost accounting", cost_accounting},   {"AC2 log ratio", log_ratio},
        {"AC3 NMI equivalence", nmi_equivalence},   {"AC4 vMF numerics", vmf_suite},
        {"AC5 end-to-end improvement", [overlap] { return end_to_end(overlap); }}, {"AC6 merge correctness", merge_correctness},
        {"AC7 crowd vote", crowd_vote},             {"AC8 loop safety", loop_safety},
        {"AC9 determinism", determinism},           {"AC10 convex sampling", convex_sampling},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
