#include "intentloop/postprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "intentloop/parallel.hpp"

namespace intentloop::postprocess {

void validate(const MergeConfig& config) {
    if (!(config.theta > 0.0 && config.theta < std::numbers::pi))
        throw Error(ErrorCode::ConfigError, "theta must be in (0, pi)");
    if (!(config.tau > 0.0 && config.tau < 1.0)) throw Error(ErrorCode::ConfigError, "tau must be in (0, 1)");
    if (!(config.kappa > 0.0) || !std::isfinite(config.kappa))
        throw Error(ErrorCode::ConfigError, "kappa must be positive");
}

AffinityGraph build_affinity_graph(std::span<const geometry::UnitVector> labels, const MergeConfig& config) {
    validate(config);
    AffinityGraph graph;
    graph.vertices = labels.size();
    if (labels.size() < 2) {
        if (labels.empty()) throw Error(ErrorCode::EmptyMixture, "no label embeddings");
        return graph;
    }
    const geometry::VmfMixture mixture(labels, {config.kappa, 0});
    std::vector<std::vector<double>> joint(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) joint[i] = mixture.log_joint(labels[i]);

    std::vector<std::vector<AffinityEdge>> rows(labels.size());
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    parallel_for(labels.size(), workers, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            const double d = geometry::geodesic_distance(labels[i], labels[j]);
            if (!(d < config.theta)) continue;
            const double p = mixture.pair_probability(joint[i], joint[j], config.probability_mode);
            if (p > config.tau) rows[i].push_back({i, j, d, p});
        }
    });
    for (auto& r : rows) graph.edges.insert(graph.edges.end(), r.begin(), r.end());
    return graph;
}

namespace {

std::vector<std::size_t> component_roots(const AffinityGraph& graph) {
    std::vector<std::size_t> parent(graph.vertices);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : graph.edges) {
        if (e.i >= graph.vertices || e.j >= graph.vertices)
            throw Error(ErrorCode::IndexOutOfRange, "edge refers to a missing cluster");
        const std::size_t a = find(e.i), b = find(e.j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);  // root is the smallest index
    }
    std::vector<std::size_t> root(graph.vertices);
    for (std::size_t i = 0; i < graph.vertices; ++i) root[i] = find(i);
    return root;
}

}  // namespace

ClusterAssignment merge_clusters(const ClusterAssignment& assignment, const AffinityGraph& graph) {
    if (graph.vertices != assignment.clusters.size())
        throw Error(ErrorCode::IndexOutOfRange, "graph vertices do not match the assignment");
    const auto root = component_roots(graph);

    ClusterAssignment out;
    out.source_iteration = assignment.source_iteration;
    std::vector<std::size_t> slot(root.size(), 0);
    std::vector<std::size_t> parts;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const Cluster& c = assignment.clusters[i];
        if (root[i] == i) {
            slot[i] = out.clusters.size();
            out.clusters.push_back(c);
            parts.push_back(1);
            continue;
        }
        const std::size_t s = slot[root[i]];
        Cluster& m = out.clusters[s];
        ++parts[s];
        m.members.insert(m.members.end(), c.members.begin(), c.members.end());
        m.label.reset();
        m.verdict.reset();
        m.low_confidence = m.low_confidence || c.low_confidence;
        if (m.role != c.role) m.role.reset();
    }
    for (std::size_t s = 0; s < out.clusters.size(); ++s)
        if (parts[s] > 1) std::sort(out.clusters[s].members.begin(), out.clusters[s].members.end());
    return out;
}

std::vector<std::size_t> merged_cluster_indices(const AffinityGraph& graph) {
    const auto root = component_roots(graph);
    std::vector<std::size_t> size(root.size(), 0);
    for (std::size_t r : root) ++size[r];
    std::vector<std::size_t> out;
    std::size_t slot = 0;
    for (std::size_t i = 0; i < root.size(); ++i) {
        if (root[i] != i) continue;
        if (size[i] > 1) out.push_back(slot);
        ++slot;
    }
    return out;
}

RoleLexicon RoleLexicon::defaults() {
    return {{"inquire", "request", "confirm", "complain", "provide"},
            {"answer", "explain", "inform", "verify", "instruct"}};
}

RoleLexicon RoleLexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open role lexicon " + path);
    RoleLexicon lex;
    try {
        const auto doc = nlohmann::json::parse(in);
        auto read = [&](const char* key, std::set<std::string>& into) {
            for (const auto& v : doc.at(key)) {
                std::string s = v.get<std::string>();
                std::transform(s.begin(), s.end(), s.begin(),
                               [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
                into.insert(std::move(s));
            }
        };
        read("customer_actions", lex.customer_actions);
        read("agent_actions", lex.agent_actions);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, "malformed role lexicon " + path + ": " + e.what());
    }
    for (const auto& a : lex.customer_actions)
        if (lex.agent_actions.count(a)) throw Error(ErrorCode::ConfigError, "action '" + a + "' is in both roles");
    return lex;
}

Role RoleLexicon::classify(const IntentLabel& label) const {
    if (customer_actions.count(label.action)) return Role::Customer;
    if (agent_actions.count(label.action)) return Role::Agent;
    return Role::Unknown;
}

RoleGroups separate_roles(const ClusterAssignment& clusters, const RoleLexicon& lexicon) {
    RoleGroups groups;
    for (const auto& c : clusters.clusters) {
        if (!c.label) throw Error(ErrorCode::MissingLabel, "role separation needs a label on every cluster");
        auto& into = [&]() -> std::vector<SentenceIndex>& {
            switch (lexicon.classify(*c.label)) {
                case Role::Customer: return groups.customer;
                case Role::Agent: return groups.agent;
                default: return groups.unknown;
            }
        }();
        into.insert(into.end(), c.members.begin(), c.members.end());
    }
    std::sort(groups.customer.begin(), groups.customer.end());
    std::sort(groups.agent.begin(), groups.agent.end());
    std::sort(groups.unknown.begin(), groups.unknown.end());
    return groups;
}

ClusterAssignment role_aware_recluster(const RoleGroups& groups, const GroupClusterer& clusterer) {
    ClusterAssignment out;
    const std::pair<const std::vector<SentenceIndex>*, Role> order[] = {
        {&groups.customer, Role::Customer}, {&groups.agent, Role::Agent}, {&groups.unknown, Role::Unknown}};
    for (const auto& [members, role] : order) {
        if (members->empty()) continue;
        ClusterAssignment part = clusterer(*members, role);
        for (auto& c : part.clusters) {
            c.role = role;
            out.clusters.push_back(std::move(c));
        }
        out.source_iteration = std::max(out.source_iteration, part.source_iteration);
    }
    return out;
}

}  // namespace intentloop::postprocess
