#ifndef INTENTLOOP_POSTPROCESS_HPP
#define INTENTLOOP_POSTPROCESS_HPP

#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "intentloop/core.hpp"
#include "intentloop/geometry.hpp"

namespace intentloop::postprocess {

struct MergeConfig {
    double theta = 0.8;
    double tau = 0.7;
    double kappa = 64.0;
    geometry::ProbabilityMode probability_mode = geometry::ProbabilityMode::Normalized;
};

/// Throws ConfigError when theta is outside (0, pi), tau outside (0, 1) or
/// kappa is not positive.
void validate(const MergeConfig& config);

struct AffinityEdge {
    std::size_t i = 0;  // i < j
    std::size_t j = 0;
    double distance = 0.0;
    double probability = 0.0;
};

struct AffinityGraph {
    std::size_t vertices = 0;
    std::vector<AffinityEdge> edges;  // sorted by (i, j)
};

/// Edge (i, j) iff geodesic distance < theta and the same-intent probability
/// against the mixture of all labels (uniform weights) exceeds tau.
AffinityGraph build_affinity_graph(std::span<const geometry::UnitVector> labels, const MergeConfig& config);

/// Unions clusters per connected component. Components are ordered by their
/// smallest cluster index; merged clusters lose their label and verdict,
/// singletons keep theirs. Throws IndexOutOfRange for edges outside the
/// assignment.
ClusterAssignment merge_clusters(const ClusterAssignment& assignment, const AffinityGraph& graph);

/// Indices of the output clusters of merge_clusters that are unions of two
/// or more inputs.
std::vector<std::size_t> merged_cluster_indices(const AffinityGraph& graph);

struct RoleLexicon {
    std::set<std::string> customer_actions;
    std::set<std::string> agent_actions;

    static RoleLexicon defaults();
    /// JSON {customer_actions: [...], agent_actions: [...]}; actions are
    /// lowercased. Throws ConfigError if the sets overlap.
    static RoleLexicon load(const std::string& path);

    Role classify(const IntentLabel& label) const;
};

struct RoleGroups {
    std::vector<SentenceIndex> customer;
    std::vector<SentenceIndex> agent;
    std::vector<SentenceIndex> unknown;
};

/// Splits the sentences of labeled clusters by the label's action token.
/// Throws MissingLabel for an unlabeled cluster.
RoleGroups separate_roles(const ClusterAssignment& clusters, const RoleLexicon& lexicon);

/// Clusters one group of corpus indices (ascending) into an assignment over
/// corpus indices.
using GroupClusterer = std::function<ClusterAssignment(std::span<const SentenceIndex>, Role)>;

/// Runs the clusterer on each non-empty group, tags every resulting cluster
/// with its group's role and concatenates customer, agent, unknown.
ClusterAssignment role_aware_recluster(const RoleGroups& groups, const GroupClusterer& clusterer);

}  // namespace intentloop::postprocess

#endif  // INTENTLOOP_POSTPROCESS_HPP
