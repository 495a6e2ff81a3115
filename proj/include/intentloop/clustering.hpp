#ifndef INTENTLOOP_CLUSTERING_HPP
#define INTENTLOOP_CLUSTERING_HPP

#include <cstdint>
#include <vector>

#include "intentloop/core.hpp"

namespace intentloop::clustering {

enum class Algorithm { KMeans, Hierarchical };
enum class Linkage { Ward, Average, Complete };

struct ClusteringSpec {
    Algorithm algorithm = Algorithm::Hierarchical;
    int k = 1;
    std::uint64_t seed = 0;
    Linkage linkage = Linkage::Ward;
    int max_iter = 300;
    double tol = 1e-6;
};

struct KMeansResult {
    std::vector<int> labels;
    std::vector<double> centroids;  // k x dim, row-major
    std::vector<double> objective_history;  // SSE after each assignment step
    int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
KMeansResult kmeans(const EmbeddingMatrix& points, int k, std::uint64_t seed, int max_iter = 300,
                    double tol = 1e-6);

struct Merge {
    std::size_t a = 0;
    std::size_t b = 0;
    double height = 0.0;
};

/// Agglomerative clustering over Euclidean distances via the
/// nearest-neighbour chain algorithm. Returns n-1 merges sorted by height;
/// ids refer to original points (the smallest point id represents a group).
std::vector<Merge> agglomerative_merges(const EmbeddingMatrix& points, Linkage linkage);

/// Applies the first n-k merges and returns per-point labels.
std::vector<int> cut_dendrogram(std::size_t n, const std::vector<Merge>& merges, int k);

/// Partitions the rows of `points` into exactly spec.k non-empty clusters.
/// Member indices are row indices of `points`; clusters are ordered by their
/// smallest member. Throws EmptyInput or TooFewPoints.
ClusterAssignment cluster(const EmbeddingMatrix& points, const ClusteringSpec& spec);

/// Mean of the member rows. Throws UnknownId for out-of-range members.
std::vector<double> centroid(const EmbeddingMatrix& points, const Cluster& cluster);

/// Groups per-point labels into a canonical assignment.
ClusterAssignment assignment_from_labels(const std::vector<int>& labels);

}  // namespace intentloop::clustering

#endif  // INTENTLOOP_CLUSTERING_HPP
