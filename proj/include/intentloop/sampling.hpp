#ifndef INTENTLOOP_SAMPLING_HPP
#define INTENTLOOP_SAMPLING_HPP

#include <cstdint>
#include <vector>

#include "intentloop/core.hpp"

namespace intentloop::sampling {

enum class Method { Random, Convex };

struct SamplingSpec {
    Method method = Method::Convex;
    int sample_size = 20;
    int repetitions_t = 1;
    int hull_dim_d = 2;
    std::uint64_t seed = 0;
};

/// Up to spec.sample_size member ids of `cluster`, sorted ascending.
///
/// Random draws without replacement. Convex projects the members onto their
/// top hull_dim_d principal components, keeps every convex-hull vertex of the
/// projection (farthest-point thinning when there are more vertices than
/// slots) and fills the remaining slots with random interior members.
std::vector<SentenceIndex> sample_cluster(const EmbeddingMatrix& embeddings, const Cluster& cluster,
                                          const SamplingSpec& spec);

/// spec.repetitions_t samples drawn with seeds seed, seed+1, ...
std::vector<std::vector<SentenceIndex>> repeated_samples(const EmbeddingMatrix& embeddings,
                                                         const Cluster& cluster, const SamplingSpec& spec);

/// Row-major m x dims projection of the rows onto their leading principal
/// axes (centered). Deterministic.
std::vector<double> pca_project(const EmbeddingMatrix& points, std::span<const SentenceIndex> rows,
                                std::size_t dims);

/// Indices of the strict vertices of the convex hull of m points in `dims`
/// dimensions (row-major), ascending. Collinear or interior points are
/// excluded.
std::vector<std::size_t> hull_vertices(std::span<const double> points, std::size_t dims);

}  // namespace intentloop::sampling

#endif  // INTENTLOOP_SAMPLING_HPP
