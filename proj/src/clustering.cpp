#include "intentloop/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

namespace intentloop::clustering {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void validate(const EmbeddingMatrix& points, int k) {
    if (points.empty()) throw Error(ErrorCode::EmptyInput, "cannot cluster an empty matrix");
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (static_cast<std::size_t>(k) > points.rows())
        throw Error(ErrorCode::TooFewPoints, "k = " + std::to_string(k) + " exceeds " +
                                                 std::to_string(points.rows()) + " points");
}

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (b < a) std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

// Condensed upper-triangular distance storage.
class CondensedMatrix {
public:
    explicit CondensedMatrix(std::size_t n) : n_(n), d_(n * (n - 1) / 2) {}

    double& at(std::size_t i, std::size_t j) {
        if (i > j) std::swap(i, j);
        return d_[n_ * i - i * (i + 1) / 2 + (j - i - 1)];
    }

private:
    std::size_t n_;
    std::vector<double> d_;
};

}  // namespace

// ---------------------------------------------------------------------------
// k-means

KMeansResult kmeans(const EmbeddingMatrix& points, int k, std::uint64_t seed, int max_iter, double tol) {
    validate(points, k);
    const std::size_t n = points.rows();
    const std::size_t dim = points.dim();
    const auto kk = static_cast<std::size_t>(k);

    std::mt19937_64 rng(seed);
    KMeansResult result;
    result.centroids.assign(kk * dim, 0.0);
    auto centroid_row = [&](std::size_t c) {
        return std::span<double>(result.centroids.data() + c * dim, dim);
    };

    // k-means++ seeding.
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::copy_n(points.row(first).begin(), dim, centroid_row(0).begin());
    for (std::size_t c = 1; c < kk; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centroid_row(c - 1)));
            total += nearest[i];
        }
        std::size_t chosen = n - 1;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                r -= nearest[i];
                if (r < 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // All points coincide with chosen centers; take the first unused row.
            chosen = c;
        }
        std::copy_n(points.row(chosen).begin(), dim, centroid_row(c).begin());
    }

    result.labels.assign(n, 0);
    std::vector<double> dist(n, 0.0);
    std::vector<std::size_t> counts(kk, 0);
    std::vector<double> next(kk * dim, 0.0);

    for (int iter = 0; iter < std::max(max_iter, 1); ++iter) {
        // Assignment.
        double sse = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (std::size_t c = 0; c < kk; ++c) {
                const double d = squared_distance(points.row(i), centroid_row(c));
                if (d < best) {
                    best = d;
                    best_c = static_cast<int>(c);
                }
            }
            result.labels[i] = best_c;
            dist[i] = best;
            ++counts[static_cast<std::size_t>(best_c)];
        }

        // Empty-cluster repair: steal the point farthest from its centroid.
        for (std::size_t c = 0; c < kk; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(result.labels[i])] > 1 && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            if (far == n) break;
            --counts[static_cast<std::size_t>(result.labels[far])];
            result.labels[far] = static_cast<int>(c);
            counts[c] = 1;
            dist[far] = 0.0;
            std::copy_n(points.row(far).begin(), dim, centroid_row(c).begin());
        }
        for (double d : dist) sse += d;
        result.objective_history.push_back(sse);
        result.iterations = iter + 1;

        // Update.
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(result.labels[i]);
            const auto r = points.row(i);
            for (std::size_t j = 0; j < dim; ++j) next[c * dim + j] += r[j];
        }
        double max_shift = 0.0;
        for (std::size_t c = 0; c < kk; ++c) {
            for (std::size_t j = 0; j < dim; ++j) next[c * dim + j] /= static_cast<double>(counts[c]);
            max_shift = std::max(
                max_shift, squared_distance({next.data() + c * dim, dim}, centroid_row(c)));
        }
        result.centroids.swap(next);
        if (std::sqrt(max_shift) <= tol) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Agglomerative

std::vector<Merge> agglomerative_merges(const EmbeddingMatrix& points, Linkage linkage) {
    const std::size_t n = points.rows();
    std::vector<Merge> merges;
    if (n < 2) return merges;
    merges.reserve(n - 1);

    CondensedMatrix dist(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double sq = squared_distance(points.row(i), points.row(j));
            dist.at(i, j) = linkage == Linkage::Ward ? sq : std::sqrt(sq);
        }

    std::vector<std::size_t> size(n, 1);
    std::vector<char> active(n, 1);
    std::vector<std::size_t> chain;
    chain.reserve(n);

    for (std::size_t step = 0; step + 1 < n; ++step) {
        if (chain.empty()) {
            std::size_t first = 0;
            while (!active[first]) ++first;
            chain.push_back(first);
        }
        std::size_t x = 0;
        std::size_t y = 0;
        double current = 0.0;
        while (true) {
            x = chain.back();
            // Prefer the previous chain element on ties so the chain cannot cycle.
            bool have_prev = chain.size() >= 2;
            y = have_prev ? chain[chain.size() - 2] : n;
            current = have_prev ? dist.at(x, y) : std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                if (!active[i] || i == x) continue;
                const double d = dist.at(x, i);
                if (d < current) {
                    current = d;
                    y = i;
                }
            }
            if (have_prev && y == chain[chain.size() - 2]) break;
            chain.push_back(y);
        }
        chain.pop_back();
        chain.pop_back();

        const std::size_t keep = std::min(x, y);
        const std::size_t drop = std::max(x, y);
        const double nx = static_cast<double>(size[x]);
        const double ny = static_cast<double>(size[y]);
        const double dxy = current;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i] || i == x || i == y) continue;
            const double dxi = dist.at(x, i);
            const double dyi = dist.at(y, i);
            double updated = 0.0;
            switch (linkage) {
                case Linkage::Ward: {
                    const double ni = static_cast<double>(size[i]);
                    updated = ((nx + ni) * dxi + (ny + ni) * dyi - ni * dxy) / (nx + ny + ni);
                    break;
                }
                case Linkage::Average: updated = (nx * dxi + ny * dyi) / (nx + ny); break;
                case Linkage::Complete: updated = std::max(dxi, dyi); break;
            }
            dist.at(keep, i) = updated;
        }
        active[drop] = 0;
        size[keep] = size[x] + size[y];
        merges.push_back({keep, drop, current});
    }

    std::stable_sort(merges.begin(), merges.end(),
                     [](const Merge& a, const Merge& b) { return a.height < b.height; });
    return merges;
}

std::vector<int> cut_dendrogram(std::size_t n, const std::vector<Merge>& merges, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw Error(ErrorCode::TooFewPoints, "cannot cut dendrogram into " + std::to_string(k) + " clusters");
    DisjointSets sets(n);
    const std::size_t apply = n - static_cast<std::size_t>(k);
    for (std::size_t m = 0; m < apply && m < merges.size(); ++m) sets.unite(merges[m].a, merges[m].b);
    std::vector<int> labels(n, -1);
    std::map<std::size_t, int> ids;
    for (std::size_t i = 0; i < n; ++i) {
        const auto root = sets.find(i);
        auto [it, inserted] = ids.try_emplace(root, static_cast<int>(ids.size()));
        labels[i] = it->second;
    }
    return labels;
}

// ---------------------------------------------------------------------------

ClusterAssignment assignment_from_labels(const std::vector<int>& labels) {
    std::map<int, std::size_t> slot;
    ClusterAssignment out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = slot.try_emplace(labels[i], out.clusters.size());
        if (inserted) out.clusters.emplace_back();
        out.clusters[it->second].members.push_back(i);
    }
    canonicalize(out);
    return out;
}

ClusterAssignment cluster(const EmbeddingMatrix& points, const ClusteringSpec& spec) {
    validate(points, spec.k);
    std::vector<int> labels;
    if (spec.algorithm == Algorithm::KMeans) {
        labels = kmeans(points, spec.k, spec.seed, spec.max_iter, spec.tol).labels;
    } else {
        labels = cut_dendrogram(points.rows(), agglomerative_merges(points, spec.linkage), spec.k);
    }
    return assignment_from_labels(labels);
}

std::vector<double> centroid(const EmbeddingMatrix& points, const Cluster& cluster) {
    if (cluster.members.empty()) throw Error(ErrorCode::EmptyCluster, "centroid of empty cluster");
    std::vector<double> out(points.dim(), 0.0);
    for (SentenceIndex m : cluster.members) {
        if (m >= points.rows()) throw Error(ErrorCode::UnknownId, "member " + std::to_string(m) + " not in matrix");
        const auto r = points.row(m);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
    }
    for (double& v : out) v /= static_cast<double>(cluster.members.size());
    return out;
}

}  // namespace intentloop::clustering
