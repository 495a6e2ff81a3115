#include "intentloop/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "intentloop/seed.hpp"

namespace intentloop::sampling {

namespace {

double cross(const double* o, const double* a, const double* b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain; collinear boundary points are dropped.
std::vector<std::size_t> hull_vertices_2d(std::span<const double> pts) {
    const std::size_t m = pts.size() / 2;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pts[2 * a] != pts[2 * b]) return pts[2 * a] < pts[2 * b];
        if (pts[2 * a + 1] != pts[2 * b + 1]) return pts[2 * a + 1] < pts[2 * b + 1];
        return a < b;
    });
    if (m < 3) return order;

    std::vector<std::size_t> hull(2 * m);
    std::size_t k = 0;
    auto at = [&](std::size_t i) { return pts.data() + 2 * i; };
    for (std::size_t i = 0; i < m; ++i) {
        while (k >= 2 && cross(at(hull[k - 2]), at(hull[k - 1]), at(order[i])) <= 0.0) --k;
        hull[k++] = order[i];
    }
    for (std::size_t i = m - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(at(hull[k - 2]), at(hull[k - 1]), at(order[i])) <= 0.0) --k;
        hull[k++] = order[i];
    }
    hull.resize(k > 1 ? k - 1 : k);
    std::sort(hull.begin(), hull.end());
    hull.erase(std::unique(hull.begin(), hull.end()), hull.end());
    return hull;
}

// Phase-one simplex: is `target` a convex combination of the other points?
// Rows: dims coordinate equations plus sum(lambda) = 1. Bland's rule.
bool in_convex_hull_of_others(std::span<const double> pts, std::size_t dims, std::size_t target) {
    const std::size_t m = pts.size() / dims;
    const std::size_t rows = dims + 1;
    const std::size_t vars = m - 1;
    const std::size_t cols = vars + rows + 1;  // lambdas, artificials, rhs
    std::vector<double> t(rows * cols, 0.0);
    auto cell = [&](std::size_t r, std::size_t c) -> double& { return t[r * cols + c]; };

    for (std::size_t r = 0; r < rows; ++r) {
        const double rhs = r < dims ? pts[target * dims + r] : 1.0;
        const double sign = rhs < 0.0 ? -1.0 : 1.0;
        std::size_t v = 0;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == target) continue;
            cell(r, v++) = sign * (r < dims ? pts[j * dims + r] : 1.0);
        }
        cell(r, vars + r) = 1.0;
        cell(r, cols - 1) = sign * rhs;
    }
    std::vector<std::size_t> basis(rows);
    for (std::size_t r = 0; r < rows; ++r) basis[r] = vars + r;

    constexpr double eps = 1e-10;
    for (int iter = 0; iter < 10000; ++iter) {
        // Reduced cost of column c for objective sum(artificials): -sum_r cell(r,c)
        // over rows whose basic variable is artificial, plus 1 for artificials.
        std::size_t enter = cols;
        for (std::size_t c = 0; c + 1 < cols && enter == cols; ++c) {
            if (std::find(basis.begin(), basis.end(), c) != basis.end()) continue;
            double reduced = c >= vars ? 1.0 : 0.0;
            for (std::size_t r = 0; r < rows; ++r)
                if (basis[r] >= vars) reduced -= cell(r, c);
            if (reduced < -eps) enter = c;
        }
        if (enter == cols) break;
        std::size_t leave = rows;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < rows; ++r) {
            if (cell(r, enter) > eps) {
                const double ratio = cell(r, cols - 1) / cell(r, enter);
                if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && leave < rows && basis[r] < basis[leave])) {
                    best = ratio;
                    leave = r;
                }
            }
        }
        if (leave == rows) break;  // unbounded, cannot happen for phase one
        const double pivot = cell(leave, enter);
        for (std::size_t c = 0; c < cols; ++c) cell(leave, c) /= pivot;
        for (std::size_t r = 0; r < rows; ++r) {
            if (r == leave) continue;
            const double f = cell(r, enter);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < cols; ++c) cell(r, c) -= f * cell(leave, c);
        }
        basis[leave] = enter;
    }
    double infeasibility = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
        if (basis[r] >= vars) infeasibility += cell(r, cols - 1);
    return infeasibility < 1e-8;
}

std::vector<SentenceIndex> random_sample(std::vector<SentenceIndex> pool, std::size_t count,
                                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(count, pool.size()));
    return pool;
}

std::vector<std::size_t> farthest_point_subset(std::span<const double> proj, std::size_t dims,
                                               const std::vector<std::size_t>& candidates,
                                               std::size_t count) {
    auto dist2 = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t j = 0; j < dims; ++j) {
            const double d = proj[a * dims + j] - proj[b * dims + j];
            s += d * d;
        }
        return s;
    };
    // Projection is centered, so the centroid is the origin.
    std::size_t start = candidates.front();
    double start_norm = -1.0;
    for (std::size_t c : candidates) {
        double s = 0.0;
        for (std::size_t j = 0; j < dims; ++j) s += proj[c * dims + j] * proj[c * dims + j];
        if (s > start_norm) {
            start_norm = s;
            start = c;
        }
    }
    std::vector<std::size_t> chosen{start};
    std::vector<double> nearest(candidates.size(), std::numeric_limits<double>::infinity());
    while (chosen.size() < count) {
        std::size_t best = candidates.size();
        double best_d = -1.0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            nearest[i] = std::min(nearest[i], dist2(candidates[i], chosen.back()));
            if (nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        chosen.push_back(candidates[best]);
    }
    return chosen;
}

}  // namespace

std::vector<double> pca_project(const EmbeddingMatrix& points, std::span<const SentenceIndex> rows,
                                std::size_t dims) {
    const std::size_t m = rows.size();
    const std::size_t full = points.dim();
    if (dims < 1 || dims > full) throw Error(ErrorCode::InvalidArgument, "projection dimension out of range");

    std::vector<double> centered(m * full);
    std::vector<double> mean(full, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (rows[i] >= points.rows()) throw Error(ErrorCode::UnknownId, "sample row out of range");
        const auto r = points.row(rows[i]);
        for (std::size_t j = 0; j < full; ++j) mean[j] += r[j];
    }
    for (double& v : mean) v /= static_cast<double>(std::max<std::size_t>(m, 1));
    for (std::size_t i = 0; i < m; ++i) {
        const auto r = points.row(rows[i]);
        for (std::size_t j = 0; j < full; ++j) centered[i * full + j] = r[j] - mean[j];
    }
    if (dims == full) return centered;

    // Orthogonal (subspace) iteration on X^T X. Any basis of the leading
    // subspace gives the same hull vertices, so no Ritz rotation is needed.
    std::vector<double> basis(full * dims);
    for (std::size_t i = 0; i < basis.size(); ++i)
        basis[i] = static_cast<double>(splitmix64(i) >> 11) * 0x1.0p-53 - 0.5;
    std::vector<double> xq(m * dims), next(full * dims);

    auto orthonormalize = [&](std::vector<double>& q) {
        for (std::size_t c = 0; c < dims; ++c) {
            for (std::size_t p = 0; p < c; ++p) {
                double proj = 0.0;
                for (std::size_t j = 0; j < full; ++j) proj += q[j * dims + c] * q[j * dims + p];
                for (std::size_t j = 0; j < full; ++j) q[j * dims + c] -= proj * q[j * dims + p];
            }
            double norm = 0.0;
            for (std::size_t j = 0; j < full; ++j) norm += q[j * dims + c] * q[j * dims + c];
            norm = std::sqrt(norm);
            if (norm < 1e-300) {
                // Rank-deficient data: any unit direction orthogonal to the rest.
                for (std::size_t j = 0; j < full; ++j) q[j * dims + c] = (j == c) ? 1.0 : 0.0;
                continue;
            }
            for (std::size_t j = 0; j < full; ++j) q[j * dims + c] /= norm;
        }
    };
    orthonormalize(basis);

    for (int iter = 0; iter < 200; ++iter) {
        std::fill(xq.begin(), xq.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < full; ++j) {
                const double x = centered[i * full + j];
                for (std::size_t c = 0; c < dims; ++c) xq[i * dims + c] += x * basis[j * dims + c];
            }
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < full; ++j) {
                const double x = centered[i * full + j];
                for (std::size_t c = 0; c < dims; ++c) next[j * dims + c] += x * xq[i * dims + c];
            }
        orthonormalize(next);
        // Converged when the new basis lies in the span of the old one.
        double residual = 0.0;
        for (std::size_t c = 0; c < dims; ++c) {
            double captured = 0.0;
            for (std::size_t p = 0; p < dims; ++p) {
                double proj = 0.0;
                for (std::size_t j = 0; j < full; ++j) proj += next[j * dims + c] * basis[j * dims + p];
                captured += proj * proj;
            }
            residual = std::max(residual, 1.0 - captured);
        }
        basis.swap(next);
        if (residual < 1e-12) break;
    }

    std::vector<double> out(m * dims, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < full; ++j) {
            const double x = centered[i * full + j];
            for (std::size_t c = 0; c < dims; ++c) out[i * dims + c] += x * basis[j * dims + c];
        }
    return out;
}

std::vector<std::size_t> hull_vertices(std::span<const double> points, std::size_t dims) {
    if (dims < 2 || points.size() % dims != 0)
        throw Error(ErrorCode::InvalidArgument, "hull needs dims >= 2 and a whole number of points");
    const std::size_t m = points.size() / dims;
    if (dims == 2) return hull_vertices_2d(points);
    std::vector<std::size_t> out;
    if (m <= 1) {
        for (std::size_t i = 0; i < m; ++i) out.push_back(i);
        return out;
    }
    for (std::size_t i = 0; i < m; ++i)
        if (!in_convex_hull_of_others(points, dims, i)) out.push_back(i);
    return out;
}

std::vector<SentenceIndex> sample_cluster(const EmbeddingMatrix& embeddings, const Cluster& cluster,
                                          const SamplingSpec& spec) {
    if (cluster.members.empty()) throw Error(ErrorCode::EmptyCluster, "cannot sample an empty cluster");
    if (spec.sample_size < 1) throw Error(ErrorCode::InvalidArgument, "sample_size must be >= 1");
    const auto size = static_cast<std::size_t>(spec.sample_size);

    std::vector<SentenceIndex> members = cluster.members;
    std::sort(members.begin(), members.end());
    if (members.size() <= size) return members;

    std::vector<SentenceIndex> picked;
    if (spec.method == Method::Random) {
        picked = random_sample(std::move(members), size, spec.seed);
    } else {
        if (spec.hull_dim_d < 2 || static_cast<std::size_t>(spec.hull_dim_d) > embeddings.dim())
            throw Error(ErrorCode::InvalidArgument, "hull_dim_d must be in [2, embedding dim]");
        const auto dims = static_cast<std::size_t>(spec.hull_dim_d);
        const auto proj = pca_project(embeddings, members, dims);
        auto vertices = hull_vertices(proj, dims);
        if (vertices.size() > size) vertices = farthest_point_subset(proj, dims, vertices, size);

        std::vector<char> taken(members.size(), 0);
        for (std::size_t v : vertices) {
            taken[v] = 1;
            picked.push_back(members[v]);
        }
        std::vector<SentenceIndex> interior;
        for (std::size_t i = 0; i < members.size(); ++i)
            if (!taken[i]) interior.push_back(members[i]);
        for (SentenceIndex id : random_sample(std::move(interior), size - picked.size(), spec.seed))
            picked.push_back(id);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<std::vector<SentenceIndex>> repeated_samples(const EmbeddingMatrix& embeddings,
                                                         const Cluster& cluster, const SamplingSpec& spec) {
    if (spec.repetitions_t < 1) throw Error(ErrorCode::InvalidArgument, "repetitions_t must be >= 1");
    std::vector<std::vector<SentenceIndex>> out;
    out.reserve(static_cast<std::size_t>(spec.repetitions_t));
    for (int r = 0; r < spec.repetitions_t; ++r) {
        SamplingSpec s = spec;
        s.seed = spec.seed + static_cast<std::uint64_t>(r);
        out.push_back(sample_cluster(embeddings, cluster, s));
    }
    return out;
}

}  // namespace intentloop::sampling
