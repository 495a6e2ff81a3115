#ifndef INTENTLOOP_CORE_HPP
#define INTENTLOOP_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "intentloop/error.hpp"

namespace intentloop {

/// Row index into the corpus and its embedding matrix. Opaque string ids are
/// only materialized at the I/O boundary.
using SentenceIndex = std::size_t;

enum class Role { Customer, Agent, Unknown };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

enum class Verdict { Good, Bad };

std::string_view to_string(Verdict verdict);

struct SentenceRecord {
    std::string id;
    std::string text;
    std::optional<std::string> gold_label;
    std::optional<Role> gold_role;
};

/// Dense row-major matrix of sentence embeddings.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    /// Throws InvalidArgument on non-finite data or dim < 2 and ShapeMismatch
    /// when data.size() != rows * dim.
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    bool normalized() const noexcept { return normalized_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    std::span<const double> data() const noexcept { return data_; }

    /// Scales every row to unit length. Throws ZeroNorm on a zero row.
    void normalize_rows();

    /// Copies the given rows (in order) into a new matrix.
    EmbeddingMatrix select(std::span<const SentenceIndex> indices) const;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
    bool normalized_ = false;
};

/// Structured "action-objective" intent name.
struct IntentLabel {
    std::string action;
    std::string objective;
    std::string raw;

    std::string str() const { return action + "-" + objective; }

    friend bool operator==(const IntentLabel& a, const IntentLabel& b) {
        return a.action == b.action && a.objective == b.objective;
    }
};

/// Parses "Action-Objective". The separator is an ASCII hyphen or one of
/// U+2010..U+2015; exactly one separator is accepted. ASCII tokens are
/// lowercased, non-ASCII tokens are kept verbatim.
IntentLabel parse_intent_label(std::string_view raw);

IntentLabel fallback_intent_label();

struct Cluster {
    std::vector<SentenceIndex> members;  // sorted, unique
    std::optional<Verdict> verdict;
    std::optional<IntentLabel> label;
    std::optional<Role> role;
    bool low_confidence = false;
};

struct ClusterAssignment {
    std::vector<Cluster> clusters;
    int source_iteration = 0;

    std::size_t total_members() const;
};

/// True when no index occurs in two clusters (or twice in one) and every
/// cluster is non-empty. Linear in the total member count.
bool is_disjoint(const ClusterAssignment& assignment, std::size_t corpus_size);

/// True when the assignment is disjoint and covers exactly [0, corpus_size).
bool is_partition(const ClusterAssignment& assignment, std::size_t corpus_size);

/// Sorts members within clusters and orders clusters by smallest member.
void canonicalize(ClusterAssignment& assignment);

struct IterationRow {
    int n_cluster = 0;
    int good_clusters = 0;
    int bad_clusters = 0;
    std::size_t good_sentences = 0;
    std::size_t bad_sentences = 0;
    double raw_ratio = 0.0;       // good_sentences / bad_sentences, +inf if bad == 0
    double smoothed_ratio = 0.0;  // good_clusters / (bad_clusters + 1)
};

IterationRow make_iteration_row(int n_cluster, std::span<const Verdict> verdicts,
                                std::span<const std::size_t> cluster_sizes);

struct IterationLog {
    int epoch = 0;
    std::vector<IterationRow> rows;
    int chosen_n = 0;
    std::size_t oracle_calls = 0;  // cumulative coherence evaluations
};

/// Ratio with the +inf sentinel used throughout the logs.
double ratio_or_inf(double numerator, double denominator);

}  // namespace intentloop

#endif  // INTENTLOOP_CORE_HPP
