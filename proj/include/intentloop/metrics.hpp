#ifndef INTENTLOOP_METRICS_HPP
#define INTENTLOOP_METRICS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "intentloop/core.hpp"

namespace intentloop::metrics {

/// Cross tabulation of two labelings of the same points.
class ContingencyTable {
public:
    /// Labels are arbitrary non-negative ids; throws LengthMismatch when the
    /// sequences differ in length.
    ContingencyTable(std::span<const int> rows, std::span<const int> cols);

    std::size_t n() const noexcept { return n_; }
    std::size_t row_count() const noexcept { return row_sums_.size(); }
    std::size_t col_count() const noexcept { return col_sums_.size(); }
    std::size_t at(std::size_t r, std::size_t c) const { return counts_[r * col_sums_.size() + c]; }
    std::span<const std::size_t> row_sums() const noexcept { return row_sums_; }
    std::span<const std::size_t> col_sums() const noexcept { return col_sums_; }

    double mutual_information() const;  // nats
    double row_entropy() const;
    double col_entropy() const;

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> row_sums_;
    std::vector<std::size_t> col_sums_;
};

enum class Normalization { Arithmetic, Geometric, Min, Max };

std::string_view to_string(Normalization normalization);
std::optional<Normalization> parse_normalization(std::string_view text);

/// NMI of two labelings; 0/0 is defined as 1.
double nmi(std::span<const int> a, std::span<const int> b, Normalization normalization = Normalization::Arithmetic);

/// NMI of the clustered sentences against their gold labels (indexed by
/// corpus position). Throws MissingGoldLabel.
double nmi(const ClusterAssignment& pred, std::span<const std::optional<std::string>> gold,
           Normalization normalization = Normalization::Arithmetic);

/// good / bad, +inf when nothing is Bad. Throws InvalidArgument when empty.
double goodness_ratio(std::span<const Verdict> verdicts);
double goodness_ratio(std::size_t good, std::size_t bad);

/// Fraction of Good verdicts. Throws InvalidArgument when empty.
double goodness_final(std::span<const Verdict> verdicts);

/// Mean over sentences of 1 - cos(sentence, own centroid); a zero centroid
/// counts as distance 1. Throws EmptyCluster and UnknownId.
double semantic_diversity(const EmbeddingMatrix& embeddings, const ClusterAssignment& assignment);

/// Exact-match fraction. Throws LengthMismatch for unequal or empty input.
double oracle_accuracy(std::span<const Verdict> predicted, std::span<const Verdict> gold);
double oracle_accuracy(std::span<const IntentLabel> predicted, std::span<const IntentLabel> gold);

struct Report {
    double nmi = 0.0;
    Normalization nmi_normalization = Normalization::Arithmetic;
    double goodness_final = 0.0;
    double goodness_ratio = 0.0;
    double semantic_diversity = 0.0;
    std::size_t n_clusters = 0;
    std::size_t coherence_calls = 0;
    std::size_t naming_calls = 0;
    std::size_t total_calls = 0;
};

/// Pretty-printed JSON; an infinite goodness_ratio is written as "inf".
std::string to_json(const Report& report);
Report report_from_json(const std::string& text);

}  // namespace intentloop::metrics

#endif  // INTENTLOOP_METRICS_HPP
