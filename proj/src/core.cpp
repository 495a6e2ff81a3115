#include "intentloop/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace intentloop {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedLabel: return "MalformedLabel";
        case ErrorCode::ZeroNorm: return "ZeroNorm";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NumericalOverflow: return "NumericalOverflow";
        case ErrorCode::EmptyMixture: return "EmptyMixture";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::UnknownId: return "UnknownId";
        case ErrorCode::OracleUnavailable: return "OracleUnavailable";
        case ErrorCode::UnparseableResponse: return "UnparseableResponse";
        case ErrorCode::NoCandidates: return "NoCandidates";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::MissingLabel: return "MissingLabel";
        case ErrorCode::MissingGoldLabel: return "MissingGoldLabel";
        case ErrorCode::EmptyCluster: return "EmptyCluster";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::Customer: return "customer";
        case Role::Agent: return "agent";
        case Role::Unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Role> parse_role(std::string_view text) {
    if (text == "customer") return Role::Customer;
    if (text == "agent") return Role::Agent;
    if (text == "unknown") return Role::Unknown;
    return std::nullopt;
}

std::string_view to_string(Verdict verdict) {
    return verdict == Verdict::Good ? "Good" : "Bad";
}

// ---------------------------------------------------------------------------
// EmbeddingMatrix

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
    if (dim_ < 2) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be >= 2");
    if (data_.size() != rows_ * dim_)
        throw Error(ErrorCode::ShapeMismatch, "embedding payload does not match rows x dim");
    for (double v : data_)
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite embedding component");
}

void EmbeddingMatrix::normalize_rows() {
    for (std::size_t i = 0; i < rows_; ++i) {
        double* r = data_.data() + i * dim_;
        double ss = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) ss += r[j] * r[j];
        const double norm = std::sqrt(ss);
        if (norm < 1e-12)
            throw Error(ErrorCode::ZeroNorm, "embedding row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < dim_; ++j) r[j] /= norm;
    }
    normalized_ = true;
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const SentenceIndex> indices) const {
    EmbeddingMatrix out;
    out.rows_ = indices.size();
    out.dim_ = dim_;
    out.normalized_ = normalized_;
    out.data_.resize(indices.size() * dim_);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= rows_) throw Error(ErrorCode::UnknownId, "row index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[k] * dim_), dim_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(k * dim_));
    }
    return out;
}

// ---------------------------------------------------------------------------
// IntentLabel

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_ascii(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

std::string normalize_token(std::string_view token) {
    std::string out(token);
    if (is_ascii(out))
        std::transform(out.begin(), out.end(), out.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Returns the byte length of a separator starting at s[i], or 0.
std::size_t separator_at(std::string_view s, std::size_t i) {
    if (s[i] == '-') return 1;
    // U+2010..U+2015 encode as E2 80 90..95.
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80) {
        const auto c = static_cast<unsigned char>(s[i + 2]);
        if (c >= 0x90 && c <= 0x95) return 3;
    }
    return 0;
}

}  // namespace

IntentLabel parse_intent_label(std::string_view raw) {
    const std::string_view body = trim(raw);
    if (body.empty()) throw Error(ErrorCode::MalformedLabel, "empty intent label");

    std::size_t sep_pos = std::string_view::npos;
    std::size_t sep_len = 0;
    int separators = 0;
    for (std::size_t i = 0; i < body.size();) {
        if (const std::size_t len = separator_at(body, i); len > 0) {
            ++separators;
            sep_pos = i;
            sep_len = len;
            i += len;
        } else {
            ++i;
        }
    }
    if (separators != 1)
        throw Error(ErrorCode::MalformedLabel,
                    "label '" + std::string(body) + "' must contain exactly one hyphen");

    const std::string_view action = trim(body.substr(0, sep_pos));
    const std::string_view objective = trim(body.substr(sep_pos + sep_len));
    if (action.empty() || objective.empty())
        throw Error(ErrorCode::MalformedLabel, "label '" + std::string(body) + "' has an empty side");

    return IntentLabel{normalize_token(action), normalize_token(objective), std::string(raw)};
}

IntentLabel fallback_intent_label() { return IntentLabel{"unknown", "unknown", "unknown-unknown"}; }

// ---------------------------------------------------------------------------
// ClusterAssignment

std::size_t ClusterAssignment::total_members() const {
    std::size_t total = 0;
    for (const auto& c : clusters) total += c.members.size();
    return total;
}

bool is_disjoint(const ClusterAssignment& assignment, std::size_t corpus_size) {
    std::vector<char> seen(corpus_size, 0);
    for (const auto& c : assignment.clusters) {
        if (c.members.empty()) return false;
        for (SentenceIndex m : c.members) {
            if (m >= corpus_size || seen[m]) return false;
            seen[m] = 1;
        }
    }
    return true;
}

bool is_partition(const ClusterAssignment& assignment, std::size_t corpus_size) {
    return is_disjoint(assignment, corpus_size) && assignment.total_members() == corpus_size;
}

void canonicalize(ClusterAssignment& assignment) {
    for (auto& c : assignment.clusters) std::sort(c.members.begin(), c.members.end());
    std::stable_sort(assignment.clusters.begin(), assignment.clusters.end(),
                     [](const Cluster& a, const Cluster& b) {
                         if (a.members.empty() || b.members.empty()) return b.members.empty() && !a.members.empty();
                         return a.members.front() < b.members.front();
                     });
}

// ---------------------------------------------------------------------------
// Iteration logs

double ratio_or_inf(double numerator, double denominator) {
    if (denominator > 0.0) return numerator / denominator;
    return std::numeric_limits<double>::infinity();
}

IterationRow make_iteration_row(int n_cluster, std::span<const Verdict> verdicts,
                                std::span<const std::size_t> cluster_sizes) {
    if (verdicts.size() != cluster_sizes.size())
        throw Error(ErrorCode::LengthMismatch, "verdicts and cluster sizes differ in length");
    IterationRow row;
    row.n_cluster = n_cluster;
    for (std::size_t j = 0; j < verdicts.size(); ++j) {
        if (verdicts[j] == Verdict::Good) {
            ++row.good_clusters;
            row.good_sentences += cluster_sizes[j];
        } else {
            ++row.bad_clusters;
            row.bad_sentences += cluster_sizes[j];
        }
    }
    row.raw_ratio = ratio_or_inf(static_cast<double>(row.good_sentences),
                                 static_cast<double>(row.bad_sentences));
    row.smoothed_ratio = static_cast<double>(row.good_clusters) / (row.bad_clusters + 1.0);
    return row;
}

}  // namespace intentloop
