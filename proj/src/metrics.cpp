#include "intentloop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "intentloop/clustering.hpp"

namespace intentloop::metrics {

namespace {

std::vector<std::size_t> compact(std::span<const int> labels, std::size_t& distinct) {
    std::unordered_map<int, std::size_t> ids;
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (int l : labels) out.push_back(ids.try_emplace(l, ids.size()).first->second);
    distinct = ids.size();
    return out;
}

double entropy(std::span<const std::size_t> sums, std::size_t n) {
    double h = 0.0;
    for (std::size_t s : sums) {
        if (s == 0) continue;
        const double p = static_cast<double>(s) / static_cast<double>(n);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

ContingencyTable::ContingencyTable(std::span<const int> rows, std::span<const int> cols) {
    if (rows.size() != cols.size()) throw Error(ErrorCode::LengthMismatch, "labelings differ in length");
    std::size_t r = 0, c = 0;
    const auto ri = compact(rows, r);
    const auto ci = compact(cols, c);
    n_ = rows.size();
    counts_.assign(r * c, 0);
    row_sums_.assign(r, 0);
    col_sums_.assign(c, 0);
    for (std::size_t k = 0; k < n_; ++k) {
        ++counts_[ri[k] * c + ci[k]];
        ++row_sums_[ri[k]];
        ++col_sums_[ci[k]];
    }
}

double ContingencyTable::mutual_information() const {
    if (n_ == 0) return 0.0;
    const double n = static_cast<double>(n_);
    double mi = 0.0;
    for (std::size_t r = 0; r < row_sums_.size(); ++r) {
        for (std::size_t c = 0; c < col_sums_.size(); ++c) {
            const std::size_t nij = at(r, c);
            if (nij == 0) continue;
            const double x = static_cast<double>(nij);
            mi += x / n * std::log(x * n / (static_cast<double>(row_sums_[r]) * static_cast<double>(col_sums_[c])));
        }
    }
    return std::max(mi, 0.0);
}

double ContingencyTable::row_entropy() const { return entropy(row_sums_, n_); }
double ContingencyTable::col_entropy() const { return entropy(col_sums_, n_); }

std::string_view to_string(Normalization normalization) {
    switch (normalization) {
        case Normalization::Arithmetic: return "arithmetic";
        case Normalization::Geometric: return "geometric";
        case Normalization::Min: return "min";
        case Normalization::Max: return "max";
    }
    return "arithmetic";
}

std::optional<Normalization> parse_normalization(std::string_view text) {
    for (auto n : {Normalization::Arithmetic, Normalization::Geometric, Normalization::Min, Normalization::Max})
        if (to_string(n) == text) return n;
    return std::nullopt;
}

double nmi(std::span<const int> a, std::span<const int> b, Normalization normalization) {
    const ContingencyTable table(a, b);
    const double ha = table.row_entropy();
    const double hb = table.col_entropy();
    if (ha == 0.0 && hb == 0.0) return 1.0;
    double denom = 0.0;
    switch (normalization) {
        case Normalization::Arithmetic: denom = 0.5 * (ha + hb); break;
        case Normalization::Geometric: denom = std::sqrt(ha * hb); break;
        case Normalization::Min: denom = std::min(ha, hb); break;
        case Normalization::Max: denom = std::max(ha, hb); break;
    }
    if (denom <= 0.0) return 0.0;
    return std::clamp(table.mutual_information() / denom, 0.0, 1.0);
}

double nmi(const ClusterAssignment& pred, std::span<const std::optional<std::string>> gold,
           Normalization normalization) {
    std::vector<int> p, g;
    std::map<std::string, int> gold_ids;
    for (std::size_t c = 0; c < pred.clusters.size(); ++c) {
        for (SentenceIndex i : pred.clusters[c].members) {
            if (i >= gold.size()) throw Error(ErrorCode::UnknownId, "cluster member outside the gold labels");
            if (!gold[i]) throw Error(ErrorCode::MissingGoldLabel, "sentence " + std::to_string(i) + " has no gold label");
            p.push_back(static_cast<int>(c));
            g.push_back(gold_ids.try_emplace(*gold[i], static_cast<int>(gold_ids.size())).first->second);
        }
    }
    return nmi(p, g, normalization);
}

double goodness_ratio(std::size_t good, std::size_t bad) {
    return ratio_or_inf(static_cast<double>(good), static_cast<double>(bad));
}

double goodness_ratio(std::span<const Verdict> verdicts) {
    if (verdicts.empty()) throw Error(ErrorCode::InvalidArgument, "no verdicts");
    const auto good = static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), Verdict::Good));
    return goodness_ratio(good, verdicts.size() - good);
}

double goodness_final(std::span<const Verdict> verdicts) {
    if (verdicts.empty()) throw Error(ErrorCode::InvalidArgument, "no verdicts");
    const auto good = std::count(verdicts.begin(), verdicts.end(), Verdict::Good);
    return static_cast<double>(good) / static_cast<double>(verdicts.size());
}

double semantic_diversity(const EmbeddingMatrix& embeddings, const ClusterAssignment& assignment) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& c : assignment.clusters) {
        if (c.members.empty()) throw Error(ErrorCode::EmptyCluster, "cluster without members");
        const auto mu = clustering::centroid(embeddings, c);
        double mu_norm = 0.0;
        for (double v : mu) mu_norm += v * v;
        mu_norm = std::sqrt(mu_norm);
        for (SentenceIndex i : c.members) {
            const auto x = embeddings.row(i);
            double xn = 0.0, dot = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                xn += x[k] * x[k];
                dot += x[k] * mu[k];
            }
            xn = std::sqrt(xn);
            const double denom = xn * mu_norm;
            total += denom < 1e-12 ? 1.0 : 1.0 - std::clamp(dot / denom, -1.0, 1.0);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

namespace {

template <typename T>
double accuracy(std::span<const T> predicted, std::span<const T> gold) {
    if (predicted.size() != gold.size() || gold.empty())
        throw Error(ErrorCode::LengthMismatch, "predictions and gold must be non-empty and aligned");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

}  // namespace

double oracle_accuracy(std::span<const Verdict> predicted, std::span<const Verdict> gold) {
    return accuracy(predicted, gold);
}

double oracle_accuracy(std::span<const IntentLabel> predicted, std::span<const IntentLabel> gold) {
    return accuracy(predicted, gold);
}

std::string to_json(const Report& report) {
    nlohmann::ordered_json j;
    j["nmi"] = report.nmi;
    j["nmi_normalization"] = std::string(to_string(report.nmi_normalization));
    j["goodness_final"] = report.goodness_final;
    if (std::isinf(report.goodness_ratio))
        j["goodness_ratio"] = "inf";
    else
        j["goodness_ratio"] = report.goodness_ratio;
    j["semantic_diversity"] = report.semantic_diversity;
    j["n_clusters"] = report.n_clusters;
    j["oracle_calls"] = {{"coherence", report.coherence_calls},
                         {"naming", report.naming_calls},
                         {"total", report.total_calls}};
    return j.dump(2) + "\n";
}

namespace {

double number_or_nan(const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

Report report_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        Report r;
        r.nmi = number_or_nan(j.at("nmi"));
        r.nmi_normalization =
            parse_normalization(j.at("nmi_normalization").get<std::string>()).value_or(Normalization::Arithmetic);
        r.goodness_final = number_or_nan(j.at("goodness_final"));
        const auto& gr = j.at("goodness_ratio");
        r.goodness_ratio = gr.is_string() ? std::numeric_limits<double>::infinity() : number_or_nan(gr);
        r.semantic_diversity = number_or_nan(j.at("semantic_diversity"));
        r.n_clusters = j.at("n_clusters").get<std::size_t>();
        r.coherence_calls = j.at("oracle_calls").at("coherence").get<std::size_t>();
        r.naming_calls = j.at("oracle_calls").at("naming").get<std::size_t>();
        r.total_calls = j.at("oracle_calls").at("total").get<std::size_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed report: ") + e.what());
    }
}

}  // namespace intentloop::metrics
