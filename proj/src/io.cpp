#include "intentloop/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "intentloop/parallel.hpp"
#include "intentloop/seed.hpp"

namespace intentloop::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Corpus

Corpus read_corpus(std::istream& in) {
    Corpus corpus;
    std::unordered_set<std::string> texts;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        SentenceRecord rec;
        try {
            const json obj = json::parse(line);
            const auto& id = obj.at("id");
            rec.id = id.is_string() ? id.get<std::string>() : id.dump();
            rec.text = obj.at("text").get<std::string>();
            if (auto it = obj.find("gold_label"); it != obj.end() && !it->is_null())
                rec.gold_label = it->get<std::string>();
            if (auto it = obj.find("gold_role"); it != obj.end() && !it->is_null()) {
                rec.gold_role = parse_role(it->get<std::string>());
                if (!rec.gold_role) throw Error(ErrorCode::ParseError, "unknown gold_role");
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, fmt::format("line {}: {}", line_no, e.what()));
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, fmt::format("line {}: {}", line_no, e.what()));
        }
        if (!ids.insert(rec.id).second)
            throw Error(ErrorCode::DuplicateId, fmt::format("line {}: duplicate id '{}'", line_no, rec.id));
        if (!texts.insert(rec.text).second) {
            ++corpus.duplicates_removed;
            continue;
        }
        corpus.records.push_back(std::move(rec));
    }
    if (corpus.duplicates_removed > 0)
        spdlog::info("removed {} sentences with duplicate text", corpus.duplicates_removed);
    return corpus;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open corpus " + path);
    return read_corpus(in);
}

// ---------------------------------------------------------------------------
// Embedding binary format

namespace {

constexpr char kMagic[8] = {'E', 'M', 'B', 'M', 'A', 'T', '0', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::ParseError, "truncated embedding header");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_embeddings(std::ostream& out, const EmbeddingMatrix& matrix) {
    if (matrix.rows() > std::numeric_limits<std::uint32_t>::max() ||
        matrix.dim() > std::numeric_limits<std::uint32_t>::max())
        throw Error(ErrorCode::InvalidArgument, "matrix too large for the binary format");
    out.write(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
    put_u32(out, static_cast<std::uint32_t>(matrix.dim()));
    for (double v : matrix.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!out) throw Error(ErrorCode::InvalidArgument, "failed to write embeddings");
}

void save_embeddings(const std::string& path, const EmbeddingMatrix& matrix) {
    std::ostringstream buf(std::ios::binary);
    write_embeddings(buf, matrix);
    write_text_file(path, buf.str());
}

EmbeddingMatrix read_embeddings(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw Error(ErrorCode::ParseError, "not an EMBMAT01 file");
    const std::size_t n = get_u32(in);
    const std::size_t d = get_u32(in);
    std::vector<double> data(n * d);
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(get_u32(in)));
    return EmbeddingMatrix(n, d, std::move(data));
}

EmbeddingMatrix load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open embeddings " + path);
    return read_embeddings(in);
}

// ---------------------------------------------------------------------------
// Embedders

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
    if (dim_ < 2) throw Error(ErrorCode::InvalidArgument, "hashing dimension must be >= 2");
}

EmbeddingMatrix HashingEmbedder::embed(std::span<const std::string> texts) const {
    std::vector<double> data(texts.size() * dim_, 0.0);
    for (std::size_t r = 0; r < texts.size(); ++r) {
        double* row = data.data() + r * dim_;
        auto add = [&](const std::string& feature, double weight) {
            const std::uint64_t h = splitmix64(fnv1a64(feature));
            row[h % dim_] += (h >> 63) ? -weight : weight;
        };
        std::string action, objective;
        try {
            const IntentLabel label = parse_intent_label(texts[r]);
            action = label.action;
            objective = label.objective;
        } catch (const Error&) {
            objective = texts[r];
        }
        if (!action.empty()) add("act:" + action, 1.0);
        add("obj:" + objective, 1.0);
        std::istringstream words(objective);
        for (std::string w; words >> w;) add("word:" + w, 0.5);
        double norm = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) norm += row[k] * row[k];
        if (norm == 0.0) row[0] = 1.0;  // only possible for an empty string
    }
    return EmbeddingMatrix(texts.size(), dim_, std::move(data));
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderSpec spec, std::shared_ptr<const JsonPoster> poster)
    : spec_(std::move(spec)), poster_(std::move(poster)) {
    if (spec_.batch_size == 0 || spec_.batch_size > 64)
        throw Error(ErrorCode::ConfigError, "embedding batch_size must be in [1, 64]");
    if (!poster_) throw Error(ErrorCode::ConfigError, "remote embedder needs a poster");
}

EmbeddingMatrix RemoteEmbedder::embed(std::span<const std::string> texts) const {
    const std::size_t batches = (texts.size() + spec_.batch_size - 1) / spec_.batch_size;
    std::vector<std::vector<std::vector<double>>> results(batches);
    parallel_for(batches, std::max<std::size_t>(spec_.max_in_flight, 1), [&](std::size_t b) {
        const std::size_t lo = b * spec_.batch_size;
        const std::size_t hi = std::min(texts.size(), lo + spec_.batch_size);
        const json request = {{"input", std::vector<std::string>(texts.begin() + lo, texts.begin() + hi)},
                              {"model", spec_.model}};
        const std::string body = post_with_retries(*poster_, request.dump(),
                                                   {spec_.max_retries, spec_.initial_backoff_ms},
                                                   ErrorCode::EndpointUnavailable);
        auto& rows = results[b];
        rows.resize(hi - lo);
        try {
            const json doc = json::parse(body);
            std::size_t seen = 0;
            for (const auto& item : doc.at("data")) {
                const auto index = item.at("index").get<std::size_t>();
                if (index >= rows.size() || !rows[index].empty())
                    throw Error(ErrorCode::EndpointUnavailable, "embedding response has a bad index");
                rows[index] = item.at("embedding").get<std::vector<double>>();
                ++seen;
            }
            if (seen != rows.size())
                throw Error(ErrorCode::EndpointUnavailable, "embedding response is missing rows");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::EndpointUnavailable, std::string("malformed embedding response: ") + e.what());
        }
    });
    std::size_t dim = 0;
    std::vector<double> data;
    for (const auto& batch : results) {
        for (const auto& row : batch) {
            if (dim == 0) {
                dim = row.size();
                data.reserve(texts.size() * dim);
            }
            if (row.size() != dim) throw Error(ErrorCode::ShapeMismatch, "embedding rows differ in length");
            data.insert(data.end(), row.begin(), row.end());
        }
    }
    return EmbeddingMatrix(texts.size(), texts.empty() ? 2 : dim, std::move(data));
}

std::shared_ptr<const JsonPoster> make_poster(const std::string& endpoint, const std::string& api_key,
                                              int timeout_ms) {
    return std::make_shared<HttpJsonPoster>(endpoint, api_key, timeout_ms);
}

std::string corpus_key(std::span<const SentenceRecord> records, const std::string& model) {
    std::uint64_t h = fnv1a64(model);
    for (const auto& r : records) {
        h = fnv1a64("\x1e", h);
        h = fnv1a64(r.text, h);
    }
    return fmt::format("{:016x}", h);
}

EmbeddingMatrix load_or_fetch_embeddings(std::span<const SentenceRecord> records, const EmbeddingSource& source,
                                         std::shared_ptr<const JsonPoster> poster) {
    if (source.path.empty() == source.endpoint.empty())
        throw Error(ErrorCode::ConfigError, "configure exactly one of embeddings_path and embedding endpoint");

    EmbeddingMatrix matrix;
    if (!source.path.empty()) {
        matrix = load_embeddings(source.path);
    } else {
        const fs::path cache =
            fs::path(source.cache_dir.empty() ? "." : source.cache_dir) / ("embeddings-" + corpus_key(records, source.model) + ".bin");
        if (fs::exists(cache)) {
            spdlog::info("using cached embeddings {}", cache.string());
            matrix = load_embeddings(cache.string());
        } else {
            if (!poster) poster = make_poster(source.endpoint, source.api_key, source.timeout_ms);
            RemoteEmbedder embedder({source.endpoint, source.model, source.api_key, source.timeout_ms,
                                     source.max_retries, source.initial_backoff_ms, source.batch_size,
                                     source.max_in_flight},
                                    std::move(poster));
            std::vector<std::string> texts;
            texts.reserve(records.size());
            for (const auto& r : records) texts.push_back(r.text);
            matrix = embedder.embed(texts);
            fs::create_directories(cache.parent_path());
            save_embeddings(cache.string(), matrix);
            matrix = load_embeddings(cache.string());  // same f32 rounding as later cache hits
        }
    }
    if (matrix.rows() != records.size())
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("embedding matrix has {} rows for {} sentences", matrix.rows(), records.size()));
    matrix.normalize_rows();
    return matrix;
}

// ---------------------------------------------------------------------------
// Clusters JSONL

void write_clusters_jsonl(std::ostream& out, const ClusterAssignment& assignment,
                          std::span<const SentenceRecord> records) {
    for (std::size_t c = 0; c < assignment.clusters.size(); ++c) {
        const Cluster& cl = assignment.clusters[c];
        nlohmann::ordered_json j;
        j["cluster_id"] = c;
        j["label"] = cl.label ? json(cl.label->str()) : json(nullptr);
        j["role"] = cl.role ? json(std::string(to_string(*cl.role))) : json(nullptr);
        j["verdict"] = cl.verdict ? json(std::string(to_string(*cl.verdict))) : json(nullptr);
        std::vector<std::string> ids;
        ids.reserve(cl.members.size());
        for (SentenceIndex i : cl.members) {
            if (i >= records.size()) throw Error(ErrorCode::UnknownId, "cluster member outside the corpus");
            ids.push_back(records[i].id);
        }
        j["member_ids"] = std::move(ids);
        j["low_confidence"] = cl.low_confidence;
        out << j.dump() << '\n';
    }
}

ClusterAssignment read_clusters_jsonl(std::istream& in, std::span<const SentenceRecord> records) {
    std::unordered_map<std::string, SentenceIndex> index;
    for (std::size_t i = 0; i < records.size(); ++i) index.emplace(records[i].id, i);

    ClusterAssignment out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Cluster c;
        try {
            const json j = json::parse(line);
            for (const auto& id : j.at("member_ids")) {
                const std::string key = id.is_string() ? id.get<std::string>() : id.dump();
                const auto it = index.find(key);
                if (it == index.end())
                    throw Error(ErrorCode::UnknownId, fmt::format("line {}: unknown sentence id '{}'", line_no, key));
                c.members.push_back(it->second);
            }
            if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
                try {
                    c.label = parse_intent_label(it->get<std::string>());
                } catch (const Error&) {
                    c.label = fallback_intent_label();
                }
            }
            if (auto it = j.find("role"); it != j.end() && !it->is_null()) c.role = parse_role(it->get<std::string>());
            if (auto it = j.find("verdict"); it != j.end() && !it->is_null()) {
                const auto v = it->get<std::string>();
                if (v == "Good") c.verdict = Verdict::Good;
                else if (v == "Bad") c.verdict = Verdict::Bad;
                else throw Error(ErrorCode::ParseError, fmt::format("line {}: bad verdict '{}'", line_no, v));
            }
            if (auto it = j.find("low_confidence"); it != j.end() && it->is_boolean())
                c.low_confidence = it->get<bool>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, fmt::format("line {}: {}", line_no, e.what()));
        }
        std::sort(c.members.begin(), c.members.end());
        out.clusters.push_back(std::move(c));
    }
    if (!is_disjoint(out, records.size()))
        throw Error(ErrorCode::ParseError, "clusters overlap or are empty");
    return out;
}

ClusterAssignment load_clusters_jsonl(const std::string& path, std::span<const SentenceRecord> records) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open clusters " + path);
    return read_clusters_jsonl(in, records);
}

// ---------------------------------------------------------------------------

std::vector<IterationLog> read_iterations_csv(std::istream& in) {
    std::vector<IterationLog> logs;
    std::string line;
    std::size_t line_no = 0;
    std::size_t calls = 0;
    auto number = [](const std::string& s) {
        return s == "inf" ? std::numeric_limits<double>::infinity() : std::stod(s);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 9) throw Error(ErrorCode::ParseError, fmt::format("iterations line {}: expected 9 fields", line_no));
        try {
            const int epoch = std::stoi(f[0]);
            if (logs.empty() || logs.back().epoch != epoch) {
                logs.push_back({});
                logs.back().epoch = epoch;
            }
            IterationRow row;
            row.n_cluster = std::stoi(f[1]);
            row.good_clusters = std::stoi(f[2]);
            row.bad_clusters = std::stoi(f[3]);
            row.good_sentences = std::stoull(f[4]);
            row.bad_sentences = std::stoull(f[5]);
            row.raw_ratio = number(f[6]);
            row.smoothed_ratio = number(f[7]);
            calls += static_cast<std::size_t>(row.n_cluster);
            auto& log = logs.back();
            if (f[8] == "true") log.chosen_n = row.n_cluster;
            log.rows.push_back(row);
            log.oracle_calls = calls;
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::ParseError, fmt::format("iterations line {}: bad number", line_no));
        }
    }
    return logs;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + tmp.string());
        out << content;
        if (!out) throw Error(ErrorCode::ConfigError, "failed writing " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace intentloop::io
