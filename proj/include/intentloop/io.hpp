#ifndef INTENTLOOP_IO_HPP
#define INTENTLOOP_IO_HPP

#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "intentloop/core.hpp"
#include "intentloop/http.hpp"

namespace intentloop::io {

struct Corpus {
    std::vector<SentenceRecord> records;
    std::size_t duplicates_removed = 0;
};

/// JSONL, one {id, text, gold_label?, gold_role?} object per line. Repeated
/// texts keep their first occurrence. Throws ParseError (with the 1-based
/// line number) and DuplicateId.
Corpus read_corpus(std::istream& in);
Corpus load_corpus(const std::string& path);

/// Binary matrix: "EMBMAT01", u32 n, u32 d, then n*d f32 little-endian.
void write_embeddings(std::ostream& out, const EmbeddingMatrix& matrix);
void save_embeddings(const std::string& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix read_embeddings(std::istream& in);
EmbeddingMatrix load_embeddings(const std::string& path);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    /// One row per text, not necessarily normalized.
    virtual EmbeddingMatrix embed(std::span<const std::string> texts) const = 0;
};

/// Signed feature hashing of label tokens; deterministic and offline.
/// "action-objective" strings get features for the action, the objective and
/// each objective word.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = 256);
    std::string id() const override { return "hashing:" + std::to_string(dim_); }
    EmbeddingMatrix embed(std::span<const std::string> texts) const override;

private:
    std::size_t dim_;
};

struct RemoteEmbedderSpec {
    std::string endpoint;
    std::string model;
    std::string api_key;
    int timeout_ms = 30000;
    int max_retries = 3;
    int initial_backoff_ms = 500;
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
};

/// {input: [texts], model} -> {data: [{index, embedding}]}, batched.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(RemoteEmbedderSpec spec, std::shared_ptr<const JsonPoster> poster);
    std::string id() const override { return "remote:" + spec_.model; }
    EmbeddingMatrix embed(std::span<const std::string> texts) const override;

private:
    RemoteEmbedderSpec spec_;
    std::shared_ptr<const JsonPoster> poster_;
};

std::shared_ptr<const JsonPoster> make_poster(const std::string& endpoint, const std::string& api_key,
                                              int timeout_ms);

struct EmbeddingSource {
    std::string path;      // binary matrix file
    std::string endpoint;  // or remote service
    std::string model;
    std::string api_key;
    std::string cache_dir;
    int timeout_ms = 30000;
    int max_retries = 3;
    int initial_backoff_ms = 500;
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
};

/// Content key of the corpus texts and model, used to name cache files.
std::string corpus_key(std::span<const SentenceRecord> records, const std::string& model);

/// Loads the configured file or fetches from the endpoint (reusing and
/// refreshing the cache), then L2-normalizes rows. Throws ShapeMismatch,
/// EndpointUnavailable, ConfigError.
EmbeddingMatrix load_or_fetch_embeddings(std::span<const SentenceRecord> records, const EmbeddingSource& source,
                                         std::shared_ptr<const JsonPoster> poster = nullptr);

/// {cluster_id, label, role, verdict, member_ids, low_confidence} per line.
void write_clusters_jsonl(std::ostream& out, const ClusterAssignment& assignment,
                          std::span<const SentenceRecord> records);
ClusterAssignment read_clusters_jsonl(std::istream& in, std::span<const SentenceRecord> records);
ClusterAssignment load_clusters_jsonl(const std::string& path, std::span<const SentenceRecord> records);

std::vector<IterationLog> read_iterations_csv(std::istream& in);

std::string read_text_file(const std::string& path);
/// Writes via a temporary file and rename.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace intentloop::io

#endif  // INTENTLOOP_IO_HPP
