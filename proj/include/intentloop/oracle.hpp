#ifndef INTENTLOOP_ORACLE_HPP
#define INTENTLOOP_ORACLE_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "intentloop/core.hpp"
#include "intentloop/http.hpp"

namespace intentloop::oracle {

struct CoherenceVerdict {
    Verdict value = Verdict::Bad;
    std::string backend_id;
    std::string raw_response;
};

/// Exact, case-insensitive "Good"/"Bad" after trimming whitespace.
std::optional<Verdict> parse_verdict(std::string_view raw);

enum class BackendKind { RemoteChat, Reference, NoisyReference };

struct OracleBackendSpec {
    BackendKind kind = BackendKind::Reference;
    std::string endpoint;
    std::string model_name;
    std::string api_key;
    double purity_threshold = 1.0;
    double flip_rate = 0.0;
    int timeout_ms = 30000;
    int max_retries = 3;
    int initial_backoff_ms = 500;
    std::uint64_t seed = 0;
    std::string coherence_fewshot_path;
    std::string naming_fewshot_path;
};

/// Throws ConfigError for a missing endpoint/model on remote backends or
/// out-of-range thresholds, rates and retry settings.
void validate(const OracleBackendSpec& spec);

struct FewShotExample {
    std::vector<std::string> input;
    std::string output;
};

/// Reads a JSON list of {input: [strings], output: string}. Exactly five
/// pairs are required.
std::vector<FewShotExample> load_fewshot(const std::string& path);

std::vector<FewShotExample> default_coherence_fewshot();
std::vector<FewShotExample> default_naming_fewshot();

std::string render_coherence_prompt(std::span<const std::string> sentences,
                                    std::span<const FewShotExample> shots);
std::string render_naming_prompt(std::span<const std::string> sentences,
                                 std::span<const FewShotExample> shots);
/// Serializes logs as "n_cluster good bad rate" rows per epoch with a
/// trailing "Best" row, followed by the prediction request.
std::string render_search_space_prompt(std::span<const IterationLog> logs, int top_k);

/// Deterministic fallback for search-space prediction. With chosen sizes
/// ..., a, b the centre is p = b * (b / a) (p = b / 2 with one epoch) and the
/// result is [p, p*f, p/f, (p + p/f)/2, (p + p*f)/2] with f = min(b/a, a/b)
/// (0.5 by default), rounded, deduplicated, truncated to top_k.
std::vector<int> heuristic_search_space(std::span<const IterationLog> logs, int top_k);

/// A coherence judge / cluster namer. Implementations must be safe for
/// concurrent calls.
class OracleBackend {
public:
    virtual ~OracleBackend() = default;

    virtual std::string id() const = 0;
    virtual CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences) const = 0;
    virtual IntentLabel name_cluster(std::span<const SentenceRecord> sentences) const = 0;
    virtual std::vector<int> predict_search_space(std::span<const IterationLog> logs, int top_k) const = 0;
};

/// Judges against gold labels: Good iff the modal gold label covers at least
/// purity_threshold of the sentences; names clusters by the modal gold label
/// (lexicographically smallest on ties).
class ReferenceOracle : public OracleBackend {
public:
    explicit ReferenceOracle(double purity_threshold = 1.0);

    std::string id() const override { return "reference"; }
    CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences) const override;
    IntentLabel name_cluster(std::span<const SentenceRecord> sentences) const override;
    std::vector<int> predict_search_space(std::span<const IterationLog> logs, int top_k) const override;

    static double purity(std::span<const SentenceRecord> sentences);

private:
    double threshold_;
};

/// Reference verdicts flipped with probability flip_rate. The flip is a pure
/// function of (seed, sentence ids), so results do not depend on call order.
class NoisyReferenceOracle final : public ReferenceOracle {
public:
    NoisyReferenceOracle(double purity_threshold, double flip_rate, std::uint64_t seed);

    std::string id() const override { return id_; }
    CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences) const override;

private:
    double flip_rate_;
    std::uint64_t seed_;
    std::string id_;
};

/// Chat-completions client: {model, messages, temperature: 0} in,
/// choices[0].message.content out.
class RemoteChatOracle final : public OracleBackend {
public:
    RemoteChatOracle(OracleBackendSpec spec, std::shared_ptr<const JsonPoster> poster);

    std::string id() const override { return "remote:" + spec_.model_name; }
    CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences) const override;
    IntentLabel name_cluster(std::span<const SentenceRecord> sentences) const override;
    std::vector<int> predict_search_space(std::span<const IterationLog> logs, int top_k) const override;

private:
    std::string complete(const std::string& prompt) const;

    OracleBackendSpec spec_;
    std::shared_ptr<const JsonPoster> poster_;
    std::vector<FewShotExample> coherence_shots_;
    std::vector<FewShotExample> naming_shots_;
};

std::unique_ptr<OracleBackend> make_backend(const OracleBackendSpec& spec);

/// Majority value; ties resolve to Bad. Throws InvalidArgument when empty.
CoherenceVerdict crowd_vote(std::span<const CoherenceVerdict> verdicts);

/// One-shot helpers that build a backend from its spec.
CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences, const OracleBackendSpec& backend);
IntentLabel name_cluster(std::span<const SentenceRecord> sentences, const OracleBackendSpec& backend);
std::vector<int> predict_search_space(std::span<const IterationLog> logs, int top_k,
                                      const OracleBackendSpec& backend);

/// A crowd of backends queried together.
class OraclePanel {
public:
    OraclePanel() = default;
    explicit OraclePanel(std::vector<std::shared_ptr<const OracleBackend>> backends);

    std::size_t size() const noexcept { return backends_.size(); }
    bool empty() const noexcept { return backends_.empty(); }

    /// Crowd verdict over the backends that answered; nullopt when every
    /// backend failed.
    std::optional<CoherenceVerdict> evaluate(std::span<const SentenceRecord> sentences) const;

    /// Label from the first backend that answers. Throws OracleUnavailable
    /// when all fail.
    IntentLabel name(std::span<const SentenceRecord> sentences) const;

    std::vector<int> predict(std::span<const IterationLog> logs, int top_k) const;

private:
    std::vector<std::shared_ptr<const OracleBackend>> backends_;
};

}  // namespace intentloop::oracle

#endif  // INTENTLOOP_ORACLE_HPP
