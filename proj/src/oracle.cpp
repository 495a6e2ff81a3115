#include "intentloop/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "intentloop/seed.hpp"

namespace intentloop::oracle {

using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> texts_of(std::span<const SentenceRecord> sentences) {
    std::vector<std::string> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(s.text);
    return out;
}

// Gold-label histogram; throws MissingGoldLabel for unlabeled input.
std::map<std::string, std::size_t> label_counts(std::span<const SentenceRecord> sentences) {
    if (sentences.empty()) throw Error(ErrorCode::InvalidArgument, "oracle input is empty");
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sentences) {
        if (!s.gold_label)
            throw Error(ErrorCode::MissingGoldLabel, "reference oracle needs gold labels (sentence '" + s.id + "')");
        ++counts[*s.gold_label];
    }
    return counts;
}

std::string render_list(std::span<const std::string> sentences) {
    return json(std::vector<std::string>(sentences.begin(), sentences.end())).dump();
}

std::string render_prompt(std::string_view instruction, std::span<const std::string> sentences,
                          std::span<const FewShotExample> shots) {
    std::string out(instruction);
    out += "\n\n";
    for (const auto& shot : shots)
        out += fmt::format("Example: input:{} output:{}\n", render_list(shot.input), shot.output);
    out += fmt::format("\ninput:{{{}}} output:", render_list(sentences));
    return out;
}

constexpr std::string_view kCoherenceInstruction =
    "You are a helpful assistant for sentence clustering. Based on the relevancy and common points "
    "of the following sentences in a cluster, classify the cluster as: \"Good\" or \"Bad\". Only "
    "provide the label without any additional content.";

constexpr std::string_view kNamingInstruction =
    "You are a helpful assistant for sentence clustering. Based on the relevancy and common points "
    "of the following sentences in a cluster, summarize the cluster with an \"Action-Objective\" "
    "label. Only provide the label without any additional content.";

std::vector<int> parse_integers(std::string_view text, int top_k) {
    static const std::regex number(R"(\d+)");
    std::vector<int> out;
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), number); it != std::sregex_iterator(); ++it) {
        if (static_cast<int>(out.size()) >= top_k) break;
        const std::string digits = it->str();
        if (digits.size() > 9) continue;
        const int v = std::stoi(digits);
        if (v > 0 && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

}  // namespace

std::optional<Verdict> parse_verdict(std::string_view raw) {
    std::string t(trim(raw));
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "good") return Verdict::Good;
    if (t == "bad") return Verdict::Bad;
    return std::nullopt;
}

void validate(const OracleBackendSpec& spec) {
    if (spec.kind == BackendKind::RemoteChat && (spec.endpoint.empty() || spec.model_name.empty()))
        throw Error(ErrorCode::ConfigError, "remote oracle requires endpoint and model_name");
    if (!(spec.purity_threshold > 0.0 && spec.purity_threshold <= 1.0))
        throw Error(ErrorCode::ConfigError, "purity_threshold must be in (0, 1]");
    if (!(spec.flip_rate >= 0.0 && spec.flip_rate < 0.5))
        throw Error(ErrorCode::ConfigError, "flip_rate must be in [0, 0.5)");
    if (spec.max_retries < 0 || spec.timeout_ms <= 0)
        throw Error(ErrorCode::ConfigError, "max_retries must be >= 0 and timeout_ms > 0");
}

// ---------------------------------------------------------------------------
// Few-shot assets

std::vector<FewShotExample> load_fewshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open few-shot file " + path);
    std::vector<FewShotExample> out;
    try {
        const json doc = json::parse(in);
        for (const auto& item : doc.at("examples").is_array() ? doc.at("examples") : doc)
            out.push_back({item.at("input").get<std::vector<std::string>>(), item.at("output").get<std::string>()});
    } catch (const json::exception& e) {
        // Bare list form.
        try {
            in.clear();
            in.seekg(0);
            out.clear();
            for (const auto& item : json::parse(in))
                out.push_back({item.at("input").get<std::vector<std::string>>(), item.at("output").get<std::string>()});
        } catch (const json::exception& inner) {
            throw Error(ErrorCode::ConfigError, "malformed few-shot file " + path + ": " + inner.what());
        }
    }
    if (out.size() != 5)
        throw Error(ErrorCode::ConfigError, "few-shot file " + path + " must hold exactly 5 pairs");
    return out;
}

std::vector<FewShotExample> default_coherence_fewshot() {
    return {
        {{"How much is the annual fee for this card?", "What is the yearly charge on my credit card?",
          "Is there an annual fee?"},
         "Good"},
        {{"I want to cancel my broadband plan.", "What time do you close today?", "My parcel has not arrived."},
         "Bad"},
        {{"Can I raise my transfer limit?", "How do I increase the daily transfer limit?",
          "Please lift my transfer cap."},
         "Good"},
        {{"Sure", "Okay then", "Can you hear me?", "Hold on a second"}, "Bad"},
        {{"Does this policy cover accidental injury?", "Is a car accident covered by the insurance?",
          "Will the insurer pay if I get hurt in an accident?"},
         "Good"},
    };
}

std::vector<FewShotExample> default_naming_fewshot() {
    return {
        {{"Is there a sale on winter jackets?", "Any special offers this weekend?"}, "Inquire-Promotion"},
        {{"Your bill comes to forty-five dollars.", "That plan costs twenty per month."}, "Answer-Amount"},
        {{"I want to report my card as lost.", "My card was stolen, please freeze it."}, "Report-Loss"},
        {{"Please confirm my appointment for Friday.", "Is my booking on Friday confirmed?"}, "Confirm-Appointment"},
        {{"Your account has been verified.", "I have checked your identity, thank you."}, "Verify-Identity"},
    };
}

std::string render_coherence_prompt(std::span<const std::string> sentences, std::span<const FewShotExample> shots) {
    return render_prompt(kCoherenceInstruction, sentences, shots);
}

std::string render_naming_prompt(std::span<const std::string> sentences, std::span<const FewShotExample> shots) {
    return render_prompt(kNamingInstruction, sentences, shots);
}

std::string render_search_space_prompt(std::span<const IterationLog> logs, int top_k) {
    std::string out =
        "You are a helpful assistant for iterative sentence clustering. The records below list, for each "
        "epoch, the candidate number of clusters with the number of sentences in good and bad clusters "
        "and their rate.\n\n";
    for (const auto& log : logs) {
        out += fmt::format("Epoch {}\nn_cluster good bad rate\n", log.epoch + 1);
        const IterationRow* best = nullptr;
        for (const auto& row : log.rows) {
            out += fmt::format("{} {} {} {:.3f}\n", row.n_cluster, row.good_sentences, row.bad_sentences,
                               std::isfinite(row.raw_ratio) ? row.raw_ratio : 0.0);
            if (row.n_cluster == log.chosen_n) best = &row;
        }
        if (best)
            out += fmt::format("Best {} {} {} {:.3f}\n", best->n_cluster, best->good_sentences, best->bad_sentences,
                               std::isfinite(best->raw_ratio) ? best->raw_ratio : 0.0);
        out += "\n";
    }
    out += fmt::format(
        "Predict the {} most promising n_cluster values for the next epoch, most likely first, as distinct "
        "integers separated by commas. Only provide the numbers without any additional content.",
        top_k);
    return out;
}

std::vector<int> heuristic_search_space(std::span<const IterationLog> logs, int top_k) {
    if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
    std::vector<double> chosen;
    for (const auto& log : logs)
        if (log.chosen_n > 0) chosen.push_back(log.chosen_n);
    if (chosen.empty()) return {};

    const double last = chosen.back();
    double centre = last * 0.5;
    double f = 0.5;
    if (chosen.size() >= 2) {
        const double growth = last / chosen[chosen.size() - 2];
        centre = last * growth;
        f = std::min(growth, 1.0 / growth);
        if (f >= 1.0) {
            f = 0.5;
            centre = last;
        }
    }
    const double candidates[] = {centre, centre * f, centre / f, 0.5 * (centre + centre / f),
                                 0.5 * (centre + centre * f)};
    std::vector<int> out;
    for (double c : candidates) {
        const int v = std::max(1, static_cast<int>(std::llround(c)));
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        if (static_cast<int>(out.size()) == top_k) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference backends

ReferenceOracle::ReferenceOracle(double purity_threshold) : threshold_(purity_threshold) {
    if (!(threshold_ > 0.0 && threshold_ <= 1.0))
        throw Error(ErrorCode::ConfigError, "purity_threshold must be in (0, 1]");
}

double ReferenceOracle::purity(std::span<const SentenceRecord> sentences) {
    const auto counts = label_counts(sentences);
    std::size_t modal = 0;
    for (const auto& [label, count] : counts) modal = std::max(modal, count);
    return static_cast<double>(modal) / static_cast<double>(sentences.size());
}

CoherenceVerdict ReferenceOracle::evaluate_coherence(std::span<const SentenceRecord> sentences) const {
    // Small slack so that e.g. 18/20 passes a 0.9 threshold despite rounding.
    const Verdict v = purity(sentences) + 1e-12 >= threshold_ ? Verdict::Good : Verdict::Bad;
    return {v, id(), std::string(to_string(v))};
}

IntentLabel ReferenceOracle::name_cluster(std::span<const SentenceRecord> sentences) const {
    const auto counts = label_counts(sentences);
    const std::string* modal = nullptr;
    std::size_t best = 0;
    for (const auto& [label, count] : counts) {
        if (count > best) {
            best = count;
            modal = &label;
        }
    }
    try {
        return parse_intent_label(*modal);
    } catch (const Error&) {
        return fallback_intent_label();
    }
}

std::vector<int> ReferenceOracle::predict_search_space(std::span<const IterationLog> logs, int top_k) const {
    return heuristic_search_space(logs, top_k);
}

NoisyReferenceOracle::NoisyReferenceOracle(double purity_threshold, double flip_rate, std::uint64_t seed)
    : ReferenceOracle(purity_threshold), flip_rate_(flip_rate), seed_(seed),
      id_("noisy_reference:" + std::to_string(seed)) {
    if (!(flip_rate_ >= 0.0 && flip_rate_ < 0.5)) throw Error(ErrorCode::ConfigError, "flip_rate must be in [0, 0.5)");
}

CoherenceVerdict NoisyReferenceOracle::evaluate_coherence(std::span<const SentenceRecord> sentences) const {
    CoherenceVerdict verdict = ReferenceOracle::evaluate_coherence(sentences);
    std::uint64_t key = fnv1a64("noisy");
    for (const auto& s : sentences) {
        key = fnv1a64(s.id, key);
        key = fnv1a64("\x1f", key);
    }
    const double u = static_cast<double>(splitmix64(splitmix64(seed_) ^ key) >> 11) * 0x1.0p-53;
    if (u < flip_rate_) verdict.value = verdict.value == Verdict::Good ? Verdict::Bad : Verdict::Good;
    verdict.backend_id = id_;
    verdict.raw_response = std::string(to_string(verdict.value));
    return verdict;
}

// ---------------------------------------------------------------------------
// Remote backend

RemoteChatOracle::RemoteChatOracle(OracleBackendSpec spec, std::shared_ptr<const JsonPoster> poster)
    : spec_(std::move(spec)), poster_(std::move(poster)) {
    validate(spec_);
    coherence_shots_ = spec_.coherence_fewshot_path.empty() ? default_coherence_fewshot()
                                                            : load_fewshot(spec_.coherence_fewshot_path);
    naming_shots_ =
        spec_.naming_fewshot_path.empty() ? default_naming_fewshot() : load_fewshot(spec_.naming_fewshot_path);
}

std::string RemoteChatOracle::complete(const std::string& prompt) const {
    const json request = {
        {"model", spec_.model_name},
        {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", 0},
    };
    const std::string body = post_with_retries(*poster_, request.dump(),
                                               {spec_.max_retries, spec_.initial_backoff_ms},
                                               ErrorCode::OracleUnavailable);
    try {
        return json::parse(body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnparseableResponse, std::string("malformed chat response: ") + e.what());
    }
}

CoherenceVerdict RemoteChatOracle::evaluate_coherence(std::span<const SentenceRecord> sentences) const {
    const auto texts = texts_of(sentences);
    const std::string prompt = render_coherence_prompt(texts, coherence_shots_);
    std::string raw;
    for (int attempt = 0; attempt < 2; ++attempt) {
        raw = complete(prompt);
        if (const auto v = parse_verdict(raw)) return {*v, id(), raw};
        spdlog::warn("unparseable coherence verdict '{}' from {}", raw, id());
    }
    throw Error(ErrorCode::UnparseableResponse, "coherence verdict '" + raw + "' is neither Good nor Bad");
}

IntentLabel RemoteChatOracle::name_cluster(std::span<const SentenceRecord> sentences) const {
    const auto texts = texts_of(sentences);
    const std::string prompt = render_naming_prompt(texts, naming_shots_);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string raw = complete(prompt);
        try {
            return parse_intent_label(raw);
        } catch (const Error& e) {
            spdlog::warn("malformed label from {}: {}", id(), e.what());
        }
    }
    return fallback_intent_label();
}

std::vector<int> RemoteChatOracle::predict_search_space(std::span<const IterationLog> logs, int top_k) const {
    if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
    try {
        auto out = parse_integers(complete(render_search_space_prompt(logs, top_k)), top_k);
        if (!out.empty()) return out;
        spdlog::warn("search-space prediction had no integers; using heuristic");
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UnparseableResponse) throw;
        spdlog::warn("search-space prediction unparseable; using heuristic");
    }
    return heuristic_search_space(logs, top_k);
}

std::unique_ptr<OracleBackend> make_backend(const OracleBackendSpec& spec) {
    validate(spec);
    switch (spec.kind) {
        case BackendKind::Reference: return std::make_unique<ReferenceOracle>(spec.purity_threshold);
        case BackendKind::NoisyReference:
            return std::make_unique<NoisyReferenceOracle>(spec.purity_threshold, spec.flip_rate, spec.seed);
        case BackendKind::RemoteChat: {
            std::string key = spec.api_key;
            if (key.empty())
                if (const char* env = std::getenv("ORACLE_API_KEY")) key = env;
            auto poster = std::make_shared<HttpJsonPoster>(spec.endpoint, key, spec.timeout_ms);
            return std::make_unique<RemoteChatOracle>(spec, std::move(poster));
        }
    }
    throw Error(ErrorCode::ConfigError, "unknown backend kind");
}

// ---------------------------------------------------------------------------

CoherenceVerdict crowd_vote(std::span<const CoherenceVerdict> verdicts) {
    if (verdicts.empty()) throw Error(ErrorCode::InvalidArgument, "crowd_vote needs at least one verdict");
    const auto good = std::count_if(verdicts.begin(), verdicts.end(),
                                    [](const CoherenceVerdict& v) { return v.value == Verdict::Good; });
    const auto bad = static_cast<std::ptrdiff_t>(verdicts.size()) - good;
    const Verdict v = good > bad ? Verdict::Good : Verdict::Bad;
    return {v, "crowd", std::string(to_string(v))};
}

CoherenceVerdict evaluate_coherence(std::span<const SentenceRecord> sentences, const OracleBackendSpec& backend) {
    return make_backend(backend)->evaluate_coherence(sentences);
}

IntentLabel name_cluster(std::span<const SentenceRecord> sentences, const OracleBackendSpec& backend) {
    return make_backend(backend)->name_cluster(sentences);
}

std::vector<int> predict_search_space(std::span<const IterationLog> logs, int top_k, const OracleBackendSpec& backend) {
    if (logs.empty()) throw Error(ErrorCode::InvalidArgument, "predict_search_space needs logs");
    return make_backend(backend)->predict_search_space(logs, top_k);
}

// ---------------------------------------------------------------------------
// OraclePanel

OraclePanel::OraclePanel(std::vector<std::shared_ptr<const OracleBackend>> backends)
    : backends_(std::move(backends)) {}

std::optional<CoherenceVerdict> OraclePanel::evaluate(std::span<const SentenceRecord> sentences) const {
    std::vector<CoherenceVerdict> answers;
    answers.reserve(backends_.size());
    for (const auto& backend : backends_) {
        try {
            answers.push_back(backend->evaluate_coherence(sentences));
        } catch (const Error& e) {
            spdlog::warn("coherence evaluation by {} failed: {}", backend->id(), e.what());
        }
    }
    if (answers.empty()) return std::nullopt;
    if (answers.size() == 1) return answers.front();
    return crowd_vote(answers);
}

IntentLabel OraclePanel::name(std::span<const SentenceRecord> sentences) const {
    std::string last;
    for (const auto& backend : backends_) {
        try {
            return backend->name_cluster(sentences);
        } catch (const Error& e) {
            last = e.what();
            spdlog::warn("naming by {} failed: {}", backend->id(), last);
        }
    }
    throw Error(ErrorCode::OracleUnavailable, "no oracle backend could name the cluster: " + last);
}

std::vector<int> OraclePanel::predict(std::span<const IterationLog> logs, int top_k) const {
    for (const auto& backend : backends_) {
        try {
            return backend->predict_search_space(logs, top_k);
        } catch (const Error& e) {
            spdlog::warn("search-space prediction by {} failed: {}", backend->id(), e.what());
        }
    }
    return heuristic_search_space(logs, top_k);
}

}  // namespace intentloop::oracle
