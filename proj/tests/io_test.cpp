#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "intentloop/io.hpp"
#include "test_support.hpp"

using namespace intentloop;
using namespace intentloop::io;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("intentloop_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no Error thrown";
    return ErrorCode::InvalidArgument;
}

std::vector<SentenceRecord> records(std::initializer_list<const char*> texts) {
    std::vector<SentenceRecord> out;
    int i = 0;
    for (const char* t : texts) out.push_back({"r" + std::to_string(i++), t, {}, {}});
    return out;
}

}  // namespace

TEST(Corpus, ParsesAndDeduplicates) {
    std::istringstream in(R"({"id":"a","text":"hello","gold_label":"inquire-x","gold_role":"customer"}
{"id":7,"text":"world"}

{"id":"c","text":"hello"}
)");
    const auto c = read_corpus(in);
    ASSERT_EQ(c.records.size(), 2u);
    EXPECT_EQ(c.duplicates_removed, 1u);
    EXPECT_EQ(c.records[0].gold_label, "inquire-x");
    EXPECT_EQ(c.records[0].gold_role, Role::Customer);
    EXPECT_EQ(c.records[1].id, "7");
    EXPECT_FALSE(c.records[1].gold_label);
}

TEST(Corpus, Errors) {
    std::istringstream bad("{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
    try {
        read_corpus(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ParseError);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    std::istringstream dup("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
    EXPECT_EQ(code_of([&] { read_corpus(dup); }), ErrorCode::DuplicateId);
    std::istringstream notext("{\"id\":\"a\"}\n");
    EXPECT_EQ(code_of([&] { read_corpus(notext); }), ErrorCode::ParseError);
    EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), Error);
}

TEST(Embeddings, BinaryRoundTrip) {
    const EmbeddingMatrix m(2, 3, {0.5, -0.25, 1.0, 3.0, 0.125, -2.0});
    std::stringstream buf;
    write_embeddings(buf, m);
    EXPECT_EQ(buf.str().substr(0, 8), "EMBMAT01");
    EXPECT_EQ(buf.str().size(), 8u + 8u + 6u * 4u);
    const auto back = read_embeddings(buf);
    ASSERT_EQ(back.rows(), 2u);
    ASSERT_EQ(back.dim(), 3u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.data()[i], m.data()[i]);

    std::stringstream truncated(buf.str().substr(0, 20));
    EXPECT_EQ(code_of([&] { read_embeddings(truncated); }), ErrorCode::ParseError);
    std::stringstream magic("NOTMAGIC");
    EXPECT_EQ(code_of([&] { read_embeddings(magic); }), ErrorCode::ParseError);

    const auto dir = scratch("emb");
    save_embeddings((dir / "m.bin").string(), m);
    EXPECT_EQ(load_embeddings((dir / "m.bin").string()).rows(), 2u);
}

TEST(Embeddings, HashingEmbedderIsDeterministic) {
    const HashingEmbedder e(64);
    const std::vector<std::string> labels{"inquire-insurance", "inquire-insurance", "answer-amount",
                                          "inquire-accident death"};
    const auto m = e.embed(labels);
    ASSERT_EQ(m.rows(), 4u);
    ASSERT_EQ(m.dim(), 64u);
    for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(m.row(0)[k], m.row(1)[k]);
    bool differs = false;
    for (std::size_t k = 0; k < 64; ++k) differs = differs || m.row(0)[k] != m.row(2)[k];
    EXPECT_TRUE(differs);
    const auto again = HashingEmbedder(64).embed(labels);
    for (std::size_t i = 0; i < m.data().size(); ++i) EXPECT_EQ(m.data()[i], again.data()[i]);
}

TEST(Embeddings, RemoteBatchesAndOrders) {
    std::atomic<int> calls{0};
    auto poster = std::make_shared<FunctionPoster>([&](const std::string& body) {
        ++calls;
        const auto req = json::parse(body);
        json data = json::array();
        const auto& input = req["input"];
        for (int i = static_cast<int>(input.size()) - 1; i >= 0; --i) {  // out of order
            const double len = static_cast<double>(input[i].get<std::string>().size());
            data.push_back({{"index", i}, {"embedding", {len, 1.0}}});
        }
        return HttpResponse{200, json{{"data", data}}.dump()};
    });
    RemoteEmbedderSpec spec{"http://x", "m", "", 1000, 0, 1, 2, 2};
    const RemoteEmbedder e(spec, poster);
    const std::vector<std::string> texts{"a", "bb", "ccc", "dddd", "eeeee"};
    const auto m = e.embed(texts);
    EXPECT_EQ(calls.load(), 3);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(m.row(i)[0], static_cast<double>(i + 1));

    auto failing = std::make_shared<FunctionPoster>([](const std::string&) { return HttpResponse{500, "x"}; });
    EXPECT_EQ(code_of([&] { RemoteEmbedder(spec, failing).embed(texts); }), ErrorCode::EndpointUnavailable);
}

TEST(Embeddings, FetchUsesCache) {
    const auto dir = scratch("cache");
    std::atomic<int> calls{0};
    auto poster = std::make_shared<FunctionPoster>([&](const std::string& body) {
        ++calls;
        const auto req = json::parse(body);
        json data = json::array();
        for (std::size_t i = 0; i < req["input"].size(); ++i)
            data.push_back({{"index", i}, {"embedding", {3.0, 4.0 + static_cast<double>(i)}}});
        return HttpResponse{200, json{{"data", data}}.dump()};
    });
    const auto recs = records({"one", "two"});
    EmbeddingSource src;
    src.endpoint = "http://x";
    src.model = "m";
    src.cache_dir = dir.string();
    src.initial_backoff_ms = 1;
    const auto a = load_or_fetch_embeddings(recs, src, poster);
    const auto b = load_or_fetch_embeddings(recs, src, poster);
    EXPECT_EQ(calls.load(), 1);
    EXPECT_TRUE(a.normalized());
    for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    EXPECT_TRUE(fs::exists(dir / ("embeddings-" + corpus_key(recs, "m") + ".bin")));

    EmbeddingSource both = src;
    both.path = (dir / "x.bin").string();
    EXPECT_EQ(code_of([&] { load_or_fetch_embeddings(recs, both, poster); }), ErrorCode::ConfigError);

    EmbeddingSource file;
    file.path = (dir / "three.bin").string();
    save_embeddings(file.path, EmbeddingMatrix(3, 2, {1, 0, 0, 1, 1, 1}));
    EXPECT_EQ(code_of([&] { load_or_fetch_embeddings(recs, file); }), ErrorCode::ShapeMismatch);
}

TEST(ClustersJsonl, RoundTrip) {
    const auto recs = records({"a", "b", "c", "d"});
    ClusterAssignment a;
    Cluster c0;
    c0.members = {0, 2};
    c0.label = parse_intent_label("inquire-x");
    c0.role = Role::Customer;
    c0.verdict = Verdict::Good;
    Cluster c1;
    c1.members = {1, 3};
    c1.low_confidence = true;
    a.clusters = {c0, c1};
    std::stringstream out;
    write_clusters_jsonl(out, a, recs);
    const std::string text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')),
              R"({"cluster_id":0,"label":"inquire-x","role":"customer","verdict":"Good","member_ids":["r0","r2"],"low_confidence":false})");
    EXPECT_NE(text.find(R"("label":null,"role":null,"verdict":null)"), std::string::npos);
    std::istringstream in(text);
    const auto back = read_clusters_jsonl(in, recs);
    ASSERT_EQ(back.clusters.size(), 2u);
    EXPECT_EQ(back.clusters[0].members, c0.members);
    EXPECT_EQ(back.clusters[0].label, c0.label);
    EXPECT_TRUE(back.clusters[1].low_confidence);
    EXPECT_FALSE(back.clusters[1].verdict);

    std::istringstream unknown(R"({"cluster_id":0,"member_ids":["zz"]})");
    EXPECT_EQ(code_of([&] { read_clusters_jsonl(unknown, recs); }), ErrorCode::UnknownId);
}

TEST(IterationsCsv, ReadsBack) {
    std::istringstream in(
        "epoch,n_cluster,good_clusters,bad_clusters,good_sentences,bad_sentences,raw_ratio,smoothed_ratio,chosen\n"
        "0,10,3,7,30,70,0.428571,0.375000,false\n"
        "0,30,20,10,200,100,2.000000,1.818182,true\n"
        "1,10,10,0,50,0,inf,10.000000,true\n");
    const auto logs = read_iterations_csv(in);
    ASSERT_EQ(logs.size(), 2u);
    EXPECT_EQ(logs[0].chosen_n, 30);
    EXPECT_EQ(logs[0].rows.size(), 2u);
    EXPECT_TRUE(std::isinf(logs[1].rows[0].raw_ratio));
    std::istringstream bad("epoch,n_cluster\nx,y\n");
    EXPECT_THROW(read_iterations_csv(bad), Error);
}

TEST(TextFiles, AtomicWrite) {
    const auto dir = scratch("text");
    const auto p = (dir / "sub" / "f.txt").string();
    write_text_file(p, "abc");
    EXPECT_EQ(read_text_file(p), "abc");
    write_text_file(p, "def");
    EXPECT_EQ(read_text_file(p), "def");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++entries;
    EXPECT_EQ(entries, 1u);
}
