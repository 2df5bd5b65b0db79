#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grit/errors.hpp"
#include "grit/rag.hpp"
#include "helpers.hpp"

using namespace grit;
using testutil::tiny_model;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string substitute(std::string text, const std::string& key, const std::string& value) {
    std::size_t pos;
    while ((pos = text.find(key)) != std::string::npos) text.replace(pos, key.size(), value);
    return text;
}

std::vector<std::string> small_docs() {
    return {"d0 amber", "d1 birch", "d2 cobalt", "d3 dune"};
}

// Position-tagged synthetic cache: entry (layer l, head h, pos t, dim j)
// holds a unique value so splices are fully checkable.
KVState synthetic_kv(const ModelConfig& cfg, std::size_t tokens, double base,
                     AttentionKind mode = AttentionKind::Causal) {
    KVState kv;
    kv.token_count = tokens;
    kv.attention_mode_used = mode;
    kv.layers.resize(cfg.n_layers);
    std::size_t dh = cfg.d_head();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        kv.layers[l].k.resize(cfg.n_heads * tokens * dh);
        kv.layers[l].v.resize(cfg.n_heads * tokens * dh);
        for (std::size_t h = 0; h < cfg.n_heads; ++h)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t j = 0; j < dh; ++j) {
                    double tag = base + 1000.0 * double(l) + 100.0 * double(h) +
                                 10.0 * double(t) + double(j);
                    kv.layers[l].k[(h * tokens + t) * dh + j] = tag;
                    kv.layers[l].v[(h * tokens + t) * dh + j] = -tag;
                }
    }
    return kv;
}

}  // namespace

TEST_CASE("prompt renderings match the golden files") {
    const std::string query = "what was the name of the flagship";
    const std::string doc = "The flagship was called the Executor.";
    std::string dir = std::string(FIXTURE_DIR) + "/golden/";
    auto golden = [&](const std::string& name) {
        return substitute(substitute(read_file(dir + name), "{query}", query), "{doc}", doc);
    };

    RagOptions qf;
    CHECK(tok::render(rag_prompt_tokens(query, doc, CacheMode::Rag, qf)) ==
          golden("rag_query_first.txt"));
    RagOptions df;
    df.doc_first = true;
    CHECK(tok::render(rag_prompt_tokens(query, doc, CacheMode::Rag, df)) ==
          golden("rag_doc_first.txt"));
    CHECK(tok::render(rag_prompt_tokens(query, doc, CacheMode::QueryCache, {})) ==
          golden("query_cache_suffix.txt"));
    CHECK(tok::render(rag_prompt_tokens(query, doc, CacheMode::DocCache, {})) ==
          golden("doc_cache_suffix.txt"));

    // The stitched modes carry only the instruction in their suffix.
    std::string qd = tok::render(rag_prompt_tokens(query, doc, CacheMode::QueryDocCache, {}));
    CHECK(qd.find("Optionally using the prior context") != std::string::npos);
    CHECK(qd.find(doc) == std::string::npos);
    std::string dq = tok::render(rag_prompt_tokens(query, doc, CacheMode::DocQueryCache, {}));
    CHECK(dq.find("Answer the prior query") != std::string::npos);
    CHECK(dq.find(query) == std::string::npos);

    // No-RAG ignores the document entirely.
    CHECK(tok::render(rag_prompt_tokens(query, doc, CacheMode::NoRag, {})).find(doc) ==
          std::string::npos);
}

TEST_CASE("kv splicing is position-exact") {
    ModelConfig cfg = tiny_model().config();
    KVState a = synthetic_kv(cfg, 3, 0.0);
    KVState b = synthetic_kv(cfg, 2, 0.5);

    KVState ab = concat_kv(a, b, cfg);
    CHECK(ab.token_count == 5);
    CHECK(ab.attention_mode_used == AttentionKind::Causal);
    std::size_t dh = cfg.d_head();
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        for (std::size_t h = 0; h < cfg.n_heads; ++h)
            for (std::size_t t = 0; t < 5; ++t)
                for (std::size_t j = 0; j < dh; ++j) {
                    double expect = (t < 3)
                                        ? a.layers[l].k[(h * 3 + t) * dh + j]
                                        : b.layers[l].k[(h * 2 + (t - 3)) * dh + j];
                    CHECK(ab.layers[l].k[(h * 5 + t) * dh + j] == expect);
                    CHECK(ab.layers[l].v[(h * 5 + t) * dh + j] == -expect);
                }

    // Dropping the first segment recovers the second exactly.
    KVState tail = drop_leading_tokens(ab, 3, cfg);
    CHECK(tail.token_count == 2);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        CHECK(tail.layers[l].k == b.layers[l].k);
        CHECK(tail.layers[l].v == b.layers[l].v);
    }

    // A bidirectional ingredient poisons the causal flag.
    KVState bb = synthetic_kv(cfg, 2, 0.5, AttentionKind::Bidirectional);
    CHECK(concat_kv(a, bb, cfg).attention_mode_used == AttentionKind::Bidirectional);

    CHECK_THROWS_AS(drop_leading_tokens(b, 3, cfg), usage_error);
    KVState wrong;
    wrong.layers.resize(cfg.n_layers + 1);
    CHECK_THROWS_AS(concat_kv(a, wrong, cfg), usage_error);
}

TEST_CASE("concat and drop invert a real forward split") {
    TransformerModel model = tiny_model();
    const ModelConfig& cfg = model.config();
    NoGradGuard ng;
    std::vector<int> toks = tok::tokenize("the quick brown fox jumps");
    toks.insert(toks.begin(), tok::bos);

    auto [h_full, kv_full] = model.forward_hidden(toks, AttentionMode::causal());
    std::vector<int> head(toks.begin(), toks.begin() + 4);
    auto [h_head, kv_head] = model.forward_hidden(head, AttentionMode::causal());

    KVState tail = drop_leading_tokens(kv_full, 4, cfg);
    KVState stitched = concat_kv(kv_head, tail, cfg);
    REQUIRE(stitched.token_count == kv_full.token_count);
    double worst = 0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        for (std::size_t i = 0; i < kv_full.layers[l].k.size(); ++i) {
            worst = std::max(worst,
                             std::abs(stitched.layers[l].k[i] - kv_full.layers[l].k[i]));
            worst = std::max(worst,
                             std::abs(stitched.layers[l].v[i] - kv_full.layers[l].v[i]));
        }
    CHECK(worst < 1e-12);
}

TEST_CASE("cached generation is token-identical to its uncached twin") {
    // Causal embedding attention makes the cached prefix equal the uncached
    // prompt's prefix exactly, so greedy outputs must match token for token.
    TransformerModel model = tiny_model(16, 1, 2, 19);
    DocumentIndex index = build_index(model, small_docs(), true, AttentionMode::causal());

    for (const std::string& query : {"q amber", "q cobalt", "q dune"}) {
        RagOptions cached;
        cached.max_new = 4;
        RagAnswer qc = answer(model, index, query, CacheMode::QueryCache, cached);
        RagOptions twin = cached;
        twin.embed_format = true;
        RagAnswer plain = answer(model, index, query, CacheMode::Rag, twin);
        CHECK(qc.retrieved_doc == plain.retrieved_doc);
        CHECK(qc.tokens == plain.tokens);
        CHECK(qc.causal_cache_equivalent);
        // Accounting identity: cached prefill + reused = uncached prefill.
        CHECK(qc.prefill_tokens + qc.cache_tokens_reused == plain.prefill_tokens);

        RagOptions dcached = cached;
        RagAnswer dc = answer(model, index, query, CacheMode::DocCache, dcached);
        RagOptions dtwin = cached;
        dtwin.embed_format = true;
        dtwin.doc_first = true;
        RagAnswer dplain = answer(model, index, query, CacheMode::Rag, dtwin);
        CHECK(dc.tokens == dplain.tokens);
        CHECK(dc.causal_cache_equivalent);
        CHECK(dc.prefill_tokens + dc.cache_tokens_reused == dplain.prefill_tokens);
    }
}

TEST_CASE("bidirectional caches run but report non-equivalence") {
    TransformerModel model = tiny_model(16, 1, 2, 19);
    DocumentIndex index = build_index(model, small_docs(), true);  // bidirectional
    RagOptions opts;
    opts.max_new = 3;
    RagAnswer qc = answer(model, index, "q birch", CacheMode::QueryCache, opts);
    CHECK_FALSE(qc.causal_cache_equivalent);
    for (CacheMode m : {CacheMode::QueryDocCache, CacheMode::DocQueryCache}) {
        RagAnswer a = answer(model, index, "q birch", m, opts);
        CHECK_FALSE(a.causal_cache_equivalent);
        CHECK(a.cache_tokens_reused > 0);
        CHECK(a.retrieved_doc >= 0);
    }
    // The stitched query-doc cache drops the document's leading <s>.
    RagAnswer qd = answer(model, index, "q birch", CacheMode::QueryDocCache, opts);
    RagAnswer dq = answer(model, index, "q birch", CacheMode::DocQueryCache, opts);
    CHECK(qd.cache_tokens_reused + 1 == dq.cache_tokens_reused);
}

TEST_CASE("serving guards") {
    TransformerModel model = tiny_model(16, 1, 2, 19);
    DocumentIndex no_kv = build_index(model, small_docs(), false);
    RagOptions opts;
    opts.max_new = 2;
    CHECK_THROWS_WITH_AS(answer(model, no_kv, "q", CacheMode::DocCache, opts),
                         doctest::Contains("--store-kv"), capability_error);
    CHECK_THROWS_AS(answer(model, no_kv, "q", CacheMode::DocQueryCache, opts),
                    capability_error);

    // An index built under a different configuration is rejected for every
    // RAG mode, while no-rag never consults the index at all.
    ModelConfig cfg2 = model.config();
    cfg2.n_heads = 1;
    TransformerModel narrow(cfg2);
    DocumentIndex foreign = build_index(narrow, small_docs(), true);
    CHECK_THROWS_AS(answer(model, foreign, "q", CacheMode::Rag, opts), index_error);
    CHECK(answer(model, foreign, "q", CacheMode::NoRag, opts).retrieved_doc == -1);
}

TEST_CASE("workload loading") {
    auto items = load_workload(std::string(FIXTURE_DIR) + "/workload.jsonl");
    REQUIRE(items.size() == 8);
    CHECK_FALSE(items[0].query.empty());
    CHECK_FALSE(items[0].answers.empty());

    {
        std::ofstream bad("/tmp/rag_test_bad.jsonl");
        bad << R"({"query": "ok"})" << "\n" << "not json\n";
    }
    CHECK_THROWS_WITH_AS(load_workload("/tmp/rag_test_bad.jsonl"), doctest::Contains("line 2"),
                         parse_error);
    CHECK_THROWS_AS(load_workload("/tmp/missing_workload.jsonl"), io_error);
    std::remove("/tmp/rag_test_bad.jsonl");
}

TEST_CASE("latency bench shape and guards") {
    TransformerModel model = tiny_model(16, 1, 2, 19);
    DocumentIndex index = build_index(model, small_docs(), true, AttentionMode::causal());
    std::vector<WorkloadItem> load = {{"q amber", {}}, {"q dune", {}}};
    RagOptions opts;
    opts.max_new = 2;

    auto rows = bench_latency(model, index, load, {CacheMode::Rag, CacheMode::DocCache}, 3, opts);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        CHECK(row.runs == 6);
        CHECK(row.mean_s > 0.0);
        CHECK(row.stddev_s >= 0.0);
        CHECK(row.mean_prefill > 0.0);
    }
    CHECK(rows[0].mean_reused == 0.0);
    CHECK(rows[1].mean_reused > 0.0);
    // The cached mode prefills strictly fewer tokens on average.
    CHECK(rows[1].mean_prefill < rows[0].mean_prefill);

    CHECK_THROWS_AS(bench_latency(model, index, load, {CacheMode::Rag}, 2, opts), usage_error);
    CHECK_THROWS_AS(bench_latency(model, index, {}, {CacheMode::Rag}, 3, opts), input_error);
}

TEST_CASE("cache mode names round-trip") {
    for (const std::string& name : cache_mode_names())
        CHECK(cache_mode_name(cache_mode_from_name(name)) == name);
    CHECK_THROWS_WITH_AS(cache_mode_from_name("turbo"), doctest::Contains("query-doc-cache"),
                         usage_error);
}
