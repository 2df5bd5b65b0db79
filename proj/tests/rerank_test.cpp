#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "grit/errors.hpp"
#include "grit/rerank.hpp"
#include "helpers.hpp"

using namespace grit;
using testutil::tiny_model;

namespace {

bool is_permutation_of_n(const std::vector<std::size_t>& order, std::size_t n) {
    if (order.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t i : order) {
        if (i >= n || seen[i]) return false;
        seen[i] = true;
    }
    return true;
}

}  // namespace

TEST_CASE("pairwise scores depend only on the candidate text") {
    TransformerModel model = tiny_model(16, 1, 2, 23);
    std::vector<std::string> cands = {"alpha passage", "beta passage", "gamma passage",
                                      "delta passage"};
    RerankConfig cfg;
    RerankOutcome base = rerank(model, "which passage", cands, cfg);
    REQUIRE(is_permutation_of_n(base.order, cands.size()));
    REQUIRE(base.scores.size() == cands.size());

    // The order sorts the scores descending (stable on ties).
    for (std::size_t i = 1; i < base.order.size(); ++i)
        CHECK(base.scores[base.order[i - 1]] >= base.scores[base.order[i]]);

    // Shuffle the candidates: per-text scores are identical and the ranked
    // texts come out in the same sequence.
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<std::string> shuffled;
    for (std::size_t i : perm) shuffled.push_back(cands[i]);
    RerankOutcome moved = rerank(model, "which passage", shuffled, cfg);
    for (std::size_t j = 0; j < perm.size(); ++j)
        CHECK(moved.scores[j] == base.scores[perm[j]]);
    std::vector<std::string> base_texts, moved_texts;
    for (std::size_t i : base.order) base_texts.push_back(cands[i]);
    for (std::size_t i : moved.order) moved_texts.push_back(shuffled[i]);
    CHECK(base_texts == moved_texts);
}

TEST_CASE("duplicate candidates keep their input order") {
    TransformerModel model = tiny_model(16, 1, 2, 23);
    std::vector<std::string> cands = {"same text", "same text", "same text"};
    RerankOutcome out = rerank(model, "q", cands, {});
    CHECK(out.scores[0] == out.scores[1]);
    CHECK(out.scores[1] == out.scores[2]);
    CHECK(out.order == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("single candidate short-circuits") {
    TransformerModel model = tiny_model(16, 1, 2, 23);
    model.instr.reset();
    RerankOutcome out = rerank(model, "q", {"only one"}, {});
    CHECK(out.order == std::vector<std::size_t>{0});
    CHECK_FALSE(out.parse_warning);
    CHECK(model.instr.forwards == 0);  // no model call needed
}

TEST_CASE("listwise reranking always yields a valid permutation") {
    ModelConfig big;
    big.d_model = 16;
    big.n_layers = 1;
    big.n_heads = 2;
    big.max_seq_len = 512;
    big.rng_seed = 29;
    TransformerModel model(big);
    RerankConfig cfg;
    cfg.method = RerankMethod::PermutationGeneration;
    std::vector<std::string> cands = {"first doc", "second doc", "third doc"};
    RerankOutcome out = rerank(model, "pick one", cands, cfg);
    CHECK(is_permutation_of_n(out.order, cands.size()));
    // An unusable generation keeps the original order and says so.
    if (out.parse_warning) CHECK(out.order == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("retrieve_then_rerank splices the reranked head onto the retrieval tail") {
    TransformerModel model = tiny_model(16, 1, 2, 23);
    std::vector<std::string> docs;
    for (int i = 0; i < 8; ++i) docs.push_back("doc number " + std::to_string(i));
    DocumentIndex index = build_index(model, docs, false);

    // Plain retrieval order via the same embedding path.
    NoGradGuard ng;
    FormattedSequence seq = format_embedding(std::nullopt, "a query");
    Tensor q = model.embed(seq, AttentionMode{index.embed_attention(), 0}, PoolingMode::Mean);
    auto hits = retrieve(index, q.data(), index.doc_count());

    RerankConfig cfg;
    cfg.k = 3;
    auto order = retrieve_then_rerank(model, index, "a query", cfg);
    REQUIRE(is_permutation_of_n(order, docs.size()));
    // Head is a permutation of the top-k retrieval hits.
    std::vector<std::size_t> head(order.begin(), order.begin() + 3), top;
    for (std::size_t i = 0; i < 3; ++i) top.push_back(hits[i].doc);
    std::sort(head.begin(), head.end());
    std::sort(top.begin(), top.end());
    CHECK(head == top);
    // Tail keeps the retrieval order untouched.
    for (std::size_t i = 3; i < order.size(); ++i) CHECK(order[i] == hits[i].doc);

    // k = 1 reduces to plain retrieval.
    RerankConfig k1;
    k1.k = 1;
    auto plain = retrieve_then_rerank(model, index, "a query", k1);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == hits[i].doc);
}

TEST_CASE("rerank argument guards") {
    TransformerModel model = tiny_model(16, 1, 2, 23);
    CHECK_THROWS_AS(rerank(model, "q", {}, {}), input_error);
    RerankConfig bad;
    bad.k = 0;
    CHECK_THROWS_AS(rerank(model, "q", {"a", "b"}, bad), config_error);
}

TEST_CASE("eval records load and validate") {
    {
        std::ofstream f("/tmp/rerank_eval_ok.jsonl");
        f << R"({"query":"q1","docs":["a","b"],"rels":[1,0]})" << "\n";
        f << R"({"query":"q2","docs":["c"],"rels":[2.5]})" << "\n";
    }
    auto recs = load_eval_records("/tmp/rerank_eval_ok.jsonl");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].docs.size() == 2);
    CHECK(recs[1].rels[0] == 2.5);

    {
        std::ofstream f("/tmp/rerank_eval_bad.jsonl");
        f << R"({"query":"q1","docs":["a","b"],"rels":[1]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_eval_records("/tmp/rerank_eval_bad.jsonl"),
                         doctest::Contains("line 1"), parse_error);
    {
        std::ofstream f("/tmp/rerank_eval_bad.jsonl");
        f << R"({"query":"q1","docs":["a"],"rels":[-1]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_eval_records("/tmp/rerank_eval_bad.jsonl"),
                         doctest::Contains("negative"), parse_error);
    CHECK_THROWS_AS(load_eval_records("/tmp/missing_eval.jsonl"), io_error);
    std::remove("/tmp/rerank_eval_ok.jsonl");
    std::remove("/tmp/rerank_eval_bad.jsonl");
}

TEST_CASE("method names round-trip") {
    for (RerankMethod m : {RerankMethod::PairwiseLogProb, RerankMethod::PermutationGeneration})
        CHECK(rerank_method_from_name(rerank_method_name(m)) == m);
    CHECK_THROWS_AS(rerank_method_from_name("bubble-sort"), usage_error);
}
