#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "grit/errors.hpp"
#include "grit/model.hpp"
#include "helpers.hpp"

using namespace grit;
using testutil::tiny_model;

TEST_CASE("init determinism and parameter count") {
    TransformerModel a = tiny_model(16, 2, 2, 77);
    TransformerModel b = tiny_model(16, 2, 2, 77);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].second.data() == b.parameters()[i].second.data());

    // Closed-form count: tok_emb + lm_head (vocab*d each), final norm (d),
    // per layer: wq,wk,wv,wo (d*d), w1 (d*4d), w2 (4d*d), two norms (d).
    std::size_t d = 16, v = tok::vocab_size, L = 2;
    std::size_t expect = 2 * v * d + d + L * (4 * d * d + 8 * d * d + 2 * d);
    CHECK(a.parameter_count() == expect);

    ModelConfig bad;
    bad.d_model = 10;
    bad.n_heads = 4;
    CHECK_THROWS_AS(bad.validate(), config_error);
    ModelConfig bad2;
    bad2.embedding_head_dim = 64;
    bad2.d_model = 64;
    CHECK_THROWS_AS(bad2.validate(), config_error);
}

TEST_CASE("causal prefix invariance is bitwise") {
    TransformerModel model = tiny_model();
    std::vector<int> t1 = tok::tokenize("the quick brown fox");
    std::vector<int> t2 = t1;
    for (std::size_t i = 8; i < t2.size(); ++i) t2[i] = tok::byte_offset + 'Z';

    auto [h1, kv1] = model.forward_hidden(t1, AttentionMode::causal());
    auto [h2, kv2] = model.forward_hidden(t2, AttentionMode::causal());
    std::size_t d = model.config().d_model;
    for (std::size_t pos = 0; pos < 8; ++pos)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(h1.at(pos, j) == h2.at(pos, j));  // bitwise
}

TEST_CASE("bidirectional position 0 sees last-token edits") {
    TransformerModel model = tiny_model();
    std::vector<int> t1 = tok::tokenize("abcdefgh");
    std::vector<int> t2 = t1;
    t2.back() = tok::byte_offset + '!';
    auto [h1, k1] = model.forward_hidden(t1, AttentionMode::bidirectional());
    auto [h2, k2] = model.forward_hidden(t2, AttentionMode::bidirectional());
    double diff = 0;
    for (std::size_t j = 0; j < model.config().d_model; ++j)
        diff += std::abs(h1.at(0, j) - h2.at(0, j));
    CHECK(diff > 0.0);
}

TEST_CASE("prefix attention: prefix all-to-all, causal after") {
    TransformerModel model = tiny_model();
    std::vector<int> t1 = tok::tokenize("abcdefgh");
    std::vector<int> t2 = t1;
    t2[6] = tok::byte_offset + 'Q';  // edit beyond the prefix
    auto [h1, k1] = model.forward_hidden(t1, AttentionMode::prefix(4));
    auto [h2, k2] = model.forward_hidden(t2, AttentionMode::prefix(4));
    // Positions < 4 attend only within the prefix: untouched by the edit.
    for (std::size_t pos = 0; pos < 4; ++pos)
        for (std::size_t j = 0; j < model.config().d_model; ++j)
            CHECK(h1.at(pos, j) == h2.at(pos, j));
    // Position 4 attends prefix + itself causally; editing position 6 cannot
    // reach it, but position 7 must see it.
    double diff7 = 0;
    for (std::size_t j = 0; j < model.config().d_model; ++j)
        diff7 += std::abs(h1.at(7, j) - h2.at(7, j));
    CHECK(diff7 > 0.0);
}

TEST_CASE("pooling closed forms and exclusivity") {
    Tensor hidden = Tensor::from_data({3, 2}, {1, 2, 10, 20, 100, 200});
    std::vector<bool> mask{false, true, true};

    Tensor mean = pool(hidden, mask, PoolingMode::Mean);
    CHECK(mean.data()[0] == doctest::Approx(55.0));
    CHECK(mean.data()[1] == doctest::Approx(110.0));

    Tensor wm = pool(hidden, mask, PoolingMode::WeightedMean);
    CHECK(wm.data()[0] == doctest::Approx(10.0 / 3 + 200.0 / 3));
    CHECK(wm.data()[1] == doctest::Approx(20.0 / 3 + 400.0 / 3));

    Tensor last = pool(hidden, mask, PoolingMode::LastToken);
    CHECK(last.data()[0] == 100.0);
    CHECK(last.data()[1] == 200.0);

    // Single masked position: all three modes agree.
    std::vector<bool> one{false, true, false};
    for (PoolingMode m : {PoolingMode::Mean, PoolingMode::WeightedMean, PoolingMode::LastToken}) {
        Tensor p = pool(hidden, one, m);
        CHECK(p.data()[0] == 10.0);
        CHECK(p.data()[1] == 20.0);
    }

    // Exclusivity: unmasked rows contribute exactly zero.
    Tensor hidden2 = Tensor::from_data({3, 2}, {999, -999, 10, 20, 100, 200});
    Tensor mean2 = pool(hidden2, mask, PoolingMode::Mean);
    CHECK(mean2.data() == mean.data());

    CHECK_THROWS_AS(pool(hidden, {false, false, false}, PoolingMode::Mean),
                    degenerate_input_error);
}

TEST_CASE("embed shapes, determinism, and mode sensitivity") {
    TransformerModel model = tiny_model(16, 1, 2, 5, 8);
    FormattedSequence seq = format_embedding(std::nullopt, "hello world");
    Tensor e1 = model.embed(seq, AttentionMode::bidirectional(), PoolingMode::Mean);
    Tensor e2 = model.embed(seq, AttentionMode::bidirectional(), PoolingMode::Mean);
    CHECK(e1.size() == 8);  // embedding head projects down
    CHECK(e1.data() == e2.data());
    CHECK(cosine_similarity(e1, e2).item() == doctest::Approx(1.0).epsilon(1e-12));

    Tensor ec = model.embed(seq, AttentionMode::causal(), PoolingMode::Mean);
    double d = 0;
    for (std::size_t i = 0; i < e1.size(); ++i) d += std::abs(e1.data()[i] - ec.data()[i]);
    CHECK(d > 0.0);
}

TEST_CASE("lm head shape and gradient isolation") {
    TransformerModel model = tiny_model();
    std::vector<int> toks = tok::tokenize("test");
    auto [hidden, kv] = model.forward_hidden(toks, AttentionMode::causal());
    Tensor logits = model.lm_logits(hidden);
    CHECK(logits.rows() == toks.size());
    CHECK(logits.cols() == tok::vocab_size);

    // Pure embedding loss leaves the LM head with zero grad.
    model.zero_grad();
    FormattedSequence seq = format_embedding(std::nullopt, "abc");
    Tensor e = model.embed(seq, AttentionMode::bidirectional(), PoolingMode::Mean);
    sum_all(e).backward();
    const auto& head_grad = model.param("lm_head").node()->grad;
    bool any = false;
    for (double g : head_grad) any = any || g != 0.0;
    CHECK(!any);
    model.zero_grad();
}

TEST_CASE("incremental decode equals full forward, layers 1-4") {
    for (std::size_t layers = 1; layers <= 4; ++layers) {
        TransformerModel model = tiny_model(16, layers, 2, 100 + layers);
        std::vector<int> toks = tok::tokenize("incremental decoding check");
        auto [full, kv_full] = model.forward_hidden(toks, AttentionMode::causal());

        KVState cache;
        double worst = 0;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            auto [h, kv] = model.forward_hidden({toks[t]}, AttentionMode::causal(), &cache);
            cache = std::move(kv);
            for (std::size_t j = 0; j < model.config().d_model; ++j)
                worst = std::max(worst, std::abs(h.at(0, j) - full.at(t, j)));
        }
        CHECK(worst < 1e-9);
        CHECK(cache.token_count == toks.size());
    }
}

TEST_CASE("cache with non-causal mode is a usage error") {
    TransformerModel model = tiny_model();
    auto [h, kv] = model.forward_hidden(tok::tokenize("ab"), AttentionMode::causal());
    CHECK_THROWS_AS(model.forward_hidden(tok::tokenize("cd"), AttentionMode::bidirectional(), &kv),
                    usage_error);
}

TEST_CASE("max_seq_len overflow is a capacity error") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 8;
    TransformerModel model(cfg);
    CHECK_THROWS_AS(model.forward_hidden(tok::tokenize("way too many tokens here"),
                                         AttentionMode::causal()),
                    capacity_error);
}

TEST_CASE("greedy generation stats and determinism") {
    TransformerModel model = tiny_model();
    std::vector<int> prompt = tok::tokenize("once upon");

    GenResult none = model.generate_greedy(prompt, 0);
    CHECK(none.tokens.empty());
    CHECK(none.stats.prefill_tokens == prompt.size());

    GenResult a = model.generate_greedy(prompt, 10);
    GenResult b = model.generate_greedy(prompt, 10);
    CHECK(a.tokens == b.tokens);

    // With most of the prompt cached, prefill counts only the rest.
    std::vector<int> head(prompt.begin(), prompt.end() - 1);
    auto [h, kv] = model.forward_hidden(head, AttentionMode::causal());
    GenResult cached = model.generate_greedy({prompt.back()}, 10, &kv);
    CHECK(cached.stats.prefill_tokens == 1);
    CHECK(cached.tokens == a.tokens);
}

TEST_CASE("checkpoint round-trip is bit exact") {
    TransformerModel model = tiny_model(16, 2, 2, 123, 8);
    std::string path = "/tmp/model_test.ckpt";
    save_checkpoint(model, path);
    TransformerModel loaded = load_checkpoint(path);
    CHECK(loaded.config().fingerprint() == model.config().fingerprint());
    REQUIRE(loaded.parameters().size() == model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        CHECK(loaded.parameters()[i].first == model.parameters()[i].first);
        CHECK(loaded.parameters()[i].second.data() == model.parameters()[i].second.data());
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_checkpoint("/tmp/does_not_exist.ckpt"), io_error);
}

TEST_CASE("name helpers round trip") {
    for (auto k : {AttentionKind::Causal, AttentionKind::Bidirectional,
                   AttentionKind::PrefixBidirectional})
        CHECK(attention_kind_from_name(attention_kind_name(k)) == k);
    for (auto m : {PoolingMode::Mean, PoolingMode::WeightedMean, PoolingMode::LastToken})
        CHECK(pooling_mode_from_name(pooling_mode_name(m)) == m);
    CHECK_THROWS_AS(attention_kind_from_name("sideways"), config_error);
}
