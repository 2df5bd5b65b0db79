"""End-to-end smoke tests for the Python bindings."""

import math

import pytest

import gritkit as gk


@pytest.fixture(scope="module")
def model():
    cfg = gk.ModelConfig()
    cfg.d_model = 16
    cfg.n_layers = 1
    cfg.n_heads = 2
    cfg.rng_seed = 3
    return gk.Model(cfg)


def test_tokenizer_round_trip():
    ids = gk.tokenize("hello world")
    assert gk.detokenize(ids) == "hello world"


def test_embedding_format_renders_markup():
    seq = gk.format_embedding("Represent this query for retrieval", "a query")
    text = seq.render()
    assert text.startswith("<s><|user|>\n")
    assert "<|embed|>\n" in text and text.endswith("a query")
    assert len(seq.pool_mask()) == len(seq.tokens)


def test_generative_format_masks_only_replies():
    seq = gk.format_generative([("user", "hi"), ("assistant", "yo")])
    assert "<|assistant|>" in seq.render()
    mask = seq.loss_mask()
    assert any(mask) and not all(mask)


def test_embed_and_generate(model):
    vec = model.embed("some text")
    assert len(vec) == 16
    out = model.generate(gk.tokenize("ab"), max_new=4)
    assert out.decode_tokens <= 4


def test_training_updates_and_reports(model):
    trips = [gk.EmbedSample("q%d" % i, "p%d" % i, "n%d" % i) for i in range(4)]
    chats = [gk.ChatSample([("user", "u%d" % i), ("assistant", "a")]) for i in range(4)]
    cfg = gk.TrainConfig()
    cfg.total_steps = 3
    cfg.lr_peak = 1e-3
    cfg.set_backward_scheme("split")
    reports = gk.train(model, trips, chats, cfg)
    assert [r.step for r in reports] == [1, 2, 3]
    assert all(math.isfinite(r.rep_loss) and math.isfinite(r.gen_loss) for r in reports)


def test_index_retrieve_and_rag(model, tmp_path):
    docs = ["fact %d holds" % i for i in range(6)]
    index = gk.build_index(model, docs, store_kv=True, attention="causal")
    assert index.doc_count == 6

    vec = model.embed("fact 2", attention="causal")
    hits = gk.retrieve(index, vec, 3)
    assert len(hits) == 3 and hits[0][1] >= hits[1][1]

    base = str(tmp_path / "idx")
    gk.save_index(index, base)
    loaded = gk.load_index(base)
    assert loaded.fingerprint == index.fingerprint

    ans = gk.answer(model, loaded, "what holds?", mode="doc-cache", max_new=4)
    assert ans.cache_tokens_reused > 0 and ans.causal_cache_equivalent


def test_cached_generation_matches_uncached(model):
    docs = ["alpha beta", "gamma delta"]
    index = gk.build_index(model, docs, store_kv=True, attention="causal")
    cached = gk.answer(model, index, "which letters?", mode="query-cache", max_new=4)
    plain = gk.answer(model, index, "which letters?", mode="rag", max_new=4,
                      embed_format=True)
    assert cached.tokens == plain.tokens
    assert cached.prefill_tokens + cached.cache_tokens_reused == plain.prefill_tokens


def test_rerank_is_permutation(model):
    docs = ["doc %d" % i for i in range(5)]
    index = gk.build_index(model, docs)
    order = gk.retrieve_then_rerank(model, index, "a query", k=3)
    assert sorted(order) == list(range(5))
    ranks, scores, warn = gk.rerank(model, "q", ["one", "two"])
    assert sorted(ranks) == [0, 1] and len(scores) == 2


def test_metrics():
    assert gk.ndcg_at_k([1.0, 0.0], 10) == pytest.approx(1.0)
    assert gk.map_score([0, 1]) == pytest.approx(0.5)
    assert gk.spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert gk.match_metric("The answer is X.", ["x"])
    with pytest.raises(ValueError):
        gk.ndcg_at_k([-1.0], 10)


def test_gradcheck_small(model):
    trips = [gk.EmbedSample("q", "p", "n")]
    report = gk.gradcheck(model, trips, samples_per_param=1, seed=1)
    assert report["max_rel_error"] < 1e-4


def test_checkpoint_round_trip(model, tmp_path):
    path = str(tmp_path / "model.ckpt")
    gk.save_checkpoint(model, path)
    clone = gk.load_checkpoint(path)
    assert clone.embed("same text") == model.embed("same text")
