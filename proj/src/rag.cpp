#include "grit/rag.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "grit/errors.hpp"

namespace grit {

namespace {

const std::string kInstrQueryFirst =
    "Optionally using the prior context answer the query prior to it";
const std::string kInstrDocFirst =
    "Answer the prior query while optionally using the context prior to it";
const std::string kAnswerLead = "The answer is";

const int kNl = tok::byte_offset + '\n';

void append_bytes(std::vector<int>& out, const std::string& s) {
    for (int id : tok::tokenize(s)) out.push_back(id);
}

// \n<|user|>\n{content}\n<|assistant|>\nThe answer is  -- spliced after a
// cached segment.
std::vector<int> suffix_tokens(const std::string& content) {
    std::vector<int> t{kNl, tok::user, kNl};
    append_bytes(t, content);
    t.push_back(kNl);
    t.push_back(tok::assistant);
    t.push_back(kNl);
    append_bytes(t, kAnswerLead);
    return t;
}

// <s><|user|>\n{content}\n<|assistant|>\nThe answer is
std::vector<int> user_prompt_tokens(const std::string& content) {
    std::vector<int> t{tok::bos, tok::user, kNl};
    append_bytes(t, content);
    t.push_back(kNl);
    t.push_back(tok::assistant);
    t.push_back(kNl);
    append_bytes(t, kAnswerLead);
    return t;
}

std::string bytes_of(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids)
        if (id >= tok::byte_offset && id < tok::vocab_size)
            out.push_back(static_cast<char>(id - tok::byte_offset));
    return out;
}

struct QueryEmbedding {
    std::vector<double> embedding;
    KVState kv;
    std::size_t token_count;
};

QueryEmbedding embed_query(const TransformerModel& model, const DocumentIndex& index,
                           const std::string& query, PoolingMode pooling) {
    NoGradGuard ng;
    FormattedSequence seq = format_embedding(std::nullopt, query);
    AttentionMode mode{index.embed_attention(), 0};
    auto [hidden, kv] = model.forward_hidden(seq.tokens, mode);
    Tensor pooled = pool(hidden, seq.pool_mask(), pooling);
    const ModelConfig& cfg = model.config();
    if (cfg.embedding_head_dim > 0)
        pooled = reshape(
            gelu(matmul(reshape(pooled, {1, cfg.d_model}), model.param("embed_head"))),
            {cfg.embedding_head_dim});
    return {pooled.data(), std::move(kv), seq.tokens.size()};
}

}  // namespace

// Layout per layer is (head, position, d_head); splice per head.
KVState concat_kv(const KVState& a, const KVState& b, const ModelConfig& cfg) {
    if (a.layers.size() != b.layers.size() || a.layers.size() != cfg.n_layers)
        throw usage_error("concat_kv: layer count mismatch");
    KVState out;
    out.token_count = a.token_count + b.token_count;
    out.attention_mode_used =
        (a.attention_mode_used == AttentionKind::Causal &&
         b.attention_mode_used == AttentionKind::Causal)
            ? AttentionKind::Causal
            : AttentionKind::Bidirectional;
    out.layers.resize(cfg.n_layers);
    std::size_t dh = cfg.d_head();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto& lo = out.layers[l];
        lo.k.resize(cfg.n_heads * out.token_count * dh);
        lo.v.resize(cfg.n_heads * out.token_count * dh);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            std::size_t off = h * out.token_count * dh;
            if (a.token_count) {
                std::copy_n(a.layers[l].k.begin() + h * a.token_count * dh, a.token_count * dh,
                            lo.k.begin() + off);
                std::copy_n(a.layers[l].v.begin() + h * a.token_count * dh, a.token_count * dh,
                            lo.v.begin() + off);
            }
            if (b.token_count) {
                std::copy_n(b.layers[l].k.begin() + h * b.token_count * dh, b.token_count * dh,
                            lo.k.begin() + off + a.token_count * dh);
                std::copy_n(b.layers[l].v.begin() + h * b.token_count * dh, b.token_count * dh,
                            lo.v.begin() + off + a.token_count * dh);
            }
        }
    }
    return out;
}

KVState drop_leading_tokens(const KVState& kv, std::size_t n, const ModelConfig& cfg) {
    if (n > kv.token_count) throw usage_error("drop_leading_tokens: not enough tokens");
    KVState out;
    out.token_count = kv.token_count - n;
    out.attention_mode_used = kv.attention_mode_used;
    out.layers.resize(cfg.n_layers);
    std::size_t dh = cfg.d_head();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto& lo = out.layers[l];
        lo.k.resize(cfg.n_heads * out.token_count * dh);
        lo.v.resize(cfg.n_heads * out.token_count * dh);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            std::copy_n(kv.layers[l].k.begin() + (h * kv.token_count + n) * dh,
                        out.token_count * dh, lo.k.begin() + h * out.token_count * dh);
            std::copy_n(kv.layers[l].v.begin() + (h * kv.token_count + n) * dh,
                        out.token_count * dh, lo.v.begin() + h * out.token_count * dh);
        }
    }
    return out;
}

std::vector<int> rag_prompt_tokens(const std::string& query, const std::string& doc_text,
                                   CacheMode mode, const RagOptions& opts) {
    switch (mode) {
        case CacheMode::NoRag:
            return user_prompt_tokens(query);
        case CacheMode::Rag: {
            if (opts.embed_format) {
                // Uncached twin of the matching caching mode.
                std::vector<int> prompt;
                if (opts.doc_first) {
                    prompt = format_embedding(std::nullopt, doc_text).tokens;
                    auto sfx = suffix_tokens(query + "\n\n" + kInstrDocFirst);
                    prompt.insert(prompt.end(), sfx.begin(), sfx.end());
                } else {
                    prompt = format_embedding(std::nullopt, query).tokens;
                    auto sfx = suffix_tokens(doc_text + "\n\n" + kInstrQueryFirst);
                    prompt.insert(prompt.end(), sfx.begin(), sfx.end());
                }
                return prompt;
            }
            if (opts.doc_first)
                return user_prompt_tokens(doc_text + "\n\n" + query + "\n\n" + kInstrDocFirst);
            return user_prompt_tokens(query + "\n\n" + doc_text + "\n\n" + kInstrQueryFirst);
        }
        case CacheMode::QueryCache:
            return suffix_tokens(doc_text + "\n\n" + kInstrQueryFirst);
        case CacheMode::DocCache:
            return suffix_tokens(query + "\n\n" + kInstrDocFirst);
        case CacheMode::QueryDocCache:
            return suffix_tokens(kInstrQueryFirst);
        case CacheMode::DocQueryCache:
            return suffix_tokens(kInstrDocFirst);
    }
    throw usage_error("rag_prompt_tokens: unreachable mode");
}

RagAnswer answer(const TransformerModel& model, const DocumentIndex& index,
                 const std::string& query, CacheMode mode, const RagOptions& opts) {
    auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& cfg = model.config();
    RagAnswer ans;

    if (mode != CacheMode::NoRag && index.fingerprint() != cfg.fingerprint())
        throw index_error("index fingerprint does not match the serving model");

    GenResult gen;
    if (mode == CacheMode::NoRag) {
        auto prompt = rag_prompt_tokens(query, "", mode, opts);
        gen = model.generate_greedy(prompt, opts.max_new);
        ans.prefill_tokens = prompt.size();
    } else {
        QueryEmbedding q = embed_query(model, index, query, opts.pooling);
        bool causal_emb = index.embed_attention() == AttentionKind::Causal;
        auto hits = retrieve(index, q.embedding, opts.top_k);
        std::size_t doc = hits.front().doc;
        ans.retrieved_doc = static_cast<long>(doc);
        const std::string& doc_text = index.text(doc);

        switch (mode) {
            case CacheMode::Rag: {
                auto prompt = rag_prompt_tokens(query, doc_text, mode, opts);
                gen = model.generate_greedy(prompt, opts.max_new);
                ans.prefill_tokens = prompt.size();
                break;
            }
            case CacheMode::QueryCache: {
                auto sfx = rag_prompt_tokens(query, doc_text, mode, opts);
                gen = model.generate_greedy(sfx, opts.max_new, &q.kv);
                ans.prefill_tokens = sfx.size();
                ans.cache_tokens_reused = q.kv.token_count;
                ans.causal_cache_equivalent = causal_emb;
                break;
            }
            case CacheMode::DocCache: {
                KVState dkv = index.doc_kv(doc, cfg);
                auto sfx = rag_prompt_tokens(query, doc_text, mode, opts);
                gen = model.generate_greedy(sfx, opts.max_new, &dkv);
                ans.prefill_tokens = sfx.size();
                ans.cache_tokens_reused = dkv.token_count;
                ans.causal_cache_equivalent = causal_emb;
                break;
            }
            case CacheMode::DocQueryCache: {
                // bos on both segments; the query keeps its <s>.
                KVState dkv = index.doc_kv(doc, cfg);
                KVState cache = concat_kv(dkv, q.kv, cfg);
                auto sfx = rag_prompt_tokens(query, doc_text, mode, opts);
                gen = model.generate_greedy(sfx, opts.max_new, &cache);
                ans.prefill_tokens = sfx.size();
                ans.cache_tokens_reused = cache.token_count;
                ans.causal_cache_equivalent = false;  // stitched segments
                break;
            }
            case CacheMode::QueryDocCache: {
                // Document segment is served without its leading <s>.
                KVState dkv = drop_leading_tokens(index.doc_kv(doc, cfg), 1, cfg);
                KVState cache = concat_kv(q.kv, dkv, cfg);
                auto sfx = rag_prompt_tokens(query, doc_text, mode, opts);
                gen = model.generate_greedy(sfx, opts.max_new, &cache);
                ans.prefill_tokens = sfx.size();
                ans.cache_tokens_reused = cache.token_count;
                ans.causal_cache_equivalent = false;
                break;
            }
            default:
                throw usage_error("answer: unreachable mode");
        }
    }

    ans.tokens = gen.tokens;
    ans.text = bytes_of(gen.tokens);
    ans.decode_tokens = gen.stats.decode_tokens;
    auto t1 = std::chrono::steady_clock::now();
    ans.wall_clock_s = std::chrono::duration<double>(t1 - t0).count();
    return ans;
}

std::vector<WorkloadItem> load_workload(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open workload: " + path);
    std::vector<WorkloadItem> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            WorkloadItem item;
            item.query = j.at("query").get<std::string>();
            if (j.contains("answers"))
                for (const auto& a : j["answers"]) item.answers.push_back(a.get<std::string>());
            out.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw parse_error("workload line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<BenchRow> bench_latency(const TransformerModel& model, const DocumentIndex& index,
                                    const std::vector<WorkloadItem>& workload,
                                    const std::vector<CacheMode>& modes, std::size_t repeats,
                                    const RagOptions& opts) {
    if (repeats < 3) throw usage_error("bench_latency: repeats must be at least 3");
    if (workload.empty()) throw input_error("bench_latency: empty workload");
    std::vector<BenchRow> rows;
    for (CacheMode mode : modes) {
        BenchRow row;
        row.mode = mode;
        std::vector<double> times;
        double prefill = 0.0, reused = 0.0;
        for (std::size_t r = 0; r < repeats; ++r)
            for (const auto& item : workload) {
                RagAnswer a = answer(model, index, item.query, mode, opts);
                times.push_back(a.wall_clock_s);
                prefill += static_cast<double>(a.prefill_tokens);
                reused += static_cast<double>(a.cache_tokens_reused);
            }
        double mean = 0.0;
        for (double t : times) mean += t;
        mean /= static_cast<double>(times.size());
        double var = 0.0;
        for (double t : times) var += (t - mean) * (t - mean);
        var /= static_cast<double>(times.size());
        row.mean_s = mean;
        row.stddev_s = std::sqrt(var);
        row.mean_prefill = prefill / static_cast<double>(times.size());
        row.mean_reused = reused / static_cast<double>(times.size());
        row.runs = times.size();
        rows.push_back(row);
    }
    return rows;
}

const char* cache_mode_name(CacheMode m) {
    switch (m) {
        case CacheMode::NoRag: return "no-rag";
        case CacheMode::Rag: return "rag";
        case CacheMode::QueryCache: return "query-cache";
        case CacheMode::DocCache: return "doc-cache";
        case CacheMode::QueryDocCache: return "query-doc-cache";
        case CacheMode::DocQueryCache: return "doc-query-cache";
    }
    return "?";
}

std::vector<std::string> cache_mode_names() {
    return {"no-rag", "rag", "query-cache", "doc-cache", "query-doc-cache", "doc-query-cache"};
}

CacheMode cache_mode_from_name(const std::string& name) {
    if (name == "no-rag") return CacheMode::NoRag;
    if (name == "rag") return CacheMode::Rag;
    if (name == "query-cache") return CacheMode::QueryCache;
    if (name == "doc-cache") return CacheMode::DocCache;
    if (name == "query-doc-cache") return CacheMode::QueryDocCache;
    if (name == "doc-query-cache") return CacheMode::DocQueryCache;
    std::string all;
    for (const auto& n : cache_mode_names()) all += (all.empty() ? "" : ", ") + n;
    throw usage_error("unknown cache mode '" + name + "' (valid: " + all + ")");
}

}  // namespace grit
