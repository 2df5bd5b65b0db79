#include "grit/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "grit/errors.hpp"

namespace grit {

namespace {

constexpr char kIndexMagic[4] = {'G', 'R', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

const std::vector<float>& DocumentIndex::embedding(std::size_t doc) const {
    if (doc >= embeddings_.size()) throw index_error("index: document id out of range");
    return embeddings_[doc];
}

const std::string& DocumentIndex::text(std::size_t doc) const {
    if (doc >= texts_.size()) throw index_error("index: document id out of range");
    return texts_[doc];
}

std::size_t DocumentIndex::kv_token_count(std::size_t doc) const {
    if (doc >= kv_tokens_.size()) throw index_error("index: document id out of range");
    return kv_tokens_[doc];
}

std::string serialize_kv(const KVState& kv) {
    std::string blob;
    for (const auto& layer : kv.layers) {
        for (double v : layer.k) {
            float f = static_cast<float>(v);
            blob.append(reinterpret_cast<const char*>(&f), 4);
        }
        for (double v : layer.v) {
            float f = static_cast<float>(v);
            blob.append(reinterpret_cast<const char*>(&f), 4);
        }
    }
    return blob;
}

KVState deserialize_kv(const std::string& blob, const ModelConfig& cfg, AttentionKind mode) {
    std::size_t per_pos = 2 * cfg.n_layers * cfg.n_heads * cfg.d_head() * 4;
    if (per_pos == 0 || blob.size() % per_pos != 0)
        throw integrity_error("kv blob size does not match the model configuration");
    std::size_t tokens = blob.size() / per_pos;
    KVState kv;
    kv.token_count = tokens;
    kv.attention_mode_used = mode;
    kv.layers.resize(cfg.n_layers);
    const char* p = blob.data();
    auto read_block = [&](std::vector<double>& out) {
        out.resize(cfg.n_heads * tokens * cfg.d_head());
        for (double& v : out) {
            float f;
            std::memcpy(&f, p, 4);
            p += 4;
            v = static_cast<double>(f);
        }
    };
    for (auto& layer : kv.layers) {
        read_block(layer.k);
        read_block(layer.v);
    }
    return kv;
}

KVState DocumentIndex::doc_kv(std::size_t doc, const ModelConfig& cfg) const {
    if (!kv_present_)
        throw capability_error("index has no KV states; rebuild with --store-kv");
    if (doc >= texts_.size()) throw index_error("index: document id out of range");
    if (kv_blobs_[doc].empty()) {
        std::ifstream in(kv_path_, std::ios::binary);
        if (!in) throw io_error("cannot open KV file: " + kv_path_);
        in.seekg(static_cast<std::streamoff>(kv_offsets_[doc]));
        std::string blob(kv_sizes_[doc], '\0');
        in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!in)
            throw integrity_error("truncated KV blob for document " + std::to_string(doc));
        kv_bytes_read_ += blob.size();
        kv_blobs_[doc] = std::move(blob);
    }
    return deserialize_kv(kv_blobs_[doc], cfg, embed_attention_);
}

DocumentIndex build_index(const TransformerModel& model, const std::vector<std::string>& docs,
                          bool store_kv, AttentionMode emb_attention, PoolingMode pooling) {
    if (docs.empty()) throw input_error("build_index: no documents");
    NoGradGuard ng;
    const ModelConfig& cfg = model.config();

    DocumentIndex index;
    index.dim_ = cfg.embedding_head_dim > 0 ? cfg.embedding_head_dim : cfg.d_model;
    index.kv_present_ = store_kv;
    index.fingerprint_ = cfg.fingerprint();
    index.embed_attention_ = emb_attention.kind;

    for (std::size_t i = 0; i < docs.size(); ++i) {
        FormattedSequence seq;
        try {
            seq = format_embedding(std::nullopt, docs[i]);
            if (seq.tokens.size() > cfg.max_seq_len)
                throw capacity_error("document of " + std::to_string(seq.tokens.size()) +
                                     " tokens exceeds max_seq_len " +
                                     std::to_string(cfg.max_seq_len));
        } catch (const error& e) {
            index.last_build_report.skipped.emplace_back(i, e.what());
            continue;
        }
        // Exactly one forward whether or not KV is kept.
        auto [hidden, kv] = model.forward_hidden(seq.tokens, emb_attention);
        Tensor pooled = pool(hidden, seq.pool_mask(), pooling);
        if (cfg.embedding_head_dim > 0)
            pooled = reshape(gelu(matmul(reshape(pooled, {1, cfg.d_model}),
                                         model.param("embed_head"))),
                             {cfg.embedding_head_dim});
        std::vector<float> emb(pooled.size());
        for (std::size_t j = 0; j < emb.size(); ++j)
            emb[j] = static_cast<float>(pooled.data()[j]);
        index.embeddings_.push_back(std::move(emb));
        index.texts_.push_back(docs[i]);
        index.kv_tokens_.push_back(kv.token_count);
        index.kv_blobs_.push_back(store_kv ? serialize_kv(kv) : std::string());
        index.last_build_report.built++;
    }
    if (index.texts_.empty()) throw input_error("build_index: every document was skipped");
    return index;
}

std::vector<RetrievalHit> retrieve(const DocumentIndex& index,
                                   const std::vector<double>& query_embedding, std::size_t k) {
    if (k < 1) throw usage_error("retrieve: k must be at least 1");
    if (query_embedding.size() != index.embedding_dim())
        throw shape_error("retrieve: embedding dimension mismatch");
    long double qn2 = 0.0L;
    for (double v : query_embedding) qn2 += static_cast<long double>(v) * v;
    if (qn2 == 0.0L) throw degenerate_input_error("retrieve: zero query embedding");
    double qn = std::sqrt(static_cast<double>(qn2));

    std::vector<RetrievalHit> hits(index.doc_count());
    for (std::size_t d = 0; d < index.doc_count(); ++d) {
        const auto& e = index.embedding(d);
        long double dot = 0.0L, en2 = 0.0L;
        for (std::size_t j = 0; j < e.size(); ++j) {
            dot += static_cast<long double>(query_embedding[j]) * e[j];
            en2 += static_cast<long double>(e[j]) * e[j];
        }
        double cosv = en2 == 0.0L ? 0.0
                                  : static_cast<double>(dot) /
                                        (qn * std::sqrt(static_cast<double>(en2)));
        hits[d] = {d, cosv};
    }
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.cosine != b.cosine) return a.cosine > b.cosine;
        return a.doc < b.doc;
    });
    hits.resize(std::min(k, hits.size()));
    return hits;
}

// ---------------------------------------------------------------------------
// Persistence

void save_index(const DocumentIndex& index, const std::string& base_path) {
    std::ofstream grix(base_path + ".grix", std::ios::binary | std::ios::trunc);
    if (!grix) throw io_error("cannot write index: " + base_path + ".grix");
    grix.write(kIndexMagic, 4);
    auto put32 = [&](std::uint32_t v) { grix.write(reinterpret_cast<const char*>(&v), 4); };
    auto put64 = [&](std::uint64_t v) { grix.write(reinterpret_cast<const char*>(&v), 8); };
    put32(kIndexVersion);
    put64(index.texts_.size());
    put32(static_cast<std::uint32_t>(index.dim_));
    put32(index.kv_present_ ? 1u : 0u);
    put32(static_cast<std::uint32_t>(index.embed_attention_));
    put64(index.fingerprint_);
    for (const auto& e : index.embeddings_)
        grix.write(reinterpret_cast<const char*>(e.data()),
                   static_cast<std::streamsize>(e.size() * 4));
    for (const auto& t : index.texts_) {
        put32(static_cast<std::uint32_t>(t.size()));
        grix.write(t.data(), static_cast<std::streamsize>(t.size()));
    }
    // KV offset table, then the blobs into the side file.
    std::uint64_t off = 0;
    for (std::size_t d = 0; d < index.texts_.size(); ++d) {
        std::uint64_t size = index.kv_present_ ? index.kv_blobs_[d].size() : 0;
        put64(off);
        put64(size);
        put64(index.kv_tokens_[d]);
        off += size;
    }
    if (!grix) throw io_error("index write failed: " + base_path + ".grix");

    if (index.kv_present_) {
        std::ofstream grkv(base_path + ".grkv", std::ios::binary | std::ios::trunc);
        if (!grkv) throw io_error("cannot write KV file: " + base_path + ".grkv");
        for (const auto& blob : index.kv_blobs_)
            grkv.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!grkv) throw io_error("KV write failed: " + base_path + ".grkv");
    }
}

DocumentIndex load_index(const std::string& base_path, bool lazy_kv) {
    std::ifstream grix(base_path + ".grix", std::ios::binary);
    if (!grix) throw io_error("cannot open index: " + base_path + ".grix");
    char magic[4];
    grix.read(magic, 4);
    if (!grix || std::memcmp(magic, kIndexMagic, 4) != 0)
        throw integrity_error("not a GRIX index: " + base_path + ".grix");
    auto get32 = [&]() {
        std::uint32_t v;
        grix.read(reinterpret_cast<char*>(&v), 4);
        if (!grix) throw io_error("truncated index: " + base_path + ".grix");
        return v;
    };
    auto get64 = [&]() {
        std::uint64_t v;
        grix.read(reinterpret_cast<char*>(&v), 8);
        if (!grix) throw io_error("truncated index: " + base_path + ".grix");
        return v;
    };
    if (get32() != kIndexVersion) throw integrity_error("unsupported index version");

    DocumentIndex index;
    std::uint64_t docs = get64();
    index.dim_ = get32();
    index.kv_present_ = get32() != 0;
    index.embed_attention_ = static_cast<AttentionKind>(get32());
    index.fingerprint_ = get64();
    index.embeddings_.resize(docs);
    for (auto& e : index.embeddings_) {
        e.resize(index.dim_);
        grix.read(reinterpret_cast<char*>(e.data()), static_cast<std::streamsize>(e.size() * 4));
        if (!grix) throw io_error("truncated index embeddings: " + base_path);
    }
    index.texts_.resize(docs);
    for (auto& t : index.texts_) {
        std::uint32_t len = get32();
        t.resize(len);
        grix.read(t.data(), len);
        if (!grix) throw io_error("truncated index texts: " + base_path);
    }
    index.kv_offsets_.resize(docs);
    index.kv_sizes_.resize(docs);
    index.kv_tokens_.resize(docs);
    for (std::uint64_t d = 0; d < docs; ++d) {
        index.kv_offsets_[d] = get64();
        index.kv_sizes_[d] = get64();
        index.kv_tokens_[d] = static_cast<std::size_t>(get64());
    }
    index.kv_blobs_.assign(docs, std::string());
    index.kv_path_ = base_path + ".grkv";
    if (index.kv_present_ && !lazy_kv) {
        std::ifstream grkv(index.kv_path_, std::ios::binary);
        if (!grkv) throw io_error("cannot open KV file: " + index.kv_path_);
        for (std::uint64_t d = 0; d < docs; ++d) {
            std::string blob(index.kv_sizes_[d], '\0');
            grkv.seekg(static_cast<std::streamoff>(index.kv_offsets_[d]));
            grkv.read(blob.data(), static_cast<std::streamsize>(blob.size()));
            if (!grkv)
                throw integrity_error("truncated KV blob for document " + std::to_string(d));
            index.kv_blobs_[d] = std::move(blob);
        }
    }
    return index;
}

}  // namespace grit
