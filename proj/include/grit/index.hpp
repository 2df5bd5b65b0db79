#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grit/model.hpp"

namespace grit {

// Persisted document embeddings, texts and (optionally) per-document KV
// states. Embeddings are held in 32-bit floats, matching the on-disk width.
class DocumentIndex {
public:
    std::size_t doc_count() const { return texts_.size(); }
    std::size_t embedding_dim() const { return dim_; }
    bool kv_present() const { return kv_present_; }
    std::uint64_t fingerprint() const { return fingerprint_; }
    AttentionKind embed_attention() const { return embed_attention_; }

    const std::vector<float>& embedding(std::size_t doc) const;
    const std::string& text(std::size_t doc) const;
    std::size_t kv_token_count(std::size_t doc) const;

    // Key-value state for one document; reads the blob from disk on first
    // use when loaded lazily.
    KVState doc_kv(std::size_t doc, const ModelConfig& cfg) const;

    // Bytes fetched from the KV blob file so far (lazy loading accounting).
    std::uint64_t kv_bytes_read() const { return kv_bytes_read_; }

    struct BuildReport {
        std::size_t built = 0;
        std::vector<std::pair<std::size_t, std::string>> skipped;  // (input pos, reason)
    };
    BuildReport last_build_report;

    friend DocumentIndex build_index(const TransformerModel& model,
                                     const std::vector<std::string>& docs, bool store_kv,
                                     AttentionMode emb_attention, PoolingMode pooling);
    friend void save_index(const DocumentIndex& index, const std::string& base_path);
    friend DocumentIndex load_index(const std::string& base_path, bool lazy_kv);

private:
    std::size_t dim_ = 0;
    bool kv_present_ = false;
    std::uint64_t fingerprint_ = 0;
    AttentionKind embed_attention_ = AttentionKind::Bidirectional;
    std::vector<std::vector<float>> embeddings_;
    std::vector<std::string> texts_;
    std::vector<std::size_t> kv_tokens_;       // per-doc cached token counts
    mutable std::vector<std::string> kv_blobs_;  // serialized KV, may be empty per doc when lazy
    std::string kv_path_;                      // backing .grkv file for lazy loads
    std::vector<std::uint64_t> kv_offsets_, kv_sizes_;
    mutable std::uint64_t kv_bytes_read_ = 0;
};

// One embedding forward per document regardless of store_kv; overlong
// documents are skipped and reported.
DocumentIndex build_index(const TransformerModel& model, const std::vector<std::string>& docs,
                          bool store_kv, AttentionMode emb_attention = AttentionMode::bidirectional(),
                          PoolingMode pooling = PoolingMode::Mean);

struct RetrievalHit {
    std::size_t doc = 0;
    double cosine = 0.0;
};

// Exhaustive top-k by cosine, descending; ties broken by lower doc id.
std::vector<RetrievalHit> retrieve(const DocumentIndex& index,
                                   const std::vector<double>& query_embedding, std::size_t k);

// Two files: base.grix (header, f32 embeddings, texts, KV offset table) and
// base.grkv (concatenated per-doc KV blobs).
void save_index(const DocumentIndex& index, const std::string& base_path);
DocumentIndex load_index(const std::string& base_path, bool lazy_kv);

// KV serialization helpers shared with the RAG engine.
std::string serialize_kv(const KVState& kv);
KVState deserialize_kv(const std::string& blob, const ModelConfig& cfg, AttentionKind mode);

}  // namespace grit
