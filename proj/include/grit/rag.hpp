#pragma once

#include <string>
#include <vector>

#include "grit/index.hpp"
#include "grit/model.hpp"

namespace grit {

enum class CacheMode { NoRag, Rag, QueryCache, DocCache, QueryDocCache, DocQueryCache };

const char* cache_mode_name(CacheMode m);
CacheMode cache_mode_from_name(const std::string& name);
std::vector<std::string> cache_mode_names();

struct RagOptions {
    std::size_t max_new = 16;
    std::size_t top_k = 1;  // top hit feeds generation
    bool doc_first = false;  // Rag mode prompt order
    // Rag mode only: render the leading segment in the embedding format, the
    // exact uncached twin of the corresponding caching mode.
    bool embed_format = false;
    PoolingMode pooling = PoolingMode::Mean;
};

struct RagAnswer {
    std::string text;
    std::vector<int> tokens;
    long retrieved_doc = -1;
    std::size_t prefill_tokens = 0;
    std::size_t decode_tokens = 0;
    std::size_t cache_tokens_reused = 0;
    double wall_clock_s = 0.0;
    // True when every cached segment was computed with causal attention, in
    // which case the generation equals the uncached prompt's exactly.
    bool causal_cache_equivalent = true;
};

// Tokens fed to the generator for a mode, given the retrieved document text.
// For the caching modes these are the uncached suffix spliced after the
// cache; doc_text is ignored in NoRag mode.
std::vector<int> rag_prompt_tokens(const std::string& query, const std::string& doc_text,
                                   CacheMode mode, const RagOptions& opts = {});

RagAnswer answer(const TransformerModel& model, const DocumentIndex& index,
                 const std::string& query, CacheMode mode, const RagOptions& opts = {});

struct BenchRow {
    CacheMode mode;
    double mean_s = 0.0;
    double stddev_s = 0.0;
    double mean_prefill = 0.0;
    double mean_reused = 0.0;
    std::size_t runs = 0;
};

struct WorkloadItem {
    std::string query;
    std::vector<std::string> answers;
};

std::vector<WorkloadItem> load_workload(const std::string& path);

std::vector<BenchRow> bench_latency(const TransformerModel& model, const DocumentIndex& index,
                                    const std::vector<WorkloadItem>& workload,
                                    const std::vector<CacheMode>& modes, std::size_t repeats,
                                    const RagOptions& opts = {});

// KV stitching used by the combined caching modes.
KVState concat_kv(const KVState& a, const KVState& b, const ModelConfig& cfg);
KVState drop_leading_tokens(const KVState& kv, std::size_t n, const ModelConfig& cfg);

}  // namespace grit
