#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grit/tensor.hpp"
#include "grit/text.hpp"

namespace grit {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t vocab_size = tok::vocab_size;
    std::size_t max_seq_len = 512;
    std::size_t ffn_multiplier = 4;
    std::size_t embedding_head_dim = 0;  // 0 = no embedding head
    std::uint64_t rng_seed = 0;

    std::size_t d_head() const { return d_model / n_heads; }
    void validate() const;
    std::uint64_t fingerprint() const;  // binds indices/checkpoints to a config
};

enum class AttentionKind { Causal, Bidirectional, PrefixBidirectional };

struct AttentionMode {
    AttentionKind kind = AttentionKind::Causal;
    std::size_t prefix_len = 0;  // PrefixBidirectional only

    static AttentionMode causal() { return {AttentionKind::Causal, 0}; }
    static AttentionMode bidirectional() { return {AttentionKind::Bidirectional, 0}; }
    static AttentionMode prefix(std::size_t p) { return {AttentionKind::PrefixBidirectional, p}; }
};

enum class PoolingMode { Mean, WeightedMean, LastToken };

// Per-layer attention keys/values, each (n_heads, seq_len, d_head) row-major.
// Keys are stored after rotary embedding at their original positions.
struct KVState {
    struct LayerKV {
        std::vector<double> k, v;
    };
    std::vector<LayerKV> layers;
    std::size_t token_count = 0;
    AttentionKind attention_mode_used = AttentionKind::Causal;

    bool empty() const { return token_count == 0; }
};

struct Instrumentation {
    long long forwards = 0;  // total forward_hidden calls
    // A "leg" is one gradient-tracked embedding pass (all of a batch's
    // queries, positives or negatives). Schedules mark entry/release so the
    // peak exposes how many legs hold live graphs at once.
    int live_grad_legs = 0;
    int peak_grad_legs = 0;
    void reset() { forwards = 0; live_grad_legs = 0; peak_grad_legs = 0; }
    void enter_grad_leg() {
        ++live_grad_legs;
        peak_grad_legs = live_grad_legs > peak_grad_legs ? live_grad_legs : peak_grad_legs;
    }
    void release_grad_legs() { live_grad_legs = 0; }
};

struct GenStats {
    std::size_t prefill_tokens = 0;
    std::size_t decode_tokens = 0;
};

struct GenResult {
    std::vector<int> tokens;  // generated tokens, excluding the prompt
    GenStats stats;
    KVState state;  // cache after prompt + generation
};

class TransformerModel {
public:
    explicit TransformerModel(const ModelConfig& config);

    const ModelConfig& config() const { return cfg_; }
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();

    // Hidden states for the T new tokens (after the final norm). cache, when
    // present, must hold causal states and mode must be Causal.
    std::pair<Tensor, KVState> forward_hidden(const std::vector<int>& tokens, AttentionMode mode,
                                              const KVState* cache = nullptr) const;

    Tensor lm_logits(const Tensor& hidden) const;

    // forward_hidden + pool over the sample span + optional embedding head.
    Tensor embed(const FormattedSequence& seq, AttentionMode mode, PoolingMode pooling) const;

    // Greedy decode until </s> or max_new tokens; prompt tokens are the ones
    // not already covered by cache.
    GenResult generate_greedy(const std::vector<int>& prompt, std::size_t max_new,
                              const KVState* cache = nullptr) const;

    mutable Instrumentation instr;

private:
    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

// Pool masked rows of (T x d_model) hidden states. WeightedMean uses
// rank-proportional weights over the masked positions.
Tensor pool(const Tensor& hidden, const std::vector<bool>& pool_mask, PoolingMode mode);

void save_checkpoint(const TransformerModel& model, const std::string& path);
TransformerModel load_checkpoint(const std::string& path);

const char* attention_kind_name(AttentionKind k);
AttentionKind attention_kind_from_name(const std::string& name);
const char* pooling_mode_name(PoolingMode m);
PoolingMode pooling_mode_from_name(const std::string& name);

}  // namespace grit
