#pragma once

#include <string>
#include <vector>

#include "grit/model.hpp"
#include "grit/tensor.hpp"
#include "grit/text.hpp"

namespace grit {

enum class NegativeScope { SameDataset, AnyDataset };

struct RepLossConfig {
    double tau = 50.0;  // multiplies the cosine before exponentiation
    NegativeScope negative_scope = NegativeScope::AnyDataset;
    bool include_hard_negatives = true;
};

struct GenLossMode {
    enum class Kind { Token, Sample, Mix } kind = Kind::Token;
    std::size_t mix_group = 0;  // samples per token-level sub-batch (Mix only)

    static GenLossMode token() { return {Kind::Token, 0}; }
    static GenLossMode sample() { return {Kind::Sample, 0}; }
    static GenLossMode mix(std::size_t k) { return {Kind::Mix, k}; }
};

struct LossWeights {
    double lambda_rep = 1.0;
    double lambda_gen = 1.0;
};

// Contrastive loss with in-batch negatives over precomputed embeddings.
// Candidate pool for sample i: the positives (plus hard negatives when
// enabled) of every batch item sharing its dataset id (SameDataset) or of
// every batch item (AnyDataset); the matching positive is always included.
Tensor rep_loss(const std::vector<Tensor>& q_embs, const std::vector<Tensor>& pos_embs,
                const std::vector<Tensor>& neg_embs, const std::vector<std::string>& dataset_ids,
                const RepLossConfig& cfg);

// Aggregate per-loss-token NLL. sample_token_counts partitions nll's entries
// by sample, in batch order.
Tensor gen_loss(const Tensor& per_token_nll, const std::vector<std::size_t>& sample_token_counts,
                const GenLossMode& mode);

struct GritLossResult {
    Tensor total;
    double ratio;  // rep / gen, +inf when gen == 0
};

GritLossResult grit_loss(const Tensor& rep, const Tensor& gen, const LossWeights& w);

// Attention/pooling configuration for the embedding stream.
struct EmbedSetup {
    AttentionMode attention = AttentionMode::bidirectional();
    PoolingMode pooling = PoolingMode::Mean;
};

// Backward schedules for the contrastive stream. Each accumulates
// d(loss_scale * rep_loss)/d(params) into the model's parameter grads and
// returns the unscaled loss value. Gradients are added on top of whatever is
// already accumulated; callers zero beforehand.
double rep_loss_naive_backward(TransformerModel& model, const TripletBatch& batch,
                               const RepLossConfig& cfg, const EmbedSetup& setup,
                               double loss_scale = 1.0);

// Triplet splitting: one gradient-tracked leg at a time, the other two legs
// recomputed without tracking and treated as constants.
double rep_loss_split_backward(TransformerModel& model, const TripletBatch& batch,
                               const RepLossConfig& cfg, const EmbedSetup& setup,
                               double loss_scale = 1.0);

// GradCache: gradient-free embedding pass, loss gradients w.r.t. the
// embeddings computed once over the full pool, then micro-batched
// gradient-tracked re-forwards injecting those cached gradients.
double rep_loss_gradcache(TransformerModel& model, const TripletBatch& batch,
                          const RepLossConfig& cfg, const EmbedSetup& setup,
                          std::size_t micro_batch, double loss_scale = 1.0);

// Per-loss-token NLL for one formatted generative sequence (graph-connected).
Tensor sequence_loss_nll(const TransformerModel& model, const FormattedSequence& seq,
                         AttentionMode mode);

// Full generative-batch loss under the given aggregation mode.
Tensor gen_loss_for_batch(const TransformerModel& model, const GenBatch& batch,
                          AttentionMode mode, const GenLossMode& loss_mode);

}  // namespace grit
