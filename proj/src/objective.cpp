#include "grit/objective.hpp"

#include <cmath>
#include <limits>

#include "grit/errors.hpp"

namespace grit {

namespace {

// Scores for sample i against its candidate pool; returns the stacked score
// vector and the index of the matching positive within it.
struct PoolScores {
    Tensor scores;            // [n_candidates], already scaled by tau
    std::size_t positive_at;  // index of p_i
};

PoolScores pool_scores(std::size_t i, const std::vector<Tensor>& q_embs,
                       const std::vector<Tensor>& pos_embs, const std::vector<Tensor>& neg_embs,
                       const std::vector<std::string>& dataset_ids, const RepLossConfig& cfg) {
    std::vector<Tensor> scores;
    std::size_t positive_at = 0;
    for (std::size_t j = 0; j < pos_embs.size(); ++j) {
        bool in_scope = cfg.negative_scope == NegativeScope::AnyDataset ||
                        dataset_ids[j] == dataset_ids[i];
        if (!in_scope && j != i) continue;
        if (j == i) positive_at = scores.size();
        scores.push_back(scale(cosine_similarity(q_embs[i], pos_embs[j]), cfg.tau));
        if (cfg.include_hard_negatives)
            scores.push_back(scale(cosine_similarity(q_embs[i], neg_embs[j]), cfg.tau));
    }
    return {stack_scalars(scores), positive_at};
}

}  // namespace

Tensor rep_loss(const std::vector<Tensor>& q_embs, const std::vector<Tensor>& pos_embs,
                const std::vector<Tensor>& neg_embs, const std::vector<std::string>& dataset_ids,
                const RepLossConfig& cfg) {
    std::size_t m = q_embs.size();
    if (m == 0) throw input_error("rep_loss: empty batch");
    if (pos_embs.size() != m || neg_embs.size() != m || dataset_ids.size() != m)
        throw input_error("rep_loss: mismatched batch legs");
    if (cfg.tau <= 0.0) throw config_error("rep_loss: tau must be positive");

    std::vector<Tensor> per_sample;
    per_sample.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        PoolScores ps = pool_scores(i, q_embs, pos_embs, neg_embs, dataset_ids, cfg);
        Tensor pos_score = gather(ps.scores, {ps.positive_at});
        per_sample.push_back(sub(logsumexp(ps.scores), reshape(pos_score, {})));
    }
    return weighted_sum(stack_scalars(per_sample),
                        std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

Tensor gen_loss(const Tensor& per_token_nll, const std::vector<std::size_t>& sample_token_counts,
                const GenLossMode& mode) {
    std::size_t total = 0;
    for (std::size_t c : sample_token_counts) total += c;
    if (total != per_token_nll.size())
        throw input_error("gen_loss: sample boundaries do not partition the loss tokens");
    if (total == 0) throw degenerate_input_error("gen_loss: no loss tokens");
    std::size_t s = sample_token_counts.size();

    std::vector<double> w(total, 0.0);
    switch (mode.kind) {
        case GenLossMode::Kind::Token: {
            double inv = 1.0 / static_cast<double>(total);
            for (double& v : w) v = inv;
            break;
        }
        case GenLossMode::Kind::Sample: {
            std::size_t off = 0;
            for (std::size_t i = 0; i < s; ++i) {
                if (sample_token_counts[i] == 0)
                    throw degenerate_input_error("gen_loss: sample " + std::to_string(i) +
                                                 " has zero loss tokens");
                double inv = 1.0 / (static_cast<double>(s) *
                                    static_cast<double>(sample_token_counts[i]));
                for (std::size_t t = 0; t < sample_token_counts[i]; ++t) w[off + t] = inv;
                off += sample_token_counts[i];
            }
            break;
        }
        case GenLossMode::Kind::Mix: {
            std::size_t k = mode.mix_group;
            if (k == 0 || s % k != 0)
                throw config_error("gen_loss: Mix group size " + std::to_string(k) +
                                   " must divide the batch size " + std::to_string(s));
            std::size_t groups = s / k;
            std::size_t off = 0, sample = 0;
            for (std::size_t g = 0; g < groups; ++g) {
                std::size_t group_tokens = 0;
                for (std::size_t j = 0; j < k; ++j) {
                    if (sample_token_counts[sample + j] == 0)
                        throw degenerate_input_error("gen_loss: sample " +
                                                     std::to_string(sample + j) +
                                                     " has zero loss tokens");
                    group_tokens += sample_token_counts[sample + j];
                }
                double inv = 1.0 / (static_cast<double>(groups) * static_cast<double>(group_tokens));
                for (std::size_t t = 0; t < group_tokens; ++t) w[off + t] = inv;
                off += group_tokens;
                sample += k;
            }
            break;
        }
    }
    return weighted_sum(per_token_nll, w);
}

GritLossResult grit_loss(const Tensor& rep, const Tensor& gen, const LossWeights& w) {
    if (w.lambda_rep < 0.0 || w.lambda_gen < 0.0 || (w.lambda_rep == 0.0 && w.lambda_gen == 0.0))
        throw config_error("grit_loss: loss weights must be nonnegative and not both zero");
    if (!std::isfinite(rep.item()) || !std::isfinite(gen.item()))
        throw input_error("grit_loss: non-finite loss input");
    Tensor total = add(scale(rep, w.lambda_rep), scale(gen, w.lambda_gen));
    double ratio = gen.item() == 0.0 ? std::numeric_limits<double>::infinity()
                                     : rep.item() / gen.item();
    return {total, ratio};
}

// ---------------------------------------------------------------------------
// Backward schedules

namespace {

std::vector<Tensor> embed_all(const TransformerModel& model,
                              const std::vector<FormattedSequence>& seqs,
                              const EmbedSetup& setup) {
    std::vector<Tensor> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(model.embed(s, setup.attention, setup.pooling));
    return out;
}

std::vector<Tensor> embed_all_detached(const TransformerModel& model,
                                       const std::vector<FormattedSequence>& seqs,
                                       const EmbedSetup& setup) {
    NoGradGuard ng;
    return embed_all(model, seqs, setup);
}

}  // namespace

double rep_loss_naive_backward(TransformerModel& model, const TripletBatch& batch,
                               const RepLossConfig& cfg, const EmbedSetup& setup,
                               double loss_scale) {
    model.instr.enter_grad_leg();
    auto q = embed_all(model, batch.queries, setup);
    model.instr.enter_grad_leg();
    auto p = embed_all(model, batch.positives, setup);
    model.instr.enter_grad_leg();
    auto n = embed_all(model, batch.negatives, setup);
    Tensor loss = rep_loss(q, p, n, batch.dataset_ids, cfg);
    scale(loss, loss_scale).backward();
    model.instr.release_grad_legs();
    return loss.item();
}

double rep_loss_split_backward(TransformerModel& model, const TripletBatch& batch,
                               const RepLossConfig& cfg, const EmbedSetup& setup,
                               double loss_scale) {
    // Gradient-free values for the legs not currently being tracked.
    auto q_const = embed_all_detached(model, batch.queries, setup);
    auto p_const = embed_all_detached(model, batch.positives, setup);
    auto n_const = embed_all_detached(model, batch.negatives, setup);

    double loss_value = 0.0;
    for (int leg = 0; leg < 3; ++leg) {
        const auto& seqs = (leg == 0)   ? batch.positives
                           : (leg == 1) ? batch.negatives
                                        : batch.queries;
        model.instr.enter_grad_leg();
        auto tracked = embed_all(model, seqs, setup);
        const auto& q = (leg == 2) ? tracked : q_const;
        const auto& p = (leg == 0) ? tracked : p_const;
        const auto& n = (leg == 1) ? tracked : n_const;
        Tensor loss = rep_loss(q, p, n, batch.dataset_ids, cfg);
        scale(loss, loss_scale).backward();
        model.instr.release_grad_legs();
        if (leg == 0) loss_value = loss.item();
    }
    return loss_value;
}

double rep_loss_gradcache(TransformerModel& model, const TripletBatch& batch,
                          const RepLossConfig& cfg, const EmbedSetup& setup,
                          std::size_t micro_batch, double loss_scale) {
    std::size_t m = batch.size();
    if (micro_batch == 0 || m % micro_batch != 0)
        throw config_error("rep_loss_gradcache: micro batch " + std::to_string(micro_batch) +
                           " must divide the batch size " + std::to_string(m));

    // Stage 1: gradient-free embeddings.
    auto q_vals = embed_all_detached(model, batch.queries, setup);
    auto p_vals = embed_all_detached(model, batch.positives, setup);
    auto n_vals = embed_all_detached(model, batch.negatives, setup);

    // Stage 2: loss and d(loss)/d(embedding) over the full candidate pool.
    std::vector<Tensor> q_leaf, p_leaf, n_leaf;
    for (std::size_t i = 0; i < m; ++i) {
        q_leaf.push_back(Tensor::from_data(q_vals[i].shape(), q_vals[i].data(), true));
        p_leaf.push_back(Tensor::from_data(p_vals[i].shape(), p_vals[i].data(), true));
        n_leaf.push_back(Tensor::from_data(n_vals[i].shape(), n_vals[i].data(), true));
    }
    Tensor loss = rep_loss(q_leaf, p_leaf, n_leaf, batch.dataset_ids, cfg);
    scale(loss, loss_scale).backward();

    // Stage 3: micro-batched tracked re-forwards injecting the cached grads.
    for (std::size_t base = 0; base < m; base += micro_batch) {
        model.instr.enter_grad_leg();
        std::vector<Tensor> surrogates;
        for (std::size_t i = base; i < base + micro_batch; ++i) {
            surrogates.push_back(weighted_sum(
                model.embed(batch.queries[i], setup.attention, setup.pooling), q_leaf[i].grad()));
            surrogates.push_back(weighted_sum(
                model.embed(batch.positives[i], setup.attention, setup.pooling), p_leaf[i].grad()));
            surrogates.push_back(weighted_sum(
                model.embed(batch.negatives[i], setup.attention, setup.pooling), n_leaf[i].grad()));
        }
        Tensor acc = surrogates[0];
        for (std::size_t i = 1; i < surrogates.size(); ++i) acc = add(acc, surrogates[i]);
        acc.backward();
        model.instr.release_grad_legs();
    }
    return loss.item();
}

// ---------------------------------------------------------------------------
// Generative stream

Tensor sequence_loss_nll(const TransformerModel& model, const FormattedSequence& seq,
                         AttentionMode mode) {
    auto [hidden, state] = model.forward_hidden(seq.tokens, mode);
    std::size_t t = seq.tokens.size();
    if (t < 2) throw input_error("sequence_loss_nll: sequence too short");
    Tensor logits = model.lm_logits(slice_rows(hidden, 0, t - 1));
    std::vector<int> targets(seq.tokens.begin() + 1, seq.tokens.end());
    Tensor nll = cross_entropy_per_token(logits, targets);
    // Token at position i is predicted from logits at position i-1.
    std::vector<std::size_t> picks;
    for (const Span& s : seq.loss_spans)
        for (std::size_t i = s.begin; i < s.end; ++i) {
            if (i == 0) throw input_error("sequence_loss_nll: loss span at position 0");
            picks.push_back(i - 1);
        }
    if (picks.empty()) throw degenerate_input_error("sequence_loss_nll: no loss tokens");
    return gather(nll, picks);
}

Tensor gen_loss_for_batch(const TransformerModel& model, const GenBatch& batch,
                          AttentionMode mode, const GenLossMode& loss_mode) {
    if (batch.sequences.empty()) throw input_error("gen_loss_for_batch: empty batch");
    std::vector<Tensor> parts;
    for (const auto& seq : batch.sequences) {
        Tensor nll = sequence_loss_nll(model, seq, mode);
        parts.push_back(reshape(nll, {nll.size(), 1}));
    }
    Tensor all = concat_rows(parts);
    return gen_loss(reshape(all, {all.size()}), batch.response_token_counts, loss_mode);
}

}  // namespace grit
