#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grit/model.hpp"
#include "grit/objective.hpp"
#include "grit/text.hpp"

namespace grit {

enum class BackwardScheme { Naive, Split, GradCache };

struct TrainConfig {
    std::size_t total_steps = 100;
    double lr_peak = 2e-5;
    double warmup_fraction = 0.03;
    std::size_t batch_emb = 4;  // M
    std::size_t batch_gen = 4;  // N
    LossWeights weights;
    GenLossMode gen_loss_mode = GenLossMode::token();
    RepLossConfig rep_cfg;
    EmbedSetup emb_setup;
    AttentionMode gen_attention = AttentionMode::causal();
    BackwardScheme backward_scheme = BackwardScheme::Naive;
    std::size_t gradcache_micro = 1;
    std::uint64_t seed = 0;
    std::size_t stop_after = 0;        // pause after this step (0 = run to total_steps);
                                       // the lr schedule still spans total_steps
    std::size_t checkpoint_every = 0;  // 0 = only at the end
    double grad_clip = 0.0;            // 0 = off
    std::size_t max_q_tokens = 64;
    std::size_t max_d_tokens = 128;
    std::size_t max_gen_tokens = 128;

    void validate() const;
};

struct AdamState {
    // One moment pair per parameter, in model parameter order.
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init_for(const TransformerModel& model);
};

double lr_at(std::size_t step, const TrainConfig& cfg);

struct StepReport {
    std::size_t step = 0;
    double rep_loss = 0.0;
    double gen_loss = 0.0;
    double ratio = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

// One joint step: both losses, one Adam update, grads zeroed afterwards.
StepReport train_step(TransformerModel& model, const TripletBatch& triplet_batch,
                      const GenBatch& gen_batch, const TrainConfig& cfg, AdamState& opt);

struct TrainOutput {
    std::vector<StepReport> reports;
    std::vector<double> rep_ema, gen_ema;  // EMA weight 0.9
};

struct TrainPaths {
    std::string checkpoint;  // empty = no checkpoint files
    std::string metrics;     // empty = no metrics file
    std::string state;       // optimizer/cursor state for resume
};

// Stream cursor over a dataset: independent per-epoch reshuffle seeded from
// (seed, epoch), wrapping on exhaustion.
struct StreamCursor {
    std::uint64_t consumed = 0;
};

struct TrainerState {
    AdamState opt;
    StreamCursor emb_cursor, gen_cursor;
};

TrainOutput train(TransformerModel& model, const std::vector<EmbedSample>& triplets,
                  const std::vector<ChatSample>& chats, const TrainConfig& cfg,
                  const TrainPaths& paths = {}, TrainerState* resume = nullptr);

void save_trainer_state(const TrainerState& st, const std::string& path);
TrainerState load_trainer_state(const std::string& path);

}  // namespace grit
