#include "grit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "grit/errors.hpp"

namespace grit {

void TrainConfig::validate() const {
    if (total_steps == 0) throw config_error("train config: total_steps must be positive");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
        throw config_error("train config: warmup_fraction must be in (0,1)");
    if (batch_emb < 1 || batch_gen < 1)
        throw config_error("train config: batch sizes must be at least 1");
    if (weights.lambda_rep < 0 || weights.lambda_gen < 0 ||
        (weights.lambda_rep == 0 && weights.lambda_gen == 0))
        throw config_error("train config: loss weights must be nonnegative, not both zero");
    if (backward_scheme == BackwardScheme::GradCache &&
        (gradcache_micro == 0 || batch_emb % gradcache_micro != 0))
        throw config_error("train config: gradcache micro batch must divide batch_emb");
}

AdamState AdamState::init_for(const TransformerModel& model) {
    AdamState st;
    for (const auto& [name, t] : model.parameters()) {
        st.m.emplace_back(t.size(), 0.0);
        st.v.emplace_back(t.size(), 0.0);
    }
    return st;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps)
        throw usage_error("lr_at: step " + std::to_string(step) + " past total_steps " +
                          std::to_string(cfg.total_steps));
    auto warmup = static_cast<std::size_t>(
        std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.total_steps)));
    if (warmup == 0) warmup = 1;
    if (step <= warmup)
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    return cfg.lr_peak * static_cast<double>(cfg.total_steps - step) /
           static_cast<double>(cfg.total_steps - warmup);
}

namespace {

double accumulate_grad_norm(const TransformerModel& model) {
    long double sq = 0.0L;
    for (const auto& [name, t] : model.parameters())
        if (t.has_grad())
            for (double g : t.grad()) sq += static_cast<long double>(g) * g;
    return std::sqrt(static_cast<double>(sq));
}

void adam_update(TransformerModel& model, AdamState& opt, double lr, double clip_scale) {
    opt.step++;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].second;
        if (!t.has_grad()) continue;
        const auto& g = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double gi = g[i] * clip_scale;
            opt.m[p][i] = opt.beta1 * opt.m[p][i] + (1.0 - opt.beta1) * gi;
            opt.v[p][i] = opt.beta2 * opt.v[p][i] + (1.0 - opt.beta2) * gi * gi;
            double mhat = opt.m[p][i] / bc1;
            double vhat = opt.v[p][i] / bc2;
            t.data()[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

}  // namespace

StepReport train_step(TransformerModel& model, const TripletBatch& triplet_batch,
                      const GenBatch& gen_batch, const TrainConfig& cfg, AdamState& opt) {
    cfg.validate();
    model.zero_grad();

    StepReport rep;
    rep.step = static_cast<std::size_t>(opt.step) + 1;
    rep.lr = lr_at(std::min(rep.step, cfg.total_steps), cfg);

    if (cfg.weights.lambda_rep > 0.0) {
        switch (cfg.backward_scheme) {
            case BackwardScheme::Naive:
                rep.rep_loss = rep_loss_naive_backward(model, triplet_batch, cfg.rep_cfg,
                                                       cfg.emb_setup, cfg.weights.lambda_rep);
                break;
            case BackwardScheme::Split:
                rep.rep_loss = rep_loss_split_backward(model, triplet_batch, cfg.rep_cfg,
                                                       cfg.emb_setup, cfg.weights.lambda_rep);
                break;
            case BackwardScheme::GradCache:
                rep.rep_loss =
                    rep_loss_gradcache(model, triplet_batch, cfg.rep_cfg, cfg.emb_setup,
                                       cfg.gradcache_micro, cfg.weights.lambda_rep);
                break;
        }
        if (!std::isfinite(rep.rep_loss))
            throw error("train_step: non-finite loss in the embedding stream");
    }

    if (cfg.weights.lambda_gen > 0.0) {
        Tensor gen = gen_loss_for_batch(model, gen_batch, cfg.gen_attention, cfg.gen_loss_mode);
        rep.gen_loss = gen.item();
        if (!std::isfinite(rep.gen_loss))
            throw error("train_step: non-finite loss in the generative stream");
        scale(gen, cfg.weights.lambda_gen).backward();
        model.instr.release_grad_legs();
    }

    rep.ratio = rep.gen_loss == 0.0 ? std::numeric_limits<double>::infinity()
                                    : rep.rep_loss / rep.gen_loss;
    rep.grad_norm = accumulate_grad_norm(model);

    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0 && rep.grad_norm > cfg.grad_clip)
        clip_scale = cfg.grad_clip / rep.grad_norm;

    adam_update(model, opt, rep.lr, clip_scale);
    model.zero_grad();
    return rep;
}

namespace {

// Deterministic epoch ordering: shuffle of [0, n) seeded from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng() % i;
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

template <typename T>
std::vector<T> take_from_stream(const std::vector<T>& data, StreamCursor& cur,
                                std::size_t count, std::uint64_t seed) {
    std::vector<T> out;
    out.reserve(count);
    while (out.size() < count) {
        std::uint64_t epoch = cur.consumed / data.size();
        std::size_t within = static_cast<std::size_t>(cur.consumed % data.size());
        auto order = epoch_order(data.size(), seed, epoch);
        for (std::size_t i = within; i < order.size() && out.size() < count; ++i) {
            out.push_back(data[order[i]]);
            cur.consumed++;
        }
    }
    return out;
}

}  // namespace

TrainOutput train(TransformerModel& model, const std::vector<EmbedSample>& triplets,
                  const std::vector<ChatSample>& chats, const TrainConfig& cfg,
                  const TrainPaths& paths, TrainerState* resume) {
    cfg.validate();
    if (cfg.weights.lambda_rep > 0.0 && triplets.empty())
        throw input_error("train: embedding stream is empty");
    if (cfg.weights.lambda_gen > 0.0 && chats.empty())
        throw input_error("train: generative stream is empty");

    TrainerState st;
    if (resume)
        st = *resume;
    else
        st.opt = AdamState::init_for(model);

    std::ofstream metrics;
    if (!paths.metrics.empty()) {
        metrics.open(paths.metrics, resume ? std::ios::app : std::ios::trunc);
        if (!metrics) throw io_error("cannot open metrics file: " + paths.metrics);
    }

    TrainOutput out;
    double rep_ema = 0.0, gen_ema = 0.0;
    bool ema_init = false;

    std::size_t end_step = cfg.stop_after == 0 ? cfg.total_steps
                                               : std::min(cfg.stop_after, cfg.total_steps);
    for (std::size_t step = static_cast<std::size_t>(st.opt.step); step < end_step; ++step) {
        TripletBatch tb;
        if (cfg.weights.lambda_rep > 0.0) {
            auto samples = take_from_stream(triplets, st.emb_cursor, cfg.batch_emb, cfg.seed);
            tb = build_triplet_batch(samples, cfg.max_q_tokens, cfg.max_d_tokens);
        }
        GenBatch gb;
        if (cfg.weights.lambda_gen > 0.0) {
            auto samples = take_from_stream(chats, st.gen_cursor, cfg.batch_gen, cfg.seed + 1);
            gb = build_gen_batch(samples, cfg.max_gen_tokens);
        }

        StepReport r = train_step(model, tb, gb, cfg, st.opt);
        if (!ema_init) {
            rep_ema = r.rep_loss;
            gen_ema = r.gen_loss;
            ema_init = true;
        } else {
            rep_ema = 0.9 * rep_ema + 0.1 * r.rep_loss;
            gen_ema = 0.9 * gen_ema + 0.1 * r.gen_loss;
        }
        out.rep_ema.push_back(rep_ema);
        out.gen_ema.push_back(gen_ema);
        out.reports.push_back(r);

        if (metrics.is_open()) {
            nlohmann::json j{{"step", r.step},      {"rep_loss", r.rep_loss},
                             {"gen_loss", r.gen_loss}, {"ratio", r.ratio},
                             {"lr", r.lr},          {"grad_norm", r.grad_norm}};
            metrics << j.dump() << "\n";
            metrics.flush();
        }
        bool checkpoint_now = !paths.checkpoint.empty() &&
                              ((cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) ||
                               r.step == end_step);
        if (checkpoint_now) {
            save_checkpoint(model, paths.checkpoint);
            if (!paths.state.empty()) save_trainer_state(st, paths.state);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trainer state serialization (binary; moments + step + stream cursors)

namespace {
constexpr char kStateMagic[4] = {'G', 'R', 'T', 'S'};
}

void save_trainer_state(const TrainerState& st, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write trainer state: " + path);
    out.write(kStateMagic, 4);
    auto put64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put64(st.opt.step);
    put64(st.emb_cursor.consumed);
    put64(st.gen_cursor.consumed);
    put64(st.opt.m.size());
    for (std::size_t p = 0; p < st.opt.m.size(); ++p) {
        put64(st.opt.m[p].size());
        out.write(reinterpret_cast<const char*>(st.opt.m[p].data()),
                  static_cast<std::streamsize>(st.opt.m[p].size() * 8));
        out.write(reinterpret_cast<const char*>(st.opt.v[p].data()),
                  static_cast<std::streamsize>(st.opt.v[p].size() * 8));
    }
    if (!out) throw io_error("trainer state write failed: " + path);
}

TrainerState load_trainer_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open trainer state: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStateMagic, 4) != 0)
        throw integrity_error("not a trainer state file: " + path);
    auto get64 = [&]() {
        std::uint64_t v;
        in.read(reinterpret_cast<char*>(&v), 8);
        if (!in) throw io_error("truncated trainer state: " + path);
        return v;
    };
    TrainerState st;
    st.opt.step = get64();
    st.emb_cursor.consumed = get64();
    st.gen_cursor.consumed = get64();
    std::uint64_t n = get64();
    st.opt.m.resize(n);
    st.opt.v.resize(n);
    for (std::uint64_t p = 0; p < n; ++p) {
        std::uint64_t len = get64();
        st.opt.m[p].resize(len);
        st.opt.v[p].resize(len);
        in.read(reinterpret_cast<char*>(st.opt.m[p].data()),
                static_cast<std::streamsize>(len * 8));
        in.read(reinterpret_cast<char*>(st.opt.v[p].data()),
                static_cast<std::streamsize>(len * 8));
        if (!in) throw io_error("truncated trainer state: " + path);
    }
    return st;
}

}  // namespace grit
