#include "grit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "grit/errors.hpp"

namespace grit {

namespace {

constexpr double kH = 1e-5;

double rel_error(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

template <typename LossFn>
GradCheckReport run_check(TransformerModel& model, LossFn&& loss_value,
                          const std::vector<std::vector<double>>& analytic,
                          std::size_t samples_per_param, std::uint64_t seed) {
    GradCheckReport report;
    std::mt19937_64 rng(seed);
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& [name, tensor] = params[p];
        std::size_t n = tensor.size();
        std::vector<std::size_t> picks;
        if (n <= samples_per_param) {
            picks.resize(n);
            for (std::size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            while (picks.size() < samples_per_param) {
                std::size_t idx = rng() % n;
                if (std::find(picks.begin(), picks.end(), idx) == picks.end())
                    picks.push_back(idx);
            }
        }
        for (std::size_t idx : picks) {
            double saved = tensor.data()[idx];
            tensor.data()[idx] = saved + kH;
            double up = loss_value();
            tensor.data()[idx] = saved - kH;
            double down = loss_value();
            tensor.data()[idx] = saved;
            double numeric = (up - down) / (2.0 * kH);
            double a = analytic[p].empty() ? 0.0 : analytic[p][idx];
            GradCheckEntry e{name, idx, a, numeric, rel_error(a, numeric)};
            if (e.rel_error > report.max_rel_error) {
                report.max_rel_error = e.rel_error;
                report.worst_param = name;
                report.worst_index = idx;
            }
            report.entries.push_back(e);
            ++report.checks;
        }
    }
    return report;
}

std::vector<std::vector<double>> snapshot_grads(const TransformerModel& model) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : model.parameters()) {
        (void)name;
        out.push_back(t.node()->grad);
    }
    return out;
}

}  // namespace

GradCheckReport gradcheck_rep(TransformerModel& model, const TripletBatch& batch,
                              const RepLossConfig& cfg, const EmbedSetup& setup,
                              std::size_t samples_per_param, std::uint64_t seed) {
    model.zero_grad();
    rep_loss_naive_backward(model, batch, cfg, setup);
    auto analytic = snapshot_grads(model);
    model.zero_grad();

    auto value = [&]() {
        NoGradGuard ng;
        std::vector<Tensor> q, p, n;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            q.push_back(model.embed(batch.queries[i], setup.attention, setup.pooling));
            p.push_back(model.embed(batch.positives[i], setup.attention, setup.pooling));
            n.push_back(model.embed(batch.negatives[i], setup.attention, setup.pooling));
        }
        return rep_loss(q, p, n, batch.dataset_ids, cfg).item();
    };
    return run_check(model, value, analytic, samples_per_param, seed);
}

GradCheckReport gradcheck_gen(TransformerModel& model, const GenBatch& batch, AttentionMode mode,
                              const GenLossMode& loss_mode, std::size_t samples_per_param,
                              std::uint64_t seed) {
    model.zero_grad();
    gen_loss_for_batch(model, batch, mode, loss_mode).backward();
    auto analytic = snapshot_grads(model);
    model.zero_grad();

    auto value = [&]() {
        NoGradGuard ng;
        return gen_loss_for_batch(model, batch, mode, loss_mode).item();
    };
    return run_check(model, value, analytic, samples_per_param, seed);
}

}  // namespace grit
