#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "grit/model.hpp"
#include "grit/tensor.hpp"
#include "grit/text.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central-difference gradient of a scalar function of one input tensor.
// Returns the max relative error against the tensor's analytic grad.
inline double fd_check(grit::Tensor& x, const std::function<grit::Tensor()>& f,
                       double h = 1e-5) {
    x.zero_grad();
    grit::Tensor loss = f();
    loss.backward();
    std::vector<double> analytic = loss.node() ? x.grad() : std::vector<double>();
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double saved = x.data()[i];
        grit::NoGradGuard ng;
        x.data()[i] = saved + h;
        double up = f().item();
        x.data()[i] = saved - h;
        double down = f().item();
        x.data()[i] = saved;
        double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    x.zero_grad();
    return worst;
}

inline grit::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                  bool requires_grad = true, double lo = -2.0, double hi = 2.0) {
    std::vector<double> data(grit::numel(shape));
    for (double& v : data)
        v = lo + (hi - lo) * static_cast<double>(rng() >> 11) /
                     static_cast<double>(1ull << 53);
    return grit::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

inline grit::TransformerModel tiny_model(std::size_t d_model = 16, std::size_t layers = 1,
                                         std::size_t heads = 2, std::uint64_t seed = 11,
                                         std::size_t head_dim = 0) {
    grit::ModelConfig cfg;
    cfg.d_model = d_model;
    cfg.n_layers = layers;
    cfg.n_heads = heads;
    cfg.max_seq_len = 128;
    cfg.rng_seed = seed;
    cfg.embedding_head_dim = head_dim;
    return grit::TransformerModel(cfg);
}

inline grit::TripletBatch tiny_triplets(std::size_t m = 4) {
    std::vector<grit::EmbedSample> samples;
    for (std::size_t i = 0; i < m; ++i)
        samples.push_back({std::nullopt, "query " + std::to_string(i), std::nullopt,
                           "pos " + std::to_string(i), std::nullopt,
                           "neg " + std::to_string(i), "ds"});
    return grit::build_triplet_batch(samples, 32, 32);
}

inline grit::GenBatch tiny_chats(std::size_t n = 2, bool equal_lengths = false) {
    std::vector<grit::ChatSample> chats;
    for (std::size_t i = 0; i < n; ++i) {
        std::string reply = equal_lengths ? "ok" : std::string(2 + 2 * i, 'a' + (char)i);
        chats.push_back({{{"user", "hello " + std::to_string(i)}, {"assistant", reply}}});
    }
    return grit::build_gen_batch(chats, 64);
}

}  // namespace testutil
