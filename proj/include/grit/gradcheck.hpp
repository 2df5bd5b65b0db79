#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grit/objective.hpp"

namespace grit {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checks = 0;
    std::vector<GradCheckEntry> entries;

    bool ok(double tolerance) const { return max_rel_error < tolerance; }
};

// Central-difference verification (h = 1e-5) of analytic gradients against
// the loss value, sampling `samples_per_param` entries from every parameter
// tensor. Relative error is |a-n| / max(|a|, |n|, 1e-6).
GradCheckReport gradcheck_rep(TransformerModel& model, const TripletBatch& batch,
                              const RepLossConfig& cfg, const EmbedSetup& setup,
                              std::size_t samples_per_param, std::uint64_t seed);

GradCheckReport gradcheck_gen(TransformerModel& model, const GenBatch& batch, AttentionMode mode,
                              const GenLossMode& loss_mode, std::size_t samples_per_param,
                              std::uint64_t seed);

}  // namespace grit
