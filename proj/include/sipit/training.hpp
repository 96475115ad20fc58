#pragma once

#include <cstdint>
#include <vector>

#include "sipit/autograd.hpp"
#include "sipit/model.hpp"

namespace sipit::train {

struct Sample {
    model::TokenSeq s;
    Matrix target;  // 1×|V| distribution
};

// Explicit, fully deterministic schedule: per-step step sizes and per-step
// sample index batches. make_schedule derives one from a seed.
struct TrainConfig {
    std::vector<double> step_sizes;               // one per step, each in (0,1)
    std::vector<std::vector<std::uint32_t>> batches;  // one nonempty list per step
    void validate(std::size_t corpus_size) const;
};

struct TrainResult {
    model::ModelParams params;
    std::vector<double> loss_trace;  // pre-update batch mean loss, one per step
};

// One full-batch gradient descent step: θ' = θ - η · mean-over-batch ∇CE.
// If batch_loss is non-null it receives the pre-update mean loss.
model::ModelParams gd_step(const model::ModelParams& p, const std::vector<Sample>& batch,
                           double eta, const model::ModelConfig& cfg,
                           double* batch_loss = nullptr);

TrainResult train(model::ModelParams init, const std::vector<Sample>& corpus,
                  const TrainConfig& tc, const model::ModelConfig& cfg);

// Random prompts with a mix of one-hot and dense random targets.
std::vector<Sample> make_toy_corpus(const model::ModelConfig& cfg, std::size_t size,
                                    std::size_t max_len, double soft_fraction,
                                    std::uint64_t seed);

// Constant step size, batches drawn by cycling through batch_sizes and
// sampling indices uniformly from the seeded stream.
TrainConfig make_schedule(std::size_t steps, double eta, std::size_t corpus_size,
                          const std::vector<std::uint32_t>& batch_sizes, std::uint64_t seed);

}  // namespace sipit::train
