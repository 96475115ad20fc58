#pragma once

#include <cstdint>
#include <vector>

#include "sipit/matrix.hpp"
#include "sipit/model.hpp"

namespace sipit::probe {

// Distance below which two last-token states count as a collision.
inline constexpr double kCollisionThreshold = 1e-6;

struct ScanReport {
    std::uint32_t layer = 0;
    std::size_t prompt_count = 0;
    std::size_t pair_count = 0;  // n(n-1)/2
    double min_dist = 0.0;
    double mean_dist = 0.0;
    double max_dist = 0.0;
    std::size_t argmin_i = 0, argmin_j = 0;  // prompt indices of the closest pair
    double threshold = kCollisionThreshold;
    bool verdict = false;  // min_dist > threshold
};

// Exact all-pairs L2 distances between last-token states at one layer.
// Prompts must be pairwise distinct (duplicates are an input error).
ScanReport collision_scan(const std::vector<model::TokenSeq>& prompts, std::uint32_t layer,
                          const model::ModelParams& p, const model::ModelConfig& cfg,
                          std::size_t workers = 1, double threshold = kCollisionThreshold);

// Same scan at every layer 1..L from a single forward pass per prompt.
// Layer 0 is embedding-only and shared by prompts agreeing on their last
// token and length, so scans start at the first block.
std::vector<ScanReport> collision_scan_all(const std::vector<model::TokenSeq>& prompts,
                                           const model::ModelParams& p,
                                           const model::ModelConfig& cfg,
                                           std::size_t workers = 1,
                                           double threshold = kCollisionThreshold);

struct MarginReport {
    model::TokenSeq prefix;
    std::uint32_t t = 0;      // 1-based position, equals |prefix| + 1
    std::uint32_t layer = 0;
    double delta = 0.0;       // min over all token pairs of ||F(v) - F(v')||
    std::int32_t argmin_v = -1, argmin_w = -1;
    std::size_t pair_count = 0;  // C(|V|, 2)
};

// Exhaustive separation margin of the one-step map at (prefix, t, layer).
MarginReport margin(const model::TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const model::ModelParams& p, const model::ModelConfig& cfg,
                    std::size_t workers = 1);

// margin at every position t = 1..|s| along a prompt (prefix = s[0..t-1)).
std::vector<MarginReport> margin_along(const model::TokenSeq& s, std::uint32_t layer,
                                       const model::ModelParams& p,
                                       const model::ModelConfig& cfg, std::size_t workers = 1);

enum class WitnessKind { Token, Length };

// Identity-network witness: all block parameters zero, two unit rows planted
// in the token table (Token) or the position table (Length). The planted
// prompt pair lands exactly sqrt(2) apart at every layer.
struct EmbeddingWitness {
    model::ModelParams params;
    model::TokenSeq s, t;   // the separated pair
    double distance = 0.0;  // measured at the final layer
    double expected = 0.0;  // sqrt(2)
};

EmbeddingWitness embedding_witness(WitnessKind kind, const model::ModelConfig& cfg);

// One-head attention witness: the last position attends almost entirely to
// position i_star, so two sequences differing only there separate in the
// first coordinate by at least `bound`.
struct AttentionWitness {
    model::ModelParams params;
    model::TokenSeq s, t;
    std::uint32_t i_star = 0;   // 1-based differing position
    std::uint32_t seq_len = 0;  // T
    double c_ep = 0.0, c_e = 0.0;  // LayerNorm gains of the planted rows
    double delta = 0.0;            // attention leak budget, < c_ep / (c_ep + 2 c_e)
    double alpha_beta = 0.0;       // query/key scale product
    double bound = 0.0;         // (1 - delta) c_ep - 2 delta c_e, strictly positive
    double expected_gap = 0.0;  // closed-form first-coordinate gap
    double measured_gap = 0.0;  // first-coordinate gap from actual forwards
    double distance = 0.0;      // ||r(s) - r(t)|| at the final layer
};

// seq_len = 0 picks T = cfg.context.
AttentionWitness attention_witness(std::uint32_t i_star, const model::ModelConfig& cfg,
                                   std::uint32_t seq_len = 0);

inline constexpr double kHessianEigTol = 1e-3;
inline constexpr double kHessianOffBlockTol = 1e-6;
inline constexpr double kHessianDetRelTol = 1e-6;

// Finite-difference Hessian of the one-sample cross-entropy loss at the
// all-zero parameter point. The only analytically nonzero second partials
// couple the unembedding matrix with the final LayerNorm shift; their
// pattern is w_k on matching coordinates with w = (1/|V|)·1 - target.
struct HessianReport {
    double eta = 0.0;
    double w_norm = 0.0;
    std::vector<double> eigenvalues;  // sorted descending
    double eig_err = 0.0;             // vs {+w_norm ×d, 0 ×(p-2d), -w_norm ×d}
    double max_offblock_abs = 0.0;    // outside the unembed/final-shift cross blocks
    double max_cross_err = 0.0;       // inside them, vs the predicted pattern
    double max_asymmetry = 0.0;
    double det_measured = 0.0;  // det(I - eta·H) via the eigenvalues
    double det_expected = 0.0;  // (1 - eta²·w_norm²)^d
    double det_rel_err = 0.0;
    bool ok_spectrum = false, ok_offblock = false, ok_det = false;
};

HessianReport hessian_witness_check(const model::ModelConfig& cfg, const Matrix& target,
                                    double eta, double fd_step = 1e-4);

struct LengthBucket {
    std::size_t length = 0;
    std::size_t prompt_count = 0;
    std::size_t pair_count = 0;
    double min_dist = 0.0, mean_dist = 0.0, max_dist = 0.0;
    bool skipped = false;  // fewer than two distinct prompts in the bucket
};

// Per-length all-pairs distance statistics over freshly drawn distinct
// random prompts (per_bucket of each length).
std::vector<LengthBucket> length_vs_distance(const std::vector<std::size_t>& lengths,
                                             std::size_t per_bucket, std::uint64_t seed,
                                             std::uint32_t layer, const model::ModelParams& p,
                                             const model::ModelConfig& cfg,
                                             std::size_t workers = 1);

// Distinct random prompts with lengths uniform on [min_len, max_len].
std::vector<model::TokenSeq> random_prompts(std::size_t count, std::size_t min_len,
                                            std::size_t max_len, std::uint64_t seed,
                                            const model::ModelConfig& cfg);

}  // namespace sipit::probe
