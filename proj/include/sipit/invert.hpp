#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "sipit/matrix.hpp"
#include "sipit/model.hpp"
#include "sipit/rng.hpp"

namespace sipit::invert {

struct VerifierConfig {
    double epsilon = 0.0;  // acceptance radius around F(v; prefix, t)
    bool backoff = true;   // grow epsilon tenfold when a position exhausts V
    double backoff_start = 1e-9;
    double backoff_cap = 1e-3;
    std::uint32_t layer = 1;  // states were captured at this layer

    void validate() const;

    bool operator==(const VerifierConfig&) const = default;
};

enum class Policy : std::uint8_t { Random, Gradient };

const char* policy_name(Policy p);
Policy policy_from_name(const std::string& name);

// Per-position proposal state. The visited set grows by exactly one per
// proposal, so no token is ever proposed twice at the same position.
struct PolicyState {
    std::vector<bool> visited;
    std::size_t visited_count = 0;
    std::vector<std::int32_t> order;  // random policy: permutation, drawn lazily
    Matrix proxy;                     // gradient policy: current embedding iterate (1×d)
    std::size_t counter = 0;          // proposals emitted so far
    double gamma = 0.1;               // proxy step size
    std::size_t k_proj = 50;          // snap the proxy to a token every k_proj proposals
};

PolicyState make_policy_state(const model::ModelConfig& cfg);

// Next unvisited token under a per-position uniform permutation.
std::int32_t policy_random(PolicyState& st, Rng& rng);

// One gradient step of 0.5·||F(e; prefix, t) - h_hat||² on the proxy, then
// the unvisited token whose injected row (E_v + P_t) is nearest to it; ties
// break toward the lowest id. Every k_proj proposals the proxy snaps to the
// nearest unvisited injected row.
std::int32_t policy_gradient(PolicyState& st, const model::HiddenStates& prefix_hs,
                             std::uint32_t t, std::uint32_t layer, const Matrix& h_hat,
                             const model::ModelParams& p, const model::ModelConfig& cfg);

// True iff ||F(v; prefix, t) - h_hat||₂ <= vc.epsilon at vc.layer.
bool verify(std::int32_t v, const Matrix& h_hat, const model::TokenSeq& prefix, std::uint32_t t,
            const VerifierConfig& vc, const model::ModelParams& p, const model::ModelConfig& cfg);

struct RecoveryResult {
    model::TokenSeq ids;                  // recovered prefix (full sequence on success)
    std::vector<std::size_t> proposals;   // per recovered position
    std::vector<double> accepted_eps;     // epsilon that accepted each position
    std::size_t total_tests = 0;          // never exceeds T·|V|
    bool has_ground_truth = false;
    bool exact_match = false;
    std::int64_t failed_position = 0;     // 1-based position that exhausted, 0 = success
    std::int32_t best_token = -1;         // closest candidate at the failed position
    double best_distance = std::numeric_limits<double>::infinity();

    bool ok() const { return failed_position == 0; }
};

// Sequential recovery: for t = 1..T propose tokens at position t until one
// verifies against row t of `states`, then continue from the grown prefix.
// A position that exhausts V re-thresholds its cached distances under the
// backoff ladder (no new forward evaluations); if several tokens pass the
// inflated epsilon the run aborts with AmbiguityError rather than guess.
RecoveryResult invert(const Matrix& states, const VerifierConfig& vc, Policy policy,
                      const model::ModelParams& p, const model::ModelConfig& cfg,
                      std::uint64_t seed, const model::TokenSeq* ground_truth = nullptr);

// The ablation: random policy, epsilon = 0, no backoff.
RecoveryResult brute_force_invert(const Matrix& states, std::uint32_t layer,
                                  const model::ModelParams& p, const model::ModelConfig& cfg,
                                  std::uint64_t seed,
                                  const model::TokenSeq* ground_truth = nullptr);

}  // namespace sipit::invert
