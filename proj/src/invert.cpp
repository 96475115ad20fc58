#include "sipit/invert.hpp"

#include <cmath>
#include <string>

#include "sipit/autograd.hpp"
#include "sipit/errors.hpp"

namespace sipit::invert {

void VerifierConfig::validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("verifier: epsilon must be >= 0");
    if (backoff) {
        if (!(backoff_start > 0.0)) throw ConfigError("verifier: backoff start must be positive");
        if (!(backoff_cap >= backoff_start))
            throw ConfigError("verifier: backoff cap must be >= backoff start");
        if (!(backoff_cap >= epsilon)) throw ConfigError("verifier: backoff cap must be >= epsilon");
    }
}

const char* policy_name(Policy p) { return p == Policy::Random ? "random" : "gradient"; }

Policy policy_from_name(const std::string& name) {
    if (name == "random") return Policy::Random;
    if (name == "gradient") return Policy::Gradient;
    throw ConfigError("unknown policy '" + name + "' (expected random or gradient)");
}

PolicyState make_policy_state(const model::ModelConfig& cfg) {
    PolicyState st;
    st.visited.assign(cfg.vocab_size, false);
    return st;
}

namespace {

void mark_visited(PolicyState& st, std::int32_t v) {
    st.visited[static_cast<std::size_t>(v)] = true;
    ++st.visited_count;
    ++st.counter;
}

// Injected input row of token v at (1-based) position t: E_v + P_t.
Matrix injected_row(std::int32_t v, std::uint32_t t, const model::ModelParams& p) {
    Matrix row = take_row(p.tok_embed, static_cast<std::size_t>(v));
    for (std::size_t c = 0; c < row.cols(); ++c) row.at(0, c) += p.pos_embed.at(t - 1, c);
    return row;
}

// Nearest unvisited token to the proxy in injected-row space; ties break
// toward the lowest id (strict < with ascending scan).
std::int32_t nearest_unvisited(const PolicyState& st, std::uint32_t t,
                               const model::ModelParams& p) {
    std::int32_t best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < st.visited.size(); ++v) {
        if (st.visited[v]) continue;
        const Matrix row = injected_row(static_cast<std::int32_t>(v), t, p);
        const double d = l2_dist_rows(row, 0, st.proxy, 0);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::int32_t>(v);
        }
    }
    return best;
}

}  // namespace

std::int32_t policy_random(PolicyState& st, Rng& rng) {
    if (st.visited_count >= st.visited.size())
        throw ExhaustionError("random policy: all tokens proposed at this position");
    if (st.order.empty()) st.order = rng.permutation(static_cast<std::int32_t>(st.visited.size()));
    for (std::int32_t v : st.order) {
        if (!st.visited[static_cast<std::size_t>(v)]) {
            mark_visited(st, v);
            return v;
        }
    }
    throw ExhaustionError("random policy: permutation exhausted");
}

std::int32_t policy_gradient(PolicyState& st, const model::HiddenStates& prefix_hs,
                             std::uint32_t t, std::uint32_t layer, const Matrix& h_hat,
                             const model::ModelParams& p, const model::ModelConfig& cfg) {
    if (st.visited_count >= st.visited.size())
        throw ExhaustionError("gradient policy: all tokens proposed at this position");
    const auto vg = grad::grad_distance_embedding_cached(prefix_hs, st.proxy, t, layer, h_hat,
                                                         p, cfg);
    for (std::size_t c = 0; c < st.proxy.cols(); ++c)
        st.proxy.at(0, c) -= st.gamma * vg.grad.at(0, c);
    // Periodic projection: pull the free-floating proxy back onto a token.
    if (st.k_proj > 0 && (st.counter + 1) % st.k_proj == 0) {
        const std::int32_t snap = nearest_unvisited(st, t, p);
        if (snap >= 0) st.proxy = injected_row(snap, t, p);
    }
    const std::int32_t v = nearest_unvisited(st, t, p);
    mark_visited(st, v);
    return v;
}

bool verify(std::int32_t v, const Matrix& h_hat, const model::TokenSeq& prefix, std::uint32_t t,
            const VerifierConfig& vc, const model::ModelParams& p, const model::ModelConfig& cfg) {
    vc.validate();
    if (h_hat.rows() != 1 || h_hat.cols() != cfg.width)
        throw ShapeError("verify: target state must be 1×width");
    const Matrix f = model::one_step_map(v, prefix, t, vc.layer, p, cfg);
    return l2_dist_rows(f, 0, h_hat, 0) <= vc.epsilon;
}

RecoveryResult invert(const Matrix& states, const VerifierConfig& vc, Policy policy,
                      const model::ModelParams& p, const model::ModelConfig& cfg,
                      std::uint64_t seed, const model::TokenSeq* ground_truth) {
    vc.validate();
    cfg.validate();
    if (states.rows() == 0) throw InputError("invert: no state rows");
    if (states.rows() > cfg.context) throw InputError("invert: more rows than the context window");
    if (states.cols() != cfg.width) throw ShapeError("invert: state width mismatch");
    if (vc.layer > cfg.blocks) throw InputError("invert: layer exceeds block count");
    if (ground_truth && ground_truth->size() != states.rows())
        throw InputError("invert: ground truth length mismatch");

    const std::size_t T = states.rows();
    const std::size_t V = cfg.vocab_size;
    Rng rng(seed);
    // Proxy start: mean token embedding (plus the position row, added per t).
    Matrix mean_embed(1, cfg.width);
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t c = 0; c < cfg.width; ++c)
            mean_embed.at(0, c) += p.tok_embed.at(v, c) / static_cast<double>(V);

    RecoveryResult res;
    if (ground_truth) res.has_ground_truth = true;

    for (std::size_t ti = 1; ti <= T; ++ti) {
        const auto t = static_cast<std::uint32_t>(ti);
        const Matrix h_hat = take_row(states, ti - 1);
        const auto prefix_hs = model::prefix_states(res.ids, p, cfg, vc.layer);

        PolicyState st = make_policy_state(cfg);
        if (policy == Policy::Gradient) {
            st.proxy = mean_embed;
            for (std::size_t c = 0; c < cfg.width; ++c)
                st.proxy.at(0, c) += p.pos_embed.at(ti - 1, c);
        }

        std::vector<double> dist(V, std::numeric_limits<double>::infinity());
        std::size_t proposals = 0;
        std::int32_t accepted = -1;
        double accepted_eps = vc.epsilon;
        std::int32_t best_v = -1;
        double best_d = std::numeric_limits<double>::infinity();

        while (st.visited_count < V) {
            const std::int32_t v =
                policy == Policy::Random
                    ? policy_random(st, rng)
                    : policy_gradient(st, prefix_hs, t, vc.layer, h_hat, p, cfg);
            ++proposals;
            ++res.total_tests;
            const Matrix f = model::one_step_from_prefix(prefix_hs, v, t, vc.layer, p, cfg);
            const double d = l2_dist_rows(f, 0, h_hat, 0);
            dist[static_cast<std::size_t>(v)] = d;
            if (d < best_d) {
                best_d = d;
                best_v = v;
            }
            if (d <= vc.epsilon) {
                accepted = v;
                break;
            }
        }

        if (accepted < 0 && vc.backoff) {
            // Every candidate distance is already cached; re-threshold only.
            double eps_b = vc.backoff_start;
            while (eps_b <= vc.epsilon) eps_b *= 10.0;
            for (; eps_b <= vc.backoff_cap; eps_b *= 10.0) {
                std::int32_t hit = -1;
                std::size_t hits = 0;
                for (std::size_t v = 0; v < V; ++v) {
                    if (dist[v] <= eps_b) {
                        ++hits;
                        if (hit < 0) hit = static_cast<std::int32_t>(v);
                    }
                }
                if (hits >= 2)
                    throw AmbiguityError("position " + std::to_string(ti) + ": " +
                                         std::to_string(hits) + " tokens verify at epsilon " +
                                         std::to_string(eps_b));
                if (hits == 1) {
                    accepted = hit;
                    accepted_eps = eps_b;
                    break;
                }
            }
        }

        if (accepted < 0) {
            res.failed_position = static_cast<std::int64_t>(ti);
            res.best_token = best_v;
            res.best_distance = best_d;
            break;
        }
        res.ids.push_back(accepted);
        res.proposals.push_back(proposals);
        res.accepted_eps.push_back(accepted_eps);
    }

    if (res.total_tests > T * V)
        throw Error("invert: verifier test budget exceeded");  // unreachable by construction
    if (ground_truth) res.exact_match = res.ok() && res.ids == *ground_truth;
    return res;
}

RecoveryResult brute_force_invert(const Matrix& states, std::uint32_t layer,
                                  const model::ModelParams& p, const model::ModelConfig& cfg,
                                  std::uint64_t seed, const model::TokenSeq* ground_truth) {
    VerifierConfig vc;
    vc.epsilon = 0.0;
    vc.backoff = false;
    vc.layer = layer;
    return invert(states, vc, Policy::Random, p, cfg, seed, ground_truth);
}

}  // namespace sipit::invert
