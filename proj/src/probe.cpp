#include "sipit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>

#include "sipit/autograd.hpp"
#include "sipit/errors.hpp"
#include "sipit/parallel.hpp"
#include "sipit/rng.hpp"

namespace sipit::probe {

namespace {

struct RowStats {
    double min = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    double max = -std::numeric_limits<double>::infinity();
    std::size_t argmin_j = 0;
};

struct PairStats {
    double min = 0.0, mean = 0.0, max = 0.0;
    std::size_t argmin_i = 0, argmin_j = 0;
    std::size_t pairs = 0;
};

// All-pairs stats over 1×d state rows. Parallel rows write private slots;
// the reduction runs in index order, so results do not depend on `workers`.
PairStats all_pairs_stats(const std::vector<Matrix>& states, std::size_t workers) {
    const std::size_t n = states.size();
    if (n < 2) throw InputError("all-pairs statistics need at least two states");
    std::vector<RowStats> rows(n);
    parallel_for(n - 1, workers, [&](std::size_t i) {
        RowStats rs;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = l2_dist_rows(states[i], 0, states[j], 0);
            if (d < rs.min) {
                rs.min = d;
                rs.argmin_j = j;
            }
            if (d > rs.max) rs.max = d;
            rs.sum += d;
        }
        rows[i] = rs;
    });
    PairStats out;
    out.pairs = n * (n - 1) / 2;
    out.min = std::numeric_limits<double>::infinity();
    out.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (rows[i].min < out.min) {
            out.min = rows[i].min;
            out.argmin_i = i;
            out.argmin_j = rows[i].argmin_j;
        }
        if (rows[i].max > out.max) out.max = rows[i].max;
        sum += rows[i].sum;
    }
    out.mean = sum / static_cast<double>(out.pairs);
    return out;
}

void check_distinct(const std::vector<model::TokenSeq>& prompts) {
    std::map<model::TokenSeq, std::size_t> seen;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        auto [it, inserted] = seen.emplace(prompts[i], i);
        if (!inserted)
            throw InputError("duplicate prompts at indices " + std::to_string(it->second) +
                             " and " + std::to_string(i));
    }
}

std::vector<Matrix> last_token_states(const std::vector<model::TokenSeq>& prompts,
                                      std::uint32_t layer, const model::ModelParams& p,
                                      const model::ModelConfig& cfg, std::size_t workers) {
    std::vector<Matrix> states(prompts.size());
    parallel_for(prompts.size(), workers, [&](std::size_t i) {
        const auto hs = model::forward(prompts[i], p, cfg, static_cast<std::int32_t>(layer));
        states[i] = take_row(hs.layers[layer], prompts[i].size() - 1);
    });
    return states;
}

ScanReport report_from_stats(const PairStats& st, std::uint32_t layer, std::size_t n,
                             double threshold) {
    ScanReport rep;
    rep.layer = layer;
    rep.prompt_count = n;
    rep.pair_count = st.pairs;
    rep.min_dist = st.min;
    rep.mean_dist = st.mean;
    rep.max_dist = st.max;
    rep.argmin_i = st.argmin_i;
    rep.argmin_j = st.argmin_j;
    rep.threshold = threshold;
    rep.verdict = st.min > threshold;
    return rep;
}

}  // namespace

ScanReport collision_scan(const std::vector<model::TokenSeq>& prompts, std::uint32_t layer,
                          const model::ModelParams& p, const model::ModelConfig& cfg,
                          std::size_t workers, double threshold) {
    if (prompts.size() < 2) throw InputError("collision scan needs at least two prompts");
    if (layer > cfg.blocks) throw InputError("collision scan: layer exceeds block count");
    for (const auto& s : prompts) model::validate_prompt(cfg, s);
    check_distinct(prompts);
    const auto states = last_token_states(prompts, layer, p, cfg, workers);
    return report_from_stats(all_pairs_stats(states, workers), layer, prompts.size(), threshold);
}

std::vector<ScanReport> collision_scan_all(const std::vector<model::TokenSeq>& prompts,
                                           const model::ModelParams& p,
                                           const model::ModelConfig& cfg, std::size_t workers,
                                           double threshold) {
    if (prompts.size() < 2) throw InputError("collision scan needs at least two prompts");
    if (cfg.blocks == 0) throw InputError("collision scan: model has no blocks");
    for (const auto& s : prompts) model::validate_prompt(cfg, s);
    check_distinct(prompts);
    const std::size_t n = prompts.size();
    std::vector<std::vector<Matrix>> states(cfg.blocks, std::vector<Matrix>(n));
    parallel_for(n, workers, [&](std::size_t i) {
        const auto hs = model::forward(prompts[i], p, cfg);
        for (std::uint32_t l = 1; l <= cfg.blocks; ++l)
            states[l - 1][i] = take_row(hs.layers[l], prompts[i].size() - 1);
    });
    std::vector<ScanReport> reports;
    reports.reserve(cfg.blocks);
    for (std::uint32_t l = 1; l <= cfg.blocks; ++l)
        reports.push_back(
            report_from_stats(all_pairs_stats(states[l - 1], workers), l, n, threshold));
    return reports;
}

MarginReport margin(const model::TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const model::ModelParams& p, const model::ModelConfig& cfg,
                    std::size_t workers) {
    if (t != prefix.size() + 1)
        throw PositionError("margin: t must equal the prefix length plus one");
    if (t > cfg.context) throw ContextError("margin: position exceeds the context window");
    if (layer > cfg.blocks) throw InputError("margin: layer exceeds block count");
    const auto prefix_hs = model::prefix_states(prefix, p, cfg, layer);
    std::vector<Matrix> states(cfg.vocab_size);
    parallel_for(cfg.vocab_size, workers, [&](std::size_t v) {
        states[v] = model::one_step_from_prefix(prefix_hs, static_cast<std::int32_t>(v), t,
                                                layer, p, cfg);
    });
    const PairStats st = all_pairs_stats(states, workers);
    MarginReport rep;
    rep.prefix = prefix;
    rep.t = t;
    rep.layer = layer;
    rep.delta = st.min;
    rep.argmin_v = static_cast<std::int32_t>(st.argmin_i);
    rep.argmin_w = static_cast<std::int32_t>(st.argmin_j);
    rep.pair_count = st.pairs;
    return rep;
}

std::vector<MarginReport> margin_along(const model::TokenSeq& s, std::uint32_t layer,
                                       const model::ModelParams& p, const model::ModelConfig& cfg,
                                       std::size_t workers) {
    model::validate_prompt(cfg, s);
    std::vector<MarginReport> out;
    out.reserve(s.size());
    for (std::size_t t = 1; t <= s.size(); ++t) {
        const model::TokenSeq prefix(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(t) - 1);
        out.push_back(margin(prefix, static_cast<std::uint32_t>(t), layer, p, cfg, workers));
    }
    return out;
}

EmbeddingWitness embedding_witness(WitnessKind kind, const model::ModelConfig& cfg) {
    cfg.validate();
    if (cfg.width < 2) throw ConfigError("embedding witness needs width >= 2");
    EmbeddingWitness w;
    w.params = model::zero_params(cfg);
    if (kind == WitnessKind::Token) {
        if (cfg.vocab_size < 2) throw ConfigError("token witness needs at least two tokens");
        w.params.tok_embed.at(0, 0) = 1.0;  // token 0 -> first basis vector
        w.params.tok_embed.at(1, 1) = 1.0;  // token 1 -> second basis vector
        w.s = {0};
        w.t = {1};
    } else {
        if (cfg.context < 2) throw ConfigError("length witness needs context >= 2");
        w.params.pos_embed.at(0, 0) = 1.0;  // length-1 prompts end on basis vector 1
        w.params.pos_embed.at(1, 1) = 1.0;  // length-2 prompts end on basis vector 2
        w.s = {0};
        w.t = {0, 0};
    }
    const Matrix rs = model::last_token_repr(w.s, w.params, cfg);
    const Matrix rt = model::last_token_repr(w.t, w.params, cfg);
    w.distance = l2_dist_rows(rs, 0, rt, 0);
    w.expected = std::sqrt(2.0);
    return w;
}

AttentionWitness attention_witness(std::uint32_t i_star, const model::ModelConfig& cfg,
                                   std::uint32_t seq_len) {
    cfg.validate();
    if (seq_len == 0) seq_len = cfg.context;
    if (cfg.width < 4) throw ConfigError("attention witness needs width >= 4");
    if (cfg.vocab_size < 2) throw ConfigError("attention witness needs at least two tokens");
    if (cfg.blocks < 1) throw ConfigError("attention witness needs at least one block");
    if (seq_len < 2 || seq_len > cfg.context)
        throw ConfigError("attention witness needs 2 <= seq_len <= context");
    if (i_star < 1 || i_star >= seq_len)
        throw ConfigError("attention witness needs 1 <= i_star < seq_len");

    const std::size_t d = cfg.width;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    // Orthonormal, zero-mean directions (needs d >= 4).
    Matrix e(1, d), pdir(1, d), q(1, d);
    e.at(0, 0) = inv_sqrt2;
    e.at(0, 1) = -inv_sqrt2;
    pdir.at(0, 2) = inv_sqrt2;
    pdir.at(0, 3) = -inv_sqrt2;
    q.at(0, 0) = 0.5;
    q.at(0, 1) = 0.5;
    q.at(0, 2) = -0.5;
    q.at(0, 3) = -0.5;

    AttentionWitness w;
    w.i_star = i_star;
    w.seq_len = seq_len;
    const double T = static_cast<double>(seq_len);
    w.c_ep = 1.0 / std::sqrt(2.0 / static_cast<double>(d) + cfg.ln_epsilon);
    w.c_e = 1.0 / std::sqrt(1.0 / static_cast<double>(d) + cfg.ln_epsilon);
    w.delta = 0.5 * w.c_ep / (w.c_ep + 2.0 * w.c_e);  // half the admissible budget
    const double score = std::log((1.0 - w.delta) / w.delta * (T - 1.0));
    w.alpha_beta = std::sqrt(static_cast<double>(cfg.head_dim)) * score / (w.c_ep * w.c_ep);
    w.bound = (1.0 - w.delta) * w.c_ep - 2.0 * w.delta * w.c_e;

    w.params = model::zero_params(cfg);
    // Tokens: 0 carries direction e (used at i_star and T), 1 is a zero filler.
    for (std::size_t c = 0; c < d; ++c) w.params.tok_embed.at(0, c) = e.at(0, c);
    // Positions (1-based i_star, T): direction p at i_star, q at T.
    for (std::size_t c = 0; c < d; ++c) {
        w.params.pos_embed.at(i_star - 1, c) = pdir.at(0, c);
        w.params.pos_embed.at(seq_len - 1, c) = q.at(0, c);
    }
    auto& blk = w.params.blocks[0];
    // First block normalizes with unit scale; later blocks stay identity.
    for (std::size_t c = 0; c < d; ++c) blk.ln1_gamma.at(0, c) = 1.0;
    const double a = std::sqrt(w.alpha_beta);
    for (std::size_t c = 0; c < d; ++c) {
        blk.heads[0].wq.at(c, 0) = a * e.at(0, c);
        blk.heads[0].wk.at(c, 0) = a * pdir.at(0, c);
        blk.heads[0].wv.at(c, 0) = e.at(0, c);
    }
    blk.w_out.at(0, 0) = 1.0;  // head coordinate 1 -> residual coordinate 1

    w.s.assign(seq_len, 1);
    w.t.assign(seq_len, 1);
    w.s[i_star - 1] = 0;
    w.s[seq_len - 1] = 0;
    w.t[seq_len - 1] = 0;

    // Closed-form first-coordinate gap: attention at the last row sees score
    // `score` (sequence s) or score·c_e/c_ep (sequence t) at i_star and zero
    // elsewhere, with value magnitudes c_ep at i_star (s only) and at T.
    {
        const double exp_s = std::exp(score);            // = (1-δ)(T-1)/δ
        const double denom_s = exp_s + (T - 1.0);
        const double a_star_s = exp_s / denom_s;         // exactly 1-δ
        const double a_last_s = 1.0 / denom_s;           // δ/(T-1)
        const double exp_t = std::exp(score * w.c_e / w.c_ep);
        const double a_last_t = 1.0 / (exp_t + (T - 1.0));
        w.expected_gap = (a_star_s + a_last_s) * w.c_ep - a_last_t * w.c_ep;
    }

    const Matrix rs = model::last_token_repr(w.s, w.params, cfg);
    const Matrix rt = model::last_token_repr(w.t, w.params, cfg);
    w.measured_gap = rs.at(0, 0) - rt.at(0, 0);
    w.distance = l2_dist_rows(rs, 0, rt, 0);
    return w;
}

HessianReport hessian_witness_check(const model::ModelConfig& cfg, const Matrix& target,
                                    double eta, double fd_step) {
    cfg.validate();
    if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("hessian check: eta must lie in (0,1)");
    if (!(fd_step > 0.0)) throw ConfigError("hessian check: step must be positive");
    if (target.rows() != 1 || target.cols() != cfg.vocab_size)
        throw ShapeError("hessian check: target must be 1×|V|");
    double tsum = 0.0;
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        if (target.at(0, v) < 0.0) throw DomainError("hessian check: negative target entry");
        tsum += target.at(0, v);
    }
    if (std::abs(tsum - 1.0) > 1e-9) throw DomainError("hessian check: target must sum to 1");

    const std::size_t p = cfg.param_count();
    const std::size_t d = cfg.width;
    if (p > 2048)
        throw ConfigError("hessian check: config too large for a dense finite-difference Hessian");
    const model::TokenSeq s = {0};

    model::ModelParams theta = model::zero_params(cfg);
    std::vector<double> flat = model::flatten(theta);

    auto grad_at = [&](const std::vector<double>& x) {
        model::unflatten(x, theta);
        return model::flatten(grad::grad_loss_params(s, target, theta, cfg).grads);
    };
    // Central differences of the reverse-mode gradient, one column at a time.
    Matrix hess(p, p);
    for (std::size_t j = 0; j < p; ++j) {
        std::vector<double> x = flat;
        x[j] = fd_step;
        const auto gp = grad_at(x);
        x[j] = -fd_step;
        const auto gm = grad_at(x);
        for (std::size_t i = 0; i < p; ++i)
            hess.at(i, j) = (gp[i] - gm[i]) / (2.0 * fd_step);
    }

    HessianReport rep;
    rep.eta = eta;
    Matrix w(1, cfg.vocab_size);
    double wsq = 0.0;
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        w.at(0, v) = 1.0 / static_cast<double>(cfg.vocab_size) - target.at(0, v);
        wsq += w.at(0, v) * w.at(0, v);
    }
    rep.w_norm = std::sqrt(wsq);

    // Flat offsets of the two coupled tensors.
    std::size_t off = 0, u_off = 0, b_off = 0;
    model::for_each_tensor(theta, [&](const char* name, Matrix& m) {
        const std::string n = name;
        if (n == "unembed_w") u_off = off;
        if (n == "lnf_beta") b_off = off;
        off += m.data().size();
    });

    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            if (j < i) continue;  // symmetric; visit upper triangle once
            const double hij = hess.at(i, j);
            const double hji = hess.at(j, i);
            rep.max_asymmetry = std::max(rep.max_asymmetry, std::abs(hij - hji));
            // Predicted entry: w_k when one index is unembed (k,c) and the
            // other is the final shift coordinate c; zero everywhere else.
            double pred = 0.0;
            const bool i_in_u = i >= u_off && i < u_off + cfg.vocab_size * d;
            const bool j_in_b = j >= b_off && j < b_off + d;
            if (i_in_u && j_in_b) {
                const std::size_t k = (i - u_off) / d;
                const std::size_t c = (i - u_off) % d;
                if (c == j - b_off) pred = w.at(0, k);
            }
            const bool in_cross = i_in_u && j_in_b;
            const double err = std::max(std::abs(hij - pred), std::abs(hji - pred));
            if (in_cross)
                rep.max_cross_err = std::max(rep.max_cross_err, err);
            else
                rep.max_offblock_abs = std::max(rep.max_offblock_abs, err);
        }
    }

    rep.eigenvalues = jacobi_eigenvalues(hess);
    std::vector<double> pred_eigs(p, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        pred_eigs[i] = rep.w_norm;
        pred_eigs[p - 1 - i] = -rep.w_norm;
    }
    std::sort(pred_eigs.begin(), pred_eigs.end(), std::greater<double>());
    for (std::size_t i = 0; i < p; ++i)
        rep.eig_err = std::max(rep.eig_err, std::abs(rep.eigenvalues[i] - pred_eigs[i]));

    rep.det_measured = 1.0;
    for (double lam : rep.eigenvalues) rep.det_measured *= 1.0 - eta * lam;
    rep.det_expected = std::pow(1.0 - eta * eta * wsq, static_cast<double>(d));
    rep.det_rel_err = std::abs(rep.det_measured - rep.det_expected) / std::abs(rep.det_expected);

    rep.ok_spectrum = rep.eig_err <= kHessianEigTol;
    rep.ok_offblock = rep.max_offblock_abs <= kHessianOffBlockTol;
    rep.ok_det = rep.det_rel_err <= kHessianDetRelTol;
    return rep;
}

std::vector<model::TokenSeq> random_prompts(std::size_t count, std::size_t min_len,
                                            std::size_t max_len, std::uint64_t seed,
                                            const model::ModelConfig& cfg) {
    if (min_len == 0 || min_len > max_len || max_len > cfg.context)
        throw InputError("random_prompts: need 1 <= min_len <= max_len <= context");
    Rng rng(seed);
    std::set<model::TokenSeq> seen;
    std::vector<model::TokenSeq> out;
    out.reserve(count);
    const std::size_t span = max_len - min_len + 1;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 100 * count + 1000;
    while (out.size() < count && attempts < max_attempts) {
        ++attempts;
        const std::size_t len = min_len + rng.below(static_cast<std::uint32_t>(span));
        model::TokenSeq s(len);
        for (auto& id : s) id = static_cast<std::int32_t>(rng.below(cfg.vocab_size));
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    if (out.size() < count)
        throw InputError("random_prompts: could not draw enough distinct prompts");
    return out;
}

std::vector<LengthBucket> length_vs_distance(const std::vector<std::size_t>& lengths,
                                             std::size_t per_bucket, std::uint64_t seed,
                                             std::uint32_t layer, const model::ModelParams& p,
                                             const model::ModelConfig& cfg, std::size_t workers) {
    if (layer > cfg.blocks) throw InputError("length_vs_distance: layer exceeds block count");
    std::vector<LengthBucket> out;
    out.reserve(lengths.size());
    std::uint64_t bucket_seed = seed;
    for (std::size_t len : lengths) {
        if (len == 0 || len > cfg.context)
            throw InputError("length_vs_distance: length outside [1, context]");
        LengthBucket b;
        b.length = len;
        // Distinct prompts of one exact length; tiny spaces cap the bucket.
        std::vector<model::TokenSeq> prompts;
        {
            Rng rng(bucket_seed++);
            std::set<model::TokenSeq> seen;
            std::size_t attempts = 0;
            while (prompts.size() < per_bucket && attempts < 100 * per_bucket + 1000) {
                ++attempts;
                model::TokenSeq s(len);
                for (auto& id : s) id = static_cast<std::int32_t>(rng.below(cfg.vocab_size));
                if (seen.insert(s).second) prompts.push_back(std::move(s));
            }
        }
        b.prompt_count = prompts.size();
        if (prompts.size() < 2) {
            b.skipped = true;
            out.push_back(b);
            continue;
        }
        const auto states = last_token_states(prompts, layer, p, cfg, workers);
        const PairStats st = all_pairs_stats(states, workers);
        b.pair_count = st.pairs;
        b.min_dist = st.min;
        b.mean_dist = st.mean;
        b.max_dist = st.max;
        out.push_back(b);
    }
    return out;
}

}  // namespace sipit::probe
