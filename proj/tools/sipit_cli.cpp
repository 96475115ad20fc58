#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sipit/errors.hpp"
#include "sipit/invert.hpp"
#include "sipit/io.hpp"
#include "sipit/matrix.hpp"
#include "sipit/model.hpp"
#include "sipit/parallel.hpp"
#include "sipit/probe.hpp"
#include "sipit/training.hpp"

namespace fs = std::filesystem;
using sipit::Matrix;
using sipit::io::json;

namespace {

// Derived seed streams so corpus, schedule, prompts and inversion draws
// never alias the initialization stream.
constexpr std::uint64_t kCorpusSeed = 0x100000;
constexpr std::uint64_t kScheduleSeed = 0x200000;
constexpr std::uint64_t kScanSeed = 0x300000;
constexpr std::uint64_t kInvertSeed = 0x400000;
constexpr std::uint64_t kGradcheckSeed = 0x500000;

constexpr double kGradcheckStep = 1e-5;
constexpr double kGradcheckTol = 1e-6;
constexpr double kWitnessPairTol = 1e-12;
constexpr double kWitnessGapTol = 1e-9;

struct CommonOpts {
    std::string config_path;
    std::string weights_path;
    std::string out_dir = "out";
    std::int64_t layer = -1;  // -1 = not given
    double epsilon = -1.0;    // <0 = not given
    std::string policy;
    std::int64_t seed = -1;   // -1 = not given
    std::size_t workers = 0;  // 0 = hardware default
    std::string prompts_path;
    std::string states_path;
    std::size_t count = 20;  // gradcheck models
};

sipit::io::ExperimentConfig resolve_config(const CommonOpts& o) {
    sipit::io::ExperimentConfig cfg;
    if (!o.config_path.empty()) cfg = sipit::io::load_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.epsilon >= 0.0) cfg.verifier.epsilon = o.epsilon;
    if (!o.policy.empty()) cfg.policy = o.policy;
    const char* env = std::getenv("SIPIT_CHECKED");
    sipit::set_checked_mode(cfg.checked || (env && std::string(env) == "1"));
    return cfg;
}

std::size_t resolve_workers(const CommonOpts& o) {
    return o.workers == 0 ? sipit::default_workers() : o.workers;
}

fs::path ensure_out(const CommonOpts& o) {
    fs::path dir(o.out_dir);
    fs::create_directories(dir);
    return dir;
}

json envelope(const char* command, const sipit::io::ExperimentConfig& cfg, json results,
              double seconds) {
    json j;
    j["command"] = command;
    j["config_hash"] = sipit::io::config_hash(cfg);
    j["seed"] = cfg.seed;
    j["config"] = sipit::io::config_to_json(cfg);
    j["results"] = std::move(results);
    j["timing"] = {{"seconds", seconds}};
    return j;
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

sipit::io::LoadedModel load_weights_for(const CommonOpts& o) {
    if (o.weights_path.empty()) throw sipit::InputError("--weights is required for this command");
    return sipit::io::read_weights(o.weights_path);
}

std::string csv_join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line.push_back(',');
        line += cells[i];
    }
    line.push_back('\n');
    return line;
}

int cmd_init(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto dir = ensure_out(o);
    Timer timer;
    const auto params = sipit::model::init_params(cfg.model, cfg.seed, cfg.init_std);
    sipit::io::write_weights((dir / "weights.sipw").string(), params, cfg.model);
    sipit::io::save_config((dir / "config.json").string(), cfg);
    json results = {{"weights", (dir / "weights.sipw").string()},
                    {"param_count", cfg.model.param_count()}};
    sipit::io::write_text((dir / "init.json").string(),
                          envelope("init", cfg, results, timer.seconds()).dump(2) + "\n");
    std::cout << "wrote " << (dir / "weights.sipw").string() << " (" << cfg.model.param_count()
              << " parameters)\n";
    return 0;
}

int cmd_train(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto lm = load_weights_for(o);
    if (!(lm.cfg == cfg.model))
        throw sipit::ConfigError("weights were built for a different model config");
    const auto dir = ensure_out(o);
    Timer timer;
    const auto corpus = sipit::train::make_toy_corpus(cfg.model, cfg.corpus_size,
                                                      cfg.corpus_max_len, cfg.soft_fraction,
                                                      cfg.seed + kCorpusSeed);
    const auto schedule = sipit::train::make_schedule(cfg.train_steps, cfg.eta, corpus.size(),
                                                      cfg.batch_sizes, cfg.seed + kScheduleSeed);
    const auto res = sipit::train::train(lm.params, corpus, schedule, cfg.model);
    sipit::io::write_weights((dir / "weights_trained.sipw").string(), res.params, cfg.model);
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i)
        csv += csv_join({std::to_string(i), sipit::io::fmt_double(res.loss_trace[i])});
    sipit::io::write_text((dir / "loss.csv").string(), csv);
    json results = {{"steps", cfg.train_steps},
                    {"corpus_size", corpus.size()},
                    {"initial_loss", res.loss_trace.front()},
                    {"final_loss", res.loss_trace.back()},
                    {"loss_trace", res.loss_trace}};
    sipit::io::write_text((dir / "train.json").string(),
                          envelope("train", cfg, results, timer.seconds()).dump(2) + "\n");
    std::cout << "trained " << cfg.train_steps << " steps: loss " << res.loss_trace.front()
              << " -> " << res.loss_trace.back() << "\n";
    return 0;
}

int cmd_scan(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto lm = load_weights_for(o);
    const auto dir = ensure_out(o);
    const std::size_t workers = resolve_workers(o);
    Timer timer;
    const std::size_t max_len = cfg.scan_max_len == 0 ? lm.cfg.context : cfg.scan_max_len;
    const auto prompts = sipit::probe::random_prompts(cfg.scan_prompts, cfg.scan_min_len, max_len,
                                                      cfg.seed + kScanSeed, lm.cfg);
    std::vector<sipit::probe::ScanReport> reports;
    if (o.layer >= 0)
        reports.push_back(sipit::probe::collision_scan(prompts,
                                                       static_cast<std::uint32_t>(o.layer),
                                                       lm.params, lm.cfg, workers,
                                                       cfg.threshold));
    else
        reports = sipit::probe::collision_scan_all(prompts, lm.params, lm.cfg, workers,
                                                   cfg.threshold);
    json arr = json::array();
    std::string csv =
        "layer,prompt_count,pair_count,min_dist,mean_dist,max_dist,argmin_i,argmin_j,threshold,"
        "verdict\n";
    bool all_ok = true;
    for (const auto& r : reports) {
        arr.push_back(sipit::io::scan_report_json(r));
        csv += csv_join({std::to_string(r.layer), std::to_string(r.prompt_count),
                         std::to_string(r.pair_count), sipit::io::fmt_double(r.min_dist),
                         sipit::io::fmt_double(r.mean_dist), sipit::io::fmt_double(r.max_dist),
                         std::to_string(r.argmin_i), std::to_string(r.argmin_j),
                         sipit::io::fmt_double(r.threshold), r.verdict ? "1" : "0"});
        all_ok = all_ok && r.verdict;
    }
    sipit::io::write_text((dir / "scan.json").string(),
                          envelope("scan", cfg, arr, timer.seconds()).dump(2) + "\n");
    sipit::io::write_text((dir / "scan.csv").string(), csv);
    for (const auto& r : reports)
        std::cout << "layer " << r.layer << ": min " << r.min_dist << " over " << r.pair_count
                  << " pairs -> " << (r.verdict ? "ok" : "COLLISION") << "\n";
    if (!all_ok) {
        std::cerr << "error: collision scan verdict failed\n";
        return 3;
    }
    return 0;
}

int cmd_margin(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto lm = load_weights_for(o);
    const auto dir = ensure_out(o);
    Timer timer;
    const std::uint32_t layer =
        o.layer >= 0 ? static_cast<std::uint32_t>(o.layer) : cfg.margin_layer;
    const auto t = static_cast<std::uint32_t>(cfg.margin_prefix.size() + 1);
    const auto rep = sipit::probe::margin(cfg.margin_prefix, t, layer, lm.params, lm.cfg,
                                          resolve_workers(o));
    sipit::io::write_text(
        (dir / "margin.json").string(),
        envelope("margin", cfg, sipit::io::margin_report_json(rep), timer.seconds()).dump(2) +
            "\n");
    std::string csv = "t,layer,delta,argmin_v,argmin_w,pair_count\n";
    csv += csv_join({std::to_string(rep.t), std::to_string(rep.layer),
                     sipit::io::fmt_double(rep.delta), std::to_string(rep.argmin_v),
                     std::to_string(rep.argmin_w), std::to_string(rep.pair_count)});
    sipit::io::write_text((dir / "margin.csv").string(), csv);
    std::cout << "margin at t=" << rep.t << ", layer " << rep.layer << ": " << rep.delta << "\n";
    return 0;
}

int cmd_witness(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto dir = ensure_out(o);
    Timer timer;
    json results;
    bool ok = false;
    if (cfg.witness_kind == "token" || cfg.witness_kind == "length") {
        const auto kind = cfg.witness_kind == "token" ? sipit::probe::WitnessKind::Token
                                                      : sipit::probe::WitnessKind::Length;
        const auto w = sipit::probe::embedding_witness(kind, cfg.model);
        results = sipit::io::embedding_witness_json(w);
        results["kind"] = cfg.witness_kind;
        ok = std::abs(w.distance - w.expected) <= kWitnessPairTol;
        sipit::io::write_weights((dir / "witness_weights.sipw").string(), w.params, cfg.model);
    } else if (cfg.witness_kind == "attention") {
        const auto w =
            sipit::probe::attention_witness(cfg.witness_i_star, cfg.model, cfg.witness_seq_len);
        results = sipit::io::attention_witness_json(w);
        ok = w.bound > 0.0 && w.measured_gap >= w.bound &&
             std::abs(w.measured_gap - w.expected_gap) <= kWitnessGapTol;
        sipit::io::write_weights((dir / "witness_weights.sipw").string(), w.params, cfg.model);
    } else {
        throw sipit::ConfigError("witness kind must be token, length, or attention");
    }
    results["ok"] = ok;
    sipit::io::write_text((dir / "witness.json").string(),
                          envelope("witness", cfg, results, timer.seconds()).dump(2) + "\n");
    std::cout << "witness '" << cfg.witness_kind << "': " << (ok ? "ok" : "FAILED") << "\n";
    return ok ? 0 : 3;
}

int cmd_hessian(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto dir = ensure_out(o);
    Timer timer;
    const Matrix target = sipit::io::hessian_target_vector(cfg.hessian_target, cfg.model);
    json arr = json::array();
    std::string csv =
        "eta,w_norm,eig_err,max_offblock_abs,max_cross_err,det_measured,det_expected,det_rel_err,"
        "ok\n";
    bool all_ok = true;
    for (double eta : cfg.hessian_etas) {
        const auto rep = sipit::probe::hessian_witness_check(cfg.model, target, eta);
        const bool ok = rep.ok_spectrum && rep.ok_offblock && rep.ok_det;
        all_ok = all_ok && ok;
        json jr = sipit::io::hessian_report_json(rep);
        jr.erase("eigenvalues");  // keep the report small; extremes suffice
        jr["eig_max"] = rep.eigenvalues.front();
        jr["eig_min"] = rep.eigenvalues.back();
        arr.push_back(jr);
        csv += csv_join({sipit::io::fmt_double(rep.eta), sipit::io::fmt_double(rep.w_norm),
                         sipit::io::fmt_double(rep.eig_err),
                         sipit::io::fmt_double(rep.max_offblock_abs),
                         sipit::io::fmt_double(rep.max_cross_err),
                         sipit::io::fmt_double(rep.det_measured),
                         sipit::io::fmt_double(rep.det_expected),
                         sipit::io::fmt_double(rep.det_rel_err), ok ? "1" : "0"});
        std::cout << "eta " << eta << ": det " << rep.det_measured << " (expected "
                  << rep.det_expected << ") -> " << (ok ? "ok" : "FAILED") << "\n";
    }
    sipit::io::write_text((dir / "hessian.json").string(),
                          envelope("hessian", cfg, arr, timer.seconds()).dump(2) + "\n");
    sipit::io::write_text((dir / "hessian.csv").string(), csv);
    if (!all_ok) {
        std::cerr << "error: hessian witness check failed\n";
        return 3;
    }
    return 0;
}

int cmd_dump_states(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto lm = load_weights_for(o);
    const auto dir = ensure_out(o);
    if (o.prompts_path.empty()) throw sipit::InputError("dump-states needs a prompt file");
    if (o.layer < 0) throw sipit::InputError("dump-states needs --layer");
    const auto layer = static_cast<std::uint32_t>(o.layer);
    if (layer > lm.cfg.blocks) throw sipit::InputError("--layer exceeds the model's block count");
    Timer timer;
    const auto pf = sipit::io::read_prompts(o.prompts_path);
    sipit::io::StateFile sf;
    sf.layer = layer;
    sf.width = lm.cfg.width;
    sf.records.resize(pf.prompts.size());
    for (std::size_t i = 0; i < pf.prompts.size(); ++i) {
        try {
            sipit::model::validate_prompt(lm.cfg, pf.prompts[i]);
        } catch (const sipit::Error& e) {
            throw sipit::InputError(o.prompts_path + ":" + std::to_string(pf.lines[i]) + ": " +
                                    e.what());
        }
        const auto hs = sipit::model::forward(pf.prompts[i], lm.params, lm.cfg,
                                              static_cast<std::int32_t>(layer));
        sf.records[i] = {pf.prompts[i], hs.layers[layer]};
    }
    sipit::io::write_states((dir / "states.siph").string(), sf);
    json results = {{"records", sf.records.size()}, {"layer", layer}, {"width", sf.width}};
    sipit::io::write_text((dir / "dump.json").string(),
                          envelope("dump-states", cfg, results, timer.seconds()).dump(2) + "\n");
    std::cout << "dumped " << sf.records.size() << " records at layer " << layer << "\n";
    return 0;
}

json run_inversions(const sipit::io::StateFile& sf, const sipit::io::LoadedModel& lm,
                    sipit::invert::VerifierConfig vc, sipit::invert::Policy policy,
                    std::uint64_t seed, std::size_t workers, bool& any_failed) {
    std::vector<sipit::invert::RecoveryResult> results(sf.records.size());
    sipit::parallel_for(sf.records.size(), workers, [&](std::size_t i) {
        results[i] = sipit::invert::invert(sf.records[i].states, vc, policy, lm.params, lm.cfg,
                                           seed + kInvertSeed + i, &sf.records[i].ids);
    });
    json arr = json::array();
    std::size_t matched = 0, positions = 0, proposals = 0, tests = 0;
    for (const auto& r : results) {
        arr.push_back(sipit::io::recovery_json(r));
        if (r.exact_match) ++matched;
        if (!r.ok()) any_failed = true;
        for (std::size_t p : r.proposals) {
            proposals += p;
            ++positions;
        }
        tests += r.total_tests;
    }
    json out;
    out["prompts"] = results.size();
    out["accuracy"] =
        results.empty() ? 1.0 : static_cast<double>(matched) / static_cast<double>(results.size());
    out["total_tests"] = tests;
    out["mean_proposals_per_position"] =
        positions == 0 ? 0.0 : static_cast<double>(proposals) / static_cast<double>(positions);
    out["records"] = std::move(arr);
    return out;
}

int cmd_invert(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto lm = load_weights_for(o);
    const auto dir = ensure_out(o);
    if (o.states_path.empty()) throw sipit::InputError("invert needs a state file");
    Timer timer;
    const auto sf = sipit::io::read_states(o.states_path);
    if (sf.width != lm.cfg.width)
        throw sipit::InputError("state width does not match the model width");
    sipit::invert::VerifierConfig vc = cfg.verifier;
    vc.layer = o.layer >= 0 ? static_cast<std::uint32_t>(o.layer) : sf.layer;
    if (vc.layer != sf.layer)
        throw sipit::InputError("--layer disagrees with the state file's layer");
    const std::size_t workers = resolve_workers(o);
    bool any_failed = false;
    json results;
    if (cfg.policy == "both") {
        results["random"] = run_inversions(sf, lm, vc, sipit::invert::Policy::Random, cfg.seed,
                                           workers, any_failed);
        results["gradient"] = run_inversions(sf, lm, vc, sipit::invert::Policy::Gradient,
                                             cfg.seed, workers, any_failed);
    } else {
        results = run_inversions(sf, lm, vc, sipit::invert::policy_from_name(cfg.policy),
                                 cfg.seed, workers, any_failed);
    }
    sipit::io::write_text((dir / "recovery.json").string(),
                          envelope("invert", cfg, results, timer.seconds()).dump(2) + "\n");
    std::string csv = "policy,prompt,length,ok,exact_match,total_tests,mean_proposals\n";
    auto add_rows = [&](const std::string& name, const json& block) {
        std::size_t idx = 0;
        for (const auto& r : block["records"]) {
            const auto n = r["ids"].size();
            double mean_p = 0.0;
            for (const auto& p : r["proposals"]) mean_p += p.get<double>();
            if (n > 0) mean_p /= static_cast<double>(n);
            csv += csv_join({name, std::to_string(idx++), std::to_string(n),
                             r["ok"].get<bool>() ? "1" : "0",
                             r.value("exact_match", false) ? "1" : "0",
                             std::to_string(r["total_tests"].get<std::size_t>()),
                             sipit::io::fmt_double(mean_p)});
        }
    };
    if (cfg.policy == "both") {
        add_rows("random", results["random"]);
        add_rows("gradient", results["gradient"]);
        std::cout << "random: accuracy " << results["random"]["accuracy"]
                  << ", gradient: accuracy " << results["gradient"]["accuracy"] << "\n";
    } else {
        add_rows(cfg.policy, results);
        std::cout << cfg.policy << ": accuracy " << results["accuracy"] << " over "
                  << results["prompts"].get<std::size_t>() << " prompts\n";
    }
    sipit::io::write_text((dir / "recovery.csv").string(), csv);
    if (any_failed) {
        std::cerr << "error: recovery failed on at least one prompt (partial results written)\n";
        return 4;
    }
    return 0;
}

int cmd_gradcheck(const CommonOpts& o) {
    const auto cfg = resolve_config(o);
    const auto dir = ensure_out(o);
    Timer timer;
    const std::size_t n = o.count;
    struct SeedResult {
        std::uint64_t seed;
        double ce_rel, dist_rel;
    };
    std::vector<SeedResult> rows(n);
    sipit::parallel_for(n, resolve_workers(o), [&](std::size_t i) {
        const std::uint64_t seed = cfg.seed + kGradcheckSeed + i;
        const auto params = sipit::model::init_params(cfg.model, seed, cfg.init_std);
        sipit::Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
        const std::size_t len = 3 + rng.below(4);
        sipit::model::TokenSeq s(len);
        for (auto& id : s) id = static_cast<std::int32_t>(rng.below(cfg.model.vocab_size));
        Matrix target(1, cfg.model.vocab_size);
        double sum = 0.0;
        for (std::size_t v = 0; v < cfg.model.vocab_size; ++v) {
            target.at(0, v) = -std::log(rng.uniform_pos());
            sum += target.at(0, v);
        }
        for (std::size_t v = 0; v < cfg.model.vocab_size; ++v) target.at(0, v) /= sum;

        auto rel = [](double a, double b) {
            return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
        };

        // Loss gradient vs finite differences through the untaped path.
        const auto lg = sipit::grad::grad_loss_params(s, target, params, cfg.model);
        auto flat = sipit::model::flatten(params);
        auto work = params;
        const auto fd = sipit::grad::finite_diff_oracle(
            [&](const std::vector<double>& x) {
                sipit::model::unflatten(x, work);
                return sipit::grad::cross_entropy_loss(s, target, work, cfg.model);
            },
            flat, kGradcheckStep);
        const auto gflat = sipit::model::flatten(lg.grads);
        double ce_rel = 0.0;
        for (std::size_t k = 0; k < fd.size(); ++k) ce_rel = std::max(ce_rel, rel(gflat[k], fd[k]));

        // Distance-objective gradient in the injected row.
        const auto t = static_cast<std::uint32_t>(len);
        const sipit::model::TokenSeq prefix(s.begin(), s.end() - 1);
        const std::uint32_t layer = cfg.model.blocks;
        Matrix e(1, cfg.model.width);
        for (std::size_t c = 0; c < cfg.model.width; ++c) e.at(0, c) = rng.gaussian(0.0, 0.5);
        const Matrix h_hat =
            sipit::model::one_step_map(s.back(), prefix, t, layer, params, cfg.model);
        const auto vg =
            sipit::grad::grad_distance_embedding(e, prefix, t, layer, h_hat, params, cfg.model);
        std::vector<double> eflat(e.data().begin(), e.data().end());
        const auto fde = sipit::grad::finite_diff_oracle(
            [&](const std::vector<double>& x) {
                Matrix ex(1, cfg.model.width);
                for (std::size_t c = 0; c < cfg.model.width; ++c) ex.at(0, c) = x[c];
                return sipit::grad::distance_objective(ex, prefix, t, layer, h_hat, params,
                                                       cfg.model);
            },
            eflat, kGradcheckStep);
        double dist_rel = 0.0;
        for (std::size_t k = 0; k < fde.size(); ++k)
            dist_rel = std::max(dist_rel, rel(vg.grad.at(0, k), fde[k]));
        rows[i] = {seed, ce_rel, dist_rel};
    });
    double max_rel = 0.0;
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back({{"seed", r.seed}, {"ce_max_rel", r.ce_rel}, {"dist_max_rel", r.dist_rel}});
        max_rel = std::max({max_rel, r.ce_rel, r.dist_rel});
    }
    const bool ok = max_rel <= kGradcheckTol;
    json results = {{"models", n},
                    {"h", kGradcheckStep},
                    {"tolerance", kGradcheckTol},
                    {"max_rel", max_rel},
                    {"ok", ok},
                    {"seeds", arr}};
    sipit::io::write_text((dir / "gradcheck.json").string(),
                          envelope("gradcheck", cfg, results, timer.seconds()).dump(2) + "\n");
    std::cout << "gradcheck over " << n << " models: max rel err " << max_rel << " -> "
              << (ok ? "ok" : "FAILED") << "\n";
    return ok ? 0 : 3;
}

int dispatch(const std::string& verb, const CommonOpts& o) {
    if (verb == "init") return cmd_init(o);
    if (verb == "train") return cmd_train(o);
    if (verb == "scan") return cmd_scan(o);
    if (verb == "margin") return cmd_margin(o);
    if (verb == "witness") return cmd_witness(o);
    if (verb == "hessian") return cmd_hessian(o);
    if (verb == "dump-states") return cmd_dump_states(o);
    if (verb == "invert") return cmd_invert(o);
    if (verb == "gradcheck") return cmd_gradcheck(o);
    throw sipit::InputError("unknown command " + verb);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"injectivity probes and exact prompt inversion for a toy transformer"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::vector<CLI::App*> subs;
    for (const char* verb : {"init", "train", "scan", "margin", "witness", "hessian",
                             "dump-states", "invert", "gradcheck"}) {
        auto* sub = app.add_subcommand(verb);
        sub->add_option("--config", opts.config_path, "experiment config JSON");
        sub->add_option("--weights", opts.weights_path, "weight file (SIPW)");
        sub->add_option("--layer", opts.layer, "layer index");
        sub->add_option("--epsilon", opts.epsilon, "verifier acceptance radius");
        sub->add_option("--policy", opts.policy, "random | gradient | both");
        sub->add_option("--seed", opts.seed, "seed override");
        sub->add_option("--workers", opts.workers, "worker threads (0 = hardware)");
        sub->add_option("--out", opts.out_dir, "output directory");
        if (std::string(verb) == "dump-states")
            sub->add_option("prompts", opts.prompts_path, "prompt file (one per line)");
        if (std::string(verb) == "invert")
            sub->add_option("states", opts.states_path, "state file (SIPH)");
        if (std::string(verb) == "gradcheck")
            sub->add_option("--count", opts.count, "number of seeded models");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        for (auto* sub : subs)
            if (sub->parsed()) return dispatch(sub->get_name(), opts);
        return 2;
    } catch (const sipit::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const sipit::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const sipit::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const sipit::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const sipit::Error& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
}
