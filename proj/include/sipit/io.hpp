#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipit/invert.hpp"
#include "sipit/matrix.hpp"
#include "sipit/model.hpp"
#include "sipit/probe.hpp"

namespace sipit::io {

using json = nlohmann::ordered_json;

// ---- weight files ("SIPW") -------------------------------------------------
// magic, u32 version, config block (u32 fields, u32 mlp dim count + dims,
// u32 activation, f64 ln_epsilon), then every tensor as little-endian f64 in
// canonical order. Same seed -> byte-identical file.

struct LoadedModel {
    model::ModelConfig cfg;
    model::ModelParams params;
};

void write_weights(const std::string& path, const model::ModelParams& p,
                   const model::ModelConfig& cfg);
LoadedModel read_weights(const std::string& path);

// ---- hidden-state files ("SIPH") -------------------------------------------
// magic, u32 version, u32 layer, u32 width, u32 record count, then per
// record: u32 T, T×u32 token ids (echoed for round trips), T×width f64 rows.

struct StateRecord {
    model::TokenSeq ids;
    Matrix states;  // |ids| × width
};

struct StateFile {
    std::uint32_t layer = 0;
    std::uint32_t width = 0;
    std::vector<StateRecord> records;
};

void write_states(const std::string& path, const StateFile& f);
StateFile read_states(const std::string& path);

// ---- prompt corpora (text) -------------------------------------------------
// One prompt per line, whitespace-separated decimal token ids; lines that
// are entirely whitespace are skipped. `lines` maps each prompt back to its
// 1-based source line for error reporting.

struct PromptFile {
    std::vector<model::TokenSeq> prompts;
    std::vector<std::size_t> lines;
};

PromptFile read_prompts(const std::string& path);
void write_prompts(const std::string& path, const std::vector<model::TokenSeq>& prompts);

// ---- experiment configuration (JSON) ----------------------------------------

struct ExperimentConfig {
    model::ModelConfig model = model::toy_config();
    std::uint64_t seed = 42;
    double init_std = 0.1;
    bool checked = false;

    // train
    std::size_t train_steps = 50;
    double eta = 0.1;
    std::vector<std::uint32_t> batch_sizes{1, 4, 8};
    std::size_t corpus_size = 32;
    std::size_t corpus_max_len = 16;
    double soft_fraction = 0.5;

    // scan
    std::size_t scan_prompts = 200;
    std::size_t scan_min_len = 1;
    std::size_t scan_max_len = 0;  // 0 -> context
    double threshold = 1e-6;

    // margin
    model::TokenSeq margin_prefix;
    std::uint32_t margin_layer = 1;

    // witness
    std::string witness_kind = "token";  // token | length | attention
    std::uint32_t witness_i_star = 1;
    std::uint32_t witness_seq_len = 0;  // 0 -> context

    // hessian
    std::string hessian_target = "one_hot:0";  // or "uniform"
    std::vector<double> hessian_etas{0.1, 0.5, 0.9};

    // invert
    invert::VerifierConfig verifier;
    std::string policy = "gradient";

    bool operator==(const ExperimentConfig&) const = default;
};

json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const json& j);  // strict: unknown keys rejected
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& c);

// FNV-1a over the canonical JSON text; rendered as a fixed-width hex string
// so reports stay byte-stable.
std::string config_hash(const ExperimentConfig& c);

// Hessian target string -> probability vector (1×|V|).
Matrix hessian_target_vector(const std::string& spec, const model::ModelConfig& cfg);

// ---- report serialization ----------------------------------------------------

json scan_report_json(const probe::ScanReport& r);
json margin_report_json(const probe::MarginReport& r);
json hessian_report_json(const probe::HessianReport& r);
json embedding_witness_json(const probe::EmbeddingWitness& w);
json attention_witness_json(const probe::AttentionWitness& w);
json recovery_json(const invert::RecoveryResult& r);
json length_buckets_json(const std::vector<probe::LengthBucket>& rows);

// Deterministic decimal rendering for CSV cells (17 significant digits).
std::string fmt_double(double x);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace sipit::io
