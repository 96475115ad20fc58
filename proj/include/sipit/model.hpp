#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sipit/matrix.hpp"

namespace sipit::model {

using TokenSeq = std::vector<std::int32_t>;

struct ModelConfig {
    std::uint32_t vocab_size = 0;
    std::uint32_t context = 0;    // max sequence length K
    std::uint32_t width = 0;      // residual width d
    std::uint32_t heads = 0;      // H
    std::uint32_t head_dim = 0;   // d_eta
    std::uint32_t blocks = 0;     // L (0 = embedding only)
    std::vector<std::uint32_t> mlp_dims;  // d = dims[0], ..., dims[M] = d
    Activation activation = Activation::GeluTanh;
    double ln_epsilon = 1e-5;

    void validate() const;
    std::size_t param_count() const;

    bool operator==(const ModelConfig&) const = default;
};

// Default desk-scale configuration used across tests and reports.
ModelConfig toy_config();
// Deliberately tiny configuration for the Hessian witness (p = 100).
ModelConfig tiny_config();

struct HeadParams {
    Matrix wq, wk, wv;  // d × d_eta each
};

struct BlockParams {
    std::vector<HeadParams> heads;
    Matrix w_out;                          // (H·d_eta) × d
    Matrix ln1_gamma, ln1_beta;            // 1 × d
    Matrix ln2_gamma, ln2_beta;            // 1 × d
    std::vector<Matrix> mlp_w;             // mlp_w[m]: dims[m+1] × dims[m]
    std::vector<Matrix> mlp_b;             // mlp_b[m]: 1 × dims[m+1]
};

struct ModelParams {
    Matrix tok_embed;            // |V| × d
    Matrix pos_embed;            // K × d
    std::vector<BlockParams> blocks;
    Matrix unembed_w;            // |V| × d
    Matrix lnf_gamma, lnf_beta;  // 1 × d
};

ModelParams zero_params(const ModelConfig& cfg);

// Gaussian init, one stream, tensors drawn in serialization order.
// LayerNorm scales are drawn around 1, everything else around 0; the law
// stays absolutely continuous, which is what the injectivity results need.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double std = 0.1);

// Visits every tensor in the canonical (= on-disk) order.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn("tok_embed", p.tok_embed);
    fn("pos_embed", p.pos_embed);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        auto& blk = p.blocks[b];
        std::string pre = "block" + std::to_string(b) + ".";
        for (std::size_t h = 0; h < blk.heads.size(); ++h) {
            std::string hp = pre + "head" + std::to_string(h) + ".";
            fn((hp + "wq").c_str(), blk.heads[h].wq);
            fn((hp + "wk").c_str(), blk.heads[h].wk);
            fn((hp + "wv").c_str(), blk.heads[h].wv);
        }
        fn((pre + "w_out").c_str(), blk.w_out);
        fn((pre + "ln1_gamma").c_str(), blk.ln1_gamma);
        fn((pre + "ln1_beta").c_str(), blk.ln1_beta);
        fn((pre + "ln2_gamma").c_str(), blk.ln2_gamma);
        fn((pre + "ln2_beta").c_str(), blk.ln2_beta);
        for (std::size_t m = 0; m < blk.mlp_w.size(); ++m) {
            fn((pre + "mlp_w" + std::to_string(m)).c_str(), blk.mlp_w[m]);
            fn((pre + "mlp_b" + std::to_string(m)).c_str(), blk.mlp_b[m]);
        }
    }
    fn("unembed_w", p.unembed_w);
    fn("lnf_gamma", p.lnf_gamma);
    fn("lnf_beta", p.lnf_beta);
}

std::vector<double> flatten(const ModelParams& p);
void unflatten(const std::vector<double>& flat, ModelParams& p);

// Throws VocabError / ContextError; prompts must be nonempty.
void validate_prompt(const ModelConfig& cfg, const TokenSeq& s);

// Token + positional embedding. Accepts the empty sequence (used for
// prefixes); prompt entry points enforce nonemptiness via validate_prompt.
Matrix embed(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg);

// Single-vector layer norm (x is 1×d).
Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps);

// Single-head causal attention on pre-normalized input X (T×d).
// Masked form: softmax(scores + M) with M = -1e9 strictly above the diagonal.
Matrix causal_attention_masked(const Matrix& x, const Matrix& wq, const Matrix& wk,
                               const Matrix& wv);
// Projection form: row_normalize(L ⊙ exp(scores)) with L unit lower
// triangular; sentinel-free reference used for equivalence testing.
Matrix causal_attention_projection(const Matrix& x, const Matrix& wq, const Matrix& wk,
                                   const Matrix& wv);
// The masked-form attention weights (row-stochastic, zero above diagonal).
Matrix causal_attention_weights(const Matrix& x, const Matrix& wq, const Matrix& wk);

// Pre-LN residual block: H = X + mha(LN1(X)); out = H + mlp(LN2(H)).
Matrix transformer_block(const Matrix& x, const BlockParams& blk, const ModelConfig& cfg);

struct HiddenStates {
    std::vector<Matrix> layers;  // layers[0] = embedding output, ..., layers[L]
};

HiddenStates forward(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg,
                     std::int32_t up_to_layer = -1);

// Hidden states of a (possibly empty) prefix, for the incremental one-step
// map below; layers up to `up_to_layer` inclusive.
HiddenStates prefix_states(const TokenSeq& prefix, const ModelParams& p, const ModelConfig& cfg,
                           std::uint32_t up_to_layer);

// Row |s| of the final layer (1×d).
Matrix last_token_repr(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg);

// One-step map F(v; prefix, t) at layer `layer`: the row-t hidden state of
// prefix ⊕ v. Requires |prefix| = t-1 (t is 1-based).
Matrix one_step_map(std::int32_t v, const TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const ModelParams& p, const ModelConfig& cfg);
// Continuous variant: `e` (1×d) is written verbatim as row t of layer 0,
// bypassing the embedding; gradients with respect to e stay well-defined.
Matrix one_step_map(const Matrix& e, const TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const ModelParams& p, const ModelConfig& cfg);

// Same maps reusing precomputed prefix states; bit-identical to the full
// recomputation (prefix causality), roughly t× cheaper per candidate.
Matrix one_step_from_prefix(const HiddenStates& prefix, std::int32_t v, std::uint32_t t,
                            std::uint32_t layer, const ModelParams& p, const ModelConfig& cfg);
Matrix one_step_from_prefix(const HiddenStates& prefix, const Matrix& e, std::uint32_t t,
                            std::uint32_t layer, const ModelParams& p, const ModelConfig& cfg);

// softmax(U · LN_f(h)) for a single hidden row h (1×d) -> 1×|V| probabilities.
Matrix unembed(const Matrix& h, const ModelParams& p, const ModelConfig& cfg);

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

}  // namespace sipit::model
