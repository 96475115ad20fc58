#include "sipit/model.hpp"

#include <cmath>

#include "sipit/errors.hpp"
#include "sipit/rng.hpp"

namespace sipit::model {

namespace {

constexpr double kMaskValue = -1e9;

Matrix causal_mask(std::size_t t) {
    Matrix m(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) m.at(i, j) = kMaskValue;
    return m;
}

Matrix scaled_scores(const Matrix& x, const Matrix& wq, const Matrix& wk) {
    Matrix q = mat_mul(x, wq);
    Matrix k = mat_mul(x, wk);
    return scale(mat_mul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(wq.cols())));
}

// Shared MLP row map: affine, then (activation, affine) per extra layer.
Matrix mlp_forward(const Matrix& h_norm, const BlockParams& blk, const ModelConfig& cfg) {
    Matrix h = add_row_broadcast(mat_mul(h_norm, transpose(blk.mlp_w[0])), blk.mlp_b[0]);
    for (std::size_t m = 1; m < blk.mlp_w.size(); ++m) {
        Matrix a = activation_map(h, cfg.activation);
        h = add_row_broadcast(mat_mul(a, transpose(blk.mlp_w[m])), blk.mlp_b[m]);
    }
    return h;
}

void check_layer_index(const ModelConfig& cfg, std::uint32_t layer) {
    if (layer > cfg.blocks) throw DomainError("layer index exceeds block count");
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("config: vocab_size must be >= 2");
    if (context < 1) throw ConfigError("config: context must be >= 1");
    if (width < 4) throw ConfigError("config: width must be >= 4");
    if (heads < 1) throw ConfigError("config: heads must be >= 1");
    if (head_dim < 1) throw ConfigError("config: head_dim must be >= 1");
    if (mlp_dims.size() < 2) throw ConfigError("config: mlp_dims needs at least input and output");
    if (mlp_dims.front() != width || mlp_dims.back() != width)
        throw ConfigError("config: mlp_dims must start and end at width");
    for (std::uint32_t dm : mlp_dims)
        if (dm < 1) throw ConfigError("config: mlp dim must be >= 1");
    if (!(ln_epsilon > 0.0)) throw ConfigError("config: ln_epsilon must be positive");
}

std::size_t ModelConfig::param_count() const {
    std::size_t d = width;
    std::size_t n = static_cast<std::size_t>(vocab_size) * d;  // tok_embed
    n += static_cast<std::size_t>(context) * d;                // pos_embed
    std::size_t per_block = heads * 3u * d * head_dim;         // wq,wk,wv
    per_block += static_cast<std::size_t>(heads) * head_dim * d;  // w_out
    per_block += 4 * d;                                        // two layer norms
    for (std::size_t m = 0; m + 1 < mlp_dims.size(); ++m)
        per_block += static_cast<std::size_t>(mlp_dims[m + 1]) * mlp_dims[m] + mlp_dims[m + 1];
    n += static_cast<std::size_t>(blocks) * per_block;
    n += static_cast<std::size_t>(vocab_size) * d;  // unembed
    n += 2 * d;                                     // final layer norm
    return n;
}

ModelConfig toy_config() {
    ModelConfig c;
    c.vocab_size = 64;
    c.context = 32;
    c.width = 16;
    c.heads = 2;
    c.head_dim = 8;
    c.blocks = 2;
    c.mlp_dims = {16, 32, 16};
    c.activation = Activation::GeluTanh;
    c.ln_epsilon = 1e-5;
    return c;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 3;
    c.context = 4;
    c.width = 4;
    c.heads = 1;
    c.head_dim = 1;
    c.blocks = 1;
    c.mlp_dims = {4, 4};
    c.activation = Activation::GeluTanh;
    c.ln_epsilon = 1e-5;
    return c;
}

ModelParams zero_params(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t d = cfg.width;
    ModelParams p;
    p.tok_embed = Matrix(cfg.vocab_size, d);
    p.pos_embed = Matrix(cfg.context, d);
    p.blocks.resize(cfg.blocks);
    for (auto& blk : p.blocks) {
        blk.heads.resize(cfg.heads);
        for (auto& h : blk.heads) {
            h.wq = Matrix(d, cfg.head_dim);
            h.wk = Matrix(d, cfg.head_dim);
            h.wv = Matrix(d, cfg.head_dim);
        }
        blk.w_out = Matrix(static_cast<std::size_t>(cfg.heads) * cfg.head_dim, d);
        blk.ln1_gamma = Matrix(1, d);
        blk.ln1_beta = Matrix(1, d);
        blk.ln2_gamma = Matrix(1, d);
        blk.ln2_beta = Matrix(1, d);
        for (std::size_t m = 0; m + 1 < cfg.mlp_dims.size(); ++m) {
            blk.mlp_w.emplace_back(cfg.mlp_dims[m + 1], cfg.mlp_dims[m]);
            blk.mlp_b.emplace_back(1, cfg.mlp_dims[m + 1]);
        }
    }
    p.unembed_w = Matrix(cfg.vocab_size, d);
    p.lnf_gamma = Matrix(1, d);
    p.lnf_beta = Matrix(1, d);
    return p;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double std) {
    ModelParams p = zero_params(cfg);
    Rng rng(seed);
    for_each_tensor(p, [&](const char* name, Matrix& m) {
        std::string n(name);
        bool is_ln_scale = n.size() >= 5 && n.compare(n.size() - 5, 5, "gamma") == 0;
        double mean = is_ln_scale ? 1.0 : 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian(mean, std);
    });
    return p;
}

std::vector<double> flatten(const ModelParams& p) {
    std::vector<double> flat;
    for_each_tensor(p, [&](const char*, const Matrix& m) {
        flat.insert(flat.end(), m.data().begin(), m.data().end());
    });
    return flat;
}

void unflatten(const std::vector<double>& flat, ModelParams& p) {
    std::size_t off = 0;
    for_each_tensor(p, [&](const char*, Matrix& m) {
        if (off + m.size() > flat.size()) throw ShapeError("unflatten: vector too short");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.data().begin());
        off += m.size();
    });
    if (off != flat.size()) throw ShapeError("unflatten: vector too long");
}

void validate_prompt(const ModelConfig& cfg, const TokenSeq& s) {
    if (s.empty()) throw ContextError("prompt must be nonempty");
    if (s.size() > cfg.context) throw ContextError("prompt longer than context window");
    for (std::int32_t v : s)
        if (v < 0 || static_cast<std::uint32_t>(v) >= cfg.vocab_size)
            throw VocabError("token id outside vocabulary");
}

Matrix embed(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg) {
    if (s.size() > cfg.context) throw ContextError("sequence longer than context window");
    Matrix x(s.size(), cfg.width);
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::int32_t v = s[i];
        if (v < 0 || static_cast<std::uint32_t>(v) >= cfg.vocab_size)
            throw VocabError("token id outside vocabulary");
        for (std::size_t j = 0; j < cfg.width; ++j)
            x.at(i, j) = p.tok_embed.at(static_cast<std::size_t>(v), j) + p.pos_embed.at(i, j);
    }
    return x;
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    return layer_norm_rows(x, gamma, beta, eps);
}

Matrix causal_attention_masked(const Matrix& x, const Matrix& wq, const Matrix& wk,
                               const Matrix& wv) {
    Matrix a = softmax_rows(add(scaled_scores(x, wq, wk), causal_mask(x.rows())));
    return mat_mul(a, mat_mul(x, wv));
}

Matrix causal_attention_projection(const Matrix& x, const Matrix& wq, const Matrix& wk,
                                   const Matrix& wv) {
    Matrix z = scaled_scores(x, wq, wk);
    Matrix b(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j <= i; ++j) b.at(i, j) = std::exp(z.at(i, j));
    return mat_mul(row_normalize(b), mat_mul(x, wv));
}

Matrix causal_attention_weights(const Matrix& x, const Matrix& wq, const Matrix& wk) {
    return softmax_rows(add(scaled_scores(x, wq, wk), causal_mask(x.rows())));
}

Matrix transformer_block(const Matrix& x, const BlockParams& blk, const ModelConfig& cfg) {
    Matrix x_norm = layer_norm_rows(x, blk.ln1_gamma, blk.ln1_beta, cfg.ln_epsilon);
    Matrix mask = causal_mask(x.rows());
    std::vector<Matrix> head_out;
    head_out.reserve(blk.heads.size());
    for (const auto& h : blk.heads) {
        Matrix a = softmax_rows(add(scaled_scores(x_norm, h.wq, h.wk), mask));
        head_out.push_back(mat_mul(a, mat_mul(x_norm, h.wv)));
    }
    std::vector<const Matrix*> parts;
    parts.reserve(head_out.size());
    for (const Matrix& m : head_out) parts.push_back(&m);
    Matrix attn = mat_mul(concat_cols(parts), blk.w_out);
    Matrix h_res = add(x, attn);
    Matrix h_norm = layer_norm_rows(h_res, blk.ln2_gamma, blk.ln2_beta, cfg.ln_epsilon);
    return add(h_res, mlp_forward(h_norm, blk, cfg));
}

HiddenStates forward(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg,
                     std::int32_t up_to_layer) {
    validate_prompt(cfg, s);
    std::uint32_t top =
        up_to_layer < 0 ? cfg.blocks : static_cast<std::uint32_t>(up_to_layer);
    check_layer_index(cfg, top);
    HiddenStates hs;
    hs.layers.reserve(top + 1);
    hs.layers.push_back(embed(s, p, cfg));
    for (std::uint32_t l = 0; l < top; ++l)
        hs.layers.push_back(transformer_block(hs.layers.back(), p.blocks[l], cfg));
    return hs;
}

HiddenStates prefix_states(const TokenSeq& prefix, const ModelParams& p, const ModelConfig& cfg,
                           std::uint32_t up_to_layer) {
    check_layer_index(cfg, up_to_layer);
    HiddenStates hs;
    if (prefix.empty()) {
        hs.layers.assign(up_to_layer + 1, Matrix(0, cfg.width));
        return hs;
    }
    return forward(prefix, p, cfg, static_cast<std::int32_t>(up_to_layer));
}

Matrix last_token_repr(const TokenSeq& s, const ModelParams& p, const ModelConfig& cfg) {
    HiddenStates hs = forward(s, p, cfg);
    return take_row(hs.layers.back(), s.size() - 1);
}

namespace {

void check_one_step_args(const TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                         const ModelConfig& cfg) {
    if (t < 1 || t > cfg.context) throw PositionError("one_step_map: position outside [1, context]");
    if (prefix.size() != static_cast<std::size_t>(t) - 1)
        throw PositionError("one_step_map: |prefix| must equal t-1");
    check_layer_index(cfg, layer);
}

void check_prefix_states(const HiddenStates& prefix_hs, std::uint32_t t, std::uint32_t layer) {
    if (prefix_hs.layers.empty() || prefix_hs.layers.size() < layer)
        throw ShapeError("one_step_from_prefix: prefix states missing layers");
    if (prefix_hs.layers[0].rows() != static_cast<std::size_t>(t) - 1)
        throw PositionError("one_step_from_prefix: prefix states do not match position");
}

// Row t of layer `layer` given the prefix's layer inputs; `x_row` is the new
// row at layer 0. Mirrors transformer_block's kernel order exactly, so the
// result is bit-identical to a full forward pass (prefix causality).
Matrix advance_row(const HiddenStates& prefix, Matrix x_row, std::uint32_t layer,
                   const ModelParams& p, const ModelConfig& cfg) {
    for (std::uint32_t l = 0; l < layer; ++l) {
        const Matrix& x_prev = prefix.layers[l];
        const BlockParams& blk = p.blocks[l];
        Matrix row_norm = layer_norm_rows(x_row, blk.ln1_gamma, blk.ln1_beta, cfg.ln_epsilon);
        Matrix prev_norm = layer_norm_rows(x_prev, blk.ln1_gamma, blk.ln1_beta, cfg.ln_epsilon);
        std::vector<Matrix> head_out;
        head_out.reserve(blk.heads.size());
        for (const auto& h : blk.heads) {
            Matrix q_row = mat_mul(row_norm, h.wq);
            Matrix k_full = concat_rows(mat_mul(prev_norm, h.wk), mat_mul(row_norm, h.wk));
            Matrix v_full = concat_rows(mat_mul(prev_norm, h.wv), mat_mul(row_norm, h.wv));
            Matrix scores = scale(mat_mul(q_row, transpose(k_full)),
                                  1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
            head_out.push_back(mat_mul(softmax_rows(scores), v_full));
        }
        std::vector<const Matrix*> parts;
        parts.reserve(head_out.size());
        for (const Matrix& m : head_out) parts.push_back(&m);
        Matrix attn_row = mat_mul(concat_cols(parts), blk.w_out);
        Matrix h_row = add(x_row, attn_row);
        Matrix h_norm = layer_norm_rows(h_row, blk.ln2_gamma, blk.ln2_beta, cfg.ln_epsilon);
        x_row = add(h_row, mlp_forward(h_norm, blk, cfg));
    }
    return x_row;
}

}  // namespace

Matrix one_step_map(std::int32_t v, const TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const ModelParams& p, const ModelConfig& cfg) {
    check_one_step_args(prefix, t, layer, cfg);
    TokenSeq s = prefix;
    s.push_back(v);
    HiddenStates hs = forward(s, p, cfg, static_cast<std::int32_t>(layer));
    return take_row(hs.layers.back(), static_cast<std::size_t>(t) - 1);
}

Matrix one_step_map(const Matrix& e, const TokenSeq& prefix, std::uint32_t t, std::uint32_t layer,
                    const ModelParams& p, const ModelConfig& cfg) {
    check_one_step_args(prefix, t, layer, cfg);
    if (e.rows() != 1 || e.cols() != cfg.width)
        throw ShapeError("one_step_map: injected row must be 1×width");
    Matrix x = concat_rows(embed(prefix, p, cfg), e);
    for (std::uint32_t l = 0; l < layer; ++l) x = transformer_block(x, p.blocks[l], cfg);
    return take_row(x, static_cast<std::size_t>(t) - 1);
}

Matrix one_step_from_prefix(const HiddenStates& prefix_hs, std::int32_t v, std::uint32_t t,
                            std::uint32_t layer, const ModelParams& p, const ModelConfig& cfg) {
    if (v < 0 || static_cast<std::uint32_t>(v) >= cfg.vocab_size)
        throw VocabError("one_step_from_prefix: token id outside vocabulary");
    if (t < 1 || t > cfg.context) throw PositionError("one_step_from_prefix: bad position");
    check_layer_index(cfg, layer);
    check_prefix_states(prefix_hs, t, layer);
    Matrix x_row = add(take_row(p.tok_embed, static_cast<std::size_t>(v)),
                       take_row(p.pos_embed, static_cast<std::size_t>(t) - 1));
    return advance_row(prefix_hs, std::move(x_row), layer, p, cfg);
}

Matrix one_step_from_prefix(const HiddenStates& prefix_hs, const Matrix& e, std::uint32_t t,
                            std::uint32_t layer, const ModelParams& p, const ModelConfig& cfg) {
    if (e.rows() != 1 || e.cols() != cfg.width)
        throw ShapeError("one_step_from_prefix: injected row must be 1×width");
    if (t < 1 || t > cfg.context) throw PositionError("one_step_from_prefix: bad position");
    check_layer_index(cfg, layer);
    check_prefix_states(prefix_hs, t, layer);
    return advance_row(prefix_hs, e, layer, p, cfg);
}

Matrix unembed(const Matrix& h, const ModelParams& p, const ModelConfig& cfg) {
    if (h.rows() != 1 || h.cols() != cfg.width) throw ShapeError("unembed: h must be 1×width");
    Matrix hn = layer_norm_rows(h, p.lnf_gamma, p.lnf_beta, cfg.ln_epsilon);
    return softmax_rows(mat_mul(hn, transpose(p.unembed_w)));
}

const char* activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "gelu_tanh";
}

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "gelu_tanh") return Activation::GeluTanh;
    throw ConfigError("unknown activation: " + name);
}

}  // namespace sipit::model
