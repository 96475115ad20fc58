#include <cmath>
#include <doctest.h>
#include <vector>

#include "sipit/errors.hpp"
#include "sipit/matrix.hpp"
#include "sipit/model.hpp"
#include "sipit/rng.hpp"

using namespace sipit;
using namespace sipit::model;

namespace {

// Independent straight-line implementation of one pre-LN block, written
// with raw loops so a shared bug with the production kernels is unlikely.
Matrix naive_layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, double eps) {
    Matrix out(x.rows(), x.cols());
    const auto d = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mu += x.at(i, j);
        mu /= d;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double c = x.at(i, j) - mu;
            var += c * c;
        }
        var /= d;
        const double rs = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols(); ++j)
            out.at(i, j) = g.at(0, j) * ((x.at(i, j) - mu) * rs) + b.at(0, j);
    }
    return out;
}

Matrix naive_block(const Matrix& x, const BlockParams& blk, const ModelConfig& cfg) {
    const std::size_t T = x.rows(), d = x.cols();
    Matrix xn = naive_layer_norm(x, blk.ln1_gamma, blk.ln1_beta, cfg.ln_epsilon);

    Matrix mixed(T, d);
    std::size_t col_base = 0;
    Matrix concat(T, blk.heads.size() * cfg.head_dim);
    for (const auto& h : blk.heads) {
        const std::size_t de = cfg.head_dim;
        Matrix q(T, de), k(T, de), v(T, de);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t e = 0; e < de; ++e) {
                double sq = 0, sk = 0, sv = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    sq += xn.at(i, c) * h.wq.at(c, e);
                    sk += xn.at(i, c) * h.wk.at(c, e);
                    sv += xn.at(i, c) * h.wv.at(c, e);
                }
                q.at(i, e) = sq;
                k.at(i, e) = sk;
                v.at(i, e) = sv;
            }
        for (std::size_t i = 0; i < T; ++i) {
            // Softmax over visible positions j <= i only.
            std::vector<double> sc(i + 1);
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0;
                for (std::size_t e = 0; e < de; ++e) s += q.at(i, e) * k.at(j, e);
                sc[j] = s / std::sqrt(static_cast<double>(de));
                mx = std::max(mx, sc[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                sc[j] = std::exp(sc[j] - mx);
                z += sc[j];
            }
            for (std::size_t e = 0; e < de; ++e) {
                double o = 0;
                for (std::size_t j = 0; j <= i; ++j) o += (sc[j] / z) * v.at(j, e);
                concat.at(i, col_base + e) = o;
            }
        }
        col_base += de;
    }
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0;
            for (std::size_t e = 0; e < concat.cols(); ++e)
                s += concat.at(i, e) * blk.w_out.at(e, c);
            mixed.at(i, c) = x.at(i, c) + s;
        }

    Matrix hn = naive_layer_norm(mixed, blk.ln2_gamma, blk.ln2_beta, cfg.ln_epsilon);
    // MLP: affine first, then (activation, affine) per extra layer.
    Matrix h = hn;
    for (std::size_t m = 0; m < blk.mlp_w.size(); ++m) {
        Matrix in = h;
        if (m > 0)
            for (auto& val : in.data()) val = apply_activation(val, cfg.activation);
        Matrix nxt(T, blk.mlp_w[m].rows());
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t r = 0; r < blk.mlp_w[m].rows(); ++r) {
                double s = blk.mlp_b[m].at(0, r);
                for (std::size_t c = 0; c < blk.mlp_w[m].cols(); ++c)
                    s += in.at(i, c) * blk.mlp_w[m].at(r, c);
                nxt.at(i, r) = s;
            }
        h = nxt;
    }
    Matrix out(T, d);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t c = 0; c < d; ++c) out.at(i, c) = mixed.at(i, c) + h.at(i, c);
    return out;
}

ModelConfig small_config(Activation act) {
    ModelConfig c;
    c.vocab_size = 11;
    c.context = 5;
    c.width = 4;
    c.heads = 2;
    c.head_dim = 2;
    c.blocks = 2;
    c.mlp_dims = {4, 6, 4};
    c.activation = act;
    c.ln_epsilon = 1e-5;
    return c;
}

}  // namespace

TEST_CASE("config validation and parameter counts") {
    CHECK_NOTHROW(toy_config().validate());
    CHECK_NOTHROW(tiny_config().validate());
    CHECK(toy_config().param_count() == 6912);
    CHECK(tiny_config().param_count() == 100);

    ModelConfig bad = toy_config();
    bad.width = 3;  // below the minimum residual width
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = toy_config();
    bad.vocab_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = toy_config();
    bad.mlp_dims = {16, 32, 8};  // must end at the residual width
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = toy_config();
    bad.ln_epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init_params: determinism, shapes, and LayerNorm scales near one") {
    const auto cfg = toy_config();
    const auto a = init_params(cfg, 42);
    const auto b = init_params(cfg, 42);
    CHECK(flatten(a) == flatten(b));
    CHECK(flatten(a).size() == cfg.param_count());

    const auto c = init_params(cfg, 43);
    CHECK(flatten(a) != flatten(c));

    // LayerNorm gains are drawn around 1, everything else around 0.
    double gsum = 0.0;
    for (double v : a.lnf_gamma.data()) gsum += v;
    CHECK(gsum / cfg.width == doctest::Approx(1.0).epsilon(0.2));
    double esum = 0.0;
    for (double v : a.tok_embed.data()) esum += v;
    CHECK(std::abs(esum / static_cast<double>(a.tok_embed.size())) < 0.05);
}

TEST_CASE("flatten/unflatten round trip") {
    const auto cfg = tiny_config();
    const auto p = init_params(cfg, 7);
    const auto flat = flatten(p);
    auto q = zero_params(cfg);
    unflatten(flat, q);
    CHECK(flatten(q) == flat);
    CHECK_THROWS_AS(unflatten(std::vector<double>(flat.size() - 1), q), ShapeError);
}

TEST_CASE("prompt validation") {
    const auto cfg = tiny_config();  // vocab 3, context 4
    CHECK_NOTHROW(validate_prompt(cfg, {0, 1, 2}));
    CHECK_THROWS_AS(validate_prompt(cfg, {}), ContextError);
    CHECK_THROWS_AS(validate_prompt(cfg, {0, 1, 2, 0, 1}), ContextError);
    CHECK_THROWS_AS(validate_prompt(cfg, {3}), VocabError);
    CHECK_THROWS_AS(validate_prompt(cfg, {-1}), VocabError);
}

TEST_CASE("embedding adds token and position rows") {
    const auto cfg = tiny_config();
    auto p = zero_params(cfg);
    p.tok_embed.at(1, 0) = 2.0;
    p.pos_embed.at(0, 0) = 0.5;
    p.pos_embed.at(1, 3) = 7.0;
    Matrix x = embed({1, 1}, p, cfg);
    CHECK(x.rows() == 2);
    CHECK(x.at(0, 0) == 2.5);
    CHECK(x.at(1, 0) == 2.0);
    CHECK(x.at(1, 3) == 7.0);
}

TEST_CASE("attention: masked and projection forms agree") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 1 + rng.below(8), d = 4, de = 3;
        Matrix x = gaussian_matrix(rng, T, d, 1.0);
        Matrix wq = gaussian_matrix(rng, d, de, 0.5);
        Matrix wk = gaussian_matrix(rng, d, de, 0.5);
        Matrix wv = gaussian_matrix(rng, d, de, 0.5);
        Matrix a = causal_attention_masked(x, wq, wk, wv);
        Matrix b = causal_attention_projection(x, wq, wk, wv);
        REQUIRE(a.same_shape(b));
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
    }
}

TEST_CASE("attention weights are causal and row-stochastic") {
    Rng rng(3);
    Matrix x = gaussian_matrix(rng, 5, 4, 1.0);
    Matrix wq = gaussian_matrix(rng, 4, 2, 0.7);
    Matrix wk = gaussian_matrix(rng, 4, 2, 0.7);
    Matrix a = causal_attention_weights(x, wq, wk);
    CHECK(a.at(0, 0) == 1.0);  // first position can only see itself
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            if (j > i) CHECK(a.at(i, j) == 0.0);
            CHECK(a.at(i, j) >= 0.0);
            sum += a.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    // A single position attends to itself: output is x·Wv exactly.
    Matrix x1 = gaussian_matrix(rng, 1, 4, 1.0);
    Matrix wv = gaussian_matrix(rng, 4, 2, 0.7);
    CHECK(causal_attention_masked(x1, wq, wk, wv) == mat_mul(x1, wv));
}

TEST_CASE("transformer block matches the straight-line oracle") {
    for (auto act : {Activation::Tanh, Activation::GeluTanh}) {
        const auto cfg = small_config(act);
        const auto p = init_params(cfg, 99);
        Rng rng(17);
        Matrix x = gaussian_matrix(rng, 3, cfg.width, 1.0);
        Matrix got = transformer_block(x, p.blocks[0], cfg);
        Matrix want = naive_block(x, p.blocks[0], cfg);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward shapes and a model with zero blocks") {
    ModelConfig cfg = toy_config();
    const auto p = init_params(cfg, 1);
    auto hs = forward({5, 9, 11}, p, cfg);
    REQUIRE(hs.layers.size() == cfg.blocks + 1);
    for (const auto& l : hs.layers) {
        CHECK(l.rows() == 3);
        CHECK(l.cols() == cfg.width);
    }
    // up_to_layer truncates.
    CHECK(forward({5, 9, 11}, p, cfg, 1).layers.size() == 2);

    ModelConfig flat_cfg = toy_config();
    flat_cfg.blocks = 0;  // embedding-only model: forward is the embedding
    const auto q = init_params(flat_cfg, 1);
    auto fhs = forward({5, 9, 11}, q, flat_cfg);
    REQUIRE(fhs.layers.size() == 1);
    CHECK(fhs.layers[0] == embed({5, 9, 11}, q, flat_cfg));
    CHECK(last_token_repr({5, 9, 11}, q, flat_cfg) == take_row(fhs.layers[0], 2));
}

TEST_CASE("prefix causality: one-step maps equal full forwards bit for bit") {
    const auto cfg = toy_config();
    const auto p = init_params(cfg, 2024);
    const TokenSeq s = {3, 17, 42, 8, 61, 0, 33};
    const auto hs = forward(s, p, cfg);

    for (std::uint32_t layer = 0; layer <= cfg.blocks; ++layer) {
        for (std::uint32_t t = 1; t <= s.size(); ++t) {
            const TokenSeq prefix(s.begin(), s.begin() + (t - 1));
            const Matrix want = take_row(hs.layers[layer], t - 1);

            // Recomputed from scratch.
            CHECK(one_step_map(s[t - 1], prefix, t, layer, p, cfg) == want);

            // Recomputed from cached prefix states (the inversion hot path).
            const auto phs = prefix_states(prefix, p, cfg, layer);
            CHECK(one_step_from_prefix(phs, s[t - 1], t, layer, p, cfg) == want);

            // Continuous variant fed the exact embedding row.
            Matrix e = take_row(p.tok_embed, static_cast<std::size_t>(s[t - 1]));
            for (std::size_t c = 0; c < e.cols(); ++c) e.at(0, c) += p.pos_embed.at(t - 1, c);
            CHECK(one_step_map(e, prefix, t, layer, p, cfg) == want);
            CHECK(one_step_from_prefix(phs, e, t, layer, p, cfg) == want);
        }
    }
}

TEST_CASE("one-step map argument validation") {
    const auto cfg = tiny_config();
    const auto p = init_params(cfg, 5);
    CHECK_THROWS_AS(one_step_map(0, {1}, 1, 1, p, cfg), PositionError);  // |prefix| != t-1
    CHECK_THROWS_AS(one_step_map(0, {}, 0, 1, p, cfg), PositionError);
    CHECK_THROWS_AS(one_step_map(0, {}, 5, 1, p, cfg), PositionError);  // beyond context
    CHECK_THROWS_AS(one_step_map(0, {}, 1, 9, p, cfg), DomainError);    // beyond blocks
}

TEST_CASE("unembedding is a probability vector; uniform at zero parameters") {
    const auto cfg = tiny_config();
    const auto p0 = zero_params(cfg);
    Matrix h = last_token_repr({0, 1}, p0, cfg);
    Matrix probs = unembed(h, p0, cfg);
    REQUIRE(probs.cols() == cfg.vocab_size);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
        CHECK(probs.at(0, v) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const auto p = init_params(cfg, 3);
    Matrix pr = unembed(last_token_repr({0, 1}, p, cfg), p, cfg);
    double sum = 0.0;
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        CHECK(pr.at(0, v) > 0.0);
        sum += pr.at(0, v);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("activation names round-trip") {
    CHECK(activation_from_name(activation_name(Activation::Tanh)) == Activation::Tanh);
    CHECK(activation_from_name(activation_name(Activation::GeluTanh)) == Activation::GeluTanh);
    CHECK_THROWS_AS(activation_from_name("relu"), ConfigError);
}
