#include "sipit/autograd.hpp"

#include <cmath>

#include "sipit/errors.hpp"

namespace sipit::grad {

using model::ModelConfig;
using model::ModelParams;
using model::TokenSeq;

namespace {

constexpr double kMaskValue = -1e9;

Matrix causal_mask(std::size_t t) {
    Matrix m(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) m.at(i, j) = kMaskValue;
    return m;
}

void validate_target(const Matrix& target, std::size_t n) {
    if (target.rows() != 1 || target.cols() != n)
        throw ShapeError("target distribution has wrong shape");
    double sum = 0.0;
    for (double v : target.data()) {
        if (v < 0.0) throw DomainError("target distribution has negative entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("target distribution must sum to 1");
}

double cross_entropy_scalar(const Matrix& z, const Matrix& target, Matrix* softmax_out) {
    const std::size_t n = z.cols();
    double m = z.at(0, 0);
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, z.at(0, j));
    double sum = 0.0;
    Matrix e(1, n);
    for (std::size_t j = 0; j < n; ++j) {
        e.at(0, j) = std::exp(z.at(0, j) - m);
        sum += e.at(0, j);
    }
    double lse = m + std::log(sum);
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += target.at(0, j) * z.at(0, j);
    if (softmax_out) {
        for (std::size_t j = 0; j < n; ++j) e.at(0, j) /= sum;
        *softmax_out = std::move(e);
    }
    return lse - dot;
}

}  // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Matrix Tape::compute(const Node& n, Matrix* aux_out) const {
    auto in = [&](int i) -> const Matrix& { return nodes_[static_cast<std::size_t>(i)].val; };
    switch (n.op) {
        case Op::Leaf:
            return n.val;
        case Op::MatMul:
            return sipit::mat_mul(in(n.a), in(n.b));
        case Op::Transpose:
            return sipit::transpose(in(n.a));
        case Op::Add:
            return sipit::add(in(n.a), in(n.b));
        case Op::Sub:
            return sipit::sub(in(n.a), in(n.b));
        case Op::Hadamard:
            return sipit::hadamard(in(n.a), in(n.b));
        case Op::Scale:
            return sipit::scale(in(n.a), n.scalar);
        case Op::AddRowBroadcast:
            return sipit::add_row_broadcast(in(n.a), in(n.b));
        case Op::SoftmaxRows:
            return sipit::softmax_rows(in(n.a));
        case Op::RowNormalize: {
            const Matrix& y = in(n.a);
            if (aux_out) {
                Matrix sums(y.rows(), 1);
                for (std::size_t i = 0; i < y.rows(); ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < y.cols(); ++j) s += y.at(i, j);
                    sums.at(i, 0) = s;
                }
                *aux_out = std::move(sums);
            }
            return sipit::row_normalize(y);
        }
        case Op::LayerNormRows:
            return sipit::layer_norm_rows(in(n.a), in(n.b), in(n.c), n.eps, aux_out);
        case Op::ActivationMap:
            return sipit::activation_map(in(n.a), n.act);
        case Op::GatherRows: {
            const Matrix& src = in(n.a);
            Matrix out(n.ids.size(), src.cols());
            for (std::size_t i = 0; i < n.ids.size(); ++i) {
                auto r = static_cast<std::size_t>(n.ids[i]);
                if (r >= src.rows()) throw ShapeError("gather_rows: index out of range");
                for (std::size_t j = 0; j < src.cols(); ++j) out.at(i, j) = src.at(r, j);
            }
            return out;
        }
        case Op::ConcatCols: {
            std::vector<const Matrix*> parts;
            parts.reserve(n.list.size());
            for (int i : n.list) parts.push_back(&in(i));
            return sipit::concat_cols(parts);
        }
        case Op::ConcatRows:
            return sipit::concat_rows(in(n.a), in(n.b));
        case Op::TakeRow:
            return sipit::take_row(in(n.a), n.row);
        case Op::CrossEntropyLogits: {
            Matrix sm;
            double loss = cross_entropy_scalar(in(n.a), n.cst, aux_out ? &sm : nullptr);
            if (aux_out) *aux_out = std::move(sm);
            return Matrix(1, 1, {loss});
        }
        case Op::SqDistHalf: {
            const Matrix& x = in(n.a);
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                double d = x.data()[i] - n.cst.data()[i];
                s += 0.5 * d * d;
            }
            return Matrix(1, 1, {s});
        }
    }
    throw DomainError("tape: unknown op");
}

int Tape::leaf(Matrix value, bool needs_grad) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(value);
    n.needs_grad = needs_grad;
    return push(std::move(n));
}

namespace {
Node make_node(Op op, int a, int b = -1, int c = -1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    return n;
}
}  // namespace

int Tape::mat_mul(int a, int b) {
    Node n = make_node(Op::MatMul, a, b);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::transpose(int a) {
    Node n = make_node(Op::Transpose, a);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    Node n = make_node(Op::Add, a, b);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    Node n = make_node(Op::Sub, a, b);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
    Node n = make_node(Op::Hadamard, a, b);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    Node n = make_node(Op::Scale, a);
    n.scalar = c;
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::add_row_broadcast(int x, int row) {
    Node n = make_node(Op::AddRowBroadcast, x, row);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::softmax_rows(int a) {
    Node n = make_node(Op::SoftmaxRows, a);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::row_normalize(int a) {
    Node n = make_node(Op::RowNormalize, a);
    n.val = compute(n, &n.aux);
    return push(std::move(n));
}

int Tape::layer_norm_rows(int x, int gamma, int beta, double eps) {
    Node n = make_node(Op::LayerNormRows, x, gamma, beta);
    n.eps = eps;
    n.val = compute(n, &n.aux);
    return push(std::move(n));
}

int Tape::activation_map(int a, Activation act) {
    Node n = make_node(Op::ActivationMap, a);
    n.act = act;
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::gather_rows(int a, std::vector<std::int32_t> ids) {
    Node n = make_node(Op::GatherRows, a);
    n.ids = std::move(ids);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::concat_cols(std::vector<int> parts) {
    Node n = make_node(Op::ConcatCols, -1);
    n.list = std::move(parts);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::concat_rows(int top, int bottom) {
    Node n = make_node(Op::ConcatRows, top, bottom);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::take_row(int a, std::size_t i) {
    Node n = make_node(Op::TakeRow, a);
    n.row = i;
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

int Tape::cross_entropy_logits(int z, Matrix target) {
    validate_target(target, val(z).cols());
    if (val(z).rows() != 1) throw ShapeError("cross_entropy_logits: z must be 1×n");
    Node n = make_node(Op::CrossEntropyLogits, z);
    n.cst = std::move(target);
    n.val = compute(n, &n.aux);
    return push(std::move(n));
}

int Tape::sq_dist_half(int x, Matrix target) {
    if (!val(x).same_shape(target)) throw ShapeError("sq_dist_half: shape mismatch");
    Node n = make_node(Op::SqDistHalf, x);
    n.cst = std::move(target);
    n.val = compute(n, nullptr);
    return push(std::move(n));
}

std::vector<Matrix> Tape::backward(int root) const {
    const auto& rn = nodes_[static_cast<std::size_t>(root)];
    if (rn.val.rows() != 1 || rn.val.cols() != 1)
        throw ShapeError("backward: root must be scalar (1×1)");
    std::vector<Matrix> grads(nodes_.size());
    auto accum = [&](int target, const Matrix& g) {
        Matrix& slot = grads[static_cast<std::size_t>(target)];
        if (slot.size() == 0)
            slot = g;
        else
            slot = sipit::add(slot, g);
    };
    grads[static_cast<std::size_t>(root)] = Matrix(1, 1, {1.0});

    for (int i = root; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        const Matrix& g = grads[static_cast<std::size_t>(i)];
        if (g.size() == 0 || n.op == Op::Leaf) continue;
        auto in = [&](int k) -> const Matrix& { return nodes_[static_cast<std::size_t>(k)].val; };
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul:
                accum(n.a, sipit::mat_mul(g, sipit::transpose(in(n.b))));
                accum(n.b, sipit::mat_mul(sipit::transpose(in(n.a)), g));
                break;
            case Op::Transpose:
                accum(n.a, sipit::transpose(g));
                break;
            case Op::Add:
                accum(n.a, g);
                accum(n.b, g);
                break;
            case Op::Sub:
                accum(n.a, g);
                accum(n.b, sipit::scale(g, -1.0));
                break;
            case Op::Hadamard:
                accum(n.a, sipit::hadamard(g, in(n.b)));
                accum(n.b, sipit::hadamard(g, in(n.a)));
                break;
            case Op::Scale:
                accum(n.a, sipit::scale(g, n.scalar));
                break;
            case Op::AddRowBroadcast: {
                accum(n.a, g);
                Matrix db(1, g.cols());
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c2 = 0; c2 < g.cols(); ++c2) db.at(0, c2) += g.at(r, c2);
                accum(n.b, db);
                break;
            }
            case Op::SoftmaxRows: {
                const Matrix& y = n.val;
                Matrix dz(y.rows(), y.cols());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c2 = 0; c2 < y.cols(); ++c2) dot += y.at(r, c2) * g.at(r, c2);
                    for (std::size_t c2 = 0; c2 < y.cols(); ++c2)
                        dz.at(r, c2) = y.at(r, c2) * (g.at(r, c2) - dot);
                }
                accum(n.a, dz);
                break;
            }
            case Op::RowNormalize: {
                const Matrix& y = n.val;
                Matrix dx(y.rows(), y.cols());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    double s = n.aux.at(r, 0);
                    double dot = 0.0;
                    for (std::size_t c2 = 0; c2 < y.cols(); ++c2) dot += g.at(r, c2) * y.at(r, c2);
                    for (std::size_t c2 = 0; c2 < y.cols(); ++c2)
                        dx.at(r, c2) = (g.at(r, c2) - dot) / s;
                }
                accum(n.a, dx);
                break;
            }
            case Op::LayerNormRows: {
                const Matrix& x = in(n.a);
                const Matrix& gamma = in(n.b);
                const std::size_t d = x.cols();
                Matrix dx(x.rows(), d), dgamma(1, d), dbeta(1, d);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    double mean = n.aux.at(r, 0), inv = n.aux.at(r, 1);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double xh = (x.at(r, j) - mean) * inv;
                        double u = g.at(r, j) * gamma.at(0, j);
                        dgamma.at(0, j) += g.at(r, j) * xh;
                        dbeta.at(0, j) += g.at(r, j);
                        m1 += u;
                        m2 += u * xh;
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        double xh = (x.at(r, j) - mean) * inv;
                        double u = g.at(r, j) * gamma.at(0, j);
                        dx.at(r, j) = inv * (u - m1 - xh * m2);
                    }
                }
                accum(n.a, dx);
                accum(n.b, dgamma);
                accum(n.c, dbeta);
                break;
            }
            case Op::ActivationMap: {
                const Matrix& x = in(n.a);
                Matrix dx(x.rows(), x.cols());
                for (std::size_t k = 0; k < x.size(); ++k)
                    dx.data()[k] = g.data()[k] * activation_derivative(x.data()[k], n.act);
                accum(n.a, dx);
                break;
            }
            case Op::GatherRows: {
                const Matrix& src = in(n.a);
                Matrix dsrc(src.rows(), src.cols());
                for (std::size_t r = 0; r < n.ids.size(); ++r) {
                    auto tr = static_cast<std::size_t>(n.ids[r]);
                    for (std::size_t j = 0; j < src.cols(); ++j) dsrc.at(tr, j) += g.at(r, j);
                }
                accum(n.a, dsrc);
                break;
            }
            case Op::ConcatCols: {
                std::size_t off = 0;
                for (int part : n.list) {
                    const Matrix& pv = in(part);
                    Matrix dp(pv.rows(), pv.cols());
                    for (std::size_t r = 0; r < pv.rows(); ++r)
                        for (std::size_t j = 0; j < pv.cols(); ++j)
                            dp.at(r, j) = g.at(r, off + j);
                    accum(part, dp);
                    off += pv.cols();
                }
                break;
            }
            case Op::ConcatRows: {
                const Matrix& top = in(n.a);
                const Matrix& bottom = in(n.b);
                if (top.rows() > 0) {
                    Matrix dt(top.rows(), top.cols());
                    for (std::size_t r = 0; r < top.rows(); ++r)
                        for (std::size_t j = 0; j < top.cols(); ++j) dt.at(r, j) = g.at(r, j);
                    accum(n.a, dt);
                }
                Matrix db(bottom.rows(), bottom.cols());
                for (std::size_t r = 0; r < bottom.rows(); ++r)
                    for (std::size_t j = 0; j < bottom.cols(); ++j)
                        db.at(r, j) = g.at(top.rows() + r, j);
                accum(n.b, db);
                break;
            }
            case Op::TakeRow: {
                const Matrix& src = in(n.a);
                Matrix dsrc(src.rows(), src.cols());
                for (std::size_t j = 0; j < src.cols(); ++j) dsrc.at(n.row, j) = g.at(0, j);
                accum(n.a, dsrc);
                break;
            }
            case Op::CrossEntropyLogits: {
                double gs = g.at(0, 0);
                const Matrix& sm = n.aux;
                Matrix dz(1, sm.cols());
                for (std::size_t j = 0; j < sm.cols(); ++j)
                    dz.at(0, j) = gs * (sm.at(0, j) - n.cst.at(0, j));
                accum(n.a, dz);
                break;
            }
            case Op::SqDistHalf: {
                double gs = g.at(0, 0);
                const Matrix& x = in(n.a);
                Matrix dx(x.rows(), x.cols());
                for (std::size_t k = 0; k < x.size(); ++k)
                    dx.data()[k] = gs * (x.data()[k] - n.cst.data()[k]);
                accum(n.a, dx);
                break;
            }
        }
    }
    return grads;
}

void Tape::replay_and_check() const {
    for (const Node& n : nodes_) {
        if (n.op == Op::Leaf) continue;
        Matrix aux;
        Matrix v = compute(n, &aux);
        if (!(v == n.val)) throw NumericError("tape replay: value mismatch");
        if (n.aux.size() > 0 && !(aux == n.aux)) throw NumericError("tape replay: aux mismatch");
    }
}

// ---------------------------------------------------------------------------
// Model graph builders.

namespace {

struct TapedBlock {
    std::vector<std::array<int, 3>> heads;  // wq, wk, wv leaf ids
    int w_out, ln1g, ln1b, ln2g, ln2b;
    std::vector<int> mlp_w, mlp_b;
};

struct TapedParams {
    int tok_embed, pos_embed;
    std::vector<TapedBlock> blocks;
    int unembed_w, lnfg, lnfb;
    std::vector<int> ordered;  // leaf ids in canonical tensor order
};

TapedParams add_param_leaves(Tape& tape, const ModelParams& p, bool needs_grad) {
    TapedParams tp;
    auto put = [&](const Matrix& m) {
        int id = tape.leaf(m, needs_grad);
        tp.ordered.push_back(id);
        return id;
    };
    tp.tok_embed = put(p.tok_embed);
    tp.pos_embed = put(p.pos_embed);
    for (const auto& blk : p.blocks) {
        TapedBlock tb;
        for (const auto& h : blk.heads) tb.heads.push_back({put(h.wq), put(h.wk), put(h.wv)});
        tb.w_out = put(blk.w_out);
        tb.ln1g = put(blk.ln1_gamma);
        tb.ln1b = put(blk.ln1_beta);
        tb.ln2g = put(blk.ln2_gamma);
        tb.ln2b = put(blk.ln2_beta);
        for (std::size_t m = 0; m < blk.mlp_w.size(); ++m) {
            tb.mlp_w.push_back(put(blk.mlp_w[m]));
            tb.mlp_b.push_back(put(blk.mlp_b[m]));
        }
        tp.blocks.push_back(std::move(tb));
    }
    tp.unembed_w = put(p.unembed_w);
    tp.lnfg = put(p.lnf_gamma);
    tp.lnfb = put(p.lnf_beta);
    return tp;
}

int taped_mlp(Tape& tape, const TapedBlock& tb, int h_norm, const ModelConfig& cfg) {
    int h = tape.add_row_broadcast(tape.mat_mul(h_norm, tape.transpose(tb.mlp_w[0])), tb.mlp_b[0]);
    for (std::size_t m = 1; m < tb.mlp_w.size(); ++m) {
        int a = tape.activation_map(h, cfg.activation);
        h = tape.add_row_broadcast(tape.mat_mul(a, tape.transpose(tb.mlp_w[m])), tb.mlp_b[m]);
    }
    return h;
}

// Full-sequence block, mirroring model::transformer_block's kernel order.
int taped_block(Tape& tape, const TapedBlock& tb, int x, std::size_t t, const ModelConfig& cfg) {
    int x_norm = tape.layer_norm_rows(x, tb.ln1g, tb.ln1b, cfg.ln_epsilon);
    int mask = tape.leaf(causal_mask(t));
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    std::vector<int> head_out;
    for (const auto& h : tb.heads) {
        int q = tape.mat_mul(x_norm, h[0]);
        int k = tape.mat_mul(x_norm, h[1]);
        int v = tape.mat_mul(x_norm, h[2]);
        int scores = tape.scale(tape.mat_mul(q, tape.transpose(k)), inv_sqrt);
        int att = tape.softmax_rows(tape.add(scores, mask));
        head_out.push_back(tape.mat_mul(att, v));
    }
    int attn = tape.mat_mul(tape.concat_cols(head_out), tb.w_out);
    int h_res = tape.add(x, attn);
    int h_norm = tape.layer_norm_rows(h_res, tb.ln2g, tb.ln2b, cfg.ln_epsilon);
    return tape.add(h_res, taped_mlp(tape, tb, h_norm, cfg));
}

int taped_forward_tokens(Tape& tape, const TapedParams& tp, const ModelConfig& cfg,
                         const TokenSeq& s, std::uint32_t top) {
    std::vector<std::int32_t> pos(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) pos[i] = static_cast<std::int32_t>(i);
    int x = tape.add(tape.gather_rows(tp.tok_embed, s), tape.gather_rows(tp.pos_embed, pos));
    for (std::uint32_t l = 0; l < top; ++l) x = taped_block(tape, tp.blocks[l], x, s.size(), cfg);
    return x;
}

// Block-parameter leaves only, for the row-chain path below (the embedding
// and unembedding tensors never enter it).
std::vector<TapedBlock> add_block_leaves(Tape& tape, const ModelParams& p, std::uint32_t layer) {
    std::vector<TapedBlock> out;
    for (std::uint32_t l = 0; l < layer; ++l) {
        const auto& blk = p.blocks[l];
        TapedBlock tb;
        for (const auto& h : blk.heads)
            tb.heads.push_back({tape.leaf(h.wq), tape.leaf(h.wk), tape.leaf(h.wv)});
        tb.w_out = tape.leaf(blk.w_out);
        tb.ln1g = tape.leaf(blk.ln1_gamma);
        tb.ln1b = tape.leaf(blk.ln1_beta);
        tb.ln2g = tape.leaf(blk.ln2_gamma);
        tb.ln2b = tape.leaf(blk.ln2_beta);
        for (std::size_t m = 0; m < blk.mlp_w.size(); ++m) {
            tb.mlp_w.push_back(tape.leaf(blk.mlp_w[m]));
            tb.mlp_b.push_back(tape.leaf(blk.mlp_b[m]));
        }
        out.push_back(std::move(tb));
    }
    return out;
}

// Row-t chain through layer `layer` with constant prefix states; only the
// injected row's path is differentiable. Mirrors model::one_step_from_prefix.
int taped_row_chain(Tape& tape, const std::vector<TapedBlock>& tblocks, const ModelParams& p,
                    const model::HiddenStates& prefix_hs, int row, std::uint32_t layer,
                    const ModelConfig& cfg) {
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    for (std::uint32_t l = 0; l < layer; ++l) {
        const TapedBlock& tb = tblocks[l];
        const model::BlockParams& blk = p.blocks[l];
        const Matrix& x_prev = prefix_hs.layers[l];
        Matrix prev_norm =
            sipit::layer_norm_rows(x_prev, blk.ln1_gamma, blk.ln1_beta, cfg.ln_epsilon);
        int row_norm = tape.layer_norm_rows(row, tb.ln1g, tb.ln1b, cfg.ln_epsilon);
        std::vector<int> head_out;
        for (std::size_t h = 0; h < blk.heads.size(); ++h) {
            int q_row = tape.mat_mul(row_norm, tb.heads[h][0]);
            int k_prev = tape.leaf(sipit::mat_mul(prev_norm, blk.heads[h].wk));
            int v_prev = tape.leaf(sipit::mat_mul(prev_norm, blk.heads[h].wv));
            int k_full = tape.concat_rows(k_prev, tape.mat_mul(row_norm, tb.heads[h][1]));
            int v_full = tape.concat_rows(v_prev, tape.mat_mul(row_norm, tb.heads[h][2]));
            int scores = tape.scale(tape.mat_mul(q_row, tape.transpose(k_full)), inv_sqrt);
            head_out.push_back(tape.mat_mul(tape.softmax_rows(scores), v_full));
        }
        int attn_row = tape.mat_mul(tape.concat_cols(head_out), tb.w_out);
        int h_row = tape.add(row, attn_row);
        int h_norm = tape.layer_norm_rows(h_row, tb.ln2g, tb.ln2b, cfg.ln_epsilon);
        row = tape.add(h_row, taped_mlp(tape, tb, h_norm, cfg));
    }
    return row;
}

ParamGrads collect_param_grads(const ModelConfig& cfg, const TapedParams& tp,
                               const std::vector<Matrix>& grads) {
    ParamGrads out = model::zero_params(cfg);
    std::size_t i = 0;
    model::for_each_tensor(out, [&](const char*, Matrix& m) {
        const Matrix& g = grads[static_cast<std::size_t>(tp.ordered[i])];
        if (g.size() > 0) m = g;
        ++i;
    });
    return out;
}

}  // namespace

LossAndGrads grad_loss_params(const TokenSeq& s, const Matrix& target, const ModelParams& p,
                              const ModelConfig& cfg) {
    model::validate_prompt(cfg, s);
    validate_target(target, cfg.vocab_size);
    Tape tape;
    TapedParams tp = add_param_leaves(tape, p, /*needs_grad=*/true);
    int x = taped_forward_tokens(tape, tp, cfg, s, cfg.blocks);
    int r = tape.take_row(x, s.size() - 1);
    int rn = tape.layer_norm_rows(r, tp.lnfg, tp.lnfb, cfg.ln_epsilon);
    int z = tape.mat_mul(rn, tape.transpose(tp.unembed_w));
    int loss = tape.cross_entropy_logits(z, target);
    std::vector<Matrix> grads = tape.backward(loss);
    LossAndGrads out;
    out.loss = tape.val(loss).at(0, 0);
    out.grads = collect_param_grads(cfg, tp, grads);
    return out;
}

double cross_entropy_loss(const TokenSeq& s, const Matrix& target, const ModelParams& p,
                          const ModelConfig& cfg) {
    model::validate_prompt(cfg, s);
    validate_target(target, cfg.vocab_size);
    Matrix r = model::last_token_repr(s, p, cfg);
    Matrix rn = sipit::layer_norm_rows(r, p.lnf_gamma, p.lnf_beta, cfg.ln_epsilon);
    Matrix z = sipit::mat_mul(rn, sipit::transpose(p.unembed_w));
    return cross_entropy_scalar(z, target, nullptr);
}

ValueAndGrad grad_distance_embedding(const Matrix& e, const TokenSeq& prefix, std::uint32_t t,
                                     std::uint32_t layer, const Matrix& target,
                                     const ModelParams& p, const ModelConfig& cfg) {
    model::HiddenStates hs = model::prefix_states(prefix, p, cfg, layer);
    return grad_distance_embedding_cached(hs, e, t, layer, target, p, cfg);
}

ValueAndGrad grad_distance_embedding_cached(const model::HiddenStates& prefix_hs, const Matrix& e,
                                            std::uint32_t t, std::uint32_t layer,
                                            const Matrix& target, const ModelParams& p,
                                            const ModelConfig& cfg) {
    if (e.rows() != 1 || e.cols() != cfg.width)
        throw ShapeError("grad_distance_embedding: e must be 1×width");
    if (target.rows() != 1 || target.cols() != cfg.width)
        throw ShapeError("grad_distance_embedding: target must be 1×width");
    if (t < 1 || t > cfg.context) throw PositionError("grad_distance_embedding: bad position");
    Tape tape;
    std::vector<TapedBlock> tblocks = add_block_leaves(tape, p, layer);
    int e_leaf = tape.leaf(e, /*needs_grad=*/true);
    int row = taped_row_chain(tape, tblocks, p, prefix_hs, e_leaf, layer, cfg);
    int obj = tape.sq_dist_half(row, target);
    std::vector<Matrix> grads = tape.backward(obj);
    ValueAndGrad out;
    out.value = tape.val(obj).at(0, 0);
    const Matrix& ge = grads[static_cast<std::size_t>(e_leaf)];
    out.grad = ge.size() > 0 ? ge : Matrix(1, cfg.width);
    return out;
}

double distance_objective(const Matrix& e, const TokenSeq& prefix, std::uint32_t t,
                          std::uint32_t layer, const Matrix& target, const ModelParams& p,
                          const ModelConfig& cfg) {
    Matrix f = model::one_step_map(e, prefix, t, layer, p, cfg);
    double s = 0.0;
    for (std::size_t j = 0; j < f.cols(); ++j) {
        double d = f.at(0, j) - target.at(0, j);
        s += 0.5 * d * d;
    }
    return s;
}

std::vector<double> finite_diff_oracle(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_oracle: h must be positive");
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double xi = x[i];
        x[i] = xi + h;
        double fp = f(x);
        x[i] = xi - h;
        double fm = f(x);
        x[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace sipit::grad
