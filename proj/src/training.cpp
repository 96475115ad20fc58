#include "sipit/training.hpp"

#include <cmath>
#include <cstddef>

#include "sipit/errors.hpp"
#include "sipit/rng.hpp"

namespace sipit::train {

void TrainConfig::validate(std::size_t corpus_size) const {
    if (step_sizes.size() != batches.size())
        throw ConfigError("train schedule: step_sizes and batches length mismatch");
    if (step_sizes.empty()) throw ConfigError("train schedule: no steps");
    for (double eta : step_sizes)
        if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("train schedule: step size must lie in (0,1)");
    for (const auto& b : batches) {
        if (b.empty()) throw ConfigError("train schedule: empty batch");
        for (std::uint32_t i : b)
            if (i >= corpus_size) throw ConfigError("train schedule: sample index out of range");
    }
}

namespace {

std::vector<Matrix*> tensor_list(model::ModelParams& p) {
    std::vector<Matrix*> out;
    model::for_each_tensor(p, [&](const char*, Matrix& m) { out.push_back(&m); });
    return out;
}

// dst += a * src, tensor by tensor.
void axpy_params(std::vector<Matrix*>& dst, double a, std::vector<Matrix*>& src) {
    for (std::size_t k = 0; k < dst.size(); ++k)
        for (std::size_t j = 0; j < dst[k]->data().size(); ++j)
            dst[k]->data()[j] += a * src[k]->data()[j];
}

}  // namespace

model::ModelParams gd_step(const model::ModelParams& p, const std::vector<Sample>& batch,
                           double eta, const model::ModelConfig& cfg, double* batch_loss) {
    if (batch.empty()) throw ConfigError("gd_step: empty batch");
    grad::ParamGrads mean = model::zero_params(cfg);
    auto mean_t = tensor_list(mean);
    double loss_sum = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Sample& smp : batch) {
        auto [loss, g] = grad::grad_loss_params(smp.s, smp.target, p, cfg);
        loss_sum += loss;
        auto g_t = tensor_list(g);
        axpy_params(mean_t, inv, g_t);
    }
    if (batch_loss) *batch_loss = loss_sum * inv;
    model::ModelParams out = p;
    auto out_t = tensor_list(out);
    axpy_params(out_t, -eta, mean_t);
    return out;
}

TrainResult train(model::ModelParams init, const std::vector<Sample>& corpus,
                  const TrainConfig& tc, const model::ModelConfig& cfg) {
    tc.validate(corpus.size());
    TrainResult res{std::move(init), {}};
    res.loss_trace.reserve(tc.step_sizes.size());
    for (std::size_t step = 0; step < tc.step_sizes.size(); ++step) {
        std::vector<Sample> batch;
        batch.reserve(tc.batches[step].size());
        for (std::uint32_t idx : tc.batches[step]) batch.push_back(corpus[idx]);
        double loss = 0.0;
        res.params = gd_step(res.params, batch, tc.step_sizes[step], cfg, &loss);
        res.loss_trace.push_back(loss);
    }
    return res;
}

std::vector<Sample> make_toy_corpus(const model::ModelConfig& cfg, std::size_t size,
                                    std::size_t max_len, double soft_fraction,
                                    std::uint64_t seed) {
    if (size == 0) throw ConfigError("make_toy_corpus: size must be positive");
    if (max_len == 0 || max_len > cfg.context)
        throw ConfigError("make_toy_corpus: max_len must lie in [1, context]");
    if (!(soft_fraction >= 0.0 && soft_fraction <= 1.0))
        throw ConfigError("make_toy_corpus: soft_fraction must lie in [0,1]");
    Rng rng(seed);
    std::vector<Sample> corpus;
    corpus.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t len = 1 + static_cast<std::size_t>(rng.below(static_cast<std::uint32_t>(max_len)));
        model::TokenSeq s(len);
        for (auto& id : s) id = static_cast<std::int32_t>(rng.below(cfg.vocab_size));
        Matrix target(1, cfg.vocab_size);
        if (rng.uniform() < soft_fraction) {
            // Dirichlet(1): normalized unit exponentials.
            double sum = 0.0;
            for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
                target.at(0, v) = -std::log(rng.uniform_pos());
                sum += target.at(0, v);
            }
            for (std::size_t v = 0; v < cfg.vocab_size; ++v) target.at(0, v) /= sum;
        } else {
            target.at(0, rng.below(cfg.vocab_size)) = 1.0;
        }
        corpus.push_back(Sample{std::move(s), std::move(target)});
    }
    return corpus;
}

TrainConfig make_schedule(std::size_t steps, double eta, std::size_t corpus_size,
                          const std::vector<std::uint32_t>& batch_sizes, std::uint64_t seed) {
    if (steps == 0) throw ConfigError("make_schedule: steps must be positive");
    if (corpus_size == 0) throw ConfigError("make_schedule: empty corpus");
    if (batch_sizes.empty()) throw ConfigError("make_schedule: no batch sizes");
    for (std::uint32_t b : batch_sizes)
        if (b == 0) throw ConfigError("make_schedule: zero batch size");
    Rng rng(seed);
    TrainConfig tc;
    tc.step_sizes.assign(steps, eta);
    tc.batches.reserve(steps);
    for (std::size_t step = 0; step < steps; ++step) {
        const std::uint32_t bs = batch_sizes[step % batch_sizes.size()];
        std::vector<std::uint32_t> batch(bs);
        for (auto& idx : batch) idx = static_cast<std::uint32_t>(rng.below(static_cast<std::uint32_t>(corpus_size)));
        tc.batches.push_back(std::move(batch));
    }
    return tc;
}

}  // namespace sipit::train
