#include "sipit/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "sipit/errors.hpp"

namespace sipit::io {

namespace {

constexpr std::uint32_t kWeightsVersion = 1;
constexpr std::uint32_t kStatesVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double x) {
    const auto v = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;
    const char* what;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw FormatError(std::string(what) + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
    void magic(const char* m) {
        need(4);
        if (buf.compare(pos, 4, m) != 0)
            throw FormatError(std::string(what) + ": bad magic (expected " + m + ")");
        pos += 4;
    }
    void done() const {
        if (pos != buf.size())
            throw FormatError(std::string(what) + ": trailing bytes after payload");
    }
};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string("config: ") + where + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : j.items())
        if (!ok.count(item.key()))
            throw ConfigError(std::string("config: unknown key '") + item.key() + "' in " + where);
}

}  // namespace

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path);
    out << text;
    if (!out) throw InputError("write failed for " + path);
}

void write_weights(const std::string& path, const model::ModelParams& p,
                   const model::ModelConfig& cfg) {
    cfg.validate();
    std::string buf;
    buf.append("SIPW");
    put_u32(buf, kWeightsVersion);
    put_u32(buf, cfg.vocab_size);
    put_u32(buf, cfg.context);
    put_u32(buf, cfg.width);
    put_u32(buf, cfg.heads);
    put_u32(buf, cfg.head_dim);
    put_u32(buf, cfg.blocks);
    put_u32(buf, static_cast<std::uint32_t>(cfg.mlp_dims.size()));
    for (std::uint32_t d : cfg.mlp_dims) put_u32(buf, d);
    put_u32(buf, static_cast<std::uint32_t>(cfg.activation));
    put_f64(buf, cfg.ln_epsilon);
    std::size_t count = 0;
    model::for_each_tensor(const_cast<model::ModelParams&>(p), [&](const char*, Matrix& m) {
        for (double x : m.data()) put_f64(buf, x);
        count += m.data().size();
    });
    if (count != cfg.param_count())
        throw FormatError("weights do not match the config's parameter count");
    write_text(path, buf);
}

LoadedModel read_weights(const std::string& path) {
    const std::string buf = read_text(path);
    Cursor c{buf, 0, "weights"};
    c.magic("SIPW");
    if (c.u32() != kWeightsVersion) throw FormatError("weights: unsupported version");
    LoadedModel lm;
    lm.cfg.vocab_size = c.u32();
    lm.cfg.context = c.u32();
    lm.cfg.width = c.u32();
    lm.cfg.heads = c.u32();
    lm.cfg.head_dim = c.u32();
    lm.cfg.blocks = c.u32();
    const std::uint32_t mlp_count = c.u32();
    if (mlp_count > 64) throw FormatError("weights: implausible MLP depth");
    lm.cfg.mlp_dims.resize(mlp_count);
    for (auto& d : lm.cfg.mlp_dims) d = c.u32();
    const std::uint32_t act = c.u32();
    if (act > 1) throw FormatError("weights: unknown activation code");
    lm.cfg.activation = static_cast<Activation>(act);
    lm.cfg.ln_epsilon = c.f64();
    try {
        lm.cfg.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("weights: invalid config: ") + e.what());
    }
    lm.params = model::zero_params(lm.cfg);
    model::for_each_tensor(lm.params, [&](const char*, Matrix& m) {
        for (double& x : m.data()) x = c.f64();
    });
    c.done();
    return lm;
}

void write_states(const std::string& path, const StateFile& f) {
    std::string buf;
    buf.append("SIPH");
    put_u32(buf, kStatesVersion);
    put_u32(buf, f.layer);
    put_u32(buf, f.width);
    put_u32(buf, static_cast<std::uint32_t>(f.records.size()));
    for (const auto& rec : f.records) {
        if (rec.states.rows() != rec.ids.size() || rec.states.cols() != f.width)
            throw ShapeError("states: record shape does not match its ids/width");
        put_u32(buf, static_cast<std::uint32_t>(rec.ids.size()));
        for (std::int32_t id : rec.ids) {
            if (id < 0) throw DomainError("states: negative token id");
            put_u32(buf, static_cast<std::uint32_t>(id));
        }
        for (double x : rec.states.data()) put_f64(buf, x);
    }
    write_text(path, buf);
}

StateFile read_states(const std::string& path) {
    const std::string buf = read_text(path);
    Cursor c{buf, 0, "states"};
    c.magic("SIPH");
    if (c.u32() != kStatesVersion) throw FormatError("states: unsupported version");
    StateFile f;
    f.layer = c.u32();
    f.width = c.u32();
    if (f.width == 0) throw FormatError("states: zero width");
    const std::uint32_t n = c.u32();
    f.records.reserve(n);
    for (std::uint32_t r = 0; r < n; ++r) {
        StateRecord rec;
        const std::uint32_t t = c.u32();
        if (t == 0) throw FormatError("states: empty record");
        rec.ids.resize(t);
        for (auto& id : rec.ids) id = static_cast<std::int32_t>(c.u32());
        rec.states = Matrix(t, f.width);
        for (double& x : rec.states.data()) x = c.f64();
        f.records.push_back(std::move(rec));
    }
    c.done();
    return f;
}

PromptFile read_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    PromptFile pf;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        model::TokenSeq s;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                const long v = std::stol(tok, &used);
                if (used != tok.size() || v < 0 || v > INT32_MAX) throw std::invalid_argument("");
                s.push_back(static_cast<std::int32_t>(v));
            } catch (const std::exception&) {
                throw InputError(path + ":" + std::to_string(lineno) + ": bad token id '" + tok +
                                 "'");
            }
        }
        if (s.empty()) continue;  // whitespace-only line
        pf.prompts.push_back(std::move(s));
        pf.lines.push_back(lineno);
    }
    return pf;
}

void write_prompts(const std::string& path, const std::vector<model::TokenSeq>& prompts) {
    std::string buf;
    for (const auto& s : prompts) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) buf.push_back(' ');
            buf += std::to_string(s[i]);
        }
        buf.push_back('\n');
    }
    write_text(path, buf);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["model"] = {{"vocab_size", c.model.vocab_size},
                  {"context", c.model.context},
                  {"width", c.model.width},
                  {"heads", c.model.heads},
                  {"head_dim", c.model.head_dim},
                  {"blocks", c.model.blocks},
                  {"mlp_dims", c.model.mlp_dims},
                  {"activation", model::activation_name(c.model.activation)},
                  {"ln_epsilon", c.model.ln_epsilon}};
    j["seed"] = c.seed;
    j["init_std"] = c.init_std;
    j["checked"] = c.checked;
    j["train"] = {{"steps", c.train_steps},
                  {"eta", c.eta},
                  {"batch_sizes", c.batch_sizes},
                  {"corpus_size", c.corpus_size},
                  {"corpus_max_len", c.corpus_max_len},
                  {"soft_fraction", c.soft_fraction}};
    j["scan"] = {{"prompts", c.scan_prompts},
                 {"min_len", c.scan_min_len},
                 {"max_len", c.scan_max_len},
                 {"threshold", c.threshold}};
    j["margin"] = {{"prefix", c.margin_prefix}, {"layer", c.margin_layer}};
    j["witness"] = {{"kind", c.witness_kind},
                    {"i_star", c.witness_i_star},
                    {"seq_len", c.witness_seq_len}};
    j["hessian"] = {{"target", c.hessian_target}, {"etas", c.hessian_etas}};
    j["invert"] = {{"epsilon", c.verifier.epsilon},
                   {"backoff", c.verifier.backoff},
                   {"backoff_start", c.verifier.backoff_start},
                   {"backoff_cap", c.verifier.backoff_cap},
                   {"layer", c.verifier.layer},
                   {"policy", c.policy}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, {"model", "seed", "init_std", "checked", "train", "scan", "margin", "witness",
                   "hessian", "invert"},
               "the top level");
    ExperimentConfig c;
    if (j.contains("model")) {
        const auto& m = j["model"];
        check_keys(m, {"vocab_size", "context", "width", "heads", "head_dim", "blocks",
                       "mlp_dims", "activation", "ln_epsilon"},
                   "model");
        if (m.contains("vocab_size")) c.model.vocab_size = m["vocab_size"].get<std::uint32_t>();
        if (m.contains("context")) c.model.context = m["context"].get<std::uint32_t>();
        if (m.contains("width")) c.model.width = m["width"].get<std::uint32_t>();
        if (m.contains("heads")) c.model.heads = m["heads"].get<std::uint32_t>();
        if (m.contains("head_dim")) c.model.head_dim = m["head_dim"].get<std::uint32_t>();
        if (m.contains("blocks")) c.model.blocks = m["blocks"].get<std::uint32_t>();
        if (m.contains("mlp_dims")) c.model.mlp_dims = m["mlp_dims"].get<std::vector<std::uint32_t>>();
        if (m.contains("activation"))
            c.model.activation = model::activation_from_name(m["activation"].get<std::string>());
        if (m.contains("ln_epsilon")) c.model.ln_epsilon = m["ln_epsilon"].get<double>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("init_std")) c.init_std = j["init_std"].get<double>();
    if (j.contains("checked")) c.checked = j["checked"].get<bool>();
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, {"steps", "eta", "batch_sizes", "corpus_size", "corpus_max_len",
                       "soft_fraction"},
                   "train");
        if (t.contains("steps")) c.train_steps = t["steps"].get<std::size_t>();
        if (t.contains("eta")) c.eta = t["eta"].get<double>();
        if (t.contains("batch_sizes"))
            c.batch_sizes = t["batch_sizes"].get<std::vector<std::uint32_t>>();
        if (t.contains("corpus_size")) c.corpus_size = t["corpus_size"].get<std::size_t>();
        if (t.contains("corpus_max_len")) c.corpus_max_len = t["corpus_max_len"].get<std::size_t>();
        if (t.contains("soft_fraction")) c.soft_fraction = t["soft_fraction"].get<double>();
    }
    if (j.contains("scan")) {
        const auto& s = j["scan"];
        check_keys(s, {"prompts", "min_len", "max_len", "threshold"}, "scan");
        if (s.contains("prompts")) c.scan_prompts = s["prompts"].get<std::size_t>();
        if (s.contains("min_len")) c.scan_min_len = s["min_len"].get<std::size_t>();
        if (s.contains("max_len")) c.scan_max_len = s["max_len"].get<std::size_t>();
        if (s.contains("threshold")) c.threshold = s["threshold"].get<double>();
    }
    if (j.contains("margin")) {
        const auto& m = j["margin"];
        check_keys(m, {"prefix", "layer"}, "margin");
        if (m.contains("prefix")) c.margin_prefix = m["prefix"].get<model::TokenSeq>();
        if (m.contains("layer")) c.margin_layer = m["layer"].get<std::uint32_t>();
    }
    if (j.contains("witness")) {
        const auto& w = j["witness"];
        check_keys(w, {"kind", "i_star", "seq_len"}, "witness");
        if (w.contains("kind")) c.witness_kind = w["kind"].get<std::string>();
        if (w.contains("i_star")) c.witness_i_star = w["i_star"].get<std::uint32_t>();
        if (w.contains("seq_len")) c.witness_seq_len = w["seq_len"].get<std::uint32_t>();
    }
    if (j.contains("hessian")) {
        const auto& h = j["hessian"];
        check_keys(h, {"target", "etas"}, "hessian");
        if (h.contains("target")) c.hessian_target = h["target"].get<std::string>();
        if (h.contains("etas")) c.hessian_etas = h["etas"].get<std::vector<double>>();
    }
    if (j.contains("invert")) {
        const auto& i = j["invert"];
        check_keys(i, {"epsilon", "backoff", "backoff_start", "backoff_cap", "layer", "policy"},
                   "invert");
        if (i.contains("epsilon")) c.verifier.epsilon = i["epsilon"].get<double>();
        if (i.contains("backoff")) c.verifier.backoff = i["backoff"].get<bool>();
        if (i.contains("backoff_start")) c.verifier.backoff_start = i["backoff_start"].get<double>();
        if (i.contains("backoff_cap")) c.verifier.backoff_cap = i["backoff_cap"].get<double>();
        if (i.contains("layer")) c.verifier.layer = i["layer"].get<std::uint32_t>();
        if (i.contains("policy")) c.policy = i["policy"].get<std::string>();
    }
    c.model.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void save_config(const std::string& path, const ExperimentConfig& c) {
    write_text(path, config_to_json(c).dump(2) + "\n");
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string s = config_to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Matrix hessian_target_vector(const std::string& spec, const model::ModelConfig& cfg) {
    Matrix t(1, cfg.vocab_size);
    if (spec == "uniform") {
        for (std::size_t v = 0; v < cfg.vocab_size; ++v)
            t.at(0, v) = 1.0 / static_cast<double>(cfg.vocab_size);
        return t;
    }
    const std::string prefix = "one_hot:";
    if (spec.rfind(prefix, 0) == 0) {
        std::size_t idx = 0;
        try {
            idx = std::stoul(spec.substr(prefix.size()));
        } catch (const std::exception&) {
            throw ConfigError("hessian target: bad index in '" + spec + "'");
        }
        if (idx >= cfg.vocab_size) throw ConfigError("hessian target: index out of vocabulary");
        t.at(0, idx) = 1.0;
        return t;
    }
    throw ConfigError("hessian target must be 'uniform' or 'one_hot:<id>'");
}

json scan_report_json(const probe::ScanReport& r) {
    return {{"layer", r.layer},
            {"prompt_count", r.prompt_count},
            {"pair_count", r.pair_count},
            {"min_dist", r.min_dist},
            {"mean_dist", r.mean_dist},
            {"max_dist", r.max_dist},
            {"argmin_i", r.argmin_i},
            {"argmin_j", r.argmin_j},
            {"threshold", r.threshold},
            {"verdict", r.verdict}};
}

json margin_report_json(const probe::MarginReport& r) {
    return {{"prefix", r.prefix},  {"t", r.t},
            {"layer", r.layer},    {"delta", r.delta},
            {"argmin_v", r.argmin_v}, {"argmin_w", r.argmin_w},
            {"pair_count", r.pair_count}};
}

json hessian_report_json(const probe::HessianReport& r) {
    return {{"eta", r.eta},
            {"w_norm", r.w_norm},
            {"eigenvalues", r.eigenvalues},
            {"eig_err", r.eig_err},
            {"max_offblock_abs", r.max_offblock_abs},
            {"max_cross_err", r.max_cross_err},
            {"max_asymmetry", r.max_asymmetry},
            {"det_measured", r.det_measured},
            {"det_expected", r.det_expected},
            {"det_rel_err", r.det_rel_err},
            {"ok_spectrum", r.ok_spectrum},
            {"ok_offblock", r.ok_offblock},
            {"ok_det", r.ok_det}};
}

json embedding_witness_json(const probe::EmbeddingWitness& w) {
    return {{"kind", "embedding"},
            {"s", w.s},
            {"t", w.t},
            {"distance", w.distance},
            {"expected", w.expected},
            {"abs_err", std::abs(w.distance - w.expected)}};
}

json attention_witness_json(const probe::AttentionWitness& w) {
    return {{"kind", "attention"},
            {"s", w.s},
            {"t", w.t},
            {"i_star", w.i_star},
            {"seq_len", w.seq_len},
            {"c_ep", w.c_ep},
            {"c_e", w.c_e},
            {"delta", w.delta},
            {"alpha_beta", w.alpha_beta},
            {"bound", w.bound},
            {"expected_gap", w.expected_gap},
            {"measured_gap", w.measured_gap},
            {"distance", w.distance}};
}

json recovery_json(const invert::RecoveryResult& r) {
    json j = {{"ids", r.ids},
              {"proposals", r.proposals},
              {"accepted_eps", r.accepted_eps},
              {"total_tests", r.total_tests},
              {"ok", r.ok()}};
    if (r.has_ground_truth) j["exact_match"] = r.exact_match;
    if (!r.ok()) {
        j["failed_position"] = r.failed_position;
        j["best_token"] = r.best_token;
        j["best_distance"] = r.best_distance;
    }
    return j;
}

json length_buckets_json(const std::vector<probe::LengthBucket>& rows) {
    json arr = json::array();
    for (const auto& b : rows)
        arr.push_back({{"length", b.length},
                       {"prompt_count", b.prompt_count},
                       {"pair_count", b.pair_count},
                       {"min_dist", b.min_dist},
                       {"mean_dist", b.mean_dist},
                       {"max_dist", b.max_dist},
                       {"skipped", b.skipped}});
    return arr;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace sipit::io
