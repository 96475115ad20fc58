#include <cstdio>
#include <cstdlib>
#include <doctest.h>
#include <filesystem>
#include <string>
#include <vector>

#include "sipit/errors.hpp"
#include "sipit/io.hpp"
#include "sipit/model.hpp"

using namespace sipit;
using namespace sipit::io;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("sipit_io_test_" + std::to_string(std::rand()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("weight files round-trip bit for bit") {
    TempDir dir;
    const auto cfg = model::tiny_config();
    const auto p = model::init_params(cfg, 31);
    const auto path = dir.file("w.sipw");
    write_weights(path, p, cfg);

    const auto lm = read_weights(path);
    CHECK(lm.cfg == cfg);
    CHECK(model::flatten(lm.params) == model::flatten(p));

    // Same inputs, byte-identical file.
    const auto bytes = read_text(path);
    write_weights(dir.file("w2.sipw"), p, cfg);
    CHECK(read_text(dir.file("w2.sipw")) == bytes);
}

TEST_CASE("weight files reject corruption") {
    TempDir dir;
    const auto cfg = model::tiny_config();
    const auto p = model::init_params(cfg, 31);
    const auto path = dir.file("w.sipw");
    write_weights(path, p, cfg);
    const auto bytes = read_text(path);

    // Bad magic.
    auto bad = bytes;
    bad[0] = 'X';
    write_text(dir.file("bad_magic.sipw"), bad);
    CHECK_THROWS_AS(read_weights(dir.file("bad_magic.sipw")), FormatError);

    // Truncated.
    write_text(dir.file("trunc.sipw"), bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(read_weights(dir.file("trunc.sipw")), FormatError);

    // Trailing garbage.
    write_text(dir.file("trail.sipw"), bytes + "zz");
    CHECK_THROWS_AS(read_weights(dir.file("trail.sipw")), FormatError);

    // Unsupported version (byte 4 is the low byte of the version word).
    auto vbad = bytes;
    vbad[4] = 0x7f;
    write_text(dir.file("vbad.sipw"), vbad);
    CHECK_THROWS_AS(read_weights(dir.file("vbad.sipw")), FormatError);

    CHECK_THROWS_AS(read_weights(dir.file("missing.sipw")), InputError);
}

TEST_CASE("state files round-trip with echoed ids") {
    TempDir dir;
    const auto cfg = model::tiny_config();
    const auto p = model::init_params(cfg, 8);

    StateFile sf;
    sf.layer = 1;
    sf.width = cfg.width;
    for (const model::TokenSeq& s : {model::TokenSeq{0, 1, 2}, model::TokenSeq{2}}) {
        const auto hs = model::forward(s, p, cfg, 1);
        sf.records.push_back({s, hs.layers[1]});
    }
    const auto path = dir.file("s.siph");
    write_states(path, sf);

    const auto back = read_states(path);
    CHECK(back.layer == 1);
    CHECK(back.width == cfg.width);
    REQUIRE(back.records.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.records[i].ids == sf.records[i].ids);
        CHECK(back.records[i].states == sf.records[i].states);
    }

    // An empty record list round-trips too (an empty prompt file upstream).
    StateFile empty;
    empty.layer = 2;
    empty.width = cfg.width;
    write_states(dir.file("e.siph"), empty);
    const auto eb = read_states(dir.file("e.siph"));
    CHECK(eb.records.empty());
    CHECK(eb.layer == 2);

    // Corruption.
    const auto bytes = read_text(path);
    auto bad = bytes;
    bad[1] = 'X';
    write_text(dir.file("bad.siph"), bad);
    CHECK_THROWS_AS(read_states(dir.file("bad.siph")), FormatError);
    write_text(dir.file("trunc.siph"), bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_states(dir.file("trunc.siph")), FormatError);
}

TEST_CASE("prompt files: parsing, line numbers, round-trip") {
    TempDir dir;
    const auto path = dir.file("p.txt");

    write_text(path, "1 2 3\n\n  \n7\n0 0 0 0\n");
    const auto pf = read_prompts(path);
    REQUIRE(pf.prompts.size() == 3);
    CHECK(pf.prompts[0] == model::TokenSeq{1, 2, 3});
    CHECK(pf.prompts[1] == model::TokenSeq{7});
    CHECK(pf.prompts[2] == model::TokenSeq{0, 0, 0, 0});
    CHECK(pf.lines == std::vector<std::size_t>{1, 4, 5});

    write_text(path, "1 2\n3 abc 4\n");
    try {
        read_prompts(path);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":2:") != std::string::npos);  // the offending line
        CHECK(msg.find("abc") != std::string::npos);  // and token
    }

    write_text(path, "5 -3\n");
    CHECK_THROWS_AS(read_prompts(path), InputError);

    write_text(path, "   \n\n");
    CHECK(read_prompts(path).prompts.empty());

    CHECK_THROWS_AS(read_prompts(dir.file("nope.txt")), InputError);

    const std::vector<model::TokenSeq> prompts = {{1, 2}, {3}};
    write_prompts(dir.file("w.txt"), prompts);
    CHECK(read_prompts(dir.file("w.txt")).prompts == prompts);
}

TEST_CASE("experiment config: defaults, JSON round-trip, strictness") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.model.validate());  // usable without any config file
    CHECK(c.model == model::toy_config());

    const json j = config_to_json(c);
    CHECK(config_from_json(j) == c);

    // A modified config still round-trips.
    c.seed = 7;
    c.model.blocks = 1;
    c.eta = 0.05;
    c.policy = "random";
    c.verifier.epsilon = 1e-8;
    c.hessian_etas = {0.25};
    c.margin_prefix = {1, 2, 3};
    CHECK(config_from_json(config_to_json(c)) == c);

    // Unknown keys are rejected, not ignored.
    json bad = config_to_json(c);
    bad["typo_field"] = 1;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = config_to_json(c);
    bad["model"]["wdith"] = 4;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);

    // Model section is validated.
    bad = config_to_json(c);
    bad["model"]["width"] = 3;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = config_to_json(c);
    bad["model"]["activation"] = "relu";
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);

    // Partial configs inherit defaults.
    json partial;
    partial["seed"] = 99;
    const auto pc = config_from_json(partial);
    CHECK(pc.seed == 99);
    CHECK(pc.model == model::toy_config());
    CHECK(pc.train_steps == 50);
}

TEST_CASE("config files and hashes") {
    TempDir dir;
    ExperimentConfig c;
    c.seed = 123;
    save_config(dir.file("c.json"), c);
    CHECK(load_config(dir.file("c.json")) == c);

    write_text(dir.file("junk.json"), "{not json");
    CHECK_THROWS_AS(load_config(dir.file("junk.json")), ConfigError);
    CHECK_THROWS_AS(load_config(dir.file("missing.json")), InputError);

    const auto h1 = config_hash(c);
    CHECK(h1.size() == 16);
    CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(config_hash(c) == h1);  // stable
    ExperimentConfig d = c;
    d.seed = 124;
    CHECK(config_hash(d) != h1);
}

TEST_CASE("hessian target vectors") {
    const auto cfg = model::tiny_config();
    const Matrix u = hessian_target_vector("uniform", cfg);
    REQUIRE(u.cols() == 3);
    for (std::size_t v = 0; v < 3; ++v) CHECK(u.at(0, v) == doctest::Approx(1.0 / 3));

    const Matrix oh = hessian_target_vector("one_hot:2", cfg);
    CHECK(oh.at(0, 2) == 1.0);
    CHECK(oh.at(0, 0) == 0.0);

    CHECK_THROWS_AS(hessian_target_vector("one_hot:3", cfg), ConfigError);
    CHECK_THROWS_AS(hessian_target_vector("one_hot:x", cfg), ConfigError);
    CHECK_THROWS_AS(hessian_target_vector("gauss", cfg), ConfigError);
}

TEST_CASE("fmt_double round-trips exactly") {
    for (double x : {0.1, -0.0, 1e-300, 3.141592653589793, 6912.0, 1.0 / 3.0}) {
        const std::string s = fmt_double(x);
        CHECK(std::strtod(s.c_str(), nullptr) == x);
    }
}

TEST_CASE("report JSON carries the fields reports need") {
    probe::ScanReport r;
    r.layer = 2;
    r.prompt_count = 5;
    r.pair_count = 10;
    r.min_dist = 0.25;
    r.verdict = true;
    const json js = scan_report_json(r);
    CHECK(js["layer"] == 2);
    CHECK(js["pair_count"] == 10);
    CHECK(js["min_dist"] == 0.25);
    CHECK(js["verdict"] == true);

    invert::RecoveryResult rec;
    rec.ids = {1, 2};
    rec.proposals = {3, 4};
    rec.accepted_eps = {0.0, 0.0};
    rec.total_tests = 7;
    rec.has_ground_truth = true;
    rec.exact_match = true;
    const json jr = recovery_json(rec);
    CHECK(jr["ok"] == true);
    CHECK(jr["exact_match"] == true);
    CHECK(jr["total_tests"] == 7);
    CHECK_FALSE(jr.contains("failed_position"));

    invert::RecoveryResult fail;
    fail.failed_position = 2;
    fail.best_token = 9;
    fail.best_distance = 0.5;
    fail.ids = {1};
    fail.proposals = {2};
    fail.accepted_eps = {0.0};
    const json jf = recovery_json(fail);
    CHECK(jf["ok"] == false);
    CHECK(jf["failed_position"] == 2);
    CHECK(jf["best_token"] == 9);
    CHECK(jf["best_distance"] == 0.5);

    // Serialization is deterministic: equal inputs, equal bytes.
    CHECK(recovery_json(rec).dump() == jr.dump());
}

TEST_CASE("text round trip") {
    TempDir dir;
    const std::string payload = "line1\nline2\x01\xff binary-ish\n";
    write_text(dir.file("t.bin"), payload);
    CHECK(read_text(dir.file("t.bin")) == payload);
    CHECK_THROWS_AS(read_text(dir.file("missing.bin")), InputError);
}
