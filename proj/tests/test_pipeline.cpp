#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "lcd/pipeline.hpp"

using namespace lcd;

namespace {

// Small but non-degenerate experiment used across the pipeline tests.
PipelineConfig small_config(const std::string& out_dir) {
    PipelineConfig cfg;
    cfg.n_train = 120;
    cfg.n_dev = 10;
    cfg.n_test = 20;
    cfg.task.source_alphabet_size = 12;
    cfg.task.max_len = 7;
    cfg.model.d_model = 16;
    cfg.model.ffn_dim = 32;
    cfg.train.steps = 60;
    cfg.train.warmup_steps = 30;
    cfg.train.batch_size = 4;
    cfg.seeds = {1, 2};
    // beam comfortably above the bank count so constrained decodes finish
    cfg.sampler.k_max = 3;
    cfg.sampler.per_k = 0.2;
    cfg.decode.beam_size = 10;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("config lines parse with comments, whitespace, and overrides") {
    const PipelineConfig cfg = parse_config_lines({
        "# experiment",
        "",
        "n_train = 50",
        "task.alphabet=9   # small task",
        "seeds=5,6,7",
        "train.two_phase=true",
        "decode.beam_size=3",
    });
    REQUIRE(cfg.n_train == 50);
    REQUIRE(cfg.task.source_alphabet_size == 9);
    REQUIRE(cfg.seeds == std::vector<std::uint64_t>{5, 6, 7});
    REQUIRE(cfg.two_phase);
    REQUIRE(cfg.decode.beam_size == 3);
}

TEST_CASE("unknown or malformed config entries are rejected") {
    REQUIRE_THROWS_AS(parse_config_lines({"no_such_key=1"}), ConfigError);
    REQUIRE_THROWS_AS(parse_config_lines({"n_train"}), ConfigError);
    REQUIRE_THROWS_AS(parse_config_lines({"n_train=abc"}), ConfigError);
    REQUIRE_THROWS_AS(parse_config_lines({"train.two_phase=maybe"}), ConfigError);
    REQUIRE_THROWS_AS(parse_config_lines({"seeds="}), ConfigError);
}

TEST_CASE("adjusting p_zero keeps the sampler distribution normalized") {
    PipelineConfig cfg;
    apply_config_entry(cfg, "sampler.p_zero", "0.2");
    REQUIRE_NOTHROW(cfg.sampler.validate());
    apply_config_entry(cfg, "sampler.k_max", "7");
    REQUIRE_NOTHROW(cfg.sampler.validate());
    REQUIRE(cfg.sampler.k_max == 7);
}

TEST_CASE("config hash tracks data-relevant fields only") {
    PipelineConfig a, b;
    REQUIRE(config_hash(a) == config_hash(b));
    b.out_dir = "elsewhere";
    REQUIRE(config_hash(a) == config_hash(b));  // output location is not identity
    b = a;
    b.data_seed = 999;
    REQUIRE(config_hash(a) != config_hash(b));
    b = a;
    b.train.steps += 1;
    REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("prepare is deterministic with disjoint splits of the right size") {
    const PipelineConfig cfg = small_config("unused");
    const PreparedData a = prepare(cfg);
    const PreparedData b = prepare(cfg);
    REQUIRE(a.train.size() == 120);
    REQUIRE(a.dev.size() == 10);
    REQUIRE(a.test.size() == 20);
    std::set<std::string> ids;
    for (const auto* split : {&a.train, &a.dev, &a.test})
        for (const auto& p : *split) REQUIRE(ids.insert(p.id).second);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        REQUIRE(a.train[i].source == b.train[i].source);
        REQUIRE(a.train[i].constraints == b.train[i].constraints);
    }
    for (std::size_t i = 0; i < a.test.size(); ++i)
        REQUIRE(a.test[i].constraints == b.test[i].constraints);
    // constraints really are reference substrings
    for (const auto& p : a.test) {
        const auto words = split_words(p.target);
        for (const auto& c : p.constraints)
            REQUIRE(std::find(words.begin(), words.end(), c) != words.end());
    }
}

TEST_CASE("prepare_cached reloads identical data from disk") {
    const std::string dir = "pipeline_cache_test";
    std::filesystem::remove_all(dir);
    const PipelineConfig cfg = small_config(dir);
    const PreparedData fresh = prepare_cached(cfg);
    REQUIRE(std::filesystem::exists(artifact_prefix(cfg) + ".train.jsonl"));
    const PreparedData reloaded = prepare_cached(cfg);
    REQUIRE(fresh.train.size() == reloaded.train.size());
    for (std::size_t i = 0; i < fresh.test.size(); ++i) {
        REQUIRE(fresh.test[i].id == reloaded.test[i].id);
        REQUIRE(fresh.test[i].target == reloaded.test[i].target);
        REQUIRE(fresh.test[i].constraints == reloaded.test[i].constraints);
    }
    REQUIRE(fresh.vocab.size() == reloaded.vocab.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("run produces the five comparison rows and reruns identically") {
    const std::string dir = "pipeline_run_test";
    std::filesystem::remove_all(dir);
    const PipelineConfig cfg = small_config(dir);
    const RunResult first = run_pipeline(cfg);
    REQUIRE(first.rows.size() == 5);
    REQUIRE(first.rows[0].name == "(a) Base");
    REQUIRE(first.rows[1].name == "(b) Base+DBA");
    REQUIRE(first.rows[2].name == "(c) LeCA");
    REQUIRE(first.rows[3].name == "(d) LeCA+DBA");
    REQUIRE(first.rows[4].name == "(e) LeCA-ens+DBA");
    // constrained decoding rows honor every constraint
    for (std::size_t i : {1u, 3u, 4u}) {
        REQUIRE(first.rows[i].report.sent_pct == 100.0);
        REQUIRE(first.rows[i].ok_rate == 1.0);
    }
    write_run_result(cfg, first);
    REQUIRE(std::filesystem::exists(artifact_prefix(cfg) + ".report.json"));
    REQUIRE(std::filesystem::exists(artifact_prefix(cfg) + ".report.txt"));
    // second run reuses cached data and checkpoints and reproduces the table
    const RunResult second = run_pipeline(cfg);
    REQUIRE(second.table == first.table);
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(second.rows[i].report.bleu == first.rows[i].report.bleu);
        REQUIRE(second.rows[i].report.combined == first.rows[i].report.combined);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("beam sweep emits one csv row per mode and beam, deterministically") {
    const std::string dir = "pipeline_sweep_test";
    std::filesystem::remove_all(dir);
    PipelineConfig cfg = small_config(dir);
    cfg.seeds = {1};
    const std::vector<int> beams{1, 2, 4};
    const auto rows = sweep_beam(cfg, beams);
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(rows[i].mode == "plain");
        REQUIRE(rows[i + 3].mode == "dba");
        REQUIRE(rows[i].beam == beams[i]);
    }
    for (const auto& r : rows) {
        REQUIRE(r.ok_rate >= 0.0);
        REQUIRE(r.ok_rate <= 1.0);
    }
    const auto again = sweep_beam(cfg, beams);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(rows[i].bleu == again[i].bleu);
        REQUIRE(rows[i].ok_rate == again[i].ok_rate);
    }
    const std::string csv = sweep_to_csv(rows);
    REQUIRE(csv.rfind("mode,beam,bleu,sent_complete_rate\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 7);
    REQUIRE_THROWS_AS(sweep_beam(cfg, {}), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("two-phase training runs end to end") {
    const std::string dir = "pipeline_twophase_test";
    std::filesystem::remove_all(dir);
    PipelineConfig cfg = small_config(dir);
    cfg.two_phase = true;
    cfg.train.steps = 20;
    cfg.n_train = 40;
    const PreparedData data = prepare(cfg);
    const Model m = train_member(cfg, data, 1, true);
    REQUIRE(m.config().vocab_size == data.vocab.size());
    std::filesystem::remove_all(dir);
}
