#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lcd/augmentation.hpp"
#include "lcd/decoding.hpp"
#include "lcd/errors.hpp"
#include "lcd/evaluation.hpp"
#include "lcd/model.hpp"
#include "lcd/postprocess.hpp"
#include "lcd/scorer.hpp"
#include "lcd/toytask.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

/// Everything one experiment needs, parsed from key=value lines. Defaults
/// reproduce the standard comparison: four seeds, constrained task with
/// synonym/insertion ambiguity, beam 10.
struct PipelineConfig {
    // data
    int n_train = 800;
    int n_dev = 100;
    int n_test = 100;
    std::uint64_t data_seed = 11;
    std::uint64_t constraint_seed = 101;  // test-time annotation stream
    ToyTaskSpec task{/*source_alphabet_size=*/40, /*min_len=*/3, /*max_len=*/10,
                     /*mapping_seed=*/1, /*reorder_window=*/2, /*synonym_fraction=*/0.5,
                     /*insert_prob=*/0.3, /*split_fraction=*/0.1, /*extra_alphabet_size=*/8};
    SamplerConfig sampler;

    // model + optimization
    ModelConfig model;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4};
    bool two_phase = false;
    double phase2_token_dropout = 0.1;

    // decoding
    DecodeConfig decode;

    std::string out_dir = "artifacts";
};

// ---- key=value configuration ----

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& v) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    if (out.empty()) throw ConfigError("config: seeds list is empty");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: " + key + " expects true/false");
}

}  // namespace detail

/// Apply one key=value assignment. Every supported key is listed here;
/// anything else is a configuration error.
inline void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "n_train") cfg.n_train = std::stoi(value);
        else if (key == "n_dev") cfg.n_dev = std::stoi(value);
        else if (key == "n_test") cfg.n_test = std::stoi(value);
        else if (key == "data_seed") cfg.data_seed = std::stoull(value);
        else if (key == "constraint_seed") cfg.constraint_seed = std::stoull(value);
        else if (key == "task.alphabet") cfg.task.source_alphabet_size = std::stoi(value);
        else if (key == "task.min_len") cfg.task.min_len = std::stoi(value);
        else if (key == "task.max_len") cfg.task.max_len = std::stoi(value);
        else if (key == "task.mapping_seed") cfg.task.mapping_seed = std::stoull(value);
        else if (key == "task.reorder_window") cfg.task.reorder_window = std::stoi(value);
        else if (key == "task.synonym_fraction") cfg.task.synonym_fraction = std::stod(value);
        else if (key == "task.insert_prob") cfg.task.insert_prob = std::stod(value);
        else if (key == "task.split_fraction") cfg.task.split_fraction = std::stod(value);
        else if (key == "task.extra_alphabet") cfg.task.extra_alphabet_size = std::stoi(value);
        else if (key == "sampler.k_max") {
            cfg.sampler.k_max = std::stoi(value);
            cfg.sampler.per_k = (1.0 - cfg.sampler.p_zero) / cfg.sampler.k_max;
        } else if (key == "sampler.p_zero") {
            cfg.sampler.p_zero = std::stod(value);
            cfg.sampler.per_k = (1.0 - cfg.sampler.p_zero) / cfg.sampler.k_max;
        } else if (key == "sampler.max_source_positions") cfg.sampler.max_source_positions = std::stoi(value);
        else if (key == "model.d_model") cfg.model.d_model = std::stoi(value);
        else if (key == "model.n_heads") cfg.model.n_heads = std::stoi(value);
        else if (key == "model.ffn_dim") cfg.model.ffn_dim = std::stoi(value);
        else if (key == "model.label_smoothing") cfg.model.label_smoothing = std::stod(value);
        else if (key == "model.dropout") cfg.model.dropout = std::stod(value);
        else if (key == "model.max_target_positions") cfg.model.max_target_positions = std::stoi(value);
        else if (key == "model.use_pointer") cfg.model.use_pointer = detail::parse_bool(key, value);
        else if (key == "model.use_segments") cfg.model.use_segments = detail::parse_bool(key, value);
        else if (key == "model.copy_mask_separators")
            cfg.model.copy_mask_separators = detail::parse_bool(key, value);
        else if (key == "train.steps") cfg.train.steps = std::stoi(value);
        else if (key == "train.batch_size") cfg.train.batch_size = std::stoi(value);
        else if (key == "train.max_lr") cfg.train.max_lr = std::stod(value);
        else if (key == "train.warmup_steps") cfg.train.warmup_steps = std::stoi(value);
        else if (key == "train.clip_norm") cfg.train.clip_norm = std::stod(value);
        else if (key == "train.checkpoint_every") cfg.train.checkpoint_every = std::stoi(value);
        else if (key == "train.average_last") cfg.train.average_last = std::stoi(value);
        else if (key == "train.two_phase") cfg.two_phase = detail::parse_bool(key, value);
        else if (key == "train.phase2_token_dropout") cfg.phase2_token_dropout = std::stod(value);
        else if (key == "seeds") cfg.seeds = detail::parse_seed_list(value);
        else if (key == "decode.beam_size") cfg.decode.beam_size = std::stoi(value);
        else if (key == "decode.max_len_a") cfg.decode.max_len_a = std::stod(value);
        else if (key == "decode.max_len_b") cfg.decode.max_len_b = std::stoi(value);
        else if (key == "decode.length_norm") cfg.decode.length_norm = std::stod(value);
        else if (key == "out_dir") cfg.out_dir = value;
        else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("config: bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
        throw ConfigError("config: bad value for '" + key + "': " + value);
    }
}

/// Parse "key=value" lines; '#' starts a comment, blank lines are skipped.
inline PipelineConfig parse_config_lines(const std::vector<std::string>& lines) {
    const auto trim = [](const std::string& s) {
        const auto first = s.find_first_not_of(" \t");
        if (first == std::string::npos) return std::string{};
        return s.substr(first, s.find_last_not_of(" \t") - first + 1);
    };
    PipelineConfig cfg;
    for (const auto& raw : lines) {
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + line + "'");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return parse_config_lines(lines);
}

/// Canonical serialization used only for hashing: artifact names change iff
/// a data- or training-relevant field changes.
inline std::string canonical_config(const PipelineConfig& c) {
    std::ostringstream os;
    os << c.n_train << '|' << c.n_dev << '|' << c.n_test << '|' << c.data_seed << '|'
       << c.constraint_seed << '|' << c.task.source_alphabet_size << '|' << c.task.min_len << '|'
       << c.task.max_len << '|' << c.task.mapping_seed << '|' << c.task.reorder_window << '|'
       << c.task.synonym_fraction << '|' << c.task.insert_prob << '|' << c.task.split_fraction << '|'
       << c.task.extra_alphabet_size << '|' << c.sampler.k_max << '|' << c.sampler.p_zero << '|'
       << c.sampler.max_source_positions << '|' << c.model.d_model << '|' << c.model.n_heads << '|'
       << c.model.ffn_dim << '|' << c.model.label_smoothing << '|' << c.model.dropout << '|'
       << c.model.use_pointer << '|' << c.model.use_segments << '|' << c.model.copy_mask_separators
       << '|' << c.train.steps << '|' << c.train.batch_size << '|' << c.train.max_lr << '|'
       << c.train.warmup_steps << '|' << c.train.clip_norm << '|' << c.train.checkpoint_every << '|'
       << c.train.average_last << '|' << c.two_phase << '|' << c.phase2_token_dropout;
    return os.str();
}

inline std::string config_hash(const PipelineConfig& cfg) {
    std::ostringstream os;
    os << std::hex << detail::fnv1a(canonical_config(cfg));
    return os.str().substr(0, 12);
}

// ---- prepare ----

struct PreparedData {
    std::vector<SentencePair> train;
    std::vector<SentencePair> dev;
    std::vector<SentencePair> test;
    Vocabulary vocab;
};

/// Deterministic dataset: one corpus split into disjoint train/dev/test,
/// training pairs annotated with sampled constraints, test pairs annotated
/// from an independent stream. Vocabulary is built from the training split.
inline PreparedData prepare(const PipelineConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_dev < 0 || cfg.n_test < 1)
        throw ConfigError("prepare: need n_train >= 1 and n_test >= 1");
    const int total = cfg.n_train + cfg.n_dev + cfg.n_test;
    auto corpus = generate_toy_corpus(cfg.task, total, cfg.data_seed);
    PreparedData d{{corpus.begin(), corpus.begin() + cfg.n_train},
                   {corpus.begin() + cfg.n_train, corpus.begin() + cfg.n_train + cfg.n_dev},
                   {corpus.begin() + cfg.n_train + cfg.n_dev, corpus.end()},
                   Vocabulary::build(corpus_surfaces({corpus.begin(), corpus.begin() + cfg.n_train}))};
    annotate_dataset(d.train, cfg.sampler, Rng::derive(cfg.data_seed, "train-constraints").next_u64());
    annotate_dataset(d.dev, cfg.sampler, Rng::derive(cfg.data_seed, "dev-constraints").next_u64());
    annotate_dataset(d.test, cfg.sampler, cfg.constraint_seed);
    return d;
}

inline std::string artifact_prefix(const PipelineConfig& cfg) {
    return cfg.out_dir + "/" + config_hash(cfg);
}

/// prepare with on-disk caching: writes JSONL splits and the vocabulary on
/// the first call, reloads them afterwards.
inline PreparedData prepare_cached(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string prefix = artifact_prefix(cfg);
    const std::string train_p = prefix + ".train.jsonl";
    const std::string dev_p = prefix + ".dev.jsonl";
    const std::string test_p = prefix + ".test.jsonl";
    const std::string vocab_p = prefix + ".vocab.json";
    if (fs::exists(train_p) && fs::exists(dev_p) && fs::exists(test_p) && fs::exists(vocab_p)) {
        return {read_jsonl(train_p), read_jsonl(dev_p), read_jsonl(test_p), Vocabulary::load(vocab_p)};
    }
    PreparedData d = prepare(cfg);
    write_jsonl(train_p, d.train);
    write_jsonl(dev_p, d.dev);
    write_jsonl(test_p, d.test);
    d.vocab.save(vocab_p);
    return d;
}

// ---- train ----

/// Model dimensions implied by the rest of the configuration.
inline ModelConfig resolve_model_config(const PipelineConfig& cfg, const Vocabulary& vocab) {
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.max_source_positions = cfg.sampler.max_source_positions;
    mc.n_segments = cfg.sampler.k_max + 1;
    return mc;
}

/// Training examples for one split. With augment=true the pairs' sampled
/// constraints enter the input; otherwise the input is just the source.
inline std::vector<TrainExample> to_examples(const std::vector<SentencePair>& pairs,
                                             const Vocabulary& vocab, const SamplerConfig& sampler,
                                             bool augment) {
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        TrainExample ex;
        const ConstraintSet cs = augment ? ConstraintSet::from_surfaces(vocab, p.constraints)
                                         : ConstraintSet{};
        ex.input = build_augmented_input(vocab.encode(p.source), cs, sampler, vocab);
        ex.target = vocab.encode(p.target);
        ex.target.push_back(vocab.eos());
        out.push_back(std::move(ex));
    }
    return out;
}

namespace detail {

// Phase-two noisy copy: source tokens dropped to unk with fixed probability.
inline std::vector<TrainExample> corrupt_sources(const std::vector<TrainExample>& examples,
                                                 double token_dropout, int unk_id,
                                                 std::uint64_t seed) {
    Rng rng(seed ^ 0x5bd1e995u);
    std::vector<TrainExample> out = examples;
    for (auto& ex : out)
        for (std::size_t i = 0; i < ex.input.token_ids.size(); ++i)
            if (ex.input.segment_ids[i] == 0 && i + 1 < ex.input.token_ids.size() &&
                rng.uniform01() < token_dropout)
                ex.input.token_ids[i] = unk_id;
    return out;
}

}  // namespace detail

/// Train one member model, optionally in two phases (clean then noisy
/// sources), with checkpoint averaging when configured.
inline Model train_member(const PipelineConfig& cfg, const PreparedData& data, std::uint64_t seed,
                          bool augment) {
    const ModelConfig mc = resolve_model_config(cfg, data.vocab);
    Model model = Model::init(mc, seed);
    model.set_specials(data.vocab.eos(), data.vocab.sep());
    const auto examples = to_examples(data.train, data.vocab, cfg.sampler, augment);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    if (cfg.two_phase) {
        TrainConfig phase1 = tc;
        phase1.steps = tc.steps / 2;
        phase1.checkpoint_every = 0;
        train(model, examples, phase1);
        TrainConfig phase2 = tc;
        phase2.steps = tc.steps - phase1.steps;
        phase2.seed = seed + 1;
        const auto noisy = detail::corrupt_sources(examples, cfg.phase2_token_dropout,
                                                   data.vocab.unk(), seed);
        const TrainTrace trace = train(model, noisy, phase2);
        if (!trace.checkpoints.empty()) model = Model::average(trace.checkpoints);
    } else {
        const TrainTrace trace = train(model, examples, tc);
        if (!trace.checkpoints.empty()) model = Model::average(trace.checkpoints);
    }
    return model;
}

/// Cached member training; checkpoints are keyed by config hash, seed, and
/// whether the input was augmented.
inline Model train_member_cached(const PipelineConfig& cfg, const PreparedData& data,
                                 std::uint64_t seed, bool augment) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string path = artifact_prefix(cfg) + (augment ? ".leca." : ".base.") +
                             std::to_string(seed) + ".ckpt";
    if (fs::exists(path)) return Model::load(path);
    Model m = train_member(cfg, data, seed, augment);
    m.save(path);
    return m;
}

// ---- decode ----

struct CorpusDecode {
    std::vector<std::string> hypotheses;  // post-processed surface strings
    std::vector<DecodeStatus> statuses;
    int ok_count = 0;
};

/// Decode the whole test split with one scorer per sentence. augment controls
/// whether constraints enter the model input; the decode mode controls
/// whether they are enforced.
inline CorpusDecode decode_corpus(const std::vector<const Model*>& members, const PreparedData& data,
                                  const PipelineConfig& cfg, DecodeMode mode, bool augment) {
    if (members.empty()) throw ConfigError("decode_corpus: no models");
    DecodeConfig dc = cfg.decode;
    dc.mode = mode;
    const GenerationMask mask{data.vocab.pad(), data.vocab.sep(), data.vocab.eos()};
    CorpusDecode out;
    for (const auto& pair : data.test) {
        const ConstraintSet cs = ConstraintSet::from_surfaces(data.vocab, pair.constraints);
        const ConstraintAutomaton aut(cs);
        const AugmentedInput input = build_augmented_input(
            data.vocab.encode(pair.source), augment ? cs : ConstraintSet{}, cfg.sampler, data.vocab);
        std::vector<ModelScorer> scorers;
        scorers.reserve(members.size());
        for (const Model* m : members) scorers.emplace_back(*m, input);
        std::vector<const StepScorer*> ptrs;
        for (const auto& s : scorers) ptrs.push_back(&s);
        const EnsembleScorer scorer(ptrs);
        const DecodeResult r =
            decode(scorer, static_cast<int>(split_words(pair.source).size()), aut, dc, mask);
        out.statuses.push_back(r.status);
        if (r.status == DecodeStatus::ok) ++out.ok_count;
        const std::string text = data.vocab.decode_tokens(r.best.tokens);
        out.hypotheses.push_back(postprocess_output(text, pair.constraints));
    }
    return out;
}

// ---- run: the five-row comparison ----

struct RunRow {
    std::string name;
    EvalReport report;
    double ok_rate = 0.0;  // decode completion rate before post-processing
};

struct RunResult {
    std::vector<RunRow> rows;
    std::string table;
};

inline EvalReport evaluate_decode(const CorpusDecode& dec, const PreparedData& data) {
    std::vector<std::string> refs, ids;
    std::vector<std::vector<std::string>> cons;
    for (const auto& p : data.test) {
        refs.push_back(p.target);
        ids.push_back(p.id);
        cons.push_back(p.constraints);
    }
    return evaluate(dec.hypotheses, refs, cons, ids);
}

/// The standard comparison: base and constraint-aware models, with and
/// without constrained decoding, plus the seed ensemble.
inline RunResult run_pipeline(const PipelineConfig& cfg) {
    const PreparedData data = prepare_cached(cfg);
    std::vector<Model> base, leca;
    for (std::uint64_t seed : cfg.seeds) {
        base.push_back(train_member_cached(cfg, data, seed, false));
        leca.push_back(train_member_cached(cfg, data, seed, true));
    }
    const std::vector<const Model*> base0{&base[0]};
    const std::vector<const Model*> leca0{&leca[0]};
    std::vector<const Model*> leca_all;
    for (const auto& m : leca) leca_all.push_back(&m);

    RunResult out;
    auto add_row = [&](const std::string& name, const CorpusDecode& dec) {
        RunRow row{name, evaluate_decode(dec, data),
                   dec.statuses.empty() ? 0.0
                                        : static_cast<double>(dec.ok_count) /
                                              static_cast<double>(dec.statuses.size())};
        out.rows.push_back(std::move(row));
    };
    add_row("(a) Base", decode_corpus(base0, data, cfg, DecodeMode::plain, false));
    add_row("(b) Base+DBA", decode_corpus(base0, data, cfg, DecodeMode::dba, false));
    add_row("(c) LeCA", decode_corpus(leca0, data, cfg, DecodeMode::plain, true));
    add_row("(d) LeCA+DBA", decode_corpus(leca0, data, cfg, DecodeMode::dba, true));
    add_row("(e) LeCA-ens+DBA", decode_corpus(leca_all, data, cfg, DecodeMode::dba, true));
    std::vector<std::pair<std::string, EvalReport>> table_rows;
    for (const auto& r : out.rows) table_rows.emplace_back(r.name, r.report);
    out.table = render_table(table_rows);
    return out;
}

inline void write_run_result(const PipelineConfig& cfg, const RunResult& result) {
    std::filesystem::create_directories(cfg.out_dir);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : result.rows) {
        nlohmann::json row = report_to_json(r.report);
        row["name"] = r.name;
        row["ok_rate"] = r.ok_rate;
        j.push_back(std::move(row));
    }
    std::ofstream(artifact_prefix(cfg) + ".report.json") << j.dump(2) << '\n';
    std::ofstream(artifact_prefix(cfg) + ".report.txt") << result.table;
}

// ---- beam sweep ----

struct SweepRow {
    std::string mode;
    int beam = 0;
    double bleu = 0.0;
    double ok_rate = 0.0;
};

/// BLEU and completion rate as functions of beam size, for the augmented
/// model under plain and DBA decoding. Trains (or reloads) only the first
/// seed's constraint-aware model.
inline std::vector<SweepRow> sweep_beam(const PipelineConfig& cfg, const std::vector<int>& beams) {
    if (beams.empty()) throw ConfigError("sweep_beam: no beam sizes given");
    const PreparedData data = prepare_cached(cfg);
    const Model model = train_member_cached(cfg, data, cfg.seeds.front(), true);
    const std::vector<const Model*> members{&model};
    std::vector<std::string> refs;
    for (const auto& p : data.test) refs.push_back(p.target);
    std::vector<SweepRow> rows;
    for (const auto& [mode_name, mode] :
         {std::pair<std::string, DecodeMode>{"plain", DecodeMode::plain},
          std::pair<std::string, DecodeMode>{"dba", DecodeMode::dba}}) {
        for (int beam : beams) {
            PipelineConfig c = cfg;
            c.decode.beam_size = beam;
            const CorpusDecode dec = decode_corpus(members, data, c, mode, true);
            rows.push_back({mode_name, beam, corpus_bleu(dec.hypotheses, refs),
                            dec.statuses.empty()
                                ? 0.0
                                : static_cast<double>(dec.ok_count) /
                                      static_cast<double>(dec.statuses.size())});
        }
    }
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "mode,beam,bleu,sent_complete_rate\n";
    for (const auto& r : rows)
        os << r.mode << ',' << r.beam << ',' << r.bleu << ',' << r.ok_rate << '\n';
    return os.str();
}

}  // namespace lcd
