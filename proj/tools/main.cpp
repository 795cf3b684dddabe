// lcdkit: constrained-decoding experiment driver.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 constraint-failure rate above the configured threshold.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcd/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitConstraint = 4;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

lcd::PipelineConfig resolve_config(const CommonOpts& opts) {
    lcd::PipelineConfig cfg =
        opts.config_path.empty() ? lcd::PipelineConfig{} : lcd::load_config(opts.config_path);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw lcd::ConfigError("--set expects key=value, got '" + kv + "'");
        lcd::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "key=value configuration file");
    cmd->add_option("-s,--set", opts.overrides, "override one config entry (key=value)")
        ->take_all();
}

lcd::DecodeMode parse_mode(const std::string& name) {
    if (name == "plain") return lcd::DecodeMode::plain;
    if (name == "gbs") return lcd::DecodeMode::gbs;
    if (name == "dba") return lcd::DecodeMode::dba;
    throw lcd::ConfigError("unknown decode mode: " + name);
}

struct HypothesisFile {
    std::vector<std::string> ids;
    std::vector<std::string> hyps;
};

void write_hypotheses(const std::string& path, const std::vector<lcd::SentencePair>& test,
                      const std::vector<std::string>& hyps) {
    std::ofstream os(path);
    if (!os) throw lcd::ConfigError("cannot write hypotheses: " + path);
    for (std::size_t i = 0; i < hyps.size(); ++i)
        os << nlohmann::json{{"id", test[i].id}, {"hypothesis", hyps[i]}}.dump() << '\n';
}

HypothesisFile read_hypotheses(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw lcd::ConfigError("cannot read hypotheses: " + path);
    HypothesisFile out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.ids.push_back(j.at("id").get<std::string>());
        out.hyps.push_back(j.at("hypothesis").get<std::string>());
    }
    return out;
}

// Align a hypothesis file against the test split by sentence id.
std::vector<std::string> align_to_test(const HypothesisFile& file,
                                       const std::vector<lcd::SentencePair>& test) {
    std::map<std::string, std::string> by_id;
    for (std::size_t i = 0; i < file.ids.size(); ++i) by_id[file.ids[i]] = file.hyps[i];
    std::vector<std::string> out;
    for (const auto& p : test) {
        auto it = by_id.find(p.id);
        if (it == by_id.end()) throw lcd::DataError("hypotheses missing sentence id " + p.id);
        out.push_back(it->second);
    }
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"constrained sequence decoding toolkit"};
    app.require_subcommand(1);

    CommonOpts prep_opts;
    auto* prep = app.add_subcommand("prepare", "generate and cache the dataset splits");
    add_common(prep, prep_opts);

    CommonOpts train_opts;
    std::uint64_t train_seed = 1;
    bool train_augment = false;
    auto* train_cmd = app.add_subcommand("train", "train one member model");
    add_common(train_cmd, train_opts);
    train_cmd->add_option("--seed", train_seed, "training seed");
    train_cmd->add_flag("--augment", train_augment, "feed sampled constraints into the input");

    CommonOpts dec_opts;
    std::string dec_mode = "dba";
    bool dec_augment = false;
    bool dec_ensemble = false;
    std::string dec_output;
    double fail_threshold = 1.0;
    auto* dec = app.add_subcommand("decode", "decode the test split");
    add_common(dec, dec_opts);
    dec->add_option("--mode", dec_mode, "plain | gbs | dba");
    dec->add_flag("--augment", dec_augment, "constraint-aware model input");
    dec->add_flag("--ensemble", dec_ensemble, "average all seed models");
    dec->add_option("-o,--output", dec_output, "hypotheses JSONL path");
    dec->add_option("--fail-threshold", fail_threshold,
                    "max tolerated fraction of unfinished constrained decodes");

    CommonOpts post_opts;
    std::string post_input, post_output;
    auto* post = app.add_subcommand("postprocess", "repair spacing and restore OOV words");
    add_common(post, post_opts);
    post->add_option("-i,--input", post_input, "hypotheses JSONL")->required();
    post->add_option("-o,--output", post_output, "repaired hypotheses JSONL")->required();

    CommonOpts eval_opts;
    std::string eval_input, eval_format = "table";
    auto* eval_cmd = app.add_subcommand("evaluate", "score hypotheses against the test split");
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("-i,--input", eval_input, "hypotheses JSONL")->required();
    eval_cmd->add_option("--format", eval_format, "table | json");

    CommonOpts run_opts;
    auto* run_cmd = app.add_subcommand("run", "full five-row comparison");
    add_common(run_cmd, run_opts);

    CommonOpts sweep_opts;
    std::vector<int> sweep_beams{1, 2, 5, 10, 20};
    std::string sweep_output;
    auto* sweep = app.add_subcommand("sweep-beam", "BLEU / completion rate vs beam size");
    add_common(sweep, sweep_opts);
    sweep->add_option("--beams", sweep_beams, "beam sizes to sweep")->take_all();
    sweep->add_option("-o,--output", sweep_output, "CSV output path");

    CommonOpts grad_opts;
    double grad_tolerance = 1e-4;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    add_common(grad, grad_opts);
    grad->add_option("--tolerance", grad_tolerance, "max relative error per parameter group");

    CLI11_PARSE(app, argc, argv);

    if (prep->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(prep_opts);
        lcd::prepare_cached(cfg);
        std::cout << "prepared " << lcd::artifact_prefix(cfg) << ".{train,dev,test}.jsonl\n";
        return 0;
    }
    if (train_cmd->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(train_opts);
        const lcd::PreparedData data = lcd::prepare_cached(cfg);
        lcd::train_member_cached(cfg, data, train_seed, train_augment);
        std::cout << "trained " << lcd::artifact_prefix(cfg)
                  << (train_augment ? ".leca." : ".base.") << train_seed << ".ckpt\n";
        return 0;
    }
    if (dec->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(dec_opts);
        const lcd::PreparedData data = lcd::prepare_cached(cfg);
        std::vector<lcd::Model> models;
        if (dec_ensemble) {
            for (std::uint64_t seed : cfg.seeds)
                models.push_back(lcd::train_member_cached(cfg, data, seed, dec_augment));
        } else {
            models.push_back(lcd::train_member_cached(cfg, data, cfg.seeds.front(), dec_augment));
        }
        std::vector<const lcd::Model*> members;
        for (const auto& m : models) members.push_back(&m);
        const lcd::CorpusDecode result =
            lcd::decode_corpus(members, data, cfg, parse_mode(dec_mode), dec_augment);
        const double fail_rate =
            1.0 - static_cast<double>(result.ok_count) / static_cast<double>(result.statuses.size());
        if (!dec_output.empty()) write_hypotheses(dec_output, data.test, result.hypotheses);
        std::cout << "decoded " << result.hypotheses.size() << " sentences, completion rate "
                  << (1.0 - fail_rate) << "\n";
        if (fail_rate > fail_threshold) {
            std::cerr << "constraint-failure rate " << fail_rate << " exceeds threshold "
                      << fail_threshold << "\n";
            return kExitConstraint;
        }
        return 0;
    }
    if (post->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(post_opts);
        const lcd::PreparedData data = lcd::prepare_cached(cfg);
        const HypothesisFile file = read_hypotheses(post_input);
        auto hyps = align_to_test(file, data.test);
        int repairs = 0;
        for (std::size_t i = 0; i < hyps.size(); ++i)
            hyps[i] = lcd::postprocess_output(hyps[i], data.test[i].constraints, &repairs);
        write_hypotheses(post_output, data.test, hyps);
        std::cout << "applied " << repairs << " repairs\n";
        return 0;
    }
    if (eval_cmd->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(eval_opts);
        const lcd::PreparedData data = lcd::prepare_cached(cfg);
        const auto hyps = align_to_test(read_hypotheses(eval_input), data.test);
        std::vector<std::string> refs, ids;
        std::vector<std::vector<std::string>> cons;
        for (const auto& p : data.test) {
            refs.push_back(p.target);
            ids.push_back(p.id);
            cons.push_back(p.constraints);
        }
        const lcd::EvalReport rep = lcd::evaluate(hyps, refs, cons, ids);
        if (eval_format == "json")
            std::cout << lcd::report_to_json(rep).dump(2) << '\n';
        else if (eval_format == "table")
            std::cout << lcd::render_table({{"result", rep}});
        else
            throw lcd::ConfigError("unknown format: " + eval_format);
        return 0;
    }
    if (run_cmd->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(run_opts);
        const lcd::RunResult result = lcd::run_pipeline(cfg);
        lcd::write_run_result(cfg, result);
        std::cout << result.table;
        return 0;
    }
    if (sweep->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(sweep_opts);
        const std::string csv = lcd::sweep_to_csv(lcd::sweep_beam(cfg, sweep_beams));
        if (!sweep_output.empty()) {
            std::ofstream os(sweep_output);
            if (!os) throw lcd::ConfigError("cannot write sweep csv: " + sweep_output);
            os << csv;
        }
        std::cout << csv;
        return 0;
    }
    if (grad->parsed()) {
        const lcd::PipelineConfig cfg = resolve_config(grad_opts);
        lcd::ToyTaskSpec task = cfg.task;
        task.source_alphabet_size = std::min(task.source_alphabet_size, 10);
        const auto corpus = lcd::generate_toy_corpus(task, 8, cfg.data_seed);
        const lcd::Vocabulary vocab = lcd::Vocabulary::build(lcd::corpus_surfaces(corpus));
        lcd::ModelConfig mc = lcd::resolve_model_config(cfg, vocab);
        mc.d_model = 8;
        mc.n_heads = 2;
        mc.ffn_dim = 12;
        lcd::Model model = lcd::Model::init(mc, cfg.seeds.front());
        model.set_specials(vocab.eos(), vocab.sep());
        std::vector<lcd::SentencePair> pairs(corpus.begin(), corpus.begin() + 2);
        lcd::annotate_dataset(pairs, cfg.sampler, cfg.data_seed);
        const auto batch = lcd::to_examples(pairs, vocab, cfg.sampler, true);
        double worst = 0.0;
        for (const auto& [name, err] : lcd::grad_check(model, batch)) {
            std::cout << name << ' ' << err << '\n';
            worst = std::max(worst, err);
        }
        std::cout << "max " << worst << " tolerance " << grad_tolerance << '\n';
        return worst < grad_tolerance ? 0 : 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const lcd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const lcd::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
