#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcd/augmentation.hpp"
#include "lcd/autograd.hpp"
#include "lcd/errors.hpp"
#include "lcd/rng.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

using ag::Mat;

struct ModelConfig {
    int d_model = 32;
    int n_heads = 2;
    int ffn_dim = 64;
    int max_source_positions = 32;
    int max_constraint_positions = 64;
    int max_target_positions = 80;
    int n_segments = 15;  // k_max + 1
    double label_smoothing = 0.1;
    double dropout = 0.0;
    int vocab_size = 0;
    bool use_pointer = true;
    bool use_segments = true;
    bool copy_mask_separators = false;

    void validate() const {
        if (vocab_size <= 0) throw ConfigError("ModelConfig: vocab_size must be positive");
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError("ModelConfig: label_smoothing must be in [0,1)");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout must be in [0,1)");
        if (max_source_positions < 2 || max_constraint_positions < 1 || max_target_positions < 2 ||
            n_segments < 1 || ffn_dim < 1)
            throw ConfigError("ModelConfig: invalid table sizes");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},
                {"n_heads", n_heads},
                {"ffn_dim", ffn_dim},
                {"max_source_positions", max_source_positions},
                {"max_constraint_positions", max_constraint_positions},
                {"max_target_positions", max_target_positions},
                {"n_segments", n_segments},
                {"label_smoothing", label_smoothing},
                {"dropout", dropout},
                {"vocab_size", vocab_size},
                {"use_pointer", use_pointer},
                {"use_segments", use_segments},
                {"copy_mask_separators", copy_mask_separators}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_model = j.at("d_model");
        c.n_heads = j.at("n_heads");
        c.ffn_dim = j.at("ffn_dim");
        c.max_source_positions = j.at("max_source_positions");
        c.max_constraint_positions = j.at("max_constraint_positions");
        c.max_target_positions = j.at("max_target_positions");
        c.n_segments = j.at("n_segments");
        c.label_smoothing = j.at("label_smoothing");
        c.dropout = j.at("dropout");
        c.vocab_size = j.at("vocab_size");
        c.use_pointer = j.at("use_pointer");
        c.use_segments = j.at("use_segments");
        c.copy_mask_separators = j.at("copy_mask_separators");
        return c;
    }
};

/// Encoder output for one augmented input, cached across decode steps.
struct EncoderMemory {
    Mat mem;                        // |tokens| x d_model
    std::vector<int> token_ids;     // for the copy distribution scatter
    std::vector<int> segment_ids;
};

/// One training example: augmented input plus the target sequence, which
/// must end with eos.
struct TrainExample {
    AugmentedInput input;
    TokenSeq target;
};

/// Minimal encoder-decoder: one encoder block, one decoder block with
/// cross-attention, tied input/output token embeddings, and an optional
/// pointer-generator head whose copy distribution scatters a single-head
/// cross-attention onto the input token ids.
class Model {
  public:
    Model() = default;

    /// Deterministic initialization: embeddings ~ N(0, d^-1/2), projection
    /// matrices Xavier, layer norms at identity.
    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg_ = cfg;
        m.eos_id_ = -1;
        Rng rng(seed ^ 0xa5a5a5a5ull);
        const int d = cfg.d_model;
        const int dh = d / cfg.n_heads;
        const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));

        auto normal_mat = [&](int r, int c, double std) {
            Mat w(r, c);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) w(i, j) = rng.normal() * std;
            return w;
        };
        auto xavier = [&](int r, int c) {
            return normal_mat(r, c, std::sqrt(2.0 / static_cast<double>(r + c)));
        };
        auto add_param = [&](const std::string& name, Mat w) { m.params_.emplace(name, std::move(w)); };

        add_param("tok_emb", normal_mat(cfg.vocab_size, d, emb_std));
        add_param("pos_emb", normal_mat(cfg.max_source_positions + cfg.max_constraint_positions, d, emb_std));
        add_param("dec_pos_emb", normal_mat(cfg.max_target_positions, d, emb_std));
        if (cfg.use_segments) add_param("seg_emb", normal_mat(cfg.n_segments, d, emb_std));
        add_param("out_bias", Mat::Zero(1, cfg.vocab_size));

        auto add_attention = [&](const std::string& prefix) {
            for (int h = 0; h < cfg.n_heads; ++h) {
                const std::string hs = std::to_string(h);
                add_param(prefix + ".q" + hs, xavier(d, dh));
                add_param(prefix + ".k" + hs, xavier(d, dh));
                add_param(prefix + ".v" + hs, xavier(d, dh));
                add_param(prefix + ".o" + hs, xavier(dh, d));
            }
        };
        auto add_block_tail = [&](const std::string& prefix) {
            add_param(prefix + ".ff1", xavier(d, cfg.ffn_dim));
            add_param(prefix + ".ff1_b", Mat::Zero(1, cfg.ffn_dim));
            add_param(prefix + ".ff2", xavier(cfg.ffn_dim, d));
            add_param(prefix + ".ff2_b", Mat::Zero(1, d));
        };
        auto add_ln = [&](const std::string& name) {
            add_param(name + "_g", Mat::Ones(1, d));
            add_param(name + "_b", Mat::Zero(1, d));
        };

        add_attention("enc.sa");
        add_ln("enc.ln1");
        add_block_tail("enc");
        add_ln("enc.ln2");

        add_attention("dec.sa");
        add_ln("dec.ln1");
        add_attention("dec.ca");
        add_ln("dec.ln2");
        add_block_tail("dec");
        add_ln("dec.ln3");

        if (cfg.use_pointer) {
            add_param("copy.q", xavier(d, d));
            add_param("gate.wh", xavier(d, 1));
            add_param("gate.wc", xavier(d, 1));
            add_param("gate.b", Mat::Zero(1, 1));
        }
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    std::map<std::string, Mat>& params() { return params_; }
    const std::map<std::string, Mat>& params() const { return params_; }
    Mat& param(const std::string& name) { return params_.at(name); }
    const Mat& param(const std::string& name) const { return params_.at(name); }

    // ---- graph building ----

    using ParamVars = std::map<std::string, ag::Var>;

    ParamVars leaves(ag::Tape& tape) const {
        ParamVars vars;
        for (const auto& [name, w] : params_) vars.emplace(name, tape.leaf(w));
        return vars;
    }

    /// Input vectors: token + position (+ segment) embeddings, then one
    /// post-norm encoder block.
    ag::Var build_encoder(ag::Tape& t, ParamVars& pv, const AugmentedInput& aug,
                          Rng* dropout_rng = nullptr) const {
        check_input(aug);
        const double s = std::sqrt(static_cast<double>(cfg_.d_model));
        ag::Var e = ag::scale(t, ag::gather_rows(t, pv.at("tok_emb"), aug.token_ids), s);
        e = ag::add(t, e, ag::gather_rows(t, pv.at("pos_emb"), aug.position_ids));
        if (cfg_.use_segments) e = ag::add(t, e, ag::gather_rows(t, pv.at("seg_emb"), aug.segment_ids));
        e = dropout(t, e, dropout_rng);
        ag::Var a = attention(t, pv, "enc.sa", e, e, nullptr);
        ag::Var x1 = ag::layernorm_rows(t, ag::add(t, e, dropout(t, a, dropout_rng)),
                                        pv.at("enc.ln1_g"), pv.at("enc.ln1_b"));
        ag::Var f = ffn(t, pv, "enc", x1);
        return ag::layernorm_rows(t, ag::add(t, x1, dropout(t, f, dropout_rng)),
                                  pv.at("enc.ln2_g"), pv.at("enc.ln2_b"));
    }

    /// Per-row next-token probabilities for the decoder input sequence
    /// [eos, y_1, ..., y_{L-1}]. With last_only, only the final row is
    /// produced (used at decode time).
    ag::Var build_decoder_probs(ag::Tape& t, ParamVars& pv, ag::Var memory,
                                const AugmentedInput& aug, const TokenSeq& decoder_input,
                                bool last_only, Rng* dropout_rng = nullptr) const {
        const int len = static_cast<int>(decoder_input.size());
        if (len > cfg_.max_target_positions)
            throw DataError("decoder input exceeds max_target_positions");
        const double s = std::sqrt(static_cast<double>(cfg_.d_model));
        std::vector<int> positions(decoder_input.size());
        for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;
        ag::Var d_full = ag::scale(t, ag::gather_rows(t, pv.at("tok_emb"), decoder_input), s);
        d_full = ag::add(t, d_full, ag::gather_rows(t, pv.at("dec_pos_emb"), positions));
        d_full = dropout(t, d_full, dropout_rng);

        ag::Var queries = d_full;
        Mat causal;
        const Mat* mask = nullptr;
        if (last_only) {
            queries = ag::gather_rows(t, d_full, {len - 1});
        } else {
            causal = Mat::Zero(len, len);
            for (int i = 0; i < len; ++i)
                for (int j = i + 1; j < len; ++j) causal(i, j) = kNegInf;
            mask = &causal;
        }
        ag::Var sa = attention(t, pv, "dec.sa", queries, d_full, mask);
        ag::Var x1 = ag::layernorm_rows(t, ag::add(t, queries, dropout(t, sa, dropout_rng)),
                                        pv.at("dec.ln1_g"), pv.at("dec.ln1_b"));
        ag::Var ca = attention(t, pv, "dec.ca", x1, memory, nullptr);
        ag::Var x2 = ag::layernorm_rows(t, ag::add(t, x1, dropout(t, ca, dropout_rng)),
                                        pv.at("dec.ln2_g"), pv.at("dec.ln2_b"));
        ag::Var f = ffn(t, pv, "dec", x2);
        ag::Var h = ag::layernorm_rows(t, ag::add(t, x2, dropout(t, f, dropout_rng)),
                                       pv.at("dec.ln3_g"), pv.at("dec.ln3_b"));

        ag::Var logits = ag::add_row(t, ag::matmul_nt(t, h, pv.at("tok_emb")), pv.at("out_bias"));
        ag::Var p_vocab = ag::softmax_rows(t, logits);
        if (!cfg_.use_pointer) return p_vocab;

        // copy head: single-head attention over all encoder positions
        ag::Var cq = ag::matmul(t, h, pv.at("copy.q"));
        ag::Var cscores = ag::scale(t, ag::matmul_nt(t, cq, memory), 1.0 / s);
        Mat copy_mask;
        const Mat* cmask = nullptr;
        if (cfg_.copy_mask_separators) {
            copy_mask = Mat::Zero(cscores->val.rows(), cscores->val.cols());
            for (std::size_t p = 0; p < aug.token_ids.size(); ++p)
                if (sep_id_ >= 0 && aug.token_ids[p] == sep_id_)
                    copy_mask.col(static_cast<Eigen::Index>(p)).setConstant(kNegInf);
            cmask = &copy_mask;
        }
        ag::Var attn = ag::softmax_rows(t, cscores, cmask);
        ag::Var ctx = ag::matmul(t, attn, memory);
        ag::Var gate_logit = ag::add_row(
            t, ag::add(t, ag::matmul(t, h, pv.at("gate.wh")), ag::matmul(t, ctx, pv.at("gate.wc"))),
            pv.at("gate.b"));
        ag::Var g = ag::sigmoid(t, gate_logit);

        Mat scatter = Mat::Zero(static_cast<Eigen::Index>(aug.token_ids.size()), cfg_.vocab_size);
        for (std::size_t p = 0; p < aug.token_ids.size(); ++p)
            scatter(static_cast<Eigen::Index>(p), aug.token_ids[p]) = 1.0;
        ag::Var p_copy = ag::matmul_const(t, attn, scatter);
        return ag::add(t, ag::scale_rows(t, p_vocab, g), ag::scale_rows(t, p_copy, ag::one_minus(t, g)));
    }

    /// Label-smoothed NLL of the batch, averaged per target token.
    ag::Var build_loss(ag::Tape& t, ParamVars& pv, const std::vector<TrainExample>& batch,
                       Rng* dropout_rng = nullptr) const {
        if (batch.empty()) throw ConfigError("build_loss: empty batch");
        long total_tokens = 0;
        for (const auto& ex : batch) total_tokens += static_cast<long>(ex.target.size());
        ag::Var loss = nullptr;
        for (const auto& ex : batch) {
            if (ex.target.empty() || ex.target.back() != eos_for(ex))
                throw DataError("build_loss: target must end with eos");
            TokenSeq dec_in;
            dec_in.push_back(ex.target.back());  // eos as start symbol
            dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end() - 1);
            ag::Var mem = build_encoder(t, pv, ex.input, dropout_rng);
            ag::Var probs = build_decoder_probs(t, pv, mem, ex.input, dec_in, false, dropout_rng);
            ag::Var logp = ag::log_floored(t, probs);
            const double eps = cfg_.label_smoothing;
            Mat q = Mat::Constant(static_cast<Eigen::Index>(ex.target.size()), cfg_.vocab_size,
                                  eps / cfg_.vocab_size);
            for (std::size_t i = 0; i < ex.target.size(); ++i)
                q(static_cast<Eigen::Index>(i), ex.target[i]) += 1.0 - eps;
            ag::Var nll = ag::scale(t, ag::weighted_sum(t, logp, q), -1.0 / static_cast<double>(total_tokens));
            loss = loss ? ag::add(t, loss, nll) : nll;
        }
        return loss;
    }

    // ---- inference ----

    EncoderMemory encode_input(const AugmentedInput& aug) const {
        ag::Tape t;
        ParamVars pv = leaves(t);
        ag::Var mem = build_encoder(t, pv, aug);
        EncoderMemory out;
        out.mem = mem->val;
        out.token_ids = aug.token_ids;
        out.segment_ids = aug.segment_ids;
        return out;
    }

    /// Log-probabilities of the next token given the generated prefix.
    Eigen::VectorXd forward_step(const EncoderMemory& memory, const TokenSeq& prefix) const {
        AugmentedInput aug;
        aug.token_ids = memory.token_ids;
        aug.segment_ids = memory.segment_ids;
        ag::Tape t;
        ParamVars pv = leaves(t);
        ag::Var mem = t.leaf(memory.mem);
        TokenSeq dec_in;
        dec_in.push_back(start_symbol());
        dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
        ag::Var probs = build_decoder_probs(t, pv, mem, aug, dec_in, true);
        return probs->val.row(0).array().max(1e-300).log().matrix().transpose();
    }

    void set_specials(int eos_id, int sep_id) {
        eos_id_ = eos_id;
        sep_id_ = sep_id;
    }
    int start_symbol() const {
        if (eos_id_ < 0) throw ConfigError("Model: start symbol not set");
        return eos_id_;
    }

    // ---- persistence ----

    static constexpr const char* kMagic = "LCDCKPT1";

    void save(const std::string& path) const {
        nlohmann::json header;
        header["config"] = cfg_.to_json();
        header["eos_id"] = eos_id_;
        header["sep_id"] = sep_id_;
        nlohmann::json manifest = nlohmann::json::array();
        std::uint64_t offset = 0;
        for (const auto& [name, w] : params_) {
            manifest.push_back({{"name", name},
                                {"rows", w.rows()},
                                {"cols", w.cols()},
                                {"dtype", "f32"},
                                {"offset", offset}});
            offset += static_cast<std::uint64_t>(w.size()) * 4;
        }
        header["tensors"] = manifest;
        const std::string hs = header.dump();
        std::ofstream os(path, std::ios::binary);
        if (!os) throw ConfigError("cannot write checkpoint: " + path);
        os.write(kMagic, 8);
        const std::uint64_t hlen = hs.size();
        os.write(reinterpret_cast<const char*>(&hlen), 8);
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, w] : params_) {
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    const float f = static_cast<float>(w(i, j));
                    os.write(reinterpret_cast<const char*>(&f), 4);
                }
        }
    }

    static Model load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw ConfigError("cannot read checkpoint: " + path);
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kMagic, 8) != 0)
            throw DataError("checkpoint: bad magic in " + path);
        std::uint64_t hlen = 0;
        is.read(reinterpret_cast<char*>(&hlen), 8);
        std::string hs(hlen, '\0');
        is.read(hs.data(), static_cast<std::streamsize>(hlen));
        nlohmann::json header = nlohmann::json::parse(hs);
        Model m;
        m.cfg_ = ModelConfig::from_json(header.at("config"));
        m.eos_id_ = header.at("eos_id");
        m.sep_id_ = header.value("sep_id", -1);
        for (const auto& entry : header.at("tensors")) {
            const Eigen::Index rows = entry.at("rows"), cols = entry.at("cols");
            Mat w(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index j = 0; j < cols; ++j) {
                    float f;
                    is.read(reinterpret_cast<char*>(&f), 4);
                    w(i, j) = static_cast<double>(f);
                }
            if (!is) throw DataError("checkpoint: truncated tensor data in " + path);
            m.params_.emplace(entry.at("name").get<std::string>(), std::move(w));
        }
        return m;
    }

    /// Parameter-space mean of several snapshots (checkpoint averaging).
    static Model average(const std::vector<Model>& models) {
        if (models.empty()) throw ConfigError("average: no models");
        Model out = models.front();
        for (auto& [name, w] : out.params_) {
            for (std::size_t i = 1; i < models.size(); ++i) w += models[i].param(name);
            w /= static_cast<double>(models.size());
        }
        return out;
    }

  private:
    static constexpr double kNegInf = -1e30;

    void check_input(const AugmentedInput& aug) const {
        for (int id : aug.token_ids)
            if (id < 0 || id >= cfg_.vocab_size) throw DataError("encode_input: token id out of range");
        for (int p : aug.position_ids)
            if (p < 0 || p >= cfg_.max_source_positions + cfg_.max_constraint_positions)
                throw DataError("encode_input: position id out of range");
        if (cfg_.use_segments)
            for (int s : aug.segment_ids)
                if (s < 0 || s >= cfg_.n_segments) throw DataError("encode_input: segment id out of range");
    }

    int eos_for(const TrainExample& ex) const {
        return ex.input.token_ids.back();  // augmented inputs always end in eos
    }

    ag::Var dropout(ag::Tape& t, ag::Var x, Rng* rng) const {
        if (!rng || cfg_.dropout <= 0.0) return x;
        Mat mask(x->val.rows(), x->val.cols());
        const double keep = 1.0 - cfg_.dropout;
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                mask(i, j) = rng->uniform01() < keep ? 1.0 / keep : 0.0;
        return ag::mul_const(t, x, mask);
    }

    ag::Var attention(ag::Tape& t, ParamVars& pv, const std::string& prefix, ag::Var queries,
                      ag::Var keys_values, const Mat* mask) const {
        const int dh = cfg_.d_model / cfg_.n_heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        ag::Var out = nullptr;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const std::string hs = std::to_string(h);
            ag::Var q = ag::matmul(t, queries, pv.at(prefix + ".q" + hs));
            ag::Var k = ag::matmul(t, keys_values, pv.at(prefix + ".k" + hs));
            ag::Var v = ag::matmul(t, keys_values, pv.at(prefix + ".v" + hs));
            ag::Var scores = ag::scale(t, ag::matmul_nt(t, q, k), inv_sqrt);
            ag::Var a = ag::softmax_rows(t, scores, mask);
            ag::Var head = ag::matmul(t, ag::matmul(t, a, v), pv.at(prefix + ".o" + hs));
            out = out ? ag::add(t, out, head) : head;
        }
        return out;
    }

    ag::Var ffn(ag::Tape& t, ParamVars& pv, const std::string& prefix, ag::Var x) const {
        ag::Var h = ag::relu(
            t, ag::add_row(t, ag::matmul(t, x, pv.at(prefix + ".ff1")), pv.at(prefix + ".ff1_b")));
        return ag::add_row(t, ag::matmul(t, h, pv.at(prefix + ".ff2")), pv.at(prefix + ".ff2_b"));
    }

    ModelConfig cfg_;
    std::map<std::string, Mat> params_;
    int eos_id_ = -1;
    int sep_id_ = -1;
};

// ---- training ----

struct TrainConfig {
    int steps = 300;
    int batch_size = 8;
    double max_lr = 3e-3;
    int warmup_steps = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;   // 0 disables snapshotting
    int average_last = 8;
};

struct TrainTrace {
    std::vector<double> loss;
    std::vector<Model> checkpoints;  // ring of the last average_last snapshots
};

/// Inverse square root decay with linear warmup.
inline double lr_schedule(const TrainConfig& cfg, int step) {
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(std::max(1, cfg.warmup_steps));
    return cfg.max_lr * std::min(s / w, std::sqrt(w / s));
}

/// Minimize label-smoothed cross-entropy with Adam. Single-threaded and
/// bit-deterministic for a fixed seed. Throws TrainingError on NaN loss.
inline TrainTrace train(Model& model, const std::vector<TrainExample>& dataset,
                        const TrainConfig& cfg) {
    if (dataset.empty()) throw ConfigError("train: empty dataset");
    Rng rng(cfg.seed * 0x9e3779b1ull + 7);
    Rng dropout_rng(cfg.seed * 0x7f4a7c15ull + 3);
    std::map<std::string, Mat> m1, m2;
    for (const auto& [name, w] : model.params()) {
        m1.emplace(name, Mat::Zero(w.rows(), w.cols()));
        m2.emplace(name, Mat::Zero(w.rows(), w.cols()));
    }
    TrainTrace trace;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<TrainExample> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(dataset[rng.uniform_below(dataset.size())]);

        ag::Tape tape;
        Model::ParamVars pv = model.leaves(tape);
        Rng* drng = model.config().dropout > 0.0 ? &dropout_rng : nullptr;
        ag::Var loss = model.build_loss(tape, pv, batch, drng);
        const double loss_val = loss->val(0, 0);
        if (!std::isfinite(loss_val))
            throw TrainingError("train: non-finite loss at step " + std::to_string(step));
        trace.loss.push_back(loss_val);
        loss->grad(0, 0) = 1.0;
        tape.backward();

        double sq_norm = 0.0;
        for (const auto& [name, var] : pv) sq_norm += var->grad.squaredNorm();
        const double norm = std::sqrt(sq_norm);
        const double clip = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

        const double lr = lr_schedule(cfg, step);
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
        for (auto& [name, w] : model.params()) {
            const Mat g = pv.at(name)->grad * clip;
            Mat& v1 = m1.at(name);
            Mat& v2 = m2.at(name);
            v1 = cfg.adam_beta1 * v1 + (1.0 - cfg.adam_beta1) * g;
            v2 = cfg.adam_beta2 * v2 + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
            w.array() -= lr * (v1.array() / bc1) /
                         ((v2.array() / bc2).sqrt() + cfg.adam_eps);
        }

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            trace.checkpoints.push_back(model);
            if (static_cast<int>(trace.checkpoints.size()) > cfg.average_last)
                trace.checkpoints.erase(trace.checkpoints.begin());
        }
    }
    return trace;
}

/// Mean per-token label-smoothed NLL over a dataset (no updates).
inline double eval_loss(const Model& model, const std::vector<TrainExample>& dataset) {
    ag::Tape tape;
    Model::ParamVars pv = model.leaves(tape);
    ag::Var loss = model.build_loss(tape, pv, dataset);
    return loss->val(0, 0);
}

/// Analytic-vs-central-finite-difference check. Returns per-parameter-group
/// relative errors: max |analytic - numeric| over (max |analytic| + max
/// |numeric| + tiny), evaluated on every entry of every tensor.
inline std::map<std::string, double> grad_check(Model& model, const std::vector<TrainExample>& batch,
                                                double h = 1e-4) {
    std::map<std::string, Mat> analytic;
    {
        ag::Tape tape;
        Model::ParamVars pv = model.leaves(tape);
        ag::Var loss = model.build_loss(tape, pv, batch);
        loss->grad(0, 0) = 1.0;
        tape.backward();
        for (const auto& [name, var] : pv) analytic.emplace(name, var->grad);
    }
    auto loss_at = [&]() {
        ag::Tape tape;
        Model::ParamVars pv = model.leaves(tape);
        return model.build_loss(tape, pv, batch)->val(0, 0);
    };
    std::map<std::string, double> errors;
    for (auto& [name, w] : model.params()) {
        double max_diff = 0.0, max_num = 0.0;
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                const double orig = w(i, j);
                w(i, j) = orig + h;
                const double lp = loss_at();
                w(i, j) = orig - h;
                const double lm = loss_at();
                w(i, j) = orig;
                const double num = (lp - lm) / (2.0 * h);
                max_diff = std::max(max_diff, std::abs(num - analytic.at(name)(i, j)));
                max_num = std::max(max_num, std::abs(num));
            }
        const double max_ana = analytic.at(name).cwiseAbs().maxCoeff();
        errors[name] = max_diff / (max_ana + max_num + 1e-12);
    }
    return errors;
}

inline double grad_check_max(Model& model, const std::vector<TrainExample>& batch, double h = 1e-4) {
    double worst = 0.0;
    for (const auto& [name, err] : grad_check(model, batch, h)) worst = std::max(worst, err);
    return worst;
}

}  // namespace lcd
