#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "lcd/errors.hpp"
#include "lcd/model.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

/// Next-token log-probabilities given the generated prefix, for one prepared
/// input sentence. Implementations must be deterministic.
class StepScorer {
  public:
    virtual ~StepScorer() = default;
    virtual int vocab_size() const = 0;
    virtual Eigen::VectorXd log_probs(const TokenSeq& prefix) const = 0;
};

/// Model-backed scorer; encodes the augmented input once and reuses the
/// memory across decode steps.
class ModelScorer : public StepScorer {
  public:
    ModelScorer(const Model& model, const AugmentedInput& input)
        : model_(&model), memory_(model.encode_input(input)) {}

    int vocab_size() const override { return model_->config().vocab_size; }

    Eigen::VectorXd log_probs(const TokenSeq& prefix) const override {
        return model_->forward_step(memory_, prefix);
    }

  private:
    const Model* model_;
    EncoderMemory memory_;
};

enum class EnsembleSpace { prob, logprob };

/// Score averaging across seed models: mean of per-step probabilities
/// (default) or log-probabilities, renormalized, returned as log-probs.
class EnsembleScorer : public StepScorer {
  public:
    EnsembleScorer(std::vector<const StepScorer*> members, EnsembleSpace space = EnsembleSpace::prob)
        : members_(std::move(members)), space_(space) {
        if (members_.empty()) throw ConfigError("ensemble: no member scorers");
        for (const auto* m : members_)
            if (m->vocab_size() != members_.front()->vocab_size())
                throw ConfigError("ensemble: member vocabularies differ");
    }

    int vocab_size() const override { return members_.front()->vocab_size(); }

    Eigen::VectorXd log_probs(const TokenSeq& prefix) const override {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(vocab_size());
        for (const auto* m : members_) {
            const Eigen::VectorXd lp = m->log_probs(prefix);
            if (space_ == EnsembleSpace::prob)
                acc += lp.array().exp().matrix();
            else
                acc += lp;
        }
        acc /= static_cast<double>(members_.size());
        if (space_ == EnsembleSpace::prob) {
            acc = acc.array().max(1e-300).log().matrix();
        }
        // renormalize in probability space
        const Eigen::ArrayXd shifted = acc.array() - acc.maxCoeff();
        const double logz = std::log(shifted.exp().sum()) + acc.maxCoeff();
        return (acc.array() - logz).matrix();
    }

  private:
    std::vector<const StepScorer*> members_;
    EnsembleSpace space_;
};

/// Ensemble distribution for a set of models sharing one vocabulary.
inline Eigen::VectorXd ensemble_scores(const std::vector<const Model*>& models,
                                       const std::vector<const EncoderMemory*>& memories,
                                       const TokenSeq& prefix,
                                       EnsembleSpace space = EnsembleSpace::prob) {
    if (models.empty() || models.size() != memories.size())
        throw ConfigError("ensemble_scores: aligned model/memory lists required");
    for (const auto* m : models)
        if (m->config().vocab_size != models.front()->config().vocab_size)
            throw ConfigError("ensemble_scores: mismatched vocabularies");
    struct MemScorer : StepScorer {
        const Model* model;
        const EncoderMemory* mem;
        int vocab_size() const override { return model->config().vocab_size; }
        Eigen::VectorXd log_probs(const TokenSeq& p) const override {
            return model->forward_step(*mem, p);
        }
    };
    std::vector<MemScorer> holders(models.size());
    std::vector<const StepScorer*> ptrs;
    for (std::size_t i = 0; i < models.size(); ++i) {
        holders[i].model = models[i];
        holders[i].mem = memories[i];
        ptrs.push_back(&holders[i]);
    }
    return EnsembleScorer(ptrs, space).log_probs(prefix);
}

}  // namespace lcd
