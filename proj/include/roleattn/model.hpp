#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "roleattn/attention.hpp"
#include "roleattn/autograd.hpp"
#include "roleattn/batching.hpp"
#include "roleattn/corpus.hpp"
#include "roleattn/masks.hpp"

namespace roleattn {

struct ModelConfig {
    std::size_t layers = 2;
    std::vector<Role> guided_roles{kGuidedRoles.begin(), kGuidedRoles.end()};
    std::size_t extra_regular_heads = 1;
    std::size_t d_model = 24;
    std::size_t d_ff = 48;
    double dropout = 0.1;
    double learning_rate = 1e-3;
    std::size_t epochs = 20;
    std::uint64_t seed = 1;
    std::size_t max_len = 64;
    // 0 = infer from the training labels.
    std::size_t num_classes = 0;
    std::size_t batch_size = 16;

    std::size_t heads() const { return guided_roles.size() + extra_regular_heads; }
    HeadConfig head_config() const { return HeadConfig{d_model, heads(), guided_roles}; }

    // Throws ConfigError naming the first violated constraint.
    void validate() const;

    // "key = value" lines, one per field, in declaration order.
    std::string to_text() const;
    // Unknown keys and malformed values throw ConfigError. Missing keys keep
    // their defaults.
    static ModelConfig parse(std::istream& in);
    static ModelConfig parse_text(const std::string& text);
    void set(const std::string& key, const std::string& value);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Sinusoidal position table: row p, column 2i = sin(p / 10000^(2i/d)),
// column 2i+1 = cos of the same angle.
Tensor positional_encoding(std::size_t n, std::size_t d_model);

// Attention weights recorded during one encoder pass: [layer][head].
using AttentionTrace = std::vector<std::vector<Tensor>>;

// Token + position embeddings, a stack of guided encoder layers, masked
// mean pooling and an affine classifier.
class Model {
public:
    struct LayerVars {
        HeadWeights attn;
        Var attn_bias, ln1_gain, ln1_bias, ff1_w, ff1_b, ff2_w, ff2_b, ln2_gain, ln2_bias;
    };
    struct Bound {
        Var embedding;
        std::vector<LayerVars> layers;
        Var cls_w, cls_b;
    };

    // Parameters are initialized from cfg.seed; the draw order does not
    // depend on the role assignment.
    Model(ModelConfig cfg, std::size_t vocab_size);

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    std::size_t vocab_size() const { return vocab_size_; }

    Bound bind(Tape& tape);

    // n x d_model for one example. Throws ShapeError for ids >= vocab size.
    Var embed(const Bound& b, std::span<const std::size_t> ids) const;
    Var encode(const Bound& b, Var x, const MaskSet& masks, const Dropout& dropout,
               AttentionTrace* trace = nullptr) const;
    // Mean over the first `length` rows, then the affine map: 1 x classes.
    Var classify(const Bound& b, Var encoded, std::size_t length) const;
    // batch x classes.
    Var logits(const Bound& b, const Batch& batch, const Dropout& dropout,
               std::vector<AttentionTrace>* traces = nullptr) const;

private:
    ModelConfig cfg_;
    std::size_t vocab_size_;
    ParameterSet params_;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParameterSet& params);

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double dev_loss = 0.0;
    double dev_acc = 0.0;

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct Checkpoint {
    ModelConfig config;
    Vocabulary vocab;
    LabelIndex labels;
    ParameterSet params;
    std::size_t best_epoch = 0;
    std::vector<EpochMetrics> history;
};

struct Metrics {
    double accuracy = 0.0;  // percent
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
    std::vector<std::size_t> predictions;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct TrainOptions {
    std::function<void(const EpochMetrics&)> on_epoch;
};

// Builds the vocabulary and label set from `train`, then runs Adam on the
// mean cross-entropy for cfg.epochs epochs, keeping the parameters of the
// epoch with the best dev accuracy (earliest on ties). Throws
// NonFiniteError on a non-finite loss, naming the first non-finite tensor.
Checkpoint train(const ModelConfig& cfg, std::span<const Sentence> train,
                 std::span<const Sentence> dev, const TrainOptions& opts = {});

Metrics evaluate(const Checkpoint& ckpt, std::span<const Sentence> data);

// Builds a Model holding the checkpoint's parameters.
Model restore_model(const Checkpoint& ckpt);

}  // namespace roleattn
