#include "roleattn/model.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>

#include "roleattn/errors.hpp"
#include "roleattn/random.hpp"

namespace roleattn {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& value) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size() || value.empty()) {
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return v;
}

double to_double(const std::string& key, const std::string& value) {
    double v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size() || value.empty()) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
    }
    return v;
}

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
    return t;
}

Tensor uniform(Rng& rng, std::size_t rows, std::size_t cols, double limit) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
    return t;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
    auto row = t.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

// Per-row cross-entropy, for metrics only.
double row_loss(const Tensor& logits, std::size_t r, std::size_t label) {
    auto row = logits.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    return mx + std::log(z) - row[label];
}

Metrics run_examples(Model& model, std::span<const Example> examples, std::size_t num_classes) {
    Metrics m;
    m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    const std::size_t bs = std::max<std::size_t>(1, model.config().batch_size);
    for (const Batch& batch : batch_examples(examples, bs)) {
        Tape tape;
        const auto bound = model.bind(tape);
        const Tensor& logits = model.logits(bound, batch, Dropout{}).value();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::size_t gold = batch.examples[i].label;
            const std::size_t pred = argmax_row(logits, i);
            m.loss += row_loss(logits, i, gold);
            m.correct += pred == gold;
            ++m.confusion[gold][pred];
            m.predictions.push_back(pred);
        }
        m.total += batch.size();
    }
    if (m.total > 0) {
        m.accuracy = 100.0 * static_cast<double>(m.correct) / static_cast<double>(m.total);
        m.loss /= static_cast<double>(m.total);
    }
    return m;
}

}  // namespace

void ModelConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(learning_rate >= 0.0 && learning_rate < 1.0)) {
        throw ConfigError("learning_rate must lie in [0, 1)");
    }
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (d_ff == 0) throw ConfigError("d_ff must be positive");
    if (heads() == 0) throw ConfigError("model needs at least one attention head");
    head_config().validate();
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "layers = " << layers << '\n'
       << "guided_roles = " << join_roles(guided_roles) << '\n'
       << "extra_regular_heads = " << extra_regular_heads << '\n'
       << "d_model = " << d_model << '\n'
       << "d_ff = " << d_ff << '\n'
       << "dropout = " << format_double(dropout) << '\n'
       << "learning_rate = " << format_double(learning_rate) << '\n'
       << "epochs = " << epochs << '\n'
       << "seed = " << seed << '\n'
       << "max_len = " << max_len << '\n'
       << "num_classes = " << num_classes << '\n'
       << "batch_size = " << batch_size << '\n';
    return os.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
    if (key == "layers") layers = to_size(key, value);
    else if (key == "guided_roles") guided_roles = parse_roles(value);
    else if (key == "extra_regular_heads") extra_regular_heads = to_size(key, value);
    else if (key == "d_model") d_model = to_size(key, value);
    else if (key == "d_ff") d_ff = to_size(key, value);
    else if (key == "dropout") dropout = to_double(key, value);
    else if (key == "learning_rate") learning_rate = to_double(key, value);
    else if (key == "epochs") epochs = to_size(key, value);
    else if (key == "seed") seed = to_size(key, value);
    else if (key == "max_len") max_len = to_size(key, value);
    else if (key == "num_classes") num_classes = to_size(key, value);
    else if (key == "batch_size") batch_size = to_size(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

ModelConfig ModelConfig::parse(std::istream& in) {
    ModelConfig cfg;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        cfg.set(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return cfg;
}

ModelConfig ModelConfig::parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
}

Tensor positional_encoding(std::size_t n, std::size_t d_model) {
    Tensor pe = Tensor::matrix(n, d_model);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < d_model; ++c) {
            const double exponent = static_cast<double>(c - c % 2) / static_cast<double>(d_model);
            const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
            pe.at(p, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Model::Model(ModelConfig cfg, std::size_t vocab_size) : cfg_(std::move(cfg)), vocab_size_(vocab_size) {
    cfg_.validate();
    if (cfg_.num_classes == 0) throw ConfigError("num_classes must be resolved before building a model");
    Rng rng(derive_seed(cfg_.seed, 0));
    const std::size_t d = cfg_.d_model, h = cfg_.heads(), dk = cfg_.head_config().d_k();
    params_.add("embedding", uniform(rng, vocab_size, d, 1.0));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        params_.add(p + "attn.wq", xavier(rng, d, h * dk));
        params_.add(p + "attn.wk", xavier(rng, d, h * dk));
        params_.add(p + "attn.wv", xavier(rng, d, h * dk));
        params_.add(p + "attn.wo", xavier(rng, h * dk, d));
        params_.add(p + "attn.bo", Tensor::matrix(1, d));
        params_.add(p + "ln1.gain", Tensor::matrix(1, d, 1.0));
        params_.add(p + "ln1.bias", Tensor::matrix(1, d));
        params_.add(p + "ff1.w", xavier(rng, d, cfg_.d_ff));
        params_.add(p + "ff1.b", Tensor::matrix(1, cfg_.d_ff));
        params_.add(p + "ff2.w", xavier(rng, cfg_.d_ff, d));
        params_.add(p + "ff2.b", Tensor::matrix(1, d));
        params_.add(p + "ln2.gain", Tensor::matrix(1, d, 1.0));
        params_.add(p + "ln2.bias", Tensor::matrix(1, d));
    }
    params_.add("classifier.w", xavier(rng, d, cfg_.num_classes));
    params_.add("classifier.b", Tensor::matrix(1, cfg_.num_classes));
}

Model::Bound Model::bind(Tape& tape) {
    Bound b;
    b.embedding = tape.parameter(params_.get("embedding"));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto get = [&](const char* name) { return tape.parameter(params_.get(p + name)); };
        LayerVars lv;
        lv.attn = HeadWeights{get("attn.wq"), get("attn.wk"), get("attn.wv"), get("attn.wo")};
        lv.attn_bias = get("attn.bo");
        lv.ln1_gain = get("ln1.gain");
        lv.ln1_bias = get("ln1.bias");
        lv.ff1_w = get("ff1.w");
        lv.ff1_b = get("ff1.b");
        lv.ff2_w = get("ff2.w");
        lv.ff2_b = get("ff2.b");
        lv.ln2_gain = get("ln2.gain");
        lv.ln2_bias = get("ln2.bias");
        b.layers.push_back(lv);
    }
    b.cls_w = tape.parameter(params_.get("classifier.w"));
    b.cls_b = tape.parameter(params_.get("classifier.b"));
    return b;
}

Var Model::embed(const Bound& b, std::span<const std::size_t> ids) const {
    Var tokens = ops::gather_rows(b.embedding, ids);
    return ops::add_constant(tokens, positional_encoding(ids.size(), cfg_.d_model));
}

Var Model::encode(const Bound& b, Var x, const MaskSet& masks, const Dropout& dropout,
                  AttentionTrace* trace) const {
    const HeadConfig hc = cfg_.head_config();
    for (const LayerVars& lv : b.layers) {
        MultiHeadOutput mh = multi_head(x, lv.attn, hc, masks, dropout);
        if (trace) trace->push_back(std::move(mh.weights));
        Var attn = ops::add_row_bias(mh.output, lv.attn_bias);
        Var h = ops::layer_norm(ops::add(x, attn), lv.ln1_gain, lv.ln1_bias, kLayerNormEps);
        Var f = dropout.apply(ops::relu(ops::add_row_bias(ops::matmul(h, lv.ff1_w), lv.ff1_b)));
        f = ops::add_row_bias(ops::matmul(f, lv.ff2_w), lv.ff2_b);
        x = ops::layer_norm(ops::add(h, f), lv.ln2_gain, lv.ln2_bias, kLayerNormEps);
    }
    return x;
}

Var Model::classify(const Bound& b, Var encoded, std::size_t length) const {
    Var pooled = ops::mean_rows(encoded, length);
    return ops::add_row_bias(ops::matmul(pooled, b.cls_w), b.cls_b);
}

Var Model::logits(const Bound& b, const Batch& batch, const Dropout& dropout,
                  std::vector<AttentionTrace>* traces) const {
    std::vector<Var> rows;
    rows.reserve(batch.size());
    for (const Example& e : batch.examples) {
        AttentionTrace* trace = nullptr;
        if (traces) trace = &traces->emplace_back();
        Var enc = encode(b, embed(b, e.ids), e.masks, dropout, trace);
        rows.push_back(classify(b, enc, e.length));
    }
    return ops::concat_rows(rows);
}

void Adam::step(ParameterSet& params) {
    if (m_.empty()) {
        for (const Parameter& p : params) {
            m_.emplace_back(p.value.shape());
            v_.emplace_back(p.value.shape());
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t idx = 0;
    for (Parameter& p : params) {
        Tensor& m = m_[idx];
        Tensor& v = v_[idx];
        ++idx;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p.value[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

Checkpoint train(const ModelConfig& cfg_in, std::span<const Sentence> train_set,
                 std::span<const Sentence> dev_set, const TrainOptions& opts) {
    cfg_in.validate();
    if (train_set.empty()) throw ConfigError("training split is empty");
    if (dev_set.empty()) throw ConfigError("dev split is empty");

    Checkpoint ckpt;
    ckpt.vocab = Vocabulary::build(train_set);
    ckpt.labels = LabelIndex::from_sentences(train_set);
    if (ckpt.labels.size() == 0) throw ConfigError("training split carries no labels");
    ckpt.config = cfg_in;
    if (ckpt.config.num_classes == 0) ckpt.config.num_classes = ckpt.labels.size();
    if (ckpt.config.num_classes < ckpt.labels.size()) {
        throw ConfigError("num_classes " + std::to_string(ckpt.config.num_classes) + " is below the " +
                          std::to_string(ckpt.labels.size()) + " labels in the training split");
    }
    const ModelConfig& cfg = ckpt.config;

    std::vector<Example> train_ex, dev_ex;
    try {
        train_ex = prepare_examples(train_set, ckpt.vocab, cfg.guided_roles, cfg.max_len, &ckpt.labels);
        dev_ex = prepare_examples(dev_set, ckpt.vocab, cfg.guided_roles, cfg.max_len, &ckpt.labels);
    } catch (const std::out_of_range& e) {
        throw ConfigError(e.what());
    }

    Model model(cfg, ckpt.vocab.size());
    Adam adam(cfg.learning_rate);
    Rng dropout_rng(derive_seed(cfg.seed, 1));
    const Dropout dropout(cfg.dropout, &dropout_rng);

    double best_acc = -1.0;
    ParameterSet best;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_no = 0;
        for (const Batch& batch : batch_examples(train_ex, cfg.batch_size, derive_seed(cfg.seed, 100 + epoch))) {
            ++batch_no;
            Tape tape;
            const auto bound = model.bind(tape);
            Var logits = model.logits(bound, batch, dropout);
            const auto labels = batch.labels();
            Var loss = ops::softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss.value()[0])) {
                throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no) + "; first non-finite tensor: " +
                                     tape.first_non_finite().value_or("none on tape"));
            }
            model.params().zero_grad();
            tape.backward(loss);
            adam.step(model.params());
            loss_sum += loss.value()[0] * static_cast<double>(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                correct += argmax_row(logits.value(), i) == labels[i];
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(train_ex.size());
        em.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(train_ex.size());
        const Metrics dev = run_examples(model, dev_ex, cfg.num_classes);
        em.dev_loss = dev.loss;
        em.dev_acc = dev.accuracy;
        ckpt.history.push_back(em);
        if (opts.on_epoch) opts.on_epoch(em);
        if (em.dev_acc > best_acc) {
            best_acc = em.dev_acc;
            best = model.params();
            ckpt.best_epoch = epoch;
        }
    }
    ckpt.params = std::move(best);
    for (Parameter& p : ckpt.params) p.grad.fill(0.0);
    return ckpt;
}

Model restore_model(const Checkpoint& ckpt) {
    Model model(ckpt.config, ckpt.vocab.size());
    for (Parameter& p : model.params()) {
        const Parameter* src = ckpt.params.find(p.name);
        if (!src) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
        if (src->value.shape() != p.value.shape()) {
            throw CheckpointError("parameter '" + p.name + "' has shape " +
                                  shape_string(src->value.shape()) + ", config expects " +
                                  shape_string(p.value.shape()));
        }
        p.value = src->value;
    }
    if (model.params().count() != ckpt.params.count()) {
        throw CheckpointError("checkpoint holds parameters the config does not describe");
    }
    return model;
}

Metrics evaluate(const Checkpoint& ckpt, std::span<const Sentence> data) {
    Model model = restore_model(ckpt);
    std::vector<Example> ex;
    try {
        ex = prepare_examples(data, ckpt.vocab, ckpt.config.guided_roles, ckpt.config.max_len, &ckpt.labels);
    } catch (const std::out_of_range& e) {
        throw ConfigError(e.what());
    }
    return run_examples(model, ex, ckpt.config.num_classes);
}

}  // namespace roleattn
