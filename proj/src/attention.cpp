#include "roleattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "roleattn/errors.hpp"

namespace roleattn {

Var Dropout::apply(Var x) const {
    if (!active()) return x;
    const double keep = 1.0 - rate_;
    Tensor m(x.value().shape());
    for (double& v : m.data()) v = rng_->uniform() < rate_ ? 0.0 : 1.0 / keep;
    return ops::mul_constant(x, m);
}

void HeadConfig::validate() const {
    if (heads == 0) throw ConfigError("head count must be positive");
    if (d_model == 0 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (roles.size() > heads) {
        throw ConfigError(std::to_string(roles.size()) + " guided heads exceed " +
                          std::to_string(heads) + " total heads");
    }
    for (std::size_t i = 0; i < roles.size(); ++i) {
        if (roles[i] == Role::Padding) continue;
        if (std::find(roles.begin() + static_cast<std::ptrdiff_t>(i) + 1, roles.end(), roles[i]) !=
            roles.end()) {
            throw ConfigError("role '" + std::string(role_name(roles[i])) +
                              "' assigned to more than one head");
        }
    }
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
        k.rows() != v.rows() || q.rows() != k.rows()) {
        throw ShapeError("attention: incompatible Q " + shape_string(q.shape()) + ", K " +
                         shape_string(k.shape()) + ", V " + shape_string(v.shape()));
    }
}

AttentionOutput attend(Var scores, Var v, double inv_sqrt_dk, const Dropout& dropout) {
    Var weights = ops::softmax_rows(ops::scale(scores, inv_sqrt_dk));
    Tensor snapshot = weights.value();
    Var out = ops::matmul(dropout.apply(weights), v);
    return AttentionOutput{out, std::move(snapshot)};
}

}  // namespace

AttentionOutput scaled_dot_attention(Var q, Var k, Var v, const Dropout& dropout) {
    check_qkv(q.value(), k.value(), v.value());
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    return attend(ops::matmul_nt(q, k), v, inv, dropout);
}

AttentionOutput masked_attention(Var q, Var k, Var v, const Tensor& mask, const Dropout& dropout) {
    check_qkv(q.value(), k.value(), v.value());
    const std::size_t n = q.value().rows();
    if (mask.rank() != 2 || mask.rows() != n || mask.cols() != n) {
        throw ShapeError("masked_attention: mask " + shape_string(mask.shape()) +
                         " does not match sequence length " + std::to_string(n));
    }
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    return attend(ops::add_constant(ops::matmul_nt(q, k), mask), v, inv, dropout);
}

MultiHeadOutput multi_head(Var x, const HeadWeights& w, const HeadConfig& cfg,
                           const MaskSet& masks, const Dropout& dropout) {
    cfg.validate();
    const std::size_t dk = cfg.d_k();
    Var q = ops::matmul(x, w.wq);
    Var k = ops::matmul(x, w.wk);
    Var v = ops::matmul(x, w.wv);

    MultiHeadOutput out;
    out.weights.reserve(cfg.heads);
    out.heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Tensor& mask = h < cfg.guided() ? masks.for_role(cfg.roles[h]) : masks.padding;
        AttentionOutput a = masked_attention(ops::columns(q, h * dk, dk), ops::columns(k, h * dk, dk),
                                             ops::columns(v, h * dk, dk), mask, dropout);
        out.heads.push_back(a.output);
        out.weights.push_back(std::move(a.weights));
    }
    out.output = ops::matmul(ops::concat_columns(out.heads), w.wo);
    return out;
}

}  // namespace roleattn
