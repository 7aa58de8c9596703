#pragma once

#include <cstddef>
#include <vector>

#include "roleattn/autograd.hpp"
#include "roleattn/masks.hpp"
#include "roleattn/random.hpp"

namespace roleattn {

// Inverted dropout. Inactive (identity, no RNG draws) when rate is 0 or the
// generator is null.
class Dropout {
public:
    Dropout() = default;
    Dropout(double rate, Rng* rng) : rate_(rate), rng_(rng) {}

    bool active() const { return rng_ != nullptr && rate_ > 0.0; }
    Var apply(Var x) const;

private:
    double rate_ = 0.0;
    Rng* rng_ = nullptr;
};

struct HeadConfig {
    std::size_t d_model = 0;
    std::size_t heads = 1;
    // Roles of the first N heads, in head order. Heads N..H-1 are regular.
    std::vector<Role> roles;

    std::size_t guided() const { return roles.size(); }
    std::size_t d_k() const { return d_model / heads; }
    // Throws ConfigError on d_model % heads != 0, N > H or a repeated
    // guided role.
    void validate() const;
};

// Column block h of wq/wk/wv (d_model x d_k each) is the projection of
// head h; wo maps the concatenated head outputs (H*d_k) back to d_model.
struct HeadWeights {
    Var wq, wk, wv, wo;
};

struct AttentionOutput {
    Var output;
    Tensor weights;
};

// softmax(Q K^T / sqrt(d_k)) V.
AttentionOutput scaled_dot_attention(Var q, Var k, Var v, const Dropout& dropout = {});

// softmax((Q K^T + M) / sqrt(d_k)) V. M must be row-feasible; otherwise
// DegenerateRowError propagates from the softmax.
AttentionOutput masked_attention(Var q, Var k, Var v, const Tensor& mask,
                                 const Dropout& dropout = {});

struct MultiHeadOutput {
    Var output;
    std::vector<Tensor> weights;  // one n x n matrix per head
    std::vector<Var> heads;       // per-head outputs before the W_O projection
};

// Concat(mh_1..mh_N, h_{N+1}..h_H) W_O. Guided head h uses
// masks.for_role(cfg.roles[h]); regular heads use the padding mask.
MultiHeadOutput multi_head(Var x, const HeadWeights& w, const HeadConfig& cfg,
                           const MaskSet& masks, const Dropout& dropout = {});

}  // namespace roleattn
