#include "roleattn/autograd.hpp"

#include <cmath>
#include <limits>

#include "roleattn/errors.hpp"

namespace roleattn {

Parameter& ParameterSet::add(std::string name, Tensor value) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    Tensor grad(value.shape());
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
    return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

Parameter& ParameterSet::get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + name);
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Var Tape::constant(Tensor value) {
    return record(std::move(value), nullptr, "constant", true);
}

Var Tape::parameter(Parameter& p) {
    Var v = record(p.value, nullptr, "parameter");
    nodes_[v.id].param = &p;
    return v;
}

Var Tape::record(Tensor value, BackwardFn backward, const char* op, bool allow_neg_inf) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward), nullptr, op, allow_neg_inf});
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
        n.grad = Tensor(n.value.shape());
    }
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.shape() == n.value.shape() && n.grad.size() == n.value.size()) return n.grad;
    return Tensor(n.value.shape());
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_string(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_ref(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0 && n.value.size() != 0) continue;
        if (n.backward) n.backward(*this, n.value, n.grad);
        if (n.param) {
            auto dst = n.param->grad.data();
            auto src = n.grad.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

std::optional<std::string> Tape::first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        for (double v : n.value.data()) {
            if (std::isnan(v) || (std::isinf(v) && !(n.allow_neg_inf && v < 0))) {
                std::string what = "node " + std::to_string(i) + " (" + n.op;
                if (n.param) what += " '" + n.param->name + "'";
                what += ") shape " + shape_string(n.value.shape());
                return what;
            }
        }
    }
    return std::nullopt;
}

namespace ops {

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("operands on different tapes");
    return *a.tape;
}

void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    Tensor out = roleattn::matmul(a.value(), b.value());
    return t.record(std::move(out), [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        accumulate(tp.grad_ref(a.id), roleattn::matmul_nt(g, tp.value(b)));
        accumulate(tp.grad_ref(b.id), roleattn::matmul_tn(tp.value(a), g));
    }, "matmul");
}

Var matmul_nt(Var a, Var b) {
    Tape& t = same_tape(a, b);
    Tensor out = roleattn::matmul_nt(a.value(), b.value());
    return t.record(std::move(out), [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        accumulate(tp.grad_ref(a.id), roleattn::matmul(g, tp.value(b)));
        accumulate(tp.grad_ref(b.id), roleattn::matmul_tn(g, tp.value(a)));
    }, "matmul_nt");
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    if (!a.value().same_shape(b.value())) {
        throw ShapeError("add: shapes differ " + shape_string(a.value().shape()) + " vs " +
                         shape_string(b.value().shape()));
    }
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += bv[k];
    return t.record(std::move(out), [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        accumulate(tp.grad_ref(a.id), g);
        accumulate(tp.grad_ref(b.id), g);
    }, "add");
}

Var add_row_bias(Var x, Var bias) {
    Tape& t = same_tape(x, bias);
    const Tensor& xv = x.value();
    if (bias.value().size() != xv.cols()) {
        throw ShapeError("add_row_bias: bias length " + std::to_string(bias.value().size()) +
                         " does not match " + std::to_string(xv.cols()) + " columns");
    }
    Tensor out = xv;
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
    }
    return t.record(std::move(out), [x, bias](Tape& tp, const Tensor&, const Tensor& g) {
        accumulate(tp.grad_ref(x.id), g);
        Tensor& gb = tp.grad_ref(bias.id);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            auto r = g.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
        }
    }, "add_row_bias");
}

Var add_constant(Var x, const Tensor& c) {
    if (!x.value().same_shape(c)) {
        throw ShapeError("add_constant: shapes differ " + shape_string(x.value().shape()) +
                         " vs " + shape_string(c.shape()));
    }
    Tensor out = x.value();
    bool has_neg_inf = false;
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] += c[k];
        has_neg_inf |= std::isinf(c[k]) && c[k] < 0;
    }
    return x.tape->record(std::move(out), [x](Tape& tp, const Tensor&, const Tensor& g) {
        accumulate(tp.grad_ref(x.id), g);
    }, "add_constant", has_neg_inf);
}

Var mul_constant(Var x, const Tensor& c) {
    if (!x.value().same_shape(c)) {
        throw ShapeError("mul_constant: shapes differ " + shape_string(x.value().shape()) +
                         " vs " + shape_string(c.shape()));
    }
    Tensor out = x.value();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] *= c[k];
    return x.tape->record(std::move(out), [x, c](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[k] * c[k];
    }, "mul_constant");
}

Var scale(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.data()) v *= s;
    const bool neg_inf = !x.value().all_finite();
    return x.tape->record(std::move(out), [x, s](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[k] * s;
    }, "scale", neg_inf);
}

Var relu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return x.tape->record(std::move(out), [x](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_ref(x.id);
        for (std::size_t k = 0; k < gx.size(); ++k)
            if (xv[k] > 0.0) gx[k] += g[k];
    }, "relu");
}

Var softmax_rows(Var x) {
    Tensor out = roleattn::softmax_rows(x.value());
    return x.tape->record(std::move(out), [x](Tape& tp, const Tensor& y, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        const std::size_t c = y.cols();
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
    }, "softmax_rows");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = same_tape(x, gain);
    Tensor out = roleattn::layer_norm(x.value(), gain.value(), bias.value(), eps);
    return t.record(std::move(out), [x, gain, bias, eps](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& gv = tp.value(gain);
        Tensor& gx = tp.grad_ref(x.id);
        Tensor& gg = tp.grad_ref(gain.id);
        Tensor& gb = tp.grad_ref(bias.id);
        const std::size_t d = xv.cols();
        const double dd = static_cast<double>(d);
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            auto in = xv.row(i);
            double mean = 0.0;
            for (double v : in) mean += v;
            mean /= dd;
            double var = 0.0;
            for (double v : in) var += (v - mean) * (v - mean);
            var /= dd;
            const double inv = 1.0 / std::sqrt(var + eps);
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                xhat[j] = (in[j] - mean) * inv;
                const double gij = g[i * d + j];
                gg[j] += gij * xhat[j];
                gb[j] += gij;
                dxhat[j] = gij * gv[j];
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xhat[j];
            }
            for (std::size_t j = 0; j < d; ++j) {
                gx[i * d + j] += inv / dd * (dd * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
            }
        }
    }, "layer_norm");
}

Var columns(Var x, std::size_t first, std::size_t count) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || first + count > xv.cols()) {
        throw ShapeError("columns: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " + shape_string(xv.shape()));
    }
    Tensor out = Tensor::matrix(xv.rows(), count);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, first + j);
    return x.tape->record(std::move(out), [x, first, count](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) gx.at(i, first + j) += g.at(i, j);
    }, "columns");
}

Var concat_columns(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_columns: no parts");
    const std::size_t rows = parts.front().value().rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().rows() != rows) throw ShapeError("concat_columns: row counts differ");
        total += p.value().cols();
    }
    Tensor out = Tensor::matrix(rows, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, off + j) = pv.at(i, j);
        off += pv.cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts.front().tape->record(std::move(out), [ps](Tape& tp, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (const Var& p : ps) {
            Tensor& gp = tp.grad_ref(p.id);
            const std::size_t c = gp.cols();
            for (std::size_t i = 0; i < gp.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j) gp.at(i, j) += g.at(i, off + j);
            off += c;
        }
    }, "concat_columns");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t cols = parts.front().value().cols();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().cols() != cols) throw ShapeError("concat_rows: column counts differ");
        total += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(total * cols);
    for (const Var& p : parts) {
        auto d = p.value().data();
        data.insert(data.end(), d.begin(), d.end());
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts.front().tape->record(Tensor({total, cols}, std::move(data)),
                                      [ps](Tape& tp, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (const Var& p : ps) {
            Tensor& gp = tp.grad_ref(p.id);
            for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += g[off + k];
            off += gp.size();
        }
    }, "concat_rows");
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
    const Tensor& tv = table.value();
    const std::size_t d = tv.cols();
    Tensor out = Tensor::matrix(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= tv.rows()) {
            throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                             std::to_string(tv.rows()));
        }
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tv.at(ids[i], j);
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return table.tape->record(std::move(out), [table, idv](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gt = tp.grad_ref(table.id);
        const std::size_t d = gt.cols();
        for (std::size_t i = 0; i < idv.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt.at(idv[i], j) += g.at(i, j);
    }, "gather_rows");
}

Var mean_rows(Var x, std::size_t count) {
    const Tensor& xv = x.value();
    if (count == 0 || count > xv.rows()) {
        throw ShapeError("mean_rows: count " + std::to_string(count) + " outside [1, " +
                         std::to_string(xv.rows()) + "]");
    }
    const std::size_t d = xv.cols();
    Tensor out = Tensor::matrix(1, d);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += xv.at(i, j);
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out.data()) v *= inv;
    return x.tape->record(std::move(out), [x, count, inv](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        const std::size_t d = gx.cols();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g[j] * inv;
    }, "mean_rows");
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape->record(Tensor({1, 1}, std::vector<double>{s}), [x](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_ref(x.id);
        for (double& v : gx.data()) v += g[0];
    }, "sum");
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 2 || labels.size() != lv.rows()) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(lv.shape()));
    }
    const std::size_t c = lv.cols();
    Tensor probs = Tensor::matrix(lv.rows(), c);
    double loss = 0.0;
    for (std::size_t i = 0; i < lv.rows(); ++i) {
        if (labels[i] >= c) throw ShapeError("softmax_cross_entropy: label out of range");
        auto row = lv.row(i);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double log_z = mx + std::log(z);
        loss += log_z - row[labels[i]];
        for (std::size_t j = 0; j < c; ++j) probs.at(i, j) = std::exp(row[j] - log_z);
    }
    const double inv = 1.0 / static_cast<double>(lv.rows());
    loss *= inv;
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return logits.tape->record(Tensor({1, 1}, std::vector<double>{loss}),
                               [logits, lab, probs = std::move(probs), inv](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gl = tp.grad_ref(logits.id);
        const std::size_t c = probs.cols();
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double target = j == lab[i] ? 1.0 : 0.0;
                gl.at(i, j) += g[0] * inv * (probs.at(i, j) - target);
            }
        }
    }, "softmax_cross_entropy");
}

}  // namespace ops

}  // namespace roleattn
