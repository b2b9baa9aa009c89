#include "sohnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "sohnet/error.hpp"
#include "sohnet/kernels.hpp"

namespace sohnet::ad {

const Tensor& Var::value() const { return tape->value(*this); }
const Shape& Var::shape() const { return tape->value(*this).shape(); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, recording()});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    if (finite_check_ && !value.all_finite())
        fail(ErrorKind::Numeric, "non-finite value produced at tape node " +
                                     std::to_string(nodes_.size()));
    bool needs_grad = false;
    if (recording())
        for (const Var& p : parents) needs_grad = needs_grad || nodes_[p.id].requires_grad;
    Node node{std::move(value), {}, {}, {}, needs_grad};
    if (needs_grad) {
        node.parents = std::move(parents);
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor* Tape::grad_sink(Var parent) {
    Node& node = nodes_[parent.id];
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
    return &node.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    return node.grad.empty() ? Tensor(node.value.shape()) : node.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) fail(ErrorKind::Input, "backward: variable belongs to another tape");
    if (value(loss).size() != 1)
        fail(ErrorKind::Shape, "backward: loss must hold one element, got shape " +
                                   to_string(value(loss).shape()));
    for (Node& node : nodes_) node.grad = Tensor();
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::int64_t id = loss.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
        node.backward(*this, static_cast<std::uint32_t>(id));
    }
}

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::Shape, what);
}

Tape& tape_of(Var v) {
    if (!v.valid()) fail(ErrorKind::Input, "operation on an unbound variable");
    return *v.tape;
}

void same_tape(Var a, Var b) {
    if (a.tape != b.tape) fail(ErrorKind::Input, "operands live on different tapes");
}

template <typename F>
Var unary_elementwise(Var x, F forward, double (*derivative)(double in, double out)) {
    Tape& t = tape_of(x);
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
    return t.push(std::move(out), {x}, [x, derivative](Tape& tp, std::uint32_t self) {
        Tensor* gx = tp.grad_sink(x);
        if (!gx) return;
        const Tensor& in = tp.value(x);
        const Tensor& out = tp.value(Var{&tp, self});
        const Tensor& g = tp.node_grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * derivative(in[i], out[i]);
    });
}

}  // namespace

Var conv2d(Var x, Var w, std::optional<Var> bias, const ConvOptions& opt) {
    Tape& t = tape_of(x);
    same_tape(x, w);
    if (bias) same_tape(x, *bias);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    require(xs.size() == 3 || xs.size() == 4,
            "conv2d: input must be C×H×W or N×C×H×W, got " + to_string(xs));
    require(ws.size() == 4, "conv2d: kernel must be C_out×C_in×kh×kw, got " + to_string(ws));
    const bool batched = xs.size() == 4;
    kernels::ConvGeometry g;
    g.batch = batched ? xs[0] : 1;
    g.in_channels = xs[batched ? 1 : 0];
    g.in_h = xs[batched ? 2 : 1];
    g.in_w = xs[batched ? 3 : 2];
    g.out_channels = ws[0];
    g.kernel_h = ws[2];
    g.kernel_w = ws[3];
    g.stride_h = opt.stride_h;
    g.stride_w = opt.stride_w;
    g.pad_h = opt.pad_h;
    g.pad_w = opt.pad_w;
    require(ws[1] == g.in_channels, "conv2d: kernel expects " + std::to_string(ws[1]) +
                                        " input channels, input has " +
                                        std::to_string(g.in_channels));
    if (bias)
        require(bias->shape() == Shape{g.out_channels},
                "conv2d: bias shape " + to_string(bias->shape()) + " does not match " +
                    std::to_string(g.out_channels) + " output channels");
    g.validate();

    Shape out_shape = batched ? Shape{g.batch, g.out_channels, g.out_h(), g.out_w()}
                              : Shape{g.out_channels, g.out_h(), g.out_w()};
    Tensor out(out_shape);
    std::span<const double> b = bias ? bias->value().data() : std::span<const double>{};
    const bool keep_cols = t.recording() && t.requires_grad(w);
    auto cols = std::make_shared<std::vector<double>>(g.patch_size() * g.batch * g.out_h() *
                                                      g.out_w());
    kernels::parallel::conv2d_forward_cached(g, x.value().data(), w.value().data(), b, out.data(),
                                             *cols);
    if (!keep_cols) cols.reset();

    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(*bias);
    return t.push(std::move(out), std::move(parents),
                  [x, w, bias, g, cols](Tape& tp, std::uint32_t self) {
                      Tensor* gx = tp.grad_sink(x);
                      Tensor* gw = tp.grad_sink(w);
                      Tensor* gb = bias ? tp.grad_sink(*bias) : nullptr;
                      std::span<const double> cached =
                          cols ? std::span<const double>(*cols) : std::span<const double>{};
                      kernels::parallel::conv2d_backward(
                          g, tp.value(x).data(), tp.value(w).data(), tp.node_grad(self).data(),
                          gx ? gx->data() : std::span<double>{},
                          gw ? gw->data() : std::span<double>{},
                          gb ? gb->data() : std::span<double>{}, cached);
                  });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
    Tape& t = tape_of(x);
    same_tape(x, w);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    require(xs.size() == 1 || xs.size() == 2, "linear: input must be n or N×n, got " + to_string(xs));
    require(ws.size() == 2, "linear: weights must be m×n, got " + to_string(ws));
    const std::size_t rows = xs.size() == 2 ? xs[0] : 1;
    const std::size_t n = xs.back();
    const std::size_t m = ws[0];
    require(ws[1] == n, "linear: weights " + to_string(ws) + " do not accept input " + to_string(xs));
    if (bias) {
        same_tape(x, *bias);
        require(bias->shape() == Shape{m}, "linear: bias shape " + to_string(bias->shape()) +
                                               " does not match " + std::to_string(m) + " outputs");
    }
    std::vector<double> w_t(n * m);
    kernels::parallel::transpose(m, n, w.value().data().data(), w_t.data());
    Tensor out(xs.size() == 2 ? Shape{rows, m} : Shape{m});
    kernels::parallel::gemm(rows, m, n, x.value().data().data(), w_t.data(), out.data().data());
    if (bias) {
        const Tensor& b = bias->value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < m; ++j) out[r * m + j] += b[j];
    }
    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(*bias);
    return t.push(std::move(out), std::move(parents),
                  [x, w, bias, rows, n, m](Tape& tp, std::uint32_t self) {
                      const Tensor& g = tp.node_grad(self);
                      if (Tensor* gx = tp.grad_sink(x)) {
                          std::vector<double> tmp(rows * n);
                          kernels::parallel::gemm(rows, n, m, g.data().data(),
                                                  tp.value(w).data().data(), tmp.data());
                          for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
                      }
                      if (Tensor* gw = tp.grad_sink(w)) {
                          std::vector<double> g_t(m * rows);
                          kernels::parallel::transpose(rows, m, g.data().data(), g_t.data());
                          std::vector<double> tmp(m * n);
                          kernels::parallel::gemm(m, n, rows, g_t.data(),
                                                  tp.value(x).data().data(), tmp.data());
                          for (std::size_t i = 0; i < tmp.size(); ++i) (*gw)[i] += tmp[i];
                      }
                      if (bias)
                          if (Tensor* gb = tp.grad_sink(*bias))
                              for (std::size_t j = 0; j < m; ++j) {
                                  double acc = 0.0;
                                  for (std::size_t r = 0; r < rows; ++r) acc += g[r * m + j];
                                  (*gb)[j] += acc;
                              }
                  });
}

Var relu(Var x) {
    return unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
    return unary_elementwise(
        x, [](double v) { return std::tanh(v); },
        [](double, double out) { return 1.0 - out * out; });
}

Var avg_pool_last(Var x) {
    Tape& t = tape_of(x);
    const Shape& xs = x.shape();
    require(!xs.empty() && xs.back() >= 1, "avg_pool_last: last axis must be non-empty");
    const std::size_t width = xs.back();
    const std::size_t outer = x.value().size() / width;
    Shape out_shape = xs;
    out_shape.back() = 1;
    Tensor out(out_shape);
    const Tensor& in = x.value();
    for (std::size_t o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (std::size_t k = 0; k < width; ++k) acc += in[o * width + k];
        out[o] = acc / static_cast<double>(width);
    }
    return t.push(std::move(out), {x}, [x, width, outer](Tape& tp, std::uint32_t self) {
        Tensor* gx = tp.grad_sink(x);
        if (!gx) return;
        const Tensor& g = tp.node_grad(self);
        const double inv = 1.0 / static_cast<double>(width);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < width; ++k) (*gx)[o * width + k] += g[o] * inv;
    });
}

Var mean_over_set(std::span<const Var> inputs) {
    if (inputs.empty()) fail(ErrorKind::Aggregation, "mean_over_set: empty input set");
    Tape& t = tape_of(inputs[0]);
    const Shape& shape = inputs[0].shape();
    Tensor out(shape);
    for (const Var& v : inputs) {
        same_tape(inputs[0], v);
        require(v.shape() == shape, "mean_over_set: shape " + to_string(v.shape()) +
                                        " differs from " + to_string(shape));
        const Tensor& val = v.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += val[i];
    }
    const double count = static_cast<double>(inputs.size());
    for (double& v : out.data()) v /= count;
    std::vector<Var> parents(inputs.begin(), inputs.end());
    return t.push(std::move(out), parents, [parents, count](Tape& tp, std::uint32_t self) {
        const Tensor& g = tp.node_grad(self);
        for (const Var& p : parents)
            if (Tensor* gp = tp.grad_sink(p))
                for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i] / count;
    });
}

Var group_mean(Var x, const std::vector<std::vector<std::size_t>>& groups) {
    Tape& t = tape_of(x);
    const Shape& xs = x.shape();
    require(xs.size() == 2, "group_mean: input must be N×d, got " + to_string(xs));
    const std::size_t rows = xs[0], d = xs[1];
    Tensor out({groups.size(), d});
    const Tensor& in = x.value();
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& members = groups[gi];
        if (members.empty()) fail(ErrorKind::Aggregation, "group_mean: empty group " + std::to_string(gi));
        double* dst = out.data().data() + gi * d;
        for (std::size_t r : members) {
            if (r >= rows) fail(ErrorKind::Index, "group_mean: row " + std::to_string(r) + " out of range");
            for (std::size_t j = 0; j < d; ++j) dst[j] += in[r * d + j];
        }
        const double count = static_cast<double>(members.size());
        for (std::size_t j = 0; j < d; ++j) dst[j] /= count;
    }
    return t.push(std::move(out), {x}, [x, groups, d](Tape& tp, std::uint32_t self) {
        Tensor* gx = tp.grad_sink(x);
        if (!gx) return;
        const Tensor& g = tp.node_grad(self);
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const double count = static_cast<double>(groups[gi].size());
            for (std::size_t r : groups[gi])
                for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += g[gi * d + j] / count;
        }
    });
}

Var concat(Var a, Var b) {
    Tape& t = tape_of(a);
    same_tape(a, b);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(!as.empty() && as.size() == bs.size() &&
                std::equal(as.begin(), as.end() - 1, bs.begin()),
            "concat: incompatible shapes " + to_string(as) + " and " + to_string(bs));
    const std::size_t la = as.back(), lb = bs.back();
    const std::size_t outer = la + lb == 0 ? 0 : (a.value().size() + b.value().size()) / (la + lb);
    Shape out_shape = as;
    out_shape.back() = la + lb;
    Tensor out(out_shape);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data().data() + o * la, la, out.data().data() + o * (la + lb));
        std::copy_n(bv.data().data() + o * lb, lb, out.data().data() + o * (la + lb) + la);
    }
    return t.push(std::move(out), {a, b}, [a, b, la, lb, outer](Tape& tp, std::uint32_t self) {
        const Tensor& g = tp.node_grad(self);
        Tensor* ga = tp.grad_sink(a);
        Tensor* gb = tp.grad_sink(b);
        for (std::size_t o = 0; o < outer; ++o) {
            if (ga)
                for (std::size_t i = 0; i < la; ++i) (*ga)[o * la + i] += g[o * (la + lb) + i];
            if (gb)
                for (std::size_t i = 0; i < lb; ++i) (*gb)[o * lb + i] += g[o * (la + lb) + la + i];
        }
    });
}

Var mse(Var pred, Var target) {
    Tape& t = tape_of(pred);
    same_tape(pred, target);
    require(pred.shape() == target.shape(), "mse: prediction " + to_string(pred.shape()) +
                                                " and target " + to_string(target.shape()) +
                                                " differ");
    const std::size_t n = pred.value().size();
    require(n >= 1, "mse: empty input");
    const Tensor& p = pred.value();
    const Tensor& y = target.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (p[i] - y[i]) * (p[i] - y[i]);
    return t.push(Tensor::scalar(acc / static_cast<double>(n)), {pred, target},
                  [pred, target, n](Tape& tp, std::uint32_t self) {
                      const double g = tp.node_grad(self)[0] * 2.0 / static_cast<double>(n);
                      const Tensor& p = tp.value(pred);
                      const Tensor& y = tp.value(target);
                      Tensor* gp = tp.grad_sink(pred);
                      Tensor* gy = tp.grad_sink(target);
                      for (std::size_t i = 0; i < n; ++i) {
                          const double d = g * (p[i] - y[i]);
                          if (gp) (*gp)[i] += d;
                          if (gy) (*gy)[i] -= d;
                      }
                  });
}

Var embedding_rows(Var table, std::span<const std::size_t> indices) {
    Tape& t = tape_of(table);
    const Shape& ts = table.shape();
    require(ts.size() == 2, "embedding: table must be N_T×d, got " + to_string(ts));
    const std::size_t rows = ts[0], d = ts[1];
    Tensor out({indices.size(), d});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= rows)
            fail(ErrorKind::Index, "embedding: index " + std::to_string(indices[k]) +
                                       " outside table of " + std::to_string(rows) + " rows");
        std::copy_n(table.value().data().data() + indices[k] * d, d, out.data().data() + k * d);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return t.push(std::move(out), {table}, [table, idx, d](Tape& tp, std::uint32_t self) {
        Tensor* gt = tp.grad_sink(table);
        if (!gt) return;
        const Tensor& g = tp.node_grad(self);
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < d; ++j) (*gt)[idx[k] * d + j] += g[k * d + j];
    });
}

Var embedding_lookup(Var table, std::size_t index) {
    const std::size_t one[] = {index};
    Var rows = embedding_rows(table, one);
    return reshape(rows, {rows.shape()[1]});
}

Var add(Var a, Var b) {
    const Var terms[] = {a, b};
    const double coeffs[] = {1.0, 1.0};
    return lincomb(terms, coeffs);
}

Var sub(Var a, Var b) {
    const Var terms[] = {a, b};
    const double coeffs[] = {1.0, -1.0};
    return lincomb(terms, coeffs);
}

Var scale(Var a, double factor) {
    const Var terms[] = {a};
    const double coeffs[] = {factor};
    return lincomb(terms, coeffs);
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
    require(!terms.empty() && terms.size() == coeffs.size(), "lincomb: terms/coefficients mismatch");
    Tape& t = tape_of(terms[0]);
    const Shape& shape = terms[0].shape();
    Tensor out(shape);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        same_tape(terms[0], terms[k]);
        require(terms[k].shape() == shape, "lincomb: shape " + to_string(terms[k].shape()) +
                                               " differs from " + to_string(shape));
        const Tensor& v = terms[k].value();
        const double c = coeffs[k];
        if (k == 0)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * v[i];
        else
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * v[i];
    }
    std::vector<Var> parents(terms.begin(), terms.end());
    std::vector<double> cs(coeffs.begin(), coeffs.end());
    return t.push(std::move(out), parents, [parents, cs](Tape& tp, std::uint32_t self) {
        const Tensor& g = tp.node_grad(self);
        for (std::size_t k = 0; k < parents.size(); ++k)
            if (Tensor* gp = tp.grad_sink(parents[k]))
                for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += cs[k] * g[i];
    });
}

Var reshape(Var x, Shape shape) {
    Tape& t = tape_of(x);
    Tensor out = x.value().reshaped(std::move(shape));
    return t.push(std::move(out), {x}, [x](Tape& tp, std::uint32_t self) {
        if (Tensor* gx = tp.grad_sink(x)) {
            const Tensor& g = tp.node_grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
    });
}

Var select_col(Var x, std::size_t j) {
    Tape& t = tape_of(x);
    const Shape& xs = x.shape();
    require(xs.size() == 2, "select_col: input must be N×m, got " + to_string(xs));
    if (j >= xs[1]) fail(ErrorKind::Index, "select_col: column " + std::to_string(j) + " out of range");
    const std::size_t rows = xs[0], m = xs[1];
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * m + j];
    return t.push(std::move(out), {x}, [x, j, rows, m](Tape& tp, std::uint32_t self) {
        if (Tensor* gx = tp.grad_sink(x)) {
            const Tensor& g = tp.node_grad(self);
            for (std::size_t r = 0; r < rows; ++r) (*gx)[r * m + j] += g[r];
        }
    });
}

Var sum(Var x) {
    Tape& t = tape_of(x);
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return t.push(Tensor::scalar(acc), {x}, [x](Tape& tp, std::uint32_t self) {
        if (Tensor* gx = tp.grad_sink(x)) {
            const double g = tp.node_grad(self)[0];
            for (double& v : gx->data()) v += g;
        }
    });
}

Var sum_squares(Var x) {
    Tape& t = tape_of(x);
    double acc = 0.0;
    for (double v : x.value().data()) acc += v * v;
    return t.push(Tensor::scalar(acc), {x}, [x](Tape& tp, std::uint32_t self) {
        if (Tensor* gx = tp.grad_sink(x)) {
            const double g = tp.node_grad(self)[0];
            const Tensor& in = tp.value(x);
            for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += 2.0 * g * in[i];
        }
    });
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
    Tape tape;
    Var xv = tape.variable(x);
    Var y = f(tape, xv);
    if (y.value().size() != 1) fail(ErrorKind::Shape, "grad_check: function must return a scalar");
    tape.backward(y);
    const Tensor analytic = tape.grad(xv);

    auto eval = [&f](const Tensor& at) {
        Tape probe(Tape::Mode::Inference);
        return f(probe, probe.constant(at)).value()[0];
    };
    double worst = 0.0;
    Tensor probe_point = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        probe_point[i] = orig + eps;
        const double up = eval(probe_point);
        probe_point[i] = orig - eps;
        const double down = eval(probe_point);
        probe_point[i] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace sohnet::ad
