#include "gridcast/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gridcast/kernels.hpp"

namespace gridcast::nn {

Value Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Value Graph::make_node(Tensor value, std::vector<Value> parents,
                       std::function<void(Graph&, Value)> backprop) {
    Node n;
    n.value = std::move(value);
    bool rg = false;
    for (auto p : parents) rg = rg || nodes_[check(p)].requires_grad;
    n.requires_grad = rg;
    if (rg) {
        n.parents = std::move(parents);
        n.backprop = std::move(backprop);
    }
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad(Value v) {
    Node& n = nodes_[check(v)];
    if (!n.grad_alloc) {
        n.grad = Tensor(n.value.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Graph::grad_of(Value v) const {
    const Node& n = nodes_[check(v)];
    if (!n.grad_alloc) throw DomainError("Graph: gradient was never produced for this value");
    return n.grad;
}

void Graph::backward(Value loss) {
    if (val(loss).numel() != 1) throw DomainError("Graph::backward: loss must be scalar");
    grad(loss)[0] = 1.0;
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backprop && n.grad_alloc) n.backprop(*this, Value{i});
    }
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw DomainError(std::string(op) + ": shape mismatch");
}

}  // namespace

Value add(Graph& g, Value a, Value b) {
    const Tensor &ta = g.val(a), &tb = g.val(b);
    check_same_shape(ta, tb, "add");
    Tensor out(ta.shape());
    const std::int64_t n = ta.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = ta[i] + tb[i];
    return g.make_node(std::move(out), {a, b}, [a, b, n](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        for (Value p : {a, b}) {
            if (!gg.needs_grad(p)) continue;
            Tensor& gp = gg.grad(p);
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i];
        }
    });
}

Value sub(Graph& g, Value a, Value b) {
    const Tensor &ta = g.val(a), &tb = g.val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out(ta.shape());
    const std::int64_t n = ta.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = ta[i] - tb[i];
    return g.make_node(std::move(out), {a, b}, [a, b, n](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(a)) {
            Tensor& gp = gg.grad(a);
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gp = gg.grad(b);
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] -= gy[i];
        }
    });
}

Value mul(Graph& g, Value a, Value b) {
    const Tensor &ta = g.val(a), &tb = g.val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out(ta.shape());
    const std::int64_t n = ta.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = ta[i] * tb[i];
    return g.make_node(std::move(out), {a, b}, [a, b, n](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(a)) {
            Tensor& gp = gg.grad(a);
            const Tensor& tb2 = gg.val(b);
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i] * tb2[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gp = gg.grad(b);
            const Tensor& ta2 = gg.val(a);
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i] * ta2[i];
        }
    });
}

Value affine(Graph& g, Value a, double scale, double shift) {
    const Tensor& ta = g.val(a);
    Tensor out(ta.shape());
    const std::int64_t n = ta.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = scale * ta[i] + shift;
    return g.make_node(std::move(out), {a}, [a, scale, n](Graph& gg, Value self) {
        if (!gg.needs_grad(a)) return;
        const Tensor& gy = gg.grad_of(self);
        Tensor& gp = gg.grad(a);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += scale * gy[i];
    });
}

Value add_bias(Graph& g, Value x, Value b) {
    const Tensor &tx = g.val(x), &tb = g.val(b);
    const std::int64_t c = tb.numel();
    if (tx.shape().empty() || tx.shape().back() != c)
        throw DomainError("add_bias: bias length must equal last axis");
    Tensor out(tx.shape());
    const std::int64_t rows = tx.numel() / c;
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = tx[r * c + j] + tb[j];
    return g.make_node(std::move(out), {x, b}, [x, b, rows, c](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(x)) {
            Tensor& gp = gg.grad(x);
            const std::int64_t n = rows * c;
#pragma omp parallel for
            for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gp = gg.grad(b);
#pragma omp parallel for
            for (std::int64_t j = 0; j < c; ++j) {
                double s = 0.0;
                for (std::int64_t r = 0; r < rows; ++r) s += gy[r * c + j];
                gp[j] += s;
            }
        }
    });
}

Value relu(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    Tensor out(tx.shape());
    const std::int64_t n = tx.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = tx[i] > 0.0 ? tx[i] : 0.0;
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        const Tensor& tx2 = gg.val(x);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += tx2[i] > 0.0 ? gy[i] : 0.0;
    });
}

Value sigmoid(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    Tensor out(tx.shape());
    const std::int64_t n = tx.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-tx[i]));
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        const Tensor& s = gg.val(self);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i] * s[i] * (1.0 - s[i]);
    });
}

Value tanh_op(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    Tensor out(tx.shape());
    const std::int64_t n = tx.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(tx[i]);
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        const Tensor& t = gg.val(self);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i] * (1.0 - t[i] * t[i]);
    });
}

Value square(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    Tensor out(tx.shape());
    const std::int64_t n = tx.numel();
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = tx[i] * tx[i];
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        const Tensor& tx2 = gg.val(x);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += 2.0 * tx2[i] * gy[i];
    });
}

Value reshape(Graph& g, Value x, std::vector<std::int64_t> shape) {
    Tensor out = g.val(x).reshaped(std::move(shape));
    const std::int64_t n = out.numel();
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i];
    });
}

Value concat_last(Graph& g, Value a, Value b) {
    const Tensor &ta = g.val(a), &tb = g.val(b);
    if (ta.rank() != tb.rank() || ta.rank() == 0)
        throw DomainError("concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < ta.rank(); ++i)
        if (ta.shape()[i] != tb.shape()[i]) throw DomainError("concat_last: leading dims differ");
    const std::int64_t ca = ta.shape().back(), cb = tb.shape().back();
    std::vector<std::int64_t> shape = ta.shape();
    shape.back() = ca + cb;
    Tensor out(shape);
    const std::int64_t rows = ta.numel() / ca;
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r) {
        double* op = out.data() + r * (ca + cb);
        const double* ap = ta.data() + r * ca;
        const double* bp = tb.data() + r * cb;
        std::copy(ap, ap + ca, op);
        std::copy(bp, bp + cb, op + ca);
    }
    return g.make_node(std::move(out), {a, b}, [a, b, rows, ca, cb](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(a)) {
            Tensor& gp = gg.grad(a);
#pragma omp parallel for
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < ca; ++j) gp[r * ca + j] += gy[r * (ca + cb) + j];
        }
        if (gg.needs_grad(b)) {
            Tensor& gp = gg.grad(b);
#pragma omp parallel for
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < cb; ++j) gp[r * cb + j] += gy[r * (ca + cb) + ca + j];
        }
    });
}

Value slice_last(Graph& g, Value x, std::int64_t from, std::int64_t count) {
    const Tensor& tx = g.val(x);
    const std::int64_t c = tx.shape().back();
    if (from < 0 || count <= 0 || from + count > c) throw DomainError("slice_last: out of range");
    std::vector<std::int64_t> shape = tx.shape();
    shape.back() = count;
    Tensor out(shape);
    const std::int64_t rows = tx.numel() / c;
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < count; ++j) out[r * count + j] = tx[r * c + from + j];
    return g.make_node(std::move(out), {x}, [x, rows, c, from, count](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < count; ++j) gp[r * c + from + j] += gy[r * count + j];
    });
}

Value gather_rows(Graph& g, Value x, std::vector<std::int64_t> idx) {
    const Tensor& tx = g.val(x);
    if (tx.rank() == 0) throw DomainError("gather_rows: rank-0 input");
    const std::int64_t r_in = tx.shape()[0];
    const std::int64_t row = r_in == 0 ? 0 : tx.numel() / r_in;
    for (auto i : idx)
        if (i < 0 || i >= r_in) throw DomainError("gather_rows: index out of range");
    std::vector<std::int64_t> shape = tx.shape();
    shape[0] = static_cast<std::int64_t>(idx.size());
    Tensor out(shape);
    const std::int64_t n_out = static_cast<std::int64_t>(idx.size());
#pragma omp parallel for
    for (std::int64_t i = 0; i < n_out; ++i)
        std::copy(tx.data() + idx[i] * row, tx.data() + (idx[i] + 1) * row, out.data() + i * row);
    return g.make_node(std::move(out), {x},
                       [x, idx = std::move(idx), row](Graph& gg, Value self) {
                           if (!gg.needs_grad(x)) return;
                           const Tensor& gy = gg.grad_of(self);
                           Tensor& gp = gg.grad(x);
                           // duplicates allowed: keep the scatter serial over rows
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               double* dst = gp.data() + idx[i] * row;
                               const double* src = gy.data() + static_cast<std::int64_t>(i) * row;
                               for (std::int64_t j = 0; j < row; ++j) dst[j] += src[j];
                           }
                       });
}

Value crop_hw(Graph& g, Value x, std::int64_t off_y, std::int64_t off_x, std::int64_t out_h,
              std::int64_t out_w) {
    const Tensor& tx = g.val(x);
    if (tx.rank() != 4) throw DomainError("crop_hw: expects (N,H,W,C)");
    const std::int64_t n = tx.shape()[0], h = tx.shape()[1], w = tx.shape()[2], c = tx.shape()[3];
    if (off_y < 0 || off_x < 0 || off_y + out_h > h || off_x + out_w > w)
        throw DomainError("crop_hw: crop window out of bounds");
    Tensor out({n, out_h, out_w, c});
#pragma omp parallel for collapse(2)
    for (std::int64_t bn = 0; bn < n; ++bn)
        for (std::int64_t y = 0; y < out_h; ++y) {
            const double* src = tx.data() + ((bn * h + y + off_y) * w + off_x) * c;
            double* dst = out.data() + ((bn * out_h + y) * out_w) * c;
            std::copy(src, src + out_w * c, dst);
        }
    return g.make_node(std::move(out), {x},
                       [x, n, h, w, c, off_y, off_x, out_h, out_w](Graph& gg, Value self) {
                           if (!gg.needs_grad(x)) return;
                           const Tensor& gy = gg.grad_of(self);
                           Tensor& gp = gg.grad(x);
#pragma omp parallel for collapse(2)
                           for (std::int64_t bn = 0; bn < n; ++bn)
                               for (std::int64_t y = 0; y < out_h; ++y) {
                                   double* dst = gp.data() + ((bn * h + y + off_y) * w + off_x) * c;
                                   const double* src = gy.data() + ((bn * out_h + y) * out_w) * c;
                                   for (std::int64_t j = 0; j < out_w * c; ++j) dst[j] += src[j];
                               }
                       });
}

Value detach(Graph& g, Value x) { return g.leaf(g.val(x), false); }

Value matmul(Graph& g, Value x, Value w) {
    const Tensor &tx = g.val(x), &tw = g.val(w);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[0])
        throw DomainError("matmul: expects (B,I)x(I,O)");
    const std::int64_t b = tx.shape()[0], i = tx.shape()[1], o = tw.shape()[1];
    Tensor out({b, o});
    kern::matmul_forward(tx.data(), tw.data(), out.data(), b, i, o);
    return g.make_node(std::move(out), {x, w}, [x, w, b, i, o](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(x))
            kern::matmul_backward_input(gy.data(), gg.val(w).data(), gg.grad(x).data(), b, i, o);
        if (gg.needs_grad(w))
            kern::matmul_backward_weights(gg.val(x).data(), gy.data(), gg.grad(w).data(), b, i, o);
    });
}

Value conv2d(Graph& g, Value x, Value w, Value b, std::int64_t k) {
    const Tensor &tx = g.val(x), &tw = g.val(w);
    if (tx.rank() != 4) throw DomainError("conv2d: expects (N,H,W,C)");
    if (k % 2 == 0 || k <= 0) throw DomainError("conv2d: kernel must be odd");
    kern::Conv2dDims d;
    d.n = tx.shape()[0];
    d.h = tx.shape()[1];
    d.w = tx.shape()[2];
    d.ci = tx.shape()[3];
    d.k = k;
    if (tw.numel() % (k * k * d.ci) != 0) throw DomainError("conv2d: weight shape mismatch");
    d.co = tw.numel() / (k * k * d.ci);
    const Tensor& tb = g.val(b);
    if (tb.numel() != d.co) throw DomainError("conv2d: bias length mismatch");
    Tensor out({d.n, d.h, d.w, d.co});
    kern::conv2d_forward(tx.data(), tw.data(), tb.data(), out.data(), d);
    return g.make_node(std::move(out), {x, w, b}, [x, w, b, d](Graph& gg, Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(x))
            kern::conv2d_backward_input(gy.data(), gg.val(w).data(), gg.grad(x).data(), d);
        if (gg.needs_grad(w))
            kern::conv2d_backward_weights(gg.val(x).data(), gy.data(), gg.grad(w).data(), d);
        if (gg.needs_grad(b)) kern::conv2d_backward_bias(gy.data(), gg.grad(b).data(), d);
    });
}

Value convtr2(Graph& g, Value x, Value w, Value b) {
    const Tensor &tx = g.val(x), &tw = g.val(w);
    if (tx.rank() != 4) throw DomainError("convtr2: expects (N,H,W,C)");
    const std::int64_t n = tx.shape()[0], h = tx.shape()[1], win = tx.shape()[2],
                       ci = tx.shape()[3];
    if (tw.numel() % (4 * ci) != 0) throw DomainError("convtr2: weight shape mismatch");
    const std::int64_t co = tw.numel() / (4 * ci);
    if (g.val(b).numel() != co) throw DomainError("convtr2: bias length mismatch");
    Tensor out({n, 2 * h, 2 * win, co});
    kern::convtr2_forward(tx.data(), tw.data(), g.val(b).data(), out.data(), n, h, win, ci, co);
    return g.make_node(std::move(out), {x, w, b}, [x, w, b, n, h, win, ci, co](Graph& gg,
                                                                               Value self) {
        const Tensor& gy = gg.grad_of(self);
        if (gg.needs_grad(x))
            kern::convtr2_backward_input(gy.data(), gg.val(w).data(), gg.grad(x).data(), n, h, win,
                                         ci, co);
        if (gg.needs_grad(w))
            kern::convtr2_backward_weights(gg.val(x).data(), gy.data(), gg.grad(w).data(), n, h,
                                           win, ci, co);
        if (gg.needs_grad(b)) {
            Tensor& gb = gg.grad(b);
            const std::int64_t rows = n * 4 * h * win;
#pragma omp parallel for
            for (std::int64_t o = 0; o < co; ++o) {
                double s = 0.0;
                for (std::int64_t r = 0; r < rows; ++r) s += gy[r * co + o];
                gb[o] += s;
            }
        }
    });
}

Value maxpool2(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    if (tx.rank() != 4) throw DomainError("maxpool2: expects (N,H,W,C)");
    const std::int64_t n = tx.shape()[0], h = tx.shape()[1], w = tx.shape()[2], c = tx.shape()[3];
    if (h % 2 != 0 || w % 2 != 0) throw DomainError("maxpool2: extents must be even");
    Tensor out({n, h / 2, w / 2, c});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(
        static_cast<std::size_t>(out.numel()));
    kern::maxpool2_forward(tx.data(), out.data(), argmax->data(), n, h, w, c);
    return g.make_node(std::move(out), {x}, [x, argmax, n, h, w, c](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        kern::maxpool2_backward(gg.grad_of(self).data(), argmax->data(), gg.grad(x).data(), n, h,
                                w, c);
    });
}

Value batchnorm(Graph& g, Value x, Value gamma, Value beta, Tensor& running_mean,
                Tensor& running_var, double momentum, double eps) {
    const Tensor& tx = g.val(x);
    const std::int64_t c = g.val(gamma).numel();
    if (tx.shape().empty() || tx.shape().back() != c)
        throw DomainError("batchnorm: channel count mismatch");
    if (running_mean.numel() != c || running_var.numel() != c)
        throw DomainError("batchnorm: running stats length mismatch");
    const std::int64_t rows = tx.numel() / c;

    auto mean = std::make_shared<Tensor>(std::vector<std::int64_t>{c});
    auto invstd = std::make_shared<Tensor>(std::vector<std::int64_t>{c});
    if (g.training()) {
        Tensor sum({c}), sumsq({c});
        kern::channel_sums(tx.data(), sum.data(), sumsq.data(), rows, c);
        for (std::int64_t j = 0; j < c; ++j) {
            const double m = sum[j] / static_cast<double>(rows);
            double var = sumsq[j] / static_cast<double>(rows) - m * m;
            if (var < 0.0) var = 0.0;
            (*mean)[j] = m;
            (*invstd)[j] = 1.0 / std::sqrt(var + eps);
            running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * m;
            running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var;
        }
    } else {
        for (std::int64_t j = 0; j < c; ++j) {
            (*mean)[j] = running_mean[j];
            (*invstd)[j] = 1.0 / std::sqrt(running_var[j] + eps);
        }
    }

    auto xhat = std::make_shared<Tensor>(tx.shape());
    const Tensor &tg = g.val(gamma), &tb = g.val(beta);
    Tensor out(tx.shape());
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) {
            const double xh = (tx[r * c + j] - (*mean)[j]) * (*invstd)[j];
            (*xhat)[r * c + j] = xh;
            out[r * c + j] = tg[j] * xh + tb[j];
        }

    const bool batch_stats = g.training();
    return g.make_node(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, invstd, rows, c, batch_stats](Graph& gg, Value self) {
            const Tensor& gy = gg.grad_of(self);
            Tensor s_gy({c}), s_gyx({c});
            kern::channel_dot_sums(gy.data(), xhat->data(), s_gy.data(), s_gyx.data(), rows, c);
            if (gg.needs_grad(gamma)) {
                Tensor& gp = gg.grad(gamma);
                for (std::int64_t j = 0; j < c; ++j) gp[j] += s_gyx[j];
            }
            if (gg.needs_grad(beta)) {
                Tensor& gp = gg.grad(beta);
                for (std::int64_t j = 0; j < c; ++j) gp[j] += s_gy[j];
            }
            if (gg.needs_grad(x)) {
                Tensor& gp = gg.grad(x);
                const Tensor& tg2 = gg.val(gamma);
                if (batch_stats) {
                    const double inv_n = 1.0 / static_cast<double>(rows);
#pragma omp parallel for
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < c; ++j) {
                            const double gxh = gy[r * c + j] * tg2[j];
                            gp[r * c + j] += (*invstd)[j] *
                                             (gxh - inv_n * tg2[j] * s_gy[j] -
                                              inv_n * tg2[j] * s_gyx[j] * (*xhat)[r * c + j]);
                        }
                } else {
#pragma omp parallel for
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < c; ++j)
                            gp[r * c + j] += gy[r * c + j] * tg2[j] * (*invstd)[j];
                }
            }
        });
}

Value dropout(Graph& g, Value x, double rate) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must be in [0,1)");
    if (!g.training() || rate == 0.0) return x;  // identity at inference
    const Tensor& tx = g.val(x);
    const std::int64_t n = tx.numel();
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    // mask draws are sequential on purpose: the pass RNG makes them reproducible
    for (std::int64_t i = 0; i < n; ++i)
        (*mask)[i] = g.rng().next_unit() < keep ? 1.0 / keep : 0.0;
    Tensor out(tx.shape());
#pragma omp parallel for
    for (std::int64_t i = 0; i < n; ++i) out[i] = tx[i] * (*mask)[i];
    return g.make_node(std::move(out), {x}, [x, mask, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& gy = gg.grad_of(self);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i] * (*mask)[i];
    });
}

Value mean_all(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    const std::int64_t n = tx.numel();
    if (n == 0) throw DomainError("mean_all: empty tensor");
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += tx[i];
    Tensor out({1}, {s / static_cast<double>(n)});
    return g.make_node(std::move(out), {x}, [x, n](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const double go = gg.grad_of(self)[0] / static_cast<double>(n);
        Tensor& gp = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t i = 0; i < n; ++i) gp[i] += go;
    });
}

Value softmax_last(Graph& g, Value x) {
    const Tensor& tx = g.val(x);
    if (tx.shape().empty()) throw DomainError("softmax_last: scalar input");
    const std::int64_t k = tx.shape().back();
    const std::int64_t rows = tx.numel() / k;
    Tensor out(tx.shape());
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xp = tx.data() + r * k;
        double* op = out.data() + r * k;
        double m = xp[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, xp[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < k; ++j) z += std::exp(xp[j] - m);
        for (std::int64_t j = 0; j < k; ++j) op[j] = std::exp(xp[j] - m) / z;
    }
    return g.make_node(std::move(out), {x}, [x, rows, k](Graph& gg, Value self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& p = gg.val(self);
        const Tensor& gy = gg.grad_of(self);
        Tensor& gx = gg.grad(x);
#pragma omp parallel for
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* pp = p.data() + r * k;
            const double* gp = gy.data() + r * k;
            double dot = 0.0;
            for (std::int64_t j = 0; j < k; ++j) dot += gp[j] * pp[j];
            for (std::int64_t j = 0; j < k; ++j) gx[r * k + j] += pp[j] * (gp[j] - dot);
        }
    });
}

Value softmax_cross_entropy(Graph& g, Value logits, const std::vector<std::int32_t>& classes) {
    const Tensor& tl = g.val(logits);
    if (tl.shape().empty()) throw DomainError("softmax_cross_entropy: scalar logits");
    const std::int64_t k = tl.shape().back();
    const std::int64_t rows = tl.numel() / k;
    if (static_cast<std::int64_t>(classes.size()) != rows)
        throw DomainError("softmax_cross_entropy: one class id per row required");
    for (auto cls : classes)
        if (cls < 0 || cls >= k) throw DomainError("softmax_cross_entropy: class id out of range");

    auto probs = std::make_shared<Tensor>(std::vector<std::int64_t>{rows, k});
    std::vector<double> row_loss(static_cast<std::size_t>(rows));
#pragma omp parallel for
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* lp = tl.data() + r * k;
        double m = lp[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, lp[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < k; ++j) z += std::exp(lp[j] - m);
        const double logz = std::log(z) + m;
        for (std::int64_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(lp[j] - logz);
        row_loss[static_cast<std::size_t>(r)] = logz - lp[classes[static_cast<std::size_t>(r)]];
    }
    double total = 0.0;
    for (auto v : row_loss) total += v;
    Tensor out({1}, {total / static_cast<double>(rows)});
    auto cls = std::make_shared<std::vector<std::int32_t>>(classes);
    return g.make_node(std::move(out), {logits}, [logits, probs, cls, rows, k](Graph& gg,
                                                                               Value self) {
        if (!gg.needs_grad(logits)) return;
        const double go = gg.grad_of(self)[0] / static_cast<double>(rows);
        Tensor& gp = gg.grad(logits);
#pragma omp parallel for
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int32_t y = (*cls)[static_cast<std::size_t>(r)];
            for (std::int64_t j = 0; j < k; ++j)
                gp[r * k + j] += go * ((*probs)[r * k + j] - (j == y ? 1.0 : 0.0));
        }
    });
}

}  // namespace gridcast::nn
