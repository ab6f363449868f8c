#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gridcast/common.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast::nn {

// Handle into a Graph's node list.
struct Value {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. One Graph per forward/backward pass, built on a
// single thread; the kernels inside ops use OpenMP. Node creation order is the
// topological order used (reversed) by backward().
class Graph {
  public:
    // dropout_seed fixes every stochastic op in this pass; training toggles
    // dropout and batch-norm batch statistics.
    explicit Graph(bool training = false, std::uint64_t dropout_seed = 0)
        : training_(training), rng_(dropout_seed) {}

    bool training() const { return training_; }
    Rng& rng() { return rng_; }

    Value leaf(Tensor t, bool requires_grad = false);

    const Tensor& val(Value v) const { return nodes_[check(v)].value; }
    bool needs_grad(Value v) const { return nodes_[check(v)].requires_grad; }

    // Zero-initialized on first touch.
    Tensor& grad(Value v);
    const Tensor& grad_of(Value v) const;

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. loss must be scalar.
    void backward(Value loss);

    std::size_t size() const { return nodes_.size(); }

    // --- op construction internals (used by the free-function ops) ---
    Value make_node(Tensor value, std::vector<Value> parents,
                    std::function<void(Graph&, Value)> backprop);

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        std::vector<Value> parents;
        std::function<void(Graph&, Value)> backprop;  // (graph, self)
    };

    std::int32_t check(Value v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw DomainError("Graph: invalid value handle");
        return v.id;
    }

    std::vector<Node> nodes_;
    bool training_;
    Rng rng_;
};

// ---- elementwise / structural ops ----
Value add(Graph& g, Value a, Value b);
Value sub(Graph& g, Value a, Value b);
Value mul(Graph& g, Value a, Value b);
Value affine(Graph& g, Value a, double scale, double shift);
Value add_bias(Graph& g, Value x, Value b);  // broadcast over last axis
Value relu(Graph& g, Value x);
Value sigmoid(Graph& g, Value x);
Value tanh_op(Graph& g, Value x);
Value square(Graph& g, Value x);
Value reshape(Graph& g, Value x, std::vector<std::int64_t> shape);
Value concat_last(Graph& g, Value a, Value b);
Value slice_last(Graph& g, Value x, std::int64_t from, std::int64_t count);
// x viewed as (rows, rest); duplicates allowed in idx.
Value gather_rows(Graph& g, Value x, std::vector<std::int64_t> idx);
Value crop_hw(Graph& g, Value x, std::int64_t off_y, std::int64_t off_x, std::int64_t out_h,
              std::int64_t out_w);
// Cuts the tape: value passes, gradient does not.
Value detach(Graph& g, Value x);

// ---- dense / conv ops ----
Value matmul(Graph& g, Value x, Value w);
Value conv2d(Graph& g, Value x, Value w, Value b, std::int64_t k);
Value convtr2(Graph& g, Value x, Value w, Value b);
Value maxpool2(Graph& g, Value x);

// Batch normalization over the last axis. Running stats live outside the graph and
// are updated in place during training forwards (momentum per config).
Value batchnorm(Graph& g, Value x, Value gamma, Value beta, Tensor& running_mean,
                Tensor& running_var, double momentum, double eps);

Value dropout(Graph& g, Value x, double rate);

// Softmax over the last axis, rows independent.
Value softmax_last(Graph& g, Value x);

// ---- reductions / losses ----
Value mean_all(Graph& g, Value x);
// logits viewed as (rows, classes); target class id per row. Mean cross-entropy.
Value softmax_cross_entropy(Graph& g, Value logits, const std::vector<std::int32_t>& classes);

// mean((a-b)^2), the L2 of the loss definitions.
inline Value l2(Graph& g, Value a, Value b) { return mean_all(g, square(g, sub(g, a, b))); }

}  // namespace gridcast::nn
