#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eta/common.hpp"

namespace eta::ad {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Plain value type: copyable, movable,
// no view semantics. Rank 0..2 is what the models use; the storage is
// rank-agnostic.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t rows() const;
    int64_t cols() const;
    bool is_scalar() const { return numel() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    double item() const;
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; the tensor lives in the tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int32_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const { return tape_; }
    int32_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int32_t id_ = -1;
};

// Result of Tape::backward: one gradient slot per node, allocated lazily.
class Gradients {
public:
    explicit Gradients(size_t n) : grads_(n) {}
    // Gradient of the root wrt the given var; zero tensor if it never
    // received a contribution.
    Tensor of(const Var& v) const;
    const Tensor* raw(int32_t id) const;
    Tensor& slot(int32_t id) { return grads_[static_cast<size_t>(id)]; }

private:
    std::vector<Tensor> grads_;
};

// Reverse-mode tape. Nodes are appended in execution order, so reverse
// iteration is a valid topological order. One tape = one forward graph;
// tapes are independent and may be used concurrently from different threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf holding an input or parameter value.
    Var leaf(Tensor value);
    // Identity in the forward pass; the backward pass stops here.
    Var stop_grad(Var x);
    bool is_stop_grad(Var x) const;

    size_t node_count() const { return nodes_.size(); }
    const Tensor& value_of(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Reverse-mode sweep from a scalar root. Each node is visited exactly
    // once. StopGrad nodes contribute exactly zero to their inputs.
    Gradients backward(Var root);

    // --- op construction (used by the free functions below) ---
    using BackwardFn = std::function<void(Tape&, const Tensor& gout, Gradients& grads)>;
    Var make_node(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn,
                  const char* op_name);

    void accumulate(Gradients& grads, int32_t id, const Tensor& g);

private:
    struct Node {
        Tensor value;
        BackwardFn backward;
        bool stop = false;
        const char* op = "";
    };
    std::vector<Node> nodes_;
};

// ---- differentiable ops ----
// Shapes are validated eagerly; mismatches raise DimensionError naming both
// shapes. Every op validates that its output is finite (NumericError).

Var matmul(Var a, Var b);
Var add(Var a, Var b);   // same shape, or b broadcast: scalar or 1xD row
Var sub(Var a, Var b);   // same broadcast rules as add
Var mul(Var a, Var b);   // same broadcast rules as add
Var scale(Var a, double c);
Var neg(Var a);
Var gelu(Var a);  // x * sigmoid(1.702 x)
Var sigmoid(Var a);
Var sabs(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps = 1e-5);  // pre-affine normalization
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_rows(Var a, int64_t begin, int64_t count);
Var slice_cols(Var a, int64_t begin, int64_t count);
Var repeat_rows(Var row, int64_t n);  // 1xD -> NxD
Var mean_row_groups(Var a, const std::vector<std::vector<int64_t>>& groups);
Var col_max(Var a);  // NxM -> 1xM, max over rows; ties resolve to first row
Var sum(Var a);      // -> scalar
Var mean(Var a);     // -> scalar
// Numerically stable elementwise binary cross-entropy with logits.
Var bce_with_logits(Var logits, Var targets);

// ---- fused ops ----
// Numerically identical compositions fused into single tape nodes; the
// hot transformer path uses these to keep node counts down.

// x @ w + b  (b is 1 x out, broadcast over rows)
Var linear(Var x, Var w, Var b);
// layer_norm_rows(x) * g + b  (g, b are 1 x D)
Var layer_norm_affine(Var x, Var g, Var b, double eps = 1e-5);
// per-head softmax(Q Kt / sqrt(Dh)) V with H heads over the column blocks;
// q is N x D, k and v are M x D, output N x D
Var mha_core(Var q, Var k, Var v, int heads);

}  // namespace eta::ad
