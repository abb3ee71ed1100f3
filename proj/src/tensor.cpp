#include "eta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eta::ad {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t e : shape_) {
        if (e <= 0) throw DimensionError("tensor extent must be positive, got shape " + shape_str(shape_));
    }
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DimensionError("from_rows: no rows");
    const int64_t r = static_cast<int64_t>(rows.size());
    const int64_t c = static_cast<int64_t>(rows[0].size());
    Tensor t({r, c});
    for (int64_t i = 0; i < r; ++i) {
        if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != c) {
            throw DimensionError("from_rows: ragged rows");
        }
        std::copy(rows[static_cast<size_t>(i)].begin(), rows[static_cast<size_t>(i)].end(),
                  t.data_.begin() + i * c);
    }
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.normal() * stddev;
    return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

int64_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not rank-2, shape " + shape_str(shape_));
    return shape_[0];
}

int64_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not rank-2, shape " + shape_str(shape_));
    return shape_[1];
}

double& Tensor::at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
double Tensor::at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

double Tensor::item() const {
    if (!is_scalar()) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("Var::value() on empty handle");
    return tape_->value_of(id_);
}

Tensor Gradients::of(const Var& v) const {
    const Tensor* g = raw(v.id());
    if (g && g->numel() > 0) return *g;
    return Tensor(v.shape());
}

const Tensor* Gradients::raw(int32_t id) const {
    if (id < 0 || static_cast<size_t>(id) >= grads_.size()) return nullptr;
    return &grads_[static_cast<size_t>(id)];
}

Var Tape::leaf(Tensor value) {
    if (!value.all_finite()) throw NumericError("leaf: non-finite input tensor");
    nodes_.push_back(Node{std::move(value), nullptr, false, "leaf"});
    return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

Var Tape::stop_grad(Var x) {
    if (x.tape() != this) throw ContractError("stop_grad: var belongs to another tape");
    Tensor v = x.value();
    nodes_.push_back(Node{std::move(v), nullptr, true, "stop_grad"});
    return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

bool Tape::is_stop_grad(Var x) const {
    if (x.tape() != this || x.id() < 0 || static_cast<size_t>(x.id()) >= nodes_.size()) return false;
    return nodes_[static_cast<size_t>(x.id())].stop;
}

Var Tape::make_node(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op_name) {
    for (const Var& in : inputs) {
        if (in.tape() != this) {
            throw ContractError(std::string("op ") + op_name + ": input var belongs to another tape");
        }
    }
    if (!value.all_finite()) {
        throw NumericError(std::string("op ") + op_name + ": produced non-finite values");
    }
    nodes_.push_back(Node{std::move(value), std::move(fn), false, op_name});
    return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

void Tape::accumulate(Gradients& grads, int32_t id, const Tensor& g) {
    if (nodes_[static_cast<size_t>(id)].stop) return;  // gradient barrier
    Tensor& slot = grads.slot(id);
    if (slot.numel() == 0) {
        slot = g;
        return;
    }
    double* d = slot.data();
    const double* s = g.data();
    const int64_t n = slot.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

Gradients Tape::backward(Var root) {
    if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
    if (!root.value().is_scalar()) {
        throw ContractError("backward: root must be scalar, got shape " + shape_str(root.value().shape()));
    }
    Gradients grads(nodes_.size());
    grads.slot(root.id()) = Tensor::scalar(1.0);
    for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
        Node& node = nodes_[static_cast<size_t>(id)];
        if (!node.backward) continue;
        const Tensor* g = grads.raw(id);
        if (!g || g->numel() == 0) continue;  // no contribution reached this node
        node.backward(*this, *g, grads);
    }
    return grads;
}

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(t.shape()));
    }
}

// c += a * b for row-major matrices, i-k-j order for vectorizable inner loop
void matmul_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const double* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c += a^T * b  (a is m x k, result k x n)
void matmul_at_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double v = arow[kk];
            if (v == 0.0) continue;
            double* crow = c + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += v * brow[j];
        }
    }
}

// c += a * b^T  (a is m x k, b is n x k, result m x n)
void matmul_bt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

enum class Broadcast { same, row, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::same;
    if (b.is_scalar()) return Broadcast::scalar;
    if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

// reduce a full-shaped gradient down to the broadcast operand's shape
Tensor reduce_to(const Tensor& g, Broadcast kind, const Shape& target) {
    if (kind == Broadcast::same) return g;
    if (kind == Broadcast::scalar) {
        double s = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) s += g[i];
        Tensor out(target);
        out[0] = s;
        return out;
    }
    // row broadcast: column-wise sum
    Tensor out(target);
    const int64_t r = g.rows(), c = g.cols();
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) out[j] += g.at(i, j);
    }
    return out;
}

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require_rank2(ta, "matmul");
    require_rank2(tb, "matmul");
    if (ta.cols() != tb.rows()) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(ta.shape()) + " x " +
                             shape_str(tb.shape()));
    }
    const int64_t m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out({m, n});
    matmul_acc(ta.data(), tb.data(), out.data(), m, k, n);
    return a.tape()->make_node(
        std::move(out), {a, b},
        [a, b, m, k, n](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor ga({m, k});
            matmul_bt_acc(gout.data(), b.value().data(), ga.data(), m, n, k);
            t.accumulate(grads, a.id(), ga);
            Tensor gb({k, n});
            matmul_at_acc(a.value().data(), gout.data(), gb.data(), m, k, n);
            t.accumulate(grads, b.id(), gb);
        },
        "matmul");
}

Var add(Var a, Var b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    const Broadcast kind = broadcast_kind(ta, tb, "add");
    Tensor out = ta;
    if (kind == Broadcast::same) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    } else if (kind == Broadcast::scalar) {
        const double v = tb[0];
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += v;
    } else {
        const int64_t r = out.rows(), c = out.cols();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(i, j) += tb[j];
    }
    Shape bshape = tb.shape();
    return a.tape()->make_node(
        std::move(out), {a, b},
        [a, b, kind, bshape](Tape& t, const Tensor& gout, Gradients& grads) {
            t.accumulate(grads, a.id(), gout);
            t.accumulate(grads, b.id(), reduce_to(gout, kind, bshape));
        },
        "add");
}

Var sub(Var a, Var b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    const Broadcast kind = broadcast_kind(ta, tb, "sub");
    Tensor out = ta;
    if (kind == Broadcast::same) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
    } else if (kind == Broadcast::scalar) {
        const double v = tb[0];
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= v;
    } else {
        const int64_t r = out.rows(), c = out.cols();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(i, j) -= tb[j];
    }
    Shape bshape = tb.shape();
    return a.tape()->make_node(
        std::move(out), {a, b},
        [a, b, kind, bshape](Tape& t, const Tensor& gout, Gradients& grads) {
            t.accumulate(grads, a.id(), gout);
            Tensor gb = reduce_to(gout, kind, bshape);
            for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
            t.accumulate(grads, b.id(), gb);
        },
        "sub");
}

Var mul(Var a, Var b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    const Broadcast kind = broadcast_kind(ta, tb, "mul");
    Tensor out = ta;
    if (kind == Broadcast::same) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    } else if (kind == Broadcast::scalar) {
        const double v = tb[0];
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= v;
    } else {
        const int64_t r = out.rows(), c = out.cols();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(i, j) *= tb[j];
    }
    Shape bshape = tb.shape();
    return a.tape()->make_node(
        std::move(out), {a, b},
        [a, b, kind, bshape](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& va = a.value();
            const Tensor& vb = b.value();
            Tensor ga = gout;
            if (kind == Broadcast::same) {
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= vb[i];
            } else if (kind == Broadcast::scalar) {
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= vb[0];
            } else {
                const int64_t r = ga.rows(), c = ga.cols();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) ga.at(i, j) *= vb[j];
            }
            t.accumulate(grads, a.id(), ga);
            Tensor gfull = gout;
            for (int64_t i = 0; i < gfull.numel(); ++i) gfull[i] *= va[i];
            t.accumulate(grads, b.id(), reduce_to(gfull, kind, bshape));
        },
        "mul");
}

Var scale(Var a, double c) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return a.tape()->make_node(
        std::move(out), {a},
        [a, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g = gout;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= c;
            t.accumulate(grads, a.id(), g);
        },
        "scale");
}

Var neg(Var a) { return scale(a, -1.0); }

Var gelu(Var a) {
    const Tensor& ta = a.value();
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double x = out[i];
        out[i] = x / (1.0 + std::exp(-1.702 * x));
    }
    return a.tape()->make_node(
        std::move(out), {a},
        [a](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& x = a.value();
            Tensor g = gout;
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-1.702 * x[i]));
                g[i] *= s + x[i] * 1.702 * s * (1.0 - s);
            }
            t.accumulate(grads, a.id(), g);
        },
        "gelu");
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor saved = out;
    return a.tape()->make_node(
        std::move(out), {a},
        [a, saved](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g = gout;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= saved[i] * (1.0 - saved[i]);
            t.accumulate(grads, a.id(), g);
        },
        "sigmoid");
}

Var sabs(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    return a.tape()->make_node(
        std::move(out), {a},
        [a](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& x = a.value();
            Tensor g = gout;
            for (int64_t i = 0; i < g.numel(); ++i) {
                g[i] *= (x[i] > 0.0) ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
            }
            t.accumulate(grads, a.id(), g);
        },
        "abs");
}

Var softmax_rows(Var a) {
    const Tensor& ta = a.value();
    require_rank2(ta, "softmax_rows");
    Tensor out = ta;
    const int64_t r = out.rows(), c = out.cols();
    for (int64_t i = 0; i < r; ++i) {
        double mx = out.at(i, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
        double denom = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double e = std::exp(out.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (int64_t j = 0; j < c; ++j) out.at(i, j) /= denom;
    }
    Tensor saved = out;
    return a.tape()->make_node(
        std::move(out), {a},
        [a, saved](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g(saved.shape());
            const int64_t r = saved.rows(), c = saved.cols();
            for (int64_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += gout.at(i, j) * saved.at(i, j);
                for (int64_t j = 0; j < c; ++j) g.at(i, j) = saved.at(i, j) * (gout.at(i, j) - dot);
            }
            t.accumulate(grads, a.id(), g);
        },
        "softmax_rows");
}

Var layer_norm_rows(Var a, double eps) {
    const Tensor& ta = a.value();
    require_rank2(ta, "layer_norm_rows");
    const int64_t r = ta.rows(), c = ta.cols();
    Tensor out({r, c});
    Tensor inv_std({r, 1});
    for (int64_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += ta.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = ta.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = (ta.at(i, j) - mu) * is;
    }
    Tensor saved_y = out;
    return a.tape()->make_node(
        std::move(out), {a},
        [a, saved_y, inv_std](Tape& t, const Tensor& gout, Gradients& grads) {
            const int64_t r = saved_y.rows(), c = saved_y.cols();
            Tensor g({r, c});
            for (int64_t i = 0; i < r; ++i) {
                double mean_g = 0.0, mean_gy = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    mean_g += gout.at(i, j);
                    mean_gy += gout.at(i, j) * saved_y.at(i, j);
                }
                mean_g /= static_cast<double>(c);
                mean_gy /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) {
                    g.at(i, j) = inv_std[i] * (gout.at(i, j) - mean_g - saved_y.at(i, j) * mean_gy);
                }
            }
            t.accumulate(grads, a.id(), g);
        },
        "layer_norm_rows");
}

Var transpose(Var a) {
    const Tensor& ta = a.value();
    require_rank2(ta, "transpose");
    const int64_t r = ta.rows(), c = ta.cols();
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
    return a.tape()->make_node(
        std::move(out), {a},
        [a, r, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({r, c});
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) g.at(i, j) = gout.at(j, i);
            t.accumulate(grads, a.id(), g);
        },
        "transpose");
}

Var reshape(Var a, Shape shape) {
    const Tensor& ta = a.value();
    if (shape_numel(shape) != ta.numel()) {
        throw DimensionError("reshape: cannot reshape " + shape_str(ta.shape()) + " to " + shape_str(shape));
    }
    Tensor out(shape, ta.vec());
    Shape orig = ta.shape();
    return a.tape()->make_node(
        std::move(out), {a},
        [a, orig](Tape& t, const Tensor& gout, Gradients& grads) {
            t.accumulate(grads, a.id(), Tensor(orig, gout.vec()));
        },
        "reshape");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    const int64_t c = parts[0].value().cols();
    int64_t total = 0;
    for (const Var& p : parts) {
        if (p.tape() != parts[0].tape()) throw ContractError("concat_rows: parts on different tapes");
        require_rank2(p.value(), "concat_rows");
        if (p.value().cols() != c) {
            throw DimensionError("concat_rows: column mismatch, " + shape_str(parts[0].value().shape()) +
                                 " vs " + shape_str(p.value().shape()));
        }
        total += p.value().rows();
    }
    Tensor out({total, c});
    int64_t r0 = 0;
    std::vector<Var> saved(parts.begin(), parts.end());
    std::vector<int64_t> offsets;
    for (const Var& p : parts) {
        const Tensor& tp = p.value();
        offsets.push_back(r0);
        std::copy(tp.data(), tp.data() + tp.numel(), out.data() + r0 * c);
        r0 += tp.rows();
    }
    Tape* tape = parts[0].tape();
    // make_node wants an initializer_list; register the first input and keep
    // the rest in the closure (ownership is by id on the same tape anyway)
    return tape->make_node(
        std::move(out), {parts[0]},
        [saved, offsets, c](Tape& t, const Tensor& gout, Gradients& grads) {
            for (size_t i = 0; i < saved.size(); ++i) {
                const Tensor& tp = saved[i].value();
                Tensor g({tp.rows(), c});
                std::copy(gout.data() + offsets[i] * c, gout.data() + (offsets[i] + tp.rows()) * c,
                          g.data());
                t.accumulate(grads, saved[i].id(), g);
            }
        },
        "concat_rows");
}

Var concat_rows(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat_rows(std::span<const Var>(v));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const int64_t r = parts[0].value().rows();
    int64_t total = 0;
    for (const Var& p : parts) {
        if (p.tape() != parts[0].tape()) throw ContractError("concat_cols: parts on different tapes");
        require_rank2(p.value(), "concat_cols");
        if (p.value().rows() != r) {
            throw DimensionError("concat_cols: row mismatch, " + shape_str(parts[0].value().shape()) +
                                 " vs " + shape_str(p.value().shape()));
        }
        total += p.value().cols();
    }
    Tensor out({r, total});
    std::vector<Var> saved(parts.begin(), parts.end());
    std::vector<int64_t> offsets;
    int64_t c0 = 0;
    for (const Var& p : parts) {
        const Tensor& tp = p.value();
        offsets.push_back(c0);
        for (int64_t i = 0; i < r; ++i) {
            std::copy(tp.data() + i * tp.cols(), tp.data() + (i + 1) * tp.cols(),
                      out.data() + i * total + c0);
        }
        c0 += tp.cols();
    }
    Tape* tape = parts[0].tape();
    return tape->make_node(
        std::move(out), {parts[0]},
        [saved, offsets, r, total](Tape& t, const Tensor& gout, Gradients& grads) {
            for (size_t i = 0; i < saved.size(); ++i) {
                const Tensor& tp = saved[i].value();
                Tensor g({r, tp.cols()});
                for (int64_t row = 0; row < r; ++row) {
                    std::copy(gout.data() + row * total + offsets[i],
                              gout.data() + row * total + offsets[i] + tp.cols(),
                              g.data() + row * tp.cols());
                }
                t.accumulate(grads, saved[i].id(), g);
            }
        },
        "concat_cols");
}

Var concat_cols(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat_cols(std::span<const Var>(v));
}

Var slice_rows(Var a, int64_t begin, int64_t count) {
    const Tensor& ta = a.value();
    require_rank2(ta, "slice_rows");
    if (begin < 0 || count <= 0 || begin + count > ta.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + shape_str(ta.shape()));
    }
    const int64_t c = ta.cols();
    Tensor out({count, c});
    std::copy(ta.data() + begin * c, ta.data() + (begin + count) * c, out.data());
    const int64_t rows_total = ta.rows();
    return a.tape()->make_node(
        std::move(out), {a},
        [a, begin, count, c, rows_total](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({rows_total, c});
            std::copy(gout.data(), gout.data() + count * c, g.data() + begin * c);
            t.accumulate(grads, a.id(), g);
        },
        "slice_rows");
}

Var slice_cols(Var a, int64_t begin, int64_t count) {
    const Tensor& ta = a.value();
    require_rank2(ta, "slice_cols");
    if (begin < 0 || count <= 0 || begin + count > ta.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + shape_str(ta.shape()));
    }
    const int64_t r = ta.rows(), c = ta.cols();
    Tensor out({r, count});
    for (int64_t i = 0; i < r; ++i) {
        std::copy(ta.data() + i * c + begin, ta.data() + i * c + begin + count, out.data() + i * count);
    }
    return a.tape()->make_node(
        std::move(out), {a},
        [a, begin, count, r, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({r, c});
            for (int64_t i = 0; i < r; ++i) {
                std::copy(gout.data() + i * count, gout.data() + (i + 1) * count,
                          g.data() + i * c + begin);
            }
            t.accumulate(grads, a.id(), g);
        },
        "slice_cols");
}

Var repeat_rows(Var row, int64_t n) {
    const Tensor& tr = row.value();
    require_rank2(tr, "repeat_rows");
    if (tr.rows() != 1) throw DimensionError("repeat_rows: expected 1xD row, got " + shape_str(tr.shape()));
    if (n <= 0) throw DimensionError("repeat_rows: n must be positive");
    const int64_t c = tr.cols();
    Tensor out({n, c});
    for (int64_t i = 0; i < n; ++i) std::copy(tr.data(), tr.data() + c, out.data() + i * c);
    return row.tape()->make_node(
        std::move(out), {row},
        [row, n, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({1, c});
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < c; ++j) g[j] += gout.at(i, j);
            t.accumulate(grads, row.id(), g);
        },
        "repeat_rows");
}

Var mean_row_groups(Var a, const std::vector<std::vector<int64_t>>& groups) {
    const Tensor& ta = a.value();
    require_rank2(ta, "mean_row_groups");
    const int64_t c = ta.cols();
    const int64_t g_count = static_cast<int64_t>(groups.size());
    if (g_count == 0) throw DimensionError("mean_row_groups: no groups");
    Tensor out({g_count, c});
    for (int64_t g = 0; g < g_count; ++g) {
        const auto& members = groups[static_cast<size_t>(g)];
        if (members.empty()) throw DimensionError("mean_row_groups: empty group");
        for (int64_t m : members) {
            if (m < 0 || m >= ta.rows()) throw DimensionError("mean_row_groups: row index out of range");
            for (int64_t j = 0; j < c; ++j) out.at(g, j) += ta.at(m, j);
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        for (int64_t j = 0; j < c; ++j) out.at(g, j) *= inv;
    }
    const int64_t rows_total = ta.rows();
    return a.tape()->make_node(
        std::move(out), {a},
        [a, groups, rows_total, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({rows_total, c});
            for (size_t gi = 0; gi < groups.size(); ++gi) {
                const double inv = 1.0 / static_cast<double>(groups[gi].size());
                for (int64_t m : groups[gi]) {
                    for (int64_t j = 0; j < c; ++j) {
                        g.at(m, j) += gout.at(static_cast<int64_t>(gi), j) * inv;
                    }
                }
            }
            t.accumulate(grads, a.id(), g);
        },
        "mean_row_groups");
}

Var col_max(Var a) {
    const Tensor& ta = a.value();
    require_rank2(ta, "col_max");
    const int64_t r = ta.rows(), c = ta.cols();
    Tensor out({1, c});
    std::vector<int64_t> argmax(static_cast<size_t>(c), 0);
    for (int64_t j = 0; j < c; ++j) {
        double best = ta.at(0, j);
        int64_t bi = 0;
        for (int64_t i = 1; i < r; ++i) {
            if (ta.at(i, j) > best) {
                best = ta.at(i, j);
                bi = i;
            }
        }
        out[j] = best;
        argmax[static_cast<size_t>(j)] = bi;
    }
    return a.tape()->make_node(
        std::move(out), {a},
        [a, argmax, r, c](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor g({r, c});
            for (int64_t j = 0; j < c; ++j) g.at(argmax[static_cast<size_t>(j)], j) = gout[j];
            t.accumulate(grads, a.id(), g);
        },
        "col_max");
}

Var sum(Var a) {
    const Tensor& ta = a.value();
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    Shape orig = ta.shape();
    return a.tape()->make_node(
        Tensor::scalar(s), {a},
        [a, orig](Tape& t, const Tensor& gout, Gradients& grads) {
            t.accumulate(grads, a.id(), Tensor::full(orig, gout[0]));
        },
        "sum");
}

Var mean(Var a) {
    const Tensor& ta = a.value();
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    const double inv = 1.0 / static_cast<double>(ta.numel());
    Shape orig = ta.shape();
    return a.tape()->make_node(
        Tensor::scalar(s * inv), {a},
        [a, orig, inv](Tape& t, const Tensor& gout, Gradients& grads) {
            t.accumulate(grads, a.id(), Tensor::full(orig, gout[0] * inv));
        },
        "mean");
}

Var linear(Var x, Var w, Var b) {
    const Tensor& tx = x.value();
    const Tensor& tw = w.value();
    const Tensor& tb = b.value();
    require_rank2(tx, "linear");
    require_rank2(tw, "linear");
    if (tx.cols() != tw.rows() || tb.rank() != 2 || tb.rows() != 1 || tb.cols() != tw.cols()) {
        throw DimensionError("linear: incompatible shapes " + shape_str(tx.shape()) + " @ " +
                             shape_str(tw.shape()) + " + " + shape_str(tb.shape()));
    }
    const int64_t m = tx.rows(), k = tx.cols(), n = tw.cols();
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) std::copy(tb.data(), tb.data() + n, out.data() + i * n);
    matmul_acc(tx.data(), tw.data(), out.data(), m, k, n);
    return x.tape()->make_node(
        std::move(out), {x, w, b},
        [x, w, b, m, k, n](Tape& t, const Tensor& gout, Gradients& grads) {
            Tensor gx({m, k});
            matmul_bt_acc(gout.data(), w.value().data(), gx.data(), m, n, k);
            t.accumulate(grads, x.id(), gx);
            Tensor gw({k, n});
            matmul_at_acc(x.value().data(), gout.data(), gw.data(), m, k, n);
            t.accumulate(grads, w.id(), gw);
            Tensor gb({1, n});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) gb[j] += gout.at(i, j);
            t.accumulate(grads, b.id(), gb);
        },
        "linear");
}

Var layer_norm_affine(Var x, Var g, Var b, double eps) {
    const Tensor& tx = x.value();
    require_rank2(tx, "layer_norm_affine");
    const int64_t r = tx.rows(), c = tx.cols();
    const Tensor& tg = g.value();
    const Tensor& tb = b.value();
    if (tg.shape() != Shape{1, c} || tb.shape() != Shape{1, c}) {
        throw DimensionError("layer_norm_affine: affine params must be 1x" + std::to_string(c));
    }
    Tensor norm({r, c});
    Tensor inv_std({r, 1});
    for (int64_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += tx.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = tx.at(i, j) - mu;
            var += d * d;
        }
        const double is = 1.0 / std::sqrt(var / static_cast<double>(c) + eps);
        inv_std[i] = is;
        for (int64_t j = 0; j < c; ++j) norm.at(i, j) = (tx.at(i, j) - mu) * is;
    }
    Tensor out({r, c});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = norm.at(i, j) * tg[j] + tb[j];
    return x.tape()->make_node(
        std::move(out), {x, g, b},
        [x, g, b, norm, inv_std, r, c](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& tg = g.value();
            Tensor gg({1, c}), gb({1, c}), gx({r, c});
            for (int64_t i = 0; i < r; ++i) {
                double mean_h = 0.0, mean_hy = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    const double go = gout.at(i, j);
                    gb[j] += go;
                    gg[j] += go * norm.at(i, j);
                    const double h = go * tg[j];  // gradient into the normalized value
                    mean_h += h;
                    mean_hy += h * norm.at(i, j);
                }
                mean_h /= static_cast<double>(c);
                mean_hy /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) {
                    const double h = gout.at(i, j) * tg[j];
                    gx.at(i, j) = inv_std[i] * (h - mean_h - norm.at(i, j) * mean_hy);
                }
            }
            t.accumulate(grads, x.id(), gx);
            t.accumulate(grads, g.id(), gg);
            t.accumulate(grads, b.id(), gb);
        },
        "layer_norm_affine");
}

Var mha_core(Var q, Var k, Var v, int heads) {
    const Tensor& tq = q.value();
    const Tensor& tk = k.value();
    const Tensor& tv = v.value();
    require_rank2(tq, "mha_core");
    require_rank2(tk, "mha_core");
    require_rank2(tv, "mha_core");
    const int64_t n = tq.rows(), d = tq.cols(), m = tk.rows();
    if (tk.cols() != d || tv.cols() != d || tv.rows() != m) {
        throw DimensionError("mha_core: shape mismatch " + shape_str(tq.shape()) + ", " +
                             shape_str(tk.shape()) + ", " + shape_str(tv.shape()));
    }
    if (heads < 1 || d % heads != 0) throw DimensionError("mha_core: dim not divisible by heads");
    const int64_t hd = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs[h] is the n x m attention matrix of head h, saved for backward
    std::vector<Tensor> probs(static_cast<size_t>(heads));
    Tensor out({n, d});
    for (int h = 0; h < heads; ++h) {
        Tensor& p = probs[static_cast<size_t>(h)];
        p = Tensor({n, m});
        const int64_t off = h * hd;
        for (int64_t i = 0; i < n; ++i) {
            const double* qrow = tq.data() + i * d + off;
            double mx = -1e300;
            for (int64_t j = 0; j < m; ++j) {
                const double* krow = tk.data() + j * d + off;
                double s = 0.0;
                for (int64_t e = 0; e < hd; ++e) s += qrow[e] * krow[e];
                s *= inv_sqrt;
                p.at(i, j) = s;
                mx = std::max(mx, s);
            }
            double denom = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                const double e = std::exp(p.at(i, j) - mx);
                p.at(i, j) = e;
                denom += e;
            }
            double* orow = out.data() + i * d + off;
            for (int64_t j = 0; j < m; ++j) {
                const double w = p.at(i, j) / denom;
                p.at(i, j) = w;
                const double* vrow = tv.data() + j * d + off;
                for (int64_t e = 0; e < hd; ++e) orow[e] += w * vrow[e];
            }
        }
    }
    return q.tape()->make_node(
        std::move(out), {q, k, v},
        [q, k, v, probs, n, m, d, hd, heads, inv_sqrt](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& tq = q.value();
            const Tensor& tk = k.value();
            const Tensor& tv = v.value();
            Tensor gq({n, d}), gk({m, d}), gv({m, d});
            std::vector<double> gs(static_cast<size_t>(m));
            for (int h = 0; h < heads; ++h) {
                const Tensor& p = probs[static_cast<size_t>(h)];
                const int64_t off = h * hd;
                for (int64_t i = 0; i < n; ++i) {
                    const double* gorow = gout.data() + i * d + off;
                    // gV += p^T go ; gS = go V^T
                    double dot = 0.0;
                    for (int64_t j = 0; j < m; ++j) {
                        const double* vrow = tv.data() + j * d + off;
                        double s = 0.0;
                        for (int64_t e = 0; e < hd; ++e) s += gorow[e] * vrow[e];
                        gs[static_cast<size_t>(j)] = s;
                        dot += s * p.at(i, j);
                        double* gvrow = gv.data() + j * d + off;
                        const double w = p.at(i, j);
                        for (int64_t e = 0; e < hd; ++e) gvrow[e] += w * gorow[e];
                    }
                    // softmax backward, then distribute through Q K^T / sqrt
                    const double* qrow = tq.data() + i * d + off;
                    double* gqrow = gq.data() + i * d + off;
                    for (int64_t j = 0; j < m; ++j) {
                        const double gz = p.at(i, j) * (gs[static_cast<size_t>(j)] - dot) * inv_sqrt;
                        if (gz == 0.0) continue;
                        const double* krow = tk.data() + j * d + off;
                        double* gkrow = gk.data() + j * d + off;
                        for (int64_t e = 0; e < hd; ++e) {
                            gqrow[e] += gz * krow[e];
                            gkrow[e] += gz * qrow[e];
                        }
                    }
                }
            }
            t.accumulate(grads, q.id(), gq);
            t.accumulate(grads, k.id(), gk);
            t.accumulate(grads, v.id(), gv);
        },
        "mha_core");
}

Var bce_with_logits(Var logits, Var targets) {
    const Tensor& z = logits.value();
    const Tensor& y = targets.value();
    if (!z.same_shape(y)) {
        throw DimensionError("bce_with_logits: shape mismatch " + shape_str(z.shape()) + " vs " +
                             shape_str(y.shape()));
    }
    Tensor out(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i) {
        // max(z,0) - z*y + log(1 + exp(-|z|))
        out[i] = std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::fabs(z[i])));
    }
    return logits.tape()->make_node(
        std::move(out), {logits, targets},
        [logits, targets](Tape& t, const Tensor& gout, Gradients& grads) {
            const Tensor& z = logits.value();
            const Tensor& y = targets.value();
            Tensor gz(z.shape());
            Tensor gy(y.shape());
            for (int64_t i = 0; i < z.numel(); ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-z[i]));
                gz[i] = gout[i] * (sig - y[i]);
                gy[i] = gout[i] * (-z[i]);
            }
            t.accumulate(grads, logits.id(), gz);
            t.accumulate(grads, targets.id(), gy);
        },
        "bce_with_logits");
}

}  // namespace eta::ad
