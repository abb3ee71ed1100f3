#pragma once

#include <functional>
#include <map>
#include <string>

#include "eta/tensor.hpp"

namespace eta::ad {

// Named parameter set. std::map keeps iteration order deterministic, which
// the optimizer and the checkpoint format rely on.
class ParamStore {
public:
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void insert(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return values_.count(name) > 0; }
    size_t size() const { return values_.size(); }

    std::map<std::string, Tensor>& values() { return values_; }
    const std::map<std::string, Tensor>& values() const { return values_; }

    // Checkpoint format: magic "ETA1", one version byte, then per tensor a
    // u32 name length, the name bytes, u32 rank, u64 extents, and the
    // row-major payload as 64-bit little-endian floats, until EOF.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, Tensor> values_;
};

// Per-tape view of a ParamStore: each parameter becomes a leaf Var on first
// access. After backward, grads are looked up through the recorded ids.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

    Var operator()(const std::string& name);
    const std::map<std::string, Var>& bound() const { return vars_; }
    const ParamStore& store() const { return *store_; }

private:
    Tape* tape_;
    const ParamStore* store_;
    std::map<std::string, Var> vars_;
};

struct GradCheckOptions {
    double step = 1e-6;
    // coordinates sampled per parameter tensor; 0 checks every coordinate
    int64_t coords_per_param = 0;
    // relative-error denominator floor, below which coordinates are treated
    // as zero-vs-zero
    double denom_floor = 1e-6;
    uint64_t sample_seed = 0;
};

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        int64_t coords_checked = 0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    bool ok(double tol) const { return max_rel_err < tol; }
    std::string summary() const;
};

// Compares reverse-mode gradients of a scalar function against central
// finite differences. `f` must be a pure, deterministic function of the
// store contents; the store is perturbed in place and restored.
GradCheckReport grad_check(const std::function<Var(Tape&, BoundParams&)>& f, ParamStore& store,
                           const GradCheckOptions& opts = {});

}  // namespace eta::ad
