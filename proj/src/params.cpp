#include "eta/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace eta::ad {

namespace {

constexpr char kMagic[4] = {'E', 'T', 'A', '1'};
constexpr uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("checkpoint: truncated file");
    return v;
}

}  // namespace

Tensor& ParamStore::at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

void ParamStore::insert(const std::string& name, Tensor value) {
    if (values_.count(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    values_.emplace(name, std::move(value));
}

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    for (const auto& [name, tensor] : values_) {
        write_pod(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(os, static_cast<uint32_t>(tensor.rank()));
        for (int64_t e : tensor.shape()) write_pod(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!os) throw Error("checkpoint: write failed for '" + path + "'");
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw Error("checkpoint: bad magic in '" + path + "'");
    }
    const uint8_t version = read_pod<uint8_t>(is);
    if (version != kVersion) {
        throw Error("checkpoint: unsupported version " + std::to_string(version));
    }
    ParamStore store;
    while (true) {
        uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw Error("checkpoint: truncated file");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = read_pod<uint32_t>(is);
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(read_pod<uint64_t>(is)));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!is) throw Error("checkpoint: truncated tensor payload for '" + name + "'");
        store.insert(name, std::move(t));
    }
    return store;
}

Var BoundParams::operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = tape_->leaf(store_->at(name));
    vars_.emplace(name, v);
    return v;
}

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "grad_check: max rel err " << max_rel_err << " across " << entries.size() << " params\n";
    for (const Entry& e : entries) {
        os << "  " << e.name << ": " << e.max_rel_err << " (" << e.coords_checked << " coords)\n";
    }
    return os.str();
}

GradCheckReport grad_check(const std::function<Var(Tape&, BoundParams&)>& f, ParamStore& store,
                           const GradCheckOptions& opts) {
    // analytic pass
    Tape tape;
    BoundParams bound(tape, store);
    Var root = f(tape, bound);
    if (!root.value().is_scalar()) throw ContractError("grad_check: f must return a scalar");
    Gradients grads = tape.backward(root);

    auto eval = [&]() {
        Tape t2;
        BoundParams b2(t2, store);
        return f(t2, b2).value().item();
    };

    Rng rng(opts.sample_seed ^ 0x5eedf00dull);
    GradCheckReport report;
    for (const auto& [name, var] : bound.bound()) {
        Tensor analytic = grads.of(var);
        Tensor& value = store.at(name);
        const int64_t n = value.numel();
        std::vector<int64_t> coords;
        if (opts.coords_per_param <= 0 || opts.coords_per_param >= n) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < opts.coords_per_param; ++i) {
                coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
            }
        }
        GradCheckReport::Entry entry{name, 0.0, static_cast<int64_t>(coords.size())};
        for (int64_t i : coords) {
            const double orig = value[i];
            value[i] = orig + opts.step;
            const double up = eval();
            value[i] = orig - opts.step;
            const double down = eval();
            value[i] = orig;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double a = analytic[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denom_floor});
            entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(a - numeric) / denom);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace eta::ad
