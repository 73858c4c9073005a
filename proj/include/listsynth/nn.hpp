#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "listsynth/common.hpp"
#include "listsynth/tensor.hpp"

namespace listsynth {

using json = nlohmann::ordered_json;

// Ordered name -> tensor map holding one model's trainable parameters.
template <class F>
class ParamStore {
public:
    uint64_t init_seed = 0;

    // Var is a shared handle; returning it by value keeps callers safe from
    // vector reallocation.
    ag::Var<F> add(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw ShapeError("duplicate parameter " + name);
        items_.emplace_back(name, ag::leaf<F>(rows, cols));
        index_[name] = items_.size() - 1;
        return items_.back().second;
    }

    ag::Var<F> at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("missing parameter " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<std::pair<std::string, ag::Var<F>>>& items() { return items_; }
    const std::vector<std::pair<std::string, ag::Var<F>>>& items() const { return items_; }

    void zero_grads() {
        for (auto& [name, v] : items_) v.n->grad.clear();
    }

    size_t scalar_count() const {
        size_t total = 0;
        for (const auto& [name, v] : items_) total += v.size();
        return total;
    }

private:
    std::vector<std::pair<std::string, ag::Var<F>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Uniform fan-in scaling for linear layers, normal(0, 1/sqrt(dim)) for
// embedding tables.
template <class F>
void init_linear(ag::Var<F> w, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (F& v : w.values()) v = static_cast<F>((rng.next_double() * 2.0 - 1.0) * bound);
}

template <class F>
void init_bias(ag::Var<F> b, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (F& v : b.values()) v = static_cast<F>((rng.next_double() * 2.0 - 1.0) * bound);
}

template <class F>
void init_embedding(ag::Var<F> table, Rng& rng) {
    double std_dev = 1.0 / std::sqrt(static_cast<double>(table.cols()));
    for (F& v : table.values()) v = static_cast<F>(rng.normal(0.0, std_dev));
}

template <class F>
void add_linear(ParamStore<F>& store, const std::string& name, int in, int out, Rng& rng) {
    init_linear(store.add(name + ".w", in, out), rng);
    init_bias(store.add(name + ".b", 1, out), in, rng);
}

template <class F>
ag::Var<F> linear(const ParamStore<F>& store, const std::string& name, const ag::Var<F>& x) {
    return ag::add_rowvec(ag::matmul(x, store.at(name + ".w")), store.at(name + ".b"));
}

// ---------------------------------------------------------------------------
// Optimizers and schedulers
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    enum class Sched { None, StepDecay, ReduceOnPlateau, Cosine, CosineWarm };

    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    Sched sched = Sched::None;
    double step_decay_factor = 0.1;
    int step_decay_every = 4;      // epochs
    int cosine_t_max = 10;
    double cosine_eta_min = 0.0;
    int cosine_warm_t0 = 10;
    double plateau_factor = 0.1;
    int plateau_patience = 10;

    static Kind kind_from_name(const std::string& s) {
        if (s == "sgd") return Kind::Sgd;
        if (s == "adam") return Kind::Adam;
        throw ConfigError("unknown optimizer '" + s + "'");
    }
    static Sched sched_from_name(const std::string& s) {
        if (s == "none") return Sched::None;
        if (s == "step") return Sched::StepDecay;
        if (s == "reduceonplateau") return Sched::ReduceOnPlateau;
        if (s == "cosine") return Sched::Cosine;
        if (s == "cosinewarm") return Sched::CosineWarm;
        throw ConfigError("unknown scheduler '" + s + "'");
    }
};

template <class F>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg), lr_(cfg.lr), plateau_lr_(cfg.lr) {}

    double lr() const { return lr_; }

    // Epoch-indexed schedules; call before an epoch's steps.
    void set_epoch(int epoch) {
        switch (cfg_.sched) {
            case OptimizerConfig::Sched::None:
                break;
            case OptimizerConfig::Sched::StepDecay:
                lr_ = cfg_.lr * std::pow(cfg_.step_decay_factor, epoch / cfg_.step_decay_every);
                break;
            case OptimizerConfig::Sched::Cosine: {
                double t = static_cast<double>(epoch % (2 * cfg_.cosine_t_max));
                if (t > cfg_.cosine_t_max) t = 2 * cfg_.cosine_t_max - t;
                lr_ = cfg_.cosine_eta_min +
                      (cfg_.lr - cfg_.cosine_eta_min) *
                          (1.0 + std::cos(3.14159265358979323846 * t / cfg_.cosine_t_max)) / 2.0;
                break;
            }
            case OptimizerConfig::Sched::CosineWarm: {
                int t = epoch % cfg_.cosine_warm_t0;
                lr_ = (cfg_.lr) * (1.0 + std::cos(3.14159265358979323846 * t / cfg_.cosine_warm_t0)) /
                      2.0;
                break;
            }
            case OptimizerConfig::Sched::ReduceOnPlateau:
                lr_ = plateau_lr_;
                break;
        }
    }

    // Plateau schedule; call once per epoch with the validation loss.
    void observe_val_loss(double loss) {
        if (cfg_.sched != OptimizerConfig::Sched::ReduceOnPlateau) return;
        if (loss < best_loss_ - 1e-12) {
            best_loss_ = loss;
            bad_epochs_ = 0;
        } else if (++bad_epochs_ > cfg_.plateau_patience) {
            plateau_lr_ *= cfg_.plateau_factor;
            bad_epochs_ = 0;
        }
        lr_ = plateau_lr_;
    }

    void step(ParamStore<F>& params) {
        ++t_;
        for (auto& [name, v] : params.items()) {
            if (v.n->grad.size() != v.size()) continue;  // no gradient this step
            switch (cfg_.kind) {
                case OptimizerConfig::Kind::Sgd:
                    for (size_t i = 0; i < v.size(); ++i)
                        v.values()[i] -= static_cast<F>(lr_) * v.n->grad[i];
                    break;
                case OptimizerConfig::Kind::Adam: {
                    auto& m = moment1_[name];
                    auto& u = moment2_[name];
                    if (m.size() != v.size()) m.assign(v.size(), 0.0);
                    if (u.size() != v.size()) u.assign(v.size(), 0.0);
                    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
                    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
                    for (size_t i = 0; i < v.size(); ++i) {
                        double g = static_cast<double>(v.n->grad[i]);
                        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                        u[i] = cfg_.beta2 * u[i] + (1.0 - cfg_.beta2) * g * g;
                        double mh = m[i] / bc1;
                        double uh = u[i] / bc2;
                        v.values()[i] -= static_cast<F>(lr_ * mh / (std::sqrt(uh) + cfg_.eps));
                    }
                    break;
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    double lr_;
    double plateau_lr_;
    int t_ = 0;
    double best_loss_ = 1e300;
    int bad_epochs_ = 0;
    std::unordered_map<std::string, std::vector<double>> moment1_;
    std::unordered_map<std::string, std::vector<double>> moment2_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCkptMagic[6] = {'L', 'S', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCkptVersion = 1;

struct Checkpoint {
    json meta;  // hyperparameter record: N, nu, q, e, Z, n_s, n_o, kind, ...
    std::vector<std::tuple<std::string, int, int, std::vector<float>>> tensors;

    const std::vector<float>& tensor(const std::string& name, int rows, int cols) const {
        for (const auto& [n, r, c, data] : tensors) {
            if (n == name) {
                if (r != rows || c != cols)
                    throw ShapeError("checkpoint tensor " + name + " has shape " +
                                     std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                                     std::to_string(rows) + "x" + std::to_string(cols));
                return data;
            }
        }
        throw ShapeError("checkpoint missing tensor " + name);
    }
};

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw VersionError("truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const json& meta,
                            const ParamStore<float>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw VersionError("cannot open " + path + " for writing");
    os.write(kCkptMagic, sizeof(kCkptMagic));
    detail::write_pod(os, kCkptVersion);
    std::string meta_str = meta.dump();
    detail::write_pod(os, static_cast<uint32_t>(meta_str.size()));
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    detail::write_pod(os, static_cast<uint32_t>(params.items().size()));
    for (const auto& [name, v] : params.items()) {
        detail::write_pod(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(os, static_cast<uint32_t>(2));  // rank
        detail::write_pod(os, static_cast<uint64_t>(v.rows()));
        detail::write_pod(os, static_cast<uint64_t>(v.cols()));
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    if (!os) throw VersionError("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw VersionError("cannot open " + path);
    char magic[sizeof(kCkptMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw VersionError(path + " is not a checkpoint");
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != kCkptVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    uint32_t meta_len = detail::read_pod<uint32_t>(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), meta_len);
    Checkpoint ckpt;
    ckpt.meta = json::parse(meta_str);
    uint32_t count = detail::read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = detail::read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = detail::read_pod<uint32_t>(is);
        if (rank != 2) throw VersionError("unsupported tensor rank");
        int rows = static_cast<int>(detail::read_pod<uint64_t>(is));
        int cols = static_cast<int>(detail::read_pod<uint64_t>(is));
        std::vector<float> data(static_cast<size_t>(rows) * static_cast<size_t>(cols));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!is) throw VersionError("truncated checkpoint tensor " + name);
        ckpt.tensors.emplace_back(name, rows, cols, std::move(data));
    }
    return ckpt;
}

// Loads checkpoint tensors into an existing store, validating every name
// and shape on both sides.
inline void restore_params(ParamStore<float>& params, const Checkpoint& ckpt) {
    if (ckpt.tensors.size() != params.items().size())
        throw ShapeError("checkpoint tensor count mismatch");
    for (auto& [name, v] : params.items()) {
        const std::vector<float>& data = ckpt.tensor(name, v.rows(), v.cols());
        std::copy(data.begin(), data.end(), v.values().begin());
    }
}

}  // namespace listsynth
