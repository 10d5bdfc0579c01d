#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dctnet/checkpoint.hpp"
#include "dctnet/data.hpp"
#include "dctnet/model.hpp"
#include "dctnet/ops.hpp"

namespace dctnet {

class training_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DatasetKind { cifar10_bin, synthetic };
enum class Precision { f32, f64 };

struct TrainConfig {
    std::string spec = "desk_dct_resnet";  ///< canonical name or path to a spec JSON
    DatasetKind dataset = DatasetKind::synthetic;
    std::string data_dir;
    std::size_t train_subset = 5000;  ///< 0 keeps the whole split
    std::size_t test_subset = 0;
    std::size_t synthetic_train = 5000;
    std::size_t synthetic_test = 1000;
    std::uint64_t data_seed = 1234;
    std::size_t batch_size = 128;
    std::size_t epochs = 20;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::size_t> milestones{10, 15};
    double lr_factor = 0.1;
    std::uint64_t seed = 0;
    bool augment = true;
    std::string checkpoint_dir;
    std::string log_path;
    std::string resume;  ///< checkpoint to continue from
    Precision precision = Precision::f32;

    /// The 200-epoch schedule: drops at 82, 122 and 163, whole training split.
    static TrainConfig full_recipe() {
        TrainConfig c;
        c.dataset = DatasetKind::cifar10_bin;
        c.train_subset = 0;
        c.epochs = 200;
        c.milestones = {82, 122, 163};
        return c;
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"spec", c.spec},
            {"dataset", c.dataset == DatasetKind::cifar10_bin ? "cifar10_bin" : "synthetic"},
            {"data_dir", c.data_dir},
            {"train_subset", c.train_subset},
            {"test_subset", c.test_subset},
            {"synthetic_train", c.synthetic_train},
            {"synthetic_test", c.synthetic_test},
            {"data_seed", c.data_seed},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"milestones", c.milestones},
            {"lr_factor", c.lr_factor},
            {"seed", c.seed},
            {"augment", c.augment},
            {"checkpoint_dir", c.checkpoint_dir},
            {"log_path", c.log_path},
            {"resume", c.resume},
            {"precision", c.precision == Precision::f32 ? "float" : "double"}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    const nlohmann::json known = to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw std::invalid_argument("train config: unknown key '" + it.key() + "'");
    try {
        c.spec = j.value("spec", c.spec);
        const auto ds = j.value("dataset", std::string("synthetic"));
        if (ds == "cifar10_bin") c.dataset = DatasetKind::cifar10_bin;
        else if (ds == "synthetic") c.dataset = DatasetKind::synthetic;
        else throw std::invalid_argument("train config: unknown dataset '" + ds + "'");
        c.data_dir = j.value("data_dir", c.data_dir);
        c.train_subset = j.value("train_subset", c.train_subset);
        c.test_subset = j.value("test_subset", c.test_subset);
        c.synthetic_train = j.value("synthetic_train", c.synthetic_train);
        c.synthetic_test = j.value("synthetic_test", c.synthetic_test);
        c.data_seed = j.value("data_seed", c.data_seed);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.lr = j.value("lr", c.lr);
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.milestones = j.value("milestones", c.milestones);
        c.lr_factor = j.value("lr_factor", c.lr_factor);
        c.seed = j.value("seed", c.seed);
        c.augment = j.value("augment", c.augment);
        c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
        c.log_path = j.value("log_path", c.log_path);
        c.resume = j.value("resume", c.resume);
        const auto p = j.value("precision", std::string("float"));
        if (p == "float") c.precision = Precision::f32;
        else if (p == "double") c.precision = Precision::f64;
        else throw std::invalid_argument("train config: precision must be 'float' or 'double'");
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    if (c.batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
    return c;
}

/// Step schedule: the base rate multiplied by `factor` once per milestone reached.
inline double lr_at(std::size_t epoch, double base, const std::vector<std::size_t>& milestones, double factor) {
    double lr = base;
    for (std::size_t m : milestones)
        if (epoch >= m) lr *= factor;
    return lr;
}

/// SGD with momentum and L2 weight decay: v <- mu v + (g + wd theta); theta <- theta - lr v.
/// Non-negative parameters are clamped after each step.
template <typename T>
class Sgd {
public:
    Sgd(ParameterRegistry<T>& registry, double momentum, double weight_decay)
        : registry_(registry), momentum_(momentum), weight_decay_(weight_decay) {
        for (const auto& p : registry_.parameters()) velocity_.push_back(Tensor<T>::zeros(p.tensor.shape()));
    }

    void step(double lr) {
        auto& ps = registry_.parameters();
        const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto theta = ps[i].tensor.data();
            auto g = ps[i].tensor.grad();
            auto v = velocity_[i].data();
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const T gk = g.empty() ? T(0) : g[k];
                v[k] = mu * v[k] + (gk + wd * theta[k]);
                theta[k] -= eta * v[k];
            }
        }
        registry_.project();
    }

    std::vector<Tensor<T>>& velocity() noexcept { return velocity_; }

private:
    ParameterRegistry<T>& registry_;
    double momentum_, weight_decay_;
    std::vector<Tensor<T>> velocity_;
};

/// Worker count from DCTNET_THREADS (default: hardware concurrency, at least 1).
inline std::size_t worker_count() {
    if (const char* env = std::getenv("DCTNET_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Top-1 accuracy in eval mode; ties go to the lowest class index.
/// Batches are spread over DCTNET_THREADS workers.
template <typename T>
double evaluate(BuiltModel<T>& model, const Dataset& data, std::size_t batch_size = 256) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const std::size_t batches = (data.size() + batch_size - 1) / batch_size;
    std::vector<std::size_t> correct(batches, 0);
    auto run = [&](std::size_t b) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b * batch_size; i < std::min(data.size(), (b + 1) * batch_size); ++i) idx.push_back(i);
        const Tensor<T> logits = model.forward(make_batch<T>(data, idx), Mode::eval);
        const auto pred = argmax_classes(logits);
        for (std::size_t k = 0; k < idx.size(); ++k) correct[b] += pred[k] == data.labels[idx[k]];
    };
    const std::size_t workers = std::min(worker_count(), batches);
    if (workers <= 1) {
        for (std::size_t b = 0; b < batches; ++b) run(b);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t b = w; b < batches; b += workers) run(b);
            });
        for (auto& t : pool) t.join();
    }
    return static_cast<double>(std::accumulate(correct.begin(), correct.end(), std::size_t{0})) /
           static_cast<double>(data.size());
}

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0, train_acc = 0, test_acc = 0, lr = 0, wall_time = 0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},         {"loss", r.loss}, {"train_acc", r.train_acc}, {"test_acc", r.test_acc},
            {"lr", r.lr},               {"wall_time", r.wall_time}};
}

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_accuracy = 0;
    std::size_t best_epoch = 0;
};

template <typename T>
Checkpoint make_checkpoint(BuiltModel<T>& model, Sgd<T>& opt, std::size_t epoch, double best_acc, std::size_t best_epoch,
                           const std::mt19937_64& rng) {
    Checkpoint c;
    c.spec_hash = spec_hash(model.spec());
    c.spec_json = to_json(model.spec()).dump();
    c.epoch = static_cast<std::uint32_t>(epoch);
    c.best_accuracy = best_acc;
    c.best_epoch = static_cast<std::uint32_t>(best_epoch);
    std::ostringstream rs;
    rs << rng;
    c.rng_state = rs.str();
    c.parameters = to_arrays(model.registry().parameters());
    c.buffers = to_arrays(model.registry().buffers());
    const auto& ps = model.registry().parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) c.velocity.push_back(to_array(ps[i].name, opt.velocity()[i]));
    return c;
}

namespace detail {

template <typename T>
std::string parameter_norms(const ParameterRegistry<T>& reg) {
    std::ostringstream os;
    for (const auto& p : reg.parameters()) {
        double s = 0, g = 0;
        for (T v : p.tensor.data()) s += static_cast<double>(v) * static_cast<double>(v);
        for (T v : p.tensor.grad()) g += static_cast<double>(v) * static_cast<double>(v);
        os << "  " << p.name << " |w|=" << std::sqrt(s) << " |g|=" << std::sqrt(g) << "\n";
    }
    return os.str();
}

inline void console_header(std::ostream& os) {
    os << std::setw(6) << "epoch" << std::setw(12) << "loss" << std::setw(11) << "train_acc" << std::setw(10)
       << "test_acc" << std::setw(10) << "lr" << std::setw(10) << "time_s" << "\n";
}

inline void console_row(std::ostream& os, const EpochRecord& r) {
    const std::ios_base::fmtflags flags = os.flags();
    const std::streamsize prec = os.precision();
    os << std::setw(6) << r.epoch << std::setw(12) << std::fixed << std::setprecision(5) << r.loss << std::setw(11)
       << std::setprecision(4) << r.train_acc << std::setw(10) << r.test_acc << std::setw(10) << std::setprecision(5)
       << r.lr << std::setw(10) << std::setprecision(1) << r.wall_time << "\n";
    os.flags(flags);
    os.precision(prec);
}

}  // namespace detail

/// Runs SGD over `train_set`; logs one JSON line per epoch, keeps last.ckpt and
/// best.ckpt (highest test accuracy) in the checkpoint directory.
template <typename T>
TrainResult train(const TrainConfig& cfg, const ModelSpec& spec, const Dataset& train_set, const Dataset& test_set,
                  std::ostream* console = nullptr) {
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
    auto model = build_model<T>(spec, cfg.seed);
    Sgd<T> opt(model->registry(), cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    TrainResult result;
    std::size_t start = 0;
    if (!cfg.resume.empty()) {
        const Checkpoint ck = load_checkpoint(cfg.resume);
        restore_model(ck, *model);
        const auto& ps = model->registry().parameters();
        if (ck.velocity.size() != ps.size()) throw checkpoint_error("velocity: array count does not match the model");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (ck.velocity[i].name != ps[i].name) throw checkpoint_error("velocity: unexpected array '" + ck.velocity[i].name + "'");
            from_array(ck.velocity[i], opt.velocity()[i]);
        }
        std::istringstream rs(ck.rng_state);
        rs >> rng;
        start = ck.epoch;
        result.best_accuracy = ck.best_accuracy;
        result.best_epoch = ck.best_epoch;
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, cfg.resume.empty() ? std::ios::trunc : std::ios::app);
        if (!log) throw std::runtime_error("train: cannot open log " + cfg.log_path);
    }
    if (console) detail::console_header(*console);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg.lr, cfg.milestones, cfg.lr_factor);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t b0 = 0, bi = 0; b0 < order.size(); b0 += cfg.batch_size, ++bi) {
            const std::span<const std::size_t> idx(order.data() + b0, std::min(cfg.batch_size, order.size() - b0));
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
            const Tensor<T> x = make_batch<T>(train_set, idx, cfg.augment ? &rng : nullptr);

            Tape<T> tape;
            typename Tape<T>::Scope scope(tape);
            const Tensor<T> logits = model->forward(x, Mode::train);
            const Tensor<T> loss = softmax_cross_entropy(logits, std::span<const int>(labels));
            model->registry().zero_grad();
            tape.backward(loss);
            if (!std::isfinite(static_cast<double>(loss.item()))) {
                throw training_error("non-finite loss " + std::to_string(static_cast<double>(loss.item())) + " at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(bi) + "; parameter norms:\n" +
                                     detail::parameter_norms(model->registry()));
            }
            opt.step(lr);

            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
            const auto pred = argmax_classes(logits);
            for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == labels[k];
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(order.size());
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        rec.test_acc = test_set.size() ? evaluate(*model, test_set) : 0.0;
        rec.lr = lr;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);

        const bool best = epoch == 0 || rec.test_acc > result.best_accuracy;
        if (best) {
            result.best_accuracy = rec.test_acc;
            result.best_epoch = epoch;
        }
        if (log) log << to_json(rec).dump() << "\n" << std::flush;
        if (console) detail::console_row(*console, rec);
        if (!cfg.checkpoint_dir.empty()) {
            const std::filesystem::path dir(cfg.checkpoint_dir);
            const Checkpoint ck = make_checkpoint(*model, opt, epoch + 1, result.best_accuracy, result.best_epoch, rng);
            save_checkpoint(dir / "last.ckpt", ck);
            if (best) save_checkpoint(dir / "best.ckpt", ck);
        }
    }
    return result;
}

/// Resolves `spec` as a canonical name or a JSON file path.
inline ModelSpec resolve_spec(const std::string& spec) {
    if (std::filesystem::exists(spec)) {
        std::ifstream in(spec);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw spec_error(spec + ": " + e.what());
        }
        return spec_from_json(j);
    }
    return canonical_spec(spec);
}

inline std::pair<Dataset, Dataset> load_datasets(const TrainConfig& cfg) {
    if (cfg.dataset == DatasetKind::synthetic) {
        return {make_synthetic(cfg.synthetic_train, cfg.data_seed), make_synthetic(cfg.synthetic_test, cfg.data_seed + 1)};
    }
    if (cfg.data_dir.empty()) throw data_error("train config: dataset cifar10_bin needs data_dir");
    CifarSplit s = load_cifar10(cfg.data_dir);
    return {s.train.head(cfg.train_subset), s.test.head(cfg.test_subset)};
}

/// Loads spec and data from the config and trains at the configured precision.
inline TrainResult run_training(const TrainConfig& cfg, std::ostream* console = nullptr) {
    const ModelSpec spec = resolve_spec(cfg.spec);
    const auto [train_set, test_set] = load_datasets(cfg);
    if (cfg.precision == Precision::f64) return train<double>(cfg, spec, train_set, test_set, console);
    return train<float>(cfg, spec, train_set, test_set, console);
}

}  // namespace dctnet
