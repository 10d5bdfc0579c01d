// dctnet command-line front end: train, eval, analyze, verify, transform, specs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dctnet/dctnet.hpp"

namespace fs = std::filesystem;
using namespace dctnet;

namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

int cmd_train(const std::string& config_path, const std::string& resume, int epochs) {
    TrainConfig cfg = train_config_from_json(read_json(config_path));
    if (!resume.empty()) cfg.resume = resume;
    if (epochs > 0) cfg.epochs = static_cast<std::size_t>(epochs);
    const TrainResult r = run_training(cfg, &std::cout);
    std::cout << "best test accuracy " << r.best_accuracy << " at epoch " << r.best_epoch << "\n";
    return 0;
}

template <typename T>
double eval_checkpoint(const Checkpoint& ck, const Dataset& data) {
    auto model = build_model<T>(checkpoint_spec(ck), 0);
    restore_model(ck, *model);
    return evaluate(*model, data);
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, std::size_t synthetic, std::uint64_t data_seed) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    Dataset data;
    if (!data_dir.empty()) data = load_cifar10(data_dir).test;
    else if (synthetic > 0) data = make_synthetic(synthetic, data_seed);
    else throw std::invalid_argument("eval: give --data DIR or --synthetic N");
    const bool f32 = !ck.parameters.empty() && ck.parameters.front().dtype == Dtype::f32;
    const double acc = f32 ? eval_checkpoint<float>(ck, data) : eval_checkpoint<double>(ck, data);
    std::printf("%s: top-1 %.4f on %zu samples (epoch %u)\n", ckpt_path.c_str(), acc, data.size(), ck.epoch);
    return 0;
}

int cmd_analyze(const std::string& spec, const std::string& baseline, const std::string& format) {
    const ModelSpec s = resolve_spec(spec);
    const CostReport r = baseline.empty() ? report(s) : report(s, resolve_spec(baseline));
    if (format == "json") std::cout << render_json(r).dump(2) << "\n";
    else std::cout << render_table(r);
    return 0;
}

std::vector<double> read_numbers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw std::runtime_error(path + ": not a number: '" + tok + "'");
        v.push_back(x);
    }
    return v;
}

int cmd_transform(const std::string& input, const std::string& output, bool inverse, std::size_t size,
                  const std::string& backend_name) {
    const std::vector<double> v = read_numbers(input);
    std::size_t n = size;
    if (n == 0) {
        n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v.size()))));
        if (n * n != v.size()) throw std::runtime_error(input + ": " + std::to_string(v.size()) + " values is not a square matrix");
    }
    if (v.size() != n * n) {
        throw std::runtime_error(input + ": expected " + std::to_string(n * n) + " values for --size " + std::to_string(n) +
                                 ", found " + std::to_string(v.size()));
    }
    const DctBackend backend = backend_name == "naive" ? DctBackend::naive_matrix : DctBackend::fast_butterfly;
    const Tensor<double> x(Shape{1, 1, n, n}, v);
    const Tensor<double> y = inverse ? idct2d(x, backend) : dct2d(x, backend);
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write " + output);
    char buf[40];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", y[i * n + j]);
            out << (j ? " " : "") << buf;
        }
        out << "\n";
    }
    return 0;
}

int cmd_specs(const std::string& dir) {
    for (const auto& [name, spec] : canonical_specs()) {
        const std::string text = to_json(spec).dump(2) + "\n";
        if (dir.empty()) {
            std::cout << name << "\n";
            continue;
        }
        fs::create_directories(dir);
        std::ofstream(fs::path(dir) / (name + ".json")) << text;
    }
    return 0;
}

// --- verify: quick self-checks against brute-force references ---------------

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

struct Check {
    std::string name;
    bool ok;
    std::string detail;
};

double naive_dct(const std::vector<double>& x, std::size_t k) {
    const double N = static_cast<double>(x.size());
    double s = 0;
    for (std::size_t n = 0; n < x.size(); ++n) s += x[n] * std::cos(std::numbers::pi / N * (n + 0.5) * k);
    return s;
}

Check verify_transforms(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    double worst = 0;
    for (std::size_t n : {1u, 2u, 4u, 7u, 8u, 16u, 32u, 56u}) {
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> x(n);
            for (auto& v : x) v = u(rng);
            const auto& plan = cached_plan<double>(n, DctBackend::fast_butterfly);
            const auto X = dct1d<double>(plan, x);
            const auto back = idct1d<double>(plan, X);
            for (std::size_t k = 0; k < n; ++k) {
                worst = std::max(worst, std::fabs(X[k] - naive_dct(x, k)));
                worst = std::max(worst, std::fabs(back[k] - x[k]));
            }
        }
    }
    return {"dct round trip and reference sums", worst < 1e-10, "max err " + sci(worst)};
}

Check verify_symmetric_convolution(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    double worst = 0;
    for (std::size_t n : {4u, 8u, 16u})
        for (std::size_t k = 1; k <= 3; ++k)
            for (int rep = 0; rep < 10; ++rep) {
                std::vector<double> x(n), w(k);
                for (auto& v : x) v = u(rng);
                for (auto& v : w) v = u(rng);
                const auto& plan = cached_plan<double>(n, DctBackend::fast_butterfly);
                const auto V = kernel_to_multipliers<double>(w, n);
                auto X = dct1d<double>(plan, x);
                for (std::size_t i = 0; i < n; ++i) X[i] *= V[i];
                const auto y = idct1d<double>(plan, X);
                const auto ref = sym_conv_spatial<double>(x, w);
                for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(y[i] - ref[i]));
            }
    return {"transform-domain filter vs spatial symmetric convolution", worst < 1e-8, "max err " + sci(worst)};
}

Check verify_gradients(std::mt19937_64& rng) {
    auto cfg = DctPerceptronConfig::square(4, 2, 2);
    cfg.shortcut = true;
    DctPerceptron<double> layer(cfg, rng);
    std::uniform_real_distribution<double> u(0.05, 0.3);
    for (auto& p : layer.pods())
        for (double& t : p.threshold->data()) t = u(rng);
    Tensor<double> x(Shape{1, 2, 4, 4});
    std::uniform_real_distribution<double> ux(-1, 1);
    for (double& v : x.data()) v = ux(rng);
    auto loss_of = [&] {
        const auto y = layer.forward(x);
        double s = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * std::sin(0.3 * static_cast<double>(i));
        return s;
    };
    Tape<double> tape;
    {
        typename Tape<double>::Scope scope(tape);
        const auto y = layer.forward(x);
        Tensor<double> wts(y.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) wts[i] = std::sin(0.3 * static_cast<double>(i));
        tape.backward(sum(mul(y, wts)));
    }
    double worst = 0;
    for (auto& p : layer.pods())
        for (auto t : p.tensors()) {
            const auto g = std::vector<double>(t.grad().begin(), t.grad().end());
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const double keep = t[i];
                t[i] = keep + 1e-6;
                const double up = loss_of();
                t[i] = keep - 1e-6;
                const double dn = loss_of();
                t[i] = keep;
                const double fd = (up - dn) / 2e-6;
                worst = std::max(worst, std::fabs(fd - g[i]) / std::max(1.0, std::fabs(fd)));
            }
        }
    return {"DCT-perceptron gradients vs central differences", worst < 1e-5, "max rel err " + sci(worst)};
}

Check verify_counts() {
    const std::vector<std::pair<std::string, Count>> want{
        {"resnet20", 272474}, {"dct_resnet20", 151514}, {"tripod_dct_resnet20", 199898}, {"resnet20_1dctp", 276826},
        {"resnet18", 11689512}, {"resnet50", 25557032}};
    std::string bad;
    for (const auto& [name, n] : want) {
        const Count got = count_params(canonical_spec(name));
        if (got != n) bad += " " + name + "=" + std::to_string(got);
    }
    return {"parameter counts of the reference architectures", bad.empty(), bad.empty() ? "exact" : "mismatch:" + bad};
}

int cmd_verify() {
    std::mt19937_64 rng(7);
    const std::vector<Check> checks{verify_transforms(rng), verify_symmetric_convolution(rng), verify_gradients(rng),
                                    verify_counts()};
    int failed = 0;
    for (const auto& c : checks) {
        std::printf("%-4s %-58s %s\n", c.ok ? "ok" : "FAIL", c.name.c_str(), c.detail.c_str());
        failed += !c.ok;
    }
    return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DCT-perceptron networks: training, evaluation, cost analysis and transform tools"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string config, resume;
    int epochs = 0;
    train->add_option("--config", config, "training config (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--resume", resume, "continue from a checkpoint");
    train->add_option("--epochs", epochs, "override the epoch count");

    auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
    std::string ckpt, data_dir;
    std::size_t synthetic = 0;
    std::uint64_t data_seed = 1235;
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_dir, "CIFAR-10 binary directory (test_batch.bin is used)");
    eval->add_option("--synthetic", synthetic, "evaluate on N synthetic samples instead");
    eval->add_option("--data-seed", data_seed, "seed of the synthetic set");

    auto* analyze = app.add_subcommand("analyze", "parameter and MAC counts");
    std::string spec, baseline, format = "table";
    analyze->add_option("--spec", spec, "spec file or canonical name")->required();
    analyze->add_option("--baseline", baseline, "baseline spec file or canonical name");
    analyze->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));

    auto* verify = app.add_subcommand("verify", "run the built-in reference checks");

    auto* transform = app.add_subcommand("transform", "2D DCT of a whitespace-separated matrix");
    std::string input, output, backend = "fast";
    bool inverse = false;
    std::size_t size = 0;
    transform->add_option("--input", input, "input matrix file")->required()->check(CLI::ExistingFile);
    transform->add_option("--output", output, "output file")->required();
    transform->add_flag("--inverse", inverse, "apply the inverse transform");
    transform->add_option("--size", size, "matrix side length (inferred when omitted)");
    transform->add_option("--backend", backend, "fast or naive")->check(CLI::IsMember({"fast", "naive"}));

    auto* specs = app.add_subcommand("specs", "list canonical specs, or write them as JSON");
    std::string specs_dir;
    specs->add_option("--dir", specs_dir, "output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(config, resume, epochs);
        if (*eval) return cmd_eval(ckpt, data_dir, synthetic, data_seed);
        if (*analyze) return cmd_analyze(spec, baseline, format);
        if (*verify) return cmd_verify();
        if (*transform) return cmd_transform(input, output, inverse, size, backend);
        if (*specs) return cmd_specs(specs_dir);
    } catch (const std::exception& e) {
        std::cerr << "dctnet: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
