#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dctnet/model_spec.hpp"

namespace dctnet {

using Count = std::uint64_t;

namespace cost {

inline bool is_pow2(std::size_t n) { return n != 0 && std::has_single_bit(n); }

inline Count round_real(long double v) { return static_cast<Count>(std::floor(v + 0.5L)); }

/// Multiplications of one 2D DCT of an N x N map, as tabulated:
/// 5N^2/2 log2 N + N^2/3 - 6N + 62/3.
inline long double dct2d_macs_real(std::size_t n) {
    const long double N = static_cast<long double>(n);
    return 2.5L * N * N * std::log2(N) + N * N / 3.0L - 6.0L * N + 62.0L / 3.0L;
}

/// 3x the tabulated 2D DCT cost, exact for power-of-two N.
inline std::int64_t dct2d_macs_times3(std::size_t n) {
    const auto N = static_cast<std::int64_t>(n);
    const auto lg = static_cast<std::int64_t>(std::countr_zero(n));
    // N^2 is even for N >= 2 and lg is 0 for N = 1, so the halving is exact.
    return (15 * N * N * lg) / 2 + N * N - 18 * N + 62;
}

/// Nearest-integer rounding of num / 3 for num >= 0.
inline Count round_third(std::int64_t num) {
    if (num < 0) throw std::domain_error("cost: negative MAC term");
    return static_cast<Count>((num + 1) / 3);
}

/// Tabulated DCT-P layer total with C_in = C_out = C and P pods:
/// (5N^2 log2 N + (2/3 + P) N^2 - 6N + 124/3) C + P N^2 C^2.
inline Count dctp_macs_total(std::size_t n, std::size_t c, std::size_t pods) {
    const auto N = static_cast<std::int64_t>(n);
    const auto C = static_cast<std::int64_t>(c);
    const auto P = static_cast<std::int64_t>(pods);
    if (is_pow2(n)) {
        const auto lg = static_cast<std::int64_t>(std::countr_zero(n));
        const std::int64_t num = (15 * N * N * lg + (2 + 3 * P) * N * N - 18 * N + 124) * C + 3 * P * N * N * C * C;
        return round_third(num);
    }
    const long double Nl = static_cast<long double>(n);
    const long double v = (5.0L * Nl * Nl * std::log2(Nl) + (2.0L / 3.0L + P) * Nl * Nl - 6.0L * Nl + 124.0L / 3.0L) * C +
                          static_cast<long double>(P) * Nl * Nl * C * C;
    return round_real(v);
}

/// Sum of the component rows for shape-changing DCT-P units: DCT of the input,
/// per-pod scaling and 1x1 mixing at the output size, IDCT of the output.
inline Count dctp_macs_components(const DctPerceptronConfig& cfg) {
    const std::size_t nin = cfg.input_size();
    const std::size_t n = cfg.n;
    if (is_pow2(nin) && is_pow2(n)) {
        const std::int64_t num = dct2d_macs_times3(nin) * static_cast<std::int64_t>(cfg.c_in) +
                                 dct2d_macs_times3(n) * static_cast<std::int64_t>(cfg.c_out);
        return round_third(num) + cfg.pods * (n * n * cfg.c_in + n * n * cfg.c_in * cfg.c_out);
    }
    const long double v = dct2d_macs_real(nin) * cfg.c_in + dct2d_macs_real(n) * cfg.c_out;
    return round_real(v) + cfg.pods * (n * n * cfg.c_in + n * n * cfg.c_in * cfg.c_out);
}

}  // namespace cost

/// Trainable scalars of one planned layer.
inline Count layer_params(const LayerDesc& d) {
    switch (d.kind) {
        case LayerKind::conv: return Count(d.kernel) * d.kernel * d.c_in * d.c_out;
        case LayerKind::batch_norm: return 2 * Count(d.c_out);
        case LayerKind::linear: return Count(d.c_in) * d.c_out + d.c_out;
        case LayerKind::dct_perceptron: {
            const auto& c = d.dctp;
            const Count nn = Count(c.n) * c.n;
            Count per_pod = nn + Count(c.c_in) * c.c_out;  // scaling + 1x1 mixing
            if (c.nonlinearity != Nonlinearity::relu_bias) per_pod += nn;  // thresholds
            else per_pod += c.c_out;                                        // mixing bias
            return c.pods * per_pod;
        }
        case LayerKind::max_pool:
        case LayerKind::global_avg_pool: return 0;
    }
    return 0;
}

/// Multiply-accumulates of one planned layer (BN counted as N^2 C, linear as
/// C_in C_out, pooling as zero).
inline Count layer_macs(const LayerDesc& d) {
    const Count nn = Count(d.n_out) * d.n_out;
    switch (d.kind) {
        case LayerKind::conv: return Count(d.kernel) * d.kernel * nn * d.c_in * d.c_out;
        case LayerKind::batch_norm: return nn * d.c_out;
        case LayerKind::linear: return Count(d.c_in) * d.c_out;
        case LayerKind::dct_perceptron: {
            const auto& c = d.dctp;
            if (c.same_shape()) return cost::dctp_macs_total(c.n, c.c_in, c.pods);
            return cost::dctp_macs_components(c);
        }
        case LayerKind::max_pool:
        case LayerKind::global_avg_pool: return 0;
    }
    return 0;
}

struct CostRow {
    std::string name;
    LayerKind kind = LayerKind::conv;
    std::size_t n = 0, c_in = 0, c_out = 0;
    Count params = 0, macs = 0;
};

struct CostReport {
    static constexpr int kSchemaVersion = 1;

    std::string model;
    std::vector<CostRow> rows;
    Count total_params = 0, total_macs = 0;
    std::optional<std::string> baseline;
    Count baseline_params = 0, baseline_macs = 0;

    /// Percent reduction relative to the baseline; negative means growth.
    double params_reduction() const { return pct(total_params, baseline_params); }
    double macs_reduction() const { return pct(total_macs, baseline_macs); }

private:
    static double pct(Count v, Count base) {
        if (base == 0) return 0.0;
        return 100.0 * (static_cast<double>(base) - static_cast<double>(v)) / static_cast<double>(base);
    }
};

inline std::vector<CostRow> cost_rows(const ModelPlan& plan) {
    std::vector<CostRow> rows;
    for (const auto& d : plan.flatten()) rows.push_back({d.name, d.kind, d.n_out, d.c_in, d.c_out, layer_params(d), layer_macs(d)});
    return rows;
}

inline Count count_params(const ModelSpec& spec) {
    Count n = 0;
    for (const auto& r : cost_rows(plan_model(spec))) n += r.params;
    return n;
}

inline Count count_macs(const ModelSpec& spec) {
    Count n = 0;
    for (const auto& r : cost_rows(plan_model(spec))) n += r.macs;
    return n;
}

inline CostReport report(const ModelSpec& spec) {
    CostReport r;
    r.model = spec.name;
    r.rows = cost_rows(plan_model(spec));
    for (const auto& row : r.rows) {
        r.total_params += row.params;
        r.total_macs += row.macs;
    }
    return r;
}

inline CostReport report(const ModelSpec& spec, const ModelSpec& baseline) {
    if (spec.in_channels != baseline.in_channels || spec.in_height != baseline.in_height ||
        spec.in_width != baseline.in_width) {
        throw spec_error("report: input shape of '" + spec.name + "' differs from baseline '" + baseline.name + "'");
    }
    CostReport r = report(spec);
    const CostReport b = report(baseline);
    r.baseline = baseline.name;
    r.baseline_params = b.total_params;
    r.baseline_macs = b.total_macs;
    return r;
}

/// 3 significant figures with K/M/G suffix, e.g. 272474 -> "272K", 1816557056 -> "1.82G".
inline std::string format_sig3(Count v) {
    static const char* suffix[] = {"", "K", "M", "G", "T"};
    double x = static_cast<double>(v);
    int s = 0;
    while (x >= 1000.0 && s < 4) {
        x /= 1000.0;
        ++s;
    }
    // Rounding may carry into the next unit (999.6K -> 1.00M).
    const int digits = x >= 100.0 ? 0 : x >= 10.0 ? 1 : 2;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    if (std::stod(buf) >= 1000.0 && s < 4) {
        x /= 1000.0;
        ++s;
        std::snprintf(buf, sizeof buf, "%.2f", x);
    }
    return std::string(buf) + suffix[s];
}

inline std::string format_delta(double reduction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%%s", std::fabs(reduction), reduction >= 0 ? "\xE2\x86\x93" : "\xE2\x86\x91");
    return buf;
}

inline constexpr const char* kCostConvention =
    "MACs: conv K^2 N^2 C_in C_out, BN N^2 C, linear C_in C_out, pooling 0; "
    "DCT-P uses the tabulated layer total (real log2 N for non-power-of-two N, rounded per layer)";

inline std::string render_table(const CostReport& r) {
    std::ostringstream os;
    os << "# " << r.model << "\n# " << kCostConvention << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-15s %5s %6s %6s %12s %15s\n", "layer", "kind", "N", "C_in", "C_out",
                  "params", "MACs");
    os << line;
    for (const auto& row : r.rows) {
        std::snprintf(line, sizeof line, "%-28s %-15s %5zu %6zu %6zu %12llu %15llu\n", row.name.c_str(),
                      to_string(row.kind), row.n, row.c_in, row.c_out, static_cast<unsigned long long>(row.params),
                      static_cast<unsigned long long>(row.macs));
        os << line;
    }
    std::snprintf(line, sizeof line, "%-28s %-15s %5s %6s %6s %12llu %15llu\n", "total", "", "", "", "",
                  static_cast<unsigned long long>(r.total_params), static_cast<unsigned long long>(r.total_macs));
    os << line;
    os << "params " << format_sig3(r.total_params) << ", MACs " << format_sig3(r.total_macs);
    if (r.baseline) {
        os << "\nvs " << *r.baseline << ": params " << format_delta(r.params_reduction()) << ", MACs "
           << format_delta(r.macs_reduction());
    }
    os << "\n";
    return os.str();
}

inline nlohmann::json render_json(const CostReport& r) {
    nlohmann::json j;
    j["schema_version"] = CostReport::kSchemaVersion;
    j["model"] = r.model;
    j["convention"] = kCostConvention;
    j["layers"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        j["layers"].push_back({{"name", row.name},
                               {"kind", to_string(row.kind)},
                               {"n", row.n},
                               {"c_in", row.c_in},
                               {"c_out", row.c_out},
                               {"params", row.params},
                               {"macs", row.macs}});
    }
    j["total"] = {{"params", r.total_params},
                  {"macs", r.total_macs},
                  {"params_display", format_sig3(r.total_params)},
                  {"macs_display", format_sig3(r.total_macs)}};
    if (r.baseline) {
        j["baseline"] = {{"model", *r.baseline},
                         {"params", r.baseline_params},
                         {"macs", r.baseline_macs},
                         {"params_reduction_pct", r.params_reduction()},
                         {"macs_reduction_pct", r.macs_reduction()}};
    }
    return j;
}

}  // namespace dctnet
