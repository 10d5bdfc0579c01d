#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/tensor.hpp"

namespace dctnet {

class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Images stored channel-planar (C,H,W) per sample, already normalized.
struct Dataset {
    std::size_t channels = 3, height = 32, width = 32;
    std::vector<float> pixels;
    std::vector<int> labels;
    std::size_t classes = 10;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return channels * height * width; }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }

    /// First `n` samples (or all when n is 0 or too large).
    Dataset head(std::size_t n) const {
        Dataset d = *this;
        if (n == 0 || n >= size()) return d;
        d.labels.resize(n);
        d.pixels.resize(n * image_size());
        return d;
    }
};

struct CifarSplit {
    Dataset train, test;
};

inline constexpr std::array<float, 3> kCifarMean{0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd{0.2023f, 0.1994f, 0.2010f};
inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

inline float cifar_normalize(std::uint8_t raw, std::size_t channel) {
    return (static_cast<float>(raw) / 255.0f - kCifarMean[channel]) / kCifarStd[channel];
}

/// Parses one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.
inline void append_cifar_batch(const std::filesystem::path& file, Dataset& out) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw data_error("cifar10: cannot open " + file.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t expected = kCifarRecord * kCifarRecordsPerFile;
    if (bytes.size() != expected) {
        const std::size_t whole = bytes.size() / kCifarRecord;
        throw data_error("cifar10: " + file.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected) + "; record " + std::to_string(whole) + " at byte offset " +
                         std::to_string(whole * kCifarRecord) + " is incomplete or extra (" +
                         std::to_string(bytes.size() - whole * kCifarRecord) + " trailing bytes)");
    }
    out.pixels.reserve(out.pixels.size() + kCifarRecordsPerFile * 3072);
    for (std::size_t r = 0; r < kCifarRecordsPerFile; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
        if (rec[0] > 9) {
            throw data_error("cifar10: " + file.string() + " label " + std::to_string(rec[0]) + " out of range at byte offset " +
                             std::to_string(r * kCifarRecord));
        }
        out.labels.push_back(rec[0]);
        for (std::size_t i = 0; i < 3072; ++i) out.pixels.push_back(cifar_normalize(rec[1 + i], i / 1024));
    }
}

/// Loads data_batch_1..5.bin and test_batch.bin from `dir` (or its
/// cifar-10-batches-bin subdirectory).
inline CifarSplit load_cifar10(const std::filesystem::path& dir) {
    std::filesystem::path root = dir;
    if (!std::filesystem::exists(root / "test_batch.bin") && std::filesystem::exists(root / "cifar-10-batches-bin")) {
        root /= "cifar-10-batches-bin";
    }
    std::vector<std::string> missing;
    for (int i = 1; i <= 5; ++i)
        if (!std::filesystem::exists(root / ("data_batch_" + std::to_string(i) + ".bin")))
            missing.push_back("data_batch_" + std::to_string(i) + ".bin");
    if (!std::filesystem::exists(root / "test_batch.bin")) missing.push_back("test_batch.bin");
    if (!missing.empty()) {
        std::string m;
        for (const auto& f : missing) m += " " + f;
        throw data_error("cifar10: missing in " + root.string() + ":" + m);
    }
    CifarSplit s;
    for (int i = 1; i <= 5; ++i) append_cifar_batch(root / ("data_batch_" + std::to_string(i) + ".bin"), s.train);
    append_cifar_batch(root / "test_batch.bin", s.test);
    return s;
}

/// Class-conditional Gaussian blobs on a noisy background. Each class has a
/// fixed centre and colour; samples jitter the centre and width.
inline Dataset make_synthetic(std::size_t count, std::uint64_t seed, std::size_t classes = 10, std::size_t size = 32) {
    Dataset d;
    d.height = d.width = size;
    d.classes = classes;
    std::mt19937_64 proto(0x5eed'b10bull);
    std::uniform_real_distribution<double> pos(0.2 * size, 0.8 * size), col(-1.0, 1.0);
    std::vector<std::array<double, 5>> centres(classes);
    for (auto& c : centres) c = {pos(proto), pos(proto), col(proto), col(proto), col(proto)};

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.5), jitter(0.0, 0.12 * size);
    std::uniform_real_distribution<double> width(0.10 * size, 0.18 * size);
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    d.pixels.resize(count * d.image_size());
    d.labels.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
        const int y = label(rng);
        d.labels[s] = y;
        const auto& c = centres[static_cast<std::size_t>(y)];
        const double cy = c[0] + jitter(rng), cx = c[1] + jitter(rng), sigma = width(rng);
        float* img = d.pixels.data() + s * d.image_size();
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t i = 0; i < size; ++i)
                for (std::size_t j = 0; j < size; ++j) {
                    const double r2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                    const double blob = 2.0 * c[2 + ch] * std::exp(-r2 / (2 * sigma * sigma));
                    img[(ch * size + i) * size + j] = static_cast<float>(blob + noise(rng));
                }
    }
    return d;
}

/// Zero-pads by `pad`, takes the crop at (dy, dx) of the padded image and optionally flips it horizontally.
inline void crop_flip(std::span<const float> src, std::span<float> dst, std::size_t channels, std::size_t size,
                      std::size_t pad, std::size_t dy, std::size_t dx, bool flip) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = 0; j < size; ++j) {
                const std::size_t jj = flip ? size - 1 - j : j;
                const auto si = static_cast<std::ptrdiff_t>(i + dy) - static_cast<std::ptrdiff_t>(pad);
                const auto sj = static_cast<std::ptrdiff_t>(jj + dx) - static_cast<std::ptrdiff_t>(pad);
                float v = 0.0f;
                if (si >= 0 && sj >= 0 && si < static_cast<std::ptrdiff_t>(size) && sj < static_cast<std::ptrdiff_t>(size))
                    v = src[(c * size + static_cast<std::size_t>(si)) * size + static_cast<std::size_t>(sj)];
                dst[(c * size + i) * size + j] = v;
            }
}

/// Pad 4, uniform random crop back to size, 50% horizontal flip.
template <typename Rng>
void augment(std::span<const float> src, std::span<float> dst, std::size_t channels, std::size_t size, Rng& rng) {
    constexpr std::size_t pad = 4;
    std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
    const std::size_t dy = off(rng), dx = off(rng);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    crop_flip(src, dst, channels, size, pad, dy, dx, flip);
}

/// Gathers samples `idx` into a (B,C,H,W) tensor, augmenting when `rng` is given.
template <typename T, typename Rng = std::mt19937_64>
Tensor<T> make_batch(const Dataset& d, std::span<const std::size_t> idx, Rng* rng = nullptr) {
    Tensor<T> x(Shape{idx.size(), d.channels, d.height, d.width});
    std::vector<float> tmp(d.image_size());
    T* out = x.raw();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::span<const float> img = d.image(idx[b]);
        if (rng) {
            augment(img, std::span<float>(tmp), d.channels, d.height, *rng);
            img = tmp;
        }
        std::transform(img.begin(), img.end(), out + b * d.image_size(), [](float v) { return static_cast<T>(v); });
    }
    return x;
}

}  // namespace dctnet
