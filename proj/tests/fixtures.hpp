#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "dctnet/train.hpp"

namespace fixture {

/// Stem plus one DCT-P stage on 8x8 inputs; trains in well under a second per epoch.
inline dctnet::ModelSpec tiny_spec(dctnet::BlockKind kind = dctnet::BlockKind::dctp_v1) {
    dctnet::ModelSpec s;
    s.name = "tiny";
    s.in_height = s.in_width = 8;
    s.stem_channels = 4;
    s.stages = {{"stage", kind, 4, 8, 1, 1, {}, {}, dctnet::Nonlinearity::soft_threshold}};
    s.classes = 10;
    return s;
}

inline dctnet::TrainConfig tiny_config(std::size_t epochs) {
    dctnet::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.milestones = {2};
    c.lr = 0.05;
    c.seed = 7;
    return c;
}

inline dctnet::Dataset tiny_data(std::size_t n, std::uint64_t seed) { return dctnet::make_synthetic(n, seed, 10, 8); }

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("dctnet_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Log lines with the wall_time field removed.
inline std::vector<std::string> log_without_time(const std::filesystem::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        auto j = nlohmann::json::parse(line);
        j.erase("wall_time");
        out.push_back(j.dump());
    }
    return out;
}

}  // namespace fixture
