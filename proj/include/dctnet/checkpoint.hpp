#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/model.hpp"
#include "dctnet/model_spec.hpp"

namespace dctnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

struct NamedArray {
    std::string name;
    Dtype dtype = Dtype::f64;
    Shape shape;
    std::vector<std::uint8_t> bytes;

    bool operator==(const NamedArray&) const = default;
};

/// Binary layout: "DCTP", u32 version, u64 spec hash, spec JSON, u32 epoch,
/// f64 best accuracy, u32 best epoch, RNG text state, then three array
/// sections (parameters, buffers, optimizer velocity).
struct Checkpoint {
    static constexpr char kMagic[4] = {'D', 'C', 'T', 'P'};
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::uint64_t spec_hash = 0;
    std::string spec_json;
    std::uint32_t epoch = 0;  ///< completed epochs
    double best_accuracy = 0;
    std::uint32_t best_epoch = 0;
    std::string rng_state;
    std::vector<NamedArray> parameters, buffers, velocity;

    bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    template <typename U>
    void pod(U v) {
        os_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void array(const NamedArray& a) {
        str(a.name);
        pod(static_cast<std::uint8_t>(a.dtype));
        for (std::uint64_t d : {a.shape.n, a.shape.c, a.shape.h, a.shape.w}) pod(d);
        pod<std::uint64_t>(a.bytes.size());
        os_.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    }
    void section(const std::vector<NamedArray>& v) {
        pod<std::uint64_t>(v.size());
        for (const auto& a : v) array(a);
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}
    template <typename U>
    U pod() {
        U v{};
        read(&v, sizeof v);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        check_len(n);
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    NamedArray array() {
        NamedArray a;
        a.name = str();
        const auto dt = pod<std::uint8_t>();
        if (dt > 1) fail("unknown dtype " + std::to_string(dt) + " for array '" + a.name + "'");
        a.dtype = static_cast<Dtype>(dt);
        a.shape.n = pod<std::uint64_t>();
        a.shape.c = pod<std::uint64_t>();
        a.shape.h = pod<std::uint64_t>();
        a.shape.w = pod<std::uint64_t>();
        const auto n = pod<std::uint64_t>();
        check_len(n);
        const std::size_t esize = a.dtype == Dtype::f32 ? 4 : 8;
        if (n != a.shape.numel() * esize) fail("array '" + a.name + "' byte length does not match shape " + a.shape.str());
        a.bytes.resize(n);
        read(a.bytes.data(), n);
        return a;
    }
    std::vector<NamedArray> section() {
        const auto n = pod<std::uint64_t>();
        check_len(n);
        std::vector<NamedArray> v;
        for (std::uint64_t i = 0; i < n; ++i) v.push_back(array());
        return v;
    }
    [[noreturn]] void fail(const std::string& msg) const { throw checkpoint_error("checkpoint " + source_ + ": " + msg); }
    std::streamoff offset() const { return is_.tellg(); }

private:
    void read(void* dst, std::size_t n) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated");
    }
    void check_len(std::uint64_t n) const {
        if (n > (std::uint64_t{1} << 40)) fail("implausible length " + std::to_string(n));
    }
    std::istream& is_;
    std::string source_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
    detail::Writer w(os);
    os.write(Checkpoint::kMagic, 4);
    w.pod(c.version);
    w.pod(c.spec_hash);
    w.str(c.spec_json);
    w.pod(c.epoch);
    w.pod(c.best_accuracy);
    w.pod(c.best_epoch);
    w.str(c.rng_state);
    w.section(c.parameters);
    w.section(c.buffers);
    w.section(c.velocity);
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& source = "<stream>") {
    detail::Reader r(is, source);
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, Checkpoint::kMagic, 4) != 0) r.fail("bad magic (not a DCTP checkpoint)");
    Checkpoint c;
    c.version = r.pod<std::uint32_t>();
    if (c.version != Checkpoint::kVersion) {
        r.fail("format version " + std::to_string(c.version) + " is not supported (expected " +
               std::to_string(Checkpoint::kVersion) + ")");
    }
    c.spec_hash = r.pod<std::uint64_t>();
    c.spec_json = r.str();
    c.epoch = r.pod<std::uint32_t>();
    c.best_accuracy = r.pod<double>();
    c.best_epoch = r.pod<std::uint32_t>();
    c.rng_state = r.str();
    c.parameters = r.section();
    c.buffers = r.section();
    c.velocity = r.section();
    if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after velocity section");
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw checkpoint_error("cannot write " + tmp.string());
        write_checkpoint(os, c);
        if (!os) throw checkpoint_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw checkpoint_error("cannot open " + path.string());
    return read_checkpoint(is, path.string());
}

/// Rebuilds the spec embedded in a checkpoint, checking it against the stored hash.
inline ModelSpec checkpoint_spec(const Checkpoint& c) {
    ModelSpec s = spec_from_json(nlohmann::json::parse(c.spec_json));
    if (spec_hash(s) != c.spec_hash) throw checkpoint_error("embedded spec does not match its hash");
    return s;
}

template <typename T>
NamedArray to_array(const std::string& name, const Tensor<T>& t) {
    NamedArray a{name, dtype_of<T>(), t.shape(), {}};
    a.bytes.resize(t.numel() * sizeof(T));
    std::memcpy(a.bytes.data(), t.raw(), a.bytes.size());
    return a;
}

template <typename T>
void from_array(const NamedArray& a, Tensor<T>& t) {
    if (a.dtype != dtype_of<T>()) throw checkpoint_error("array '" + a.name + "' has a different precision");
    if (a.shape != t.shape()) {
        throw checkpoint_error("array '" + a.name + "' has shape " + a.shape.str() + ", model expects " + t.shape().str());
    }
    std::memcpy(t.raw(), a.bytes.data(), a.bytes.size());
}

template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<Parameter<T>>& ps) {
    std::vector<NamedArray> out;
    for (const auto& p : ps) out.push_back(to_array(p.name, p.tensor));
    return out;
}

template <typename T>
void from_arrays(const std::vector<NamedArray>& arrays, std::vector<Parameter<T>>& ps, const char* section) {
    if (arrays.size() != ps.size()) {
        throw checkpoint_error(std::string(section) + ": checkpoint has " + std::to_string(arrays.size()) +
                               " arrays, model has " + std::to_string(ps.size()));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (arrays[i].name != ps[i].name) {
            throw checkpoint_error(std::string(section) + ": expected '" + ps[i].name + "', found '" + arrays[i].name + "'");
        }
        from_array(arrays[i], ps[i].tensor);
    }
}

/// Loads parameters and buffers into `model`; rejects a checkpoint made for another spec.
template <typename T>
void restore_model(const Checkpoint& c, BuiltModel<T>& model) {
    if (c.spec_hash != spec_hash(model.spec())) {
        throw checkpoint_error("spec hash mismatch: checkpoint was written for a different architecture than '" +
                               model.spec().name + "'");
    }
    from_arrays(c.parameters, model.registry().parameters(), "parameters");
    from_arrays(c.buffers, model.registry().buffers(), "buffers");
}

}  // namespace dctnet
