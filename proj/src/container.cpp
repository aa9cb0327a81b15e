#include "vstream/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "vstream/errors.hpp"

namespace vstream {

namespace binio {

namespace {

template <typename T> void put_le(std::ostream &os, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    os.write(reinterpret_cast<const char *>(bytes), sizeof(T));
}

template <typename T> T get_le(std::istream &is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char *>(bytes), sizeof(T))) {
        throw CheckpointError("unexpected end of container");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

} // namespace

void put_u8(std::ostream &os, std::uint8_t v) { put_le(os, v); }
void put_u64(std::ostream &os, std::uint64_t v) { put_le(os, v); }
void put_i64(std::ostream &os, std::int64_t v) { put_le(os, v); }
void put_f64(std::ostream &os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void put_f64s(std::ostream &os, const double *data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char *>(data), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            put_f64(os, data[i]);
        }
    }
}

std::uint8_t get_u8(std::istream &is) { return get_le<std::uint8_t>(is); }
std::uint64_t get_u64(std::istream &is) { return get_le<std::uint64_t>(is); }
std::int64_t get_i64(std::istream &is) { return get_le<std::int64_t>(is); }
double get_f64(std::istream &is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

void get_f64s(std::istream &is, double *data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        if (!is.read(reinterpret_cast<char *>(data), static_cast<std::streamsize>(n * sizeof(double)))) {
            throw CheckpointError("unexpected end of container");
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = get_f64(is);
        }
    }
}

} // namespace binio

void write_container(const std::filesystem::path &path, std::array<char, 4> magic,
                     const std::vector<NamedArray> &entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    os.write(magic.data(), 4);
    binio::put_u8(os, kContainerVersion);
    binio::put_u64(os, entries.size());
    for (const auto &e : entries) {
        if (shape_numel(e.shape) != e.values.size()) {
            throw ShapeError("container entry " + e.name + " has inconsistent shape");
        }
        binio::put_u64(os, e.name.size());
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        binio::put_u64(os, e.shape.size());
        for (auto x : e.shape) {
            binio::put_u64(os, x);
        }
        binio::put_f64s(os, e.values.data(), e.values.size());
    }
    if (!os) {
        throw CheckpointError("write failed for " + path.string());
    }
}

std::vector<NamedArray> read_container(const std::filesystem::path &path, std::array<char, 4> magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError("cannot open " + path.string());
    }
    std::array<char, 4> got{};
    if (!is.read(got.data(), 4) || got != magic) {
        throw CheckpointError(path.string() + ": bad magic, expected " + std::string(magic.data(), 4));
    }
    const auto version = binio::get_u8(is);
    if (version != kContainerVersion) {
        throw CheckpointError(path.string() + ": unsupported container version " + std::to_string(version));
    }
    const auto count = binio::get_u64(is);
    std::vector<NamedArray> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray e;
        const auto name_len = binio::get_u64(is);
        if (name_len > (1u << 20)) {
            throw CheckpointError(path.string() + ": corrupt entry name length");
        }
        e.name.resize(name_len);
        if (!is.read(e.name.data(), static_cast<std::streamsize>(name_len))) {
            throw CheckpointError("unexpected end of container");
        }
        const auto rank = binio::get_u64(is);
        if (rank == 0 || rank > 8) {
            throw CheckpointError(path.string() + ": corrupt rank for " + e.name);
        }
        for (std::uint64_t r = 0; r < rank; ++r) {
            e.shape.push_back(binio::get_u64(is));
        }
        e.values.resize(shape_numel(e.shape));
        binio::get_f64s(is, e.values.data(), e.values.size());
        out.push_back(std::move(e));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path &path, const ParamList &params) {
    std::vector<NamedArray> entries;
    entries.reserve(params.size());
    for (const auto &p : params) {
        entries.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
    }
    write_container(path, kCheckpointMagic, entries);
}

void load_checkpoint(const std::filesystem::path &path, const ParamList &params) {
    auto entries = read_container(path, kCheckpointMagic);
    std::map<std::string, NamedArray *> by_name;
    for (auto &e : entries) {
        by_name[e.name] = &e;
    }
    for (const auto &p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw CheckpointError(path.string() + ": missing tensor " + p.name);
        }
        if (it->second->shape != p.tensor.shape()) {
            throw CheckpointError(path.string() + ": tensor " + p.name + " has shape " +
                                  shape_str(it->second->shape) + ", expected " + shape_str(p.tensor.shape()));
        }
        auto dst = Tensor(p.tensor).mutable_values();
        std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    }
}

} // namespace vstream
