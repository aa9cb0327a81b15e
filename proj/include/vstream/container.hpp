#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vstream/optim.hpp"

namespace vstream {

// Flat named-tensor container:
//   magic[4] | version u8 | count u64 |
//   count x (name_len u64 | name utf-8 | rank u64 | extents u64[rank] | values f64[numel])
// All integers and floats little-endian.
inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::array<char, 4> kCheckpointMagic{'V', 'S', 'T', 'T'};
inline constexpr std::array<char, 4> kDatasetMagic{'V', 'S', 'D', 'S'};

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

void write_container(const std::filesystem::path &path, std::array<char, 4> magic,
                     const std::vector<NamedArray> &entries);
std::vector<NamedArray> read_container(const std::filesystem::path &path, std::array<char, 4> magic);

// Saves parameter values under their names.
void save_checkpoint(const std::filesystem::path &path, const ParamList &params);
// Loads into existing parameters by name; every parameter must be present with
// a matching shape.
void load_checkpoint(const std::filesystem::path &path, const ParamList &params);

namespace binio {
void put_u8(std::ostream &os, std::uint8_t v);
void put_u64(std::ostream &os, std::uint64_t v);
void put_i64(std::ostream &os, std::int64_t v);
void put_f64(std::ostream &os, double v);
void put_f64s(std::ostream &os, const double *data, std::size_t n);
std::uint8_t get_u8(std::istream &is);
std::uint64_t get_u64(std::istream &is);
std::int64_t get_i64(std::istream &is);
double get_f64(std::istream &is);
void get_f64s(std::istream &is, double *data, std::size_t n);
} // namespace binio

} // namespace vstream
