#include "ss3d/io/tables.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

constexpr char kMagic[4] = {'S', 'S', '3', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

static_assert(std::endian::native == std::endian::little, "table files assume a little-endian host");

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(in), "E_PARSE", "truncated table file");
  return v;
}

}  // namespace

void write_tables(std::ostream& out, const NamedArrays& tables) {
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, tables.size());
  for (const auto& [name, array] : tables) {
    require(name.size() <= kMaxName && array.rank() <= kMaxRank, "E_ARG", "table entry '" + name + "' too large");
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(array.rank()));
    for (std::size_t d : array.shape()) write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(array.data().data()), static_cast<std::streamsize>(8 * array.size()));
  }
  require(static_cast<bool>(out), "E_IO", "failed to write tables");
}

NamedArrays read_tables(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, 4) == 0, "E_PARSE", "not a table file");
  const auto version = read_pod<std::uint32_t>(in);
  require(version == kVersion, "E_PARSE", "unsupported table file version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(in);
  NamedArrays tables;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto length = read_pod<std::uint32_t>(in);
    require(length <= kMaxName, "E_PARSE", "table name too long");
    std::string name(length, '\0');
    in.read(name.data(), length);
    const auto rank = read_pod<std::uint32_t>(in);
    require(rank <= kMaxRank, "E_PARSE", "table rank too large");
    ad::Shape shape;
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(read_pod<std::uint64_t>(in));
      total *= shape.back();
      require(total <= (std::size_t(1) << 32), "E_PARSE", "table payload too large");
    }
    std::vector<double> values(total);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(8 * total));
    require(static_cast<bool>(in), "E_PARSE", "truncated table payload");
    require(tables.emplace(name, ad::Array(shape, std::move(values))).second, "E_PARSE",
            "duplicate table entry '" + name + "'");
  }
  return tables;
}

void save_tables(const NamedArrays& tables, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "E_IO", "cannot open " + path);
  write_tables(out, tables);
}

NamedArrays load_tables(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "E_IO", "cannot open " + path);
  return read_tables(in);
}

const ad::Array& table_entry(const NamedArrays& tables, const std::string& name) {
  const auto it = tables.find(name);
  require(it != tables.end(), "E_PARSE", "table entry '" + name + "' missing");
  return it->second;
}

}  // namespace ss3d
