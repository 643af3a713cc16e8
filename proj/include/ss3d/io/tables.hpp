#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "ss3d/autodiff/array.hpp"

namespace ss3d {

using NamedArrays = std::map<std::string, ad::Array>;

/// Parameter table file: magic "SS3T", u32 version, u64 count, then per entry
/// u32 name length, name bytes, u32 rank, rank u64 dims and f64 payload; all little-endian.
void write_tables(std::ostream& out, const NamedArrays& tables);
/// Throws E_PARSE on a bad header, unsupported version or truncation.
NamedArrays read_tables(std::istream& in);
void save_tables(const NamedArrays& tables, const std::string& path);
NamedArrays load_tables(const std::string& path);

/// Entry lookup with an E_PARSE error naming the missing key.
const ad::Array& table_entry(const NamedArrays& tables, const std::string& name);

}  // namespace ss3d
