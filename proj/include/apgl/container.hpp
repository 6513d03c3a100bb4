#pragma once

// Versioned little-endian array container shared by datasets, graphs and
// checkpoints.
//
// Layout: "APGL", u32 format version, then entries until EOF:
//   u16 name length, name bytes, u8 dtype, u8 rank, rank x u64 dims, raw data.

#include "apgl/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace apgl {

enum class DType : std::uint8_t { F64 = 0, F32 = 1, U32 = 2, U64 = 3 };

inline constexpr std::uint32_t kContainerVersion = 1;

struct ArrayEntry {
  std::vector<std::uint64_t> dims;
  std::variant<std::vector<double>, std::vector<float>, std::vector<std::uint32_t>,
               std::vector<std::uint64_t>>
      data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t size() const;
};

/// Ordered set of named arrays. Entries are written in insertion order.
class Container {
 public:
  void put_f64(const std::string& name, std::vector<std::uint64_t> dims, std::vector<double> data);
  void put_f32(const std::string& name, std::vector<std::uint64_t> dims, std::vector<float> data);
  void put_u32(const std::string& name, std::vector<std::uint64_t> dims,
               std::vector<std::uint32_t> data);
  void put_u64(const std::string& name, std::vector<std::uint64_t> dims,
               std::vector<std::uint64_t> data);
  void put_matrix(const std::string& name, const Matrix& m);
  void put_scalar(const std::string& name, double value);
  void put_count(const std::string& name, std::uint64_t value);

  bool contains(const std::string& name) const;
  const ArrayEntry& at(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<std::uint32_t>& u32(const std::string& name) const;
  const std::vector<std::uint64_t>& u64(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::uint64_t count(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  void put(const std::string& name, ArrayEntry entry);

  std::vector<std::string> order_;
  std::map<std::string, ArrayEntry> entries_;
};

}  // namespace apgl
