#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace amt::io {

enum class Dtype { kF32, kF64 };

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  Dtype dtype = Dtype::kF64;
  std::vector<unsigned char> bytes;  // little-endian, column-major for matrices

  std::int64_t element_count() const;
};

/// Binary container: magic "AMTM0001", 64-bit little-endian manifest length,
/// JSON manifest {"meta": ..., "arrays": [{name, shape, dtype, offset, bytes}]}
/// with offsets relative to the end of the manifest, then the raw array bytes.
struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  void add(const std::string& name, const Eigen::MatrixXd& m, Dtype dtype = Dtype::kF64);
  void add(const std::string& name, const std::vector<double>& v, Dtype dtype = Dtype::kF64);
  void add(const std::string& name, const float* data, std::vector<std::int64_t> shape);
  void add(const std::string& name, const double* data, std::vector<std::int64_t> shape);

  bool contains(const std::string& name) const;
  const NamedArray& array(const std::string& name) const;
  /// Matrix view of a 1-D (as a column) or 2-D array, converted to double.
  Eigen::MatrixXd matrix(const std::string& name) const;
  std::vector<double> vector(const std::string& name) const;
  /// Copies an array into caller storage of exactly `count` elements.
  void copy_to(const std::string& name, float* out, std::int64_t count) const;
  void copy_to(const std::string& name, double* out, std::int64_t count) const;
};

inline constexpr char kContainerMagic[9] = "AMTM0001";

std::vector<unsigned char> serialize(const Container& c);
Container deserialize(const std::vector<unsigned char>& bytes);
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace amt::io
