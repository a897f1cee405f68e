#include "amt/container.hpp"

#include "amt/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace amt::io {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

std::size_t dtype_size(Dtype d) { return d == Dtype::kF32 ? 4 : 8; }
std::string dtype_name(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::kF32;
  if (s == "f64") return Dtype::kF64;
  fail(ErrorCode::kFormat, "unknown dtype '" + s + "'");
}

template <typename T>
NamedArray pack(const std::string& name, const T* data, std::vector<std::int64_t> shape,
                Dtype dtype) {
  NamedArray a;
  a.name = name;
  a.shape = std::move(shape);
  a.dtype = dtype;
  const std::int64_t n = a.element_count();
  a.bytes.resize(static_cast<std::size_t>(n) * dtype_size(dtype));
  for (std::int64_t i = 0; i < n; ++i) {
    if (dtype == Dtype::kF32) {
      const float v = static_cast<float>(data[i]);
      std::memcpy(a.bytes.data() + i * 4, &v, 4);
    } else {
      const double v = static_cast<double>(data[i]);
      std::memcpy(a.bytes.data() + i * 8, &v, 8);
    }
  }
  return a;
}

template <typename T>
void unpack(const NamedArray& a, T* out, std::int64_t count) {
  require(a.element_count() == count, ErrorCode::kShapeMismatch,
          "array '" + a.name + "' has " + std::to_string(a.element_count()) +
              " elements, expected " + std::to_string(count));
  for (std::int64_t i = 0; i < count; ++i) {
    if (a.dtype == Dtype::kF32) {
      float v;
      std::memcpy(&v, a.bytes.data() + i * 4, 4);
      out[i] = static_cast<T>(v);
    } else {
      double v;
      std::memcpy(&v, a.bytes.data() + i * 8, 8);
      out[i] = static_cast<T>(v);
    }
  }
}

}  // namespace

std::int64_t NamedArray::element_count() const {
  std::int64_t n = 1;
  for (std::int64_t s : shape) n *= s;
  return n;
}

void Container::add(const std::string& name, const Eigen::MatrixXd& m, Dtype dtype) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate array '" + name + "'");
  arrays.push_back(pack(name, m.data(), {m.rows(), m.cols()}, dtype));
}

void Container::add(const std::string& name, const std::vector<double>& v, Dtype dtype) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate array '" + name + "'");
  arrays.push_back(pack(name, v.data(), {static_cast<std::int64_t>(v.size())}, dtype));
}

void Container::add(const std::string& name, const float* data, std::vector<std::int64_t> shape) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate array '" + name + "'");
  arrays.push_back(pack(name, data, std::move(shape), Dtype::kF32));
}

void Container::add(const std::string& name, const double* data, std::vector<std::int64_t> shape) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate array '" + name + "'");
  arrays.push_back(pack(name, data, std::move(shape), Dtype::kF64));
}

bool Container::contains(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

const NamedArray& Container::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  fail(ErrorCode::kFormat, "container has no array '" + name + "'");
}

Eigen::MatrixXd Container::matrix(const std::string& name) const {
  const NamedArray& a = array(name);
  require(a.shape.size() == 1 || a.shape.size() == 2, ErrorCode::kShapeMismatch,
          "array '" + name + "' is not 1-D or 2-D");
  const Eigen::Index rows = a.shape[0];
  const Eigen::Index cols = a.shape.size() == 2 ? a.shape[1] : 1;
  Eigen::MatrixXd m(rows, cols);
  unpack(a, m.data(), a.element_count());
  return m;
}

std::vector<double> Container::vector(const std::string& name) const {
  const NamedArray& a = array(name);
  std::vector<double> v(static_cast<std::size_t>(a.element_count()));
  unpack(a, v.data(), a.element_count());
  return v;
}

void Container::copy_to(const std::string& name, float* out, std::int64_t count) const {
  unpack(array(name), out, count);
}

void Container::copy_to(const std::string& name, double* out, std::int64_t count) const {
  unpack(array(name), out, count);
}

std::vector<unsigned char> serialize(const Container& c) {
  nlohmann::json manifest;
  manifest["meta"] = c.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    require(static_cast<std::size_t>(a.element_count()) * dtype_size(a.dtype) == a.bytes.size(),
            ErrorCode::kShapeMismatch, "array '" + a.name + "' byte size does not match shape");
    manifest["arrays"].push_back({{"name", a.name},
                                  {"shape", a.shape},
                                  {"dtype", dtype_name(a.dtype)},
                                  {"offset", offset},
                                  {"bytes", a.bytes.size()}});
    offset += a.bytes.size();
  }
  const std::string text = manifest.dump();
  std::vector<unsigned char> out(kContainerMagic, kContainerMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

Container deserialize(const std::vector<unsigned char>& bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kContainerMagic, 8) == 0,
          ErrorCode::kFormat, "not an AMTM0001 container");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  require(len <= bytes.size() - 16, ErrorCode::kFormat, "container manifest is truncated");
  const std::size_t data_start = 16 + static_cast<std::size_t>(len);
  Container c;
  try {
    const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
    c.meta = manifest.at("meta");
    for (const auto& entry : manifest.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto size = entry.at("bytes").get<std::uint64_t>();
      require(static_cast<std::uint64_t>(a.element_count()) * dtype_size(a.dtype) == size,
              ErrorCode::kFormat, "array '" + a.name + "' size does not match its shape");
      require(data_start + offset + size <= bytes.size(), ErrorCode::kFormat,
              "array '" + a.name + "' extends past the end of the container");
      const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offset);
      a.bytes.assign(first, first + static_cast<std::ptrdiff_t>(size));
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("container manifest: ") + e.what());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = serialize(c);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace amt::io
