#include "noduleclip/common/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "noduleclip/common/error.hpp"

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

namespace noduleclip {
namespace {

constexpr char kMagic[4] = {'N', 'C', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw RuntimeFailure("truncated tensor archive: " + path.string());
  return v;
}

std::size_t product(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ValidationError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::size_t Tensor::numel() const { return product(shape); }

std::vector<double> Tensor::to_double() const {
  const std::size_t n = numel();
  std::vector<double> out(n);
  if (dtype == DType::f64) {
    std::memcpy(out.data(), bytes.data(), n * sizeof(double));
  } else {
    const auto* p = reinterpret_cast<const float*>(bytes.data());
    for (std::size_t i = 0; i < n; ++i) out[i] = p[i];
  }
  return out;
}

std::vector<float> Tensor::to_float() const {
  const std::size_t n = numel();
  std::vector<float> out(n);
  if (dtype == DType::f32) {
    std::memcpy(out.data(), bytes.data(), n * sizeof(float));
  } else {
    const auto* p = reinterpret_cast<const double*>(bytes.data());
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(p[i]);
  }
  return out;
}

Tensor Tensor::from_f32(std::vector<std::int64_t> shape, std::span<const float> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.dtype = DType::f32;
  if (t.numel() != values.size()) throw ValidationError("tensor shape does not match value count");
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  return t;
}

Tensor Tensor::from_f64(std::vector<std::int64_t> shape, std::span<const double> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.dtype = DType::f64;
  if (t.numel() != values.size()) throw ValidationError("tensor shape does not match value count");
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  return t;
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
  if (tensor.bytes.size() != tensor.numel() * element_size(tensor.dtype)) {
    throw ValidationError("tensor '" + name + "' byte size does not match its shape");
  }
  if (!index_.contains(name)) order_.push_back(name);
  index_[name] = std::move(tensor);
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("tensor archive has no entry '" + name + "'");
  return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(order_.size()));
  for (const auto& name : order_) {
    const Tensor& t = index_.at(name);
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint8_t>(t.dtype));
    write_pod(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  }
  if (!os) throw RuntimeFailure("write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open tensor archive: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw RuntimeFailure("not a tensor archive: " + path.string());
  if (read_pod<std::uint32_t>(is, path) != kVersion) throw RuntimeFailure("unsupported tensor archive version: " + path.string());
  const auto count = read_pod<std::uint64_t>(is, path);
  TensorArchive archive;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    Tensor t;
    const auto dtype = read_pod<std::uint8_t>(is, path);
    if (dtype != 1 && dtype != 2) throw RuntimeFailure("unknown dtype in tensor archive entry '" + name + "'");
    t.dtype = static_cast<DType>(dtype);
    const auto rank = read_pod<std::uint32_t>(is, path);
    if (rank > kMaxRank) throw RuntimeFailure("implausible rank in tensor archive entry '" + name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::int64_t>(read_pod<std::uint64_t>(is, path)));
    t.bytes.resize(t.numel() * element_size(t.dtype));
    is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!is) throw RuntimeFailure("truncated tensor archive: " + path.string());
    archive.put(name, std::move(t));
  }
  return archive;
}

}  // namespace noduleclip
