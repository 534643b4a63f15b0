#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace noduleclip {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct Tensor {
  std::vector<std::int64_t> shape;
  DType dtype = DType::f32;
  std::vector<unsigned char> bytes;

  std::size_t numel() const;
  std::vector<double> to_double() const;
  std::vector<float> to_float() const;

  static Tensor from_f32(std::vector<std::int64_t> shape, std::span<const float> values);
  static Tensor from_f64(std::vector<std::int64_t> shape, std::span<const double> values);
};

// Flat named-tensor file. Layout (all integers little-endian):
//   magic "NCTA", u32 version = 1, u64 entry count, then per entry
//   u32 name length, name bytes (UTF-8), u8 dtype (1 = f32, 2 = f64),
//   u32 rank, u64 dims[rank], raw little-endian element data.
// Pretrained weight dumps use f32; checkpoints store trainable tensors as f64
// so a save/load round trip is lossless.
class TensorArchive {
 public:
  void put(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> index_;
};

}  // namespace noduleclip
