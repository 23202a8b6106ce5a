// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace prime {

/// Dense row-major f32 tensor.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  static Tensor zeros(std::vector<std::int64_t> shape);
  std::size_t numel() const;
  std::int64_t rows() const { return shape.size() == 2 ? shape[0] : 0; }
  std::int64_t cols() const { return shape.size() == 2 ? shape[1] : 0; }
  float at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  float& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  bool operator==(const Tensor&) const = default;
};

/// Named tensors, ordered by name.
///
/// File layout:
///   u64 little-endian   header length N
///   N bytes             UTF-8 JSON: {name: {"dtype": "f32", "shape": [...],
///                                           "offset": bytes, "length": bytes}}
///   payload             little-endian f32 values, tensors contiguous in
///                       header order, offsets relative to payload start
class TensorArchive {
 public:
  /// Throws FormatError when data length differs from the shape's product.
  void insert(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  bool operator==(const TensorArchive&) const = default;

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace prime
