// SPDX-License-Identifier: Apache-2.0
#include "prime/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "prime/error.hpp"
#include "prime/json_io.hpp"

namespace prime {

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(t.numel(), 0.0f);
  return t;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw FormatError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void TensorArchive::insert(const std::string& name, Tensor t) {
  if (name.empty()) throw FormatError("tensor name must be nonempty");
  if (t.data.size() != t.numel())
    throw FormatError("tensor " + name + ": data length " + std::to_string(t.data.size()) + " does not match shape");
  tensors_[name] = std::move(t);
}

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("no tensor named " + name);
  return it->second;
}

Tensor& TensorArchive::get_mut(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("no tensor named " + name);
  return it->second;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

std::vector<std::uint8_t> TensorArchive::serialize() const {
  Json header = Json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t length = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", length}};
    offset += length;
  }
  const std::string h = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + h.size() + offset);
  const std::uint64_t n = h.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), h.begin(), h.end());
  for (const auto& [name, t] : tensors_)
    for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("tensor archive shorter than its length prefix");
  const std::uint64_t n = get_u64(bytes.first(8));
  if (n > bytes.size() - 8) throw FormatError("tensor archive header length exceeds file size");
  Json header;
  try {
    header = Json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("tensor archive header is not JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("tensor archive header must be an object");
  const auto payload = bytes.subspan(8 + n);
  TensorArchive archive;
  try {
    for (const auto& [name, info] : header.items()) {
      if (info.at("dtype").get<std::string>() != "f32") throw FormatError("tensor " + name + ": unsupported dtype");
      Tensor t;
      t.shape = info.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = info.at("offset").get<std::uint64_t>();
      const auto length = info.at("length").get<std::uint64_t>();
      if (length != t.numel() * sizeof(float)) throw FormatError("tensor " + name + ": length does not match shape");
      if (offset > payload.size() || length > payload.size() - offset)
        throw FormatError("tensor " + name + ": payload out of bounds");
      t.data.resize(t.numel());
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) v = (v << 8) | payload[offset + i * 4 + static_cast<std::size_t>(b)];
        t.data[i] = std::bit_cast<float>(v);
      }
      archive.insert(name, std::move(t));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("tensor archive header entry malformed: ") + e.what());
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return deserialize(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
}

}  // namespace prime
