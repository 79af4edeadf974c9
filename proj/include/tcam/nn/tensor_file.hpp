#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcam/nn/matrix.hpp"

namespace tcam::nn {

// On-disk tensor container: `<base>.manifest.json` names each tensor with its
// shape and byte offset; `<base>.f32` is the flat little-endian float32 blob.

struct NamedTensor {
  std::string name;
  Matrix<float> data;
};

struct TensorFile {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& base) {
  return base.string() + ".manifest.json";
}
inline std::filesystem::path blob_path(const std::filesystem::path& base) {
  return base.string() + ".f32";
}

inline void append_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                             (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline void write_tensor_file(const std::filesystem::path& base, const TensorFile& file) {
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : file.tensors) {
    entries.push_back({{"name", t.name},
                       {"shape", {t.data.rows(), t.data.cols()}},
                       {"offset", blob.size()}});
    for (Index i = 0; i < t.data.size(); ++i) append_f32_le(blob, t.data.data()[i]);
  }
  nlohmann::json manifest = {{"format", "tcam-tensors/1"},
                             {"dtype", "float32-le"},
                             {"blob", blob_path(base).filename().string()},
                             {"blob_bytes", blob.size()},
                             {"tensors", entries},
                             {"meta", file.meta}};
  write_file_bytes(blob_path(base), blob);
  write_file_bytes(manifest_path(base), manifest.dump(1) + "\n");
}

inline TensorFile read_tensor_file(const std::filesystem::path& base) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file_bytes(manifest_path(base)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest " + manifest_path(base).string() + ": " + e.what());
  }
  const std::string blob = read_file_bytes(blob_path(base));
  try {
    const auto expected = manifest.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected) {
      throw DataError("blob " + blob_path(base).string() + " has wrong size: expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(blob.size()));
    }
    TensorFile file;
    file.meta = manifest.value("meta", nlohmann::json::object());
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    for (const auto& e : manifest.at("tensors")) {
      const auto rows = e.at("shape").at(0).get<Index>();
      const auto cols = e.at("shape").at(1).get<Index>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0 ||
          offset + static_cast<std::size_t>(rows * cols) * 4 > blob.size()) {
        throw DataError("tensor " + e.at("name").get<std::string>() + " exceeds blob bounds");
      }
      NamedTensor t{e.at("name").get<std::string>(), Matrix<float>(rows, cols)};
      for (Index i = 0; i < t.data.size(); ++i) {
        t.data.data()[i] = read_f32_le(bytes + offset + static_cast<std::size_t>(i) * 4);
      }
      file.tensors.push_back(std::move(t));
    }
    return file;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest " + manifest_path(base).string() + ": " + e.what());
  }
}

}  // namespace tcam::nn
