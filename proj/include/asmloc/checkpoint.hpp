#pragma once

// Checkpoint = JSON index (name -> shape, byte offset) + little-endian blob.
// Model checkpoints are float32; resume states use float64.
//
//   <stem>.json  {"format":"asmloc-checkpoint","version":1,"dtype":"float32",
//                 "blob":"<stem>.bin","parameters":{"name":{"shape":[..],"offset":N}},
//                 "meta":{...}}
//   <stem>.bin   concatenated parameter values in registration order

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/adam.hpp"
#include "asmloc/errors.hpp"

namespace asmloc {

namespace detail {

inline void put_f32_le(std::vector<char>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

inline void put_f64_le(std::vector<char>& out, double f) {
  const auto bits = std::bit_cast<std::uint64_t>(f);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

enum class Dtype { Float32, Float64 };

/// Writes `<stem>.json` and `<stem>.bin`. `meta` is stored verbatim in the index.
inline void save_checkpoint(const std::filesystem::path& stem, const ParameterStore& params,
                            const nlohmann::json& meta = nlohmann::json::object(), Dtype dtype = Dtype::Float32) {
  const bool f64 = dtype == Dtype::Float64;
  nlohmann::json index;
  index["format"] = "asmloc-checkpoint";
  index["version"] = 1;
  index["dtype"] = f64 ? "float64" : "float32";
  index["byte_order"] = "little";
  const auto blob_name = stem.filename().string() + ".bin";
  index["blob"] = blob_name;
  index["parameters"] = nlohmann::json::object();
  index["order"] = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& [name, t] : params) {
    index["parameters"][name] = {{"shape", t.shape()}, {"offset", blob.size()}};
    index["order"].push_back(name);
    for (double v : t.data()) {
      if (f64)
        detail::put_f64_le(blob, v);
      else
        detail::put_f32_le(blob, static_cast<float>(v));
    }
  }
  index["meta"] = meta;

  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write checkpoint blob: " + stem.string() + ".bin");
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(stem.string() + ".json");
  if (!js) throw IoError("cannot write checkpoint index: " + stem.string() + ".json");
  js << index.dump(2) << "\n";
}

inline nlohmann::json read_checkpoint_index(const std::filesystem::path& index_path) {
  if (!std::filesystem::exists(index_path)) throw FileNotFoundError(index_path.string());
  std::ifstream in(index_path);
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint index " + index_path.string() + " is not valid JSON: " + e.what());
  }
  if (index.value("format", "") != "asmloc-checkpoint") throw FormatError("not an asmloc checkpoint: " + index_path.string());
  return index;
}

/// Accepts either the stem or the `.json` index path.
inline std::filesystem::path checkpoint_index_path(const std::filesystem::path& p) {
  if (p.extension() == ".json") return p;
  return std::filesystem::path(p.string() + ".json");
}

/// Loads values into an already-shaped store. Every parameter of `params` must be
/// present with an identical shape; extra checkpoint entries are an error too.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  const auto index_path = checkpoint_index_path(path);
  const auto index = read_checkpoint_index(index_path);
  const auto blob_path = index_path.parent_path() / index.at("blob").get<std::string>();
  if (!std::filesystem::exists(blob_path)) throw FileNotFoundError(blob_path.string());
  std::ifstream bin(blob_path, std::ios::binary);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto dtype = index.value("dtype", std::string("float32"));
  if (dtype != "float32" && dtype != "float64") throw FormatError("unsupported checkpoint dtype: " + dtype);
  const std::size_t width = dtype == "float64" ? 8 : 4;

  const auto& entries = index.at("parameters");
  for (auto it = entries.begin(); it != entries.end(); ++it)
    if (!params.contains(it.key())) throw LoadError(it.key(), "not part of the configured model");
  for (auto& [name, t] : params) {
    if (!entries.contains(name)) throw LoadError(name, "missing from checkpoint");
    const auto shape = entries[name].at("shape").get<Shape>();
    if (shape != t.shape())
      throw LoadError(name, "checkpoint shape " + shape_string(shape) + " differs from model shape " +
                                shape_string(t.shape()));
    const auto offset = entries[name].at("offset").get<std::size_t>();
    if (offset + width * t.size() > blob.size()) throw LoadError(name, "blob truncated");
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const unsigned char* at = blob.data() + offset + width * i;
      dst[i] = width == 8 ? detail::get_f64_le(at) : detail::get_f32_le(at);
    }
    t.clear_grad();
  }
  return index.value("meta", nlohmann::json::object());
}

}  // namespace asmloc
