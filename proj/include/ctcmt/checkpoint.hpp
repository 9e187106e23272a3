// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: a JSON manifest (name, shape, dtype, byte offset)
// next to a little-endian blob of concatenated tensor data. Round trips are
// bit-exact.

#ifndef CTCMT_CHECKPOINT_HPP
#define CTCMT_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcmt/tensor.hpp"

namespace ctcmt {

struct NamedTensorF {
  std::string name;
  TensorF tensor;
};

namespace detail {

template <class T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}

}  // namespace detail

// Writes `<prefix>.json` and `<prefix>.bin`.
template <class T>
void save_checkpoint(const std::string& prefix, const std::vector<std::string>& names,
                     const std::vector<Tensor<T>>& tensors) {
  if (names.size() != tensors.size())
    throw std::invalid_argument("contract error: checkpoint names/tensors mismatch");
  nlohmann::json manifest = nlohmann::json::array();
  std::ofstream blob(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + prefix + ".bin");
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.size()) * sizeof(T);
    manifest.push_back({{"name", names[i]},
                        {"shape", t.shape()},
                        {"dtype", detail::dtype_name<T>()},
                        {"offset", offset},
                        {"bytes", bytes}});
    blob.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  if (!blob) throw std::runtime_error("short write to " + prefix + ".bin");
  blob.close();
  std::ofstream mf(prefix + ".json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("cannot read " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + prefix + ".bin");
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& entry : manifest) {
    if (entry.at("dtype").get<std::string>() != detail::dtype_name<T>())
      throw std::runtime_error("dtype mismatch in " + prefix + ".json");
    Shape shape = entry.at("shape").get<Shape>();
    Tensor<T> t(shape);
    blob.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    blob.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(entry.at("bytes").get<std::uint64_t>()));
    if (!blob) throw std::runtime_error("short read from " + prefix + ".bin");
    out.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace ctcmt

#endif  // CTCMT_CHECKPOINT_HPP
