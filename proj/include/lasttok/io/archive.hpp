#pragma once

// Named-tensor container.
//
//   bytes [0, 8)    magic "LASTTOK1"
//   bytes [8, 16)   little-endian u64 header length N
//   bytes [16, 16+N) JSON header:
//                   {"metadata": {...},
//                    "tensors": [{"name", "dtype": "f64"|"f32", "shape", "offset"}]}
//   remainder       raw little-endian tensor data; offsets are relative to the
//                   start of this region.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/graph.hpp"
#include "lasttok/compute/tensor.hpp"

namespace lasttok::io {

enum class Dtype { f64, f32 };

class TensorArchive {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void put(const std::string& name, const compute::Tensor& t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws MissingArtifact naming the tensor if absent.
  const compute::Tensor& get(const std::string& name) const;
  /// Names in insertion order.
  const std::vector<std::string>& names() const { return order_; }

  void put_parameters(std::span<const compute::ParamPtr> params, const std::string& prefix = "");
  /// Copies stored values into params; every parameter must be present with a
  /// matching shape.
  void load_parameters(std::span<const compute::ParamPtr> params, const std::string& prefix = "") const;

  void save(const std::filesystem::path& path, Dtype dtype = Dtype::f64) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, compute::Tensor> tensors_;
  std::vector<std::string> order_;
};

}  // namespace lasttok::io
