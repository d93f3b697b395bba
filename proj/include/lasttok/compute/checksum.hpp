#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lasttok/compute/graph.hpp"

namespace lasttok::compute {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Hash over names, shapes and exact bit patterns of the given parameters.
std::uint64_t parameter_checksum(std::span<const ParamPtr> params);

std::string hex64(std::uint64_t v);

}  // namespace lasttok::compute
