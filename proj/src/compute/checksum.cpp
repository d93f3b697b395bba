#include "lasttok/compute/checksum.hpp"

#include <cstdio>

namespace lasttok::compute {

void Fnv1a::update(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    hash_ ^= p[i];
    hash_ *= 0x100000001b3ULL;
  }
}

std::uint64_t parameter_checksum(std::span<const ParamPtr> params) {
  Fnv1a h;
  for (const auto& p : params) {
    h.update(p->name);
    for (auto s : p->value.shape()) {
      const std::uint64_t v = s;
      h.update(&v, sizeof v);
    }
    h.update(p->value.data().data(), p->value.size() * sizeof(double));
  }
  return h.digest();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace lasttok::compute
