#include "lasttok/io/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lasttok/errors.hpp"

namespace lasttok::io {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'A', 'S', 'T', 'T', 'O', 'K', '1'};

}  // namespace

void TensorArchive::put(const std::string& name, const compute::Tensor& t) {
  if (tensors_.count(name) == 0) order_.push_back(name);
  tensors_[name] = t;
}

const compute::Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw MissingArtifact("archive: tensor '" + name + "' not found");
  return it->second;
}

void TensorArchive::put_parameters(std::span<const compute::ParamPtr> params, const std::string& prefix) {
  for (const auto& p : params) put(prefix + p->name, p->value);
}

void TensorArchive::load_parameters(std::span<const compute::ParamPtr> params, const std::string& prefix) const {
  for (const auto& p : params) {
    const auto& t = get(prefix + p->name);
    if (t.shape() != p->value.shape()) {
      throw ConfigError("archive: tensor '" + prefix + p->name + "' has shape " + compute::shape_string(t.shape()) +
                        ", model expects " + compute::shape_string(p->value.shape()));
    }
    p->value = t;
  }
}

void TensorArchive::save(const std::filesystem::path& path, Dtype dtype) const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  const std::size_t width = dtype == Dtype::f64 ? 8 : 4;
  std::size_t offset = 0;
  for (const auto& name : order_) {
    const auto& t = tensors_.at(name);
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype == Dtype::f64 ? "f64" : "f32"},
                                 {"shape", t.shape()},
                                 {"offset", offset}});
    offset += t.size() * width;
  }
  const std::string text = header.dump();
  const std::uint64_t n = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("archive: cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& name : order_) {
    const auto& t = tensors_.at(name);
    if (dtype == Dtype::f64) {
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
    } else {
      std::vector<float> f(t.data().begin(), t.data().end());
      out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
    }
  }
  if (!out) throw std::runtime_error("archive: write failed for " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("archive: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw ParseError("archive: truncated preamble in " + path.string(), bytes.size());
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError("archive: bad magic in " + path.string(), 0);
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, sizeof n);
  if (16 + n > bytes.size()) throw ParseError("archive: header runs past end of " + path.string(), bytes.size());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("archive: malformed header: ") + e.what(), 16 + e.byte);
  }

  TensorArchive ar;
  ar.metadata = header.value("metadata", nlohmann::json::object());
  const std::size_t data_start = 16 + n;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = entry.at("dtype").get<std::string>();
    const auto shape = entry.at("shape").get<compute::Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
    if (width == 0) throw ParseError("archive: unknown dtype '" + dtype + "' for " + name, 16);
    const std::size_t count = compute::shape_numel(shape);
    const std::size_t begin = data_start + offset;
    if (begin + count * width > bytes.size()) {
      throw ParseError("archive: tensor '" + name + "' truncated", bytes.size());
    }
    std::vector<double> values(count);
    if (width == 8) {
      std::memcpy(values.data(), bytes.data() + begin, count * 8);
    } else {
      std::vector<float> f(count);
      std::memcpy(f.data(), bytes.data() + begin, count * 4);
      std::copy(f.begin(), f.end(), values.begin());
    }
    ar.put(name, compute::Tensor(shape, std::move(values)));
  }
  return ar;
}

}  // namespace lasttok::io
