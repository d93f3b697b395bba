#include "lasttok/tok/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "lasttok/compute/simd.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::tok {

std::vector<int> dedup(std::span<const int> tokens) { return dedup_with_positions(tokens).tokens; }

DedupResult dedup_with_positions(std::span<const int> tokens) {
  DedupResult out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0 || tokens[i] != tokens[i - 1]) {
      out.tokens.push_back(tokens[i]);
      out.positions.push_back(static_cast<int>(i));
    }
  }
  return out;
}

int nearest_row(const compute::Tensor& table, const double* query) {
  const std::size_t d = table.cols();
  int best = 0;
  double best_dist = simd::squared_distance(table.row(0), query, d);
  for (std::size_t k = 1; k < table.rows(); ++k) {
    const double dist = simd::squared_distance(table.row(k), query, d);
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

void write_token_export(const TokenExport& data, const std::filesystem::path& dir) {
  if (data.ids.size() != data.tokens.size()) throw std::invalid_argument("token export: id/token count mismatch");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = data.meta;
  manifest["utterances"] = data.ids.size();
  manifest["tokens_file"] = "tokens.txt";
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
  std::ofstream out(dir / "tokens.txt", std::ios::trunc);
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    out << data.ids[i];
    for (int t : data.tokens[i]) out << ' ' << t;
    out << '\n';
  }
  if (!out) throw std::runtime_error("token export: cannot write " + (dir / "tokens.txt").string());
}

TokenExport read_token_export(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.json");
  if (!manifest) throw MissingArtifact("token export: missing " + (dir / "manifest.json").string());
  std::ifstream in(dir / "tokens.txt");
  if (!in) throw MissingArtifact("token export: missing " + (dir / "tokens.txt").string());
  TokenExport data;
  try {
    data.meta = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("token export: bad manifest: ") + e.what(), e.byte);
  }
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id;
    if (!(fields >> id)) throw ParseError("token export: empty line", offset);
    std::vector<int> tokens;
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      int value = -1;
      try {
        value = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || value < 0) throw ParseError("token export: bad token '" + tok + "'", offset);
      tokens.push_back(value);
    }
    data.ids.push_back(std::move(id));
    data.tokens.push_back(std::move(tokens));
    offset += line.size() + 1;
  }
  return data;
}

}  // namespace lasttok::tok
