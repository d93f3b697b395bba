#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/tensor.hpp"

namespace lasttok::tok {

/// Collapses runs of equal adjacent tokens to their first occurrence.
std::vector<int> dedup(std::span<const int> tokens);

struct DedupResult {
  std::vector<int> tokens;
  /// Frame index where each kept token's run starts.
  std::vector<int> positions;
};
DedupResult dedup_with_positions(std::span<const int> tokens);

/// Index of the row nearest to query in squared Euclidean distance; ties go to
/// the lowest index.
int nearest_row(const compute::Tensor& table, const double* query);

/// Frame-level discretiser shared by the learned tokenizer and the k-means
/// baseline.
class FrameTokenizer {
 public:
  virtual ~FrameTokenizer() = default;
  /// One token per frame, before dedup.
  virtual std::vector<int> frame_tokens(const compute::Tensor& features) const = 0;
  /// Continuous representation used for latent ABX.
  virtual compute::Tensor latents(const compute::Tensor& features) const = 0;
  virtual std::size_t vocab_size() const = 0;

  std::vector<int> tokenize(const compute::Tensor& features) const { return dedup(frame_tokens(features)); }
};

struct TokenExport {
  /// Tokenizer description, vocabulary size and anything else worth keeping.
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> ids;
  /// Deduplicated tokens per utterance.
  std::vector<std::vector<int>> tokens;
};

/// dir/manifest.json plus dir/tokens.txt with one "id t1 t2 ..." line per
/// utterance.
void write_token_export(const TokenExport& data, const std::filesystem::path& dir);
/// Throws MissingArtifact when a file is absent and ParseError on a malformed
/// line.
TokenExport read_token_export(const std::filesystem::path& dir);

}  // namespace lasttok::tok
