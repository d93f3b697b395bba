#pragma once

// k-means baseline tokenizer over frame features.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lasttok/compute/tensor.hpp"
#include "lasttok/synth/corpus.hpp"
#include "lasttok/tok/tokenizer.hpp"

namespace lasttok::kmeans {

struct FitOptions {
  std::size_t k = 64;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  /// Stop once no centroid moves further than this (Euclidean).
  double tol = 1e-6;
};

class KMeansModel final : public tok::FrameTokenizer {
 public:
  KMeansModel() = default;
  explicit KMeansModel(compute::Tensor centroids, std::vector<double> inertia = {});

  const compute::Tensor& centroids() const { return centroids_; }
  /// Inertia after each assignment step, first entry from the k-means++ seeds.
  const std::vector<double>& inertia() const { return inertia_; }
  std::size_t k() const { return centroids_.rows(); }
  std::size_t dim() const { return centroids_.cols(); }

  /// Nearest centroid per frame; throws ShapeError on a dimension mismatch.
  std::vector<int> frame_tokens(const compute::Tensor& features) const override;
  /// The features themselves: k-means has no learned continuous space.
  compute::Tensor latents(const compute::Tensor& features) const override { return features; }
  std::size_t vocab_size() const override { return k(); }

  void save(const std::filesystem::path& path) const;
  static KMeansModel load(const std::filesystem::path& path);

 private:
  compute::Tensor centroids_;
  std::vector<double> inertia_;
};

/// k-means++ seeding followed by Lloyd iterations over the rows of points.
/// Throws std::invalid_argument when k is 0 or exceeds the number of points.
KMeansModel fit(const compute::Tensor& points, const FitOptions& options);

/// Sum of squared distances from each point to its nearest centroid.
double inertia(const compute::Tensor& points, const compute::Tensor& centroids);

/// Up to max_frames rows drawn uniformly without replacement from all frames
/// of the utterances, kept in corpus order.
compute::Tensor sample_frames(const std::vector<synth::Utterance>& utterances, std::size_t max_frames,
                              std::uint64_t seed);

}  // namespace lasttok::kmeans
