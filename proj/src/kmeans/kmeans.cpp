#include "lasttok/kmeans/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lasttok/compute/rng.hpp"
#include "lasttok/compute/simd.hpp"
#include "lasttok/io/archive.hpp"

namespace lasttok::kmeans {

using compute::Tensor;

KMeansModel::KMeansModel(Tensor centroids, std::vector<double> inertia)
    : centroids_(std::move(centroids)), inertia_(std::move(inertia)) {}

std::vector<int> KMeansModel::frame_tokens(const Tensor& features) const {
  if (features.cols() != dim()) {
    throw compute::ShapeError("kmeans: frame dim " + std::to_string(features.cols()) + " != centroid dim " +
                              std::to_string(dim()));
  }
  std::vector<int> out(features.rows());
  for (std::size_t t = 0; t < features.rows(); ++t) out[t] = tok::nearest_row(centroids_, features.row(t));
  return out;
}

void KMeansModel::save(const std::filesystem::path& path) const {
  io::TensorArchive archive;
  archive.metadata["kind"] = "kmeans";
  archive.metadata["inertia"] = inertia_;
  archive.put("kmeans.centroids", centroids_);
  archive.save(path);
}

KMeansModel KMeansModel::load(const std::filesystem::path& path) {
  const auto archive = io::TensorArchive::load(path);
  return KMeansModel(archive.get("kmeans.centroids"),
                     archive.metadata.value("inertia", std::vector<double>{}));
}

double inertia(const Tensor& points, const Tensor& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const int c = tok::nearest_row(centroids, points.row(i));
    total += simd::squared_distance(points.row(i), centroids.row(c), points.cols());
  }
  return total;
}

namespace {

Tensor plus_plus_seeds(const Tensor& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows(), d = points.cols();
  Tensor centroids({k, d});
  std::size_t first = rng.index(n);
  std::copy(points.row(first), points.row(first) + d, centroids.row(0));
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = simd::squared_distance(points.row(i), centroids.row(0), d);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc > target && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
      // Rounding can leave the fallback on an already-chosen point.
      while (dist[pick] == 0.0 && pick > 0) --pick;
    } else {
      // Fewer distinct points than clusters: duplicates are unavoidable.
      pick = rng.index(n);
    }
    std::copy(points.row(pick), points.row(pick) + d, centroids.row(c));
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], simd::squared_distance(points.row(i), centroids.row(c), d));
    }
  }
  return centroids;
}

}  // namespace

KMeansModel fit(const Tensor& points, const FitOptions& options) {
  const std::size_t n = points.rows(), d = points.cols(), k = options.k;
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (k > n) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                " available points");
  }
  Rng rng(options.seed);
  Tensor centroids = plus_plus_seeds(points, k, rng);
  std::vector<double> history;
  std::vector<int> assign(n, -1);
  std::vector<double> dist(n);
  bool settled = false;

  for (std::size_t iter = 0;; ++iter) {
    bool changed = false;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = tok::nearest_row(centroids, points.row(i));
      if (c != assign[i]) changed = true;
      assign[i] = c;
      dist[i] = simd::squared_distance(points.row(i), centroids.row(c), d);
      total += dist[i];
    }
    history.push_back(total);
    if (!changed || settled || iter >= options.max_iter) break;

    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      simd::axpy(1.0, points.row(i), sums.row(assign[i]), d);
      ++counts[assign[i]];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < d; ++j) sums.at(c, j) *= inv;
      max_shift = std::max(max_shift, std::sqrt(simd::squared_distance(sums.row(c), centroids.row(c), d)));
      std::copy(sums.row(c), sums.row(c) + d, centroids.row(c));
    }
    // Empty clusters take the point farthest from its centroid, drawn only
    // from clusters that keep at least one other member.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) break;
      --counts[assign[far]];
      assign[far] = static_cast<int>(c);
      counts[c] = 1;
      dist[far] = 0.0;
      std::copy(points.row(far), points.row(far) + d, centroids.row(c));
      max_shift = std::max(max_shift, options.tol + 1.0);
    }
    // Settled centroids still get one more assignment pass so the last
    // inertia entry describes the returned model.
    if (max_shift < options.tol) settled = true;
  }
  return KMeansModel(std::move(centroids), std::move(history));
}

Tensor sample_frames(const std::vector<synth::Utterance>& utterances, std::size_t max_frames, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& u : utterances) total += u.frames();
  if (total == 0) throw std::invalid_argument("sample_frames: no frames");
  const std::size_t d = utterances.front().features.cols();
  const std::size_t n = std::min(total, max_frames);
  // Selection sampling keeps the chosen frames in corpus order.
  Rng rng(seed);
  Tensor out({n, d});
  std::size_t chosen = 0, seen = 0;
  for (const auto& u : utterances) {
    for (std::size_t t = 0; t < u.frames() && chosen < n; ++t, ++seen) {
      if (static_cast<double>(total - seen) * rng.uniform() < static_cast<double>(n - chosen)) {
        std::copy(u.features.row(t), u.features.row(t) + d, out.row(chosen++));
      }
    }
  }
  return out;
}

}  // namespace lasttok::kmeans
