#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "lasttok/compute/rng.hpp"
#include "lasttok/errors.hpp"
#include "lasttok/kmeans/kmeans.hpp"
#include "lasttok/synth/world.hpp"
#include "support.hpp"

using namespace lasttok;
using namespace lasttok::kmeans;
using compute::Tensor;
using lasttok::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

int brute_nearest(const Tensor& c, const double* x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < c.rows(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < c.cols(); ++j) d += (c.at(k, j) - x[j]) * (c.at(k, j) - x[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("two well separated blobs recover their means") {
  Rng rng(1);
  const std::size_t n = 500, d = 3;
  const double sigma = 0.5;
  const double mu[2][3] = {{-10.0, 0.0, 2.0}, {10.0, 1.0, -2.0}};
  Tensor pts({2 * n, d});
  for (std::size_t i = 0; i < 2 * n; ++i) {
    for (std::size_t j = 0; j < d; ++j) pts.at(i, j) = mu[i % 2][j] + rng.normal(0.0, sigma);
  }
  FitOptions opt;
  opt.k = 2;
  const auto m = fit(pts, opt);
  for (int b = 0; b < 2; ++b) {
    const int c = brute_nearest(m.centroids(), mu[b]);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::abs(m.centroids().at(static_cast<std::size_t>(c), j) - mu[b][j]) <
            3.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
  }
  CHECK(brute_nearest(m.centroids(), mu[0]) != brute_nearest(m.centroids(), mu[1]));
}

TEST_CASE("inertia never increases across Lloyd iterations") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const std::size_t n = 20 + rng.index(80);
    const auto pts = random_tensor({n, 4}, rng);
    FitOptions opt;
    opt.k = 1 + rng.index(8);
    opt.seed = s;
    const auto m = fit(pts, opt);
    const auto& h = m.inertia();
    REQUIRE(!h.empty());
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] * (1.0 + 1e-12) + 1e-12);
    CHECK(h.back() == doctest::Approx(inertia(pts, m.centroids())).epsilon(1e-12));
  }
}

TEST_CASE("one cluster per point gives zero inertia") {
  Rng rng(2);
  const auto pts = random_tensor({12, 5}, rng);
  FitOptions opt;
  opt.k = 12;
  const auto m = fit(pts, opt);
  CHECK(inertia(pts, m.centroids()) == doctest::Approx(0.0).scale(1.0));
  std::set<int> used;
  for (int t : m.frame_tokens(pts)) used.insert(t);
  CHECK(used.size() == 12);
}

TEST_CASE("assignment agrees with a brute-force search") {
  Rng rng(3);
  const auto pts = random_tensor({300, 6}, rng);
  FitOptions opt;
  opt.k = 16;
  const auto m = fit(pts, opt);
  const auto frames = random_tensor({1000, 6}, rng);
  const auto tokens = m.frame_tokens(frames);
  for (std::size_t t = 0; t < frames.rows(); ++t) CHECK(tokens[t] == brute_nearest(m.centroids(), frames.row(t)));
}

TEST_CASE("equidistant frames go to the lowest index") {
  Tensor c({3, 2});
  c.at(0, 0) = 1.0;
  c.at(1, 0) = -1.0;
  c.at(2, 0) = 1.0;
  const KMeansModel m(c);
  Tensor x({2, 2});
  x.at(1, 0) = 1.0;
  CHECK(m.frame_tokens(x) == std::vector<int>{0, 0});
  CHECK_THROWS_AS(m.frame_tokens(Tensor({1, 3})), compute::ShapeError);
}

TEST_CASE("k outside 1..n is rejected") {
  Rng rng(4);
  const auto pts = random_tensor({5, 2}, rng);
  FitOptions opt;
  opt.k = 6;
  CHECK_THROWS_AS(fit(pts, opt), std::invalid_argument);
  opt.k = 0;
  CHECK_THROWS_AS(fit(pts, opt), std::invalid_argument);
}

TEST_CASE("duplicate points with more clusters than distinct values still fit") {
  Tensor pts({6, 2});
  for (std::size_t i = 3; i < 6; ++i) pts.at(i, 0) = 1.0;
  FitOptions opt;
  opt.k = 4;
  const auto m = fit(pts, opt);
  CHECK(m.k() == 4);
  CHECK(inertia(pts, m.centroids()) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("fits are deterministic in the seed") {
  Rng rng(5);
  const auto pts = random_tensor({200, 3}, rng);
  FitOptions opt;
  opt.k = 7;
  opt.seed = 11;
  const auto a = fit(pts, opt), b = fit(pts, opt);
  CHECK(std::ranges::equal(a.centroids().data(), b.centroids().data()));
}

TEST_CASE("frame sampling is bounded, ordered and deterministic") {
  synth::WorldConfig wc;
  wc.words = 30;
  const auto w = synth::build_world(wc);
  const auto corpus = synth::generate_corpus(w, 6, 2, "km");
  std::size_t total = 0;
  for (const auto& u : corpus) total += u.frames();
  const auto all = sample_frames(corpus, total + 10, 1);
  CHECK(all.rows() == total);
  CHECK(all.at(0, 0) == corpus[0].features.at(0, 0));
  const auto some = sample_frames(corpus, 25, 3);
  CHECK(some.rows() == 25);
  CHECK(std::ranges::equal(some.data(), sample_frames(corpus, 25, 3).data()));
}

TEST_CASE("k-means checkpoints round trip") {
  const auto dir = fs::temp_directory_path() / "lasttok_kmeans_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(6);
  const auto pts = random_tensor({50, 4}, rng);
  FitOptions opt;
  opt.k = 5;
  const auto m = fit(pts, opt);
  m.save(dir / "kmeans.ckpt");
  const auto back = KMeansModel::load(dir / "kmeans.ckpt");
  CHECK(std::ranges::equal(back.centroids().data(), m.centroids().data()));
  CHECK(back.inertia() == m.inertia());
  CHECK(back.frame_tokens(pts) == m.frame_tokens(pts));
  CHECK_THROWS_AS(KMeansModel::load(dir / "nope.ckpt"), MissingArtifact);
  fs::remove_all(dir);
}
