// Acceptance run: one PASS/FAIL line per criterion. The fast group finishes in
// seconds; the long group (4, 6, 7) trains full-size models and takes hours
// on one core.

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/gradcheck.hpp"
#include "lasttok/compute/rng.hpp"
#include "lasttok/eval/zeroshot.hpp"
#include "lasttok/kmeans/kmeans.hpp"
#include "lasttok/synth/dataset.hpp"
#include "lasttok/tok/last_model.hpp"
#include "lasttok/train/trainer.hpp"

using namespace lasttok;
using compute::Tensor;
using compute::Var;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(compute::Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal(0.0, 1.0);
  return t;
}

int brute_nearest(const Tensor& codes, const double* u) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codes.rows(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < codes.cols(); ++j) d += (codes.at(k, j) - u[j]) * (codes.at(k, j) - u[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

const synth::World& default_world() {
  static const synth::World w = synth::build_world(synth::WorldConfig{});
  return w;
}

// Small models for the fast group.
struct SmallSetup {
  tok::TokenizerConfig tc;
  textlm::AdapterConfig ac;
  textlm::LMConfig lmc;

  explicit SmallSetup(std::size_t K) {
    tc.codebook_size = K;
    tc.n_enc = 1;
    tc.n_dec = 1;
    ac.codebook_size = K;
    ac.code_dim = 16;
    ac.n_before = 1;
    ac.n_after = 1;
    lmc.n_layers = 1;
    lmc.model_dim = 16;
    lmc.n_heads = 2;
    lmc.vocab = default_world().lexicon.size() + 2;
    lmc.max_seq_len = 128;
    lmc.out_init = 1.0;
  }
};

// 1 ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  SmallSetup s(8);
  // A random adapter head so the LM term carries gradient from the start.
  s.ac.out_init = 1.0;
  tok::LastModel model(s.tc, s.ac, s.lmc, 1);
  textlm::CausalLM lm(s.lmc, 2);
  lm.freeze();
  const auto utts = synth::generate_corpus(default_world(), 2, 3, "gc");
  std::vector<tok::VqPoint> points;
  for (const auto& u : utts) {
    if (!model.losses(u.features, 0, lm, tok::LossWeights{}).lm_valid) {
      return {false, "an utterance collapsed to fewer than two tokens"};
    }
    points.push_back(model.vq_point(u.features));
  }
  // Quantization is linearised at the base point: codes held, stop-gradient
  // operands held at their base values.
  auto loss = [&] {
    Var total = compute::constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < utts.size(); ++i) {
      total = compute::add(total, model.losses(utts[i].features, 0, lm, tok::LossWeights{}, false, &points[i]).total);
    }
    return compute::scale(total, 0.5);
  };
  compute::GradCheckOptions opt;
  opt.samples = 200;
  opt.step = 1e-5;
  opt.tolerance = 1e-3;
  opt.seed = 4;
  const auto params = model.parameters();
  const auto r = compute::grad_check(params, loss, opt);
  const double secs = seconds_since(t0);
  const bool ok = r.passed && r.entries.size() >= 100 && r.max_relative_error <= 1e-3 && secs < 60.0;
  return {ok, fmt("%zu coordinates, max relative error %.3g, %.1f s", r.entries.size(), r.max_relative_error, secs)};
}

// 2 ---------------------------------------------------------------------------

Outcome vq_oracle() {
  Rng rng(11);
  tok::Codebook cb(std::make_shared<compute::Parameter>("codes", random_tensor({32, 16}, rng)));
  // Duplicate rows force ties.
  std::copy_n(cb.codes()->value.row(3), 16, cb.codes()->value.row(20));
  Tensor u = random_tensor({1000, 16}, rng);
  std::copy_n(cb.codes()->value.row(3), 16, u.row(0));
  const auto q = tok::quantize(compute::constant(u), cb, false, false);
  std::size_t match = 0;
  bool rows_ok = true;
  for (std::size_t t = 0; t < u.rows(); ++t) {
    const int want = brute_nearest(cb.codes()->value, u.row(t));
    match += q.codes[t] == want;
    rows_ok = rows_ok && std::equal(q.quantized.value().row(t), q.quantized.value().row(t) + 16,
                                    cb.codes()->value.row(static_cast<std::size_t>(want)));
  }
  return {match == 1000 && rows_ok && q.codes[0] == 3, fmt("%zu/1000 exact matches", match)};
}

// 3 ---------------------------------------------------------------------------

Outcome straight_through() {
  Rng rng(12);
  tok::Codebook cb(std::make_shared<compute::Parameter>("codes", random_tensor({8, 16}, rng)));
  auto up = std::make_shared<compute::Parameter>("u", random_tensor({20, 16}, rng));
  const auto q = tok::quantize(compute::param(up), cb, false, false);
  bool forward = true;
  const auto a = q.straight.value().data(), b = q.quantized.value().data();
  for (std::size_t i = 0; i < a.size(); ++i) forward = forward && std::bit_cast<std::uint64_t>(a[i]) == std::bit_cast<std::uint64_t>(b[i]);
  // d/dq^ sum(q^ * w) = w, so u must receive w exactly.
  const Tensor w = random_tensor(q.straight.shape(), rng);
  compute::backward(compute::sum(compute::mul(q.straight, compute::constant(w))));
  double max_diff = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) max_diff = std::max(max_diff, std::abs(up->grad.data()[i] - w.data()[i]));
  return {forward && max_diff == 0.0, fmt("forward bitwise %s, max abs gradient difference %g", forward ? "equal" : "DIFFERENT", max_diff)};
}

// 5 ---------------------------------------------------------------------------

Outcome dedup_properties() {
  Rng rng(13);
  std::size_t failures = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<int> s(rng.index(64));
    const std::size_t alphabet = 1 + rng.index(6);
    for (auto& x : s) x = static_cast<int>(rng.index(alphabet));
    const auto d = tok::dedup(s);
    bool ok = tok::dedup(d) == d;
    for (std::size_t i = 1; i < d.size(); ++i) ok = ok && d[i] != d[i - 1];
    // Order preservation: d is exactly the run heads of s, in order.
    std::vector<int> heads;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i == 0 || s[i] != s[i - 1]) heads.push_back(s[i]);
    }
    ok = ok && heads == d;
    failures += !ok;
  }
  return {failures == 0, fmt("10000 random sequences, %zu failures", failures)};
}

// 8 ---------------------------------------------------------------------------

Tensor onehot_labels(const synth::Utterance& u, std::size_t classes) {
  const auto labels = u.frame_labels();
  Tensor out({labels.size(), classes});
  for (std::size_t t = 0; t < labels.size(); ++t) out.at(t, static_cast<std::size_t>(labels[t])) = 1.0;
  return out;
}

Outcome metric_calibrations() {
  const auto& world = default_world();
  synth::SuiteConfig sc;
  sc.swuggy = 10;
  sc.sblimp = 10;
  sc.abx = 1000;
  const auto suite = synth::make_suites(world, sc);
  const std::size_t P = world.inventory.size();

  const auto exact = eval::abx_error(suite.abx, suite, [P](const synth::Utterance& u) { return onehot_labels(u, P); });
  const auto noise = eval::abx_error(suite.abx, suite, [](const synth::Utterance& u) {
    Rng rng(std::hash<std::string>{}(u.id));
    return random_tensor({u.frames(), 8}, rng);
  });
  const double exact_err = 0.5 * (exact.within + exact.across);
  const double noise_err = 0.5 * (noise.within + noise.across);

  std::vector<std::vector<int>> labels, phones;
  for (const auto& u : suite.utterances) {
    labels.push_back(u.frame_labels());
    phones.push_back(u.phonemes());
  }
  const auto purity = eval::unit_purity(labels, labels, P, P);
  std::vector<int> identity(P);
  for (std::size_t p = 0; p < P; ++p) identity[p] = static_cast<int>(p);
  const auto per = eval::per_proxy(identity, labels, phones);
  const std::size_t K = 64;
  std::vector<std::vector<int>> uniform(1);
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t k = 0; k < K; ++k) uniform[0].push_back(static_cast<int>(k));
  }
  const auto stats = eval::codebook_stats(uniform, K);

  const bool ok = exact.within == 0.0 && exact.across == 0.0 && std::abs(noise.within - 0.5) <= 0.05 &&
                  std::abs(noise.across - 0.5) <= 0.05 && purity.global == 1.0 && per.per == 0.0 &&
                  std::abs(stats.perplexity - static_cast<double>(K)) <= 1e-9;
  return {ok, fmt("ABX separable %.4g, random %.4f (within %.4f, across %.4f); purity %.6g; PER %.4g; uniform "
                  "perplexity %.6f for K=%zu",
                  exact_err, noise_err, noise.within, noise.across, purity.global, per.per, stats.perplexity, K)};
}

// 9 ---------------------------------------------------------------------------

Outcome kmeans_oracle() {
  Rng rng(14);
  const std::size_t n = 1000, d = 4;
  const double sigma = 0.5;
  const double mu[2][4] = {{-8, 1, 0, 2}, {8, -1, 3, 0}};
  Tensor pts({2 * n, d});
  for (std::size_t i = 0; i < 2 * n; ++i) {
    for (std::size_t j = 0; j < d; ++j) pts.at(i, j) = mu[i % 2][j] + rng.normal(0.0, sigma);
  }
  kmeans::FitOptions opt;
  opt.k = 2;
  const auto m = kmeans::fit(pts, opt);
  const double bound = 3.0 * sigma / std::sqrt(static_cast<double>(n));
  double worst = 0.0;
  for (int b = 0; b < 2; ++b) {
    const auto c = static_cast<std::size_t>(brute_nearest(m.centroids(), mu[b]));
    for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(m.centroids().at(c, j) - mu[b][j]));
  }
  std::size_t increases = 0, iterations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng r(1000 + s);
    const auto data = random_tensor({30 + r.index(200), 1 + r.index(6)}, r);
    kmeans::FitOptions o;
    o.k = 1 + r.index(10);
    o.seed = s;
    const auto h = kmeans::fit(data, o).inertia();
    iterations += h.size();
    for (std::size_t i = 1; i < h.size(); ++i) increases += h[i] > h[i - 1];
  }
  return {worst < bound && increases == 0,
          fmt("max mean error %.4f (bound %.4f); %zu inertia increases over %zu iterations on 100 datasets", worst,
              bound, increases, iterations)};
}

// 10 --------------------------------------------------------------------------

train::TrainConfig small_train(std::size_t steps) {
  train::TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 2;
  c.accum_steps = 2;
  c.warmup_steps = 2;
  c.peak_lr = 1e-3;
  c.final_lr = 1e-4;
  c.crop_frames = 32;
  c.dead_code_steps = 3;
  c.seed = 21;
  return c;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism_and_resume(const fs::path& scratch) {
  const std::size_t N = 8;
  const auto corpus = synth::generate_corpus(default_world(), 40, 22, "dr");
  SmallSetup s(8);
  const auto cfg = small_train(N);
  textlm::CausalLM lm(s.lmc, 23);
  lm.freeze();

  auto fresh = [&](const fs::path& out, std::size_t resume_at) {
    tok::LastModel model(s.tc, s.ac, s.lmc, 24);
    train::init_codebook_kmeans(model, corpus, 300, 25);
    if (resume_at > 0) {
      {
        tok::LastModel first(s.tc, s.ac, s.lmc, 24);
        train::init_codebook_kmeans(first, corpus, 300, 25);
        train::Trainer t(first, lm, corpus, cfg, {});
        t.run(resume_at, out);
      }
      train::Trainer t(model, lm, corpus, cfg, {});
      t.resume(out / "checkpoint.ckpt");
      t.run(N, out);
      return t.log();
    }
    train::Trainer t(model, lm, corpus, cfg, {});
    t.run(N, out);
    return t.log();
  };

  fs::remove_all(scratch);
  const auto a = fresh(scratch / "a", 0);
  const auto b = fresh(scratch / "b", 0);
  const bool same_csv = read_text(scratch / "a" / "metrics.csv") == read_text(scratch / "b" / "metrics.csv") &&
                        !read_text(scratch / "a" / "metrics.csv").empty();
  std::size_t mismatched = 0;
  for (std::size_t k = 1; k < N; ++k) {
    const auto out = scratch / ("resume_" + std::to_string(k));
    const auto log = fresh(out, k);
    const bool same = log == a && read_text(out / "metrics.csv") == read_text(scratch / "a" / "metrics.csv");
    mismatched += !same;
  }
  fs::remove_all(scratch);
  return {same_csv && a == b && mismatched == 0,
          fmt("identical-seed CSVs %s; resume at steps 1..%zu: %zu of %zu logs differ", same_csv ? "identical" : "DIFFER",
              N - 1, mismatched, N - 1)};
}

// 11 --------------------------------------------------------------------------

Outcome schedule_and_accumulation() {
  const train::TrainConfig c;
  double worst = 0.0;
  for (std::size_t s = 0; s <= c.max_steps; ++s) {
    double expected;
    if (s < c.warmup_steps) {
      expected = c.peak_lr * static_cast<double>(s) / static_cast<double>(c.warmup_steps);
    } else {
      const double p = static_cast<double>(s - c.warmup_steps) / static_cast<double>(c.max_steps - c.warmup_steps);
      expected = c.final_lr + 0.5 * (c.peak_lr - c.final_lr) * (1.0 + std::cos(std::numbers::pi * p));
    }
    worst = std::max(worst, std::abs(train::lr_at(s, c) - expected));
  }

  const auto corpus = synth::generate_corpus(default_world(), 20, 31, "acc");
  const tok::TokenizerConfig tc;
  textlm::AdapterConfig ac;
  const auto lmc = textlm::LMConfig::preset("S", default_world().lexicon.size() + 2);
  ac.code_dim = lmc.model_dim;
  textlm::CausalLM lm(lmc, 32);
  lm.freeze();
  auto grads = [&](std::size_t batch, std::size_t accum) {
    tok::LastModel model(tc, ac, lmc, 33);
    train::TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.accum_steps = accum;
    cfg.seed = 34;
    train::Trainer t(model, lm, corpus, cfg, {});
    t.accumulate_only();
    std::vector<double> g;
    for (const auto& p : t.trainable()) g.insert(g.end(), p->grad.data().begin(), p->grad.data().end());
    return g;
  };
  const auto one = grads(8, 1), split = grads(2, 4);
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    diff += (one[i] - split[i]) * (one[i] - split[i]);
    norm += one[i] * one[i];
  }
  const double rel = std::sqrt(diff) / std::sqrt(norm);
  return {worst <= 1e-12 && rel <= 1e-6 && norm > 0.0,
          fmt("lr_at max deviation %.3g over %zu steps; accumulation relative difference %.3g", worst,
              c.max_steps + 1, rel)};
}

// Long group: 4, 6, 7 ---------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  double last_swuggy = 0.0, kmeans_swuggy = 0.0, control_swuggy = 0.0;
  double last_seconds = 0.0, kmeans_seconds = 0.0;
  double usage_perplexity = 0.0;
  bool checksum_same = false, text_loss_same = false;
};

struct LongResults {
  std::vector<SeedResult> seeds;
  double ablation_perplexity = -1.0;
  std::size_t K = 64;
};

double heldout_usage_perplexity(const tok::FrameTokenizer& t, const std::vector<synth::Utterance>& heldout,
                                std::size_t K) {
  std::vector<std::vector<int>> tokens;
  for (const auto& u : heldout) tokens.push_back(t.frame_tokens(u.features));
  return eval::codebook_stats(tokens, K).perplexity;
}

std::function<void(const train::MetricsRow&)> heartbeat(const std::string& tag) {
  return [tag](const train::MetricsRow& r) {
    if (r.step % 500 == 0) {
      std::cerr << fmt("  %s step %zu loss %.4f lm %.4f usage perplexity %.1f\n", tag.c_str(), r.step, r.loss,
                       r.lm_loss, r.codebook_perplexity);
    }
  };
}

LongResults long_runs(std::size_t steps, const std::vector<std::uint64_t>& seeds, bool ablation) {
  LongResults out;
  std::cerr << "generating the default dataset\n";
  const auto data = synth::generate_dataset(synth::DataConfig{});
  const auto lmc = textlm::LMConfig::preset("S", data.world.lexicon.size() + 2);
  textlm::CausalLM lm(lmc, 1);
  std::cerr << "pretraining the text LM\n";
  train::pretrain_text_lm(lm, data.world, train::text_lm_defaults());
  lm.freeze();
  const auto probe = train::heldout_sentences(data.world, 200, 99);
  const auto checksum = lm.checksum();
  const double text_loss = lm.text_loss(probe);

  tok::TokenizerConfig tc;
  textlm::AdapterConfig ac;
  ac.code_dim = lmc.model_dim;
  out.K = tc.codebook_size;
  train::TrainConfig cfg;
  cfg.max_steps = steps;
  if (cfg.warmup_steps >= steps) cfg.warmup_steps = steps / 10;

  auto train_last = [&](std::uint64_t seed, double lambda, const std::string& tag) {
    auto model = std::make_unique<tok::LastModel>(tc, ac, lmc, seed);
    train::TrainConfig c = cfg;
    c.seed = seed;
    tok::LossWeights w;
    w.recon = lambda;
    train::init_codebook_kmeans(*model, data.train, c.codebook_init_frames, seed);
    train::Trainer t(*model, lm, data.train, c, w);
    t.progress = heartbeat(tag);
    t.run(steps);
    return model;
  };

  for (const auto seed : seeds) {
    SeedResult r;
    r.seed = seed;
    {
      textlm::AdapterConfig rc = ac;
      rc.out_init = 1.0;
      const tok::LastModel control(tc, rc, lmc, 100 + seed);
      r.control_swuggy =
          eval::score_pairs(data.suites.swuggy, data.suites, eval::lm_scorer(control, control.adapters(), lm)).accuracy;
    }
    std::cerr << "seed " << seed << ": LAST\n";
    auto t0 = Clock::now();
    const auto model = train_last(seed, 1.0, "LAST seed " + std::to_string(seed));
    r.last_seconds = seconds_since(t0);
    r.last_swuggy =
        eval::score_pairs(data.suites.swuggy, data.suites, eval::lm_scorer(*model, model->adapters(), lm)).accuracy;
    r.usage_perplexity = heldout_usage_perplexity(*model, data.heldout, out.K);
    r.checksum_same = lm.checksum() == checksum;
    r.text_loss_same = std::bit_cast<std::uint64_t>(lm.text_loss(probe)) == std::bit_cast<std::uint64_t>(text_loss);

    std::cerr << "seed " << seed << ": k-means\n";
    t0 = Clock::now();
    kmeans::FitOptions fo;
    fo.k = out.K;
    fo.seed = seed;
    const auto km = kmeans::fit(kmeans::sample_frames(data.train, 10000, seed), fo);
    textlm::SpeechAdapters adapters(ac, lmc, nullptr, seed);
    {
      train::TrainConfig c = cfg;
      c.seed = seed;
      train::Trainer t(km, adapters, lm, data.train, c);
      t.progress = heartbeat("k-means seed " + std::to_string(seed));
      t.run(steps);
    }
    r.kmeans_seconds = seconds_since(t0);
    r.kmeans_swuggy = eval::score_pairs(data.suites.swuggy, data.suites, eval::lm_scorer(km, adapters, lm)).accuracy;
    std::cerr << fmt("seed %llu: LAST %.4f, k-means %.4f, control %.4f, usage perplexity %.2f\n",
                     static_cast<unsigned long long>(seed), r.last_swuggy, r.kmeans_swuggy, r.control_swuggy,
                     r.usage_perplexity);
    out.seeds.push_back(r);
  }
  if (ablation) {
    std::cerr << "lambda = 0 ablation\n";
    const auto model = train_last(seeds.front(), 0.0, "LAST lambda=0");
    out.ablation_perplexity = heldout_usage_perplexity(*model, data.heldout, out.K);
  }
  return out;
}

Outcome frozen_lm(const LongResults& r) {
  bool ok = !r.seeds.empty();
  for (const auto& s : r.seeds) ok = ok && s.checksum_same && s.text_loss_same;
  return {ok, fmt("%zu pretrain-mode runs: checksum and held-out text loss %s", r.seeds.size(),
                  ok ? "bitwise unchanged" : "CHANGED")};
}

Outcome directional(const LongResults& r) {
  double last = 0.0, km = 0.0, control = 0.0, slowest = 0.0;
  bool controls_ok = true;
  std::string per_seed;
  for (const auto& s : r.seeds) {
    last += s.last_swuggy;
    km += s.kmeans_swuggy;
    control += s.control_swuggy;
    slowest = std::max({slowest, s.last_seconds, s.kmeans_seconds});
    controls_ok = controls_ok && std::abs(s.control_swuggy - 0.5) <= 0.05;
    per_seed += fmt(" [seed %llu: %.3f/%.3f/%.3f]", static_cast<unsigned long long>(s.seed), s.last_swuggy,
                    s.kmeans_swuggy, s.control_swuggy);
  }
  const double n = static_cast<double>(r.seeds.size());
  last /= n;
  km /= n;
  control /= n;
  const bool ok = last >= km && last >= 0.65 && controls_ok && slowest < 1800.0;
  return {ok, fmt("mean sWUGGY LAST %.4f, k-means %.4f, random control %.4f; slowest run %.0f s;", last, km, control,
                  slowest) +
                  per_seed};
}

Outcome anti_collapse(const LongResults& r) {
  const double bound = 0.2 * static_cast<double>(r.K);
  bool ok = !r.seeds.empty();
  std::string detail;
  for (const auto& s : r.seeds) {
    ok = ok && s.usage_perplexity >= bound;
    detail += fmt("%s%.2f", detail.empty() ? "" : ", ", s.usage_perplexity);
  }
  std::string ablation = r.ablation_perplexity < 0 ? "not run" : fmt("%.2f (exempt)", r.ablation_perplexity);
  return {ok, "held-out usage perplexity at lambda=1: " + detail + fmt(" (bound %.1f); lambda=0: ", bound) + ablation};
}

json to_json(const LongResults& r) {
  json j;
  j["K"] = r.K;
  j["ablation_lambda0_usage_perplexity"] = r.ablation_perplexity;
  for (const auto& s : r.seeds) {
    j["seeds"].push_back({{"seed", s.seed},
                          {"last_swuggy", s.last_swuggy},
                          {"kmeans_swuggy", s.kmeans_swuggy},
                          {"control_swuggy", s.control_swuggy},
                          {"last_seconds", s.last_seconds},
                          {"kmeans_seconds", s.kmeans_seconds},
                          {"usage_perplexity", s.usage_perplexity},
                          {"lm_checksum_unchanged", s.checksum_same},
                          {"text_loss_unchanged", s.text_loss_same}});
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-11, one PASS/FAIL line each"};
  std::string group = "all";
  std::size_t steps = 5000;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string out;
  bool ablation = true;
  app.add_option("--group", group, "fast (1-3, 5, 8-11), long (4, 6, 7) or all")
      ->check(CLI::IsMember({"fast", "long", "all"}))
      ->capture_default_str();
  app.add_option("--steps", steps, "Training steps of the long runs")->capture_default_str();
  app.add_option("--seeds", seeds, "Seeds of the long runs")->capture_default_str();
  app.add_option("--out", out, "Write long-run results as JSON here");
  app.add_flag("!--no-ablation", ablation, "Skip the lambda = 0 run");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<int, std::function<Outcome()>>> checks;
  const bool fast = group != "long", slow = group != "fast";
  const fs::path scratch = fs::temp_directory_path() / "lasttok_acceptance";
  if (fast) {
    checks.push_back({1, gradient_check});
    checks.push_back({2, vq_oracle});
    checks.push_back({3, straight_through});
    checks.push_back({5, dedup_properties});
    checks.push_back({8, metric_calibrations});
    checks.push_back({9, kmeans_oracle});
    checks.push_back({10, [&] { return determinism_and_resume(scratch); }});
    checks.push_back({11, schedule_and_accumulation});
  }
  std::optional<LongResults> long_results;
  auto long_once = [&]() -> const LongResults& {
    if (!long_results) {
      long_results = long_runs(steps, seeds, ablation);
      if (!out.empty()) {
        fs::create_directories(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
        std::ofstream(out) << to_json(*long_results).dump(2) << "\n";
      }
    }
    return *long_results;
  };
  if (slow) {
    checks.push_back({4, [&] { return frozen_lm(long_once()); }});
    checks.push_back({6, [&] { return directional(long_once()); }});
    checks.push_back({7, [&] { return anti_collapse(long_once()); }});
  }
  std::sort(checks.begin(), checks.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  bool all = true;
  for (const auto& [id, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << fmt("criterion %2d: %s  %s", id, o.pass ? "PASS" : "FAIL", o.detail.c_str()) << std::endl;
  }
  return all ? 0 : 1;
}
