#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <filesystem>
#include <limits>

#include "lasttok/compute/gradcheck.hpp"
#include "lasttok/compute/rng.hpp"
#include "lasttok/errors.hpp"
#include "lasttok/synth/corpus.hpp"
#include "lasttok/tok/last_model.hpp"
#include "lasttok/train/adamw.hpp"
#include "support.hpp"

using namespace lasttok;
using namespace lasttok::tok;
using compute::Tensor;
using compute::Var;
using lasttok::testing::random_tensor;

namespace {

textlm::LMConfig tiny_lm(double out_init = 0.0) {
  textlm::LMConfig c;
  c.n_layers = 1;
  c.model_dim = 16;
  c.n_heads = 2;
  c.vocab = 10;
  c.max_seq_len = 64;
  c.out_init = out_init;
  return c;
}

struct Tiny {
  TokenizerConfig tc;
  textlm::AdapterConfig ac;
  textlm::LMConfig lmc;

  explicit Tiny(std::size_t K = 8, double adapter_out = 0.0) {
    tc.feature_dim = 16;
    tc.codebook_size = K;
    tc.n_enc = 1;
    tc.n_dec = 1;
    tc.heads = 2;
    ac.codebook_size = K;
    ac.code_dim = 16;
    ac.n_before = 1;
    ac.n_after = 1;
    ac.out_init = adapter_out;
    lmc = tiny_lm(1.0);
  }
};

int brute_nearest(const Tensor& codes, const double* u) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codes.rows(); ++k) {
    double d = 0.0;
    for (std::size_t c = 0; c < codes.cols(); ++c) d += (u[c] - codes.at(k, c)) * (u[c] - codes.at(k, c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Codebook codebook_from(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t({rows.size(), rows.begin()->size()});
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (double v : row) t.at(r, c++) = v;
    ++r;
  }
  return Codebook(std::make_shared<compute::Parameter>("codes", t));
}

}  // namespace

TEST_CASE("quantize picks the nearest code with lowest-index ties") {
  auto cb = codebook_from({{0.0, 0.0}, {1.0, 1.0}});
  Tensor u({2, 2});
  u.at(0, 0) = 0.1;
  u.at(0, 1) = 0.2;
  u.at(1, 0) = 0.5;
  u.at(1, 1) = 0.5;
  CHECK(cb.assign(u) == std::vector<int>{0, 0});

  Rng rng(1);
  Codebook big(std::make_shared<compute::Parameter>("codes", random_tensor({32, 6}, rng)));
  const auto queries = random_tensor({1000, 6}, rng);
  const auto z = big.assign(queries);
  for (std::size_t t = 0; t < 1000; ++t) CHECK(z[t] == brute_nearest(big.codes()->value, queries.row(t)));

  // Duplicate codes: the first copy always wins.
  auto dup = codebook_from({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
  Tensor q({1, 2});
  q.at(0, 0) = 0.9;
  CHECK(dup.assign(q)[0] == 0);
}

TEST_CASE("quantize outputs, losses and usage") {
  Rng rng(2);
  Codebook cb(std::make_shared<compute::Parameter>("codes", random_tensor({5, 3}, rng)));
  const Var u = compute::param(std::make_shared<compute::Parameter>("u", random_tensor({7, 3}, rng)));
  const auto q = quantize(u, cb);
  double cb_loss = 0.0;
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double code = cb.codes()->value.at(static_cast<std::size_t>(q.codes[t]), c);
      CHECK(q.quantized.value().at(t, c) == code);
      CHECK(q.straight.value().at(t, c) == code);
      cb_loss += (u.value().at(t, c) - code) * (u.value().at(t, c) - code);
    }
  }
  CHECK(q.codebook_loss.value().item() == doctest::Approx(cb_loss / 7.0).epsilon(1e-12));
  CHECK(q.commit_loss.value().item() == doctest::Approx(cb_loss / 7.0).epsilon(1e-12));
  std::uint64_t used = 0;
  for (auto c : cb.usage()) used += c;
  CHECK(used == 7);
  CHECK_THROWS_AS(quantize(compute::constant(Tensor({0, 3})), cb), std::invalid_argument);
}

TEST_CASE("straight-through passes the downstream gradient to u unchanged") {
  Rng rng(3);
  Codebook cb(std::make_shared<compute::Parameter>("codes", random_tensor({4, 3}, rng)));
  auto up = std::make_shared<compute::Parameter>("u", random_tensor({6, 3}, rng));
  compute::backward(testing::probe(quantize(compute::param(up), cb, false, false).straight, 7));
  const Tensor through_q = up->grad;
  up->zero_grad();
  compute::backward(testing::probe(compute::param(up), 7));
  for (std::size_t i = 0; i < through_q.size(); ++i) CHECK(through_q.data()[i] == up->grad.data()[i]);
}

TEST_CASE("dedup examples and properties") {
  const std::vector<int> z = {3, 3, 5, 5, 5, 2};
  CHECK(dedup(z) == std::vector<int>{3, 5, 2});
  CHECK(dedup(std::vector<int>{}).empty());
  const auto d = dedup_with_positions(z);
  CHECK(d.positions == std::vector<int>{0, 2, 5});

  Rng rng(4);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> s(rng.index(30));
    for (auto& x : s) x = static_cast<int>(rng.index(4));
    const auto once = dedup(s);
    CHECK(dedup(once) == once);
    for (std::size_t i = 1; i < once.size(); ++i) CHECK(once[i] != once[i - 1]);
    // Expanding each kept token over its run recovers the input.
    const auto dp = dedup_with_positions(s);
    for (std::size_t i = 0; i < dp.tokens.size(); ++i) {
      const std::size_t end = i + 1 < dp.positions.size() ? static_cast<std::size_t>(dp.positions[i + 1]) : s.size();
      for (std::size_t t = static_cast<std::size_t>(dp.positions[i]); t < end; ++t) CHECK(s[t] == dp.tokens[i]);
    }
  }
}

TEST_CASE("encoder keeps length and mixes frames") {
  Tiny cfg;
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 5);
  Rng rng(5);
  const auto one = random_tensor({1, 16}, rng);
  CHECK(m.encode(compute::constant(one)).value().rows() == 1);

  auto v = random_tensor({6, 16}, rng);
  const auto u0 = m.encode(compute::constant(v)).value();
  CHECK(u0.rows() == 6);
  CHECK(u0.cols() == m.code_dim());
  v.at(4, 2) += 0.5;
  const auto u1 = m.encode(compute::constant(v)).value();
  CHECK(u1.rows() == 6);
  bool other_row_changed = false;
  for (std::size_t c = 0; c < u0.cols(); ++c) other_row_changed = other_row_changed || u0.at(0, c) != u1.at(0, c);
  CHECK(other_row_changed);
}

TEST_CASE("zero encoder projection yields the bias in every row") {
  Tiny cfg;
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 6);
  for (const auto& p : m.tokenizer_parameters()) {
    if (p->name == "tok.enc.proj.weight") p->value.fill(0.0);
    if (p->name == "tok.enc.proj.bias") {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value.data()[i] = 0.1 * static_cast<double>(i);
    }
  }
  Rng rng(6);
  const auto u = m.encode(compute::constant(random_tensor({5, 16}, rng))).value();
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t c = 0; c < u.cols(); ++c) CHECK(u.at(t, c) == 0.1 * static_cast<double>(c));
  }
}

TEST_CASE("recon_loss examples") {
  Rng rng(7);
  const auto v = random_tensor({4, 3}, rng);
  CHECK(recon_loss(compute::constant(v), compute::constant(v)).value().item() == 0.0);
  auto shifted = v;
  for (auto& x : shifted.data()) x += 1.0;
  CHECK(recon_loss(compute::constant(shifted), compute::constant(v)).value().item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(recon_loss(compute::constant(v), compute::constant(Tensor({3, 4}))), compute::ShapeError);
}

TEST_CASE("loss parts combine with their weights") {
  Tiny cfg;
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 7);
  textlm::CausalLM lm(cfg.lmc, 8);
  lm.freeze();
  Rng rng(8);
  const auto v = random_tensor({12, 16}, rng);

  const auto parts = m.losses(v, 0, lm, LossWeights{1.0, 1.0, 0.25});
  CHECK(std::isfinite(parts.recon.value().item()));
  CHECK(parts.recon.value().item() > 0.0);
  if (parts.lm_valid) {
    const double expected = parts.lm.value().item() + parts.recon.value().item() +
                            parts.codebook.value().item() + 0.25 * parts.commit.value().item();
    CHECK(parts.total.value().item() == doctest::Approx(expected).epsilon(1e-12));
  }

  const auto lm_only = m.losses(v, 0, lm, LossWeights{0.0, 0.0, 0.0});
  REQUIRE(lm_only.lm_valid);
  CHECK(lm_only.total.value().item() == lm_only.lm.value().item());

  // Constant frames give one token after dedup, so only the auxiliary terms remain.
  Tensor flat({9, 16});
  for (std::size_t t = 0; t < 9; ++t) {
    for (std::size_t c = 0; c < 16; ++c) flat.at(t, c) = v.at(0, c);
  }
  const auto recon_only = m.losses(flat, 0, lm, LossWeights{1.0, 0.0, 0.0});
  CHECK_FALSE(recon_only.lm_valid);
  CHECK(recon_only.lm_tokens == 1);
  CHECK(recon_only.total.value().item() == recon_only.recon.value().item());
}

TEST_CASE("uniform adapter predictions give an LM loss of ln K") {
  Tiny cfg(8, 0.0);
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 9);
  textlm::CausalLM lm(cfg.lmc, 9);
  Rng rng(9);
  const auto parts = m.losses(random_tensor({20, 16}, rng), 0, lm, LossWeights{});
  REQUIRE(parts.lm_valid);
  CHECK(parts.lm.value().item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("adapters learn a deterministic repeating stream") {
  textlm::CausalLM lm(tiny_lm(1.0), 10);
  lm.freeze();
  textlm::AdapterConfig ac;
  ac.codebook_size = 4;
  ac.code_dim = 16;
  ac.n_before = 1;
  ac.n_after = 1;
  textlm::SpeechAdapters ad(ac, lm.config(), nullptr, 11);
  std::vector<int> stream;
  for (int i = 0; i < 24; ++i) stream.push_back(i % 4);
  const std::span<const int> all(stream);
  train::TrainConfig tc;
  tc.weight_decay = 0.0;
  train::AdamW opt(ad.parameters(), tc);
  double loss = 0.0;
  for (int step = 0; step < 150; ++step) {
    opt.zero_grad();
    const Var l = compute::cross_entropy(ad.logits(all.first(all.size() - 1), lm), all.subspan(1));
    loss = l.value().item();
    compute::backward(l);
    opt.step(3e-3);
  }
  CHECK(loss < 0.2 * std::log(4.0));
}

TEST_CASE("gradients of the full objective match finite differences") {
  for (bool codebook_lm_grad : {false, true}) {
    Tiny cfg(8, 1.0);
    cfg.tc.codebook_lm_grad = codebook_lm_grad;
    LastModel m(cfg.tc, cfg.ac, cfg.lmc, 12);
    textlm::CausalLM lm(cfg.lmc, 13);
    lm.freeze();
    Rng rng(14);
    const std::vector<Tensor> batch = {random_tensor({10, 16}, rng), random_tensor({7, 16}, rng)};
    // The quantizer is piecewise constant, so differences are taken with it
    // linearised at the unperturbed point.
    std::vector<VqPoint> points;
    for (const auto& v : batch) {
      REQUIRE(m.losses(v, 0, lm, LossWeights{}).lm_valid);
      points.push_back(m.vq_point(v));
    }
    auto loss_fn = [&] {
      Var total = compute::constant(Tensor::scalar(0.0));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        total = compute::add(total, m.losses(batch[i], 0, lm, LossWeights{}, false, &points[i]).total);
      }
      return compute::scale(total, 0.5);
    };
    // At the point itself the linearised graph is the training graph.
    const double direct = 0.5 * (m.losses(batch[0], 0, lm, LossWeights{}).total.value().item() +
                                 m.losses(batch[1], 0, lm, LossWeights{}).total.value().item());
    CHECK(loss_fn().value().item() == doctest::Approx(direct).epsilon(1e-14));

    compute::GradCheckOptions opt;
    opt.samples = 150;
    opt.step = 1e-5;
    opt.tolerance = 1e-3;
    const auto params = m.parameters();
    const auto report = compute::grad_check(params, loss_fn, opt);
    INFO("codebook_lm_grad " << codebook_lm_grad << " max relative error " << report.max_relative_error);
    for (const auto& e : report.entries) {
      if (e.relative_error > opt.tolerance) {
        MESSAGE(e.parameter << "[" << e.index << "] analytic " << e.analytic << " numeric " << e.numeric);
      }
    }
    CHECK(report.passed);
    CHECK(report.entries.size() >= 100);
  }
}

TEST_CASE("linearised and straight-through gradients agree at the point") {
  Tiny cfg(8, 1.0);
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 19);
  textlm::CausalLM lm(cfg.lmc, 20);
  lm.freeze();
  Rng rng(21);
  const auto v = random_tensor({11, 16}, rng);
  const auto base = m.losses(v, 0, lm, LossWeights{});
  const VqPoint point = m.vq_point(v);
  CHECK(point.codes == base.codes);
  const auto params = m.parameters();
  for (const auto& p : params) p->zero_grad();
  compute::backward(base.total);
  std::vector<Tensor> ste;
  for (const auto& p : params) ste.push_back(p->grad);
  for (const auto& p : params) p->zero_grad();
  compute::backward(m.losses(v, 0, lm, LossWeights{}, false, &point).total);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < ste[i].size(); ++j) {
      CHECK(params[i]->grad.data()[j] == doctest::Approx(ste[i].data()[j]).epsilon(1e-12).scale(1e-12));
    }
  }
}

TEST_CASE("tokenize is deterministic, in range and collapses constant input") {
  synth::WorldConfig wc;
  wc.noise_rel = 0.0;
  const auto world = synth::build_world(wc);
  Tiny cfg;
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 15);
  const auto u = synth::synthesize_phonemes(world.inventory, {3}, synth::SpeakerProfile::identity(0, 16), 1, "c");
  CHECK(m.tokenize(u.features).size() == 1);

  const auto corpus = synth::generate_corpus(world, 5, 2, "t");
  for (const auto& utt : corpus) {
    const auto a = m.tokenize(utt.features);
    CHECK(a == m.tokenize(utt.features));
    for (int z : m.frame_tokens(utt.features)) {
      CHECK(z >= 0);
      CHECK(z < 8);
    }
  }
}

TEST_CASE("codebook and lookup table share storage") {
  Tiny cfg;
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 16);
  CHECK(m.adapters().lookup() == m.codebook().codes());
  m.codebook().codes()->value.at(2, 3) = 42.0;
  CHECK(m.adapters().lookup()->value.at(2, 3) == 42.0);
}

TEST_CASE("tokenizer checkpoints round trip") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "lasttok_tokenizer.ckpt";
  Tiny cfg(8, 1.0);
  LastModel m(cfg.tc, cfg.ac, cfg.lmc, 17);
  m.codebook().record(std::vector<int>{1, 1, 5});
  m.save(path);
  const auto back = LastModel::load(path);
  CHECK(back->adapters().lookup() == back->codebook().codes());
  CHECK(back->codebook().usage() == m.codebook().usage());
  const auto a = m.parameters(), b = back->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(std::ranges::equal(a[i]->value.data(), b[i]->value.data()));
  }
  Rng rng(18);
  const auto v = random_tensor({9, 16}, rng);
  CHECK(back->frame_tokens(v) == m.frame_tokens(v));
  fs::remove(path);
  CHECK_THROWS_AS(LastModel::load(path), MissingArtifact);
}

TEST_CASE("tokenizer configs are validated") {
  Tiny cfg;
  cfg.ac.codebook_size = 9;
  CHECK_THROWS_AS(LastModel(cfg.tc, cfg.ac, cfg.lmc, 1), ConfigError);
  Tiny cfg2;
  cfg2.tc.heads = 3;
  CHECK_THROWS_AS(LastModel(cfg2.tc, cfg2.ac, cfg2.lmc, 1), ConfigError);
}

TEST_CASE("token exports round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "lasttok_token_export";
  fs::remove_all(dir);
  TokenExport e;
  e.meta = {{"vocab_size", 8}};
  e.ids = {"a", "b", "c"};
  e.tokens = {{1, 2, 3}, {}, {7}};
  write_token_export(e, dir);
  const auto back = read_token_export(dir);
  CHECK(back.ids == e.ids);
  CHECK(back.tokens == e.tokens);
  CHECK(back.meta.at("vocab_size") == 8);
  {
    std::ofstream out(dir / "tokens.txt", std::ios::app);
    out << "d 1 x\n";
  }
  CHECK_THROWS_AS(read_token_export(dir), ParseError);
  fs::remove_all(dir);
}
