#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lasttok/compute/rng.hpp"
#include "lasttok/errors.hpp"
#include "lasttok/synth/world.hpp"
#include "lasttok/textlm/adapters.hpp"
#include "lasttok/train/trainer.hpp"
#include "support.hpp"

using namespace lasttok;
using namespace lasttok::textlm;
using compute::Var;
namespace fs = std::filesystem;

namespace {

LMConfig small_lm(std::size_t vocab = 12) {
  LMConfig c;
  c.n_layers = 1;
  c.model_dim = 16;
  c.n_heads = 2;
  c.vocab = vocab;
  c.max_seq_len = 32;
  return c;
}

AdapterConfig small_adapters(std::size_t K, double out_init) {
  AdapterConfig a;
  a.codebook_size = K;
  a.code_dim = 8;
  a.n_before = 1;
  a.n_after = 1;
  a.out_init = out_init;
  return a;
}

double log_softmax_at(const double* row, std::size_t n, std::size_t k) {
  double mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - mx);
  return row[k] - mx - std::log(s);
}

compute::ParamPtr find_param(const std::vector<compute::ParamPtr>& ps, const std::string& name) {
  for (const auto& p : ps) {
    if (p->name == name) return p;
  }
  FAIL("no parameter " << name);
  return nullptr;
}

}  // namespace

TEST_CASE("untrained text LM with a zero head predicts uniformly") {
  const auto w = synth::build_world(synth::WorldConfig{});
  const auto cfg = LMConfig::preset("S", w.lexicon.size() + 2);
  CausalLM lm(cfg, 3);
  const auto sentences = train::heldout_sentences(w, 50, 1);
  CHECK(lm.text_loss(sentences) == doctest::Approx(std::log(static_cast<double>(cfg.vocab))).epsilon(0.1 / 5.3));
}

TEST_CASE("text LM pretraining learns the grammar and freezes") {
  const auto w = synth::build_world(synth::WorldConfig{});
  const auto cfg = LMConfig::preset("S", w.lexicon.size() + 2);
  CausalLM lm(cfg, 1);
  const auto probe = train::heldout_sentences(w, 200, 99);
  const double before = lm.text_loss(probe);
  auto tc = train::text_lm_defaults();
  tc.max_steps = 2000;
  const auto log = train::pretrain_text_lm(lm, w, tc);
  REQUIRE(log.size() == 2000);
  const double after = lm.text_loss(probe);
  CHECK(after < before);
  CHECK(after < 0.8 * std::log(static_cast<double>(cfg.vocab)));

  lm.freeze();
  REQUIRE(lm.frozen_checksum());
  CHECK(*lm.frozen_checksum() == lm.checksum());
  for (const auto& p : lm.parameters()) CHECK_FALSE(p->trainable);
}

TEST_CASE("text logits are causal") {
  CausalLM lm([] {
    auto c = small_lm();
    c.out_init = 1.0;
    return c;
  }(), 5);
  const std::vector<int> a = {10, 1, 2, 3, 4}, b = {10, 1, 2, 7, 8};
  const auto la = lm.text_logits(a).value(), lb = lm.text_logits(b).value();
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < la.cols(); ++k) CHECK(la.at(t, k) == lb.at(t, k));
  }
  bool differs = false;
  for (std::size_t k = 0; k < la.cols(); ++k) differs = differs || la.at(3, k) != lb.at(3, k);
  CHECK(differs);
}

TEST_CASE("zero-init adapter head gives ln K per token") {
  CausalLM lm(small_lm(), 1);
  SpeechAdapters ad(small_adapters(6, 0.0), lm.config(), nullptr, 2);
  const std::vector<int> z = {0, 3, 1, 5, 2};
  const auto s = sequence_logprob(z, ad, lm);
  CHECK(s.count == 4);
  CHECK(s.total_logprob == doctest::Approx(-4.0 * std::log(6.0)).epsilon(1e-12));
  CHECK(s.mean() == doctest::Approx(-std::log(6.0)).epsilon(1e-12));

  const std::vector<int> two = {1, 4};
  CHECK(sequence_logprob(two, ad, lm).count == 1);

  // Self-concatenation leaves the geometric mean of a uniform model unchanged.
  std::vector<int> doubled = z;
  doubled.insert(doubled.end(), z.begin(), z.end());
  CHECK(sequence_logprob(doubled, ad, lm).mean() == doctest::Approx(s.mean()).epsilon(1e-12));
}

TEST_CASE("sequence_logprob matches the chain rule over prefixes") {
  CausalLM lm(small_lm(), 4);
  SpeechAdapters ad(small_adapters(3, 1.0), lm.config(), nullptr, 5);
  for (int z1 = 0; z1 < 3; ++z1) {
    for (int z2 = 0; z2 < 3; ++z2) {
      for (int z3 = 0; z3 < 3; ++z3) {
        if (z1 == z2 || z2 == z3) continue;
        const std::vector<int> p1 = {z1}, p2 = {z1, z2}, z = {z1, z2, z3};
        const auto l1 = ad.logits(p1, lm).value();
        const auto l2 = ad.logits(p2, lm).value();
        const double expected = log_softmax_at(l1.row(0), 3, static_cast<std::size_t>(z2)) +
                                log_softmax_at(l2.row(1), 3, static_cast<std::size_t>(z3));
        CHECK(sequence_logprob(z, ad, lm).total_logprob == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("relabelling codes and tokens consistently keeps the score") {
  CausalLM lm(small_lm(), 6);
  SpeechAdapters ad(small_adapters(5, 1.0), lm.config(), nullptr, 7);
  const std::vector<int> z = {0, 2, 4, 1, 3, 0};
  const double before = sequence_logprob(z, ad, lm).total_logprob;

  const std::vector<int> perm = {3, 0, 4, 2, 1};
  auto lookup = ad.lookup();
  auto w = find_param(ad.parameters(), "adapters.out_proj.weight");
  auto b = find_param(ad.parameters(), "adapters.out_proj.bias");
  const auto old_lookup = lookup->value, old_w = w->value, old_b = b->value;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto pk = static_cast<std::size_t>(perm[k]);
    for (std::size_t c = 0; c < lookup->value.cols(); ++c) lookup->value.at(pk, c) = old_lookup.at(k, c);
    for (std::size_t r = 0; r < w->value.rows(); ++r) w->value.at(r, pk) = old_w.at(r, k);
    b->value.data()[pk] = old_b.data()[k];
  }
  std::vector<int> relabelled;
  for (int t : z) relabelled.push_back(perm[static_cast<std::size_t>(t)]);
  CHECK(sequence_logprob(relabelled, ad, lm).total_logprob == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("sequence_logprob rejects contract violations") {
  CausalLM lm(small_lm(), 1);
  SpeechAdapters ad(small_adapters(4, 0.0), lm.config(), nullptr, 2);
  const std::vector<int> dup = {1, 1, 2}, one = {1}, out = {1, 4};
  CHECK_THROWS_AS(sequence_logprob(dup, ad, lm), std::invalid_argument);
  CHECK_THROWS_AS(sequence_logprob(one, ad, lm), std::invalid_argument);
  CHECK_THROWS_AS(sequence_logprob(out, ad, lm), std::out_of_range);
  std::vector<int> overlong;
  for (int i = 0; i < 40; ++i) overlong.push_back(i % 2);
  CHECK_THROWS(ad.logits(overlong, lm));
}

TEST_CASE("pretrain mode keeps LM gradients out, finetune lets them in") {
  CausalLM lm([] {
    auto c = small_lm();
    c.out_init = 1.0;
    return c;
  }(), 8);
  SpeechAdapters ad(small_adapters(5, 1.0), lm.config(), nullptr, 9);
  const std::vector<int> z = {0, 2, 4, 1};

  apply_mode(lm, LMMode::pretrain);
  REQUIRE(lm.frozen());
  const auto checksum = lm.checksum();
  compute::backward(testing::probe(ad.logits(z, lm)));
  for (const auto& p : lm.parameters()) {
    for (double g : p->grad.data()) CHECK(g == 0.0);
  }
  double adapter_norm = 0.0;
  for (const auto& p : ad.parameters()) {
    for (double g : p->grad.data()) adapter_norm += g * g;
  }
  CHECK(adapter_norm > 0.0);
  CHECK(lm.checksum() == checksum);

  for (const auto& p : ad.parameters()) p->zero_grad();
  apply_mode(lm, LMMode::finetune);
  compute::backward(testing::probe(ad.logits(z, lm)));
  double lm_norm = 0.0;
  for (const auto& p : lm.parameters()) {
    for (double g : p->grad.data()) lm_norm += g * g;
  }
  CHECK(lm_norm > 0.0);
}

TEST_CASE("LM and adapter checkpoints round trip") {
  const auto dir = fs::temp_directory_path() / "lasttok_textlm_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CausalLM lm([] {
    auto c = small_lm();
    c.out_init = 1.0;
    return c;
  }(), 10);
  lm.freeze();
  lm.save(dir / "lm.ckpt");
  const auto back = CausalLM::load(dir / "lm.ckpt");
  CHECK(back.checksum() == lm.checksum());
  CHECK(back.frozen());
  REQUIRE(back.frozen_checksum());
  CHECK(*back.frozen_checksum() == lm.checksum());

  SpeechAdapters ad(small_adapters(5, 1.0), lm.config(), nullptr, 11);
  ad.save(dir / "adapters.ckpt", lm.config());
  const auto ad2 = SpeechAdapters::load(dir / "adapters.ckpt");
  const std::vector<int> z = {4, 0, 3, 1};
  CHECK(sequence_logprob(z, ad2, back).total_logprob == sequence_logprob(z, ad, lm).total_logprob);

  CHECK_THROWS_AS(CausalLM::load(dir / "missing.ckpt"), MissingArtifact);
  CHECK_THROWS_AS(CausalLM::load(dir / "adapters.ckpt"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("shared lookup tables are not saved as stand-alone adapters") {
  CausalLM lm(small_lm(), 1);
  auto table = std::make_shared<compute::Parameter>("codes", compute::Tensor({4, 8}));
  SpeechAdapters ad(small_adapters(4, 0.0), lm.config(), table, 2);
  CHECK(ad.lookup() == table);
  CHECK_FALSE(ad.owns_lookup());
  CHECK_THROWS_AS(ad.save(fs::temp_directory_path() / "lasttok_never.ckpt", lm.config()), std::logic_error);
}

TEST_CASE("LM configs are validated") {
  auto c = small_lm();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(LMConfig::preset("L", 10), ConfigError);
  CHECK(LMConfig::preset("M", 10).model_dim == 128);
}
