#include "lasttok/eval/zeroshot.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "lasttok/compute/simd.hpp"

namespace lasttok::eval {

using compute::Tensor;

SequenceScorer lm_scorer(const tok::FrameTokenizer& tokenizer, const textlm::SpeechAdapters& adapters,
                         const textlm::CausalLM& lm) {
  return [&tokenizer, &adapters, &lm](const synth::Utterance& u) -> std::optional<double> {
    const auto tokens = tokenizer.tokenize(u.features);
    if (tokens.size() < 2) return std::nullopt;
    return textlm::sequence_logprob(tokens, adapters, lm).mean();
  };
}

SequenceScorer oracle_scorer(const synth::World& world) {
  return [&world](const synth::Utterance& u) -> std::optional<double> {
    if (u.words.empty()) return -1.0;
    if (u.words.size() == 1) return 0.0;
    return world.grammar.is_grammatical(u.words) ? 0.0 : -1.0;
  };
}

PairReport score_pairs(std::span<const synth::PairItem> pairs, const synth::EvalSuite& suite,
                       const SequenceScorer& scorer) {
  PairReport report;
  double correct = 0.0;
  for (const auto& p : pairs) {
    PairVerdict v;
    v.id = p.id;
    const auto good = scorer(suite.utterance(p.good));
    const auto bad = scorer(suite.utterance(p.bad));
    v.good_score = good.value_or(std::numeric_limits<double>::quiet_NaN());
    v.bad_score = bad.value_or(std::numeric_limits<double>::quiet_NaN());
    if (!good || !bad) {
      ++report.degenerate;
    } else if (*good > *bad) {
      v.chosen = 0;
      v.correct = 1.0;
    } else if (*bad > *good) {
      v.chosen = 1;
      v.correct = 0.0;
    }
    if (v.chosen == -1) ++report.ties;
    correct += v.correct;
    report.verdicts.push_back(std::move(v));
  }
  report.accuracy = pairs.empty() ? 0.0 : correct / static_cast<double>(pairs.size());
  return report;
}

Representation latent_representation(const tok::FrameTokenizer& tokenizer) {
  return [&tokenizer](const synth::Utterance& u) { return tokenizer.latents(u.features); };
}

Representation onehot_representation(const tok::FrameTokenizer& tokenizer) {
  return [&tokenizer](const synth::Utterance& u) {
    const auto z = tokenizer.frame_tokens(u.features);
    Tensor out({z.size(), tokenizer.vocab_size()});
    for (std::size_t t = 0; t < z.size(); ++t) out.at(t, static_cast<std::size_t>(z[t])) = 1.0;
    return out;
  };
}

double cosine_distance(const double* a, const double* b, std::size_t n) {
  const double na = simd::dot(a, a, n), nb = simd::dot(b, b, n);
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - simd::dot(a, b, n) / std::sqrt(na * nb);
}

double dtw_distance(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = b.rows();
  if (n == 0 || m == 0) throw std::invalid_argument("dtw: empty sequence");
  if (a.cols() != b.cols()) throw compute::ShapeError("dtw: dimension mismatch");
  // Cost and path length of the cheapest path into each cell; ties prefer
  // the shorter path.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost((n + 1) * (m + 1), inf);
  std::vector<std::size_t> len((n + 1) * (m + 1), 0);
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  cost[at(0, 0)] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double d = cosine_distance(a.row(i - 1), b.row(j - 1), a.cols());
      std::size_t best = at(i - 1, j - 1);
      for (std::size_t cand : {at(i - 1, j), at(i, j - 1)}) {
        if (cost[cand] < cost[best] || (cost[cand] == cost[best] && len[cand] < len[best])) best = cand;
      }
      cost[at(i, j)] = cost[best] + d;
      len[at(i, j)] = len[best] + 1;
    }
  }
  return cost[at(n, m)] / static_cast<double>(len[at(n, m)]);
}

AbxReport abx_error(std::span<const synth::AbxTriple> triples, const synth::EvalSuite& suite,
                    const Representation& representation) {
  AbxReport report;
  double err[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (const auto& t : triples) {
    const Tensor a = representation(suite.utterance(t.a));
    const Tensor b = representation(suite.utterance(t.b));
    const Tensor x = representation(suite.utterance(t.x));
    const double da = dtw_distance(x, a), db = dtw_distance(x, b);
    AbxVerdict v;
    v.id = t.id;
    v.within = t.within;
    v.d_correct = t.correct == 0 ? da : db;
    v.d_wrong = t.correct == 0 ? db : da;
    v.error = v.d_wrong < v.d_correct ? 1.0 : (v.d_wrong == v.d_correct ? 0.5 : 0.0);
    err[t.within ? 0 : 1] += v.error;
    ++count[t.within ? 0 : 1];
    report.verdicts.push_back(std::move(v));
  }
  report.within = count[0] ? err[0] / static_cast<double>(count[0]) : 0.0;
  report.across = count[1] ? err[1] / static_cast<double>(count[1]) : 0.0;
  return report;
}

PurityReport unit_purity(const std::vector<std::vector<int>>& tokens, const std::vector<std::vector<int>>& labels,
                         std::size_t units, std::size_t phonemes, std::span<const int> families) {
  if (tokens.size() != labels.size()) throw std::invalid_argument("unit_purity: utterance count mismatch");
  std::vector<std::size_t> hist(units * phonemes, 0);
  PurityReport r;
  r.frames.assign(units, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].size() != labels[i].size()) {
      throw std::invalid_argument("unit_purity: utterance " + std::to_string(i) + " has " +
                                  std::to_string(tokens[i].size()) + " tokens for " +
                                  std::to_string(labels[i].size()) + " labelled frames");
    }
    for (std::size_t t = 0; t < tokens[i].size(); ++t) {
      const auto z = static_cast<std::size_t>(tokens[i][t]);
      const auto p = static_cast<std::size_t>(labels[i][t]);
      if (z >= units || p >= phonemes) throw std::out_of_range("unit_purity: unit or phoneme out of range");
      ++hist[z * phonemes + p];
      ++r.frames[z];
    }
  }
  r.majority.assign(units, -1);
  r.purity.assign(units, 0.0);
  r.family.assign(units, -1);
  std::size_t majority_frames = 0;
  for (std::size_t z = 0; z < units; ++z) {
    r.total_frames += r.frames[z];
    if (r.frames[z] == 0) continue;
    std::size_t best = 0;
    for (std::size_t p = 1; p < phonemes; ++p) {
      if (hist[z * phonemes + p] > hist[z * phonemes + best]) best = p;
    }
    r.majority[z] = static_cast<int>(best);
    r.purity[z] = static_cast<double>(hist[z * phonemes + best]) / static_cast<double>(r.frames[z]);
    if (best < families.size()) r.family[z] = families[best];
    majority_frames += hist[z * phonemes + best];
  }
  r.global = r.total_frames ? static_cast<double>(majority_frames) / static_cast<double>(r.total_frames) : 0.0;
  return r;
}

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PerReport per_proxy(const std::vector<int>& majority, const std::vector<std::vector<int>>& tokens,
                    const std::vector<std::vector<int>>& reference) {
  if (tokens.size() != reference.size()) throw std::invalid_argument("per_proxy: utterance count mismatch");
  PerReport r;
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<int> decoded;
    for (int z : tokens[i]) {
      const int p = (z >= 0 && static_cast<std::size_t>(z) < majority.size()) ? majority[z] : -1;
      if (p < 0) {
        ++r.unseen;
        continue;
      }
      if (decoded.empty() || decoded.back() != p) decoded.push_back(p);
    }
    if (reference[i].empty()) throw std::invalid_argument("per_proxy: empty reference");
    // Frame tokens cannot mark a boundary between two equal phonemes, so the
    // reference is collapsed the same way.
    const auto ref = tok::dedup(reference[i]);
    total += static_cast<double>(levenshtein(decoded, ref)) / static_cast<double>(ref.size());
    ++r.utterances;
  }
  r.per = r.utterances ? total / static_cast<double>(r.utterances) : 0.0;
  return r;
}

CodebookStats codebook_stats(const std::vector<std::vector<int>>& tokens, std::size_t units) {
  std::vector<std::size_t> hist(units, 0);
  std::size_t total = 0, runs = 0;
  for (const auto& seq : tokens) {
    for (std::size_t t = 0; t < seq.size(); ++t) {
      ++hist.at(static_cast<std::size_t>(seq[t]));
      if (t == 0 || seq[t] != seq[t - 1]) ++runs;
    }
    total += seq.size();
  }
  CodebookStats s;
  for (auto c : hist) {
    if (c == 0) {
      ++s.dead;
      continue;
    }
    const double p = static_cast<double>(c) / static_cast<double>(total);
    s.entropy -= p * std::log(p);
  }
  s.perplexity = total ? std::exp(s.entropy) : 0.0;
  s.mean_run_length = runs ? static_cast<double>(total) / static_cast<double>(runs) : 0.0;
  return s;
}

nlohmann::json to_json(const PairReport& r) {
  return {{"accuracy", r.accuracy}, {"pairs", r.verdicts.size()}, {"ties", r.ties}, {"degenerate", r.degenerate}};
}

nlohmann::json to_json(const AbxReport& r) {
  return {{"within", r.within}, {"across", r.across}, {"triples", r.verdicts.size()}};
}

nlohmann::json to_json(const PurityReport& r) {
  return {{"global", r.global}, {"total_frames", r.total_frames}, {"majority", r.majority},
          {"purity", r.purity}, {"frames", r.frames},             {"family", r.family}};
}

nlohmann::json to_json(const PerReport& r) {
  return {{"per", r.per}, {"utterances", r.utterances}, {"unseen", r.unseen}};
}

nlohmann::json to_json(const CodebookStats& r) {
  return {{"entropy", r.entropy}, {"perplexity", r.perplexity}, {"dead", r.dead}, {"mean_run_length", r.mean_run_length}};
}

void write_pair_csv(const std::filesystem::path& path, const PairReport& r) {
  std::ofstream out(path, std::ios::trunc);
  out << "id,good_score,bad_score,chosen,correct\n";
  char buf[64];
  for (const auto& v : r.verdicts) {
    out << v.id << ',';
    if (std::isfinite(v.good_score)) {
      std::snprintf(buf, sizeof buf, "%.17g", v.good_score);
      out << buf;
    }
    out << ',';
    if (std::isfinite(v.bad_score)) {
      std::snprintf(buf, sizeof buf, "%.17g", v.bad_score);
      out << buf;
    }
    out << ',' << v.chosen << ',' << v.correct << '\n';
  }
}

void write_abx_csv(const std::filesystem::path& path, const AbxReport& r) {
  std::ofstream out(path, std::ios::trunc);
  out << "id,within,d_correct,d_wrong,error\n";
  char buf[96];
  for (const auto& v : r.verdicts) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%g", v.within ? 1 : 0, v.d_correct, v.d_wrong, v.error);
    out << v.id << ',' << buf << '\n';
  }
}

}  // namespace lasttok::eval
