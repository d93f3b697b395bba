#include "lasttok/synth/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "lasttok/compute/simd.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::synth {

using compute::Tensor;

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<double> zipf_weights(std::size_t n) {
  std::vector<double> w(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 1.0 / static_cast<double>(i + 1);
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

std::size_t sample_weighted(const std::vector<double>& w, Rng& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

Tensor sample_prototypes(const WorldConfig& c, int families, std::vector<int>& family, Rng& rng) {
  const auto P = static_cast<std::size_t>(c.phonemes);
  const auto d = static_cast<std::size_t>(c.dim);
  Tensor centers({static_cast<std::size_t>(families), d});
  for (auto& v : centers.data()) v = rng.normal(0.0, c.family_spread);
  Tensor protos({P, d});
  family.assign(P, 0);
  for (std::size_t p = 0; p < P; ++p) {
    family[p] = static_cast<int>(p % static_cast<std::size_t>(families));
    for (std::size_t k = 0; k < d; ++k) {
      protos.at(p, k) = centers.at(static_cast<std::size_t>(family[p]), k) + rng.normal(0.0, c.phoneme_spread);
    }
  }
  return protos;
}

std::vector<std::vector<int>> make_words(const WorldConfig& c, Rng& rng) {
  const int P = c.phonemes;
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> words;
  std::vector<bool> covered(static_cast<std::size_t>(P), false);
  int uncovered = P;
  const int budget = c.words * 200;
  for (int attempt = 0; static_cast<int>(words.size()) < c.words; ++attempt) {
    if (attempt > budget) {
      throw ConfigError("build_world: cannot form " + std::to_string(c.words) + " distinct words over " +
                        std::to_string(P) + " phonemes");
    }
    const int len = rng.integer(c.word_len_min, c.word_len_max);
    std::vector<int> w;
    for (int i = 0; i < len; ++i) {
      const int prev = w.empty() ? -1 : w.back();
      std::vector<int> pool;
      if (uncovered > 0) {
        for (int p = 0; p < P; ++p) {
          if (!covered[static_cast<std::size_t>(p)] && p != prev) pool.push_back(p);
        }
      }
      if (pool.empty()) {
        for (int p = 0; p < P; ++p) {
          if (p != prev) pool.push_back(p);
        }
      }
      w.push_back(pool[rng.index(pool.size())]);
    }
    if (!seen.insert(w).second) continue;
    for (int p : w) {
      if (!covered[static_cast<std::size_t>(p)]) {
        covered[static_cast<std::size_t>(p)] = true;
        --uncovered;
      }
    }
    words.push_back(std::move(w));
  }
  if (uncovered > 0) {
    throw ConfigError("build_world: " + std::to_string(c.words) + " words cannot cover all " + std::to_string(P) +
                      " phonemes");
  }
  return words;
}

ToyGrammar make_grammar(int W, Rng& rng) {
  std::vector<int> word_class(static_cast<std::size_t>(W));
  std::vector<std::vector<int>> patterns;
  std::vector<double> pattern_weight;
  if (W < 12) {
    // Minimal grammar: nouns and verbs only.
    for (int w = 0; w < W; ++w) word_class[static_cast<std::size_t>(w)] = (w % 2 == 0) ? kNoun : kVerb;
    patterns = {{kNoun, kVerb}, {kNoun, kVerb, kNoun}};
    pattern_weight = {2.0, 1.0};
  } else {
    const double share[kNumClasses] = {0.05, 0.15, 0.35, 0.25, 0.08, 0.12};
    std::vector<int> counts(kNumClasses);
    int assigned = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      counts[static_cast<std::size_t>(c)] = std::max(1, static_cast<int>(std::floor(share[c] * W)));
      assigned += counts[static_cast<std::size_t>(c)];
    }
    counts[kNoun] += W - assigned;
    std::vector<int> ids(static_cast<std::size_t>(W));
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    std::size_t at = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k) word_class[static_cast<std::size_t>(ids[at++])] = c;
    }
    patterns = {{kDet, kNoun, kVerb},
                {kDet, kAdj, kNoun, kVerb},
                {kDet, kNoun, kVerb, kDet, kNoun},
                {kDet, kNoun, kVerb, kAdv},
                {kDet, kAdj, kNoun, kVerb, kPrep, kDet, kNoun},
                {kNoun, kVerb, kAdv}};
    pattern_weight = {3.0, 2.0, 2.0, 1.0, 1.0, 1.0};
  }
  std::vector<std::vector<double>> class_word_weight(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    std::size_t n = 0;
    for (int wc : word_class) n += (wc == c);
    class_word_weight[static_cast<std::size_t>(c)] = zipf_weights(n);
  }
  return ToyGrammar(std::move(word_class), std::move(patterns), std::move(pattern_weight),
                    std::move(class_word_weight));
}

SpeakerProfile make_speaker(int id, const WorldConfig& c, Rng& rng) {
  const auto d = static_cast<std::size_t>(c.dim);
  for (int attempt = 0; attempt < c.max_retries; ++attempt) {
    SpeakerProfile s;
    s.id = id;
    s.warp = Tensor({d, d});
    const double scale = c.speaker_warp / std::sqrt(static_cast<double>(d));
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t k = 0; k < d; ++k) s.warp.at(r, k) = (r == k ? 1.0 : 0.0) + scale * rng.normal();
    }
    s.offset.resize(d);
    for (auto& v : s.offset) v = rng.normal(0.0, c.speaker_shift);
    if (s.condition_number() <= 10.0) return s;
  }
  throw ConfigError("build_world: no speaker warp with condition number <= 10 after " +
                    std::to_string(c.max_retries) + " attempts");
}

}  // namespace

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = {{"seed", c.seed},
       {"phonemes", c.phonemes},
       {"words", c.words},
       {"dim", c.dim},
       {"speakers", c.speakers},
       {"families", c.families},
       {"dur_min", c.dur_min},
       {"dur_max", c.dur_max},
       {"word_len_min", c.word_len_min},
       {"word_len_max", c.word_len_max},
       {"noise_rel", c.noise_rel},
       {"noise_sigma", c.noise_sigma},
       {"family_spread", c.family_spread},
       {"phoneme_spread", c.phoneme_spread},
       {"speaker_warp", c.speaker_warp},
       {"speaker_shift", c.speaker_shift},
       {"max_retries", c.max_retries}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  static const std::set<std::string> known = {
      "seed",         "phonemes",     "words",         "dim",           "speakers",       "families",
      "dur_min",      "dur_max",      "word_len_min",  "word_len_max",  "noise_rel",      "noise_sigma",
      "family_spread", "phoneme_spread", "speaker_warp", "speaker_shift", "max_retries"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("world config: unknown field '" + key + "'");
  }
  read_opt(j, "seed", c.seed);
  read_opt(j, "phonemes", c.phonemes);
  read_opt(j, "words", c.words);
  read_opt(j, "dim", c.dim);
  read_opt(j, "speakers", c.speakers);
  read_opt(j, "families", c.families);
  read_opt(j, "dur_min", c.dur_min);
  read_opt(j, "dur_max", c.dur_max);
  read_opt(j, "word_len_min", c.word_len_min);
  read_opt(j, "word_len_max", c.word_len_max);
  read_opt(j, "noise_rel", c.noise_rel);
  read_opt(j, "noise_sigma", c.noise_sigma);
  read_opt(j, "family_spread", c.family_spread);
  read_opt(j, "phoneme_spread", c.phoneme_spread);
  read_opt(j, "speaker_warp", c.speaker_warp);
  read_opt(j, "speaker_shift", c.speaker_shift);
  read_opt(j, "max_retries", c.max_retries);
}

double PhonemeInventory::min_gap() const {
  double best = INFINITY;
  for (std::size_t a = 0; a < size(); ++a) {
    for (std::size_t b = a + 1; b < size(); ++b) {
      best = std::min(best, std::sqrt(simd::squared_distance(prototypes.row(a), prototypes.row(b), dim())));
    }
  }
  return best;
}

std::string_view class_name(int word_class) {
  static constexpr std::string_view names[] = {"DET", "ADJ", "NOUN", "VERB", "PREP", "ADV"};
  return word_class >= 0 && word_class < kNumClasses ? names[word_class] : "?";
}

int Lexicon::find(const std::vector<int>& phonemes) const {
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == phonemes) return static_cast<int>(i);
  }
  return -1;
}

ToyGrammar::ToyGrammar(std::vector<int> word_class, std::vector<std::vector<int>> patterns,
                       std::vector<double> pattern_weight, std::vector<std::vector<double>> class_word_weight)
    : word_class_(std::move(word_class)),
      patterns_(std::move(patterns)),
      pattern_weight_(std::move(pattern_weight)),
      class_words_(kNumClasses),
      class_word_weight_(std::move(class_word_weight)) {
  for (std::size_t w = 0; w < word_class_.size(); ++w) {
    class_words_[static_cast<std::size_t>(word_class_[w])].push_back(static_cast<int>(w));
  }
}

std::vector<int> ToyGrammar::sample(Rng& rng) const {
  const auto& pattern = patterns_[sample_weighted(pattern_weight_, rng)];
  std::vector<int> sentence;
  sentence.reserve(pattern.size());
  for (int c : pattern) {
    const auto& pool = class_words_[static_cast<std::size_t>(c)];
    sentence.push_back(pool[sample_weighted(class_word_weight_[static_cast<std::size_t>(c)], rng)]);
  }
  return sentence;
}

bool ToyGrammar::is_grammatical(const std::vector<int>& sentence) const {
  std::vector<int> classes;
  classes.reserve(sentence.size());
  for (int w : sentence) {
    if (w < 0 || static_cast<std::size_t>(w) >= word_class_.size()) return false;
    classes.push_back(word_class_[static_cast<std::size_t>(w)]);
  }
  return std::find(patterns_.begin(), patterns_.end(), classes) != patterns_.end();
}

std::optional<std::vector<int>> ToyGrammar::corrupt(const std::vector<int>& sentence, Rng& rng) const {
  std::vector<int> out = sentence;
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
    if (!is_grammatical(out)) return out;
  }
  return std::nullopt;
}

std::vector<double> ToyGrammar::unigram() const {
  std::vector<double> u(word_class_.size(), 0.0);
  const double wsum = std::accumulate(pattern_weight_.begin(), pattern_weight_.end(), 0.0);
  for (std::size_t p = 0; p < patterns_.size(); ++p) {
    for (int c : patterns_[p]) {
      const auto& pool = class_words_[static_cast<std::size_t>(c)];
      const auto& w = class_word_weight_[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < pool.size(); ++i) {
        u[static_cast<std::size_t>(pool[i])] += pattern_weight_[p] / wsum * w[i];
      }
    }
  }
  const double total = std::accumulate(u.begin(), u.end(), 0.0);
  for (auto& v : u) v /= total;
  return u;
}

SpeakerProfile SpeakerProfile::identity(int id, std::size_t dim) {
  SpeakerProfile s;
  s.id = id;
  s.warp = Tensor({dim, dim});
  for (std::size_t i = 0; i < dim; ++i) s.warp.at(i, i) = 1.0;
  s.offset.assign(dim, 0.0);
  return s;
}

std::vector<double> SpeakerProfile::apply(const double* x) const {
  const std::size_t d = offset.size();
  std::vector<double> y(offset);
  for (std::size_t r = 0; r < d; ++r) y[r] += simd::dot(warp.row(r), x, d);
  return y;
}

double SpeakerProfile::condition_number() const {
  const auto d = static_cast<Eigen::Index>(offset.size());
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = warp.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) <= 0.0) return INFINITY;
  return s(0) / s(s.size() - 1);
}

World build_world(const WorldConfig& config) {
  if (config.phonemes < 2) throw ConfigError("build_world: phonemes must be >= 2");
  if (config.words < 2) throw ConfigError("build_world: words must be >= 2");
  if (config.dim < 2) throw ConfigError("build_world: dim must be >= 2");
  if (config.speakers < 1) throw ConfigError("build_world: speakers must be >= 1");
  if (config.dur_min < 1 || config.dur_max < config.dur_min) throw ConfigError("build_world: need 1 <= dur_min <= dur_max");
  if (config.word_len_min < 2 || config.word_len_max < config.word_len_min) {
    throw ConfigError("build_world: need 2 <= word_len_min <= word_len_max");
  }
  if (config.noise_sigma <= 0.0 && (config.noise_rel < 0.0 || 4.0 * config.noise_rel >= 1.0)) {
    throw ConfigError("build_world: noise_rel must be in [0, 0.25) for prototype gaps to exceed 4 sigma");
  }

  Rng rng(config.seed);
  World world;
  world.config = config;
  auto& inv = world.inventory;
  inv.families = config.families > 0 ? config.families : std::max(1, config.phonemes / 5);
  inv.dur_min = config.dur_min;
  inv.dur_max = config.dur_max;

  bool separable = false;
  for (int attempt = 0; attempt < config.max_retries && !separable; ++attempt) {
    inv.prototypes = sample_prototypes(config, inv.families, inv.family, rng);
    const double gap = inv.min_gap();
    inv.sigma = config.noise_sigma > 0.0 ? config.noise_sigma : config.noise_rel * gap;
    separable = gap > 0.0 && gap > 4.0 * inv.sigma;
  }
  if (!separable) {
    throw ConfigError("build_world: prototype gaps do not exceed 4 sigma after " + std::to_string(config.max_retries) +
                      " attempts");
  }

  world.lexicon.words = make_words(config, rng);
  world.grammar = make_grammar(config.words, rng);
  world.lexicon.frequency = world.grammar.unigram();
  for (int s = 0; s < config.speakers; ++s) world.speakers.push_back(make_speaker(s, config, rng));
  return world;
}

nlohmann::json world_to_json(const World& world) {
  nlohmann::json j;
  j["config"] = world.config;
  const auto& inv = world.inventory;
  j["inventory"] = {{"prototypes", inv.prototypes.storage()},
                    {"shape", inv.prototypes.shape()},
                    {"family", inv.family},
                    {"families", inv.families},
                    {"dur_min", inv.dur_min},
                    {"dur_max", inv.dur_max},
                    {"sigma", inv.sigma}};
  j["lexicon"] = {{"words", world.lexicon.words}, {"frequency", world.lexicon.frequency}};
  const auto& g = world.grammar;
  j["grammar"] = {{"word_class", g.word_class()},
                  {"patterns", g.patterns()},
                  {"pattern_weight", g.pattern_weight()},
                  {"class_word_weight", g.class_word_weight()}};
  j["speakers"] = nlohmann::json::array();
  for (const auto& s : world.speakers) {
    j["speakers"].push_back({{"id", s.id}, {"warp", s.warp.storage()}, {"offset", s.offset}});
  }
  return j;
}

World world_from_json(const nlohmann::json& j) {
  try {
    World w;
    w.config = j.at("config").get<WorldConfig>();
    const auto& ij = j.at("inventory");
    w.inventory.prototypes = Tensor(ij.at("shape").get<compute::Shape>(), ij.at("prototypes").get<std::vector<double>>());
    w.inventory.family = ij.at("family").get<std::vector<int>>();
    w.inventory.families = ij.at("families").get<int>();
    w.inventory.dur_min = ij.at("dur_min").get<int>();
    w.inventory.dur_max = ij.at("dur_max").get<int>();
    w.inventory.sigma = ij.at("sigma").get<double>();
    w.lexicon.words = j.at("lexicon").at("words").get<std::vector<std::vector<int>>>();
    w.lexicon.frequency = j.at("lexicon").at("frequency").get<std::vector<double>>();
    const auto& gj = j.at("grammar");
    w.grammar = ToyGrammar(gj.at("word_class").get<std::vector<int>>(),
                           gj.at("patterns").get<std::vector<std::vector<int>>>(),
                           gj.at("pattern_weight").get<std::vector<double>>(),
                           gj.at("class_word_weight").get<std::vector<std::vector<double>>>());
    const auto d = w.inventory.dim();
    for (const auto& sj : j.at("speakers")) {
      SpeakerProfile s;
      s.id = sj.at("id").get<int>();
      s.warp = Tensor({d, d}, sj.at("warp").get<std::vector<double>>());
      s.offset = sj.at("offset").get<std::vector<double>>();
      w.speakers.push_back(std::move(s));
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world file: ") + e.what());
  }
}

}  // namespace lasttok::synth
