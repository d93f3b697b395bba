#include "lasttok/synth/suites.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "lasttok/compute/rng.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::synth {

namespace {

std::string item_id(const char* kind, std::size_t i, const char* role) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s-%06zu%s%s", kind, i, role[0] ? "-" : "", role);
  return buf;
}

}  // namespace

const Utterance& EvalSuite::utterance(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw MissingArtifact("suite: utterance '" + id + "' not found");
  return utterances[it->second];
}

void EvalSuite::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < utterances.size(); ++i) index_[utterances[i].id] = i;
}

std::vector<int> make_pseudoword(const World& world, const std::vector<int>& word, Rng& rng) {
  const int P = static_cast<int>(world.inventory.size());
  std::vector<std::pair<std::size_t, int>> options;
  for (std::size_t pos = 0; pos < word.size(); ++pos) {
    for (int p = 0; p < P; ++p) {
      if (p == word[pos]) continue;
      if (pos > 0 && p == word[pos - 1]) continue;
      if (pos + 1 < word.size() && p == word[pos + 1]) continue;
      auto cand = word;
      cand[pos] = p;
      if (!world.lexicon.contains(cand)) options.emplace_back(pos, p);
    }
  }
  if (options.empty()) return {};
  const auto [pos, p] = options[rng.index(options.size())];
  auto out = word;
  out[pos] = p;
  return out;
}

EvalSuite make_suites(const World& world, const SuiteConfig& config) {
  if (config.swuggy == 0 || config.sblimp == 0 || config.abx == 0) {
    throw ConfigError("make_suites: every suite count must be >= 1");
  }
  Rng rng(config.seed);
  EvalSuite suite;
  const auto& speakers = world.speakers;

  for (std::size_t i = 0; i < config.swuggy; ++i) {
    std::vector<int> pseudo;
    std::size_t word = 0;
    for (int attempt = 0; attempt < 100 && pseudo.empty(); ++attempt) {
      word = rng.index(world.lexicon.size());
      pseudo = make_pseudoword(world, world.lexicon.words[word], rng);
    }
    if (pseudo.empty()) throw ConfigError("make_suites: lexicon too small to form pseudowords");
    const auto& spk = speakers[rng.index(speakers.size())];
    PairItem item{item_id("swuggy", i, ""), item_id("swuggy", i, "real"), item_id("swuggy", i, "pseudo")};
    suite.utterances.push_back(synthesize(world, {static_cast<int>(word)}, spk, rng.next_u64(), item.good));
    suite.utterances.push_back(synthesize_phonemes(world.inventory, pseudo, spk, rng.next_u64(), item.bad));
    suite.swuggy.push_back(std::move(item));
  }

  for (std::size_t i = 0; i < config.sblimp; ++i) {
    std::vector<int> good, bad;
    for (int attempt = 0; attempt < 100 && bad.empty(); ++attempt) {
      good = world.grammar.sample(rng);
      if (auto c = world.grammar.corrupt(good, rng)) bad = *c;
    }
    if (bad.empty()) throw ConfigError("make_suites: grammar admits no ungrammatical permutations");
    const auto& spk = speakers[rng.index(speakers.size())];
    PairItem item{item_id("sblimp", i, ""), item_id("sblimp", i, "good"), item_id("sblimp", i, "bad")};
    suite.utterances.push_back(synthesize(world, good, spk, rng.next_u64(), item.good));
    suite.utterances.push_back(synthesize(world, bad, spk, rng.next_u64(), item.bad));
    suite.sblimp.push_back(std::move(item));
  }

  const int P = static_cast<int>(world.inventory.size());
  if (P < 3) throw ConfigError("make_suites: ABX contexts need at least 3 phonemes");
  if (speakers.size() < 2) throw ConfigError("make_suites: across-speaker ABX needs at least 2 speakers");
  for (std::size_t i = 0; i < config.abx; ++i) {
    const bool within = (i % 2 == 0);
    int left = 0, right = 0, ca = 0, cb = 0;
    do {
      left = rng.integer(0, P - 1);
      right = rng.integer(0, P - 1);
      ca = rng.integer(0, P - 1);
      cb = rng.integer(0, P - 1);
    } while (ca == cb || left == ca || left == cb || right == ca || right == cb);
    const int correct = static_cast<int>(rng.index(2));
    const std::size_t s1 = rng.index(speakers.size());
    std::size_t s2 = s1;
    if (!within) {
      s2 = rng.index(speakers.size() - 1);
      if (s2 >= s1) ++s2;
    }
    AbxTriple t{item_id("abx", i, ""), item_id("abx", i, "a"), item_id("abx", i, "b"), item_id("abx", i, "x"),
                correct, within};
    suite.utterances.push_back(synthesize_phonemes(world.inventory, {left, ca, right}, speakers[s1], rng.next_u64(), t.a));
    suite.utterances.push_back(synthesize_phonemes(world.inventory, {left, cb, right}, speakers[s1], rng.next_u64(), t.b));
    suite.utterances.push_back(synthesize_phonemes(world.inventory, {left, correct == 0 ? ca : cb, right},
                                                   speakers[s2], rng.next_u64(), t.x));
    suite.abx.push_back(std::move(t));
  }
  suite.reindex();
  return suite;
}

void write_suites(const EvalSuite& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  auto pairs = [](const std::vector<PairItem>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({{"id", p.id}, {"good", p.good}, {"bad", p.bad}});
    return a;
  };
  j["swuggy"] = pairs(suite.swuggy);
  j["sblimp"] = pairs(suite.sblimp);
  j["abx"] = nlohmann::json::array();
  for (const auto& t : suite.abx) {
    j["abx"].push_back(
        {{"id", t.id}, {"a", t.a}, {"b", t.b}, {"x", t.x}, {"correct", t.correct}, {"within", t.within}});
  }
  std::ofstream out(dir / "suites.json", std::ios::trunc);
  out << j.dump(1) << '\n';
  write_corpus(suite.utterances, dir / "utterances");
}

EvalSuite read_suites(const std::filesystem::path& dir) {
  const auto path = dir / "suites.json";
  std::ifstream in(path);
  if (!in) throw MissingArtifact("read_suites: missing " + path.string());
  EvalSuite suite;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const char* key : {"swuggy", "sblimp"}) {
      auto& dst = std::string(key) == "swuggy" ? suite.swuggy : suite.sblimp;
      for (const auto& p : j.at(key)) {
        dst.push_back({p.at("id").get<std::string>(), p.at("good").get<std::string>(), p.at("bad").get<std::string>()});
      }
    }
    for (const auto& t : j.at("abx")) {
      suite.abx.push_back({t.at("id").get<std::string>(), t.at("a").get<std::string>(), t.at("b").get<std::string>(),
                           t.at("x").get<std::string>(), t.at("correct").get<int>(), t.at("within").get<bool>()});
    }
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("read_suites: ") + e.what(), e.byte);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("read_suites: ") + e.what(), 0);
  }
  suite.utterances = read_corpus(dir / "utterances");
  suite.reindex();
  return suite;
}

}  // namespace lasttok::synth
