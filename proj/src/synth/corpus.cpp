#include "lasttok/synth/corpus.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lasttok/compute/rng.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::synth {

using compute::Tensor;

std::vector<int> Utterance::phonemes() const {
  std::vector<int> out;
  out.reserve(alignment.size());
  for (const auto& s : alignment) out.push_back(s.phoneme);
  return out;
}

std::vector<int> Utterance::frame_labels() const {
  std::vector<int> out(frames(), -1);
  for (const auto& s : alignment) {
    for (int t = s.start; t < s.end; ++t) out[static_cast<std::size_t>(t)] = s.phoneme;
  }
  return out;
}

Utterance synthesize_phonemes(const PhonemeInventory& inventory, const std::vector<int>& phonemes,
                              const SpeakerProfile& speaker, std::uint64_t seed, std::string id) {
  if (phonemes.empty()) throw std::invalid_argument("synthesize: empty phoneme sequence for '" + id + "'");
  const std::size_t d = inventory.dim();
  Rng rng(seed);
  Utterance u;
  u.id = std::move(id);
  u.speaker = speaker.id;
  int t = 0;
  for (int p : phonemes) {
    if (p < 0 || static_cast<std::size_t>(p) >= inventory.size()) {
      throw std::out_of_range("synthesize: phoneme " + std::to_string(p) + " not in inventory");
    }
    const int dur = rng.integer(inventory.dur_min, inventory.dur_max);
    u.alignment.push_back({p, t, t + dur});
    t += dur;
  }
  u.features = Tensor({static_cast<std::size_t>(t), d});
  for (const auto& seg : u.alignment) {
    const auto mean = speaker.apply(inventory.prototypes.row(static_cast<std::size_t>(seg.phoneme)));
    for (int f = seg.start; f < seg.end; ++f) {
      double* row = u.features.row(static_cast<std::size_t>(f));
      for (std::size_t k = 0; k < d; ++k) {
        const double v = mean[k] + (inventory.sigma > 0.0 ? inventory.sigma * rng.normal() : 0.0);
        row[k] = static_cast<double>(static_cast<float>(v));
      }
    }
  }
  return u;
}

Utterance synthesize(const World& world, const std::vector<int>& words, const SpeakerProfile& speaker,
                     std::uint64_t seed, std::string id) {
  if (words.empty()) throw std::invalid_argument("synthesize: empty word sequence for '" + id + "'");
  std::vector<int> phonemes;
  for (int w : words) {
    if (w < 0 || static_cast<std::size_t>(w) >= world.lexicon.size()) {
      throw std::out_of_range("synthesize: word " + std::to_string(w) + " not in lexicon");
    }
    const auto& ph = world.lexicon.words[static_cast<std::size_t>(w)];
    phonemes.insert(phonemes.end(), ph.begin(), ph.end());
  }
  Utterance u = synthesize_phonemes(world.inventory, phonemes, speaker, seed, std::move(id));
  u.words = words;
  return u;
}

std::vector<Utterance> generate_corpus(const World& world, std::size_t count, std::uint64_t seed,
                                       const std::string& id_prefix) {
  Rng rng(seed);
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto sentence = world.grammar.sample(rng);
    const auto& speaker = world.speakers[rng.index(world.speakers.size())];
    char id[64];
    std::snprintf(id, sizeof id, "%s-%06zu", id_prefix.c_str(), i);
    out.push_back(synthesize(world, sentence, speaker, rng.next_u64(), id));
  }
  return out;
}

void write_corpus(const std::vector<Utterance>& utterances, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  std::ofstream shard(dir / "features.bin", std::ios::binary | std::ios::trunc);
  if (!manifest || !shard) throw std::runtime_error("write_corpus: cannot write into " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& u : utterances) {
    nlohmann::json align = nlohmann::json::array();
    for (const auto& s : u.alignment) align.push_back({s.phoneme, s.start, s.end});
    const nlohmann::json rec = {{"id", u.id},
                                {"speaker", u.speaker},
                                {"words", u.words},
                                {"alignment", align},
                                {"offset", offset},
                                {"shape", u.features.shape()}};
    manifest << rec.dump() << '\n';
    std::vector<float> f(u.features.data().begin(), u.features.data().end());
    shard.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    offset += f.size() * sizeof(float);
  }
  if (!manifest || !shard) throw std::runtime_error("write_corpus: write failed in " + dir.string());
}

std::vector<Utterance> read_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.jsonl";
  const auto shard_path = dir / "features.bin";
  std::ifstream manifest(manifest_path, std::ios::binary);
  std::ifstream shard_in(shard_path, std::ios::binary);
  if (!manifest) throw MissingArtifact("read_corpus: missing " + manifest_path.string());
  if (!shard_in) throw MissingArtifact("read_corpus: missing " + shard_path.string());
  const std::string shard((std::istreambuf_iterator<char>(shard_in)), std::istreambuf_iterator<char>());
  const std::string text((std::istreambuf_iterator<char>(manifest)), std::istreambuf_iterator<char>());

  std::vector<Utterance> out;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) {
      throw ParseError("read_corpus: manifest record not newline-terminated (truncated file?)", line_start);
    }
    const std::string_view line(text.data() + line_start, line_end - line_start);
    if (!line.empty()) {
      Utterance u;
      std::size_t offset = 0;
      compute::Shape shape;
      try {
        const auto rec = nlohmann::json::parse(line);
        u.id = rec.at("id").get<std::string>();
        u.speaker = rec.at("speaker").get<int>();
        u.words = rec.at("words").get<std::vector<int>>();
        for (const auto& s : rec.at("alignment")) {
          u.alignment.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
        }
        offset = rec.at("offset").get<std::size_t>();
        shape = rec.at("shape").get<compute::Shape>();
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("read_corpus: malformed manifest record: ") + e.what(), line_start + e.byte - 1);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("read_corpus: invalid manifest record: ") + e.what(), line_start);
      }
      if (shape.size() != 2) throw ParseError("read_corpus: feature shape must be 2-D for '" + u.id + "'", line_start);
      const std::size_t count = compute::shape_numel(shape);
      if (offset + count * sizeof(float) > shard.size()) {
        throw ParseError("read_corpus: features of '" + u.id + "' run past end of features.bin", shard.size());
      }
      std::vector<float> f(count);
      std::memcpy(f.data(), shard.data() + offset, count * sizeof(float));
      u.features = Tensor(shape, std::vector<double>(f.begin(), f.end()));
      out.push_back(std::move(u));
    }
    line_start = line_end + 1;
  }
  return out;
}

}  // namespace lasttok::synth
