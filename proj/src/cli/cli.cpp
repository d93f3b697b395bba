#include "lasttok/cli/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include "lasttok/compute/checksum.hpp"
#include "lasttok/errors.hpp"
#include "lasttok/eval/zeroshot.hpp"
#include "lasttok/kmeans/kmeans.hpp"
#include "lasttok/report/report.hpp"
#include "lasttok/synth/dataset.hpp"
#include "lasttok/tok/last_model.hpp"
#include "lasttok/train/trainer.hpp"

#ifndef LASTTOK_BUILD_ID
#define LASTTOK_BUILD_ID "unknown"
#endif

namespace lasttok::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const RunManifest& m) {
  j = {{"command", m.command},       {"argv", m.argv},       {"config_hash", m.config_hash},
       {"seed", m.seed},             {"config", m.config},   {"artifacts", m.artifacts},
       {"results", m.results},       {"build_id", m.build_id}, {"wall_time_s", m.wall_time_s}};
}

void from_json(const json& j, RunManifest& m) {
  m.command = j.at("command").get<std::string>();
  m.argv = j.value("argv", std::vector<std::string>{});
  m.config_hash = j.value("config_hash", std::string());
  m.seed = j.value("seed", std::uint64_t{0});
  m.config = j.value("config", json::object());
  m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  m.results = j.value("results", json::object());
  m.build_id = j.value("build_id", std::string());
  m.wall_time_s = j.value("wall_time_s", 0.0);
}

std::string config_hash(const json& config) {
  compute::Fnv1a h;
  h.update(config.dump());
  return compute::hex64(h.digest());
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << json(manifest).dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

RunManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw MissingArtifact("missing " + (dir / "manifest.json").string());
  try {
    return json::parse(in).get<RunManifest>();
  } catch (const json::exception& e) {
    throw ConfigError("unreadable " + (dir / "manifest.json").string() + ": " + e.what());
  }
}

std::string build_id() { return LASTTOK_BUILD_ID; }

namespace {

using Clock = std::chrono::steady_clock;

/// Heldout sentences for the text-LM check, fixed across commands.
constexpr std::size_t kTextProbeSentences = 200;
constexpr std::uint64_t kTextProbeSeed = 99;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("invalid JSON in " + path.string() + ": " + e.what(), e.byte);
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::uint64_t file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("missing " + path.string());
  compute::Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.digest();
}

/// A directory holding `name`, or the file itself.
fs::path resolve_artifact(const fs::path& p, const std::string& name) {
  const fs::path file = fs::is_directory(p) ? p / name : p;
  if (!fs::exists(file)) throw MissingArtifact("missing " + file.string());
  return file;
}

std::string join_args(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) s += (s.empty() ? "" : " ") + a;
  return s;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Picks a warmup that fits under a shortened step budget.
void apply_steps(train::TrainConfig& config, std::optional<std::size_t> steps) {
  if (!steps) return;
  config.max_steps = *steps;
  if (config.warmup_steps >= config.max_steps) config.warmup_steps = config.max_steps / 10;
}

std::function<void(const train::MetricsRow&)> progress_printer(const std::string& label, std::size_t every) {
  if (every == 0) return {};
  return [label, every](const train::MetricsRow& r) {
    if (r.step % every != 0) return;
    std::fprintf(stderr, "%s step %zu loss %.4f lm %.4f recon %.4f ppl %.1f lr %.2e\n", label.c_str(), r.step,
                 r.loss, r.lm_loss, r.recon_loss, r.codebook_perplexity, r.lr);
  };
}

json final_metrics(const std::vector<train::MetricsRow>& log) {
  if (log.empty()) return json::object();
  const auto& r = log.back();
  return {{"step", r.step},           {"loss", r.loss},
          {"lm_loss", r.lm_loss},         {"recon_loss", r.recon_loss},
          {"codebook_loss", r.codebook_loss}, {"commit_loss", r.commit_loss},
          {"codebook_perplexity", r.codebook_perplexity}};
}

struct Common {
  std::vector<std::string> argv;
  Clock::time_point start = Clock::now();

  RunManifest manifest(const std::string& command, const json& config, std::uint64_t seed) const {
    RunManifest m;
    m.command = command;
    m.argv = argv;
    m.config = config;
    m.config_hash = config_hash(config);
    m.seed = seed;
    m.build_id = build_id();
    return m;
  }
  void finish(RunManifest& m, const fs::path& dir) const {
    m.wall_time_s = seconds_since(start);
    write_manifest(dir, m);
  }
};

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
};

void gen_data(const GenDataArgs& a, const Common& common) {
  const json raw = read_json_file(a.config);
  synth::DataConfig config;
  try {
    config = raw.get<synth::DataConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
  const auto data = synth::generate_dataset(config);
  write_dataset(data, a.out);
  auto m = common.manifest("gen-data", json(config), config.world.seed);
  m.artifacts = {{"data", "data.json"},         {"world", "world.json"}, {"train", "train"},
                 {"heldout", "heldout"},         {"suites", "suites"}};
  m.results = {{"train_utterances", data.train.size()},
               {"heldout_utterances", data.heldout.size()},
               {"train_shard_checksum", compute::hex64(file_checksum(fs::path(a.out) / "train" / "features.bin"))},
               {"heldout_shard_checksum",
                compute::hex64(file_checksum(fs::path(a.out) / "heldout" / "features.bin"))}};
  common.finish(m, a.out);
  std::cout << "wrote " << data.train.size() << " training and " << data.heldout.size() << " held-out utterances to "
            << a.out << "\n";
}

// pretrain-lm ---------------------------------------------------------------

struct PretrainLmArgs {
  std::string data;
  std::string out;
  std::string preset = "S";
  std::string config;
  std::optional<std::size_t> steps;
  std::uint64_t seed = 1;
};

void pretrain_lm(const PretrainLmArgs& a, const Common& common) {
  const auto world = synth::read_world(a.data);
  auto tc = train::text_lm_defaults();
  if (!a.config.empty()) {
    json patch = read_json_file(a.config);
    json merged = tc;
    merged.update(patch);
    tc = merged.get<train::TrainConfig>();
  }
  apply_steps(tc, a.steps);
  tc.seed = a.seed;
  tc.validate();
  const auto lmc = textlm::LMConfig::preset(a.preset, world.lexicon.words.size() + 2);
  textlm::CausalLM lm(lmc, a.seed);
  const auto log = train::pretrain_text_lm(lm, world, tc);
  lm.freeze();
  fs::create_directories(a.out);
  lm.save(fs::path(a.out) / "lm.ckpt");
  train::write_metrics(fs::path(a.out) / "metrics.csv", log);
  const auto probe = train::heldout_sentences(world, kTextProbeSentences, kTextProbeSeed);
  json config = {{"data", fs::absolute(a.data).string()}, {"preset", a.preset}, {"lm", lmc}, {"train", tc}};
  auto m = common.manifest("pretrain-lm", config, a.seed);
  m.artifacts = {{"lm", "lm.ckpt"}, {"metrics", "metrics.csv"}};
  m.results = final_metrics(log);
  m.results["heldout_text_loss"] = lm.text_loss(probe);
  m.results["lm_checksum"] = compute::hex64(lm.checksum());
  common.finish(m, a.out);
  std::cout << "text LM held-out loss " << m.results["heldout_text_loss"].get<double>() << "\n";
}

// train-tokenizer -----------------------------------------------------------

struct TrainTokenizerArgs {
  std::string data;
  std::string lm;
  std::string out;
  std::string mode = "pretrain";
  std::string model;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> k;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  bool resume = false;
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 100;
};

struct ModelConfig {
  tok::TokenizerConfig tokenizer;
  textlm::AdapterConfig adapters;
  train::TrainConfig train;
  tok::LossWeights weights;
};

ModelConfig read_model_config(const std::string& path) {
  ModelConfig c;
  if (path.empty()) return c;
  const json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError("model config: expected an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "tokenizer") {
        json merged = c.tokenizer;
        merged.update(value);
        c.tokenizer = merged.get<tok::TokenizerConfig>();
      } else if (key == "adapters") {
        json merged = c.adapters;
        merged.update(value);
        c.adapters = merged.get<textlm::AdapterConfig>();
      } else if (key == "train") {
        c.train = value.get<train::TrainConfig>();
      } else if (key == "weights") {
        json merged = c.weights;
        merged.update(value);
        c.weights = merged.get<tok::LossWeights>();
      } else {
        throw ConfigError("model config: unknown section '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

void train_tokenizer(const TrainTokenizerArgs& a, const Common& common) {
  ModelConfig mc = read_model_config(a.model);
  mc.train.mode = textlm::parse_mode(a.mode);
  mc.train.seed = a.seed;
  apply_steps(mc.train, a.steps);
  if (a.checkpoint_every) mc.train.checkpoint_every = a.checkpoint_every;
  if (a.k) mc.tokenizer.codebook_size = *a.k;
  if (a.lambda) mc.weights.recon = *a.lambda;
  mc.adapters.codebook_size = mc.tokenizer.codebook_size;
  mc.train.validate();

  const fs::path out = a.out;
  const fs::path lm_path = resolve_artifact(a.lm, "lm.ckpt");
  const auto world = synth::read_world(a.data);
  const auto corpus = synth::read_corpus(fs::path(a.data) / "train");
  auto lm = textlm::CausalLM::load(lm_path);
  const auto probe = train::heldout_sentences(world, kTextProbeSentences, kTextProbeSeed);
  const std::uint64_t lm_checksum_before = lm.checksum();
  const double text_loss_before = lm.text_loss(probe);

  mc.adapters.code_dim = lm.config().model_dim;
  tok::LastModel model(mc.tokenizer, mc.adapters, lm.config(), a.seed);
  const bool resuming = a.resume && fs::exists(out / "checkpoint.ckpt");
  if (!resuming) train::init_codebook_kmeans(model, corpus, mc.train.codebook_init_frames, a.seed);

  fs::create_directories(out);
  train::Trainer trainer(model, lm, corpus, mc.train, mc.weights);
  if (resuming) {
    trainer.resume(out / "checkpoint.ckpt");
    std::cerr << "resumed at step " << trainer.current_step() << "\n";
  }
  trainer.progress = progress_printer("train-tokenizer", a.log_every);
  trainer.run(mc.train.max_steps, out);

  model.save(out / "tokenizer.ckpt");
  lm.save(out / "lm.ckpt");
  json config = {{"data", fs::absolute(a.data).string()},
                 {"lm", fs::absolute(lm_path).string()},
                 {"kind", "last"},
                 {"tokenizer", mc.tokenizer},
                 {"adapters", mc.adapters},
                 {"train", mc.train},
                 {"weights", mc.weights},
                 {"lm_config", lm.config()}};
  auto m = common.manifest("train-tokenizer", config, a.seed);
  m.artifacts = {{"tokenizer", "tokenizer.ckpt"},
                 {"lm", "lm.ckpt"},
                 {"metrics", "metrics.csv"},
                 {"checkpoint", "checkpoint.ckpt"}};
  m.results = final_metrics(trainer.log());
  m.results["trainer_config_hash"] = trainer.config_hash();
  m.results["lm_checksum_before"] = compute::hex64(lm_checksum_before);
  m.results["lm_checksum_after"] = compute::hex64(lm.checksum());
  m.results["heldout_text_loss_before"] = text_loss_before;
  m.results["heldout_text_loss_after"] = lm.text_loss(probe);
  common.finish(m, out);
  std::cout << "trained " << trainer.current_step() << " steps; LM checksum "
            << (lm.checksum() == lm_checksum_before ? "unchanged" : "changed") << "\n";
}

// train-kmeans --------------------------------------------------------------

struct TrainKmeansArgs {
  std::string data;
  std::string lm;
  std::string out;
  std::size_t k = 64;
  std::size_t frames = 10000;
  std::string model;
  std::optional<std::size_t> steps;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
};

void train_kmeans(const TrainKmeansArgs& a, const Common& common) {
  ModelConfig mc = read_model_config(a.model);
  mc.train.mode = textlm::LMMode::pretrain;
  mc.train.seed = a.seed;
  apply_steps(mc.train, a.steps);
  mc.adapters.codebook_size = a.k;
  mc.train.validate();

  const fs::path out = a.out;
  const fs::path lm_path = resolve_artifact(a.lm, "lm.ckpt");
  const auto corpus = synth::read_corpus(fs::path(a.data) / "train");
  auto lm = textlm::CausalLM::load(lm_path);
  // Same adapter width as a LAST run against this LM.
  mc.adapters.code_dim = lm.config().model_dim;

  kmeans::FitOptions fo;
  fo.k = a.k;
  fo.seed = a.seed;
  const auto km = kmeans::fit(kmeans::sample_frames(corpus, a.frames, a.seed), fo);
  fs::create_directories(out);
  km.save(out / "kmeans.ckpt");

  textlm::SpeechAdapters adapters(mc.adapters, lm.config(), nullptr, a.seed);
  train::Trainer trainer(km, adapters, lm, corpus, mc.train);
  trainer.progress = progress_printer("train-kmeans", a.log_every);
  trainer.run(mc.train.max_steps, out);
  adapters.save(out / "adapters.ckpt", lm.config());
  lm.save(out / "lm.ckpt");

  json config = {{"data", fs::absolute(a.data).string()},
                 {"lm", fs::absolute(lm_path).string()},
                 {"kind", "kmeans"},
                 {"kmeans", {{"codebook_size", a.k}, {"frames", a.frames}, {"max_iter", fo.max_iter}, {"tol", fo.tol}}},
                 {"adapters", mc.adapters},
                 {"train", mc.train}};
  auto m = common.manifest("train-kmeans", config, a.seed);
  m.artifacts = {{"kmeans", "kmeans.ckpt"}, {"adapters", "adapters.ckpt"}, {"lm", "lm.ckpt"},
                 {"metrics", "metrics.csv"}, {"checkpoint", "checkpoint.ckpt"}};
  m.results = final_metrics(trainer.log());
  m.results["centroids"] = km.k();
  m.results["final_inertia"] = km.inertia().empty() ? 0.0 : km.inertia().back();
  common.finish(m, out);
  std::cout << "k-means with " << km.k() << " centroids; unit LM trained " << trainer.current_step() << " steps\n";
}

// eval ----------------------------------------------------------------------

/// Whatever a tokenizer directory holds, behind one interface.
struct LoadedTokenizer {
  std::unique_ptr<tok::LastModel> last;
  std::optional<kmeans::KMeansModel> km;
  std::optional<textlm::SpeechAdapters> adapters;
  std::optional<textlm::CausalLM> lm;
  std::string kind;

  const tok::FrameTokenizer& tokenizer() const {
    if (last) return *last;
    return *km;
  }
  const textlm::SpeechAdapters& speech_adapters() const { return last ? last->adapters() : *adapters; }
};

LoadedTokenizer load_tokenizer_dir(const fs::path& dir) {
  LoadedTokenizer t;
  if (!fs::is_directory(dir)) throw MissingArtifact("tokenizer directory not found: " + dir.string());
  if (fs::exists(dir / "tokenizer.ckpt")) {
    t.last = tok::LastModel::load(dir / "tokenizer.ckpt");
    t.kind = "last";
  } else if (fs::exists(dir / "kmeans.ckpt")) {
    t.km = kmeans::KMeansModel::load(dir / "kmeans.ckpt");
    t.adapters = textlm::SpeechAdapters::load(resolve_artifact(dir, "adapters.ckpt"));
    t.kind = "kmeans";
  } else {
    throw MissingArtifact("no tokenizer.ckpt or kmeans.ckpt in " + dir.string());
  }
  t.lm = textlm::CausalLM::load(resolve_artifact(dir, "lm.ckpt"));
  return t;
}

struct EvalArgs {
  std::string suite;
  std::string tokenizer;
  std::string data;
  std::string lm;
  std::string out;
  bool oracle = false;
  bool random_control = false;
  std::uint64_t seed = 0;
  std::size_t k = 64;
};

std::vector<std::vector<int>> frame_tokens_of(const tok::FrameTokenizer& t, const std::vector<synth::Utterance>& us,
                                              std::size_t begin, std::size_t end) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(t.frame_tokens(us[i].features));
  return out;
}

std::vector<std::vector<int>> labels_of(const std::vector<synth::Utterance>& us, std::size_t begin, std::size_t end) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(us[i].frame_labels());
  return out;
}

void evaluate(const EvalArgs& a, const Common& common) {
  static const std::vector<std::string> suites = {"swuggy", "sblimp", "abx", "purity", "per", "stats"};
  if (std::find(suites.begin(), suites.end(), a.suite) == suites.end()) {
    throw ConfigError("eval: unknown suite '" + a.suite + "'");
  }
  if (a.oracle && a.suite != "swuggy" && a.suite != "sblimp") {
    throw ConfigError("eval: --oracle applies to swuggy and sblimp only");
  }
  if (a.oracle && a.random_control) throw ConfigError("eval: --oracle and --random-control are exclusive");

  std::optional<RunManifest> source;
  if (!a.tokenizer.empty()) {
    if (!fs::is_directory(a.tokenizer)) throw MissingArtifact("tokenizer directory not found: " + a.tokenizer);
    if (fs::exists(fs::path(a.tokenizer) / "manifest.json")) source = read_manifest(a.tokenizer);
  }
  std::string data_dir = a.data;
  if (data_dir.empty() && source) data_dir = source->config.value("data", std::string());
  if (data_dir.empty()) throw ConfigError("eval: --data is required when the tokenizer manifest names no data");
  fs::path out = a.out;
  if (out.empty()) {
    if (a.tokenizer.empty()) throw ConfigError("eval: --out is required without --tokenizer");
    out = fs::path(a.tokenizer) / "eval";
  }

  // Load everything before creating the output so a missing piece leaves no
  // half-written directory.
  const auto world = synth::read_world(data_dir);
  std::optional<synth::EvalSuite> suite;
  std::vector<synth::Utterance> heldout;
  if (a.suite == "swuggy" || a.suite == "sblimp" || a.suite == "abx") {
    suite = synth::read_suites(fs::path(data_dir) / "suites");
  } else {
    heldout = synth::read_corpus(fs::path(data_dir) / "heldout");
    if (heldout.empty()) throw ConfigError("eval: held-out corpus is empty");
  }

  LoadedTokenizer loaded;
  if (a.random_control) {
    std::string lm_path = a.lm;
    if (lm_path.empty() && !a.tokenizer.empty()) lm_path = a.tokenizer;
    if (lm_path.empty()) throw ConfigError("eval: --random-control needs --lm or --tokenizer");
    loaded.lm = textlm::CausalLM::load(resolve_artifact(lm_path, "lm.ckpt"));
    tok::TokenizerConfig tk;
    tk.codebook_size = a.k;
    textlm::AdapterConfig ac;
    ac.codebook_size = a.k;
    ac.code_dim = loaded.lm->config().model_dim;
    ac.out_init = 1.0;
    loaded.last = std::make_unique<tok::LastModel>(tk, ac, loaded.lm->config(), a.seed);
    loaded.kind = "random_control";
  } else if (!a.oracle) {
    if (a.tokenizer.empty()) throw ConfigError("eval: --tokenizer is required");
    loaded = load_tokenizer_dir(a.tokenizer);
  }

  fs::create_directories(out);
  json result;
  std::map<std::string, std::string> artifacts;
  const std::string json_name = a.suite + ".json";
  artifacts[a.suite] = json_name;

  if (a.suite == "swuggy" || a.suite == "sblimp") {
    const auto& pairs = a.suite == "swuggy" ? suite->swuggy : suite->sblimp;
    const auto scorer = a.oracle ? eval::oracle_scorer(world)
                                 : eval::lm_scorer(loaded.tokenizer(), loaded.speech_adapters(), *loaded.lm);
    const auto report = eval::score_pairs(pairs, *suite, scorer);
    result = eval::to_json(report);
    eval::write_pair_csv(out / (a.suite + ".csv"), report);
    artifacts[a.suite + "_verdicts"] = a.suite + ".csv";
  } else if (a.suite == "abx") {
    const auto latent = eval::abx_error(suite->abx, *suite, eval::latent_representation(loaded.tokenizer()));
    const auto onehot = eval::abx_error(suite->abx, *suite, eval::onehot_representation(loaded.tokenizer()));
    result = {{"latent", eval::to_json(latent)}, {"onehot", eval::to_json(onehot)}};
    eval::write_abx_csv(out / "abx_latent.csv", latent);
    eval::write_abx_csv(out / "abx_onehot.csv", onehot);
    artifacts["abx_latent_verdicts"] = "abx_latent.csv";
    artifacts["abx_onehot_verdicts"] = "abx_onehot.csv";
  } else if (a.suite == "purity") {
    const auto& t = loaded.tokenizer();
    const auto report = eval::unit_purity(frame_tokens_of(t, heldout, 0, heldout.size()),
                                          labels_of(heldout, 0, heldout.size()), t.vocab_size(),
                                          world.inventory.size(), world.inventory.family);
    result = eval::to_json(report);
    result["families"] = world.inventory.families;
  } else if (a.suite == "per") {
    // Units are mapped to phonemes on the first half and scored on the second.
    const auto& t = loaded.tokenizer();
    const std::size_t half = heldout.size() / 2;
    if (half == 0) throw ConfigError("eval: per needs at least two held-out utterances");
    const auto map = eval::unit_purity(frame_tokens_of(t, heldout, 0, half), labels_of(heldout, 0, half),
                                       t.vocab_size(), world.inventory.size());
    std::vector<std::vector<int>> reference;
    for (std::size_t i = half; i < heldout.size(); ++i) reference.push_back(heldout[i].phonemes());
    const auto report = eval::per_proxy(map.majority, frame_tokens_of(t, heldout, half, heldout.size()), reference);
    result = eval::to_json(report);
    result["mapping_utterances"] = half;
  } else {
    const auto& t = loaded.tokenizer();
    const auto tokens = frame_tokens_of(t, heldout, 0, heldout.size());
    const auto stats = eval::codebook_stats(tokens, t.vocab_size());
    std::vector<std::size_t> usage(t.vocab_size(), 0);
    for (const auto& seq : tokens) {
      for (int z : seq) ++usage[static_cast<std::size_t>(z)];
    }
    result = eval::to_json(stats);
    result["units"] = t.vocab_size();
    result["usage"] = usage;
    result["perplexity_fraction"] = stats.perplexity / static_cast<double>(t.vocab_size());
  }
  result["suite"] = a.suite;
  result["tokenizer_kind"] = a.oracle ? std::string("oracle") : loaded.kind;
  write_json_file(out / json_name, result);

  // One manifest per eval directory, accumulating suites across invocations.
  RunManifest m = common.manifest("eval", json::object(), a.seed);
  if (fs::exists(out / "manifest.json")) {
    const auto previous = read_manifest(out);
    m.config = previous.config;
    m.artifacts = previous.artifacts;
    m.results = previous.results;
  }
  m.config["data"] = fs::absolute(data_dir).string();
  if (!a.tokenizer.empty()) m.config["tokenizer"] = fs::absolute(a.tokenizer).string();
  if (source) m.config["tokenizer_config_hash"] = source->config_hash;
  m.config["suites"][a.suite] = {{"oracle", a.oracle}, {"random_control", a.random_control}};
  m.config_hash = config_hash(m.config);
  for (auto& [k, v] : artifacts) m.artifacts[k] = v;
  json headline = result;
  for (const char* bulky : {"majority", "purity", "frames", "family", "usage"}) headline.erase(bulky);
  m.results[a.suite] = headline;
  common.finish(m, out);
  std::cout << a.suite << ": " << headline.dump() << "\n";
}

// tokenize ------------------------------------------------------------------

struct TokenizeArgs {
  std::string tokenizer;
  std::string corpus;
  std::string out;
};

void tokenize(const TokenizeArgs& a, const Common& common) {
  const auto loaded = load_tokenizer_dir(a.tokenizer);
  const auto corpus = synth::read_corpus(a.corpus);
  tok::TokenExport data;
  data.meta = {{"tokenizer", fs::absolute(a.tokenizer).string()},
               {"kind", loaded.kind},
               {"vocab_size", loaded.tokenizer().vocab_size()},
               {"corpus", fs::absolute(a.corpus).string()}};
  for (const auto& u : corpus) {
    data.ids.push_back(u.id);
    data.tokens.push_back(loaded.tokenizer().tokenize(u.features));
  }
  tok::write_token_export(data, a.out);
  // The export's manifest.json doubles as the run manifest.
  auto m = common.manifest("tokenize", data.meta, 0);
  json j = m;
  j.update(read_json_file(fs::path(a.out) / "manifest.json"));
  j["wall_time_s"] = seconds_since(common.start);
  j["artifacts"] = {{"tokens", "tokens.txt"}};
  write_json_file(fs::path(a.out) / "manifest.json", j);
  std::cout << "tokenized " << corpus.size() << " utterances\n";
}

// report --------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

void make_report(const ReportArgs& a, const Common&) {
  std::vector<fs::path> dirs(a.runs.begin(), a.runs.end());
  report::write_report(dirs, a.out);
  std::cout << "report written to " << (fs::path(a.out) / "report.md").string() << "\n";
}

// sweep ---------------------------------------------------------------------

struct SweepArgs {
  std::string config;
  bool dry_run = false;
};

/// Each planned run is a list of command lines executed in order.
struct PlannedRun {
  std::string name;
  std::vector<std::vector<std::string>> commands;
};

std::string number_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v.get<double>());
  return buf;
}

std::vector<PlannedRun> plan_sweep(const json& cfg) {
  for (const char* key : {"data", "lm", "out"}) {
    if (!cfg.contains(key)) throw ConfigError(std::string("sweep: missing field '") + key + "'");
  }
  for (const auto& [key, value] : cfg.items()) {
    static const std::vector<std::string> known = {"data", "lm", "out", "steps", "suites", "runs", "grid", "model"};
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("sweep: unknown field '" + key + "'");
    }
  }
  const std::string data = cfg["data"], lm = cfg["lm"], out = cfg["out"];
  const auto suites = cfg.value("suites", std::vector<std::string>{"swuggy", "sblimp", "abx", "purity", "per", "stats"});

  std::vector<json> runs = cfg.value("runs", std::vector<json>{});
  if (cfg.contains("grid")) {
    // Cartesian product in a fixed key order so run names are stable.
    std::vector<json> expanded = {json::object()};
    for (const char* key : {"kind", "mode", "k", "lambda", "seed"}) {
      if (!cfg["grid"].contains(key)) continue;
      std::vector<json> next;
      for (const auto& partial : expanded) {
        for (const auto& v : cfg["grid"][key]) {
          json r = partial;
          r[key] = v;
          next.push_back(std::move(r));
        }
      }
      expanded = std::move(next);
    }
    for (const auto& [key, value] : cfg["grid"].items()) {
      if (key != "kind" && key != "mode" && key != "k" && key != "lambda" && key != "seed") {
        throw ConfigError("sweep: unknown grid axis '" + key + "'");
      }
    }
    runs.insert(runs.end(), expanded.begin(), expanded.end());
  }
  if (runs.empty()) throw ConfigError("sweep: no runs");

  std::vector<PlannedRun> plan;
  for (const auto& r : runs) {
    const std::string kind = r.value("kind", std::string("last"));
    if (kind != "last" && kind != "kmeans") throw ConfigError("sweep: kind must be last or kmeans");
    std::string name = r.value("name", std::string());
    if (name.empty()) {
      name = kind;
      if (kind == "last") name += "_" + r.value("mode", std::string("pretrain"));
      if (r.contains("k")) name += "_k" + number_text(r["k"]);
      if (r.contains("lambda")) name += "_lambda" + number_text(r["lambda"]);
      name += "_s" + number_text(r.value("seed", json(0)));
    }
    const std::string dir = (fs::path(out) / name).string();
    PlannedRun p{name, {}};
    std::vector<std::string> train;
    if (kind == "last") {
      train = {"train-tokenizer", "--data", data, "--lm", lm, "--out", dir, "--mode",
               r.value("mode", std::string("pretrain"))};
      if (r.contains("lambda")) train.insert(train.end(), {"--lambda", number_text(r["lambda"])});
    } else {
      train = {"train-kmeans", "--data", data, "--lm", lm, "--out", dir};
    }
    if (r.contains("k")) train.insert(train.end(), {"--k", number_text(r["k"])});
    train.insert(train.end(), {"--seed", number_text(r.value("seed", json(0)))});
    if (r.contains("steps")) {
      train.insert(train.end(), {"--steps", number_text(r["steps"])});
    } else if (cfg.contains("steps")) {
      train.insert(train.end(), {"--steps", number_text(cfg["steps"])});
    }
    const std::string model = r.value("model", cfg.value("model", std::string()));
    if (!model.empty()) train.insert(train.end(), {"--model", model});
    p.commands.push_back(std::move(train));
    for (const auto& s : suites) p.commands.push_back({"eval", "--suite", s, "--tokenizer", dir});
    plan.push_back(std::move(p));
  }
  std::vector<std::string> report = {"report", "--out", (fs::path(out) / "report").string(), "--runs"};
  for (const auto& p : plan) report.push_back((fs::path(out) / p.name).string());
  plan.push_back({"report", {report}});
  return plan;
}

void sweep(const SweepArgs& a, const Common& common) {
  const json cfg = read_json_file(a.config);
  const auto plan = plan_sweep(cfg);
  for (const auto& p : plan) {
    for (const auto& cmd : p.commands) {
      std::cout << "lasttok " << join_args(cmd) << "\n";
      if (a.dry_run) continue;
      std::vector<std::string> args = {"lasttok"};
      args.insert(args.end(), cmd.begin(), cmd.end());
      const int code = run(args);
      if (code != 0) {
        throw TrainingAbort("sweep: '" + join_args(cmd) + "' exited with code " + std::to_string(code));
      }
    }
  }
  if (!a.dry_run) {
    auto m = common.manifest("sweep", cfg, 0);
    m.artifacts["report"] = "report/report.md";
    for (const auto& p : plan) {
      if (p.name != "report") m.artifacts[p.name] = p.name;
    }
    common.finish(m, cfg["out"].get<std::string>());
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Language-model-aware speech tokenizer: synthetic data, training, evaluation and reports.", "lasttok"};
  app.require_subcommand(1);
  app.set_version_flag("--version", build_id());

  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);
  std::function<void()> action;

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Build a synthetic world, corpora and evaluation suites");
  gen->add_option("--config", gd.config, "Data config JSON (world, utterances, heldout, corpus_seed, suites)")
      ->required();
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->callback([&] { action = [&] { gen_data(gd, common); }; });

  PretrainLmArgs pl;
  auto* pre = app.add_subcommand("pretrain-lm", "Pretrain the text LM on grammar sentences, then freeze it");
  pre->add_option("--data", pl.data, "Directory written by gen-data")->required();
  pre->add_option("--out", pl.out, "Output directory (lm.ckpt, metrics.csv, manifest.json)")->required();
  pre->add_option("--preset", pl.preset, "LM size: S (2 layers, dim 64) or M (4 layers, dim 128)")
      ->check(CLI::IsMember({"S", "M"}))
      ->capture_default_str();
  pre->add_option("--config", pl.config, "Train config JSON overriding the text-LM defaults");
  pre->add_option("--steps", pl.steps, "Optimizer steps (overrides the config)");
  pre->add_option("--seed", pl.seed, "Initialisation and sampling seed")->capture_default_str();
  pre->callback([&] { action = [&] { pretrain_lm(pl, common); }; });

  TrainTokenizerArgs tt;
  auto* ttc = app.add_subcommand("train-tokenizer", "Train the LM-aware tokenizer against a pretrained LM");
  ttc->add_option("--data", tt.data, "Directory written by gen-data")->required();
  ttc->add_option("--lm", tt.lm, "lm.ckpt or a directory holding it")->required();
  ttc->add_option("--out", tt.out, "Output directory")->required();
  ttc->add_option("--mode", tt.mode, "pretrain keeps the LM frozen; finetune updates it")
      ->check(CLI::IsMember({"pretrain", "finetune"}))
      ->capture_default_str();
  ttc->add_option("--model", tt.model, "JSON with optional tokenizer/adapters/train/weights sections");
  ttc->add_option("--steps", tt.steps, "Optimizer steps (overrides the config)");
  ttc->add_option("--k", tt.k, "Codebook size (overrides the config)");
  ttc->add_option("--lambda", tt.lambda, "Reconstruction weight (overrides the config)");
  ttc->add_option("--seed", tt.seed, "Initialisation and sampling seed")->capture_default_str();
  ttc->add_flag("--resume", tt.resume, "Continue from OUT/checkpoint.ckpt when present");
  ttc->add_option("--checkpoint-every", tt.checkpoint_every, "Write checkpoint.ckpt every N steps");
  ttc->add_option("--log-every", tt.log_every, "Progress line every N steps on stderr; 0 = quiet")
      ->capture_default_str();
  ttc->callback([&] { action = [&] { train_tokenizer(tt, common); }; });

  TrainKmeansArgs tk;
  auto* tkc = app.add_subcommand("train-kmeans", "Fit the k-means baseline and train its unit LM adapters");
  tkc->add_option("--data", tk.data, "Directory written by gen-data")->required();
  tkc->add_option("--lm", tk.lm, "lm.ckpt or a directory holding it")->required();
  tkc->add_option("--out", tk.out, "Output directory")->required();
  tkc->add_option("--k", tk.k, "Number of centroids")->capture_default_str()->check(CLI::PositiveNumber);
  tkc->add_option("--frames", tk.frames, "Training frames sampled for the fit")->capture_default_str();
  tkc->add_option("--model", tk.model, "JSON with optional adapters/train sections");
  tkc->add_option("--steps", tk.steps, "Unit-LM optimizer steps (overrides the config)");
  tkc->add_option("--seed", tk.seed, "Seed")->capture_default_str();
  tkc->add_option("--log-every", tk.log_every, "Progress line every N steps on stderr; 0 = quiet")
      ->capture_default_str();
  tkc->callback([&] { action = [&] { train_kmeans(tk, common); }; });

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "Evaluate a trained tokenizer on one suite");
  evc->add_option("--suite", ev.suite, "swuggy, sblimp, abx, purity, per or stats")->required();
  evc->add_option("--tokenizer", ev.tokenizer, "Directory from train-tokenizer or train-kmeans");
  evc->add_option("--data", ev.data, "Data directory (default: the one named in the tokenizer manifest)");
  evc->add_option("--lm", ev.lm, "LM for --random-control (default: the tokenizer's)");
  evc->add_option("--out", ev.out, "Results directory (default: TOKENIZER/eval)");
  evc->add_flag("--oracle", ev.oracle, "Score pairs from the generating words (upper bound)");
  evc->add_flag("--random-control", ev.random_control, "Use an untrained tokenizer with random adapters");
  evc->add_option("--seed", ev.seed, "Seed of the random control")->capture_default_str();
  evc->add_option("--k", ev.k, "Codebook size of the random control")->capture_default_str();
  evc->callback([&] { action = [&] { evaluate(ev, common); }; });

  TokenizeArgs tz;
  auto* tzc = app.add_subcommand("tokenize", "Export deduplicated tokens for a corpus");
  tzc->add_option("--tokenizer", tz.tokenizer, "Directory from train-tokenizer or train-kmeans")->required();
  tzc->add_option("--corpus", tz.corpus, "Corpus directory (manifest.jsonl + features.bin)")->required();
  tzc->add_option("--out", tz.out, "Output directory (manifest.json + tokens.txt)")->required();
  tzc->callback([&] { action = [&] { tokenize(tz, common); }; });

  ReportArgs rp;
  auto* rpc = app.add_subcommand("report", "Markdown tables and SVG plots from finished runs");
  rpc->add_option("--runs", rp.runs, "Run directories, in table order");
  rpc->add_option("--out", rp.out, "Report directory")->required();
  rpc->callback([&] { action = [&] { make_report(rp, common); }; });

  SweepArgs sw;
  auto* swc = app.add_subcommand("sweep", "Train, evaluate and report over a list or grid of configs");
  swc->add_option("--config", sw.config, "Sweep JSON: data, lm, out, optional steps/suites/model, runs and/or grid")
      ->required();
  swc->add_flag("--dry-run", sw.dry_run, "Print the planned commands only");
  swc->callback([&] { action = [&] { sweep(sw, common); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ExitCode::ok : ExitCode::config_error;
  }

  try {
    action();
    return ExitCode::ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ExitCode::config_error;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return ExitCode::config_error;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ExitCode::config_error;
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return ExitCode::training_abort;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return ExitCode::missing_artifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::failure;
  }
}

}  // namespace lasttok::cli
