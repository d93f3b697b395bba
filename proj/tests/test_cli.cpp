#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lasttok/cli/cli.hpp"
#include "lasttok/errors.hpp"
#include "lasttok/kmeans/kmeans.hpp"
#include "lasttok/report/report.hpp"
#include "lasttok/synth/corpus.hpp"
#include "lasttok/train/trainer.hpp"

using namespace lasttok;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int lasttok_run(std::vector<std::string> args) {
  args.insert(args.begin(), "lasttok");
  return cli::run(args);
}

/// Runs with stdout captured.
std::pair<int, std::string> lasttok_capture(std::vector<std::string> args) {
  std::ostringstream out;
  auto* old = std::cout.rdbuf(out.rdbuf());
  const int code = lasttok_run(std::move(args));
  std::cout.rdbuf(old);
  return {code, out.str()};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kData = R"({"world": {"words": 40}, "utterances": 30, "heldout": 10,
                        "suites": {"swuggy": 10, "sblimp": 10, "abx": 10}})";
const char* kModel = R"({"tokenizer": {"n_enc": 1, "n_dec": 1},
                         "train": {"batch_size": 4, "accum_steps": 1, "warmup_steps": 2, "codebook_init_frames": 500}})";

/// Data, LM, a LAST run and a k-means run shared by the tests below.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "lasttok_cli";
  fs::path data = root / "data", lm = root / "lm", last = root / "last", km = root / "km";
  int gen_code = -1, lm_code = -1, last_code = -1, km_code = -1;

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    write_text(root / "data.json", kData);
    write_text(root / "model.json", kModel);
    gen_code = lasttok_run({"gen-data", "--config", (root / "data.json").string(), "--out", data.string()});
    lm_code = lasttok_run({"pretrain-lm", "--data", data.string(), "--out", lm.string(), "--steps", "30"});
    last_code = lasttok_run({"train-tokenizer", "--data", data.string(), "--lm", lm.string(), "--out",
                             last.string(), "--steps", "10", "--model", (root / "model.json").string(),
                             "--log-every", "0"});
    km_code = lasttok_run({"train-kmeans", "--data", data.string(), "--lm", lm.string(), "--out", km.string(),
                           "--k", "64", "--steps", "3", "--log-every", "0"});
  }
};

const Workspace& ws() {
  static const Workspace w;
  return w;
}

json manifest(const fs::path& dir) { return json(cli::read_manifest(dir)); }

}  // namespace

TEST_CASE("gen-data writes a non-empty, reproducible dataset") {
  REQUIRE(ws().gen_code == cli::ExitCode::ok);
  CHECK(synth::read_corpus(ws().data / "train").size() == 30);
  CHECK(synth::read_corpus(ws().data / "heldout").size() == 10);
  const auto m = cli::read_manifest(ws().data);
  CHECK(m.command == "gen-data");
  CHECK(m.config_hash == cli::config_hash(m.config));

  const auto again = ws().root / "data_again";
  REQUIRE(lasttok_run({"gen-data", "--config", (ws().root / "data.json").string(), "--out", again.string()}) == 0);
  const auto m2 = cli::read_manifest(again);
  CHECK(m2.results.at("train_shard_checksum") == m.results.at("train_shard_checksum"));
  CHECK(m2.results.at("heldout_shard_checksum") == m.results.at("heldout_shard_checksum"));

  json other = json::parse(kData);
  other["corpus_seed"] = 12;
  write_text(ws().root / "other.json", other.dump());
  const auto third = ws().root / "data_other";
  REQUIRE(lasttok_run({"gen-data", "--config", (ws().root / "other.json").string(), "--out", third.string()}) == 0);
  CHECK(cli::read_manifest(third).results.at("train_shard_checksum") != m.results.at("train_shard_checksum"));
}

TEST_CASE("bad configs and arguments exit with code 2") {
  write_text(ws().root / "no_world.json", R"({"utterances": 5})");
  CHECK(lasttok_run({"gen-data", "--config", (ws().root / "no_world.json").string(), "--out",
                     (ws().root / "x").string()}) == cli::ExitCode::config_error);
  write_text(ws().root / "broken.json", R"({"world": )");
  CHECK(lasttok_run({"gen-data", "--config", (ws().root / "broken.json").string(), "--out",
                     (ws().root / "x").string()}) == cli::ExitCode::config_error);
  CHECK(lasttok_run({"frobnicate"}) == cli::ExitCode::config_error);
  CHECK(lasttok_run({}) == cli::ExitCode::config_error);
  CHECK(lasttok_run({"train-tokenizer", "--data", ws().data.string()}) == cli::ExitCode::config_error);
  CHECK(lasttok_run({"train-tokenizer", "--data", ws().data.string(), "--lm", ws().lm.string(), "--out",
                     (ws().root / "x").string(), "--mode", "sideways"}) == cli::ExitCode::config_error);
  CHECK(lasttok_capture({"--version"}).first == cli::ExitCode::ok);
}

TEST_CASE("missing inputs exit with code 4") {
  CHECK(lasttok_run({"gen-data", "--config", (ws().root / "absent.json").string(), "--out",
                     (ws().root / "x").string()}) == cli::ExitCode::missing_artifact);
  CHECK(lasttok_run({"eval", "--suite", "swuggy", "--tokenizer", (ws().root / "absent").string()}) ==
        cli::ExitCode::missing_artifact);
  CHECK(lasttok_run({"train-tokenizer", "--data", ws().data.string(), "--lm", (ws().root / "absent").string(),
                     "--out", (ws().root / "x").string()}) == cli::ExitCode::missing_artifact);

  const auto bare = ws().root / "data_no_suites";
  fs::remove_all(bare);
  fs::copy(ws().data, bare, fs::copy_options::recursive);
  fs::remove_all(bare / "suites");
  CHECK(lasttok_run({"eval", "--suite", "swuggy", "--tokenizer", ws().last.string(), "--data", bare.string(),
                     "--out", (ws().root / "x_eval").string()}) == cli::ExitCode::missing_artifact);
}

TEST_CASE("pretrain-lm freezes and records the LM") {
  REQUIRE(ws().lm_code == 0);
  const auto m = manifest(ws().lm);
  CHECK(m["results"].contains("heldout_text_loss"));
  CHECK(train::read_metrics(ws().lm / "metrics.csv").size() == 30);
  CHECK(textlm::CausalLM::load(ws().lm / "lm.ckpt").frozen());
}

TEST_CASE("train-tokenizer runs the requested steps against a frozen LM") {
  REQUIRE(ws().last_code == 0);
  const auto m = manifest(ws().last);
  CHECK(m["results"]["step"] == 10);
  CHECK(m["results"]["lm_checksum_before"] == m["results"]["lm_checksum_after"]);
  const auto rows = train::read_metrics(ws().last / "metrics.csv");
  REQUIRE(rows.size() == 10);
  CHECK(rows.back().step == 10);
  CHECK(fs::exists(ws().last / "tokenizer.ckpt"));
  CHECK(m["config"]["train"]["max_steps"] == 10);
}

TEST_CASE("train-tokenizer is deterministic in its seed") {
  const auto again = ws().root / "last_again";
  REQUIRE(lasttok_run({"train-tokenizer", "--data", ws().data.string(), "--lm", ws().lm.string(), "--out",
                       again.string(), "--steps", "10", "--model", (ws().root / "model.json").string(),
                       "--log-every", "0"}) == 0);
  CHECK(read_text(again / "metrics.csv") == read_text(ws().last / "metrics.csv"));
}

TEST_CASE("train-kmeans fits the requested number of centroids") {
  REQUIRE(ws().km_code == 0);
  CHECK(kmeans::KMeansModel::load(ws().km / "kmeans.ckpt").k() == 64);
  CHECK(manifest(ws().km)["results"]["centroids"] == 64);
}

TEST_CASE("eval writes every suite for both tokenizer kinds") {
  for (const auto& dir : {ws().last, ws().km}) {
    for (const char* suite : {"swuggy", "sblimp", "abx", "purity", "per", "stats"}) {
      CHECK(lasttok_capture({"eval", "--suite", suite, "--tokenizer", dir.string()}).first == 0);
      CHECK(fs::exists(dir / "eval" / (std::string(suite) + ".json")));
    }
    const auto m = manifest(dir / "eval");
    CHECK(m["results"].contains("swuggy"));
    CHECK(m["results"].contains("stats"));
  }
}

TEST_CASE("a single-code tokenizer has usage perplexity one") {
  const auto one = ws().root / "km1";
  REQUIRE(lasttok_run({"train-kmeans", "--data", ws().data.string(), "--lm", ws().lm.string(), "--out",
                       one.string(), "--k", "1", "--steps", "2", "--log-every", "0"}) == 0);
  REQUIRE(lasttok_capture({"eval", "--suite", "stats", "--tokenizer", one.string()}).first == 0);
  const json stats = json::parse(read_text(one / "eval" / "stats.json"));
  CHECK(stats["perplexity"].get<double>() == doctest::Approx(1.0));
  CHECK(stats["dead"] == 0);
}

TEST_CASE("the oracle scores the paired suites perfectly") {
  for (const char* suite : {"swuggy", "sblimp"}) {
    const auto out = ws().root / "oracle";
    REQUIRE(lasttok_capture({"eval", "--suite", suite, "--tokenizer", ws().last.string(), "--oracle", "--out",
                             out.string()})
                .first == 0);
    CHECK(json::parse(read_text(out / (std::string(suite) + ".json")))["accuracy"] == 1.0);
  }
  CHECK(lasttok_run({"eval", "--suite", "abx", "--tokenizer", ws().last.string(), "--oracle"}) ==
        cli::ExitCode::config_error);
}

TEST_CASE("tokenize exports one line per utterance") {
  const auto out = ws().root / "tokens";
  REQUIRE(lasttok_capture({"tokenize", "--tokenizer", ws().km.string(), "--corpus", (ws().data / "heldout").string(),
                           "--out", out.string()})
              .first == 0);
  const auto exp = tok::read_token_export(out);
  REQUIRE(exp.tokens.size() == 10);
  for (const auto& t : exp.tokens) {
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] != t[i - 1]);
  }
}

TEST_CASE("report keeps run order and plots the schedule") {
  const auto out = ws().root / "report";
  REQUIRE(lasttok_capture({"report", "--runs", ws().km.string(), ws().last.string(), "--out", out.string()}).first ==
          0);
  const std::string md = read_text(out / "report.md");
  const auto km_row = md.find("| km |"), last_row = md.find("| last |");
  REQUIRE(km_row != std::string::npos);
  REQUIRE(last_row != std::string::npos);
  CHECK(km_row < last_row);
  CHECK(fs::exists(out / "loss_curves.svg"));
  CHECK(fs::exists(out / "lr_curves.svg"));

  const auto run = report::load_run(ws().last);
  REQUIRE(run.train);
  const auto curve = report::lr_curve(*run.train);
  CHECK(curve.front().first == 0.0);
  CHECK(curve.front().second == 0.0);
  CHECK(curve.back().first == 10.0);
  CHECK(curve.back().second == doctest::Approx(run.train->final_lr));

  CHECK(lasttok_run({"report", "--out", out.string()}) == cli::ExitCode::config_error);
}

TEST_CASE("sweep dry run plans without running") {
  const auto out = ws().root / "sweep";
  json cfg = {{"data", ws().data.string()},
              {"lm", ws().lm.string()},
              {"out", out.string()},
              {"steps", 5},
              {"suites", {"stats"}},
              {"grid", {{"kind", {"last", "kmeans"}}, {"seed", {0, 1}}}}};
  write_text(ws().root / "sweep.json", cfg.dump());
  const auto [code, text] = lasttok_capture({"sweep", "--config", (ws().root / "sweep.json").string(), "--dry-run"});
  REQUIRE(code == 0);
  std::size_t trains = 0, evals = 0, reports = 0;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    trains += line.find("train-tokenizer") != std::string::npos || line.find("train-kmeans") != std::string::npos;
    evals += line.find(" eval ") != std::string::npos;
    reports += line.find(" report ") != std::string::npos;
  }
  CHECK(trains == 4);
  CHECK(evals == 4);
  CHECK(reports == 1);
  CHECK_FALSE(fs::exists(out));

  cfg.erase("lm");
  write_text(ws().root / "sweep_bad.json", cfg.dump());
  CHECK(lasttok_run({"sweep", "--config", (ws().root / "sweep_bad.json").string(), "--dry-run"}) ==
        cli::ExitCode::config_error);
}

TEST_CASE("a small sweep runs end to end") {
  const auto out = ws().root / "sweep_run";
  const json cfg = {{"data", ws().data.string()},
                    {"lm", ws().lm.string()},
                    {"out", out.string()},
                    {"steps", 3},
                    {"model", (ws().root / "model.json").string()},
                    {"suites", {"stats", "swuggy"}},
                    {"runs", {{{"kind", "last"}, {"k", 16}}, {{"kind", "kmeans"}, {"k", 16}}}}};
  write_text(ws().root / "sweep_run.json", cfg.dump());
  REQUIRE(lasttok_capture({"sweep", "--config", (ws().root / "sweep_run.json").string()}).first == 0);
  CHECK(fs::exists(out / "report" / "report.md"));
  CHECK(fs::exists(out / "last_pretrain_k16_s0" / "eval" / "stats.json"));
  CHECK(fs::exists(out / "kmeans_k16_s0" / "eval" / "swuggy.json"));
}
