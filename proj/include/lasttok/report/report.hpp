#pragma once

// Markdown and SVG summaries built only from run directories on disk:
// manifest.json, metrics.csv and eval/*.json. Output is a pure function of
// those files, so two reports over the same runs are byte-identical.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lasttok/train/schedule.hpp"
#include "lasttok/train/trainer.hpp"

namespace lasttok::report {

struct RunData {
  std::string name;
  std::filesystem::path dir;
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<train::MetricsRow> metrics;
  /// Suite name -> parsed eval/<suite>.json.
  std::map<std::string, nlohmann::json> evals;
  std::optional<train::TrainConfig> train;
  /// Problems found while loading, reported inline instead of failing.
  std::vector<std::string> notes;
};

/// Never throws for missing pieces; they end up in notes.
RunData load_run(const std::filesystem::path& dir);

/// (step, lr_at(step)) for step = 0..max_steps, thinned to at most
/// max_points but always keeping both endpoints.
std::vector<std::pair<double, double>> lr_curve(const train::TrainConfig& config, std::size_t max_points = 400);

std::string markdown_summary(const std::vector<RunData>& runs);

std::string svg_loss_curves(const std::vector<RunData>& runs);
std::string svg_lr_curves(const std::vector<RunData>& runs);
/// Frame counts per unit from eval/stats.json.
std::string svg_usage_histogram(const RunData& run);
/// One cell per unit coloured by the family of its majority phoneme
/// (eval/purity.json); grey for units that never fired.
std::string svg_family_grid(const RunData& run);

/// Writes report.md and the SVG files into out. Throws ConfigError on an
/// empty run list.
void write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out);

}  // namespace lasttok::report
