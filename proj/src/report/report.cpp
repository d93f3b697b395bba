#include "lasttok/report/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lasttok/errors.hpp"

namespace lasttok::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double v, const char* spec = "%.4f") {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::optional<json> read_json(const fs::path& path, std::vector<std::string>& notes) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    notes.push_back(path.filename().string() + " unreadable: " + e.what());
    return std::nullopt;
  }
}

/// Looks up a dotted path such as "abx.latent.within"; NaN when absent.
double number_at(const RunData& run, const std::string& suite, std::initializer_list<const char*> keys) {
  auto it = run.evals.find(suite);
  if (it == run.evals.end()) return std::nan("");
  const json* node = &it->second;
  for (const char* k : keys) {
    if (!node->is_object() || !node->contains(k)) return std::nan("");
    node = &(*node)[k];
  }
  return node->is_number() ? node->get<double>() : std::nan("");
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double width = 640, height = 360, left = 60, right = 20, top = 30, bottom = 40;
  double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.0) * (width - left - right); }
  double py(double y) const {
    return height - bottom - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.0) * (height - top - bottom);
  }
};

void svg_open(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::width << "\" height=\"" << Frame::height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << Frame::width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  const double xl = f.px(f.x0), xr = f.px(f.x1), yb = f.py(f.y0), yt = f.py(f.y1);
  out << "<line x1=\"" << fmt(xl, "%.2f") << "\" y1=\"" << fmt(yb, "%.2f") << "\" x2=\"" << fmt(xr, "%.2f")
      << "\" y2=\"" << fmt(yb, "%.2f") << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << fmt(xl, "%.2f") << "\" y1=\"" << fmt(yb, "%.2f") << "\" x2=\"" << fmt(xl, "%.2f")
      << "\" y2=\"" << fmt(yt, "%.2f") << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << fmt(xl, "%.2f") << "\" y=\"" << fmt(yb + 14, "%.2f") << "\">" << fmt(f.x0, "%g") << "</text>\n";
  out << "<text x=\"" << fmt(xr, "%.2f") << "\" y=\"" << fmt(yb + 14, "%.2f") << "\" text-anchor=\"end\">"
      << fmt(f.x1, "%g") << "</text>\n";
  out << "<text x=\"" << fmt(xl - 4, "%.2f") << "\" y=\"" << fmt(yb, "%.2f") << "\" text-anchor=\"end\">"
      << fmt(f.y0, "%.3g") << "</text>\n";
  out << "<text x=\"" << fmt(xl - 4, "%.2f") << "\" y=\"" << fmt(yt + 4, "%.2f") << "\" text-anchor=\"end\">"
      << fmt(f.y1, "%.3g") << "</text>\n";
  out << "<text x=\"" << (xl + xr) / 2 << "\" y=\"" << Frame::height - 8 << "\" text-anchor=\"middle\">"
      << escape(xlabel) << "</text>\n";
  out << "<text x=\"14\" y=\"" << (yb + yt) / 2 << "\" transform=\"rotate(-90 14 " << (yb + yt) / 2
      << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
}

using Series = std::vector<std::pair<double, double>>;

std::string line_plot(const std::string& title, const std::string& ylabel,
                      const std::vector<std::pair<std::string, Series>>& series) {
  Frame f{0, 1, 0, 1};
  bool any = false;
  for (const auto& [name, pts] : series) {
    for (const auto& [x, y] : pts) {
      if (!std::isfinite(y)) continue;
      if (!any) {
        f = {x, x, y, y};
        any = true;
      }
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
      f.y0 = std::min(f.y0, y);
      f.y1 = std::max(f.y1, y);
    }
  }
  std::ostringstream out;
  svg_open(out, title);
  axes(out, f, "step", ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& [name, pts] = series[i];
    const char* colour = kPalette[i % kPaletteSize];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
    bool first = true;
    for (const auto& [x, y] : pts) {
      if (!std::isfinite(y)) continue;
      out << (first ? "" : " ") << fmt(f.px(x), "%.2f") << ',' << fmt(f.py(y), "%.2f");
      first = false;
    }
    out << "\"/>\n";
    out << "<text x=\"" << Frame::width - Frame::right - 4 << "\" y=\"" << Frame::top + 14 * (i + 1)
        << "\" text-anchor=\"end\" fill=\"" << colour << "\">" << escape(name) << "</text>\n";
  }
  if (series.empty()) out << "<text x=\"320\" y=\"180\" text-anchor=\"middle\">no data</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string config_value(const RunData& run, const char* key) {
  const auto& cfg = run.manifest.value("config", json::object());
  for (const char* section : {"tokenizer", "kmeans", "train", ""}) {
    const json& node = *section ? cfg.value(section, json::object()) : cfg;
    if (node.is_object() && node.contains(key)) {
      const auto& v = node[key];
      return v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  return "n/a";
}

}  // namespace

RunData load_run(const fs::path& dir) {
  RunData run;
  run.dir = dir;
  run.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  if (!fs::is_directory(dir)) {
    run.notes.push_back("run directory missing");
    return run;
  }
  if (auto m = read_json(dir / "manifest.json", run.notes)) {
    run.manifest = std::move(*m);
  } else {
    run.notes.push_back("manifest.json missing");
  }
  if (run.manifest.contains("config") && run.manifest["config"].contains("train")) {
    try {
      run.train = run.manifest["config"]["train"].get<train::TrainConfig>();
    } catch (const std::exception& e) {
      run.notes.push_back(std::string("train config unreadable: ") + e.what());
    }
  }
  if (fs::exists(dir / "metrics.csv")) {
    try {
      run.metrics = train::read_metrics(dir / "metrics.csv");
    } catch (const std::exception& e) {
      run.notes.push_back(std::string("metrics.csv unreadable: ") + e.what());
    }
  } else {
    run.notes.push_back("metrics.csv missing");
  }
  const fs::path eval_dir = dir / "eval";
  for (const char* suite : {"swuggy", "sblimp", "abx", "purity", "per", "stats"}) {
    if (auto j = read_json(eval_dir / (std::string(suite) + ".json"), run.notes)) run.evals[suite] = std::move(*j);
  }
  if (run.evals.empty()) run.notes.push_back("no eval results");
  return run;
}

std::vector<std::pair<double, double>> lr_curve(const train::TrainConfig& config, std::size_t max_points) {
  const std::size_t n = config.max_steps;
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_points - 1));
  std::vector<std::pair<double, double>> pts;
  for (std::size_t s = 0; s < n; s += stride) pts.emplace_back(static_cast<double>(s), train::lr_at(s, config));
  pts.emplace_back(static_cast<double>(n), train::lr_at(n, config));
  return pts;
}

std::string markdown_summary(const std::vector<RunData>& runs) {
  std::ostringstream out;
  out << "# Run summary\n\n";
  out << "Synthetic sWUGGY scores every pair; the synthetic lexicon has no out-of-vocabulary split.\n\n";

  out << "## Runs\n\n";
  out << "| run | command | mode | K | seed | steps | final loss | final lm loss |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : runs) {
    const double loss = r.metrics.empty() ? std::nan("") : r.metrics.back().loss;
    const double lm = r.metrics.empty() ? std::nan("") : r.metrics.back().lm_loss;
    out << "| " << r.name << " | " << r.manifest.value("command", std::string("n/a")) << " | "
        << config_value(r, "mode") << " | " << config_value(r, "codebook_size") << " | "
        << (r.manifest.contains("seed") ? r.manifest["seed"].dump() : "n/a") << " | "
        << (r.metrics.empty() ? std::string("n/a") : std::to_string(r.metrics.back().step)) << " | "
        << fmt(loss) << " | " << fmt(lm) << " |\n";
  }

  out << "\n## Zero-shot and unit quality\n\n";
  out << "| run | sWUGGY | sBLIMP | ABX within (latent) | ABX across (latent) | ABX within (one-hot) | "
         "ABX across (one-hot) | purity | PER | usage perplexity | dead codes |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : runs) {
    out << "| " << r.name << " | " << fmt(number_at(r, "swuggy", {"accuracy"})) << " | "
        << fmt(number_at(r, "sblimp", {"accuracy"})) << " | " << fmt(number_at(r, "abx", {"latent", "within"}))
        << " | " << fmt(number_at(r, "abx", {"latent", "across"})) << " | "
        << fmt(number_at(r, "abx", {"onehot", "within"})) << " | " << fmt(number_at(r, "abx", {"onehot", "across"}))
        << " | " << fmt(number_at(r, "purity", {"global"})) << " | " << fmt(number_at(r, "per", {"per"})) << " | "
        << fmt(number_at(r, "stats", {"perplexity"}), "%.2f") << " | " << fmt(number_at(r, "stats", {"dead"}), "%.0f")
        << " |\n";
  }

  bool any_notes = false;
  for (const auto& r : runs) any_notes = any_notes || !r.notes.empty();
  if (any_notes) {
    out << "\n## Missing data\n\n";
    for (const auto& r : runs) {
      for (const auto& n : r.notes) out << "- " << r.name << ": " << n << "\n";
    }
  }

  out << "\n## Plots\n\n";
  out << "- ![loss curves](loss_curves.svg)\n- ![learning rate](lr_curves.svg)\n";
  for (const auto& r : runs) {
    if (r.evals.count("stats")) out << "- ![" << r.name << " usage](usage_" << r.name << ".svg)\n";
    if (r.evals.count("purity")) out << "- ![" << r.name << " unit families](families_" << r.name << ".svg)\n";
  }
  return out.str();
}

std::string svg_loss_curves(const std::vector<RunData>& runs) {
  std::vector<std::pair<std::string, Series>> series;
  for (const auto& r : runs) {
    if (r.metrics.empty()) continue;
    Series s;
    for (const auto& m : r.metrics) s.emplace_back(static_cast<double>(m.step), m.loss);
    series.emplace_back(r.name, std::move(s));
  }
  return line_plot("training loss", "loss", series);
}

std::string svg_lr_curves(const std::vector<RunData>& runs) {
  std::vector<std::pair<std::string, Series>> series;
  for (const auto& r : runs) {
    if (r.train) {
      series.emplace_back(r.name, lr_curve(*r.train));
    } else if (!r.metrics.empty()) {
      Series s;
      for (const auto& m : r.metrics) s.emplace_back(static_cast<double>(m.step), m.lr);
      series.emplace_back(r.name, std::move(s));
    }
  }
  return line_plot("learning rate", "lr", series);
}

std::string svg_usage_histogram(const RunData& run) {
  std::vector<double> usage;
  if (auto it = run.evals.find("stats"); it != run.evals.end() && it->second.contains("usage")) {
    usage = it->second["usage"].get<std::vector<double>>();
  }
  std::ostringstream out;
  svg_open(out, run.name + ": codebook usage (held-out frames)");
  const double peak = usage.empty() ? 1.0 : std::max(1.0, *std::max_element(usage.begin(), usage.end()));
  Frame f{0, static_cast<double>(std::max<std::size_t>(usage.size(), 1)), 0, peak};
  axes(out, f, "unit", "frames");
  const double bar = (f.px(1) - f.px(0));
  for (std::size_t k = 0; k < usage.size(); ++k) {
    const double x = f.px(static_cast<double>(k)), y = f.py(usage[k]);
    out << "<rect x=\"" << fmt(x, "%.2f") << "\" y=\"" << fmt(y, "%.2f") << "\" width=\""
        << fmt(std::max(bar - 1.0, 0.5), "%.2f") << "\" height=\"" << fmt(f.py(0) - y, "%.2f")
        << "\" fill=\"#1f77b4\"/>\n";
  }
  if (usage.empty()) out << "<text x=\"320\" y=\"180\" text-anchor=\"middle\">no usage data</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string svg_family_grid(const RunData& run) {
  std::vector<int> family, majority;
  if (auto it = run.evals.find("purity"); it != run.evals.end()) {
    family = it->second.value("family", std::vector<int>{});
    majority = it->second.value("majority", std::vector<int>{});
  }
  const std::size_t units = family.size();
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(units, 1)))));
  const std::size_t rows = (units + cols - 1) / std::max<std::size_t>(cols, 1);
  constexpr double cell = 36, pad = 30;
  const double legend = 120;
  const double width = pad * 2 + cols * cell + legend, height = pad * 2 + std::max<std::size_t>(rows, 1) * cell;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << pad << "\" y=\"18\" font-size=\"13\">" << escape(run.name)
      << ": unit to phoneme family</text>\n";
  int families = 0;
  for (std::size_t k = 0; k < units; ++k) {
    families = std::max(families, family[k] + 1);
    const double x = pad + static_cast<double>(k % cols) * cell, y = pad + static_cast<double>(k / cols) * cell;
    const char* colour = family[k] < 0 ? "#dddddd" : kPalette[static_cast<std::size_t>(family[k]) % kPaletteSize];
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell - 2 << "\" height=\"" << cell - 2
        << "\" fill=\"" << colour << "\"/>\n";
    out << "<text x=\"" << x + 3 << "\" y=\"" << y + 12 << "\">" << k << "</text>\n";
    if (k < majority.size() && majority[k] >= 0) {
      out << "<text x=\"" << x + 3 << "\" y=\"" << y + 27 << "\">p" << majority[k] << "</text>\n";
    }
  }
  for (int fam = 0; fam < families; ++fam) {
    const double x = pad * 1.5 + cols * cell, y = pad + fam * 16.0;
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\""
        << kPalette[static_cast<std::size_t>(fam) % kPaletteSize] << "\"/>\n";
    out << "<text x=\"" << x + 16 << "\" y=\"" << y + 10 << "\">family " << fam << "</text>\n";
  }
  if (units == 0) out << "<text x=\"" << pad << "\" y=\"" << pad + 12 << "\">no purity data</text>\n";
  out << "</svg>\n";
  return out.str();
}

void write_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ConfigError("report: no runs given");
  std::vector<RunData> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  // Same-named directories from different parents would overwrite each
  // other's plots.
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (runs[j].name == runs[i].name) runs[i].name += "_" + std::to_string(i);
    }
  }
  fs::create_directories(out);
  auto put = [&out](const std::string& name, const std::string& text) {
    std::ofstream f(out / name, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw std::runtime_error("report: cannot write " + (out / name).string());
  };
  put("report.md", markdown_summary(runs));
  put("loss_curves.svg", svg_loss_curves(runs));
  put("lr_curves.svg", svg_lr_curves(runs));
  for (const auto& r : runs) {
    if (r.evals.count("stats")) put("usage_" + r.name + ".svg", svg_usage_histogram(r));
    if (r.evals.count("purity")) put("families_" + r.name + ".svg", svg_family_grid(r));
  }
}

}  // namespace lasttok::report
