#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dsat/checkpoint.hpp"
#include "dsat/config.hpp"
#include "dsat/dataset.hpp"
#include "dsat/error.hpp"
#include "dsat/evaluate.hpp"
#include "dsat/train.hpp"

namespace fs = std::filesystem;
using namespace dsat;

namespace {

constexpr int kTrainingAborted = 3;
constexpr int kCheckFailed = 4;

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) parts.push_back(item);
  return parts;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_loss_curve(const fs::path& path, const TrainConfig& cfg, const std::vector<Real>& losses) {
  auto out = open_out(path);
  out << "iteration,loss,lr\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << ',' << learning_rate(cfg, i) << '\n';
}

struct GenData {
  std::string out, mix = "neutral:0.4,occluded:0.2,rotated:0.2,blurred:0.2";
  std::size_t count = 0, size = TrainConfig{}.image_size;
  std::uint64_t seed = 1;

  int run() const {
    const auto data = generate_dataset(count, parse_mix(mix), seed, size);
    write_dataset(out, data);
    std::cout << "wrote " << data.size() << " samples to " << out << "\n";
    return 0;
  }
};

struct Train {
  std::string config, out, data;

  int run() const {
    const TrainConfig cfg = load_config(config);
    const auto samples = data.empty() ? generate_dataset(cfg.train_samples, {0.4, 0.2, 0.2, 0.2}, cfg.seed, cfg.image_size)
                                      : read_dataset(data);
    DsatModel model(cfg);
    const fs::path dir(out);
    fs::create_directories(dir);

    TrainOptions opts;
    const auto start = std::chrono::steady_clock::now();
    opts.on_iteration = [&](std::size_t it, Real loss, Real lr) {
      if ((it + 1) % 50 != 0 && it + 1 != cfg.iterations) return;
      const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - start;
      std::cout << "iter " << it + 1 << " loss " << loss << " lr " << lr << " (" << spent.count() << " s)\n";
    };
    try {
      const auto result = train(model, samples, opts);
      save_checkpoint(model, (dir / "model.json").string());
      write_loss_curve(dir / "loss.csv", cfg, result.losses);
    } catch (const TrainingAborted& e) {
      save_checkpoint(model, (dir / "model.json").string());
      write_loss_curve(dir / "loss.csv", cfg, e.partial().losses);
      std::cerr << e.what() << "; saved the last finite-loss weights\n";
      return kTrainingAborted;
    }
    std::cout << "checkpoint " << (dir / "model.json").string() << "\n";
    return 0;
  }
};

struct Eval {
  std::string checkpoint, data, report, gates;
  bool subpixel = false;

  int run() const {
    auto model = load_model(checkpoint);
    const EvalReport result = evaluate(*model, read_dataset(data), subpixel);
    open_out(report) << report_text(result);
    if (!gates.empty()) {
      auto csv = open_out(gates);
      write_gate_csv(csv, gate_rows(result));
    }
    for (const auto& a : result.aggregates)
      std::cout << std::left << std::setw(10) << a.label << " n=" << a.count << " NME " << a.nme_mean << "% FR "
                << a.failure_rate << "%\n";
    return 0;
  }
};

struct GateStats {
  std::string report, out, summary;

  int run() const {
    std::ifstream in(report);
    if (!in) throw Error("cannot read " + report);
    const EvalReport result = report_from_json(nlohmann::json::parse(in));
    auto csv = open_out(out);
    write_gate_csv(csv, gate_rows(result));
    const auto rows = gate_report(result.records, difficulty_labels());
    if (!summary.empty()) {
      auto summary_csv = open_out(summary);
      write_gate_report_csv(summary_csv, rows);
    }
    write_gate_report_csv(std::cout, rows);
    return 0;
  }
};

struct GradCheck {
  std::string config;
  Real tol = 1e-3, eps = 1e-6;

  int run() const {
    const TrainConfig cfg = load_config(config);
    const auto start = std::chrono::steady_clock::now();
    const auto report = check_model_gradients(cfg, eps, tol);
    const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - start;
    std::cout << "checked " << report.checked << " entries in " << spent.count() << " s\n"
              << "max relative error " << report.max_rel_error << " at " << report.worst.name << "["
              << report.worst.index << "] analytic " << report.worst.analytic << " numeric " << report.worst.numeric
              << "\n";
    for (const auto& e : report.flagged)
      std::cout << "  over tolerance: " << e.name << "[" << e.index << "] " << e.rel_error << "\n";
    std::cout << (report.passed() ? "PASS" : "FAIL") << "\n";
    return report.passed() ? 0 : kCheckFailed;
  }
};

struct Ablate {
  std::string config, variants = "shn,shn+dsa,shn+dss,dsat", seeds = "1,2,3", out;
  std::size_t test_count = 100;

  int run() const {
    const TrainConfig cfg = load_config(config);
    std::vector<AblationVariant> parsed;
    for (const auto& v : split(variants, ',')) parsed.push_back(parse_variant(v));
    std::vector<std::uint64_t> seed_list;
    for (const auto& s : split(seeds, ',')) seed_list.push_back(std::stoull(s));
    const std::vector<Real> mix{0.4, 0.2, 0.2, 0.2};
    const auto train_set = generate_dataset(cfg.train_samples, mix, cfg.seed, cfg.image_size);
    const auto test_set = generate_dataset(test_count, mix, cfg.seed + 1000, cfg.image_size);
    const auto runs = run_ablation(cfg, parsed, seed_list, train_set, test_set, &std::cout);

    std::ostringstream csv;
    csv << "variant,seed,nme,final_loss\n" << std::setprecision(17);
    for (const auto& r : runs) csv << r.variant << ',' << r.seed << ',' << r.nme_mean << ',' << r.final_loss << '\n';
    if (!out.empty()) open_out(out) << csv.str();
    for (const auto& v : parsed) {
      Real total = 0.0;
      std::size_t n = 0;
      for (const auto& r : runs)
        if (r.variant == v.name) total += r.nme_mean, ++n;
      std::cout << std::left << std::setw(8) << v.name << " mean NME " << total / static_cast<Real>(n) << "%\n";
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic face-alignment hourglass with dynamic sparse gates and cross-channel attention"};
  app.require_subcommand(1);

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset directory");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();
  gen_cmd->add_option("--mix", gen.mix, "Difficulty weights, label:weight,...");
  gen_cmd->add_option("--seed", gen.seed, "Base seed");
  gen_cmd->add_option("--size", gen.size, "Image side in pixels");

  Train tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write model.json, model.bin and loss.csv");
  train_cmd->add_option("--config", tr.config, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--data", tr.data, "Dataset directory; generated from the config when omitted")
      ->check(CLI::ExistingDirectory);

  Eval ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--report", ev.report, "JSON report path")->required();
  eval_cmd->add_option("--gates", ev.gates, "Per-sample gate CSV path");
  eval_cmd->add_flag("--subpixel", ev.subpixel, "Quarter-pixel refinement toward the larger neighbour");

  GateStats gs;
  auto* gate_cmd = app.add_subcommand("gate-stats", "Export gate activation ratios from an eval report");
  gate_cmd->add_option("--report", gs.report, "JSON report from eval")->required()->check(CLI::ExistingFile);
  gate_cmd->add_option("--out", gs.out, "Per-sample CSV path")->required();
  gate_cmd->add_option("--summary", gs.summary, "Per-cluster CSV path");

  GradCheck gc;
  auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic and central-difference gradients");
  grad_cmd->add_option("--config", gc.config, "Config file")->required()->check(CLI::ExistingFile);
  grad_cmd->add_option("--tol", gc.tol, "Maximum relative error");
  grad_cmd->add_option("--eps", gc.eps, "Central-difference step");

  Ablate ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score model variants over several seeds");
  ablate_cmd->add_option("--config", ab.config, "Base config file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--variants", ab.variants, "Comma-separated shn, shn+dsa, shn+dss, dsat");
  ablate_cmd->add_option("--seeds", ab.seeds, "Comma-separated seeds");
  ablate_cmd->add_option("--test-count", ab.test_count, "Held-out samples");
  ablate_cmd->add_option("--out", ab.out, "CSV of every run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return gen.run();
    if (*train_cmd) return tr.run();
    if (*eval_cmd) return ev.run();
    if (*gate_cmd) return gs.run();
    if (*grad_cmd) return gc.run();
    return ab.run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
