#include "dsat/evaluate.hpp"

#include <algorithm>
#include <ostream>

#include "dsat/error.hpp"
#include "dsat/train.hpp"

namespace dsat {

EvalRecord score_sample(const Tensor& landmark_maps, const SyntheticSample& sample, const TrainConfig& cfg,
                        bool subpixel) {
  const auto decoded = decode_heatmaps(landmark_maps, subpixel);
  LandmarkSet gt;
  gt.points = heatmap_landmarks(sample, cfg);
  gt.norm_kind = cfg.norm_kind;
  gt.norm_distance = norm_distance(gt.points, cfg.norm_kind, synthetic_layout());

  EvalRecord r;
  r.sample_id = sample.id;
  r.label = to_string(sample.label);
  r.norm_distance = gt.norm_distance;
  r.per_landmark_errors = landmark_errors(decoded.points, gt.points);
  r.nme_percent = nme(decoded.points, gt);
  return r;
}

std::vector<LabelAggregate> aggregate(const std::vector<EvalRecord>& records, Real fr_threshold) {
  std::vector<LabelAggregate> out;
  auto summarize = [&](const std::string& label, const std::vector<Real>& nmes) {
    if (nmes.empty()) return;
    LabelAggregate a;
    a.label = label;
    a.count = nmes.size();
    for (Real v : nmes) a.nme_mean += v;
    a.nme_mean /= static_cast<Real>(nmes.size());
    a.failure_rate = failure_rate(nmes, fr_threshold);
    out.push_back(a);
  };
  std::vector<Real> all;
  for (const auto& r : records) all.push_back(r.nme_percent);
  summarize("all", all);
  for (const auto& label : difficulty_labels()) {
    std::vector<Real> sub;
    for (const auto& r : records)
      if (r.label == label) sub.push_back(r.nme_percent);
    summarize(label, sub);
  }
  return out;
}

EvalReport evaluate(DsatModel& model, const std::vector<SyntheticSample>& data, bool subpixel) {
  const TrainConfig& cfg = model.config();
  NoGradGuard no_grad;
  Rng unused(0);
  ForwardOptions fwd;
  EvalReport report;
  report.config_hash = config_hash(cfg);
  report.norm_kind = cfg.norm_kind;
  report.fr_threshold = cfg.fr_threshold;
  report.channels = cfg.channels;

  const std::size_t L = cfg.landmarks, h = cfg.heatmap_size;
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(data.size(), start + cfg.batch_size);
    std::vector<const Tensor*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&data[i].image);
    const ForwardResult out = model.forward(batch_images(images), fwd, unused);
    const auto maps = out.stacks.back().landmark.data();
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t n = i - start;
      const auto first = maps.begin() + static_cast<std::ptrdiff_t>(n * L * h * h);
      const Tensor own = Tensor::from({L, h, h}, std::vector<Real>(first, first + static_cast<std::ptrdiff_t>(L * h * h)));
      EvalRecord r = score_sample(own, data[i], cfg, subpixel);
      for (const auto& [index, decisions] : out.gates) r.activation_ratios.emplace_back(index, activation_ratio(decisions[n]));
      report.records.push_back(std::move(r));
    }
  }
  report.aggregates = aggregate(report.records, cfg.fr_threshold);
  return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["config_hash"] = report.config_hash;
  j["norm_kind"] = to_string(report.norm_kind);
  j["fr_threshold"] = report.fr_threshold;
  j["channels"] = report.channels;
  auto& aggs = j["aggregates"] = nlohmann::ordered_json::array();
  for (const auto& a : report.aggregates)
    aggs.push_back({{"label", a.label}, {"count", a.count}, {"nme_mean", a.nme_mean}, {"failure_rate", a.failure_rate}});
  auto& recs = j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : report.records) {
    nlohmann::ordered_json e;
    e["sample_id"] = r.sample_id;
    e["label"] = r.label;
    e["nme_percent"] = r.nme_percent;
    e["norm_distance"] = r.norm_distance;
    e["per_landmark_errors"] = r.per_landmark_errors;
    auto& ratios = e["activation_ratios"] = nlohmann::ordered_json::array();
    for (const auto& [index, ratio] : r.activation_ratios) ratios.push_back({{"dsa_index", index}, {"ratio", ratio}});
    recs.push_back(std::move(e));
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport report;
    report.config_hash = j.at("config_hash").get<std::string>();
    report.norm_kind = parse_norm_kind(j.at("norm_kind").get<std::string>());
    report.fr_threshold = j.at("fr_threshold").get<Real>();
    report.channels = j.at("channels").get<std::size_t>();
    for (const auto& a : j.at("aggregates"))
      report.aggregates.push_back({a.at("label").get<std::string>(), a.at("count").get<std::size_t>(),
                                   a.at("nme_mean").get<Real>(), a.at("failure_rate").get<Real>()});
    for (const auto& e : j.at("records")) {
      EvalRecord r;
      r.sample_id = e.at("sample_id").get<std::string>();
      r.label = e.at("label").get<std::string>();
      r.nme_percent = e.at("nme_percent").get<Real>();
      r.norm_distance = e.at("norm_distance").get<Real>();
      r.per_landmark_errors = e.at("per_landmark_errors").get<std::vector<Real>>();
      for (const auto& g : e.at("activation_ratios"))
        r.activation_ratios.emplace_back(g.at("dsa_index").get<std::size_t>(), g.at("ratio").get<Real>());
      report.records.push_back(std::move(r));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed metrics report: " + std::string(e.what()));
  }
}

std::string report_text(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

std::vector<GateStatRow> gate_rows(const EvalReport& report) {
  std::vector<GateStatRow> rows;
  for (const auto& r : report.records)
    for (const auto& [index, ratio] : r.activation_ratios) rows.push_back({r.sample_id, index, ratio, report.channels});
  return rows;
}

AblationVariant parse_variant(const std::string& name) {
  if (name == "shn") return {name, false, false};
  if (name == "shn+dsa") return {name, true, false};
  if (name == "shn+dss") return {name, false, true};
  if (name == "dsat") return {name, true, true};
  throw ConfigError("unknown ablation variant '" + name + "' (expected shn, shn+dsa, shn+dss or dsat)");
}

std::vector<AblationRun> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<SyntheticSample>& train_set,
                                      const std::vector<SyntheticSample>& test_set, std::ostream* log) {
  if (test_set.empty()) throw ContractError("run_ablation: empty held-out set");
  std::vector<AblationRun> runs;
  for (std::uint64_t seed : seeds)
    for (const auto& v : variants) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.enable_dsa = v.enable_dsa;
      cfg.enable_cca = v.enable_cca;
      auto model = build_model(cfg);
      const TrainResult tr = train(*model, train_set);
      const EvalReport report = evaluate(*model, test_set);
      AblationRun run{v.name, seed, report.aggregates.front().nme_mean, tr.losses.empty() ? 0.0 : tr.losses.back()};
      if (log) *log << "ablate " << v.name << " seed " << seed << " nme " << run.nme_mean << " final_loss " << run.final_loss << std::endl;
      runs.push_back(run);
    }
  return runs;
}

}  // namespace dsat
