#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsat/metrics.hpp"
#include "dsat/model.hpp"
#include "dsat/synthetic.hpp"

namespace dsat {

struct LabelAggregate {
  std::string label;  // "all" or a difficulty label
  std::size_t count = 0;
  Real nme_mean = 0.0;
  Real failure_rate = 0.0;
};

struct EvalReport {
  std::string config_hash;
  NormKind norm_kind = NormKind::InterOcular;
  Real fr_threshold = 10.0;
  std::size_t channels = 0;  // width of every gated feature map
  std::vector<EvalRecord> records;
  std::vector<LabelAggregate> aggregates;  // "all" first, then labels in fixed order
};

/// Scores one sample from its L×h×w landmark heatmaps. Ground truth is
/// mapped into heatmap coordinates before comparison.
EvalRecord score_sample(const Tensor& landmark_maps, const SyntheticSample& sample, const TrainConfig& cfg,
                        bool subpixel = false);

/// Aggregate NME and FR overall and per label.
std::vector<LabelAggregate> aggregate(const std::vector<EvalRecord>& records, Real fr_threshold);

/// Eval-mode forward over `data` (no gate noise, binary gates, running BN
/// statistics) in batches of cfg.batch_size.
EvalReport evaluate(DsatModel& model, const std::vector<SyntheticSample>& data, bool subpixel = false);

nlohmann::ordered_json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
/// Pretty-printed JSON followed by a newline.
std::string report_text(const EvalReport& report);

/// One row per sample and gate.
std::vector<GateStatRow> gate_rows(const EvalReport& report);

struct AblationVariant {
  std::string name;
  bool enable_dsa = false;
  bool enable_cca = false;
};

/// Accepts shn, shn+dsa, shn+dss, dsat.
AblationVariant parse_variant(const std::string& name);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  Real nme_mean = 0.0;
  Real final_loss = 0.0;
};

/// Trains every variant once per seed on `train_set` (the seed replaces
/// cfg.seed) and reports held-out mean NME.
std::vector<AblationRun> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<SyntheticSample>& train_set,
                                      const std::vector<SyntheticSample>& test_set, std::ostream* log = nullptr);

}  // namespace dsat
