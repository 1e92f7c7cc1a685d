#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dsat/error.hpp"
#include "dsat/evaluate.hpp"
#include "dsat/train.hpp"
#include "test_util.hpp"

using namespace dsat;
using dsat::testing::tiny_config;

TEST(ScoreSample, RenderedGroundTruthScoresZero) {
  const TrainConfig cfg;
  for (auto d : all_difficulties()) {
    auto s = generate_sample(21, d, cfg.image_size);
    // Snap landmarks onto heatmap pixel centres so the argmax is exact.
    for (auto& p : s.landmarks)
      p = {std::round((p.x + 0.5) / 2 - 0.5) * 2 + 0.5, std::round((p.y + 0.5) / 2 - 0.5) * 2 + 0.5};
    const Tensor maps = render_landmark_heatmaps(heatmap_landmarks(s, cfg), cfg.sigma_gt, 32, 32);
    const EvalRecord r = score_sample(maps, s, cfg);
    EXPECT_EQ(r.nme_percent, 0.0);
    EXPECT_EQ(r.label, to_string(d));
    for (Real e : r.per_landmark_errors) EXPECT_EQ(e, 0.0);
  }
}

TEST(ScoreSample, RecordNmeIsMeanErrorOverDistance) {
  const TrainConfig cfg;
  const auto s = generate_sample(5, Difficulty::Rotated, cfg.image_size);
  const Tensor maps = render_landmark_heatmaps({{3, 3}, {9, 1}, {4, 20}, {30, 30}, {0, 0}, {5, 5}, {6, 6}, {7, 7},
                                                {8, 8}, {9, 9}, {10, 10}, {11, 11}},
                                               1.0, 32, 32);
  const EvalRecord r = score_sample(maps, s, cfg);
  Real mean = 0.0;
  for (Real e : r.per_landmark_errors) mean += e;
  mean /= 12.0;
  EXPECT_NEAR(r.nme_percent, mean / r.norm_distance * 100.0, 1e-12);
}

TEST(Aggregate, MeansPerLabelAndOverall) {
  std::vector<EvalRecord> recs(5);
  const Real nmes[5] = {1, 2, 3, 20, 5};
  const char* labels[5] = {"neutral", "neutral", "blurred", "blurred", "occluded"};
  for (int i = 0; i < 5; ++i) {
    recs[static_cast<std::size_t>(i)].nme_percent = nmes[i];
    recs[static_cast<std::size_t>(i)].label = labels[i];
  }
  const auto a = aggregate(recs, 10.0);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[0].label, "all");
  EXPECT_DOUBLE_EQ(a[0].nme_mean, 31.0 / 5.0);
  EXPECT_DOUBLE_EQ(a[0].failure_rate, 20.0);
  EXPECT_EQ(a[1].label, "neutral");
  EXPECT_DOUBLE_EQ(a[1].nme_mean, 1.5);
  EXPECT_EQ(a[2].label, "occluded");
  EXPECT_EQ(a[3].label, "blurred");
  EXPECT_DOUBLE_EQ(a[3].failure_rate, 50.0);
  EXPECT_TRUE(aggregate({}, 10.0).empty());
}

TEST(Evaluate, DeterministicJsonWithGateRatios) {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 3;
  DsatModel model(cfg);
  const auto data = generate_dataset(5, {1, 1, 1, 1}, 8, 16);
  train(model, data);
  const auto first = evaluate(model, data);
  const auto second = evaluate(model, data);
  EXPECT_EQ(report_text(first), report_text(second));
  ASSERT_EQ(first.records.size(), 5u);
  for (const auto& r : first.records) {
    ASSERT_EQ(r.activation_ratios.size(), 1u);
    EXPECT_EQ(r.activation_ratios[0].first, 0u);
    const Real ratio = r.activation_ratios[0].second;
    EXPECT_TRUE(ratio == 0.0 || ratio == 0.25 || ratio == 0.5 || ratio == 0.75 || ratio == 1.0);
  }
  Real mean = 0.0;
  for (const auto& r : first.records) mean += r.nme_percent;
  EXPECT_NEAR(first.aggregates[0].nme_mean, mean / 5.0, 1e-12);
  EXPECT_EQ(first.config_hash, config_hash(cfg));
  EXPECT_EQ(first.channels, cfg.channels);
}

TEST(Evaluate, JsonRoundTrip) {
  TrainConfig cfg = tiny_config();
  DsatModel model(cfg);
  const auto report = evaluate(model, generate_dataset(3, {1, 1, 1, 1}, 2, 16));
  const std::string text = report_text(report);
  const auto back = report_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(report_text(back), text);
  EXPECT_THROW(report_from_json(nlohmann::json::parse("{\"records\": []}")), Error);
}

TEST(Evaluate, GateRowsOnePerSampleAndGate) {
  TrainConfig cfg = tiny_config();
  DsatModel model(cfg);
  const auto report = evaluate(model, generate_dataset(3, {1, 0, 0, 0}, 2, 16));
  const auto rows = gate_rows(report);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].channels, 4u);
  EXPECT_EQ(rows[2].sample_id, report.records[2].sample_id);
}

TEST(Ablation, VariantNames) {
  EXPECT_FALSE(parse_variant("shn").enable_dsa);
  EXPECT_TRUE(parse_variant("shn+dsa").enable_dsa);
  EXPECT_FALSE(parse_variant("shn+dsa").enable_cca);
  EXPECT_TRUE(parse_variant("shn+dss").enable_cca);
  EXPECT_TRUE(parse_variant("dsat").enable_dsa && parse_variant("dsat").enable_cca);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Ablation, RunsEveryVariantPerSeed) {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 2;
  const auto train_set = generate_dataset(4, {1, 1, 1, 1}, 1, 16);
  const auto test_set = generate_dataset(2, {1, 1, 1, 1}, 2, 16);
  std::ostringstream log;
  const auto runs = run_ablation(cfg, {parse_variant("shn"), parse_variant("dsat")}, {1, 2}, train_set, test_set, &log);
  ASSERT_EQ(runs.size(), 4u);
  EXPECT_EQ(runs[1].variant, "dsat");
  EXPECT_EQ(runs[2].seed, 2u);
  EXPECT_NE(log.str().find("ablate shn seed 1"), std::string::npos);
  EXPECT_THROW(run_ablation(cfg, {parse_variant("shn")}, {1}, train_set, {}), ContractError);
}
