#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "dsat/error.hpp"
#include "dsat/metrics.hpp"
#include "dsat/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dsat;
using dsat::testing::values;

TEST(Decode, MatchesExhaustiveScanOnRandomMaps) {
  Rng rng(17);
  std::uniform_int_distribution<int> level(0, 5);  // coarse levels force ties
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Real> v(3 * 5 * 7);
    for (auto& x : v) x = level(rng);
    const Tensor maps = Tensor::from({3, 5, 7}, v);
    const auto got = decode_heatmaps(maps);
    const auto want = oracle::argmax_scan(v, 3, 5, 7);
    EXPECT_EQ(got.points, want.points);
    EXPECT_EQ(got.degenerate, want.constant);
  }
}

TEST(Decode, UniformMapIsFlaggedAtOrigin) {
  const auto d = decode_heatmaps(Tensor::full({1, 3, 3}, 0.2));
  EXPECT_EQ(d.points[0], (Point{0, 0}));
  EXPECT_TRUE(d.degenerate[0]);
}

TEST(Decode, TiesGoToLowestRowMajorIndex) {
  Tensor m = Tensor::zeros({1, 3, 3});
  m.data()[5] = 1.0;
  m.data()[7] = 1.0;
  const auto d = decode_heatmaps(m);
  EXPECT_EQ(d.points[0], (Point{2, 1}));
  EXPECT_FALSE(d.degenerate[0]);
}

TEST(Decode, SubpixelQuarterShiftTowardLargerNeighbour) {
  Tensor m = Tensor::zeros({1, 3, 3});
  auto v = m.data();
  v[4] = 1.0;
  v[5] = 0.5;
  v[1] = 0.3;
  EXPECT_EQ(decode_heatmaps(m, true).points[0], (Point{1.25, 0.75}));
  EXPECT_EQ(decode_heatmaps(m, false).points[0], (Point{1, 1}));
}

TEST(Decode, NonFiniteAndRankErrors) {
  Tensor m = Tensor::zeros({1, 2, 2});
  m.data()[1] = std::numeric_limits<Real>::infinity();
  EXPECT_THROW(decode_heatmaps(m), NumericError);
  EXPECT_THROW(decode_heatmaps(Tensor::zeros({2, 2})), ShapeError);
}

TEST(Nme, ZeroForPerfectAndHundredForThreeFourFive) {
  LandmarkSet gt{{{1, 1}, {4, 2}}, 5.0, NormKind::InterOcular};
  EXPECT_EQ(nme(gt.points, gt), 0.0);
  LandmarkSet one{{{0, 0}}, 5.0, NormKind::InterOcular};
  EXPECT_EQ(nme({{3, 4}}, one), 100.0);
}

TEST(Nme, MatchesLoopOracle) {
  Rng rng(23);
  std::uniform_real_distribution<Real> u(-20.0, 20.0), dist(0.5, 30.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Point> gt(5), pred(5);
    for (std::size_t i = 0; i < 5; ++i) {
      gt[i] = {u(rng), u(rng)};
      pred[i] = {gt[i].x + u(rng) / 4, gt[i].y + u(rng) / 4};
    }
    const Real d = dist(rng);
    EXPECT_NEAR(nme(pred, {gt, d, NormKind::InterOcular}), oracle::nme_loop(pred, gt, d), 1e-12);
  }
}

TEST(Nme, TranslationInvariantAndInverseInScale) {
  const std::vector<Point> gt{{1, 2}, {5, 3}, {2, 7}}, pred{{1.5, 2}, {5, 4}, {1, 6}};
  const Real base = nme(pred, {gt, 4.0, NormKind::InterOcular});
  auto shift = [](std::vector<Point> p) {
    for (auto& q : p) q = {q.x + 10.25, q.y - 3.5};
    return p;
  };
  EXPECT_NEAR(nme(shift(pred), {shift(gt), 4.0, NormKind::InterOcular}), base, 1e-12);
  EXPECT_NEAR(nme(pred, {gt, 8.0, NormKind::InterOcular}), base / 2, 1e-12);
}

TEST(Nme, ContractErrors) {
  EXPECT_THROW(nme({{0, 0}}, {{{0, 0}}, 0.0, NormKind::InterOcular}), ContractError);
  EXPECT_THROW(nme({{0, 0}}, {{{0, 0}, {1, 1}}, 1.0, NormKind::InterOcular}), ContractError);
}

TEST(FailureRate, StrictThresholdAndCounting) {
  const std::vector<Real> low{1, 2, 3}, split{5, 15}, at{10, 10, 10};
  EXPECT_EQ(failure_rate(low, 10.0), 0.0);
  EXPECT_EQ(failure_rate(split, 10.0), 50.0);
  EXPECT_EQ(failure_rate(at, 10.0), 0.0);
  EXPECT_THROW(failure_rate(std::vector<Real>{}, 10.0), ContractError);
  EXPECT_THROW(failure_rate(low, 0.0), ContractError);
}

TEST(FailureRate, MatchesCountingOracleAndIsMonotone) {
  Rng rng(31);
  std::uniform_real_distribution<Real> u(0.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Real> v(1 + trial % 17);
    for (auto& x : v) x = u(rng);
    Real previous = 101.0;
    for (Real thr = 0.5; thr < 21.0; thr += 0.5) {
      const Real fr = failure_rate(v, thr);
      EXPECT_EQ(fr, oracle::failure_count(v, thr));
      EXPECT_LE(fr, previous);
      previous = fr;
    }
  }
}

TEST(NormDistance, PairsAndDiagonal) {
  LandmarkLayout layout;
  layout.outer_eye_corners = {0, 1};
  layout.pupils = {1, 2};
  const std::vector<Point> pts{{0, 0}, {6, 8}, {6, 9}};
  EXPECT_EQ(norm_distance(pts, NormKind::InterOcular, layout), 10.0);
  EXPECT_EQ(norm_distance(pts, NormKind::InterPupil, layout), 1.0);
  const std::vector<Point> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_DOUBLE_EQ(norm_distance(square, NormKind::Diagonal, layout), std::sqrt(2.0));
  EXPECT_THROW(norm_distance({{1, 1}, {1, 1}}, NormKind::InterOcular, layout), ContractError);
  layout.outer_eye_corners = {0, 9};
  EXPECT_THROW(norm_distance(pts, NormKind::InterOcular, layout), ContractError);
}

TEST(NormDistance, SyntheticLayoutByHand) {
  const auto s = generate_sample(4, Difficulty::Neutral, 64);
  const auto& layout = synthetic_layout();
  const Point a = s.landmarks[0], b = s.landmarks[3];
  EXPECT_DOUBLE_EQ(norm_distance(s.landmarks, NormKind::InterOcular, layout),
                   std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)));
  const Point p = s.landmarks[1], q = s.landmarks[2];
  EXPECT_DOUBLE_EQ(norm_distance(s.landmarks, NormKind::InterPupil, layout),
                   std::sqrt((p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y)));
}

TEST(LandmarkErrors, PerPointDistance) {
  EXPECT_EQ(landmark_errors({{3, 4}, {1, 1}}, {{0, 0}, {1, 1}}), (std::vector<Real>{5, 0}));
}

namespace {

EvalRecord record(std::string label, std::vector<std::pair<std::size_t, Real>> ratios, std::string id = "s") {
  EvalRecord r;
  r.sample_id = std::move(id);
  r.label = std::move(label);
  r.activation_ratios = std::move(ratios);
  return r;
}

}  // namespace

TEST(GateReport, SingleClusterMean) {
  const auto rows = gate_report({record("neutral", {{0, 0.25}}), record("neutral", {{0, 0.75}})}, {"neutral"});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mean, 0.5);
  EXPECT_EQ(rows[0].stddev, 0.25);
  EXPECT_EQ(rows[0].count, 2u);
}

TEST(GateReport, IdenticalClustersGiveIdenticalMeans) {
  std::vector<EvalRecord> recs;
  for (Real v : {0.1, 0.4, 0.9}) {
    recs.push_back(record("a", {{0, v}, {1, 1 - v}}));
    recs.push_back(record("b", {{0, v}, {1, 1 - v}}));
  }
  const auto rows = gate_report(recs, {"a", "b"});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].mean, rows[2].mean);
  EXPECT_EQ(rows[1].mean, rows[3].mean);
}

TEST(GateReport, MatchesRecomputation) {
  Rng rng(41);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const std::vector<std::string> labels{"neutral", "occluded", "rotated", "blurred"};
  std::vector<EvalRecord> recs;
  std::map<std::pair<std::string, std::size_t>, std::vector<Real>> by_cell;
  for (int i = 0; i < 300; ++i) {
    const std::string& label = labels[static_cast<std::size_t>(i * 7 % 3)];  // blurred stays empty
    const Real a = u(rng), b = u(rng);
    recs.push_back(record(label, {{0, a}, {1, b}}));
    by_cell[{label, 0}].push_back(a);
    by_cell[{label, 1}].push_back(b);
  }
  const auto rows = gate_report(recs, labels);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& row : rows) {
    const auto& v = by_cell.at({row.cluster, row.dsa_index});
    Real mean = 0.0;
    for (Real x : v) mean += x;
    mean /= static_cast<Real>(v.size());
    Real var = 0.0;
    for (Real x : v) var += (x - mean) * (x - mean);
    var /= static_cast<Real>(v.size());
    EXPECT_NEAR(row.mean, mean, 1e-12);
    EXPECT_NEAR(row.stddev, std::sqrt(var), 1e-9);
    EXPECT_EQ(row.count, v.size());
  }
}

TEST(GateReport, ErrorsOnUnknownLabelOrMismatchedGates) {
  EXPECT_THROW(gate_report({record("x", {{0, 1.0}})}, {"neutral"}), ContractError);
  EXPECT_THROW(gate_report({record("a", {{0, 1.0}}), record("a", {{1, 1.0}})}, {"a"}), ContractError);
  EXPECT_THROW(gate_report({record("a", {{0, 1.0}}), record("a", {})}, {"a"}), ContractError);
}

TEST(GateReport, CsvLayout) {
  std::ostringstream os;
  write_gate_report_csv(os, {{"neutral", 1, 0.5, 0.125, 4}});
  EXPECT_EQ(os.str(), "cluster,dsa_index,mean,std,count\nneutral,1,0.5,0.125,4\n");
}
