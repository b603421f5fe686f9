#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>

#include "etamix/errors.hpp"
#include "etamix/harness.hpp"

using namespace etamix;

namespace {

RunRecord record(double eta, double alpha, std::uint64_t seed, std::vector<double> metric) {
  return {{Task::prediction, "random-walk", eta, 1.0, alpha, alpha, alpha, seed},
          std::move(metric), 0.0, false, {}};
}

SweepGrid small_grid() {
  SweepGrid grid;
  grid.etas = {0.0, 0.5};
  grid.alphas = {0.1, 0.3};
  grid.seeds = {1, 2, 3};
  grid.episodes = 20;
  return grid;
}

std::string raw_csv(const std::vector<RunRecord>& records, std::size_t episodes) {
  std::ostringstream out;
  write_raw_csv(flatten(records, episodes), out);
  return out.str();
}

std::size_t count_polylines(const boost::property_tree::ptree& node) {
  std::size_t n = 0;
  for (const auto& [name, child] : node) {
    if (name == "polyline") ++n;
    n += count_polylines(child);
  }
  return n;
}

}  // namespace

TEST(Rmse, TabularFixedPointIsExact) {
  const MrpSpec walk = build_random_walk(19);
  const FeatureMatrix f = FeatureMatrix::tabular(walk.terminal());
  const LinearProblem p = make_problem(f, on_policy_distribution(walk), matrix_form(walk));
  EXPECT_LT(rmse(td_fixed_point(p, 1.0), f, true_values(walk, 1.0)), 1e-9);
}

TEST(Rmse, ZeroWeightsOnWalk) {
  const MrpSpec walk = build_random_walk(19);
  const FeatureMatrix f = FeatureMatrix::tabular(walk.terminal());
  double sum = 0.0;
  for (int i = 1; i <= 19; ++i) sum += (i / 20.0) * (i / 20.0);
  const double value = rmse(Eigen::VectorXd::Zero(19), f, true_values(walk, 1.0));
  EXPECT_NEAR(value, std::sqrt(sum / 19.0), 1e-15);
  EXPECT_NEAR(value, 0.57009, 1e-5);
}

TEST(Rmse, SingleStatePerturbationIdentity) {
  const MrpSpec walk = build_random_walk(19);
  const FeatureMatrix f = FeatureMatrix::tabular(walk.terminal());
  const Eigen::VectorXd truth = true_values(walk, 1.0);
  Rng rng(1);
  std::normal_distribution<double> normal(0.0, 0.2);
  Eigen::VectorXd theta(19);
  for (int i = 0; i < 19; ++i) theta(i) = truth(i + 1) + normal(rng);
  const double before = rmse(theta, f, truth);
  const double delta = 0.37;
  const double e = theta(6) - truth(7);
  theta(6) += delta;
  const double after = rmse(theta, f, truth);
  EXPECT_NEAR(after * after - before * before, delta * (2.0 * e + delta) / 19.0, 1e-12);
}

TEST(Rmse, NonNegativeAndZeroOnlyAtTruth) {
  const MrpSpec walk = build_random_walk(7);
  const FeatureMatrix f = FeatureMatrix::tabular(walk.terminal());
  const Eigen::VectorXd truth = true_values(walk, 1.0);
  Eigen::VectorXd theta = truth.segment(1, 7);
  EXPECT_EQ(rmse(theta, f, truth), 0.0);
  theta(3) += 1e-9;
  EXPECT_GT(rmse(theta, f, truth), 0.0);
  EXPECT_THROW(rmse(Eigen::VectorXd::Zero(3), f, truth), DimensionError);
}

TEST(SweepGrid, RejectsInvalidGrids) {
  SweepGrid grid = small_grid();
  grid.etas = {1.2};
  EXPECT_THROW(grid.validate(), ContractError);
  grid = small_grid();
  grid.seeds.clear();
  EXPECT_THROW(grid.validate(), ContractError);
}

TEST(RunSweep, SingleCellGivesSingleRecord) {
  SweepGrid grid;
  grid.etas = {0.5};
  grid.alphas = {0.1};
  grid.seeds = {7};
  grid.episodes = 5;
  const auto records = run_sweep(grid, Task::prediction);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].metric.size(), 5u);
  EXPECT_FALSE(records[0].failed);
  EXPECT_GE(records[0].wall_seconds, 0.0);
}

TEST(RunSweep, DeterministicAcrossRunsAndThreads) {
  SweepGrid grid = small_grid();
  const std::string first = raw_csv(run_sweep(grid, Task::prediction), grid.episodes);
  EXPECT_EQ(first, raw_csv(run_sweep(grid, Task::prediction), grid.episodes));
  grid.threads = 3;
  EXPECT_EQ(first, raw_csv(run_sweep(grid, Task::prediction), grid.episodes));
}

TEST(RunSweep, AddingGridPointsKeepsExistingCells) {
  SweepGrid grid = small_grid();
  const auto base = run_sweep(grid, Task::prediction);
  grid.etas.push_back(0.9);
  grid.alphas.insert(grid.alphas.begin(), 0.05);
  const auto extended = run_sweep(grid, Task::prediction);
  for (const RunRecord& r : base) {
    const auto it = std::find_if(extended.begin(), extended.end(),
                                 [&](const RunRecord& x) { return x.config == r.config; });
    ASSERT_NE(it, extended.end());
    EXPECT_EQ(it->metric, r.metric);
  }
}

TEST(RunSweep, CellSeedDependsOnEveryCoordinate) {
  const std::uint64_t base = cell_seed(2, 0.5, 0.1, Task::prediction);
  EXPECT_EQ(base, cell_seed(2, 0.5, 0.1, Task::prediction));
  EXPECT_NE(base, cell_seed(4, 0.5, 0.1, Task::prediction));
  EXPECT_NE(base, cell_seed(2, 0.7, 0.1, Task::prediction));
  EXPECT_NE(base, cell_seed(2, 0.5, 0.2, Task::prediction));
  EXPECT_NE(base, cell_seed(2, 0.5, 0.1, Task::control));
}

TEST(RunSweep, DivergentCellsAreRecordedNotFatal) {
  SweepGrid grid;
  grid.etas = {1.0};
  grid.alphas = {0.1, 1e300};
  grid.seeds = {1, 2};
  grid.episodes = 10;
  const auto records = run_sweep(grid, Task::prediction);
  ASSERT_EQ(records.size(), 4u);
  std::size_t failed = 0;
  for (const RunRecord& r : records) {
    if (r.failed) {
      ++failed;
      EXPECT_EQ(r.config.alpha, 1e300);
      EXPECT_FALSE(r.error.empty());
    }
  }
  EXPECT_EQ(failed, 2u);
  const auto rows = aggregate(records, Reduce::mean_over_episodes);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].alpha, 0.1);
  EXPECT_TRUE(std::isfinite(rows[0].metric_mean));

  // The failed cells still show up in the raw output, padded with nan.
  const auto raw = flatten(records, grid.episodes);
  EXPECT_EQ(raw.size(), 40u);
  EXPECT_EQ(std::count_if(raw.begin(), raw.end(), [](const RawRow& r) { return std::isnan(r.metric); }),
            20);
}

TEST(RunSweep, ControlCellsRecordReturns) {
  SweepGrid grid;
  grid.env.kind = "gridworld";
  grid.env.width = 3;
  grid.env.height = 3;
  grid.env.goal = {2, 2};
  grid.env.step_reward = -0.01;
  grid.etas = {0.5};
  grid.alphas = {0.1};
  grid.seeds = {1};
  grid.episodes = 15;
  const auto records = run_sweep(grid, Task::control);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].metric.size(), 15u);
  EXPECT_EQ(records[0].config.gamma, grid.control.gamma);
  grid.env.kind = "random-walk";
  EXPECT_THROW(run_sweep(grid, Task::control), InvalidSpecError);
}

TEST(Aggregate, IdenticalSeedsHaveZeroHalfWidth) {
  const auto rows = aggregate({record(0.5, 0.1, 1, {0.2, 0.4}), record(0.5, 0.1, 2, {0.2, 0.4})},
                              Reduce::mean_over_episodes);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].metric_mean, 0.3);
  EXPECT_EQ(rows[0].ci95_half, 0.0);
  EXPECT_EQ(rows[0].n_seeds, 2u);
}

TEST(Aggregate, TwoSeedFormula) {
  const auto rows =
      aggregate({record(0.5, 0.1, 1, {0.0}), record(0.5, 0.1, 2, {1.0})}, Reduce::final);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].metric_mean, 0.5);
  EXPECT_NEAR(rows[0].ci95_half, 1.96 * 0.5 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(rows[0].ci95_half, 0.6930, 1e-4);
}

TEST(Aggregate, SingleSeedIsFlagged) {
  const auto rows = aggregate({record(0.0, 0.1, 1, {0.3})}, Reduce::final);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].single_seed);
  EXPECT_EQ(rows[0].ci95_half, 0.0);
}

TEST(Aggregate, FinalVersusMeanReduction) {
  const std::vector<RunRecord> records{record(0.3, 0.2, 1, {1.0, 0.0, 0.5})};
  EXPECT_DOUBLE_EQ(aggregate(records, Reduce::final)[0].metric_mean, 0.5);
  EXPECT_DOUBLE_EQ(aggregate(records, Reduce::mean_over_episodes)[0].metric_mean, 0.5);
  const std::vector<RunRecord> other{record(0.3, 0.2, 1, {1.0, 0.0, 0.2})};
  EXPECT_DOUBLE_EQ(aggregate(other, Reduce::final)[0].metric_mean, 0.2);
  EXPECT_DOUBLE_EQ(aggregate(other, Reduce::mean_over_episodes)[0].metric_mean, 0.4);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RunRecord> records;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double eta : {0.0, 0.5}) records.push_back(record(eta, 0.1, seed, {unit(rng), unit(rng)}));
  }
  const auto reference = aggregate(records, Reduce::mean_over_episodes);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(records.begin(), records.end(), rng);
    EXPECT_EQ(aggregate(records, Reduce::mean_over_episodes), reference);
  }
}

TEST(Aggregate, FailedRecordsAreCountedButExcluded) {
  std::vector<RunRecord> records{record(0.5, 0.1, 1, {0.2}), record(0.5, 0.1, 2, {0.4})};
  RunRecord failed = record(0.5, 0.1, 3, {});
  failed.failed = true;
  records.push_back(failed);
  const auto rows = aggregate(records, Reduce::final);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].n_seeds, 2u);
  EXPECT_EQ(rows[0].n_failed, 1u);
  EXPECT_DOUBLE_EQ(rows[0].metric_mean, 0.3);
}

TEST(Aggregate, BestPerEtaMinimisesOverAlpha) {
  const std::vector<RunRecord> records{record(0.0, 0.1, 1, {0.5}), record(0.0, 0.3, 1, {0.2}),
                                       record(0.7, 0.1, 1, {0.1}), record(0.7, 0.3, 1, {0.4})};
  const auto best = best_per_eta(aggregate(records, Reduce::final));
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0].alpha, 0.3);
  EXPECT_EQ(best[1].alpha, 0.1);
  const auto worst = best_per_eta(aggregate(records, Reduce::final), false);
  EXPECT_EQ(worst[0].alpha, 0.1);
}

TEST(Csv, EmptyRowsGiveHeaderOnly) {
  std::ostringstream raw;
  write_raw_csv({}, raw);
  EXPECT_EQ(raw.str(), "task,env,eta,gamma,alpha,alpha_sf,alpha_r,seed,episode,metric\n");
  std::ostringstream agg;
  write_aggregate_csv({}, agg);
  EXPECT_EQ(agg.str(), "task,env,eta,alpha,metric_mean,ci95_half,n_seeds\n");
}

TEST(Csv, RawRoundTripIsExact) {
  Rng rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RunRecord> records;
  for (std::uint64_t seed : {1, 2, 3}) {
    records.push_back(record(unit(rng), unit(rng), seed, {unit(rng), unit(rng) * 1e-300, 1.0 / 3.0}));
  }
  records[1].config.task = Task::control;
  const auto rows = flatten(records, 3);
  std::ostringstream out;
  write_raw_csv(rows, out);
  EXPECT_EQ(out.str().find('\r'), std::string::npos);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_raw_csv(in), rows);
}

TEST(Csv, AggregateRoundTripIsExact) {
  const std::vector<AggregateRow> rows{
      {Task::prediction, "random-walk", 0.3, 0.1, 0.123456789012345678, 0.01, 10, 0, false},
      {Task::control, "gridworld", 1.0, 0.5, -0.25, 0.0, 1, 0, true}};
  std::ostringstream out;
  write_aggregate_csv(rows, out);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_aggregate_csv(in), rows);
}

TEST(Csv, MalformedInputIsIoError) {
  std::istringstream wrong_header("a,b\n");
  EXPECT_THROW(parse_raw_csv(wrong_header), IoError);
  std::istringstream short_row(
      "task,env,eta,gamma,alpha,alpha_sf,alpha_r,seed,episode,metric\nprediction,x,1\n");
  EXPECT_THROW(parse_raw_csv(short_row), IoError);
  std::istringstream bad_number(
      "task,env,eta,gamma,alpha,alpha_sf,alpha_r,seed,episode,metric\n"
      "prediction,x,zero,1,1,1,1,1,1,1\n");
  EXPECT_THROW(parse_raw_csv(bad_number), IoError);
}

TEST(Csv, UnwritablePathReportsPath) {
  const std::filesystem::path path = "/nonexistent-dir/out.csv";
  try {
    write_raw_csv(std::vector<RawRow>{}, path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/out.csv"), std::string::npos);
  }
}

TEST(Csv, FileWriteMatchesStream) {
  const auto rows = flatten({record(0.5, 0.1, 1, {0.25, 0.125})}, 2);
  const auto path = std::filesystem::temp_directory_path() / "etamix_test_raw.csv";
  write_raw_csv(rows, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream content;
  content << in.rdbuf();
  std::ostringstream expected;
  write_raw_csv(rows, expected);
  EXPECT_EQ(content.str(), expected.str());
  std::filesystem::remove(path);
}

TEST(Svg, WellFormedWithOnePolylinePerEta) {
  std::vector<RunRecord> records;
  for (double eta : {0.0, 0.5, 1.0}) {
    for (double alpha : {0.1, 0.2, 0.3}) {
      for (std::uint64_t seed : {1, 2}) {
        records.push_back(record(eta, alpha, seed, {eta + alpha + 0.01 * seed}));
      }
    }
  }
  PlotSpec spec;
  spec.title = "rmse <by> eta & alpha";
  std::ostringstream out;
  render_svg(aggregate(records, Reduce::final), out, spec);
  std::istringstream in(out.str());
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
  EXPECT_EQ(count_polylines(tree), 3u);
}

TEST(Svg, EmptyInputStillValid) {
  std::ostringstream out;
  render_svg({}, out);
  std::istringstream in(out.str());
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
  EXPECT_EQ(count_polylines(tree), 0u);
}
