#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "etamix/control.hpp"
#include "etamix/env_config.hpp"
#include "etamix/oracle.hpp"

namespace etamix {

enum class Task { prediction, control };

std::string to_string(Task task);
Task parse_task(std::string_view text);

/// sqrt(mean over non-terminal s of (phi(s)^T theta - v(s))^2).
double rmse(const Eigen::VectorXd& theta, const FeatureMatrix& features,
            const Eigen::VectorXd& true_values);

struct SweepGrid {
  std::vector<double> etas{0.0, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0};
  std::vector<double> alphas{0.01, 0.1, 0.2, 0.3, 0.5};
  std::vector<std::uint64_t> seeds{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  std::size_t episodes = 400;
  EnvConfig env;
  double gamma = 1.0;
  /// Separate SF / reward rates; when unset they follow alpha.
  std::optional<double> alpha_sf;
  std::optional<double> alpha_r;
  /// Template for control cells; eta, alpha and the episode limit come from the grid.
  ControlConfig control;
  /// Worker threads; 0 uses the hardware concurrency.
  unsigned threads = 1;

  void validate() const;
};

struct CellConfig {
  Task task = Task::prediction;
  std::string env;
  double eta = 0.0;
  double gamma = 1.0;
  double alpha = 0.0;
  double alpha_sf = 0.0;
  double alpha_r = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const CellConfig&, const CellConfig&) = default;
};

struct RunRecord {
  CellConfig config;
  /// RMSE per episode for prediction, undiscounted return per episode for control.
  std::vector<double> metric;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};

/// Seed of a cell's private generator; depends only on the cell's own coordinates.
std::uint64_t cell_seed(std::uint64_t seed, double eta, double alpha, Task task);

/// Runs one cell. Numeric failures are caught and reported in the record.
RunRecord run_cell(const SweepGrid& grid, Task task, double eta, double alpha, std::uint64_t seed);

/// Every (eta, alpha, seed) cell, ordered by (eta, alpha, seed) regardless of threading.
std::vector<RunRecord> run_sweep(const SweepGrid& grid, Task task);

enum class Reduce { mean_over_episodes, final };

struct AggregateRow {
  Task task = Task::prediction;
  std::string env;
  double eta = 0.0;
  double alpha = 0.0;
  double metric_mean = 0.0;
  double ci95_half = 0.0;
  std::size_t n_seeds = 0;
  std::size_t n_failed = 0;
  bool single_seed = false;

  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

/// Groups records by (task, env, eta, alpha), reduces each seed's series and
/// reports mean +- 1.96 sd / sqrt(n), sd taken with divisor n. Failed records
/// are only counted.
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records, Reduce reduce);

/// For each (task, env, eta) the row with the lowest (or highest) mean over alpha.
std::vector<AggregateRow> best_per_eta(const std::vector<AggregateRow>& rows, bool minimize = true);

struct RawRow {
  CellConfig config;
  std::size_t episode = 0;
  double metric = 0.0;

  friend bool operator==(const RawRow&, const RawRow&) = default;
};

/// One row per (cell, episode). Failed cells pad missing episodes with nan.
std::vector<RawRow> flatten(const std::vector<RunRecord>& records, std::size_t episodes);

void write_raw_csv(const std::vector<RawRow>& rows, std::ostream& out);
void write_raw_csv(const std::vector<RawRow>& rows, const std::filesystem::path& path);
std::vector<RawRow> parse_raw_csv(std::istream& in);

void write_aggregate_csv(const std::vector<AggregateRow>& rows, std::ostream& out);
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path);
std::vector<AggregateRow> parse_aggregate_csv(std::istream& in);

struct PlotSpec {
  std::string title = "metric vs learning rate";
  std::string x_label = "alpha";
  std::string y_label = "metric";
  int width = 640;
  int height = 420;
};

/// Line chart with one polyline per eta (x = alpha, categorical) and 95% error bars.
void render_svg(const std::vector<AggregateRow>& rows, std::ostream& out, const PlotSpec& spec = {});
void render_svg(const std::vector<AggregateRow>& rows, const std::filesystem::path& path,
                const PlotSpec& spec = {});

}  // namespace etamix
