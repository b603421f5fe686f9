#include "etamix/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include <fmt/format.h>

#include "etamix/errors.hpp"
#include "etamix/learners.hpp"

namespace etamix {

namespace {

constexpr std::string_view kRawHeader = "task,env,eta,gamma,alpha,alpha_sf,alpha_r,seed,episode,metric";
constexpr std::string_view kAggregateHeader = "task,env,eta,alpha,metric_mean,ci95_half,n_seeds";

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fmt_double(double x) { return fmt::format("{:.17g}", x); }

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t end = line.find(sep, begin);
    out.push_back(line.substr(begin, end == std::string_view::npos ? end : end - begin));
    if (end == std::string_view::npos) return out;
    begin = end + 1;
  }
}

double parse_double(std::string_view text, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError(fmt::format("csv line {}: bad number '{}'", line, text));
  }
  return value;
}

template <typename Int>
Int parse_int(std::string_view text, std::size_t line) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError(fmt::format("csv line {}: bad integer '{}'", line, text));
  }
  return value;
}

std::vector<std::vector<std::string_view>> read_rows(std::istream& in, std::string_view header,
                                                     std::vector<std::string>& storage) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw IoError(fmt::format("csv: expected header '{}'", header));
  }
  const std::size_t columns = split(header, ',').size();
  while (std::getline(in, line)) {
    if (!line.empty()) storage.push_back(line);
  }
  std::vector<std::vector<std::string_view>> rows;
  rows.reserve(storage.size());
  for (std::size_t i = 0; i < storage.size(); ++i) {
    rows.push_back(split(storage[i], ','));
    if (rows.back().size() != columns) {
      throw IoError(fmt::format("csv line {}: expected {} fields", i + 2, columns));
    }
  }
  return rows;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

RunRecord run_prediction(const SweepGrid& grid, const CellConfig& cell, Rng& rng) {
  const Environment env = build_environment(grid.env);
  const auto* spec = std::get_if<MrpSpec>(&env);
  if (spec == nullptr) throw InvalidSpecError("prediction sweeps need a chain environment");
  const FeatureMatrix features = FeatureMatrix::tabular(spec->terminal());
  const Eigen::VectorXd truth = true_values(*spec, cell.gamma);

  RunRecord record{cell, {}, 0.0, false, {}};
  record.metric.reserve(grid.episodes);
  LearnerState state = LearnerState::initial(features.dim(), cell.eta, cell.gamma,
                                             {cell.alpha, cell.alpha_sf, cell.alpha_r});
  for (std::size_t e = 0; e < grid.episodes; ++e) {
    mixture_episode(state, *spec, features, rng);
    const double error = rmse(state.theta, features, truth);
    if (!std::isfinite(error)) throw NumericOverflowError("rmse became non-finite");
    record.metric.push_back(error);
  }
  return record;
}

RunRecord run_control_cell(const SweepGrid& grid, const CellConfig& cell, Rng& rng) {
  const Environment env = build_environment(grid.env);
  const auto* spec = std::get_if<MdpSpec>(&env);
  if (spec == nullptr) throw InvalidSpecError("control sweeps need a gridworld environment");
  const FeatureMatrix features = FeatureMatrix::tabular(spec->terminal());

  ControlConfig config = grid.control;
  config.eta = cell.eta;
  config.gamma = cell.gamma;
  config.alpha = {cell.alpha, cell.alpha_sf, cell.alpha_r};
  config.max_episodes = grid.episodes;
  config.steps = std::numeric_limits<std::size_t>::max();
  ControlResult result = run_control(*spec, features, config, rng);
  return {cell, std::move(result.episode_returns), 0.0, false, {}};
}

}  // namespace

std::string to_string(Task task) { return task == Task::prediction ? "prediction" : "control"; }

Task parse_task(std::string_view text) {
  if (text == "prediction") return Task::prediction;
  if (text == "control") return Task::control;
  throw InvalidSpecError(fmt::format("unknown task '{}'", text));
}

double rmse(const Eigen::VectorXd& theta, const FeatureMatrix& features,
            const Eigen::VectorXd& true_values) {
  if (theta.size() != features.dim() || true_values.size() != features.n_states()) {
    throw DimensionError("rmse: theta, features and true values disagree in size");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (StateIndex s = 0; s < features.n_states(); ++s) {
    if (features.is_terminal(s)) continue;
    const double diff = kernels::dot(features.row(s), theta) - true_values(s);
    sum += diff * diff;
    ++count;
  }
  if (count == 0) throw ContractError("rmse: no non-terminal states");
  return std::sqrt(sum / static_cast<double>(count));
}

void SweepGrid::validate() const {
  if (etas.empty() || alphas.empty() || seeds.empty()) {
    throw ContractError("sweep grid needs at least one eta, alpha and seed");
  }
  for (double eta : etas) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError(fmt::format("eta {} outside [0, 1]", eta));
  }
  for (double alpha : alphas) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
      throw ContractError(fmt::format("learning rate {} must be a finite non-negative number", alpha));
    }
  }
  if (episodes == 0) throw ContractError("sweep needs at least one episode");
}

std::uint64_t cell_seed(std::uint64_t seed, double eta, double alpha, Task task) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(eta));
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(alpha));
  return splitmix64(h ^ static_cast<std::uint64_t>(task));
}

RunRecord run_cell(const SweepGrid& grid, Task task, double eta, double alpha, std::uint64_t seed) {
  CellConfig cell{task, grid.env.kind, eta,
                  task == Task::prediction ? grid.gamma : grid.control.gamma,
                  alpha, grid.alpha_sf.value_or(alpha), grid.alpha_r.value_or(alpha), seed};
  Rng rng(cell_seed(seed, eta, alpha, task));
  const auto started = std::chrono::steady_clock::now();
  RunRecord record;
  try {
    record = task == Task::prediction ? run_prediction(grid, cell, rng)
                                      : run_control_cell(grid, cell, rng);
  } catch (const NumericOverflowError& e) {
    record = {cell, {}, 0.0, true, e.what()};
  } catch (const DivergenceError& e) {
    record = {cell, {}, 0.0, true, e.what()};
  } catch (const SingularityError& e) {
    record = {cell, {}, 0.0, true, e.what()};
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

std::vector<RunRecord> run_sweep(const SweepGrid& grid, Task task) {
  grid.validate();
  struct Job {
    double eta;
    double alpha;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double eta : grid.etas) {
    for (double alpha : grid.alphas) {
      for (std::uint64_t seed : grid.seeds) jobs.push_back({eta, alpha, seed});
    }
  }
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
    return std::tie(a.eta, a.alpha, a.seed) < std::tie(b.eta, b.alpha, b.seed);
  });

  std::vector<RunRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      records[i] = run_cell(grid, task, jobs[i].eta, jobs[i].alpha, jobs[i].seed);
    }
  };
  unsigned n_threads = grid.threads == 0 ? std::thread::hardware_concurrency() : grid.threads;
  n_threads = std::clamp<unsigned>(n_threads, 1, static_cast<unsigned>(jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return records;
}

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records, Reduce reduce) {
  using Key = std::tuple<Task, std::string, double, double>;
  struct Group {
    std::vector<double> values;
    std::size_t failed = 0;
  };
  std::map<Key, Group> groups;
  for (const RunRecord& r : records) {
    Group& g = groups[Key{r.config.task, r.config.env, r.config.eta, r.config.alpha}];
    if (r.failed || r.metric.empty()) {
      ++g.failed;
      continue;
    }
    double value = r.metric.back();
    if (reduce == Reduce::mean_over_episodes) {
      value = 0.0;
      for (double m : r.metric) value += m;
      value /= static_cast<double>(r.metric.size());
    }
    g.values.push_back(value);
  }

  std::vector<AggregateRow> rows;
  for (auto& [key, g] : groups) {
    if (g.values.empty()) continue;
    // Sorting makes the floating-point sums independent of seed order.
    std::sort(g.values.begin(), g.values.end());
    const auto n = static_cast<double>(g.values.size());
    double mean = 0.0;
    for (double v : g.values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : g.values) ss += (v - mean) * (v - mean);
    const double half = 1.96 * std::sqrt(ss / n) / std::sqrt(n);
    rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), mean,
                    half, g.values.size(), g.failed, g.values.size() == 1});
  }
  return rows;
}

std::vector<AggregateRow> best_per_eta(const std::vector<AggregateRow>& rows, bool minimize) {
  using Key = std::tuple<Task, std::string, double>;
  std::map<Key, AggregateRow> best;
  for (const AggregateRow& row : rows) {
    const Key key{row.task, row.env, row.eta};
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, row);
    } else if (minimize ? row.metric_mean < it->second.metric_mean
                        : row.metric_mean > it->second.metric_mean) {
      it->second = row;
    }
  }
  std::vector<AggregateRow> out;
  for (auto& [key, row] : best) out.push_back(row);
  return out;
}

std::vector<RawRow> flatten(const std::vector<RunRecord>& records, std::size_t episodes) {
  std::vector<RawRow> rows;
  for (const RunRecord& r : records) {
    const std::size_t length = r.failed ? std::max(episodes, r.metric.size()) : r.metric.size();
    for (std::size_t e = 0; e < length; ++e) {
      rows.push_back({r.config, e + 1, e < r.metric.size() ? r.metric[e] : std::nan("")});
    }
  }
  return rows;
}

void write_raw_csv(const std::vector<RawRow>& rows, std::ostream& out) {
  std::string buffer;
  buffer.append(kRawHeader).push_back('\n');
  for (const RawRow& row : rows) {
    const CellConfig& c = row.config;
    buffer += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", to_string(c.task), c.env,
                          fmt_double(c.eta), fmt_double(c.gamma), fmt_double(c.alpha),
                          fmt_double(c.alpha_sf), fmt_double(c.alpha_r), c.seed, row.episode,
                          fmt_double(row.metric));
  }
  out << buffer;
}

void write_raw_csv(const std::vector<RawRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  write_raw_csv(rows, out);
  finish_write(out, path);
}

std::vector<RawRow> parse_raw_csv(std::istream& in) {
  std::vector<std::string> storage;
  const auto fields = read_rows(in, kRawHeader, storage);
  std::vector<RawRow> rows;
  rows.reserve(fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    const std::size_t line = i + 2;
    RawRow row;
    try {
      row.config.task = parse_task(f[0]);
    } catch (const InvalidSpecError&) {
      throw IoError(fmt::format("csv line {}: unknown task '{}'", line, f[0]));
    }
    row.config.env = std::string(f[1]);
    row.config.eta = parse_double(f[2], line);
    row.config.gamma = parse_double(f[3], line);
    row.config.alpha = parse_double(f[4], line);
    row.config.alpha_sf = parse_double(f[5], line);
    row.config.alpha_r = parse_double(f[6], line);
    row.config.seed = parse_int<std::uint64_t>(f[7], line);
    row.episode = parse_int<std::size_t>(f[8], line);
    row.metric = parse_double(f[9], line);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, std::ostream& out) {
  std::string buffer;
  buffer.append(kAggregateHeader).push_back('\n');
  for (const AggregateRow& r : rows) {
    buffer += fmt::format("{},{},{},{},{},{},{}\n", to_string(r.task), r.env, fmt_double(r.eta),
                          fmt_double(r.alpha), fmt_double(r.metric_mean), fmt_double(r.ci95_half),
                          r.n_seeds);
  }
  out << buffer;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  write_aggregate_csv(rows, out);
  finish_write(out, path);
}

std::vector<AggregateRow> parse_aggregate_csv(std::istream& in) {
  std::vector<std::string> storage;
  const auto fields = read_rows(in, kAggregateHeader, storage);
  std::vector<AggregateRow> rows;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    const std::size_t line = i + 2;
    AggregateRow row;
    try {
      row.task = parse_task(f[0]);
    } catch (const InvalidSpecError&) {
      throw IoError(fmt::format("csv line {}: unknown task '{}'", line, f[0]));
    }
    row.env = std::string(f[1]);
    row.eta = parse_double(f[2], line);
    row.alpha = parse_double(f[3], line);
    row.metric_mean = parse_double(f[4], line);
    row.ci95_half = parse_double(f[5], line);
    row.n_seeds = parse_int<std::size_t>(f[6], line);
    row.single_seed = row.n_seeds == 1;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

constexpr std::array<std::string_view, 8> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                   "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

void render_svg(const std::vector<AggregateRow>& rows, std::ostream& out, const PlotSpec& spec) {
  std::vector<double> alphas;
  std::map<double, std::vector<const AggregateRow*>> series;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const AggregateRow& r : rows) {
    if (!std::isfinite(r.metric_mean)) continue;
    alphas.push_back(r.alpha);
    series[r.eta].push_back(&r);
    lo = std::min(lo, r.metric_mean - r.ci95_half);
    hi = std::max(hi, r.metric_mean + r.ci95_half);
  }
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  if (!(hi > lo)) {
    lo = std::isfinite(lo) ? lo - 1.0 : 0.0;
    hi = lo + 2.0;
  }

  const double left = 70.0;
  const double right = spec.width - 130.0;
  const double top = 40.0;
  const double bottom = spec.height - 50.0;
  const auto x_of = [&](double alpha) {
    const auto it = std::lower_bound(alphas.begin(), alphas.end(), alpha);
    const auto idx = static_cast<double>(it - alphas.begin());
    return alphas.size() <= 1 ? (left + right) / 2.0
                              : left + idx * (right - left) / static_cast<double>(alphas.size() - 1);
  };
  const auto y_of = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };

  std::string svg;
  svg += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      spec.width, spec.height);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", spec.width, spec.height);
  svg += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     spec.width / 2, xml_escape(spec.title));
  svg += fmt::format(
      "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
      left, right, bottom, top);
  for (double alpha : alphas) {
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:g}</text>\n",
                       x_of(alpha), bottom + 18.0, alpha);
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n",
                       left - 6.0, y_of(v) + 4.0, v);
  }
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     (left + right) / 2.0, spec.height - 12, xml_escape(spec.x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.2f})\">"
      "{1}</text>\n",
      (top + bottom) / 2.0, xml_escape(spec.y_label));

  std::size_t colour = 0;
  for (auto& [eta, points] : series) {
    std::sort(points.begin(), points.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->alpha < b->alpha; });
    const std::string_view stroke = kPalette[colour++ % kPalette.size()];
    svg += fmt::format("<g class=\"series\" data-eta=\"{:g}\">\n", eta);
    std::string coords;
    for (const AggregateRow* p : points) {
      if (!coords.empty()) coords.push_back(' ');
      coords += fmt::format("{:.2f},{:.2f}", x_of(p->alpha), y_of(p->metric_mean));
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                       stroke, coords);
    for (const AggregateRow* p : points) {
      const double x = x_of(p->alpha);
      svg += fmt::format(
          "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"{3}\"/>\n",
          x, y_of(p->metric_mean - p->ci95_half), y_of(p->metric_mean + p->ci95_half), stroke);
    }
    const double legend_y = top + 18.0 * static_cast<double>(colour);
    svg += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"{}\">eta = {:g}</text>\n</g>\n", right + 16.0,
        legend_y, stroke, eta);
  }
  svg += "</svg>\n";
  out << svg;
}

void render_svg(const std::vector<AggregateRow>& rows, const std::filesystem::path& path,
                const PlotSpec& spec) {
  std::ofstream out = open_for_write(path);
  render_svg(rows, out, spec);
  finish_write(out, path);
}

}  // namespace etamix
