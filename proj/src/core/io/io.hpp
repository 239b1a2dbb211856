#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "core/demos/demos.hpp"
#include "core/train/trainer.hpp"

namespace mmr::io {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Run configuration as a JSON document mirroring TrainConfig. Unknown keys
// are rejected with the offending key path; malformed JSON reports the line.
// With apply_env set, MMREACH_<KEY> environment variables (key paths
// upper-cased, dots as underscores) override file values after parsing.
// parse_run_config(emit_run_config(cfg)) reproduces cfg exactly.
train::TrainConfig parse_run_config(const std::string& text, bool apply_env = true);
train::TrainConfig load_run_config(const std::string& path, bool apply_env = true);
std::string emit_run_config(const train::TrainConfig& cfg);

void write_metrics_csv(const std::string& path, const std::vector<train::MetricsRow>& rows);
void write_eval_csv(const std::string& path, const std::vector<train::EvalRow>& rows);
void append_eval_episodes(std::ostream& os, long cycle,
                          const std::vector<train::EvalEpisodeLog>& episodes);

// Demos are stored one JSON object per line holding the action tape; states,
// observations and commands are rebuilt by replaying the simulator, and the
// result must pass demo validation.
void save_demos_jsonl(const std::string& path, const std::vector<demos::Episode>& episodes);
std::vector<demos::Episode> load_demos_jsonl(const std::string& path);

struct Heatmap {
  int grid = 32;
  sim::Box bounds;
  std::vector<long> counts;  // row-major, row 0 at ymin
  long total = 0;
  long max_count = 0;

  long at(int row, int col) const { return counts[static_cast<size_t>(row * grid + col)]; }
};

Heatmap build_heatmap(const std::vector<std::pair<double, double>>& points,
                      const sim::Box& bounds, int grid = 32);
void write_heatmap_csv(const std::string& path, const Heatmap& hm);
void write_heatmap_pgm(const std::string& path, const Heatmap& hm);

}  // namespace mmr::io
