#include "core/io/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmr::io {

namespace {

using json = nlohmann::ordered_json;
using train::TrainConfig;

json to_json(const TrainConfig& c) {
  json j;
  j["env"] = sim::env_id_name(c.env);
  j["seed"] = c.seed;
  j["demo_variant"] = train::demo_variant_name(c.demo_variant);
  j["hierarchy"] = train::hierarchy_name(c.hierarchy);
  j["manager_reward"] = train::manager_reward_name(c.manager_reward);
  j["modified"] = c.modified;
  j["demo_count"] = c.demo_count;
  j["pretrain_steps"] = c.pretrain_steps;
  j["pretrain_slices"] = c.pretrain_slices;
  j["train_env_steps"] = c.train_env_steps;
  j["episode_len"] = c.episode_len;
  j["rl_iters_per_cycle"] = c.rl_iters_per_cycle;
  j["eval_every_cycles"] = c.eval_every_cycles;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_step_cap"] = c.eval_step_cap;
  j["slices_per_iter"] = c.slices_per_iter;
  j["slice_len"] = c.slice_len;
  j["buffer_capacity"] = c.buffer_capacity;
  j["eps_start"] = c.eps_start;
  j["eps_final"] = c.eps_final;
  j["eps_anneal_steps"] = c.eps_anneal_steps;
  j["checkpoint_every_cycles"] = c.checkpoint_every_cycles;

  json w;
  w["h_dim"] = c.wm.h_dim;
  w["z_dim"] = c.wm.z_dim;
  w["hidden"] = c.wm.hidden;
  w["action_dim"] = c.wm.action_dim;
  w["obs_dim"] = c.wm.obs_dim;
  w["grid_dim"] = c.wm.grid_dim;
  w["beta"] = c.wm.beta;
  w["std_floor"] = c.wm.std_floor;
  w["lr"] = c.wm.lr;
  w["codec_lr"] = c.wm.codec_lr;
  w["l_rew_decay"] = c.wm.l_rew_decay;
  w["code_groups"] = c.wm.code_groups;
  w["code_classes"] = c.wm.code_classes;
  j["wm"] = w;

  json p;
  p["feature_dim"] = c.policy.feature_dim;
  p["goal_dim"] = c.policy.goal_dim;
  p["action_dim"] = c.policy.action_dim;
  p["code_groups"] = c.policy.code_groups;
  p["code_classes"] = c.policy.code_classes;
  p["hidden"] = c.policy.hidden;
  p["actor_lr"] = c.policy.actor_lr;
  p["critic_lr"] = c.policy.critic_lr;
  p["eta"] = c.policy.eta;
  p["gamma"] = c.policy.gamma;
  p["lambda"] = c.policy.lambda;
  p["horizon"] = c.policy.horizon;
  p["manager_period"] = c.policy.manager_period;
  p["w_task"] = c.policy.w_task;
  p["w_collision"] = c.policy.w_collision;
  p["w_progress"] = c.policy.w_progress;
  p["w_goal"] = c.policy.w_goal;
  p["imitation_weight"] = c.policy.imitation_weight;
  p["frozen_sync"] = c.policy.frozen_sync;
  p["mu_predefined"] = c.policy.mu_predefined;
  p["mu_min"] = c.policy.mu_min;
  p["mu_max"] = c.policy.mu_max;
  j["policy"] = p;

  json r;
  r["r_th"] = c.reach.r_th;
  r["c_th"] = c.reach.c_th;
  r["horizon"] = c.reach.horizon;
  r["reward_arm_reachable"] = c.reach.reward_arm_reachable;
  r["reward_arm_unreachable"] = c.reach.reward_arm_unreachable;
  r["reward_base"] = c.reach.reward_base;
  j["reach"] = r;
  return j;
}

template <typename T>
void take(json& obj, const std::string& prefix, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for " + prefix + key + ": " + e.what());
  }
  obj.erase(it);
}

void reject_unknown(const json& obj, const std::string& prefix) {
  if (!obj.empty())
    throw ConfigError("config: unknown key " + prefix + obj.begin().key());
}

json take_object(json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return json::object();
  if (!it->is_object())
    throw ConfigError(std::string("config: ") + key + " must be an object");
  json sub = *it;
  obj.erase(it);
  return sub;
}

TrainConfig from_json(json j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  TrainConfig c;
  std::string env = sim::env_id_name(c.env);
  std::string variant = train::demo_variant_name(c.demo_variant);
  std::string hier = train::hierarchy_name(c.hierarchy);
  std::string mreward = train::manager_reward_name(c.manager_reward);

  take(j, "", "env", env);
  take(j, "", "seed", c.seed);
  take(j, "", "demo_variant", variant);
  take(j, "", "hierarchy", hier);
  take(j, "", "manager_reward", mreward);
  take(j, "", "modified", c.modified);
  take(j, "", "demo_count", c.demo_count);
  take(j, "", "pretrain_steps", c.pretrain_steps);
  take(j, "", "pretrain_slices", c.pretrain_slices);
  take(j, "", "train_env_steps", c.train_env_steps);
  take(j, "", "episode_len", c.episode_len);
  take(j, "", "rl_iters_per_cycle", c.rl_iters_per_cycle);
  take(j, "", "eval_every_cycles", c.eval_every_cycles);
  take(j, "", "eval_episodes", c.eval_episodes);
  take(j, "", "eval_step_cap", c.eval_step_cap);
  take(j, "", "slices_per_iter", c.slices_per_iter);
  take(j, "", "slice_len", c.slice_len);
  take(j, "", "buffer_capacity", c.buffer_capacity);
  take(j, "", "eps_start", c.eps_start);
  take(j, "", "eps_final", c.eps_final);
  take(j, "", "eps_anneal_steps", c.eps_anneal_steps);
  take(j, "", "checkpoint_every_cycles", c.checkpoint_every_cycles);

  json w = take_object(j, "wm");
  take(w, "wm.", "h_dim", c.wm.h_dim);
  take(w, "wm.", "z_dim", c.wm.z_dim);
  take(w, "wm.", "hidden", c.wm.hidden);
  take(w, "wm.", "action_dim", c.wm.action_dim);
  take(w, "wm.", "obs_dim", c.wm.obs_dim);
  take(w, "wm.", "grid_dim", c.wm.grid_dim);
  take(w, "wm.", "beta", c.wm.beta);
  take(w, "wm.", "std_floor", c.wm.std_floor);
  take(w, "wm.", "lr", c.wm.lr);
  take(w, "wm.", "codec_lr", c.wm.codec_lr);
  take(w, "wm.", "l_rew_decay", c.wm.l_rew_decay);
  take(w, "wm.", "code_groups", c.wm.code_groups);
  take(w, "wm.", "code_classes", c.wm.code_classes);
  reject_unknown(w, "wm.");

  json p = take_object(j, "policy");
  take(p, "policy.", "feature_dim", c.policy.feature_dim);
  take(p, "policy.", "goal_dim", c.policy.goal_dim);
  take(p, "policy.", "action_dim", c.policy.action_dim);
  take(p, "policy.", "code_groups", c.policy.code_groups);
  take(p, "policy.", "code_classes", c.policy.code_classes);
  take(p, "policy.", "hidden", c.policy.hidden);
  take(p, "policy.", "actor_lr", c.policy.actor_lr);
  take(p, "policy.", "critic_lr", c.policy.critic_lr);
  take(p, "policy.", "eta", c.policy.eta);
  take(p, "policy.", "gamma", c.policy.gamma);
  take(p, "policy.", "lambda", c.policy.lambda);
  take(p, "policy.", "horizon", c.policy.horizon);
  take(p, "policy.", "manager_period", c.policy.manager_period);
  take(p, "policy.", "w_task", c.policy.w_task);
  take(p, "policy.", "w_collision", c.policy.w_collision);
  take(p, "policy.", "w_progress", c.policy.w_progress);
  take(p, "policy.", "w_goal", c.policy.w_goal);
  take(p, "policy.", "imitation_weight", c.policy.imitation_weight);
  take(p, "policy.", "frozen_sync", c.policy.frozen_sync);
  take(p, "policy.", "mu_predefined", c.policy.mu_predefined);
  take(p, "policy.", "mu_min", c.policy.mu_min);
  take(p, "policy.", "mu_max", c.policy.mu_max);
  reject_unknown(p, "policy.");

  json r = take_object(j, "reach");
  take(r, "reach.", "r_th", c.reach.r_th);
  take(r, "reach.", "c_th", c.reach.c_th);
  take(r, "reach.", "horizon", c.reach.horizon);
  take(r, "reach.", "reward_arm_reachable", c.reach.reward_arm_reachable);
  take(r, "reach.", "reward_arm_unreachable", c.reach.reward_arm_unreachable);
  take(r, "reach.", "reward_base", c.reach.reward_base);
  reject_unknown(r, "reach.");

  reject_unknown(j, "");

  try {
    c.env = sim::parse_env_id(env);
  } catch (const std::exception&) {
    throw ConfigError("config: unknown env " + env);
  }
  c.demo_variant = train::parse_demo_variant(variant);
  c.hierarchy = train::parse_hierarchy(hier);
  c.manager_reward = train::parse_manager_reward(mreward);
  c.policy.modified = c.modified;
  return c;
}

void collect_paths(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      collect_paths(*it, path, out);
    else
      out.push_back(path);
  }
}

std::string env_var_name(const std::string& path) {
  std::string name = "MMREACH_";
  for (char ch : path) {
    if (ch == '.')
      name += '_';
    else
      name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return name;
}

void apply_env_overrides(json& j) {
  json defaults = to_json(TrainConfig{});
  std::vector<std::string> paths;
  collect_paths(defaults, "", paths);
  for (const auto& path : paths) {
    const char* raw = std::getenv(env_var_name(path).c_str());
    if (!raw) continue;
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = std::string(raw);
    }
    json* node = &j;
    size_t pos = 0;
    while (true) {
      size_t dot = path.find('.', pos);
      std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
      node = &(*node)[key];
      pos = dot + 1;
    }
  }
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 40> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  MMR_REQUIRE(res.ec == std::errc{}, "format_double: conversion failed");
  return std::string(buf.data(), res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os.good()) throw IoError("cannot write " + path);
  os << text;
  MMR_REQUIRE(os.good(), "write_text_file: write failed for " + path);
}

train::TrainConfig parse_run_config(const std::string& text, bool apply_env) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    size_t line = 1;
    size_t limit = std::min(static_cast<size_t>(e.byte), text.size());
    for (size_t i = 0; i < limit; ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError("config: parse error at line " + std::to_string(line) + ": " + e.what());
  }
  if (apply_env) apply_env_overrides(j);
  return from_json(std::move(j));
}

train::TrainConfig load_run_config(const std::string& path, bool apply_env) {
  return parse_run_config(read_text_file(path), apply_env);
}

std::string emit_run_config(const train::TrainConfig& cfg) {
  return to_json(cfg).dump(2) + "\n";
}

void write_metrics_csv(const std::string& path, const std::vector<train::MetricsRow>& rows) {
  std::ostringstream os;
  os << "iteration,cycle,env_steps,eps,wm_total,wm_recon,wm_reward,wm_collision,wm_kl,"
        "codec_loss,l_rew,mu,sel_actor,sel_critic,sel_entropy,mgr_actor,mgr_critic,"
        "mgr_entropy,mgr_imitation,wkr_actor,wkr_critic,wkr_entropy,wkr_imitation,"
        "reachable_fraction,arm_fraction,buffer_steps,aborted\n";
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.cycle << ',' << r.env_steps << ',' << format_double(r.eps)
       << ',' << format_double(r.wm_total) << ',' << format_double(r.wm_recon) << ','
       << format_double(r.wm_reward) << ',' << format_double(r.wm_collision) << ','
       << format_double(r.wm_kl) << ',' << format_double(r.codec_loss) << ','
       << format_double(r.l_rew) << ',' << format_double(r.mu) << ','
       << format_double(r.sel_actor) << ',' << format_double(r.sel_critic) << ','
       << format_double(r.sel_entropy) << ',' << format_double(r.mgr_actor) << ','
       << format_double(r.mgr_critic) << ',' << format_double(r.mgr_entropy) << ','
       << format_double(r.mgr_imitation) << ',' << format_double(r.wkr_actor) << ','
       << format_double(r.wkr_critic) << ',' << format_double(r.wkr_entropy) << ','
       << format_double(r.wkr_imitation) << ',' << format_double(r.reachable_fraction) << ','
       << format_double(r.arm_fraction) << ',' << r.buffer_steps << ',' << r.aborted << '\n';
  }
  write_text_file(path, os.str());
}

void write_eval_csv(const std::string& path, const std::vector<train::EvalRow>& rows) {
  std::ostringstream os;
  os << "cycle,env_steps,success_rate,arm_near_goal,first_arm_ratio,mean_length,"
        "episodes,successes,episodes_with_arm\n";
  for (const auto& r : rows) {
    os << r.cycle << ',' << r.env_steps << ',' << format_double(r.success_rate) << ','
       << format_double(r.arm_near_goal) << ',' << format_double(r.first_arm_ratio) << ','
       << format_double(r.mean_length) << ',' << r.episodes << ',' << r.successes << ','
       << r.episodes_with_arm << '\n';
  }
  write_text_file(path, os.str());
}

void append_eval_episodes(std::ostream& os, long cycle,
                          const std::vector<train::EvalEpisodeLog>& episodes) {
  for (const auto& e : episodes) {
    json j;
    j["cycle"] = cycle;
    j["env_seed"] = e.env_seed;
    j["success"] = e.success;
    j["collision"] = e.collision;
    j["length"] = e.length;
    j["first_arm"] = e.first_arm;
    json steps = json::array();
    for (const auto& s : e.arm_steps) {
      json st;
      st["t"] = s.t;
      st["action"] = s.action;
      st["x"] = s.base_x;
      st["y"] = s.base_y;
      st["near"] = s.near_goal;
      steps.push_back(st);
    }
    j["arm_steps"] = steps;
    os << j.dump() << "\n";
  }
}

void save_demos_jsonl(const std::string& path, const std::vector<demos::Episode>& episodes) {
  std::ostringstream os;
  for (const auto& e : episodes) {
    MMR_REQUIRE(!e.states.empty(), "save_demos_jsonl: episode without states");
    json j;
    j["env"] = e.env;
    j["seed"] = e.seed;
    j["start"] = {e.states[0].base.x, e.states[0].base.y, e.states[0].base.yaw};
    j["success"] = e.success;
    j["stage_boundary"] = e.stage_boundary;
    j["actions"] = e.action;
    j["masks"] = e.mask;
    j["stages"] = e.stage;
    j["rewards"] = e.reward;
    j["collisions"] = e.collision;
    os << j.dump() << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<demos::Episode> load_demos_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw IoError("cannot read " + path);
  std::vector<demos::Episode> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError("demo file " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    demos::Episode e;
    std::vector<double> start;
    try {
      e.env = j.at("env").get<std::string>();
      e.seed = j.at("seed").get<uint64_t>();
      e.success = j.at("success").get<bool>();
      e.stage_boundary = j.at("stage_boundary").get<int>();
      e.action = j.at("actions").get<std::vector<int>>();
      e.mask = j.at("masks").get<std::vector<int>>();
      e.stage = j.at("stages").get<std::vector<int>>();
      e.reward = j.at("rewards").get<std::vector<int>>();
      e.collision = j.at("collisions").get<std::vector<int>>();
      start = j.at("start").get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw IoError("demo file " + path + " line " + std::to_string(lineno) + ": " + ex.what());
    }
    if (start.size() != 3)
      throw IoError("demo file " + path + " line " + std::to_string(lineno) +
                    ": start must hold [x, y, yaw]");

    sim::EnvId env = sim::parse_env_id(e.env);
    sim::WorldState w = sim::make_env_at(env, start[0], start[1], start[2]);
    e.states.push_back(w);
    e.obs.push_back(sim::render_observation(w));
    for (size_t t = 0; t < e.action.size(); ++t) {
      sim::CommandArray cmd = sim::action_command(e.action[t]);
      e.command.push_back(cmd);
      auto [w2, outcome] = sim::step(e.states.back(), cmd, {});
      if (outcome.r != e.reward[t] || outcome.c != e.collision[t])
        throw IoError("demo file " + path + " line " + std::to_string(lineno) +
                      ": replay mismatch at step " + std::to_string(t));
      e.states.push_back(w2);
      e.obs.push_back(sim::render_observation(w2));
    }
    demos::validate_demo(e);
    out.push_back(std::move(e));
  }
  return out;
}

Heatmap build_heatmap(const std::vector<std::pair<double, double>>& points,
                      const sim::Box& bounds, int grid) {
  MMR_REQUIRE(grid >= 1, "build_heatmap: grid must be positive");
  MMR_REQUIRE(bounds.xmax > bounds.xmin && bounds.ymax > bounds.ymin,
              "build_heatmap: degenerate bounds");
  Heatmap hm;
  hm.grid = grid;
  hm.bounds = bounds;
  hm.counts.assign(static_cast<size_t>(grid) * grid, 0);
  double w = bounds.xmax - bounds.xmin, h = bounds.ymax - bounds.ymin;
  for (const auto& [x, y] : points) {
    int col = static_cast<int>((x - bounds.xmin) / w * grid);
    int row = static_cast<int>((y - bounds.ymin) / h * grid);
    col = std::clamp(col, 0, grid - 1);
    row = std::clamp(row, 0, grid - 1);
    ++hm.counts[static_cast<size_t>(row * grid + col)];
    ++hm.total;
  }
  for (long c : hm.counts) hm.max_count = std::max(hm.max_count, c);
  return hm;
}

void write_heatmap_csv(const std::string& path, const Heatmap& hm) {
  std::ostringstream os;
  os << "x,y,count\n";
  double cw = (hm.bounds.xmax - hm.bounds.xmin) / hm.grid;
  double ch = (hm.bounds.ymax - hm.bounds.ymin) / hm.grid;
  for (int row = 0; row < hm.grid; ++row) {
    for (int col = 0; col < hm.grid; ++col) {
      long c = hm.at(row, col);
      if (c == 0) continue;
      double x = hm.bounds.xmin + (col + 0.5) * cw;
      double y = hm.bounds.ymin + (row + 0.5) * ch;
      os << format_double(x) << ',' << format_double(y) << ',' << c << '\n';
    }
  }
  write_text_file(path, os.str());
}

void write_heatmap_pgm(const std::string& path, const Heatmap& hm) {
  std::ostringstream os;
  os << "P2\n" << hm.grid << ' ' << hm.grid << "\n255\n";
  for (int row = hm.grid - 1; row >= 0; --row) {
    for (int col = 0; col < hm.grid; ++col) {
      long c = hm.at(row, col);
      int v = hm.max_count > 0
                  ? static_cast<int>(255.0 * static_cast<double>(c) / hm.max_count + 0.5)
                  : 0;
      os << v << (col + 1 == hm.grid ? '\n' : ' ');
    }
  }
  write_text_file(path, os.str());
}

}  // namespace mmr::io
