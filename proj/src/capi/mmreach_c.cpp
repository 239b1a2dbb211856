#include "mmreach/mmreach.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "core/io/io.hpp"
#include "core/train/trainer.hpp"

using json = nlohmann::ordered_json;

struct mmr_config {
  mmr::train::TrainConfig cfg;
};

struct mmr_trainer {
  mmr::train::Trainer impl;
  explicit mmr_trainer(const mmr::train::TrainConfig& c) : impl(c) {}
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return MMR_OK;
  } catch (const mmr::ConfigError& e) {
    return fail(MMR_ERR_CONFIG, e.what());
  } catch (const mmr::IoError& e) {
    return fail(MMR_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(MMR_ERR, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* mmr_version(void) { return "0.1.0"; }

const char* mmr_last_error(void) { return g_last_error.c_str(); }

void mmr_string_free(char* s) { std::free(s); }

mmr_config* mmr_config_default(void) { return new mmr_config{}; }

mmr_config* mmr_config_load(const char* path) {
  if (!path) {
    fail(MMR_ERR_CONFIG, "mmr_config_load: path is NULL");
    return nullptr;
  }
  mmr_config* out = nullptr;
  int rc = guarded([&] { out = new mmr_config{mmr::io::load_run_config(path)}; });
  return rc == MMR_OK ? out : nullptr;
}

mmr_config* mmr_config_parse(const char* json_text) {
  if (!json_text) {
    fail(MMR_ERR_CONFIG, "mmr_config_parse: text is NULL");
    return nullptr;
  }
  mmr_config* out = nullptr;
  int rc = guarded([&] { out = new mmr_config{mmr::io::parse_run_config(json_text, false)}; });
  return rc == MMR_OK ? out : nullptr;
}

int mmr_config_set(mmr_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(MMR_ERR_CONFIG, "mmr_config_set: NULL argument");
  return guarded([&] {
    json j = json::parse(mmr::io::emit_run_config(cfg->cfg));
    json* node = &j;
    std::string path(key), part;
    size_t pos = 0;
    while ((pos = path.find('.')) != std::string::npos) {
      part = path.substr(0, pos);
      if (!node->contains(part))
        throw mmr::ConfigError("unknown config key: " + std::string(key));
      node = &(*node)[part];
      path.erase(0, pos + 1);
    }
    if (!node->contains(path)) throw mmr::ConfigError("unknown config key: " + std::string(key));
    json parsed = json::parse(value, nullptr, false);
    (*node)[path] = parsed.is_discarded() ? json(std::string(value)) : parsed;
    cfg->cfg = mmr::io::parse_run_config(j.dump(), false);
  });
}

char* mmr_config_emit(const mmr_config* cfg) {
  if (!cfg) {
    fail(MMR_ERR_CONFIG, "mmr_config_emit: cfg is NULL");
    return nullptr;
  }
  char* out = nullptr;
  int rc = guarded([&] { out = copy_string(mmr::io::emit_run_config(cfg->cfg)); });
  return rc == MMR_OK ? out : nullptr;
}

void mmr_config_free(mmr_config* cfg) { delete cfg; }

int mmr_demos_generate(const mmr_config* cfg, const char* out_path) {
  if (!cfg || !out_path) return fail(MMR_ERR_CONFIG, "mmr_demos_generate: NULL argument");
  return guarded([&] {
    mmr::train::Trainer t(cfg->cfg);
    t.generate_demos();
    mmr::io::save_demos_jsonl(out_path, t.demos());
  });
}

mmr_trainer* mmr_trainer_new(const mmr_config* cfg) {
  if (!cfg) {
    fail(MMR_ERR_CONFIG, "mmr_trainer_new: cfg is NULL");
    return nullptr;
  }
  mmr_trainer* out = nullptr;
  int rc = guarded([&] { out = new mmr_trainer(cfg->cfg); });
  return rc == MMR_OK ? out : nullptr;
}

void mmr_trainer_free(mmr_trainer* t) { delete t; }

int mmr_trainer_load_demos(mmr_trainer* t, const char* path) {
  if (!t || !path) return fail(MMR_ERR_CONFIG, "mmr_trainer_load_demos: NULL argument");
  return guarded([&] { t->impl.set_demos(mmr::io::load_demos_jsonl(path)); });
}

int mmr_trainer_generate_demos(mmr_trainer* t) {
  if (!t) return fail(MMR_ERR_CONFIG, "mmr_trainer_generate_demos: trainer is NULL");
  return guarded([&] { t->impl.generate_demos(); });
}

int mmr_trainer_pretrain(mmr_trainer* t) {
  if (!t) return fail(MMR_ERR_CONFIG, "mmr_trainer_pretrain: trainer is NULL");
  return guarded([&] {
    if (t->impl.demos().empty() &&
        t->impl.cfg().demo_variant != mmr::train::DemoVariant::kNoDemo)
      t->impl.generate_demos();
    t->impl.pretrain();
  });
}

int mmr_trainer_run(mmr_trainer* t, const char* out_dir) {
  if (!t || !out_dir) return fail(MMR_ERR_CONFIG, "mmr_trainer_run: NULL argument");
  return guarded([&] { t->impl.run(out_dir); });
}

int mmr_trainer_save_checkpoint(mmr_trainer* t, const char* dir) {
  if (!t || !dir) return fail(MMR_ERR_CONFIG, "mmr_trainer_save_checkpoint: NULL argument");
  return guarded([&] { t->impl.save_checkpoint(dir); });
}

int mmr_trainer_load_checkpoint(mmr_trainer* t, const char* dir) {
  if (!t || !dir) return fail(MMR_ERR_CONFIG, "mmr_trainer_load_checkpoint: NULL argument");
  return guarded([&] { t->impl.load_checkpoint(dir); });
}

char* mmr_trainer_eval(mmr_trainer* t, const char* episodes_jsonl_path) {
  if (!t) {
    fail(MMR_ERR_CONFIG, "mmr_trainer_eval: trainer is NULL");
    return nullptr;
  }
  char* out = nullptr;
  int rc = guarded([&] {
    auto episodes = t->impl.run_eval();
    auto row = mmr::train::compute_eval_stats(episodes);
    if (episodes_jsonl_path) {
      std::ofstream os(episodes_jsonl_path, std::ios::app);
      if (!os.good())
        throw mmr::IoError(std::string("cannot open ") + episodes_jsonl_path);
      mmr::io::append_eval_episodes(os, static_cast<long>(t->impl.eval_rows().size()),
                                    episodes);
    }
    json j;
    j["episodes"] = row.episodes;
    j["successes"] = row.successes;
    j["success_rate"] = row.success_rate;
    j["arm_near_goal"] = row.arm_near_goal;
    j["first_arm_ratio"] = row.first_arm_ratio;
    j["mean_length"] = row.mean_length;
    j["episodes_with_arm"] = row.episodes_with_arm;
    j["env_steps"] = t->impl.env_steps();
    out = copy_string(j.dump());
  });
  return rc == MMR_OK ? out : nullptr;
}

int mmr_heatmap_export(const char* episodes_jsonl_path, const char* env_name,
                       const char* csv_path, const char* pgm_path) {
  if (!episodes_jsonl_path || !env_name)
    return fail(MMR_ERR_CONFIG, "mmr_heatmap_export: NULL argument");
  return guarded([&] {
    mmr::sim::EnvId env = mmr::sim::parse_env_id(env_name);
    std::ifstream is(episodes_jsonl_path);
    if (!is.good()) throw mmr::IoError(std::string("cannot read ") + episodes_jsonl_path);
    std::vector<std::pair<double, double>> pts;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw mmr::IoError(std::string(episodes_jsonl_path) + " line " +
                           std::to_string(lineno) + ": " + e.what());
      }
      for (const auto& st : j.value("arm_steps", json::array()))
        pts.emplace_back(st.at("x").get<double>(), st.at("y").get<double>());
    }
    auto hm = mmr::io::build_heatmap(pts, mmr::sim::env_spec(env).bounds);
    if (csv_path) mmr::io::write_heatmap_csv(csv_path, hm);
    if (pgm_path) mmr::io::write_heatmap_pgm(pgm_path, hm);
  });
}

}  // extern "C"
