#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mmreach/mmreach.h"

namespace {

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration JSON file");
  cmd->add_option("--set", args.sets,
                  "Override a config key, dotted path (e.g. --set wm.h_dim=64)");
}

int die(const std::string& where, int rc) {
  std::fprintf(stderr, "%s: %s\n", where.c_str(), mmr_last_error());
  return rc ? rc : MMR_ERR;
}

mmr_config* build_config(const ConfigArgs& args, int& rc) {
  mmr_config* cfg =
      args.config_path.empty() ? mmr_config_default() : mmr_config_load(args.config_path.c_str());
  if (!cfg) {
    rc = die("config", MMR_ERR_CONFIG);
    return nullptr;
  }
  for (const std::string& kv : args.sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "config: --set expects key=value, got '%s'\n", kv.c_str());
      mmr_config_free(cfg);
      rc = MMR_ERR_CONFIG;
      return nullptr;
    }
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    int s = mmr_config_set(cfg, key.c_str(), value.c_str());
    if (s != MMR_OK) {
      mmr_config_free(cfg);
      rc = die("config", s);
      return nullptr;
    }
  }
  rc = MMR_OK;
  return cfg;
}

struct Preset {
  const char* name;
  const char* key;
  const char* value;
};

constexpr Preset kPresets[] = {
    {"exploration", "manager_reward", "exploration"},
    {"flat", "hierarchy", "flat"},
    {"demo-as-experience", "demo_variant", "demo-as-experience"},
    {"demo-as-goal", "demo_variant", "demo-as-goal"},
    {"no-demo", "demo_variant", "no-demo"},
    {"modified", "modified", "true"},
};

int run_training(mmr_config* cfg, const std::string& demos_path, const std::string& checkpoint,
                 const std::string& out_dir) {
  mmr_trainer* t = mmr_trainer_new(cfg);
  if (!t) return die("train", MMR_ERR);
  int rc = MMR_OK;
  if (!demos_path.empty()) rc = mmr_trainer_load_demos(t, demos_path.c_str());
  if (rc == MMR_OK && !checkpoint.empty()) rc = mmr_trainer_load_checkpoint(t, checkpoint.c_str());
  if (rc == MMR_OK) rc = mmr_trainer_run(t, out_dir.c_str());
  mmr_trainer_free(t);
  if (rc != MMR_OK) return die("train", rc);
  std::printf("run complete: %s\n", out_dir.c_str());
  return MMR_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"World-model training with predictive reachability embodiment selection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mmr_version());

  ConfigArgs demo_args;
  std::string demo_out;
  auto* demo_gen = app.add_subcommand("demo-gen", "Generate scripted demonstrations as JSONL");
  add_config_options(demo_gen, demo_args);
  demo_gen->add_option("--out", demo_out, "Output JSONL path")->required();

  ConfigArgs pre_args;
  std::string pre_demos, pre_out;
  auto* pretrain = app.add_subcommand("pretrain", "World-model pretraining on demonstrations");
  add_config_options(pretrain, pre_args);
  pretrain->add_option("--demos", pre_demos, "Demo JSONL (generated from the seed if omitted)");
  pretrain->add_option("--out", pre_out, "Checkpoint directory to write")->required();

  ConfigArgs train_args;
  std::string train_demos, train_ckpt, train_out;
  auto* train = app.add_subcommand("train", "Full training run");
  add_config_options(train, train_args);
  train->add_option("--demos", train_demos, "Demo JSONL (generated from the seed if omitted)");
  train->add_option("--checkpoint", train_ckpt, "Start from this checkpoint directory");
  train->add_option("--out", train_out, "Output directory for metrics and checkpoint")
      ->required();

  ConfigArgs abl_args;
  std::string abl_preset, abl_demos, abl_out;
  auto* ablate = app.add_subcommand("ablate", "Training run with an ablation preset");
  add_config_options(ablate, abl_args);
  std::vector<std::string> preset_names;
  for (const Preset& p : kPresets) preset_names.emplace_back(p.name);
  ablate->add_option("--preset", abl_preset, "One of: " + CLI::detail::join(preset_names, ", "))
      ->required()
      ->check(CLI::IsMember(preset_names));
  ablate->add_option("--demos", abl_demos, "Demo JSONL (generated from the seed if omitted)");
  ablate->add_option("--out", abl_out, "Output directory for metrics and checkpoint")
      ->required();

  ConfigArgs eval_args;
  std::string eval_ckpt, eval_log;
  int eval_episodes = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_config_options(eval, eval_args);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval->add_option("--episodes", eval_episodes, "Episode count (default from config)");
  eval->add_option("--episodes-log", eval_log, "Append per-episode JSONL here");

  std::string hm_episodes, hm_env = "empty", hm_csv, hm_pgm;
  auto* heatmap = app.add_subcommand("export-heatmap",
                                     "Arm-selection heatmap from an eval episode log");
  heatmap->add_option("--episodes", hm_episodes, "eval_episodes.jsonl path")->required();
  heatmap->add_option("--env", hm_env, "Environment name for the world bounds");
  heatmap->add_option("--csv", hm_csv, "CSV output path");
  heatmap->add_option("--pgm", hm_pgm, "PGM output path");

  ConfigArgs show_args;
  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_config_options(show, show_args);

  CLI11_PARSE(app, argc, argv);

  if (*demo_gen) {
    int rc;
    mmr_config* cfg = build_config(demo_args, rc);
    if (!cfg) return rc;
    rc = mmr_demos_generate(cfg, demo_out.c_str());
    mmr_config_free(cfg);
    if (rc != MMR_OK) return die("demo-gen", rc);
    std::printf("demos written: %s\n", demo_out.c_str());
    return 0;
  }

  if (*pretrain) {
    int rc;
    mmr_config* cfg = build_config(pre_args, rc);
    if (!cfg) return rc;
    mmr_trainer* t = mmr_trainer_new(cfg);
    mmr_config_free(cfg);
    if (!t) return die("pretrain", MMR_ERR);
    rc = pre_demos.empty() ? MMR_OK : mmr_trainer_load_demos(t, pre_demos.c_str());
    if (rc == MMR_OK) rc = mmr_trainer_pretrain(t);
    if (rc == MMR_OK) rc = mmr_trainer_save_checkpoint(t, pre_out.c_str());
    mmr_trainer_free(t);
    if (rc != MMR_OK) return die("pretrain", rc);
    std::printf("checkpoint written: %s\n", pre_out.c_str());
    return 0;
  }

  if (*train) {
    int rc;
    mmr_config* cfg = build_config(train_args, rc);
    if (!cfg) return rc;
    rc = run_training(cfg, train_demos, train_ckpt, train_out);
    mmr_config_free(cfg);
    return rc;
  }

  if (*ablate) {
    int rc;
    mmr_config* cfg = build_config(abl_args, rc);
    if (!cfg) return rc;
    for (const Preset& p : kPresets) {
      if (abl_preset == p.name) {
        if (mmr_config_set(cfg, p.key, p.value) != MMR_OK) {
          mmr_config_free(cfg);
          return die("ablate", MMR_ERR_CONFIG);
        }
        break;
      }
    }
    rc = run_training(cfg, abl_demos, "", abl_out);
    mmr_config_free(cfg);
    return rc;
  }

  if (*eval) {
    int rc;
    mmr_config* cfg = build_config(eval_args, rc);
    if (!cfg) return rc;
    if (eval_episodes > 0 &&
        mmr_config_set(cfg, "eval_episodes", std::to_string(eval_episodes).c_str()) != MMR_OK) {
      mmr_config_free(cfg);
      return die("eval", MMR_ERR_CONFIG);
    }
    mmr_trainer* t = mmr_trainer_new(cfg);
    mmr_config_free(cfg);
    if (!t) return die("eval", MMR_ERR);
    rc = mmr_trainer_load_checkpoint(t, eval_ckpt.c_str());
    if (rc != MMR_OK) {
      mmr_trainer_free(t);
      return die("eval", rc);
    }
    char* summary = mmr_trainer_eval(t, eval_log.empty() ? nullptr : eval_log.c_str());
    mmr_trainer_free(t);
    if (!summary) return die("eval", MMR_ERR);
    std::printf("%s\n", summary);
    mmr_string_free(summary);
    return 0;
  }

  if (*heatmap) {
    int rc = mmr_heatmap_export(hm_episodes.c_str(), hm_env.c_str(),
                                hm_csv.empty() ? nullptr : hm_csv.c_str(),
                                hm_pgm.empty() ? nullptr : hm_pgm.c_str());
    if (rc != MMR_OK) return die("export-heatmap", rc);
    return 0;
  }

  if (*show) {
    int rc;
    mmr_config* cfg = build_config(show_args, rc);
    if (!cfg) return rc;
    char* text = mmr_config_emit(cfg);
    mmr_config_free(cfg);
    if (!text) return die("config", MMR_ERR);
    std::printf("%s", text);
    mmr_string_free(text);
    return 0;
  }

  return 0;
}
