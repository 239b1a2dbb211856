#ifndef MMREACH_H
#define MMREACH_H

/* C interface to the mmreach training stack. All functions returning int use
 * the mmr_status codes below; on any failure mmr_last_error() holds a message
 * until the next call on the same thread. Strings returned as char* are owned
 * by the caller and must be released with mmr_string_free(). */

#ifdef __cplusplus
extern "C" {
#endif

typedef struct mmr_config mmr_config;
typedef struct mmr_trainer mmr_trainer;

enum mmr_status {
  MMR_OK = 0,
  MMR_ERR = 1,        /* internal contract or unexpected failure */
  MMR_ERR_CONFIG = 2, /* bad configuration value, key or file */
  MMR_ERR_IO = 3      /* missing or malformed file, checkpoint, demo set */
};

const char* mmr_version(void);
const char* mmr_last_error(void);
void mmr_string_free(char* s);

/* Configuration. Load applies MMREACH_* environment overrides; parse does
 * not. Keys use dotted paths ("wm.h_dim"); values are parsed as JSON with a
 * plain-string fallback, so mmr_config_set(c, "seed", "7") and
 * mmr_config_set(c, "demo_variant", "no-demo") both work. */
mmr_config* mmr_config_default(void);
mmr_config* mmr_config_load(const char* path);
mmr_config* mmr_config_parse(const char* json_text);
int mmr_config_set(mmr_config* cfg, const char* key, const char* value);
char* mmr_config_emit(const mmr_config* cfg);
void mmr_config_free(mmr_config* cfg);

/* Writes cfg->demo_count scripted demonstrations for cfg->env as JSONL. */
int mmr_demos_generate(const mmr_config* cfg, const char* out_path);

mmr_trainer* mmr_trainer_new(const mmr_config* cfg);
void mmr_trainer_free(mmr_trainer* t);

/* Demos come either from a JSONL file or from the seeded generator. */
int mmr_trainer_load_demos(mmr_trainer* t, const char* path);
int mmr_trainer_generate_demos(mmr_trainer* t);

int mmr_trainer_pretrain(mmr_trainer* t);

/* Full training pipeline; writes metrics.csv, eval.csv, eval_episodes.jsonl,
 * heatmap.csv/.pgm and checkpoint/ under out_dir. */
int mmr_trainer_run(mmr_trainer* t, const char* out_dir);

int mmr_trainer_save_checkpoint(mmr_trainer* t, const char* dir);
int mmr_trainer_load_checkpoint(mmr_trainer* t, const char* dir);

/* One evaluation round of cfg->eval_episodes episodes. Returns a JSON
 * summary (success_rate, arm_near_goal, first_arm_ratio, ...). When
 * episodes_jsonl_path is non-NULL the per-episode logs are appended there. */
char* mmr_trainer_eval(mmr_trainer* t, const char* episodes_jsonl_path);

/* Rebuilds the arm-selection heatmap from an eval episode log. Either of
 * csv_path / pgm_path may be NULL to skip that output. */
int mmr_heatmap_export(const char* episodes_jsonl_path, const char* env_name,
                       const char* csv_path, const char* pgm_path);

#ifdef __cplusplus
}
#endif

#endif /* MMREACH_H */
