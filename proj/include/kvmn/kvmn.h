/* C interface to the kvmn library. All strings are UTF-8. Strings returned
 * through char** out-parameters are owned by the caller and must be released
 * with kvmn_free_string. On failure the message is available from
 * kvmn_last_error() on the same thread. */
#ifndef KVMN_KVMN_H
#define KVMN_KVMN_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define KVMN_API __declspec(dllexport)
#else
#define KVMN_API __attribute__((visibility("default")))
#endif

/* Values double as process exit codes for the command-line tool. */
typedef enum kvmn_status {
  KVMN_OK = 0,
  KVMN_ERR_USAGE = 1,
  KVMN_ERR_DATA = 2,
  KVMN_ERR_NUMERIC = 3
} kvmn_status;

typedef struct kvmn_model kvmn_model;

KVMN_API const char* kvmn_version(void);
KVMN_API const char* kvmn_last_error(void);
KVMN_API void kvmn_free_string(char* s);

/* config_json: flat JSON object, NULL for defaults. Missing "seed" falls back
 * to $KVMN_SEED. Uses the synthetic vocabulary of config.vocab entries. */
KVMN_API kvmn_status kvmn_model_create(const char* config_json, kvmn_model** out);
/* Vocabulary built from the dataset captions; config.vocab is replaced. */
KVMN_API kvmn_status kvmn_model_create_for_dataset(const char* config_json, const char* data_path,
                                                   kvmn_model** out);
/* overrides_json may be NULL. Structural overrides fail with KVMN_ERR_DATA. */
KVMN_API kvmn_status kvmn_model_load(const char* path, const char* overrides_json, kvmn_model** out);
KVMN_API kvmn_status kvmn_model_save(const kvmn_model* model, const char* path);
KVMN_API void kvmn_model_destroy(kvmn_model* model);

KVMN_API kvmn_status kvmn_model_config(const kvmn_model* model, char** config_json);
KVMN_API kvmn_status kvmn_model_step(const kvmn_model* model, uint64_t* step);

/* Runs config.steps updates. data_path NULL trains on the synthetic task.
 * out_dir NULL skips loss.log and checkpoint files. final_loss may be NULL. */
KVMN_API kvmn_status kvmn_train(kvmn_model* model, const char* data_path, const char* out_dir, double* final_loss);

/* data_path NULL evaluates config.episodes held-out synthetic episodes.
 * Writes {"bleu4": .., "token_acc": .., "n": ..}. */
KVMN_API kvmn_status kvmn_evaluate(const kvmn_model* model, const char* data_path, char** report_json);

/* One JSON line per episode: {"id", "caption", "log_prob"}. */
KVMN_API kvmn_status kvmn_decode(const kvmn_model* model, const char* data_path, char** jsonl);

/* Returns KVMN_ERR_NUMERIC when any error reaches the tolerance; the report is
 * written either way. max_error may be NULL. */
KVMN_API kvmn_status kvmn_gradcheck(const char* config_json, char** report_json, double* max_error);

KVMN_API kvmn_status kvmn_generate_dataset(const char* config_json, const char* path);

#ifdef __cplusplus
}
#endif

#endif
