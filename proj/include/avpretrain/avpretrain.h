/* avpretrain: cross-modal audio/overhead-image pretraining toolkit, C interface.
 *
 * All functions return an avp_status. On failure a message describing the error is
 * available from avp_last_error() on the calling thread until its next failing call.
 * Strings returned through char** out-parameters are heap-allocated and must be released
 * with avp_free(). Handles are not thread-safe; distinct handles may be used concurrently.
 */
#ifndef AVPRETRAIN_H
#define AVPRETRAIN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AVP_API __declspec(dllexport)
#else
#define AVP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum avp_status {
  AVP_OK = 0,
  AVP_ERR_INVALID_ARGUMENT = 1,
  AVP_ERR_IO = 2,
  AVP_ERR_FORMAT = 3,
  AVP_ERR_NUMERIC = 4,
  AVP_ERR_CHECKSUM = 5,
  AVP_ERR_VERSION = 6,
  AVP_ERR_STATE = 7,
  AVP_ERR_INTERNAL = 8
} avp_status;

typedef struct avp_config avp_config;
typedef struct avp_report avp_report;

/* Receives one line of progress text (JSON for training records). */
typedef void (*avp_log_fn)(const char* line, void* user);

AVP_API const char* avp_version(void);
AVP_API const char* avp_status_name(avp_status s);
AVP_API const char* avp_last_error(void);
AVP_API void avp_free(void* p);

/* ---- configuration ---- */

AVP_API avp_status avp_config_create(avp_config** out);
AVP_API void avp_config_destroy(avp_config* cfg);
/* Overlays the assignments of a key=value file onto cfg. */
AVP_API avp_status avp_config_load(avp_config* cfg, const char* path);
AVP_API avp_status avp_config_set(avp_config* cfg, const char* key, const char* value);
/* "key=value" */
AVP_API avp_status avp_config_apply(avp_config* cfg, const char* assignment);
AVP_API avp_status avp_config_get(const avp_config* cfg, const char* key, char** value);
AVP_API avp_status avp_config_to_text(const avp_config* cfg, char** text);

AVP_API size_t avp_config_key_count(void);
/* NULL when index is out of range. */
AVP_API const char* avp_config_key_name(size_t index);
AVP_API const char* avp_config_key_default(size_t index);
AVP_API const char* avp_config_key_help(size_t index);

/* ---- pipeline ---- */

/* Writes images/, audio/ and manifest.csv into out_dir. */
AVP_API avp_status avp_synth(const avp_config* cfg, const char* out_dir, size_t* entries);

/* Trains on the manifest's train split; writes train_log.jsonl, checkpoints/ and
 * final.ckpt into out_dir. resume_checkpoint may be NULL. */
AVP_API avp_status avp_train(const avp_config* cfg, const char* manifest, const char* out_dir,
                             const char* resume_checkpoint, avp_log_fn log, void* user);

/* Embeds the eval split with the checkpoint and writes visual.emb and audio.emb into
 * out_dir. Undecodable entries are skipped and reported through log. */
AVP_API avp_status avp_embed(const avp_config* cfg, const char* checkpoint, const char* manifest,
                             const char* out_dir, size_t* count, avp_log_fn log, void* user);

/* Nearest eval.top_k targets for one query id, as text lines "rank id distance". */
AVP_API avp_status avp_retrieve(const avp_config* cfg, const char* checkpoint, const char* manifest,
                                const char* query_id, char** listing);

AVP_API avp_status avp_eval(const avp_config* cfg, const char* checkpoint, const char* manifest,
                            avp_report** out);
AVP_API void avp_report_destroy(avp_report* r);
AVP_API size_t avp_report_size(const avp_report* r);
AVP_API double avp_report_median_rank(const avp_report* r);
AVP_API double avp_report_class_recall(const avp_report* r);
AVP_API double avp_report_baseline_median_rank(const avp_report* r);
/* Recall@k for a cutoff listed in eval.ks. */
AVP_API avp_status avp_report_recall(const avp_report* r, size_t k, double* recall);
/* 1-based rank of the true match for query i. */
AVP_API avp_status avp_report_rank(const avp_report* r, size_t i, size_t* rank);
AVP_API avp_status avp_report_json(const avp_report* r, char** json);
AVP_API avp_status avp_report_table(const avp_report* r, char** table);

/* Trains one run per loss (naive-triplet, batch-triplet, contrastive) under out_dir and
 * writes ablation.json and ablation.txt. Each arm runs ablate.steps steps (train.steps if 0). */
AVP_API avp_status avp_ablate(const avp_config* cfg, const char* manifest, const char* out_dir, char** table,
                              avp_log_fn log, void* user);

/* Finite-difference checks of the three losses and both toy encoders over `seeds` seeds
 * starting at the config seed. passed is set to 1 when every error is below 1e-3. */
AVP_API avp_status avp_grad_check(const avp_config* cfg, size_t seeds, char** table, int* passed);

#ifdef __cplusplus
}
#endif

#endif
