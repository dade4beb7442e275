/* C interface to the amoeba traffic-shaping lab. Generated by cbindgen; do not edit. */

#ifndef AMOEBA_H
#define AMOEBA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum AmoebaStatus {
  AMOEBA_OK = 0,
  AMOEBA_ERR_IO = 1,
  AMOEBA_ERR_PARSE = 2,
  AMOEBA_ERR_CONFIG = 3,
  AMOEBA_ERR_INPUT = 4,
  AMOEBA_ERR_SINGLE_CLASS = 5,
  AMOEBA_ERR_ENV = 6,
  AMOEBA_ERR_CHECKPOINT = 7,
  AMOEBA_ERR_NULL = 8,
  AMOEBA_ERR_UTF8 = 9,
  AMOEBA_ERR_PANIC = 10,
} AmoebaStatus;

/**
 * Transport profile of a dataset / environment.
 */
typedef enum AmoebaMode {
  AMOEBA_MODE_TCP = 0,
  AMOEBA_MODE_TLS = 1,
} AmoebaMode;

/**
 * Trained censoring classifier.
 */
typedef struct AmoebaCensor AmoebaCensor;

/**
 * Labeled flow dataset.
 */
typedef struct AmoebaDataset AmoebaDataset;

/**
 * Pretrained flow-prefix encoder.
 */
typedef struct AmoebaEncoder AmoebaEncoder;

/**
 * Shaping environment bound to a borrowed censor.
 */
typedef struct AmoebaEnv AmoebaEnv;

/**
 * Trained shaping policy (actor, critic, encoder).
 */
typedef struct AmoebaPolicy AmoebaPolicy;

/**
 * Everything one environment step reports back.
 */
typedef struct AmoebaStepOut {
  /**
   * Next observation; zeroed when `terminal` is set.
   */
  double pending_size;
  double base_delay;
  /**
   * 1 once the episode is over, else 0.
   */
  int32_t terminal;
  /**
   * 0 = truncation, 1 = pass, 2 = padding.
   */
  int32_t kind;
  int64_t emitted_size;
  double emitted_delay_ms;
  double added_delay_ms;
  /**
   * Censor score of the emitted prefix, in [0, 1].
   */
  double score;
  /**
   * 1 when the reward's censor feedback was masked to 0.5.
   */
  int32_t masked;
  double r_adv;
  double p_data;
  double p_time;
  double reward;
} AmoebaStepOut;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. Valid until
 * the next failing call from the same thread; never null.
 */
const char *amoeba_last_error(void);

/**
 * Library version as a static `major.minor.patch` string.
 */
const char *amoeba_version(void);

/**
 * Generates a synthetic labeled dataset of `n_flows` flows (half of them
 * sensitive) with the default generator settings for `mode`.
 */
enum AmoebaStatus amoeba_dataset_generate(size_t n_flows,
                                          enum AmoebaMode mode,
                                          uint64_t seed,
                                          struct AmoebaDataset **out);

/**
 * Reads a dataset from the CSV layout written by `amoeba_dataset_save_csv`.
 */
enum AmoebaStatus amoeba_dataset_load_csv(const char *path,
                                          enum AmoebaMode mode,
                                          struct AmoebaDataset **out);

/**
 * Writes the dataset as CSV (one row per packet).
 */
enum AmoebaStatus amoeba_dataset_save_csv(const struct AmoebaDataset *dataset, const char *path);

/**
 * Number of flows; 0 for a null handle.
 */
size_t amoeba_dataset_len(const struct AmoebaDataset *dataset);

/**
 * Borrows one flow's packet arrays. The views stay valid until the dataset
 * is freed. `label` is 0 for benign, 1 for sensitive.
 */
enum AmoebaStatus amoeba_dataset_flow(const struct AmoebaDataset *dataset,
                                      size_t index,
                                      const int64_t **sizes,
                                      const double **delays_ms,
                                      size_t *len,
                                      int32_t *label);

void amoeba_dataset_free(struct AmoebaDataset *dataset);

/**
 * Trains a censor on the dataset. `kind` is one of "dt", "rf", "cumul",
 * "sdae", "df", "lstm".
 */
enum AmoebaStatus amoeba_censor_train(const struct AmoebaDataset *dataset,
                                      const char *kind,
                                      uint64_t seed,
                                      struct AmoebaCensor **out);

/**
 * Scores a flow prefix; 1 reads as sensitive. The censor blocks when the
 * score exceeds 0.5.
 */
enum AmoebaStatus amoeba_censor_score(const struct AmoebaCensor *censor,
                                      const int64_t *sizes,
                                      const double *delays_ms,
                                      size_t len,
                                      double *score);

/**
 * Evaluates the censor on a labeled dataset. `metrics` receives
 * [accuracy, precision, recall, f1].
 */
enum AmoebaStatus amoeba_censor_metrics(const struct AmoebaCensor *censor,
                                        const struct AmoebaDataset *dataset,
                                        double *metrics);

enum AmoebaStatus amoeba_censor_save(const struct AmoebaCensor *censor, const char *path);

enum AmoebaStatus amoeba_censor_load(const char *path, struct AmoebaCensor **out);

void amoeba_censor_free(struct AmoebaCensor *censor);

/**
 * Pretrains the recurrent flow encoder on synthetic sequences. `h` is the
 * hidden width, `epochs` the training epochs, `n_train` the corpus size.
 */
enum AmoebaStatus amoeba_encoder_pretrain(size_t h,
                                          size_t epochs,
                                          size_t n_train,
                                          uint64_t seed,
                                          struct AmoebaEncoder **out);

enum AmoebaStatus amoeba_encoder_save(const struct AmoebaEncoder *encoder, const char *path);

enum AmoebaStatus amoeba_encoder_load(const char *path, struct AmoebaEncoder **out);

void amoeba_encoder_free(struct AmoebaEncoder *encoder);

/**
 * Creates a shaping environment that queries `censor` for rewards.
 * The censor is borrowed: it must stay alive until `amoeba_env_free`.
 */
enum AmoebaStatus amoeba_env_new(const struct AmoebaCensor *censor,
                                 enum AmoebaMode mode,
                                 double p_mask,
                                 uint64_t seed,
                                 struct AmoebaEnv **out);

/**
 * Starts an episode on the given original flow. `delays_ms[0]` must be 0.
 * `obs` receives [pending_size, base_delay].
 */
enum AmoebaStatus amoeba_env_reset(struct AmoebaEnv *env,
                                   const int64_t *sizes,
                                   const double *delays_ms,
                                   size_t len,
                                   double *obs);

/**
 * Applies one shaping action. `size_frac` in [-1, 1] picks the emitted
 * size (sign is overridden by the payload direction); `delta_delay_frac`
 * in [0, 1] adds that fraction of the delay budget.
 */
enum AmoebaStatus amoeba_env_step(struct AmoebaEnv *env,
                                  double size_frac,
                                  double delta_delay_frac,
                                  struct AmoebaStepOut *out);

void amoeba_env_free(struct AmoebaEnv *env);

/**
 * Trains a shaping policy against the censor on the dataset's sensitive
 * flows for `total_timesteps` environment steps.
 */
enum AmoebaStatus amoeba_policy_train(const struct AmoebaCensor *censor,
                                      const struct AmoebaEncoder *encoder,
                                      const struct AmoebaDataset *dataset,
                                      size_t total_timesteps,
                                      uint64_t seed,
                                      struct AmoebaPolicy **out);

/**
 * Shapes every sensitive flow in the dataset with the trained policy and
 * measures the attack. `stats` receives [attack success rate,
 * data overhead, time overhead, early block rate].
 */
enum AmoebaStatus amoeba_policy_attack(const struct AmoebaPolicy *policy,
                                       const struct AmoebaCensor *censor,
                                       const struct AmoebaDataset *dataset,
                                       double *stats);

/**
 * Saves the policy (actor, critic, encoder, config) into a directory.
 */
enum AmoebaStatus amoeba_policy_save(const struct AmoebaPolicy *policy, const char *dir);

enum AmoebaStatus amoeba_policy_load(const char *dir, struct AmoebaPolicy **out);

void amoeba_policy_free(struct AmoebaPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMOEBA_H */
