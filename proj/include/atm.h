#ifndef ATM_H
#define ATM_H

/* C interface to the arithmetic temporal modeling library.  All entry points
 * return an atm_status; on failure atm_last_error() describes the problem for
 * the calling thread.  Strings returned through out-parameters are owned by
 * the caller and must be released with atm_free_string(). */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum atm_status {
  ATM_OK = 0,
  ATM_ERR_INVALID_ARGUMENT = 1,
  ATM_ERR_IO = 2,
  ATM_ERR_NUMERIC = 3,
  ATM_ERR_CONFIG = 4,
  ATM_ERR_INTERNAL = 5
} atm_status;

/* Message for the most recent failure on this thread; empty string if none. */
const char* atm_last_error(void);

void atm_free_string(char* s);

/* Writes <out_dir>/<split>/<label>/<seed>.atmc for a balanced synthetic
 * dataset.  dataset_json uses the same keys as the "dataset" object of a
 * training config. */
atm_status atm_dataset_generate(const char* dataset_json, const char* out_dir);

/* Trains per config_json and returns the run report (epochs, test_top1, macs,
 * wall_ms, config).  When model_out is non-NULL the trained weights are also
 * written there. */
atm_status atm_train(const char* config_json, const char* model_out, char** report_json);

/* Loads weights written by atm_train and re-evaluates the test split;
 * *top1 receives the accuracy in [0, 1]. */
atm_status atm_evaluate(const char* model_path, double* top1);

/* Finite-difference gradient sweep.  *all_pass is 1 when every entry is under
 * its threshold. */
atm_status atm_gradcheck(int instances_per_check, char** report_json, int* all_pass);

/* MAC table for one module config (atm_json, same keys as the "atm" object of
 * a training config) over a comma-separated list of context sizes. */
atm_status atm_flops_table(const char* atm_json, int64_t t, int64_t c, int64_t h, int64_t w,
                           const char* z_list, char** table_json);

/* Renders the four op response maps of a generated blob pair as PGM files in
 * out_dir; *paths_json receives a JSON array of the file paths. */
atm_status atm_visualize(const char* out_dir, int image_size, double shift_px, char** paths_json);

/* Runs one training per cell of the grid (keys: ops, z, extractor, style,
 * include_baseline), writing per-cell reports under out_dir. */
atm_status atm_ablate(const char* base_config_json, const char* grid_json, const char* out_dir,
                      char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* ATM_H */
