#ifndef FLIM_FLIM_H
#define FLIM_FLIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(FLIM_BUILDING_LIBRARY)
#define FLIM_API __attribute__((visibility("default")))
#else
#define FLIM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum flim_status {
  FLIM_OK = 0,
  FLIM_ERR_IO = 1,
  FLIM_ERR_FORMAT = 2,
  FLIM_ERR_VALIDATION = 3,
  FLIM_ERR_SHAPE = 4,
  FLIM_ERR_ARGUMENT = 5,
  FLIM_ERR_STRATIFICATION = 6,
  FLIM_ERR_VERSION = 7,
  FLIM_ERR_CONFLICT = 8,
  FLIM_ERR_NOT_FOUND = 9,
  FLIM_ERR_INTERNAL = 10
} flim_status;

typedef enum flim_log_level { FLIM_LOG_INFO = 0, FLIM_LOG_WARNING = 1 } flim_log_level;

typedef struct flim_image flim_image;
typedef struct flim_model flim_model;
typedef struct flim_experiment flim_experiment;

typedef void (*flim_log_fn)(flim_log_level level, const char* message, void* user);
typedef void (*flim_ready_fn)(int port, void* user);

FLIM_API const char* flim_version(void);
FLIM_API const char* flim_status_string(flim_status status);
/* Message of the last failed call on this thread; "" if none. */
FLIM_API const char* flim_last_error(void);
/* NULL restores the default sink (warnings to stderr). */
FLIM_API void flim_set_log_callback(flim_log_fn fn, void* user);

/* height/width of 0 keep the native size; channels 0 keeps the native count. */
FLIM_API flim_status flim_image_load(const char* path, size_t height, size_t width, size_t channels, flim_image** out);
FLIM_API void flim_image_shape(const flim_image* image, size_t* height, size_t* width, size_t* channels);
/* Row-major, channel-last. */
FLIM_API const float* flim_image_data(const flim_image* image);
FLIM_API void flim_image_free(flim_image* image);

FLIM_API flim_status flim_model_load(const char* path, flim_model** out);
FLIM_API flim_status flim_model_save(const flim_model* model, const char* path);
FLIM_API void flim_model_free(flim_model* model);
FLIM_API size_t flim_model_class_count(const flim_model* model);
FLIM_API size_t flim_model_layer_count(const flim_model* model);
/* layer is 1-based; returns 0 when out of range. */
FLIM_API size_t flim_model_filter_count(const flim_model* model, size_t layer);
FLIM_API size_t flim_model_head_count(const flim_model* model);
FLIM_API const char* flim_model_head_name(const flim_model* model, size_t head);
/* Writes up to capacity values; *length receives the full feature count. */
FLIM_API flim_status flim_model_extract(const flim_model* model, const flim_image* image, float* out, size_t capacity,
                                        size_t* length);
FLIM_API flim_status flim_model_predict(const flim_model* model, const flim_image* image, size_t head, int* label);

FLIM_API flim_status flim_experiment_open(const char* config_path, flim_experiment** out);
FLIM_API void flim_experiment_free(flim_experiment* experiment);
/* Overrides every seed in the config. */
FLIM_API flim_status flim_experiment_set_seed(flim_experiment* experiment, uint64_t seed);
FLIM_API flim_status flim_experiment_set_output_dir(flim_experiment* experiment, const char* dir);
FLIM_API flim_status flim_experiment_set_markers_dir(flim_experiment* experiment, const char* dir);

FLIM_API flim_status flim_experiment_split(flim_experiment* experiment, size_t* train_count, size_t* test_count);
/* *manifest_json stays valid until the next call on this handle. */
FLIM_API flim_status flim_experiment_select(flim_experiment* experiment, const char** manifest_json);
FLIM_API flim_status flim_experiment_train(flim_experiment* experiment, int require_all_markers);
FLIM_API flim_status flim_experiment_extract(flim_experiment* experiment);
/* *table stays valid until the next call on this handle. */
FLIM_API flim_status flim_experiment_evaluate(flim_experiment* experiment, const char** table);
/* Blocks serving HTTP. on_ready receives the bound port (useful with port 0). */
FLIM_API flim_status flim_experiment_serve(flim_experiment* experiment, const char* host, int port,
                                           flim_ready_fn on_ready, void* user);

#ifdef __cplusplus
}
#endif

#endif
