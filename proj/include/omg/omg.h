/* C interface to the omg motion generator. All functions are thread-safe with
 * respect to distinct handles; error text is kept per thread. */
#ifndef OMG_OMG_H
#define OMG_OMG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define OMG_API __attribute__((visibility("default")))
#else
#define OMG_API
#endif

/* Status values double as CLI exit codes. */
typedef enum omg_status {
  OMG_OK = 0,
  OMG_ERR_INTERNAL = 1,
  OMG_ERR_CONFIG = 2,
  OMG_ERR_DATA = 3,
  OMG_ERR_DIVERGED = 4,
  OMG_ERR_CHECKPOINT = 5,
  OMG_ERR_UNKNOWN_PROMPT = 6
} omg_status;

typedef struct omg_model omg_model;
typedef struct omg_embedder omg_embedder;

typedef struct omg_sample_params {
  int length;      /* frames */
  int steps;       /* DDIM steps */
  double s;        /* guidance strength */
  double eta;
  uint64_t seed;
} omg_sample_params;

OMG_API const char* omg_version(void);

/* Message and fine-grained code of the last failure on this thread. */
OMG_API const char* omg_last_error(void);
OMG_API int omg_last_error_code(void);

/* Frees strings returned through char** out-parameters. */
OMG_API void omg_free_string(char* s);

/* Nonzero forces single-threaded execution everywhere. */
OMG_API void omg_set_serial(int serial);

/* Runs a command ("pretrain", "finetune", "sample", "eval", "gen-data") with
 * a JSON config overlaying the command defaults. On success *report_json (if
 * non-null) receives a JSON summary. */
OMG_API omg_status omg_run(const char* command, const char* config_json, char** report_json);

/* The fully resolved config for a command, as JSON. */
OMG_API omg_status omg_effective_config(const char* command, const char* config_json, char** out_json);

OMG_API void omg_default_sample_params(omg_sample_params* params);

/* Loads a backbone checkpoint, a controlnet checkpoint, or both. Either path
 * may be null, not both. */
OMG_API omg_status omg_model_load(const char* backbone_path, const char* controlnet_path, omg_model** out);
OMG_API void omg_model_free(omg_model* model);
OMG_API omg_status omg_model_info(const omg_model* model, char** out_json);
OMG_API int omg_model_input_dim(const omg_model* model);

/* Writes length * input_dim floats, row-major, into `frames`. A null prompt
 * samples unconditionally; otherwise `embedder` is required. */
OMG_API omg_status omg_model_sample(const omg_model* model, const omg_embedder* embedder, const char* prompt,
                                    const omg_sample_params* params, float* frames, size_t capacity);

OMG_API omg_status omg_embedder_stub(omg_embedder** out);
/* Reads an .omge file; with stub_fallback nonzero, unknown prompts use the stub. */
OMG_API omg_status omg_embedder_open(const char* path, int stub_fallback, omg_embedder** out);
OMG_API void omg_embedder_free(omg_embedder* embedder);
/* Copies the prompt's eos embedding (768 floats) into `eos`. */
OMG_API omg_status omg_embedder_eos(const omg_embedder* embedder, const char* prompt, float* eos, size_t capacity);

#ifdef __cplusplus
}
#endif

#endif
