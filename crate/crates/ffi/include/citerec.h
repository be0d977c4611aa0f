#ifndef CITEREC_H
#define CITEREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum CiterecStatus {
  CITEREC_STATUS_OK = 0,
  CITEREC_STATUS_NULL_ARGUMENT = 1,
  CITEREC_STATUS_INVALID_UTF8 = 2,
  CITEREC_STATUS_IO = 3,
  /*
   Malformed config, checkpoint, index or request JSON.
   */
  CITEREC_STATUS_FORMAT = 4,
  /*
   The request failed validation (empty text, k out of range).
   */
  CITEREC_STATUS_INVALID_REQUEST = 5,
  /*
   The request has no in-vocabulary tokens.
   */
  CITEREC_STATUS_UNEMBEDDABLE = 6,
  CITEREC_STATUS_INTERNAL = 7,
} CiterecStatus;

/*
 A loaded model. Opaque to C; immutable after opening, so one engine may
 serve several threads.
 */
typedef struct CiterecEngine CiterecEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Opens a model directory written by the `citerec` CLI. `config_path` may
 be null for default settings. On success `*out` receives an engine to be
 released with [`citerec_engine_free`].

 # Safety
 `model_dir` and a non-null `config_path` must be NUL-terminated strings;
 `out` must be a valid pointer to writable storage.
 */
enum CiterecStatus citerec_engine_open(const char *model_dir,
                                       const char *config_path,
                                       struct CiterecEngine **out);

/*
 Releases an engine. Null is ignored.

 # Safety
 `engine` must be null or a pointer from [`citerec_engine_open`] that has
 not been freed.
 */
void citerec_engine_free(struct CiterecEngine *engine);

/*
 Number of documents in the engine's corpus, or 0 for a null engine.

 # Safety
 `engine` must be null or a live engine.
 */
size_t citerec_engine_corpus_size(const struct CiterecEngine *engine);

/*
 Answers a JSON recommendation request (`title`, `abstract`, optional
 `authors`, `venue`, `keyphrases`, `k`, `mode`). On success `*out_json`
 receives the JSON response.

 # Safety
 `engine` must be a live engine, `request_json` a NUL-terminated string
 and `out_json` a valid pointer to writable storage.
 */
enum CiterecStatus citerec_recommend_json(const struct CiterecEngine *engine,
                                          const char *request_json,
                                          char **out_json);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string from this library that has not been freed.
 */
void citerec_string_free(char *s);

/*
 Message of the last failure on this thread, or null. Valid until the
 next call into this library on the same thread.
 */
const char *citerec_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *citerec_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CITEREC_H */
