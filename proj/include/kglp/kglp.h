#ifndef KGLP_KGLP_H
#define KGLP_KGLP_H

/* C interface to the link-prediction library. Every call returns a status
 * code; the message for the last failure on a session is kept until the
 * next call on that session. */

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define KGLP_API __declspec(dllexport)
#else
#define KGLP_API __attribute__((visibility("default")))
#endif

typedef enum kglp_status {
  KGLP_OK = 0,
  KGLP_ERR_RUNTIME = 1, /* training diverged, I/O failure, internal error */
  KGLP_ERR_CONFIG = 2,
  KGLP_ERR_DATA = 3,
  KGLP_ERR_INVALID_ARGUMENT = 4 /* null handle or pointer */
} kglp_status;

typedef struct kglp_session kglp_session;

/* Receives one JSON object per line of progress output. */
typedef void (*kglp_log_fn)(const char* json_line, void* user);

KGLP_API const char* kglp_version(void);

KGLP_API kglp_status kglp_session_create(kglp_session** out);
KGLP_API void kglp_session_destroy(kglp_session* s);

/* Reads a `key = value` config file; relative paths resolve against its
 * directory. At most once per session; overrides apply on top of it. */
KGLP_API kglp_status kglp_load_config(kglp_session* s, const char* path);
/* Applies one override in `key=value` form. */
KGLP_API kglp_status kglp_set(kglp_session* s, const char* key_value);
KGLP_API kglp_status kglp_set_log(kglp_session* s, kglp_log_fn fn, void* user);

KGLP_API kglp_status kglp_train(kglp_session* s);
KGLP_API kglp_status kglp_eval(kglp_session* s);
KGLP_API kglp_status kglp_zeroshot(kglp_session* s);
KGLP_API kglp_status kglp_export(kglp_session* s);
KGLP_API kglp_status kglp_split_stats(kglp_session* s);

/* JSON summary of the last successful verb; empty string before one. */
KGLP_API const char* kglp_result_json(const kglp_session* s);
/* Message for the last failure; empty string after a success. */
KGLP_API const char* kglp_last_error(const kglp_session* s);

#ifdef __cplusplus
}
#endif

#endif
