#ifndef COOPREC_H
#define COOPREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  COOP_STATUS_OK = 0,
  COOP_STATUS_NULL_POINTER = 1,
  COOP_STATUS_INVALID_ARGUMENT = 2,
  COOP_STATUS_CONFIG = 3,
  COOP_STATUS_DIMENSION = 4,
  COOP_STATUS_CONTRACT = 5,
  COOP_STATUS_GENERATION = 6,
  COOP_STATUS_CODEC = 7,
  COOP_STATUS_CHECKPOINT = 8,
  COOP_STATUS_INVARIANT = 9,
  COOP_STATUS_IO = 10,
  COOP_STATUS_BUFFER_TOO_SMALL = 11,
  COOP_STATUS_PANIC = 12,
} CoopStatus;

typedef struct CoopConfig CoopConfig;

typedef struct CoopMessage CoopMessage;

/**
 * A network together with the config it was built for.
 */
typedef struct CoopModel CoopModel;

typedef struct CoopScene CoopScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length excluding the terminator.
 */
size_t coop_last_error(char *buf, size_t cap);

CoopStatus coop_config_default(CoopConfig **out);

/**
 * Parses a key=value document on top of the defaults.
 */
CoopStatus coop_config_parse(const char *text, CoopConfig **out);

/**
 * Sets one key and revalidates; the config is unchanged on failure.
 */
CoopStatus coop_config_set(CoopConfig *cfg, const char *key, const char *value);

void coop_config_free(CoopConfig *cfg);

CoopStatus coop_scene_generate(const CoopConfig *cfg, uint64_t seed, CoopScene **out);

CoopStatus coop_scene_agent_count(const CoopScene *scene, size_t *out);

/**
 * Grid height, width and channel count of every raster in the scene.
 */
CoopStatus coop_scene_dims(const CoopScene *scene, size_t *h, size_t *w, size_t *c);

/**
 * Copies an agent's own-sensor raster (HWC, f32) into `buf`.
 */
CoopStatus coop_scene_raw_bev(const CoopScene *scene, size_t agent, float *buf, size_t len);

/**
 * Copies an agent's all-agent aggregated raster (HWC, f32) into `buf`.
 */
CoopStatus coop_scene_supervisory_bev(const CoopScene *scene, size_t agent, float *buf, size_t len);

void coop_scene_free(CoopScene *scene);

/**
 * Freshly initialized network for `cfg`.
 */
CoopStatus coop_model_new(const CoopConfig *cfg, uint64_t seed, CoopModel **out);

CoopStatus coop_model_load(const CoopConfig *cfg, const char *path, CoopModel **out);

CoopStatus coop_model_save(const CoopModel *model, const char *path);

/**
 * Vehicle labels (0 or 1, row-major H*W) for `ego` under the model
 * config's regime. `exchange_seed` fixes neighbor cell selection.
 */
CoopStatus coop_model_segment(const CoopModel *model,
                              const CoopScene *scene,
                              size_t ego,
                              uint64_t exchange_seed,
                              uint8_t *labels,
                              size_t len);

/**
 * The message `agent` would send: encoded, channel-compressed and
 * spatially selected with `select_seed`.
 */
CoopStatus coop_model_message(const CoopModel *model,
                              const CoopScene *scene,
                              size_t agent,
                              uint64_t select_seed,
                              CoopMessage **out);

void coop_model_free(CoopModel *model);

/**
 * Parses wire bytes into a message handle.
 */
CoopStatus coop_message_decode(const uint8_t *bytes, size_t len, CoopMessage **out);

/**
 * Serializes into `buf`. `written` always receives the required size, so a
 * first call with `cap == 0` sizes the buffer.
 */
CoopStatus coop_message_encode(const CoopMessage *msg, uint8_t *buf, size_t cap, size_t *written);

/**
 * Sender id, grid size, compressed channel count and number of entries.
 */
CoopStatus coop_message_info(const CoopMessage *msg,
                             uint16_t *agent_id,
                             uint16_t *grid_h,
                             uint16_t *grid_w,
                             uint8_t *channels,
                             size_t *count);

void coop_message_free(CoopMessage *msg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPREC_H */
