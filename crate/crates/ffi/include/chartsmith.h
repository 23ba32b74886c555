#ifndef CHARTSMITH_H
#define CHARTSMITH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Number of bins written by [`chs_hsv_histogram`].
#define CHS_HSV_BINS 11

typedef enum ChsStatus {
  CHS_STATUS_OK = 0,
  CHS_STATUS_NULL_ARGUMENT = 1,
  CHS_STATUS_INVALID_ARGUMENT = 2,
  CHS_STATUS_DECODE_ERROR = 3,
  CHS_STATUS_PARSE_ERROR = 4,
  // A Rust panic was caught at the boundary.
  CHS_STATUS_INTERNAL = 5,
} ChsStatus;

typedef enum ChsStopMode {
  CHS_STOP_MODE_AVERAGE = 0,
  CHS_STOP_MODE_ALL_PASS = 1,
} ChsStopMode;

typedef enum ChsFacet {
  CHS_FACET_TEXT = 0,
  CHS_FACET_TYPE = 1,
  CHS_FACET_COLOR = 2,
  CHS_FACET_LAYOUT = 3,
} ChsFacet;

// Decoded RGB image.
typedef struct ChsImage ChsImage;

// Element trace parsed from sidecar JSON.
typedef struct ChsTrace ChsTrace;

typedef struct ChsFacetF1 {
  double precision;
  double recall;
  double f1;
  uintptr_t gold_count;
  uintptr_t gen_count;
  uintptr_t matched;
} ChsFacetF1;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *chs_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
uintptr_t chs_last_error(char *buf, uintptr_t len);

// Decodes PNG (or any supported format) bytes. Alpha is composited over white.
//
// # Safety
// `data` must be valid for `len` bytes; `out` must be writable.
enum ChsStatus chs_image_decode(const uint8_t *data, uintptr_t len, struct ChsImage **out);

// Wraps raw interleaved RGB8 pixels; `len` must equal `width * height * 3`.
//
// # Safety
// `rgb` must be valid for `len` bytes; `out` must be writable.
enum ChsStatus chs_image_from_rgb(uint32_t width,
                                  uint32_t height,
                                  const uint8_t *rgb,
                                  uintptr_t len,
                                  struct ChsImage **out);

// Width in pixels; 0 for null.
//
// # Safety
// `img` must be null or a live handle.
uint32_t chs_image_width(const struct ChsImage *img);

// Height in pixels; 0 for null.
//
// # Safety
// `img` must be null or a live handle.
uint32_t chs_image_height(const struct ChsImage *img);

// # Safety
// `img` must be null or a handle not yet freed.
void chs_image_free(struct ChsImage *img);

// Cosine similarity of the two images' 11-bin HSV histograms, in [0, 1].
//
// # Safety
// Handles must be live; `out` writable.
enum ChsStatus chs_color_score(const struct ChsImage *a, const struct ChsImage *b, double *out);

// Mean SSIM of the grayscale images resized to 256x256, clamped to [0, 1].
//
// # Safety
// Handles must be live; `out` writable.
enum ChsStatus chs_structure_score(const struct ChsImage *a, const struct ChsImage *b, double *out);

// Writes [`CHS_HSV_BINS`] pixel counts: red, orange, yellow, green, cyan,
// blue, purple, magenta, white, gray, black.
//
// # Safety
// `img` must be live; `counts` writable for 11 values.
enum ChsStatus chs_hsv_histogram(const struct ChsImage *img, uint64_t *counts);

// Jaccard index of the token sets of two newline-separated texts.
//
// # Safety
// Both strings must be NUL-terminated; `out` writable.
enum ChsStatus chs_text_jaccard(const char *a, const char *b, double *out);

// Applies the stop rule to three criterion scores at `round`.
//
// # Safety
// Out-pointers must be writable.
enum ChsStatus chs_verify(double color,
                          double text,
                          double structure,
                          enum ChsStopMode mode,
                          double threshold,
                          double decay_per_round,
                          uint32_t round,
                          bool *out_passed,
                          double *out_threshold);

// Parses sidecar JSON (`{"texts","chart_types","colors","layout"}`).
//
// # Safety
// `json` must be NUL-terminated; `out` writable.
enum ChsStatus chs_trace_parse(const char *json, struct ChsTrace **out);

// # Safety
// `trace` must be null or a handle not yet freed.
void chs_trace_free(struct ChsTrace *trace);

// Multiset precision/recall/F1 of one facet, gold vs. generated.
//
// # Safety
// Handles must be live; `out` writable.
enum ChsStatus chs_facet_f1(const struct ChsTrace *gold,
                            const struct ChsTrace *generated,
                            enum ChsFacet facet,
                            struct ChsFacetF1 *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHARTSMITH_H */
