#ifndef HALK_HALK_H
#define HALK_HALK_H

/* C interface to the k-th order spline highly adaptive lasso.
 *
 * Every function returning int reports HALK_OK, HALK_E_INPUT (malformed
 * input, bad arguments, schema mismatch) or HALK_E_NUMERIC (solver or
 * numerical failure). On failure halk_last_error() describes the problem; the
 * message is per thread and stays valid until the next failing call on that
 * thread. Strings returned through char** are owned by the caller and must be
 * released with halk_string_free. */

#include <stddef.h>

#if defined(_WIN32)
#  if defined(HALK_BUILDING_LIBRARY)
#    define HALK_API __declspec(dllexport)
#  else
#    define HALK_API __declspec(dllimport)
#  endif
#else
#  define HALK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum { HALK_OK = 0, HALK_E_INPUT = 2, HALK_E_NUMERIC = 3 };

typedef struct halk_model halk_model;
typedef struct halk_fit_options halk_fit_options;
typedef struct halk_ci_options halk_ci_options;

HALK_API const char* halk_version(void);
HALK_API const char* halk_last_error(void);
HALK_API void halk_string_free(char* s);

/* 0 restores the default (HALK_THREADS, else hardware concurrency). */
HALK_API int halk_set_threads(unsigned threads);
HALK_API unsigned halk_get_threads(void);

/* Fit options, set as key/value strings:
 *   family       gaussian | weighted_gaussian | binomial
 *   estimator    hal | relax | sieve
 *   selector     cv | lepski | c-cv-hal
 *   k            comma list of spline orders, e.g. "0,1"
 *   restriction  comma list of full | edge_constant | max_interaction:<p>
 *   j_max        comma list of knot caps per chain; "n" or 0 for all
 *   c_values     comma list of L1 bounds (instead of the lambda path)
 *   folds, seed, chain_cap, lambda_count, lambda_ratio
 *   unpenalize_parametric   true | false
 *   lepski_constant, lepski_ratio, lepski_steps
 *   lepski_variance         orthonormal | delta
 *   binary       comma list of binary covariate columns (CSV fits)
 *   weights      weight column (CSV fits) */
HALK_API int halk_fit_options_create(halk_fit_options** out);
HALK_API void halk_fit_options_free(halk_fit_options* opt);
HALK_API int halk_fit_options_set(halk_fit_options* opt, const char* key, const char* value);

/* Covariates are every column except y and the weight column. cv_report_json
 * may be NULL. */
HALK_API int halk_fit_csv(const char* data_path, const char* y_column, const halk_fit_options* opt,
                          halk_model** out, char** cv_report_json);

/* X is row-major n x d; binary (length d, may be NULL) flags binary columns;
 * w may be NULL. */
HALK_API int halk_fit(const double* X, size_t n, size_t d, const int* binary, const double* y,
                      const double* w, const halk_fit_options* opt, halk_model** out,
                      char** cv_report_json);

HALK_API void halk_model_free(halk_model* model);
HALK_API int halk_model_save(const halk_model* model, const char* path);
HALK_API int halk_model_load(const char* path, halk_model** out);
HALK_API int halk_model_to_json(const halk_model* model, char** json);
HALK_API int halk_model_from_json(const char* json, halk_model** out);

/* Covariate count, nonzero coefficients and dictionary size. */
HALK_API int halk_model_shape(const halk_model* model, size_t* covariates, size_t* support,
                              size_t* dictionary);

/* Linear predictor and mean (expit for binomial); either output may be NULL. */
HALK_API int halk_predict(const halk_model* model, const double* X, size_t n, size_t d, double* eta,
                          double* mean);
HALK_API int halk_predict_csv(const halk_model* model, const char* data_path, const char* out_path);

/* Inference options, set as key/value strings:
 *   level (0.95), method (orthonormal | delta),
 *   band (pointwise | log-scaled | mvn-quantile), scale (linear | probability),
 *   seed, mc_samples */
HALK_API int halk_ci_options_create(halk_ci_options** out);
HALK_API void halk_ci_options_free(halk_ci_options* opt);
HALK_API int halk_ci_options_set(halk_ci_options* opt, const char* key, const char* value);

/* Intervals on a grid. The training data must be the data the model was fit
 * on. Outputs have length m; info_json (may be NULL) receives d_eff, the band
 * multiplier and warnings. */
HALK_API int halk_ci(const halk_model* model, const double* X_train, size_t n, size_t d,
                     const double* y, const double* w, const double* grid, size_t m,
                     const halk_ci_options* opt, double* estimate, double* se, double* lower,
                     double* upper, char** info_json);

/* Writes x..., estimate, se, lower, upper. */
HALK_API int halk_ci_csv(const halk_model* model, const char* train_path, const char* grid_path,
                         const halk_ci_options* opt, const char* out_path, char** info_json);

/* Runs the experiment described by a JSON config and writes replicates.csv
 * and summary.json into out_dir (created if needed). */
HALK_API int halk_simulate(const char* config_path, const char* out_dir, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif
