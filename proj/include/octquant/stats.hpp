#pragma once

// The statistical pipeline: Welch's t-test, variance inflation factors,
// Gaussian GLM (OLS), compound Poisson-Gamma (Tweedie) GLM via IRLS,
// Benjamini-Hochberg FDR, and the two study drivers (group comparison and
// visual-acuity association).

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "octquant/core.hpp"
#include "octquant/thickness.hpp"

namespace octquant {

/// Covariate matrix (n x k, intercept column first) plus the response.
struct DesignMatrix {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> x;  // row-major n*k
  std::vector<double> y;
  std::vector<std::string> names;  // one per column

  double at(std::size_t i, std::size_t j) const { return x[i * k + j]; }
  double& at(std::size_t i, std::size_t j) { return x[i * k + j]; }
  /// Throws InvalidValue unless n > k and all entries are finite.
  void validate() const;
};

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Welch's unequal-variance t-test from summary statistics, with the
/// Welch-Satterthwaite degrees of freedom.
WelchResult welch_t(double mean1, double sd1, std::size_t n1, double mean2,
                    double sd2, std::size_t n2);

/// VIF_j = 1 / (1 - R²_j) for every non-intercept column, R²_j from
/// regressing column j on the remaining columns.
std::vector<double> vif(const DesignMatrix& design);

enum class Family { Gaussian, Tweedie };
enum class LinkFn { Log, Identity };

struct FitResult {
  Family family = Family::Gaussian;
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> ci_lower;  // 95%: t-critical (Gaussian) or 1.96
  std::vector<double> ci_upper;
  std::vector<double> p_raw;  // two-sided, per coefficient
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t iterations = 0;
  double deviance = 0.0;
  double dispersion = 0.0;
};

/// OLS via Householder QR; SE from sigma²(XᵀX)⁻¹, inference on n-k df.
FitResult glm_gaussian(const DesignMatrix& design);

/// IRLS with variance function V(mu) = mu^power. Converges when the relative
/// deviance change drops below 1e-8 (100 iterations cap); dispersion is
/// Pearson chi² / (n - k); Wald inference on the normal approximation.
FitResult glm_tweedie(const DesignMatrix& design, double power = 1.5,
                      LinkFn link = LinkFn::Log);

/// Benjamini-Hochberg step-up adjusted p-values, original order preserved.
std::vector<double> bh_fdr(std::span<const double> p_values);

// Distribution helpers, exposed for the test oracles.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, double df);
double student_t_quantile(double prob, double df);  // prob in (0.5, 1)
double normal_two_sided_p(double z);

/// Per-subject measurement lookup: (class id, sector index) -> value.
using CellKey = std::pair<int, int>;
using MeasurementTable = std::map<std::string, std::map<CellKey, double>>;

struct StudyCell {
  int class_id = 0;
  int sector = 0;  // index into Sector
  Family family = Family::Gaussian;
  bool ok = false;
  std::string error;  // set when the fit failed; cell skipped by FDR
  double coefficient = 0.0;
  double std_error = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double p_raw = 1.0;
  std::optional<double> p_fdr;
  bool significant_raw = false;
  bool significant_fdr = false;
  std::size_t n_subjects = 0;
};

struct StudyReport {
  std::string study;  // "group" or "va"
  double alpha = 0.05;
  double tweedie_power = 1.5;
  std::vector<StudyCell> cells;
};

/// Per layer x sector: thickness ~ group + age + gender + duration.
/// Gaussian family for layer thickness (CS excluded per the foveal
/// exclusion), Tweedie for pathology volumes (all nine sectors). FDR is
/// applied within each family batch; a positive group coefficient means
/// thicker in PDR. Failed fits are recorded per cell, analysis continues.
StudyReport run_group_study(std::span<const StudyRecord> cohort,
                            const MeasurementTable& measurements,
                            double tweedie_power = 1.5);

/// Within one group: va_logmar ~ thickness + age + gender + duration
/// (Gaussian). A positive coefficient associates thickening with worse
/// vision.
StudyReport run_va_study(std::span<const StudyRecord> cohort,
                         const MeasurementTable& measurements, int group,
                         double tweedie_power = 1.5);

}  // namespace octquant
