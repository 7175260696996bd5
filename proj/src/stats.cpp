#include "octquant/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "octquant/parallel.hpp"

namespace octquant {

void DesignMatrix::validate() const {
  if (n == 0 || k == 0 || x.size() != n * k || y.size() != n)
    fail(ErrorCode::InvalidValue, "design matrix shape is inconsistent");
  if (n <= k)
    fail(ErrorCode::InvalidValue,
         "need more observations than columns (n=" + std::to_string(n) +
             ", k=" + std::to_string(k) + ")");
  for (double v : x)
    if (!std::isfinite(v))
      fail(ErrorCode::InvalidValue, "non-finite covariate entry");
  for (double v : y)
    if (!std::isfinite(v))
      fail(ErrorCode::InvalidValue, "non-finite response entry");
}

// ---------------------------------------------------------------------------
// Distribution helpers
// ---------------------------------------------------------------------------

namespace {

// Continued fraction for the incomplete beta (Lentz's method).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  if (t == 0.0) return 1.0;
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(df / 2.0, 0.5, x);
}

double student_t_quantile(double prob, double df) {
  if (!(prob > 0.5 && prob < 1.0))
    fail(ErrorCode::InvalidValue, "t quantile needs prob in (0.5, 1)");
  const double target = 2.0 * (1.0 - prob);  // two-sided tail mass
  double lo = 0.0, hi = 64.0;
  while (student_t_two_sided_p(hi, df) > target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_two_sided_p(mid, df) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double normal_two_sided_p(double z) {
  if (!std::isfinite(z)) return 0.0;
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

// ---------------------------------------------------------------------------
// Least squares core (Householder QR)
// ---------------------------------------------------------------------------

namespace {

struct LeastSquares {
  std::vector<double> beta;     // k
  std::vector<double> xtx_inv;  // k x k, (XᵀX)⁻¹
  double rss = 0.0;
};

// Solves min ||X beta - y||²; a is consumed (row-major n x k).
LeastSquares solve_least_squares(std::size_t n, std::size_t k,
                                 std::vector<double> a,
                                 std::vector<double> y) {
  std::vector<double> rdiag(k, 0.0);

  for (std::size_t j = 0; j < k; ++j) {
    double norm_sq = 0.0;
    for (std::size_t i = j; i < n; ++i) norm_sq += a[i * k + j] * a[i * k + j];
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) {
      rdiag[j] = 0.0;
      continue;
    }
    const double alpha = a[j * k + j] >= 0.0 ? -norm : norm;
    // Householder vector stored in place of column j below the diagonal.
    a[j * k + j] -= alpha;
    double v_sq = 0.0;
    for (std::size_t i = j; i < n; ++i) v_sq += a[i * k + j] * a[i * k + j];
    if (v_sq > 0.0) {
      for (std::size_t col = j + 1; col < k; ++col) {
        double dot = 0.0;
        for (std::size_t i = j; i < n; ++i)
          dot += a[i * k + j] * a[i * k + col];
        const double f = 2.0 * dot / v_sq;
        for (std::size_t i = j; i < n; ++i)
          a[i * k + col] -= f * a[i * k + j];
      }
      double dot = 0.0;
      for (std::size_t i = j; i < n; ++i) dot += a[i * k + j] * y[i];
      const double f = 2.0 * dot / v_sq;
      for (std::size_t i = j; i < n; ++i) y[i] -= f * a[i * k + j];
    }
    rdiag[j] = alpha;
  }

  double max_diag = 0.0;
  for (double d : rdiag) max_diag = std::max(max_diag, std::abs(d));
  for (double d : rdiag)
    if (std::abs(d) <= 1e-10 * std::max(1.0, max_diag))
      fail(ErrorCode::SingularDesign,
           "design matrix is rank deficient (collinear columns)");

  // R sits in the upper triangle with rdiag on the diagonal.
  auto r_at = [&](std::size_t i, std::size_t j) {
    return i == j ? rdiag[i] : a[i * k + j];
  };

  LeastSquares out;
  out.beta.assign(k, 0.0);
  for (std::size_t ri = k; ri-- > 0;) {
    double v = y[ri];
    for (std::size_t j = ri + 1; j < k; ++j) v -= r_at(ri, j) * out.beta[j];
    out.beta[ri] = v / r_at(ri, ri);
  }

  out.rss = 0.0;
  for (std::size_t i = k; i < n; ++i) out.rss += y[i] * y[i];

  // R⁻¹ by back substitution, then (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ.
  std::vector<double> rinv(k * k, 0.0);
  for (std::size_t col = 0; col < k; ++col) {
    for (std::size_t ri = col + 1; ri-- > 0;) {
      double v = ri == col ? 1.0 : 0.0;
      for (std::size_t j = ri + 1; j <= col; ++j)
        v -= r_at(ri, j) * rinv[j * k + col];
      rinv[ri * k + col] = v / r_at(ri, ri);
    }
  }
  out.xtx_inv.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double v = 0.0;
      for (std::size_t m = std::max(i, j); m < k; ++m)
        v += rinv[i * k + m] * rinv[j * k + m];
      out.xtx_inv[i * k + j] = v;
    }
  return out;
}

double safe_wald_stat(double beta, double se) {
  if (se > 0.0) return beta / se;
  return beta == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace

// ---------------------------------------------------------------------------
// Welch's t-test and VIF
// ---------------------------------------------------------------------------

WelchResult welch_t(double mean1, double sd1, std::size_t n1, double mean2,
                    double sd2, std::size_t n2) {
  if (n1 < 2 || n2 < 2)
    fail(ErrorCode::DegenerateGroup, "each group needs at least 2 samples");
  if (!(sd1 > 0.0) || !(sd2 > 0.0))
    fail(ErrorCode::DegenerateGroup, "standard deviations must be positive");

  const double v1 = sd1 * sd1 / static_cast<double>(n1);
  const double v2 = sd2 * sd2 / static_cast<double>(n2);
  WelchResult out;
  out.t = (mean1 - mean2) / std::sqrt(v1 + v2);
  out.df = (v1 + v2) * (v1 + v2) /
           (v1 * v1 / static_cast<double>(n1 - 1) +
            v2 * v2 / static_cast<double>(n2 - 1));
  out.p = student_t_two_sided_p(out.t, out.df);
  return out;
}

std::vector<double> vif(const DesignMatrix& design) {
  design.validate();
  if (design.k < 3)
    fail(ErrorCode::InvalidValue,
         "VIF needs at least 2 non-intercept columns");

  std::vector<double> out;
  out.reserve(design.k - 1);
  for (std::size_t j = 1; j < design.k; ++j) {
    // Regress column j on every other column (intercept included).
    std::vector<double> aux(design.n * (design.k - 1));
    std::vector<double> yj(design.n);
    for (std::size_t i = 0; i < design.n; ++i) {
      std::size_t col = 0;
      for (std::size_t m = 0; m < design.k; ++m) {
        if (m == j) continue;
        aux[i * (design.k - 1) + col++] = design.at(i, m);
      }
      yj[i] = design.at(i, j);
    }
    const double mean =
        std::accumulate(yj.begin(), yj.end(), 0.0) / double(design.n);
    double tss = 0.0;
    for (double v : yj) tss += (v - mean) * (v - mean);
    if (tss <= 0.0)
      fail(ErrorCode::SingularDesign,
           "column " + std::to_string(j) + " is constant");

    const auto fit =
        solve_least_squares(design.n, design.k - 1, std::move(aux), yj);
    const double r_sq = 1.0 - fit.rss / tss;
    if (r_sq >= 1.0 - 1e-12)
      fail(ErrorCode::SingularDesign,
           "column " + std::to_string(j) +
               " is a linear combination of the others");
    out.push_back(1.0 / (1.0 - r_sq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// GLM fits
// ---------------------------------------------------------------------------

FitResult glm_gaussian(const DesignMatrix& design) {
  design.validate();
  const std::size_t n = design.n, k = design.k;
  const auto fit = solve_least_squares(n, k, design.x, design.y);

  FitResult out;
  out.family = Family::Gaussian;
  out.n = n;
  out.k = k;
  out.iterations = 1;
  out.deviance = fit.rss;
  const double df = static_cast<double>(n - k);
  out.dispersion = fit.rss / df;
  const double t_crit = student_t_quantile(0.975, df);

  out.coefficients = fit.beta;
  out.std_errors.resize(k);
  out.ci_lower.resize(k);
  out.ci_upper.resize(k);
  out.p_raw.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double se = std::sqrt(std::max(0.0, out.dispersion) *
                                fit.xtx_inv[j * k + j]);
    out.std_errors[j] = se;
    out.ci_lower[j] = fit.beta[j] - t_crit * se;
    out.ci_upper[j] = fit.beta[j] + t_crit * se;
    out.p_raw[j] = student_t_two_sided_p(safe_wald_stat(fit.beta[j], se), df);
  }
  return out;
}

namespace {

double tweedie_unit_deviance(double y, double mu, double p) {
  // Valid for p outside {1, 2}; the y^(2-p) term vanishes at y = 0 for p < 2.
  const double term_y =
      y > 0.0 ? std::pow(y, 2.0 - p) / ((1.0 - p) * (2.0 - p)) : 0.0;
  const double term_cross = y * std::pow(mu, 1.0 - p) / (1.0 - p);
  const double term_mu = std::pow(mu, 2.0 - p) / (2.0 - p);
  return 2.0 * (term_y - term_cross + term_mu);
}

}  // namespace

FitResult glm_tweedie(const DesignMatrix& design, double power, LinkFn link) {
  design.validate();
  if (power == 1.0 || power == 2.0)
    fail(ErrorCode::InvalidValue,
         "variance power 1 and 2 are not supported by this deviance");
  const std::size_t n = design.n, k = design.k;

  if (power != 0.0) {
    bool any_positive = false;
    for (double v : design.y) {
      if (v < 0.0)
        fail(ErrorCode::NegativeResponse,
             "Tweedie responses must be non-negative");
      any_positive |= v > 0.0;
    }
    if (!any_positive)
      fail(ErrorCode::InvalidValue,
           "Tweedie fit needs at least one positive response");
  }

  const double y_mean =
      std::accumulate(design.y.begin(), design.y.end(), 0.0) / double(n);

  std::vector<double> mu(n), eta(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (link == LinkFn::Log) {
      mu[i] = design.y[i] + std::max(y_mean, 1e-8) / 2.0;
      eta[i] = std::log(mu[i]);
    } else {
      mu[i] = power == 0.0 ? design.y[i]
                           : std::max(design.y[i], std::max(y_mean, 1e-8));
      eta[i] = mu[i];
    }
  }

  constexpr std::size_t kMaxIters = 100;
  constexpr double kRelTol = 1e-8;
  double deviance = std::numeric_limits<double>::infinity();
  LeastSquares wls;
  std::size_t iter = 0;
  bool converged = false;

  std::vector<double> xw(n * k), zw(n);
  while (iter < kMaxIters) {
    ++iter;
    for (std::size_t i = 0; i < n; ++i) {
      double w, z;
      if (link == LinkFn::Log) {
        w = std::pow(mu[i], 2.0 - power);
        z = eta[i] + (design.y[i] - mu[i]) / mu[i];
      } else {
        w = power == 0.0 ? 1.0 : std::pow(mu[i], -power);
        z = design.y[i];
      }
      const double sw = std::sqrt(w);
      for (std::size_t j = 0; j < k; ++j)
        xw[i * k + j] = sw * design.at(i, j);
      zw[i] = sw * z;
    }
    wls = solve_least_squares(n, k, xw, zw);

    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < k; ++j) e += design.at(i, j) * wls.beta[j];
      e = std::clamp(e, -300.0, 300.0);
      eta[i] = e;
      mu[i] = link == LinkFn::Log ? std::exp(e) : e;
      if (power != 0.0) mu[i] = std::max(mu[i], 1e-12);
      dev += tweedie_unit_deviance(design.y[i], mu[i], power);
    }

    const double change = std::abs(dev - deviance);
    deviance = dev;
    if (change < kRelTol * (std::abs(dev) + 1e-10) || dev < 1e-14) {
      converged = true;
      break;
    }
  }
  if (!converged)
    fail(ErrorCode::NonConvergence,
         "IRLS did not converge within " + std::to_string(kMaxIters) +
             " iterations (deviance " + std::to_string(deviance) + ")");

  double pearson = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double resid = design.y[i] - mu[i];
    const double var = power == 0.0 ? 1.0 : std::pow(mu[i], power);
    pearson += resid * resid / var;
  }

  FitResult out;
  out.family = Family::Tweedie;
  out.n = n;
  out.k = k;
  out.iterations = iter;
  out.deviance = deviance;
  out.dispersion = pearson / static_cast<double>(n - k);

  out.coefficients = wls.beta;
  out.std_errors.resize(k);
  out.ci_lower.resize(k);
  out.ci_upper.resize(k);
  out.p_raw.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double se =
        std::sqrt(std::max(0.0, out.dispersion) * wls.xtx_inv[j * k + j]);
    out.std_errors[j] = se;
    out.ci_lower[j] = wls.beta[j] - 1.96 * se;
    out.ci_upper[j] = wls.beta[j] + 1.96 * se;
    out.p_raw[j] = normal_two_sided_p(safe_wald_stat(wls.beta[j], se));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg
// ---------------------------------------------------------------------------

std::vector<double> bh_fdr(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      fail(ErrorCode::InvalidValue, "p-values must lie in [0, 1]");
  if (m == 0) return {};

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return p_values[a] < p_values[b];
  });

  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t rank = m; rank-- > 0;) {
    const double scaled =
        p_values[order[rank]] * static_cast<double>(m) / double(rank + 1);
    running = std::min(running, std::min(scaled, 1.0));
    adjusted[order[rank]] = running;
  }
  return adjusted;
}

// ---------------------------------------------------------------------------
// Study drivers
// ---------------------------------------------------------------------------

namespace {

struct CellPlan {
  int class_id;
  int sector;
  Family family;
};

std::vector<CellPlan> plan_cells(bool tweedie_for_pathology) {
  std::vector<CellPlan> plan;
  // Bounded layers, CS excluded per the foveal exclusion.
  for (int c = label::kRnfl; c <= label::kRpe; ++c)
    for (std::size_t s = 1; s < kNumSectors; ++s)
      plan.push_back({c, static_cast<int>(s), Family::Gaussian});
  // Pathology volumes over all nine sectors.
  for (int c : {label::kFluid, label::kHrf})
    for (std::size_t s = 0; s < kNumSectors; ++s)
      plan.push_back({c, static_cast<int>(s),
                      tweedie_for_pathology ? Family::Tweedie
                                            : Family::Gaussian});
  return plan;
}

void apply_fdr(StudyReport& report, double alpha) {
  for (Family family : {Family::Gaussian, Family::Tweedie}) {
    std::vector<std::size_t> idx;
    std::vector<double> p;
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
      const StudyCell& cell = report.cells[i];
      if (cell.ok && cell.family == family) {
        idx.push_back(i);
        p.push_back(cell.p_raw);
      }
    }
    if (p.empty()) continue;
    const auto adjusted = bh_fdr(p);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      StudyCell& cell = report.cells[idx[j]];
      cell.p_fdr = adjusted[j];
      cell.significant_raw = cell.p_raw < alpha;
      cell.significant_fdr = adjusted[j] < alpha;
    }
  }
}

// Fits one cell; coefficient of interest sits in column 1.
void fit_cell(StudyCell& cell, const std::vector<const StudyRecord*>& subjects,
              const MeasurementTable& measurements, bool response_is_va,
              double tweedie_power) {
  std::vector<double> rows;
  std::vector<double> response;
  const CellKey key{cell.class_id, cell.sector};
  for (const StudyRecord* rec : subjects) {
    const auto it = measurements.find(rec->subject_id);
    if (it == measurements.end()) continue;
    const auto mit = it->second.find(key);
    if (mit == it->second.end()) continue;
    const double value = mit->second;
    if (response_is_va) {
      rows.insert(rows.end(), {1.0, value, rec->age,
                               static_cast<double>(rec->gender),
                               rec->diabetes_duration});
      response.push_back(rec->va_logmar);
    } else {
      rows.insert(rows.end(), {1.0, static_cast<double>(rec->group), rec->age,
                               static_cast<double>(rec->gender),
                               rec->diabetes_duration});
      response.push_back(value);
    }
  }

  DesignMatrix design;
  design.k = 5;
  design.n = response.size();
  design.x = std::move(rows);
  design.y = std::move(response);
  design.names = response_is_va
                     ? std::vector<std::string>{"intercept", "thickness",
                                                "age", "gender", "duration"}
                     : std::vector<std::string>{"intercept", "group", "age",
                                                "gender", "duration"};
  cell.n_subjects = design.n;

  try {
    const FitResult fit = cell.family == Family::Tweedie
                              ? glm_tweedie(design, tweedie_power)
                              : glm_gaussian(design);
    cell.ok = true;
    cell.coefficient = fit.coefficients[1];
    cell.std_error = fit.std_errors[1];
    cell.ci_lower = fit.ci_lower[1];
    cell.ci_upper = fit.ci_upper[1];
    cell.p_raw = fit.p_raw[1];
  } catch (const Error& e) {
    cell.ok = false;
    cell.error = e.what();
  }
}

StudyReport run_study(std::string name, bool response_is_va,
                      std::span<const StudyRecord> cohort,
                      const MeasurementTable& measurements,
                      double tweedie_power, bool tweedie_for_pathology) {
  if (cohort.empty())
    fail(ErrorCode::InvalidValue, "cohort has no subjects");

  std::vector<const StudyRecord*> subjects;
  subjects.reserve(cohort.size());
  for (const StudyRecord& rec : cohort) subjects.push_back(&rec);

  StudyReport report;
  report.study = std::move(name);
  report.tweedie_power = tweedie_power;
  const auto plan = plan_cells(tweedie_for_pathology);
  report.cells.resize(plan.size());
  parallel_for(plan.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      StudyCell& cell = report.cells[i];
      cell.class_id = plan[i].class_id;
      cell.sector = plan[i].sector;
      cell.family = plan[i].family;
      fit_cell(cell, subjects, measurements, response_is_va, tweedie_power);
    }
  });
  apply_fdr(report, report.alpha);
  return report;
}

}  // namespace

StudyReport run_group_study(std::span<const StudyRecord> cohort,
                            const MeasurementTable& measurements,
                            double tweedie_power) {
  return run_study("group", false, cohort, measurements, tweedie_power,
                   /*tweedie_for_pathology=*/true);
}

StudyReport run_va_study(std::span<const StudyRecord> cohort,
                         const MeasurementTable& measurements, int group,
                         double tweedie_power) {
  std::vector<StudyRecord> filtered;
  for (const StudyRecord& rec : cohort)
    if (rec.group == group) filtered.push_back(rec);
  if (filtered.empty())
    fail(ErrorCode::InvalidValue,
         "no subjects in group " + std::to_string(group));
  return run_study("va", true, filtered, measurements, tweedie_power,
                   /*tweedie_for_pathology=*/false);
}

}  // namespace octquant
