#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>
#include <json.hpp>

#include "spinlab/aht.hpp"
#include "spinlab/constants.hpp"
#include "spinlab/engine.hpp"
#include "spinlab/errors.hpp"

namespace spinlab {

struct Spectrum {
  std::vector<double> freq_hz; // ascending, zero in the middle
  std::vector<cplx> amp;
  double df = 0.0;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

} // namespace detail

// S(f) = (1/N) sum_n x_n exp(+2 pi i f t_n). With this kernel a spin whose
// offset w > 0 (signal ~ exp(-i w t)) appears at +w/2pi.
inline Spectrum echo_spectrum(const std::vector<double>& t, const std::vector<cplx>& x, std::size_t zero_pad = 4) {
  const std::size_t n = x.size();
  if (n < 8 || t.size() != n) throw AnalysisError(AnalysisError::Reason::bad_input, "echo_spectrum needs >= 8 samples");
  if (zero_pad < 1) throw AnalysisError(AnalysisError::Reason::bad_input, "zero padding factor must be >= 1");
  const double dt = (t.back() - t.front()) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw AnalysisError(AnalysisError::Reason::bad_input, "sample times must increase");
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-9)
      throw AnalysisError(AnalysisError::Reason::bad_input, "samples are not uniformly spaced");

  const std::size_t m = n * zero_pad;
  std::vector<cplx> buf(m, cplx(0.0));
  std::copy(x.begin(), x.end(), buf.begin());
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(m), data, data, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  Spectrum s;
  s.df = 1.0 / (static_cast<double>(m) * dt);
  s.freq_hz.resize(m);
  s.amp.resize(m);
  // bin k <-> frequency k df (k < m/2) or (k - m) df; shift so f ascends
  const std::size_t half = m / 2;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = (i + half + (m % 2)) % m;
    const long kk = k < (m + 1) / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(m);
    s.freq_hz[i] = static_cast<double>(kk) * s.df;
    s.amp[i] = buf[k] / static_cast<double>(n);
  }
  return s;
}

struct SidePeak {
  double amplitude = 0.0; // integral of |S| between half-maximum crossings, Hz-weighted
  double peak_hz = 0.0;
  double peak_magnitude = 0.0;
  double lower_hz = 0.0;
  double upper_hz = 0.0;
};

// Integrates |S| between the half-maximum crossings of the largest local
// maximum within +/-50% of the expected offset.
inline SidePeak sidepeak(const Spectrum& s, double expected_hz) {
  const std::size_t m = s.amp.size();
  if (m < 3) throw AnalysisError(AnalysisError::Reason::bad_input, "spectrum too short");
  if (expected_hz == 0.0) throw AnalysisError(AnalysisError::Reason::bad_input, "expected offset must be nonzero");
  std::vector<double> mag(m);
  for (std::size_t i = 0; i < m; ++i) mag[i] = std::abs(s.amp[i]);
  const double lo = expected_hz - 0.5 * std::abs(expected_hz);
  const double hi = expected_hz + 0.5 * std::abs(expected_hz);

  std::optional<std::size_t> best;
  for (std::size_t i = 1; i + 1 < m; ++i) {
    if (s.freq_hz[i] < lo || s.freq_hz[i] > hi) continue;
    if (!(mag[i] >= mag[i - 1] && mag[i] >= mag[i + 1] && (mag[i] > mag[i - 1] || mag[i] > mag[i + 1]))) continue;
    if (!best || mag[i] > mag[*best] ||
        (mag[i] == mag[*best] && std::abs(s.freq_hz[i] - expected_hz) < std::abs(s.freq_hz[*best] - expected_hz)))
      best = i;
  }
  if (!best) {
    const auto gmax = static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
    if (std::abs(s.freq_hz[gmax]) < 0.5 * std::abs(expected_hz))
      throw AnalysisError(AnalysisError::Reason::center_peak_only,
                          "no side-peak near " + std::to_string(expected_hz) + " Hz; only a center peak is present");
    throw AnalysisError(AnalysisError::Reason::no_peak_in_window,
                        "no local maximum within +/-50% of " + std::to_string(expected_hz) + " Hz");
  }
  const std::size_t p = *best;
  const double half = 0.5 * mag[p];

  // walk out to the first bin below half maximum on each side
  std::size_t l = p;
  while (l > 0 && mag[l - 1] >= half) --l;
  std::size_t r = p;
  while (r + 1 < m && mag[r + 1] >= half) ++r;

  SidePeak out;
  out.peak_hz = s.freq_hz[p];
  out.peak_magnitude = mag[p];
  double area = 0.0;
  for (std::size_t i = l; i < r; ++i) area += 0.5 * (mag[i] + mag[i + 1]) * (s.freq_hz[i + 1] - s.freq_hz[i]);
  out.lower_hz = s.freq_hz[l];
  out.upper_hz = s.freq_hz[r];
  if (l > 0) {
    // crossing between l-1 (below half) and l (at or above)
    const double f = (mag[l] - half) / (mag[l] - mag[l - 1]);
    const double fc = s.freq_hz[l] - f * (s.freq_hz[l] - s.freq_hz[l - 1]);
    area += 0.5 * (half + mag[l]) * (s.freq_hz[l] - fc);
    out.lower_hz = fc;
  }
  if (r + 1 < m) {
    const double f = (mag[r] - half) / (mag[r] - mag[r + 1]);
    const double fc = s.freq_hz[r] + f * (s.freq_hz[r + 1] - s.freq_hz[r]);
    area += 0.5 * (half + mag[r]) * (fc - s.freq_hz[r]);
    out.upper_hz = fc;
  }
  out.amplitude = area;
  return out;
}

inline double sidepeak_amplitude(const Spectrum& s, double expected_hz) { return sidepeak(s, expected_hz).amplitude; }

struct EchoPoint {
  int segment = 0;
  double time = 0.0; // mean sample time of the segment
  double amplitude = 0.0;
  double peak_hz = 0.0;
};

struct EchoExtraction {
  std::vector<EchoPoint> echoes;
  std::vector<std::pair<int, std::string>> failures; // segment, reason
};

// One side-peak amplitude per inter-pi segment.
inline EchoExtraction echo_amplitudes(const EchoTrain& train, double expected_hz, std::size_t zero_pad = 4) {
  EchoExtraction out;
  for (int s = 0; s < train.segment_count(); ++s) {
    const auto [b, e] = train.segment_range(s);
    if (e <= b) continue;
    std::vector<double> t(train.times.begin() + static_cast<std::ptrdiff_t>(b),
                          train.times.begin() + static_cast<std::ptrdiff_t>(e));
    std::vector<cplx> x(train.values.begin() + static_cast<std::ptrdiff_t>(b),
                        train.values.begin() + static_cast<std::ptrdiff_t>(e));
    try {
      const SidePeak p = sidepeak(echo_spectrum(t, x, zero_pad), expected_hz);
      double tm = 0.0;
      for (double v : t) tm += v;
      out.echoes.push_back({s, tm / static_cast<double>(t.size()), p.amplitude, p.peak_hz});
    } catch (const AnalysisError& err) {
      out.failures.emplace_back(s, err.what());
    }
  }
  return out;
}

struct FitResult {
  enum class Model { single_exp, double_exp, power_law };
  Model model = Model::single_exp;
  std::vector<std::string> names;
  std::vector<double> params;
  std::vector<double> sigmas;
  double residual_norm = 0.0;
  std::size_t n_points = 0;
  bool converged = false;
  std::string note;

  [[nodiscard]] double value(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return params[i];
    throw DomainError("fit has no parameter '" + name + "'");
  }
  [[nodiscard]] double sigma(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return sigmas[i];
    throw DomainError("fit has no parameter '" + name + "'");
  }
};

inline std::string to_string(FitResult::Model m) {
  switch (m) {
  case FitResult::Model::single_exp: return "single_exp";
  case FitResult::Model::double_exp: return "double_exp";
  case FitResult::Model::power_law: return "power_law";
  }
  return "single_exp";
}

inline nlohmann::json to_json(const FitResult& f) {
  nlohmann::json p = nlohmann::json::object();
  for (std::size_t i = 0; i < f.names.size(); ++i) p[f.names[i]] = {{"value", f.params[i]}, {"sigma", f.sigmas[i]}};
  return {{"model", to_string(f.model)}, {"parameters", p},       {"residual_norm", f.residual_norm},
          {"n_points", f.n_points},      {"converged", f.converged}, {"note", f.note}};
}

namespace detail {

struct LmOutcome {
  Eigen::VectorXd p;
  Eigen::MatrixXd jtj;
  double sse = 0.0;
  bool converged = false;
};

// Levenberg-Marquardt on residuals r(p) with Jacobian J(p). `model` fills
// both and returns false when p is outside the model's domain.
inline LmOutcome levenberg_marquardt(const std::function<bool(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)>& model,
                                     Eigen::VectorXd p, int max_iter = 500) {
  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  LmOutcome out;
  if (!model(p, r, j)) {
    out.p = p;
    return out;
  }
  double sse = r.squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    bool improved = false;
    for (int tries = 0; tries < 60 && !improved; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      Eigen::VectorXd r2;
      Eigen::MatrixXd j2;
      if (step.allFinite() && model(trial, r2, j2)) {
        const double sse2 = r2.squaredNorm();
        if (sse2 <= sse) {
          const bool small_step = step.norm() <= 1e-13 * (p.norm() + 1e-13);
          const bool small_gain = sse - sse2 <= 1e-15 * sse;
          p = trial;
          r = r2;
          j = j2;
          sse = sse2;
          lambda = std::max(lambda / 10.0, 1e-15);
          improved = true;
          if (small_step || small_gain || sse == 0.0) {
            out.converged = true;
            it = max_iter;
          }
          continue;
        }
      }
      lambda *= 10.0;
    }
    if (!improved) {
      // no downhill step at any damping: at a minimum to working precision
      out.converged = g.norm() <= 1e-8 * (1.0 + std::sqrt(sse)) * std::max(1.0, j.norm()) || sse < 1e-28;
      break;
    }
  }
  out.p = p;
  out.jtj = j.transpose() * j;
  out.sse = sse;
  return out;
}

inline std::vector<double> covariance_sigmas(const Eigen::MatrixXd& jtj, double sse, std::size_t n, std::size_t k) {
  std::vector<double> s(k, 0.0);
  if (n <= k) return s;
  const double s2 = sse / static_cast<double>(n - k);
  const Eigen::MatrixXd cov = jtj.completeOrthogonalDecomposition().pseudoInverse() * s2;
  for (std::size_t i = 0; i < k; ++i) s[i] = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i))));
  return s;
}

inline void check_points(const std::vector<double>& t, const std::vector<double>& y, std::size_t min_n, bool positive) {
  if (t.size() != y.size()) throw DomainError("fit: time and amplitude counts differ");
  if (t.size() < min_n) throw DomainError("fit needs at least " + std::to_string(min_n) + " points");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i]) || !std::isfinite(y[i])) throw DomainError("fit: non-finite input");
    if (positive && !(y[i] > 0.0)) throw DomainError("fit: amplitudes must be positive");
  }
}

} // namespace detail

// A exp(-t / T2); LM from a log-linear start, sigmas from the linearized
// covariance at the optimum.
inline FitResult fit_single_exponential(const std::vector<double>& t, const std::vector<double>& y) {
  detail::check_points(t, y, 3, true);
  const std::size_t n = t.size();
  std::vector<double> ly(n);
  for (std::size_t i = 0; i < n; ++i) ly[i] = std::log(y[i]);
  double mt = 0, ml = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += t[i];
    ml += ly[i];
  }
  mt /= static_cast<double>(n);
  ml /= static_cast<double>(n);
  double stt = 0, stl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    stt += (t[i] - mt) * (t[i] - mt);
    stl += (t[i] - mt) * (ly[i] - ml);
  }
  if (!(stt > 0.0)) throw DomainError("fit: all times coincide");
  const double slope = stl / stt;
  const double a0 = std::exp(ml - slope * mt);
  const double t0 = slope < 0.0 ? -1.0 / slope : 1e3 * (t.back() - t.front() + 1.0);

  FitResult f;
  f.model = FitResult::Model::single_exp;
  f.names = {"A", "T2"};
  f.n_points = n;
  // solve in (A, k = 1/T2) which keeps the problem well scaled
  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
    if (!(p[1] > 0.0)) return false;
    r.resize(static_cast<Eigen::Index>(n));
    j.resize(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(-p[1] * t[i]);
      const auto ii = static_cast<Eigen::Index>(i);
      r[ii] = p[0] * e - y[i];
      j(ii, 0) = e;
      j(ii, 1) = -p[0] * t[i] * e;
    }
    return true;
  };
  const detail::LmOutcome lm = detail::levenberg_marquardt(model, Eigen::Vector2d(a0, 1.0 / t0));
  if (!lm.converged) {
    f.params = {a0, t0};
    f.sigmas = {0.0, 0.0};
    f.converged = false;
    f.note = "did not converge; log-linear estimate reported";
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) sse += std::pow(a0 * std::exp(-t[i] / t0) - y[i], 2);
    f.residual_norm = std::sqrt(sse);
    return f;
  }
  const auto s = detail::covariance_sigmas(lm.jtj, lm.sse, n, 2);
  const double k = lm.p[1];
  f.params = {lm.p[0], 1.0 / k};
  f.sigmas = {s[0], s[1] / (k * k)};
  f.residual_norm = std::sqrt(lm.sse);
  f.converged = true;
  return f;
}

// A exp(-t / Ta) + B exp(-t / Tb), Ta < Tb. Deterministic multi-start over
// Ta in {0.03, 0.1, 0.3} span and Tb in {0.3, 1, 3} span.
inline FitResult fit_double_exponential(const std::vector<double>& t, const std::vector<double>& y) {
  detail::check_points(t, y, 6, false);
  const std::size_t n = t.size();
  const double span = *std::max_element(t.begin(), t.end()) - *std::min_element(t.begin(), t.end());
  if (!(span > 0.0)) throw DomainError("fit: all times coincide");

  // parameters (A, ka, B, kb) with rates k = 1/T
  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
    if (!(p[1] > 0.0 && p[3] > 0.0)) return false;
    r.resize(static_cast<Eigen::Index>(n));
    j.resize(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double ea = std::exp(-p[1] * t[i]);
      const double eb = std::exp(-p[3] * t[i]);
      r[ii] = p[0] * ea + p[2] * eb - y[i];
      j(ii, 0) = ea;
      j(ii, 1) = -p[0] * t[i] * ea;
      j(ii, 2) = eb;
      j(ii, 3) = -p[2] * t[i] * eb;
    }
    return true;
  };

  std::optional<detail::LmOutcome> best;
  for (double fa : {0.03, 0.1, 0.3})
    for (double fb : {0.3, 1.0, 3.0}) {
      const double ka = 1.0 / (fa * span);
      const double kb = 1.0 / (fb * span);
      if (ka == kb) continue;
      // amplitudes by linear least squares for the starting rates
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), 2);
      Eigen::VectorXd yy(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        m(ii, 0) = std::exp(-ka * t[i]);
        m(ii, 1) = std::exp(-kb * t[i]);
        yy[ii] = y[i];
      }
      const Eigen::Vector2d ab = m.colPivHouseholderQr().solve(yy);
      Eigen::Vector4d p0(ab[0], ka, ab[1], kb);
      const detail::LmOutcome lm = detail::levenberg_marquardt(model, p0, 2000);
      if (!lm.p.allFinite()) continue;
      if (!best || (lm.converged && !best->converged) || (lm.converged == best->converged && lm.sse < best->sse))
        best = lm;
    }

  FitResult f;
  f.model = FitResult::Model::double_exp;
  f.names = {"A", "Ta", "B", "Tb"};
  f.n_points = n;
  if (!best) {
    f.params = {0, 0, 0, 0};
    f.sigmas = {0, 0, 0, 0};
    f.note = "no start produced a finite fit";
    return f;
  }
  Eigen::VectorXd p = best->p;
  std::vector<double> s = detail::covariance_sigmas(best->jtj, best->sse, n, 4);
  if (p[1] < p[3]) { // enforce Ta < Tb, i.e. ka > kb
    std::swap(p[0], p[2]);
    std::swap(p[1], p[3]);
    std::swap(s[0], s[2]);
    std::swap(s[1], s[3]);
  }
  const double total = std::abs(p[0]) + std::abs(p[2]);
  const bool degenerate = std::abs(p[1] - p[3]) <= 1e-3 * std::max(p[1], p[3]) ||
                          std::abs(p[0]) <= 1e-6 * total || std::abs(p[2]) <= 1e-6 * total;
  if (degenerate && n >= 3) {
    std::vector<double> pos_t, pos_y;
    for (std::size_t i = 0; i < n; ++i)
      if (y[i] > 0.0) {
        pos_t.push_back(t[i]);
        pos_y.push_back(y[i]);
      }
    if (pos_t.size() >= 3) {
      const FitResult single = fit_single_exponential(pos_t, pos_y);
      f.params = {single.params[0], single.params[1], 0.0, single.params[1]};
      f.sigmas = {single.sigmas[0], single.sigmas[1], 0.0, single.sigmas[1]};
      f.residual_norm = single.residual_norm;
      f.converged = single.converged;
      f.note = "time constants degenerate; collapsed to a single exponential";
      return f;
    }
  }
  f.params = {p[0], 1.0 / p[1], p[2], 1.0 / p[3]};
  f.sigmas = {s[0], s[1] / (p[1] * p[1]), s[2], s[3] / (p[3] * p[3])};
  f.residual_norm = std::sqrt(best->sse);
  f.converged = best->converged;
  if (!f.converged) f.note = "did not converge; best start reported";
  return f;
}

// log y = log c + b log x, unweighted.
inline FitResult fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
  detail::check_points(x, y, 3, true);
  for (double v : x)
    if (!(v > 0.0)) throw DomainError("fit_power_law: abscissae must be positive");
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += std::pow(std::log(x[i]) - mx, 2);
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_power_law: abscissae coincide");
  const double b = sxy / sxx;
  const double a = my - b * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) sse += std::pow(std::log(y[i]) - a - b * std::log(x[i]), 2);
  const double s2 = n > 2 ? sse / static_cast<double>(n - 2) : 0.0;
  double sum_lx2 = 0;
  for (std::size_t i = 0; i < n; ++i) sum_lx2 += std::pow(std::log(x[i]), 2);
  FitResult f;
  f.model = FitResult::Model::power_law;
  f.names = {"prefactor", "exponent"};
  f.params = {std::exp(a), b};
  const double sa = std::sqrt(s2 * sum_lx2 / (static_cast<double>(n) * sxx));
  f.sigmas = {std::exp(a) * sa, std::sqrt(s2 / sxx)};
  f.residual_norm = std::sqrt(sse);
  f.n_points = n;
  f.converged = true;
  return f;
}

struct FiguresOfMerit {
  double q = 0.0;
  std::optional<double> omega_t2;
  std::optional<double> j_t2;
};

// Q = f0 pi T2
inline FiguresOfMerit figures_of_merit(double f0_hz, double t2_s, std::optional<double> rabi_hz = std::nullopt,
                                       std::optional<double> j_hz = std::nullopt) {
  if (!(f0_hz > 0.0 && t2_s > 0.0)) throw DomainError("figures_of_merit needs positive f0 and T2");
  FiguresOfMerit m;
  m.q = f0_hz * constants::pi * t2_s;
  if (rabi_hz) {
    if (!(*rabi_hz > 0.0)) throw DomainError("Rabi frequency must be positive");
    m.omega_t2 = *rabi_hz * t2_s;
  }
  if (j_hz) {
    if (!(*j_hz > 0.0)) throw DomainError("J must be positive");
    m.j_t2 = *j_hz * t2_s;
  }
  return m;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of empty set");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h)));
}

// Median absolute deviation of the last quarter of the echo amplitudes.
inline double noise_floor(const std::vector<double>& amplitudes) {
  if (amplitudes.empty()) return 0.0;
  const std::size_t n = amplitudes.size();
  const std::size_t from = n - std::max<std::size_t>(1, n / 4);
  std::vector<double> late(amplitudes.begin() + static_cast<std::ptrdiff_t>(from), amplitudes.end());
  const double med = median(late);
  for (double& v : late) v = std::abs(v - med);
  return median(late);
}

struct DecayAnalysis {
  EchoExtraction extraction;
  double floor = 0.0;
  std::vector<double> t, amplitude; // echoes kept for the fit
  std::optional<FitResult> fit;
  std::string error;
};

// Echo amplitudes -> noise-floor selection -> single-exponential T2.
inline DecayAnalysis analyze_decay(const EchoTrain& train, double expected_hz, std::size_t zero_pad = 4) {
  DecayAnalysis a;
  a.extraction = echo_amplitudes(train, expected_hz, zero_pad);
  std::vector<double> amps;
  for (const auto& e : a.extraction.echoes) amps.push_back(e.amplitude);
  a.floor = noise_floor(amps);
  for (const auto& e : a.extraction.echoes)
    if (e.amplitude > 3.0 * a.floor && e.amplitude > 0.0) {
      a.t.push_back(e.time);
      a.amplitude.push_back(e.amplitude);
    }
  try {
    a.fit = fit_single_exponential(a.t, a.amplitude);
  } catch (const Error& e) {
    a.error = e.what();
  }
  return a;
}

struct LinearRegression {
  double slope = 0.0, slope_sigma = 0.0;
  double intercept = 0.0, intercept_sigma = 0.0;
};

// Ordinary least squares y = a + b x with standard errors from residuals.
inline LinearRegression linear_regression(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n) throw DomainError("linear_regression needs >= 3 paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, sx2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    sx2 += x[i] * x[i];
  }
  if (!(sxx > 0.0)) throw DomainError("linear_regression: abscissae coincide");
  LinearRegression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) sse += std::pow(y[i] - r.intercept - r.slope * x[i], 2);
  const double s2 = sse / static_cast<double>(n - 2);
  r.slope_sigma = std::sqrt(s2 / sxx);
  r.intercept_sigma = std::sqrt(s2 * sx2 / (static_cast<double>(n) * sxx));
  return r;
}

enum class ScanAxis { cycle_time, abundance };

inline std::string to_string(ScanAxis a) { return a == ScanAxis::cycle_time ? "cycle_time" : "abundance"; }

// Everything needed to evaluate one grid point.
struct ScanPoint {
  ExperimentParams params;
  std::size_t n_realizations = 1;
  std::uint64_t base_seed = 0;
  double expected_offset_hz = 0.0;
  std::size_t zero_pad = 4;
};

struct ScanRow {
  double axis_value = 0.0;
  double t2 = std::numeric_limits<double>::quiet_NaN();
  double t2_sigma = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_echoes = 0;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  bool converged = false;
  std::string error;
  nlohmann::json metadata = nlohmann::json::object();
};

struct ScanTable {
  ScanAxis axis = ScanAxis::cycle_time;
  std::vector<ScanRow> rows;
  std::optional<FitResult> power_law;          // cycle_time axis
  std::optional<LinearRegression> rate_vs_p;   // abundance axis: 1/T2 against p
};

struct ScanOptions {
  std::size_t workers = 1;
  // Called with each finished row, e.g. to persist it.
  std::function<void(const ScanRow&)> on_row;
  // Returns a stored row for a grid value to skip recomputation.
  std::function<std::optional<ScanRow>(double)> lookup;
};

inline ScanRow evaluate_scan_point(double value, const ScanPoint& pt, std::size_t workers) {
  ScanRow row;
  row.axis_value = value;
  try {
    DisorderOptions dopt;
    dopt.workers = workers;
    dopt.retain_trains = false;
    const DisorderResult dr = disorder_average(pt.params, pt.n_realizations, pt.base_seed, dopt);
    row.n_ok = dr.n_ok;
    row.n_failed = dr.n_failed;
    const DecayAnalysis a = analyze_decay(dr.mean, pt.expected_offset_hz, pt.zero_pad);
    row.n_echoes = a.t.size();
    row.metadata["echo_failures"] = a.extraction.failures.size();
    row.metadata["noise_floor"] = a.floor;
    nlohmann::json echoes = nlohmann::json::array();
    for (const auto& e : a.extraction.echoes) echoes.push_back({e.time, e.amplitude});
    row.metadata["echoes"] = echoes;
    row.metadata["cycles_per_pi"] = pt.params.sequence.metadata.value("cycles_per_pi", 0);
    if (!a.fit) {
      row.error = a.error;
    } else {
      row.t2 = a.fit->value("T2");
      row.t2_sigma = a.fit->sigma("T2");
      row.converged = a.fit->converged;
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

// Per grid point: disorder average -> echo amplitudes -> single-exp T2.
// Failed points are recorded and the scan continues.
inline ScanTable run_scan(ScanAxis axis, std::vector<double> grid, const std::function<ScanPoint(double)>& make_point,
                          const ScanOptions& opt = {}) {
  if (grid.size() < 3) throw DomainError("scan grid needs at least 3 points");
  std::sort(grid.begin(), grid.end());
  ScanTable table;
  table.axis = axis;
  for (double v : grid) {
    std::optional<ScanRow> row = opt.lookup ? opt.lookup(v) : std::nullopt;
    if (!row) {
      row = evaluate_scan_point(v, make_point(v), opt.workers);
      if (opt.on_row) opt.on_row(*row);
    }
    table.rows.push_back(*row);
  }
  std::vector<double> xs, ys;
  for (const auto& r : table.rows)
    if (r.error.empty() && r.t2 > 0.0) {
      xs.push_back(r.axis_value);
      ys.push_back(axis == ScanAxis::cycle_time ? r.t2 : 1.0 / r.t2);
    }
  try {
    if (xs.size() >= 3) {
      if (axis == ScanAxis::cycle_time)
        table.power_law = fit_power_law(xs, ys);
      else
        table.rate_vs_p = linear_regression(xs, ys);
    }
  } catch (const Error&) {
  }
  return table;
}

} // namespace spinlab
