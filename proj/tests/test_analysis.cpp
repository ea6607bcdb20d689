#include <gtest/gtest.h>

#include "spinlab/analysis.hpp"

using namespace spinlab;

namespace {

// Segments of k samples at spacing dt, a tone at f_hz with amplitude
// a0 exp(-t / t2) per segment; one sample of dead time between segments.
EchoTrain synthetic_train(int segments, int k, double dt, double f_hz, double t2, double a0 = 1.0) {
  EchoTrain tr;
  double t = 0.0;
  for (int s = 0; s < segments; ++s) {
    const double mid = t + 0.5 * (k - 1) * dt;
    const double amp = a0 * std::exp(-mid / t2);
    for (int i = 0; i < k; ++i) {
      tr.times.push_back(t);
      tr.values.push_back(amp * std::polar(1.0, -constants::two_pi * f_hz * t + 0.4));
      tr.segment.push_back(s);
      t += dt;
    }
    t += dt;
  }
  return tr;
}

std::vector<double> grid(double t0, double t1, int n) {
  std::vector<double> t;
  for (int i = 0; i < n; ++i) t.push_back(t0 + (t1 - t0) * i / (n - 1));
  return t;
}

} // namespace

TEST(Spectrum, ToneAppearsAtItsOffset) {
  std::vector<double> t;
  std::vector<cplx> x;
  for (int i = 0; i < 256; ++i) {
    t.push_back(i * 1e-3);
    x.push_back(std::polar(1.0, -constants::two_pi * 62.5 * t.back()));
  }
  const Spectrum s = echo_spectrum(t, x, 4);
  EXPECT_EQ(s.freq_hz.size(), 1024u);
  EXPECT_NEAR(s.df, 1000.0 / 1024.0, 1e-12);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < s.amp.size(); ++i)
    if (std::abs(s.amp[i]) > std::abs(s.amp[peak])) peak = i;
  EXPECT_NEAR(s.freq_hz[peak], 62.5, 1e-9);
  // normalized by the record length: a unit tone on a bin has unit magnitude
  EXPECT_NEAR(std::abs(s.amp[peak]), 1.0, 1e-12);
}

TEST(Spectrum, InputChecks) {
  std::vector<double> t{0, 1, 2, 3, 4, 5, 6};
  std::vector<cplx> x(7, 1.0);
  EXPECT_THROW(echo_spectrum(t, x), AnalysisError);
  t.push_back(7.5);
  x.push_back(1.0);
  try {
    echo_spectrum(t, x);
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_EQ(e.reason(), AnalysisError::Reason::bad_input);
  }
}

TEST(SidePeak, LinearInAmplitudeAndPhaseBlind) {
  std::vector<double> t;
  std::vector<cplx> a, b;
  for (int i = 0; i < 64; ++i) {
    t.push_back(i * 2e-3);
    a.push_back(std::polar(1.0, -constants::two_pi * 40.0 * t.back()));
    b.push_back(std::polar(3.0, -constants::two_pi * 40.0 * t.back() + 2.0));
  }
  const SidePeak pa = sidepeak(echo_spectrum(t, a), 40.0);
  const SidePeak pb = sidepeak(echo_spectrum(t, b), 40.0);
  EXPECT_NEAR(pb.amplitude / pa.amplitude, 3.0, 1e-12);
  EXPECT_NEAR(pa.peak_hz, 40.0, 0.5 * 500.0 / 256.0);
  EXPECT_LT(pa.lower_hz, 40.0);
  EXPECT_GT(pa.upper_hz, 40.0);
  // half-max width of a rectangular record of length T is about 1.2 / T
  EXPECT_NEAR(pa.upper_hz - pa.lower_hz, 1.207 / (64 * 2e-3), 0.05 / (64 * 2e-3));
}

TEST(SidePeak, FailureReasons) {
  // Gaussian envelopes: smooth spectra with no stray maxima in the window
  auto burst = [](double f_hz) {
    std::vector<double> t;
    std::vector<cplx> x;
    for (int i = 0; i < 64; ++i) {
      t.push_back(i * 1e-3);
      const double u = (t.back() - 0.032) / 0.002;
      x.push_back(std::exp(-0.5 * u * u) * std::polar(1.0, -constants::two_pi * f_hz * t.back()));
    }
    return echo_spectrum(t, x);
  };
  try {
    sidepeak(burst(0.0), 40.0);
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_EQ(e.reason(), AnalysisError::Reason::center_peak_only);
  }
  try {
    sidepeak(burst(200.0), 40.0);
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_EQ(e.reason(), AnalysisError::Reason::no_peak_in_window);
  }
  EXPECT_NEAR(sidepeak(burst(200.0), 180.0).peak_hz, 200.0, 1.0);
  EXPECT_THROW(sidepeak(burst(0.0), 0.0), AnalysisError);
}

TEST(Echoes, RecoverDecayConstant) {
  const EchoTrain tr = synthetic_train(12, 32, 1e-3, 40.0, 0.15);
  const DecayAnalysis a = analyze_decay(tr, 40.0);
  ASSERT_TRUE(a.fit.has_value()) << a.error;
  EXPECT_EQ(a.extraction.echoes.size(), 12u);
  EXPECT_TRUE(a.extraction.failures.empty());
  EXPECT_NEAR(a.fit->value("T2"), 0.15, 1e-9);
}

TEST(Echoes, ChainIsScaleInvariant) {
  const double t2 = 0.12;
  const DecayAnalysis ref = analyze_decay(synthetic_train(10, 32, 1e-3, 40.0, t2), 40.0);
  const DecayAnalysis louder = analyze_decay(synthetic_train(10, 32, 1e-3, 40.0, t2, 250.0), 40.0);
  // stretch time by 5 and divide the frequency by 5: T2 stretches by 5
  const DecayAnalysis slower = analyze_decay(synthetic_train(10, 32, 5e-3, 8.0, 5 * t2), 8.0);
  ASSERT_TRUE(ref.fit && louder.fit && slower.fit);
  EXPECT_NEAR(louder.fit->value("T2") / ref.fit->value("T2"), 1.0, 1e-9);
  EXPECT_NEAR(louder.fit->value("A") / ref.fit->value("A"), 250.0, 1e-6);
  EXPECT_NEAR(slower.fit->value("T2") / ref.fit->value("T2"), 5.0, 1e-9);
}

TEST(Echoes, SegmentFailuresAreRecorded) {
  EchoTrain tr = synthetic_train(6, 32, 1e-3, 40.0, 1.0);
  const auto [b, end] = tr.segment_range(2);
  for (std::size_t i = b; i < end; ++i) {
    // smooth center line only
    const double u = (static_cast<double>(i - b) - 15.5) / 2.0;
    tr.values[i] = std::exp(-0.5 * u * u);
  }
  const EchoExtraction e = echo_amplitudes(tr, 40.0);
  EXPECT_EQ(e.echoes.size(), 5u);
  ASSERT_EQ(e.failures.size(), 1u);
  EXPECT_EQ(e.failures[0].first, 2);
}

TEST(Fits, SingleExponentialExact) {
  const auto t = grid(0.0, 3.0, 25);
  std::vector<double> y;
  for (double v : t) y.push_back(2.5 * std::exp(-v / 0.7));
  const FitResult f = fit_single_exponential(t, y);
  EXPECT_TRUE(f.converged);
  EXPECT_NEAR(f.value("A"), 2.5, 1e-9);
  EXPECT_NEAR(f.value("T2"), 0.7, 1e-9);
  EXPECT_LT(f.sigma("T2"), 1e-8);
  EXPECT_THROW(fit_single_exponential({0, 1}, {1, 0.5}), DomainError);
  EXPECT_THROW(fit_single_exponential({0, 1, 2}, {1, -0.5, 0.2}), DomainError);
}

TEST(Fits, SingleExponentialSigmaTracksNoise) {
  const auto t = grid(0.0, 1.0, 200);
  Rng rng(3);
  std::vector<double> y;
  for (double v : t) y.push_back(std::exp(-v / 0.5) + 0.01 * rng.normal());
  const FitResult f = fit_single_exponential(t, y);
  EXPECT_NEAR(f.value("T2"), 0.5, 5 * f.sigma("T2"));
  EXPECT_GT(f.sigma("T2"), 1e-4);
  EXPECT_LT(f.sigma("T2"), 2e-2);
}

TEST(Fits, DoubleExponentialRecoversSlowAndFastConstants) {
  const auto t = grid(0.0, 40.0, 81);
  std::vector<double> y;
  for (double v : t) y.push_back(0.55 * std::exp(-v / 1.6) + 0.45 * std::exp(-v / 9.8));
  const FitResult f = fit_double_exponential(t, y);
  EXPECT_TRUE(f.converged);
  EXPECT_NEAR(f.value("Ta"), 1.6, 0.01 * 1.6);
  EXPECT_NEAR(f.value("Tb"), 9.8, 0.01 * 9.8);
  EXPECT_NEAR(f.value("A"), 0.55, 1e-6);
}

TEST(Fits, DoubleExponentialDegenerateCollapses) {
  const auto t = grid(0.0, 5.0, 40);
  std::vector<double> y;
  for (double v : t) y.push_back(std::exp(-v / 1.3));
  const FitResult f = fit_double_exponential(t, y);
  EXPECT_NEAR(f.value("Ta"), 1.3, 1e-6);
  EXPECT_NEAR(f.value("Tb"), 1.3, 1e-6);
  EXPECT_FALSE(f.note.empty());
}

TEST(Fits, PowerLaw) {
  const std::vector<double> x{60e-6, 110e-6, 190e-6, 340e-6, 600e-6};
  std::vector<double> y;
  for (double v : x) y.push_back(4e-7 * std::pow(v, -2.09));
  const FitResult f = fit_power_law(x, y);
  EXPECT_NEAR(f.value("exponent"), -2.09, 1e-12);
  EXPECT_NEAR(f.value("prefactor"), 4e-7, 1e-15);
  EXPECT_THROW(fit_power_law({1, 2, -3}, {1, 2, 3}), DomainError);
}

TEST(Fits, LinearRegressionMatchesNormalEquations) {
  const std::vector<double> x{0.01, 0.02, 0.04, 0.07, 0.1};
  const std::vector<double> y{0.52, 0.95, 2.1, 3.4, 5.2};
  const LinearRegression r = linear_regression(x, y);
  Eigen::MatrixXd X(5, 2);
  Eigen::VectorXd Y(5);
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = x[static_cast<std::size_t>(i)];
    Y[i] = y[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector2d beta = X.colPivHouseholderQr().solve(Y);
  const double s2 = (Y - X * beta).squaredNorm() / 3.0;
  const Eigen::Matrix2d cov = s2 * (X.transpose() * X).inverse();
  EXPECT_NEAR(r.intercept, beta[0], 1e-12);
  EXPECT_NEAR(r.slope, beta[1], 1e-10);
  EXPECT_NEAR(r.intercept_sigma, std::sqrt(cov(0, 0)), 1e-12);
  EXPECT_NEAR(r.slope_sigma, std::sqrt(cov(1, 1)), 1e-10);
}

TEST(Figures, QualityFactor) {
  const FiguresOfMerit m = figures_of_merit(60e6, 25.0);
  EXPECT_NEAR(m.q, 60e6 * constants::pi * 25.0, 1.0);
  EXPECT_GT(m.q, 1e9);
  EXPECT_LT(m.q, 1e10);
  EXPECT_NEAR(*figures_of_merit(60e6, 25.0, 12.5e3).omega_t2, 12.5e3 * 25.0, 1e-6);
  EXPECT_THROW(figures_of_merit(60e6, 0.0), DomainError);
}

TEST(Robust, MedianAndNoiseFloor) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), DomainError);
  // last quarter is {10, 12, 11, 13}: median 11.5, deviations .5 .5 1.5 1.5
  EXPECT_DOUBLE_EQ(noise_floor({100, 90, 80, 70, 60, 50, 40, 30, 20, 15, 14, 13, 10, 12, 11, 13}), 1.0);
}

TEST(Fits, JsonExport) {
  const FitResult f = fit_power_law({1, 2, 4}, {1, 0.25, 0.0625});
  const nlohmann::json j = to_json(f);
  EXPECT_EQ(j.at("model"), "power_law");
  EXPECT_NEAR(j.at("parameters").at("exponent").at("value").get<double>(), -2.0, 1e-12);
}
