#include <gtest/gtest.h>

#include "spinlab/aht.hpp"
#include "spinlab/sequences.hpp"

using namespace spinlab;

namespace {

std::vector<PulseEvent> pulses(const std::vector<PulseEvent>& ev) {
  std::vector<PulseEvent> out;
  for (const auto& e : ev)
    if (e.kind == PulseEvent::Kind::pulse) out.push_back(e);
  return out;
}

double sum_durations(const std::vector<PulseEvent>& ev) {
  double t = 0.0;
  for (const auto& e : ev) t += e.duration;
  return t;
}

double deg(double rad) { return rad * 180.0 / constants::pi; }

} // namespace

TEST(Sequences, CycleTimes) {
  const double tau = 7e-6;
  EXPECT_DOUBLE_EQ(build_wahuha(tau, 0).cycle_time, 6 * tau);
  EXPECT_DOUBLE_EQ(build_mrev8(tau, 0, Helicity::plus).cycle_time, 12 * tau);
  EXPECT_DOUBLE_EQ(build_mrev16(tau, 0).cycle_time, 24 * tau);
  EXPECT_DOUBLE_EQ(build_mrev16(tau, 0).cycle_time, 2 * build_mrev8(tau, 0, Helicity::minus).cycle_time);
  for (double pw : {0.0, 1e-6, 3e-6}) {
    const PulseSequence s = build_mrev16(tau, pw);
    EXPECT_NEAR(sum_durations(s.cycle), s.cycle_time, 1e-18);
    EXPECT_TRUE(validate_timing(s).ok());
  }
}

TEST(Sequences, PulseListings) {
  const auto w = pulses(build_wahuha(1e-5, 0).cycle);
  ASSERT_EQ(w.size(), 4u);
  const double want_w[] = {0, 90, 270, 180};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(deg(w[i].phase), want_w[i], 1e-12);

  const auto m = pulses(build_mrev16(1e-5, 0).cycle);
  ASSERT_EQ(m.size(), 16u);
  const double want_m[] = {0, 270, 180, 270, 90, 0, 90, 180, 0, 90, 180, 90, 270, 0, 270, 180};
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(deg(m[i].phase), want_m[i], 1e-12);
    EXPECT_DOUBLE_EQ(m[i].nominal_angle, constants::pi / 2);
  }
}

TEST(Sequences, WindowLayout) {
  const double tau = 2e-6;
  const double pw = 0.5e-6;
  const auto ev = build_mrev8(tau, pw, Helicity::plus).cycle;
  // windows 1,1,2,1,2,1,2,1,1 tau centre to centre
  const double units[] = {1, 1, 2, 1, 2, 1, 2, 1, 1};
  std::size_t w = 0;
  for (std::size_t i = 0; i < ev.size(); ++i)
    if (ev[i].kind == PulseEvent::Kind::delay) {
      const bool edge = (w == 0 || w == 8);
      EXPECT_NEAR(ev[i].duration, units[w] * tau - (edge ? 0.5 : 1.0) * pw, 1e-18);
      ++w;
    }
  EXPECT_EQ(w, 9u);
}

TEST(Sequences, CyclesAreCyclic) {
  EXPECT_LT(residual_rotation_angle(build_wahuha(1e-5, 0).cycle), 1e-12);
  EXPECT_LT(residual_rotation_angle(build_mrev8(1e-5, 0, Helicity::plus).cycle), 1e-12);
  EXPECT_LT(residual_rotation_angle(build_mrev8(1e-5, 0, Helicity::minus).cycle), 1e-12);
  EXPECT_LT(residual_rotation_angle(build_mrev16(1e-5, 0).cycle), 1e-12);
}

TEST(Sequences, TimingErrors) {
  EXPECT_THROW(build_mrev16(1e-6, 1e-6), TimingError);
  EXPECT_THROW(build_wahuha(1e-6, -1e-7), TimingError);
  EXPECT_THROW(build_free(0.0), TimingError);

  const TimingReport r = validate_timing(build_mrev16(1e-6, 0.6e-6));
  EXPECT_TRUE(r.ok());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NEAR(r.max_width_over_tau, 0.6, 1e-12);
  EXPECT_NEAR(r.duty_cycle, 16 * 0.6e-6 / 24e-6, 1e-12);

  PulseSequence bad = build_wahuha(1e-5, 0);
  bad.cycle_time *= 1.01;
  EXPECT_FALSE(validate_timing(bad).ok());
  bad = build_wahuha(1e-5, 0);
  bad.cycle[0].duration = -1e-7;
  EXPECT_FALSE(validate_timing(bad).ok());
  bad = build_wahuha(1e-5, 0);
  bad.blocks[0].events.push_back({PulseEvent::Kind::sample, 1e-6, 0, 0, 0, "S"});
  EXPECT_FALSE(validate_timing(bad).ok());
}

TEST(Cpmg, Structure) {
  const double phi = 0.3;
  const PulseSequence s = wrap_cpmg(build_mrev16(5e-6, 1e-6), 120, 3, phi);
  EXPECT_EQ(s.pulse_count(), 1u + 3u * (16u * 120u + 1u));
  EXPECT_EQ(s.sample_count(), 3u * 120u);
  ASSERT_EQ(s.blocks.size(), 1u + 2u * 3u);
  const PulseEvent& exc = s.blocks.front().events.at(0);
  EXPECT_DOUBLE_EQ(exc.nominal_angle, constants::pi / 2);
  EXPECT_DOUBLE_EQ(exc.phase, phi);
  EXPECT_DOUBLE_EQ(exc.duration, 1e-6);
  for (std::size_t k = 2; k < s.blocks.size(); k += 2) {
    const PulseEvent& pi = s.blocks[k].events.at(0);
    EXPECT_DOUBLE_EQ(pi.nominal_angle, constants::pi);
    EXPECT_DOUBLE_EQ(pi.phase, phi + constants::pi / 2);
    EXPECT_DOUBLE_EQ(pi.duration, 2e-6);
  }
  EXPECT_NEAR(s.total_duration(), 1e-6 + 3 * (120 * 120e-6 + 2e-6), 1e-15);
  EXPECT_TRUE(validate_timing(s).ok());
}

TEST(Cpmg, SampleStrideAndPosition) {
  const PulseSequence inner = build_mrev16(5e-6, 0);
  CpmgOptions o;
  o.sample_stride = 4;
  const PulseSequence s = wrap_cpmg(inner, 12, 2, 0.0, o);
  EXPECT_EQ(s.sample_count(), 2u * 3u);
  EXPECT_EQ(s.pulse_count(), 1u + 2u * (16u * 12u + 1u));
  o.sample_stride = 5;
  EXPECT_THROW(wrap_cpmg(inner, 12, 2, 0.0, o), TimingError);

  CpmgOptions mid;
  mid.sample_position = SamplePosition::mid;
  const PulseSequence m = wrap_cpmg(inner, 1, 1, 0.0, mid);
  const auto& ev = m.blocks[1].events;
  ASSERT_EQ(ev[ev.size() - 2].kind, PulseEvent::Kind::sample);
  EXPECT_DOUBLE_EQ(ev.back().duration, ev[ev.size() - 3].duration);
  EXPECT_NEAR(m.blocks[1].duration(), inner.cycle_time, 1e-18);
}

TEST(Cpmg, Validation) {
  const PulseSequence inner = build_mrev16(5e-6, 0);
  EXPECT_THROW(wrap_cpmg(inner, 0, 1, 0.0), TimingError);
  EXPECT_THROW(wrap_cpmg(inner, 1, 0, 0.0), TimingError);
}

TEST(Sequences, InverseReversesAndFlips) {
  const PulseSequence s = build_mrev8(1e-5, 1e-6, Helicity::plus);
  const PulseSequence inv = inverse_sequence(s);
  ASSERT_EQ(inv.cycle.size(), s.cycle.size());
  for (std::size_t i = 0; i < s.cycle.size(); ++i) {
    const PulseEvent& a = s.cycle[i];
    const PulseEvent& b = inv.cycle[s.cycle.size() - 1 - i];
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_DOUBLE_EQ(a.duration, b.duration);
    if (a.kind == PulseEvent::Kind::pulse) EXPECT_DOUBLE_EQ(b.phase, a.phase + constants::pi);
  }
}

TEST(Sequences, JsonExport) {
  const nlohmann::json j = to_json(wrap_cpmg(build_wahuha(1e-5, 0), 7, 2, 0.0));
  EXPECT_EQ(j.at("cycles").get<int>(), 14);
  EXPECT_EQ(j.at("blocks").size(), 5u);
  EXPECT_EQ(j.at("blocks").at(1).at("repeat").get<int>(), 7);
  EXPECT_EQ(j.at("metadata").at("inner").at("builder"), "wahuha");
  EXPECT_EQ(j.at("cycle").at(1).at("kind"), "pulse");
}

TEST(Sequences, FlattenGuard) {
  const PulseSequence s = wrap_cpmg(build_mrev16(5e-6, 0), 120, 2, 0.0);
  EXPECT_EQ(s.events().size(), s.event_count());
  EXPECT_THROW(s.events(100), ResourceError);
}
