#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lfuse/sim/types.hpp"

namespace lfuse::sim {

/// A contiguous slice of a run covering [t0, t0 + duration], both ends included.
/// Local frame k of every 100 Hz stream has time t0 + k/100; GNSS frame g sits
/// on local frame 20 g.
struct Segment {
  std::string id;
  std::string run_name;
  double t0 = 0.0;
  double duration = 0.0;
  std::vector<TruthFrame> truth;
  std::vector<ImuFrame> imu;
  std::vector<ChassisFrame> chassis;
  std::vector<GnssFrame> gnss;
  std::vector<RegimeInterval> regimes;  // the run's schedule, in run time
  /// Latest usable GNSS fix strictly before t0, if any.
  std::optional<GnssFrame> prior_fix;

  long frames() const noexcept { return static_cast<long>(truth.size()); }
  GnssRegime regime(double t) const { return regime_at(regimes, t); }
};

struct SegmentSet {
  std::vector<Segment> long_segments;
  std::vector<Segment> short_segments;
};

struct SegmentOptions {
  double long_duration = 20.0;
  double short_duration = 5.0;
};

/// Frames [first, first + count) of a run as a segment.
inline Segment cut_segment(const Run& run, long first, long count, const std::string& id) {
  if (first < 0 || count < 2 || first + count > static_cast<long>(run.truth.size()))
    throw InvalidArgument("cut_segment: frame range outside the run");
  if (first % kFramesPerGnss != 0) throw InvalidArgument("cut_segment: start must sit on a GNSS frame");
  if (run.imu.size() != run.truth.size() || run.chassis.size() != run.truth.size())
    throw InvalidArgument("cut_segment: run streams are not aligned");
  Segment s;
  s.id = id;
  s.run_name = run.name;
  s.t0 = run.truth[first].t;
  s.duration = run.truth[first + count - 1].t - s.t0;
  s.truth.assign(run.truth.begin() + first, run.truth.begin() + first + count);
  s.imu.assign(run.imu.begin() + first, run.imu.begin() + first + count);
  s.chassis.assign(run.chassis.begin() + first, run.chassis.begin() + first + count);
  const double t_end = s.truth.back().t + 1e-9;
  for (const auto& z : run.gnss) {
    if (z.t < s.t0 - 1e-9) {
      if (z.usable()) s.prior_fix = z;
    } else if (z.t <= t_end) {
      s.gnss.push_back(z);
    }
  }
  s.regimes = run.regimes;
  return s;
}

/// Back-to-back pieces of `piece` seconds cut from a segment, ids `<id>/P<i>`.
/// A trailing remainder shorter than one piece is dropped.
inline std::vector<Segment> split_segment(const Segment& seg, double piece) {
  const long n = std::lround(piece * kImuRateHz);
  if (n < 1 || n % kFramesPerGnss != 0) throw InvalidArgument("split_segment: piece must be a whole number of GNSS epochs");
  std::vector<Segment> out;
  for (long first = 0; first + n < seg.frames(); first += n) {
    Segment s;
    s.id = seg.id + "/P" + std::to_string(out.size());
    s.run_name = seg.run_name;
    s.t0 = seg.truth[first].t;
    s.duration = seg.truth[first + n].t - s.t0;
    s.truth.assign(seg.truth.begin() + first, seg.truth.begin() + first + n + 1);
    s.imu.assign(seg.imu.begin() + first, seg.imu.begin() + first + n + 1);
    s.chassis.assign(seg.chassis.begin() + first, seg.chassis.begin() + first + n + 1);
    s.prior_fix = seg.prior_fix;
    const double t_end = s.truth.back().t + 1e-9;
    for (const auto& z : seg.gnss) {
      if (z.t < s.t0 - 1e-9) {
        if (z.usable()) s.prior_fix = z;
      } else if (z.t <= t_end) {
        s.gnss.push_back(z);
      }
    }
    s.regimes = seg.regimes;
    out.push_back(std::move(s));
  }
  return out;
}

/// Non-overlapping long segments tiling the run from t = 0, plus short segments
/// cut back to back from every non-clean GNSS interval.
inline SegmentSet segment_dataset(const Run& run, const SegmentOptions& opt = {}) {
  if (!(opt.short_duration > 0.0) || !(opt.long_duration >= opt.short_duration))
    throw InvalidArgument("segment_dataset: need 0 < short duration <= long duration");
  const double max_duration = std::max(opt.long_duration, opt.short_duration);
  if (run.duration + 1e-9 < max_duration)
    throw InvalidArgument("segment_dataset: run " + run.name + " is shorter than one " +
                          std::to_string(max_duration) + " s segment");
  SegmentSet out;
  const long long_frames = std::lround(opt.long_duration * kImuRateHz);
  const long short_frames = std::lround(opt.short_duration * kImuRateHz);
  const long last = static_cast<long>(run.truth.size()) - 1;
  for (long start = 0; start + long_frames <= last; start += long_frames)
    out.long_segments.push_back(
        cut_segment(run, start, long_frames + 1, run.name + "/L" + std::to_string(out.long_segments.size())));
  for (const auto& r : run.regimes) {
    if (!is_poor(r.regime)) continue;
    // snap the interval start up to the next GNSS epoch
    long start = static_cast<long>(std::ceil(r.start * kGnssRateHz - 1e-9)) * kFramesPerGnss;
    const long end = std::min(last, static_cast<long>(std::floor(r.end * kImuRateHz + 1e-9)));
    for (; start + short_frames <= end; start += short_frames)
      out.short_segments.push_back(
          cut_segment(run, start, short_frames + 1, run.name + "/S" + std::to_string(out.short_segments.size())));
  }
  return out;
}

}  // namespace lfuse::sim
