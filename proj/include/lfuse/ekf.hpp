#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <optional>

#include "lfuse/fusion/episode.hpp"
#include "lfuse/motion.hpp"
#include "lfuse/sim/segment.hpp"

namespace lfuse::ekf {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;

enum class MeasurementNoise { reported, fixed };

struct EkfConfig {
  /// Process noise spectral density per second for (x, y, v, psi).
  std::array<double, 4> q{1e-4, 1e-4, 1e-2, 1e-4};
  /// Mahalanobis-squared gate; disabled when empty.
  std::optional<double> gate;
  MeasurementNoise noise_source = MeasurementNoise::reported;
  /// Measurement variances used with MeasurementNoise::fixed.
  std::array<double, 4> fixed_var{0.0025, 0.0025, 0.0025, 1e-4};
  /// Initial covariance diagonal.
  std::array<double, 4> p0{1e-4, 1e-4, 1e-4, 1e-6};

  void validate() const {
    for (double v : q)
      if (!(v > 0.0)) throw InvalidArgument("EkfConfig.q entries must be > 0");
    if (gate && !(*gate > 0.0)) throw InvalidArgument("EkfConfig.gate must be > 0");
  }
};

struct EkfState {
  VehicleState mean;
  Mat4 cov = Mat4::Identity();
};

inline void check_covariance(Mat4& P, const char* where) {
  P = 0.5 * (P + P.transpose());
  if (!P.allFinite()) throw NonFiniteError(std::string(where) + ": non-finite covariance");
  Eigen::SelfAdjointEigenSolver<Mat4> es(P, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9) throw Error(std::string(where) + ": covariance lost positive semidefiniteness");
}

/// Jacobian of predict_state with respect to the state. Position advances with
/// the control speed, so only the heading column couples into x and y.
inline Mat4 motion_jacobian(const VehicleState& prev, const ControlInput& u, double dt) {
  Mat4 F = Mat4::Identity();
  F(0, 3) = -u.v * std::sin(prev.psi()) * dt;
  F(1, 3) = u.v * std::cos(prev.psi()) * dt;
  return F;
}

inline EkfState ekf_predict(const EkfState& s, const ControlInput& u, double dt, const EkfConfig& cfg) {
  EkfState out;
  out.mean = predict_state(s.mean, u, dt);
  const Mat4 F = motion_jacobian(s.mean, u, dt);
  Mat4 Q = Mat4::Zero();
  for (int i = 0; i < 4; ++i) Q(i, i) = cfg.q[i] * dt;
  out.cov = F * s.cov * F.transpose() + Q;
  check_covariance(out.cov, "ekf_predict");
  return out;
}

struct UpdateInfo {
  bool accepted = false;
  double mahalanobis2 = 0.0;
  Vec4 innovation = Vec4::Zero();
  Mat4 gain = Mat4::Zero();
};

/// Kalman update with H = I and R = diag(reported variance); Joseph form.
inline EkfState ekf_update(const EkfState& s, const sim::GnssFrame& z, const EkfConfig& cfg, UpdateInfo* info = nullptr) {
  if (!z.usable()) throw InvalidArgument("ekf_update: GNSS frame has no solution");
  const auto m = fusion::measurement_state(z, s.mean.v());
  Vec4 r(m[0] - s.mean.x(), m[1] - s.mean.y(), m[2] - s.mean.v(), angle_diff(m[3], s.mean.psi()));
  Mat4 R = Mat4::Zero();
  for (int i = 0; i < 4; ++i)
    R(i, i) = cfg.noise_source == MeasurementNoise::reported ? z.reported_var[i] : cfg.fixed_var[i];
  const Mat4 S = s.cov + R;
  Eigen::LDLT<Mat4> ldlt(S);
  if (ldlt.info() != Eigen::Success || !(std::abs(S.determinant()) > 0.0) || ldlt.rcond() < 1e-15)
    throw Error("ekf_update: singular innovation covariance");
  const double d2 = r.dot(ldlt.solve(r));
  UpdateInfo tmp;
  tmp.mahalanobis2 = d2;
  tmp.innovation = r;
  if (cfg.gate && d2 > *cfg.gate) {
    if (info) *info = tmp;
    return s;
  }
  const Mat4 K = ldlt.solve(s.cov).transpose();  // P S^-1 (P, S symmetric)
  const Vec4 dx = K * r;
  EkfState out;
  out.mean = VehicleState(s.mean.x() + dx[0], s.mean.y() + dx[1], s.mean.v() + dx[2], s.mean.psi() + dx[3]);
  const Mat4 IK = Mat4::Identity() - K;
  out.cov = IK * s.cov * IK.transpose() + K * R * K.transpose();
  check_covariance(out.cov, "ekf_update");
  tmp.accepted = true;
  tmp.gain = K;
  if (info) *info = tmp;
  return out;
}

/// Runs the baseline over a segment with the same schedule as the learned
/// filter: predict at every frame, update on retained usable GNSS epochs.
/// The trace's `w` holds the diagonal of the Kalman gain.
inline fusion::EpisodeTrace run_ekf(const sim::Segment& seg, const EkfConfig& cfg, int stride = 1,
                                    std::vector<EkfState>* states = nullptr) {
  cfg.validate();
  if (stride < 1) throw InvalidArgument("run_ekf: stride must be >= 1");
  if (seg.truth.size() < 2) throw InvalidArgument("run_ekf: segment " + seg.id + " has no frames to predict");
  fusion::EpisodeTrace tr;
  tr.segment_id = seg.id;
  tr.method = "ekf";
  tr.stride = stride;
  tr.frames.resize(seg.truth.size());
  std::vector<int> gnss_at(seg.truth.size(), -1);
  int ordinal = 0;
  const long K = seg.frames() - 1;
  for (std::size_t g = 0; g < seg.gnss.size(); ++g) {
    const long k = static_cast<long>(std::floor((seg.gnss[g].t - seg.t0) * sim::kImuRateHz + 1e-6));
    if (k < 0 || k > K || seg.gnss[g].t - seg.truth[k].t > fusion::kGnssStaleness) {
      ++tr.dropped_gnss;
      continue;
    }
    if (ordinal++ % stride == 0 && k > 0) gnss_at[k] = static_cast<int>(g);
  }
  EkfState s;
  s.mean = seg.truth[0].state;
  s.cov = Mat4::Zero();
  for (int i = 0; i < 4; ++i) s.cov(i, i) = cfg.p0[i];
  if (states) {
    states->clear();
    states->push_back(s);
  }
  for (long k = 0; k <= K; ++k) {
    auto& f = tr.frames[k];
    f.t = seg.truth[k].t;
    f.truth = seg.truth[k].state;
    f.regime = seg.regime(f.t);
    if (k == 0) {
      f.pred = s.mean;
      continue;
    }
    const ControlInput u = fusion::assemble_control(seg.imu[k], seg.chassis[k]);
    s = ekf_predict(s, u, seg.truth[k].t - seg.truth[k - 1].t, cfg);
    f.pred = s.mean;
    if (gnss_at[k] >= 0 && seg.gnss[gnss_at[k]].usable()) {
      UpdateInfo info;
      s = ekf_update(s, seg.gnss[gnss_at[k]], cfg, &info);
      ++tr.gnss_consumed;
      f.labels = seg.truth[k].validity;
      for (int i = 0; i < 4; ++i) f.r[i] = info.innovation[i];
      if (info.accepted) {
        f.updated = true;
        f.upd = s.mean;
        for (int i = 0; i < 4; ++i) f.w[i] = info.gain(i, i);
        ++tr.updates;
      }
    }
    if (states) states->push_back(s);
  }
  return tr;
}

}  // namespace lfuse::ekf
