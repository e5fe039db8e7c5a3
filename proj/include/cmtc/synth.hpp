#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmtc/events.hpp"

namespace cmtc {

// Synthetic event-camera dataset: each identity is an articulated stick
// silhouette walking across the sensor; boundary motion between simulation
// steps emits events, and each camera applies its own viewpoint, scale and
// noise profile. Everything is a pure function of (config, seed).

struct SynthConfig {
  int identities = 8;
  int cameras = 2;
  int clips_per_id_cam = 4;
  int sensor_width = 32;
  int sensor_height = 64;
  int clip_len = 8;
  std::uint64_t t_window_us = 200000;
  std::uint64_t sim_step_us = 10000;
  double speed_scale = 1.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 1;
};

struct IdentityParams {
  double height_frac;
  double head_r_frac;
  double torso_w_frac;
  double shoulder_frac;
  double hip_frac;
  double arm_len_frac;
  double leg_len_frac;
  double limb_r_frac;
  double gait_freq_hz;
  double leg_amp;
  double arm_amp;
  double walk_speed;  // px/s before camera scale
  double bob_frac;

  bool operator==(const IdentityParams&) const = default;
};

struct CameraProfile {
  int mirror;         // +1 or -1, initial walking direction
  double scale;       // apparent person scale
  double y_offset;    // vertical shift as a fraction of sensor height
  double noise_rate;  // uniform background noise, events per second
};

struct SynthClip {
  EventStream stream;
  std::vector<std::uint8_t> masks;  // clip_len x H x W silhouettes at frame centers
  int person_id = -1;
  int camera_id = -1;
  int clip_index = -1;
};

namespace detail_synth {

struct Pt {
  double x, y;
};

inline void rasterize_capsule(Pt a, Pt b, double r, int W, int H, std::vector<std::uint8_t>& mask) {
  const double x_min = std::min(a.x, b.x) - r - 1.0;
  const double x_max = std::max(a.x, b.x) + r + 1.0;
  const double y_min = std::min(a.y, b.y) - r - 1.0;
  const double y_max = std::max(a.y, b.y) + r + 1.0;
  const int xi0 = std::max(0, static_cast<int>(std::floor(x_min)));
  const int xi1 = std::min(W - 1, static_cast<int>(std::ceil(x_max)));
  const int yi0 = std::max(0, static_cast<int>(std::floor(y_min)));
  const int yi1 = std::min(H - 1, static_cast<int>(std::ceil(y_max)));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const double r2 = r * r;
  for (int y = yi0; y <= yi1; ++y) {
    const double py = y + 0.5;
    for (int x = xi0; x <= xi1; ++x) {
      const double px = x + 0.5;
      double t = 0.0;
      if (len2 > 0.0) {
        t = ((px - a.x) * dx + (py - a.y) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
      }
      const double cx = a.x + t * dx - px;
      const double cy = a.y + t * dy - py;
      if (cx * cx + cy * cy <= r2) mask[static_cast<std::size_t>(y) * W + x] = 1;
    }
  }
}

// Renders the walker silhouette at time t_s with gait phase offset phase0
// and horizontal anchor x_center (already camera-scaled).
inline void render_walker(const IdentityParams& id, const CameraProfile& cam, int W, int H,
                          double t_s, double phase0, double x_center, int facing,
                          std::vector<std::uint8_t>& mask) {
  std::fill(mask.begin(), mask.end(), 0);
  const double h = id.height_frac * H * cam.scale;
  const double head_r = id.head_r_frac * h;
  const double leg = id.leg_len_frac * h;
  const double torso = h - leg - 2.2 * head_r;
  const double limb_r = id.limb_r_frac * h;
  const double gait = 2.0 * 3.14159265358979323846 * id.gait_freq_hz * t_s + phase0;
  const double bob = id.bob_frac * h * std::sin(2.0 * gait);
  const double ground = (0.94 + cam.y_offset) * H;

  const Pt pelvis{x_center, ground - leg + bob};
  const Pt neck{x_center, pelvis.y - torso};
  const Pt head{x_center, neck.y - 1.1 * head_r};

  rasterize_capsule(pelvis, neck, id.torso_w_frac * h, W, H, mask);
  rasterize_capsule(head, head, head_r, W, H, mask);

  const double f = static_cast<double>(facing);
  for (int side = 0; side < 2; ++side) {
    const double ph = gait + side * 3.14159265358979323846;
    // legs: thigh plus shin with a bend that grows on the back swing
    {
      const Pt hip{x_center + (side == 0 ? -1.0 : 1.0) * id.hip_frac * h, pelvis.y};
      const double thigh_a = id.leg_amp * std::sin(ph);
      const double bend = 0.8 * id.leg_amp * std::max(0.0, -std::cos(ph));
      const double lt = 0.55 * leg, ls = 0.45 * leg;
      const Pt knee{hip.x + f * lt * std::sin(thigh_a), hip.y + lt * std::cos(thigh_a)};
      const double shin_a = thigh_a - bend;
      const Pt foot{knee.x + f * ls * std::sin(shin_a), knee.y + ls * std::cos(shin_a)};
      rasterize_capsule(hip, knee, limb_r, W, H, mask);
      rasterize_capsule(knee, foot, limb_r, W, H, mask);
    }
    // arms: opposite phase, slight constant elbow bend
    {
      const Pt shoulder{x_center + (side == 0 ? -1.0 : 1.0) * id.shoulder_frac * h,
                        neck.y + 0.04 * h};
      const double arm_a = id.arm_amp * std::sin(ph + 3.14159265358979323846);
      const double lu = 0.5 * id.arm_len_frac * h, lf = 0.5 * id.arm_len_frac * h;
      const Pt elbow{shoulder.x + f * lu * std::sin(arm_a), shoulder.y + lu * std::cos(arm_a)};
      const double fore_a = arm_a + 0.35;
      const Pt hand{elbow.x + f * lf * std::sin(fore_a), elbow.y + lf * std::cos(fore_a)};
      rasterize_capsule(shoulder, elbow, 0.8 * limb_r, W, H, mask);
      rasterize_capsule(elbow, hand, 0.7 * limb_r, W, H, mask);
    }
  }
}

}  // namespace detail_synth

inline IdentityParams identity_params(const SynthConfig& cfg, int person_id) {
  Rng rng = Rng(cfg.seed).fork("identity").fork(static_cast<std::uint64_t>(person_id));
  IdentityParams p;
  p.height_frac = rng.uniform(0.55, 0.92);
  p.head_r_frac = rng.uniform(0.055, 0.085);
  p.torso_w_frac = rng.uniform(0.05, 0.115);
  p.shoulder_frac = rng.uniform(0.10, 0.15);
  p.hip_frac = rng.uniform(0.045, 0.08);
  p.arm_len_frac = rng.uniform(0.30, 0.42);
  p.leg_len_frac = rng.uniform(0.44, 0.54);
  p.limb_r_frac = rng.uniform(0.025, 0.050);
  p.gait_freq_hz = rng.uniform(0.55, 2.0) * cfg.speed_scale;
  p.leg_amp = rng.uniform(0.28, 0.68);
  p.arm_amp = rng.uniform(0.25, 0.55);
  p.walk_speed = rng.uniform(5.0, 13.0) * cfg.speed_scale;
  p.bob_frac = rng.uniform(0.008, 0.022);
  return p;
}

inline CameraProfile camera_profile(const SynthConfig& cfg, int camera_id) {
  CameraProfile c;
  c.mirror = (camera_id % 2 == 0) ? 1 : -1;
  if (camera_id == 0) {
    c.scale = 1.0;
    c.y_offset = 0.0;
    c.noise_rate = 600.0 * cfg.noise_scale;
  } else if (camera_id == 1) {
    c.scale = 0.85;
    c.y_offset = -0.02;
    c.noise_rate = 4000.0 * cfg.noise_scale;
  } else {
    Rng rng = Rng(cfg.seed).fork("camera").fork(static_cast<std::uint64_t>(camera_id));
    c.scale = rng.uniform(0.75, 1.0);
    c.y_offset = rng.uniform(-0.05, 0.03);
    c.noise_rate = rng.uniform(600.0, 8000.0) * cfg.noise_scale;
  }
  return c;
}

inline void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.identities < 2) throw ValueError("synth: need at least 2 identities");
  if (cfg.cameras < 2) throw ValueError("synth: need at least 2 cameras");
  if (cfg.clips_per_id_cam < 1) throw ValueError("synth: need at least 1 clip per id/cam");
  if (cfg.sensor_width < 16 || cfg.sensor_height < 16) {
    throw ValueError("synth: sensor must be at least 16x16");
  }
  if (cfg.clip_len < 2) throw ValueError("synth: clip_len must be >= 2");
  if (cfg.sim_step_us == 0 || cfg.t_window_us < 2 * cfg.sim_step_us) {
    throw ValueError("synth: t_window must cover at least 2 sim steps");
  }
  if (cfg.speed_scale <= 0.0) throw ValueError("synth: speed_scale must be positive");
  if (cfg.noise_scale < 0.0) throw ValueError("synth: noise_scale must be non-negative");
}

inline SynthClip synth_clip(const SynthConfig& cfg, int person_id, int camera_id, int clip_index) {
  const IdentityParams id = identity_params(cfg, person_id);
  const CameraProfile cam = camera_profile(cfg, camera_id);
  Rng rng = Rng(cfg.seed)
                .fork("clip")
                .fork(static_cast<std::uint64_t>(person_id))
                .fork(static_cast<std::uint64_t>(camera_id))
                .fork(static_cast<std::uint64_t>(clip_index));

  const int W = cfg.sensor_width, H = cfg.sensor_height;
  const std::uint64_t duration = static_cast<std::uint64_t>(cfg.clip_len) * cfg.t_window_us;
  const std::int64_t n_steps = static_cast<std::int64_t>(duration / cfg.sim_step_us);
  const double dt_s = static_cast<double>(cfg.sim_step_us) * 1e-6;

  const double phase0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double h_px = id.height_frac * H * cam.scale;
  const double margin = 0.28 * h_px + 2.0;
  const double span = std::max(3.0, W - 2.0 * margin);
  const double s0 = rng.uniform(0.0, 2.0 * span);
  const double speed = id.walk_speed * cam.scale;

  // frame-center step indices for the ground-truth masks
  std::vector<std::int64_t> mask_steps(static_cast<std::size_t>(cfg.clip_len));
  for (int k = 0; k < cfg.clip_len; ++k) {
    const double tc = (k + 0.5) * static_cast<double>(cfg.t_window_us);
    mask_steps[static_cast<std::size_t>(k)] = std::llround(tc / static_cast<double>(cfg.sim_step_us));
  }

  SynthClip clip;
  clip.person_id = person_id;
  clip.camera_id = camera_id;
  clip.clip_index = clip_index;
  clip.stream.sensor_width = static_cast<std::uint16_t>(W);
  clip.stream.sensor_height = static_cast<std::uint16_t>(H);
  clip.masks.assign(static_cast<std::size_t>(cfg.clip_len) * H * W, 0);

  std::vector<std::uint8_t> prev(static_cast<std::size_t>(H * W), 0);
  std::vector<std::uint8_t> cur(static_cast<std::size_t>(H * W), 0);
  double noise_acc = 0.0;

  auto position = [&](double t_s) {
    // reflecting walk between the margins; facing flips at each bounce
    const double s = s0 + static_cast<double>(cam.mirror) * speed * t_s;
    const double period = 2.0 * span;
    double u = std::fmod(s, period);
    if (u < 0) u += period;
    const double x = (u < span) ? u : period - u;
    const int facing = ((u < span) ? 1 : -1) * cam.mirror;
    return std::pair<double, int>(margin + x, facing);
  };

  for (std::int64_t step = 0; step <= n_steps; ++step) {
    const double t_s = static_cast<double>(step) * dt_s;
    auto [xc, facing] = position(t_s);
    detail_synth::render_walker(id, cam, W, H, t_s, phase0, xc, facing, cur);

    if (step > 0) {
      const std::uint64_t t_us = static_cast<std::uint64_t>(step) * cfg.sim_step_us;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * W + x;
          if (cur[i] != prev[i]) {
            clip.stream.records.push_back({t_us, static_cast<std::uint16_t>(x),
                                           static_cast<std::uint16_t>(y),
                                           static_cast<std::int8_t>(cur[i] ? 1 : -1)});
          }
        }
      }
      noise_acc += cam.noise_rate * dt_s;
      while (noise_acc >= 1.0) {
        noise_acc -= 1.0;
        clip.stream.records.push_back(
            {t_us, static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(W))),
             static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(H))),
             static_cast<std::int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
      }
    }
    for (int k = 0; k < cfg.clip_len; ++k) {
      if (mask_steps[static_cast<std::size_t>(k)] == step) {
        std::copy(cur.begin(), cur.end(),
                  clip.masks.begin() + static_cast<std::ptrdiff_t>(k) * H * W);
      }
    }
    std::swap(prev, cur);
  }
  return clip;
}

/// Generates the full labelled dataset. Deterministic per (config, seed).
inline std::vector<SynthClip> synth_dataset(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  std::vector<SynthClip> out;
  out.reserve(static_cast<std::size_t>(cfg.identities) * cfg.cameras * cfg.clips_per_id_cam);
  for (int id = 0; id < cfg.identities; ++id) {
    for (int cam = 0; cam < cfg.cameras; ++cam) {
      for (int k = 0; k < cfg.clips_per_id_cam; ++k) {
        out.push_back(synth_clip(cfg, id, cam, k));
      }
    }
  }
  return out;
}

}  // namespace cmtc
