#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "multishot/body_model.hpp"
#include "multishot/camera.hpp"
#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"
#include "multishot/rng.hpp"
#include "multishot/rotation.hpp"

namespace multishot {

struct MotionConfig {
    int frame_count = 64;
    int keyframe_spacing = 8;        // frames between keyframes
    double max_joint_speed = 0.15;   // radians per frame, geodesic
    double pose_amplitude = 0.6;     // keyframe angle budget, radians
    double beta_range = 1.0;
    std::uint64_t rng_seed = 0;
};

struct ShotConfig {
    double mean_shot_length = 10.0;  // frames; geometric draw, clipped to >= 2
    double camera_distance_min = 3.0;
    double camera_distance_max = 6.0;
    double truncation_prob = 0.4;    // probability a shot is an upper-body close-up
    double missing_prob = 0.1;       // per-frame probability the identity is absent
};

// Ground-truth world motion: per-frame body pose and world orientation,
// constant shape. The subject's pelvis stays at the world origin; cameras
// provide all translation.
struct MotionSample {
    std::vector<std::vector<Eigen::Vector3d>> theta_b;  // [T][J-1]
    std::vector<Eigen::Vector3d> r_world;               // [T]
    Eigen::VectorXd beta;
};

struct Shot {
    int start = 0;
    int length = 0;
    bool closeup = false;
    Camera camera;
    Eigen::Matrix3d r_view = Eigen::Matrix3d::Identity();  // world -> camera
    Eigen::Vector3d cam_pos = Eigen::Vector3d::Zero();     // world
    Eigen::Vector3d target = Eigen::Vector3d::Zero();      // world
};

struct ShotSchedule {
    std::vector<Shot> shots;
    double missing_prob = 0.0;

    int shot_of_frame(int t) const {
        for (size_t i = 0; i < shots.size(); ++i)
            if (t < shots[i].start + shots[i].length) return static_cast<int>(i);
        return static_cast<int>(shots.size()) - 1;
    }
};

namespace detail {

inline Eigen::Vector3d random_unit_axis(Rng& rng) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    return n > 1e-12 ? Eigen::Vector3d(v / n) : Eigen::Vector3d::UnitX();
}

// Motion amplitude scaling by body part; legs and torso move less so that
// close-up framing keeps knees and ankles below the image.
inline double joint_amplitude(const BodyModel& model, int joint, double base) {
    if (joint < static_cast<int>(model.joint_names.size())) {
        const std::string& name = model.joint_names[joint];
        auto has = [&name](const char* s) { return name.find(s) != std::string::npos; };
        if (has("hip") || has("knee") || has("ankle")) return 0.5 * base;
        if (has("spine") || has("chest") || has("neck") || has("head")) return 0.45 * base;
    }
    return base;
}

// World -> camera rotation looking from `eye` to `target`, y-down image.
inline Eigen::Matrix3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    const Eigen::Vector3d up(0.0, 1.0, 0.0);
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(up);
    if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    return r;
}

}  // namespace detail

// Smooth keyframed motion: per joint, keyframes every keyframe_spacing
// frames connected by geodesic interpolation, with the step between
// keyframes capped at max_joint_speed * spacing so every per-frame step is
// capped at max_joint_speed exactly. World orientation is a smooth yaw
// about world-up plus a small constant tilt.
inline MotionSample sample_motion(const BodyModel& model, const MotionConfig& cfg) {
    if (cfg.frame_count < 2) throw DataError("motion config: frame_count must be >= 2");
    if (cfg.keyframe_spacing < 2) throw DataError("motion config: keyframe_spacing must be >= 2");
    Rng rng(substream(cfg.rng_seed, 1));

    const int T = cfg.frame_count;
    const int spacing = cfg.keyframe_spacing;
    const int segments = std::max(1, (T - 2) / spacing + 1);
    const double budget = cfg.max_joint_speed * spacing;
    const int n_joints = model.joint_count - 1;

    MotionSample out;
    out.beta = Eigen::VectorXd(model.shape_dim);
    for (int k = 0; k < model.shape_dim; ++k)
        out.beta[k] = rng.uniform(-cfg.beta_range, cfg.beta_range);

    // Keyframe rotations and per-segment geodesic deltas, per joint.
    std::vector<std::vector<Eigen::Matrix3d>> key(n_joints);
    std::vector<std::vector<Eigen::Vector3d>> delta(n_joints);
    for (int j = 0; j < n_joints; ++j) {
        const double amp = detail::joint_amplitude(model, j + 1, cfg.pose_amplitude);
        key[j].resize(segments + 1);
        delta[j].resize(segments);
        key[j][0] = rodrigues(rng.uniform(0.0, amp) * detail::random_unit_axis(rng));
        for (int k = 0; k < segments; ++k) {
            Eigen::Vector3d step = Eigen::Vector3d::Zero();
            Eigen::Matrix3d cand = key[j][k];
            bool ok = false;
            for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
                step = rng.uniform(0.0, std::min(budget, 2.5)) * detail::random_unit_axis(rng);
                cand = key[j][k] * rodrigues(step);
                ok = log_rotation(cand).norm() <= amp;
            }
            if (!ok) {
                // Pull back toward the rest pose within the speed budget.
                const Eigen::Vector3d back = log_rotation(key[j][k].transpose());
                const double mag = std::min(budget, back.norm());
                step = back.norm() > 1e-12 ? Eigen::Vector3d(mag * back.normalized())
                                           : Eigen::Vector3d::Zero();
                cand = key[j][k] * rodrigues(step);
            }
            delta[j][k] = step;
            key[j][k + 1] = cand;
        }
    }

    // World yaw keyframes.
    std::vector<double> yaw(segments + 1);
    yaw[0] = rng.uniform(-M_PI, M_PI);
    for (int k = 0; k < segments; ++k)
        yaw[k + 1] = yaw[k] + rng.uniform(-budget, budget);
    const Eigen::Matrix3d tilt =
        rodrigues({rng.uniform(-0.08, 0.08), 0.0, rng.uniform(-0.08, 0.08)});

    out.theta_b.resize(T);
    out.r_world.resize(T);
    for (int t = 0; t < T; ++t) {
        const int k = std::min(t / spacing, segments - 1);
        const double s = static_cast<double>(t - k * spacing) / spacing;
        out.theta_b[t].resize(n_joints);
        for (int j = 0; j < n_joints; ++j)
            out.theta_b[t][j] = log_rotation(key[j][k] * rodrigues(s * delta[j][k]));
        const double psi = yaw[k] + s * (yaw[k + 1] - yaw[k]);
        out.r_world[t] = log_rotation(rodrigues({0.0, psi, 0.0}) * tilt);
    }
    return out;
}

// Shot schedule plus one static viewpoint per shot. Consecutive shots are
// forced apart (azimuth >= pi/4, distance gap between consecutive regular
// shots) so a cut always produces a clear camera-frame discontinuity, and
// close-ups never follow close-ups.
inline ShotSchedule sample_shots(int frame_count, const ShotConfig& cfg,
                                 std::uint64_t seed) {
    if (frame_count < 1) throw DataError("shot schedule: frame_count must be >= 1");
    Rng rng(substream(seed, 2));
    ShotSchedule schedule;
    schedule.missing_prob = cfg.missing_prob;

    // Lengths.
    std::vector<int> lengths;
    if (cfg.mean_shot_length >= frame_count || frame_count <= 2) {
        lengths.push_back(frame_count);
    } else {
        const double p = 1.0 / std::max(1.0, cfg.mean_shot_length);
        int used = 0;
        while (used < frame_count) {
            const double u = rng.uniform();
            int len = 1 + static_cast<int>(std::floor(std::log(std::max(1e-12, 1.0 - u)) /
                                                      std::log(1.0 - p)));
            len = std::max(2, len);
            if (used + len > frame_count) len = frame_count - used;
            if (frame_count - (used + len) == 1) len += 1;  // no length-1 tail
            lengths.push_back(len);
            used += len;
        }
        if (lengths.size() > 1 && lengths.back() < 2) {
            lengths[lengths.size() - 2] += lengths.back();
            lengths.pop_back();
        }
    }

    double azimuth = rng.uniform(0.0, 2.0 * M_PI);
    double prev_distance = -1.0;
    bool prev_closeup = false;
    const double min_gap = std::min(1.0, 0.5 * (cfg.camera_distance_max -
                                                cfg.camera_distance_min));
    int start = 0;
    for (size_t k = 0; k < lengths.size(); ++k) {
        Shot shot;
        shot.start = start;
        shot.length = lengths[k];
        start += lengths[k];
        shot.closeup = !prev_closeup && rng.bernoulli(cfg.truncation_prob);

        if (k > 0) {
            const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            azimuth += sign * rng.uniform(M_PI / 4.0, M_PI);
        }
        double elevation, distance;
        if (shot.closeup) {
            elevation = rng.uniform(-0.08, 0.08);
            distance = rng.uniform(0.9, 1.2);
            shot.target = {0.0, 0.45, 0.0};
        } else {
            elevation = rng.uniform(-0.25, 0.25);
            distance = rng.uniform(cfg.camera_distance_min, cfg.camera_distance_max);
            for (int attempt = 0; attempt < 32 && prev_distance >= 0.0 &&
                                  std::abs(distance - prev_distance) < min_gap;
                 ++attempt)
                distance = rng.uniform(cfg.camera_distance_min, cfg.camera_distance_max);
            if (prev_distance >= 0.0 && std::abs(distance - prev_distance) < min_gap)
                distance = (prev_distance - cfg.camera_distance_min <
                            cfg.camera_distance_max - prev_distance)
                               ? cfg.camera_distance_max
                               : cfg.camera_distance_min;
            prev_distance = distance;
            shot.target = Eigen::Vector3d::Zero();
        }
        prev_closeup = shot.closeup;

        const Eigen::Vector3d dir(std::cos(elevation) * std::cos(azimuth),
                                  std::sin(elevation),
                                  std::cos(elevation) * std::sin(azimuth));
        shot.cam_pos = shot.target + distance * dir;
        shot.r_view = detail::look_at(shot.cam_pos, shot.target);
        shot.camera = Camera{};
        shot.camera.shot_id = static_cast<int>(k);
        schedule.shots.push_back(shot);
    }
    return schedule;
}

// Compose the world motion with each shot's viewpoint, project, and corrupt:
// Gaussian pixel noise on visible joints, confidence 0 outside the image,
// whole frames dropped with probability missing_prob. Ground truth rides
// along.
inline SequenceRecord synthesize_observations(const BodyModel& model,
                                              const MotionSample& motion,
                                              const ShotSchedule& schedule,
                                              double noise_sigma_px,
                                              std::uint64_t seed) {
    const int T = static_cast<int>(motion.theta_b.size());
    if (motion.r_world.size() != static_cast<size_t>(T))
        throw DataError("synthesize: motion arrays disagree on length");
    Rng rng(substream(seed, 3));

    SequenceRecord seq;
    seq.beta_gt = motion.beta;
    seq.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
        const Shot& shot = schedule.shots[schedule.shot_of_frame(t)];
        FrameObservation f;
        f.frame_index = t;
        f.shot_id = shot.camera.shot_id;
        f.camera = shot.camera;

        FrameParams params;
        params.r_gl = log_rotation(shot.r_view * rodrigues(motion.r_world[t]));
        params.t_gl = shot.r_view * (-shot.cam_pos);
        params.theta_b = motion.theta_b[t];

        const Eigen::Matrix3Xd body = forward_kinematics(model, params.theta_b, motion.beta);
        const Eigen::Matrix3Xd joints = pose_joints(body, params.r_gl, params.t_gl);
        const auto projections = project(joints, f.camera);

        f.keypoints.setZero(3, model.joint_count);
        const bool missing = rng.bernoulli(schedule.missing_prob);
        f.valid = missing ? 0 : 1;
        for (int j = 0; j < model.joint_count; ++j) {
            // Draw in a fixed order regardless of visibility/missing so that
            // the noise stream stays aligned across configs.
            const double conf = rng.uniform(0.5, 1.0);
            const double nu = rng.normal();
            const double nv = rng.normal();
            if (missing || !projections[j].visible) continue;
            f.keypoints(0, j) = projections[j].uv.x() + noise_sigma_px * nu;
            f.keypoints(1, j) = projections[j].uv.y() + noise_sigma_px * nv;
            f.keypoints(2, j) = conf;
        }
        f.gt = FrameGroundTruth{params, joints};
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

struct SimConfig {
    MotionConfig motion;
    ShotConfig shots;
    int sequences = 8;
    double noise_sigma_px = 2.0;
};

inline nlohmann::json sim_config_to_json(const SimConfig& cfg, std::uint64_t seed) {
    return nlohmann::json{
        {"motion",
         {{"frame_count", cfg.motion.frame_count},
          {"keyframe_spacing", cfg.motion.keyframe_spacing},
          {"max_joint_speed", cfg.motion.max_joint_speed},
          {"pose_amplitude", cfg.motion.pose_amplitude},
          {"beta_range", cfg.motion.beta_range}}},
        {"shots",
         {{"mean_shot_length", cfg.shots.mean_shot_length},
          {"camera_distance_min", cfg.shots.camera_distance_min},
          {"camera_distance_max", cfg.shots.camera_distance_max},
          {"truncation_prob", cfg.shots.truncation_prob},
          {"missing_prob", cfg.shots.missing_prob}}},
        {"sequences", cfg.sequences},
        {"noise_sigma_px", cfg.noise_sigma_px},
        {"seed", seed}};
}

// One identity per sequence; sequence i draws everything from
// substream(seed, i), so any subset can be generated independently.
inline SequenceRecord generate_sequence(const BodyModel& model, const SimConfig& cfg,
                                        std::uint64_t master_seed, int sequence_index) {
    const std::uint64_t seq_seed = substream(master_seed, static_cast<std::uint64_t>(sequence_index));
    MotionConfig mc = cfg.motion;
    mc.rng_seed = seq_seed;
    const MotionSample motion = sample_motion(model, mc);
    const ShotSchedule schedule = sample_shots(mc.frame_count, cfg.shots, seq_seed);
    SequenceRecord seq = synthesize_observations(model, motion, schedule,
                                                 cfg.noise_sigma_px, seq_seed);
    seq.identity = sequence_index;
    return seq;
}

inline SequenceDataset generate_dataset(const BodyModel& model, const SimConfig& cfg,
                                        std::uint64_t master_seed) {
    SequenceDataset d;
    d.generator_config = sim_config_to_json(cfg, master_seed);
    d.sequences.reserve(cfg.sequences);
    for (int i = 0; i < cfg.sequences; ++i)
        d.sequences.push_back(generate_sequence(model, cfg, master_seed, i));
    return d;
}

// --- Tracklet assembly -----------------------------------------------------

enum class TrackletMode { single_shot, continuous_identity, multi_shot };

inline TrackletMode tracklet_mode_from_string(const std::string& s) {
    if (s == "single_shot" || s == "single-shot") return TrackletMode::single_shot;
    if (s == "continuous_identity" || s == "continuous-identity")
        return TrackletMode::continuous_identity;
    if (s == "multi_shot" || s == "multi-shot") return TrackletMode::multi_shot;
    throw DataError("unknown tracklet mode: " + s);
}

inline constexpr int kLongTrackletFrames = 20;

struct Tracklet {
    int sequence_index = 0;
    std::vector<int> frame_positions;  // indices into the sequence's frames; valid only
};

struct TrackletStats {
    long count_all = 0;
    long count_long = 0;
    long frames_all = 0;
    long frames_long = 0;
};

struct TrackletSet {
    std::vector<Tracklet> tracklets;
    TrackletStats stats;
};

// single_shot breaks at shot boundaries and at absent frames;
// continuous_identity breaks at absent frames only; multi_shot bridges
// everything, one tracklet per identity. Tracklets contain valid frames
// only, so every valid frame lands in exactly one tracklet per mode.
inline TrackletSet assemble_tracklets(const SequenceDataset& dataset, TrackletMode mode) {
    TrackletSet set;
    for (size_t s = 0; s < dataset.sequences.size(); ++s) {
        const auto& frames = dataset.sequences[s].frames;
        Tracklet current;
        current.sequence_index = static_cast<int>(s);
        int prev_valid_pos = -1;
        auto flush = [&]() {
            if (!current.frame_positions.empty()) {
                set.tracklets.push_back(current);
                current.frame_positions.clear();
            }
        };
        for (size_t i = 0; i < frames.size(); ++i) {
            if (!frames[i].valid) {
                if (mode != TrackletMode::multi_shot) flush();
                continue;
            }
            const bool shot_changed =
                prev_valid_pos >= 0 &&
                frames[i].shot_id != frames[static_cast<size_t>(prev_valid_pos)].shot_id;
            const bool gap = prev_valid_pos >= 0 &&
                             static_cast<size_t>(prev_valid_pos) + 1 != i;
            if (mode == TrackletMode::single_shot && (shot_changed || gap)) flush();
            current.frame_positions.push_back(static_cast<int>(i));
            prev_valid_pos = static_cast<int>(i);
        }
        flush();
    }
    for (const auto& t : set.tracklets) {
        const long len = static_cast<long>(t.frame_positions.size());
        set.stats.count_all += 1;
        set.stats.frames_all += len;
        if (len >= kLongTrackletFrames) {
            set.stats.count_long += 1;
            set.stats.frames_long += len;
        }
    }
    return set;
}

}  // namespace multishot
