#include <catch2/catch.hpp>

#include <set>
#include <utility>

#include "multishot/scene_sim.hpp"
#include "test_util.hpp"

using namespace multishot;

namespace {
const BodyModel& model() {
    static const BodyModel m = default_body_model();
    return m;
}
}  // namespace

TEST_CASE("sample_motion is deterministic in the seed") {
    MotionConfig cfg;
    cfg.rng_seed = 99;
    const MotionSample a = sample_motion(model(), cfg);
    const MotionSample b = sample_motion(model(), cfg);
    REQUIRE(a.beta == b.beta);
    for (int t = 0; t < cfg.frame_count; ++t) {
        REQUIRE(a.r_world[t] == b.r_world[t]);
        for (size_t j = 0; j < a.theta_b[t].size(); ++j)
            REQUIRE(a.theta_b[t][j] == b.theta_b[t][j]);
    }
    MotionConfig other = cfg;
    other.rng_seed = 100;
    const MotionSample c = sample_motion(model(), other);
    REQUIRE(a.theta_b[1][0] != c.theta_b[1][0]);
}

TEST_CASE("per-frame joint rotation stays under the speed limit") {
    MotionConfig cfg;
    cfg.rng_seed = 3;
    const MotionSample m = sample_motion(model(), cfg);
    double max_step = 0.0;
    for (int t = 0; t + 1 < cfg.frame_count; ++t) {
        for (size_t j = 0; j < m.theta_b[t].size(); ++j)
            max_step = std::max(max_step,
                                geodesic_distance(m.theta_b[t][j], m.theta_b[t + 1][j]));
        max_step = std::max(max_step, geodesic_distance(m.r_world[t], m.r_world[t + 1]));
    }
    REQUIRE(max_step <= cfg.max_joint_speed + 1e-9);
}

TEST_CASE("two frames ride one interpolation segment") {
    MotionConfig cfg;
    cfg.frame_count = 2;
    cfg.rng_seed = 5;
    const MotionSample m = sample_motion(model(), cfg);
    REQUIRE(m.theta_b.size() == 2);
    for (size_t j = 0; j < m.theta_b[0].size(); ++j)
        REQUIRE(geodesic_distance(m.theta_b[0][j], m.theta_b[1][j]) <=
                cfg.max_joint_speed + 1e-9);
}

TEST_CASE("degenerate schedule: mean length >= T gives a single shot") {
    ShotConfig cfg;
    cfg.mean_shot_length = 100;
    const ShotSchedule s = sample_shots(64, cfg, 1);
    REQUIRE(s.shots.size() == 1);
    REQUIRE(s.shots[0].length == 64);
}

TEST_CASE("shot lengths are clipped to >= 2 and roughly hit the mean") {
    ShotConfig cfg;
    double total = 0.0;
    long count = 0;
    for (int seed = 0; seed < 1000; ++seed) {
        const ShotSchedule s = sample_shots(400, cfg, static_cast<std::uint64_t>(seed));
        for (size_t k = 0; k < s.shots.size(); ++k) {
            REQUIRE(s.shots[k].length >= 2);
            if (k + 1 < s.shots.size()) {  // last shot is truncated by T
                total += s.shots[k].length;
                ++count;
            }
        }
    }
    const double mean = total / static_cast<double>(count);
    REQUIRE(mean == Approx(cfg.mean_shot_length).margin(0.15 * cfg.mean_shot_length));
}

TEST_CASE("noiseless, untriuncated, never-missing detections equal exact projections") {
    SimConfig cfg;
    cfg.noise_sigma_px = 0.0;
    cfg.shots.truncation_prob = 0.0;
    cfg.shots.missing_prob = 0.0;
    cfg.motion.frame_count = 32;
    const SequenceRecord seq = generate_sequence(model(), cfg, 17, 0);
    REQUIRE(seq.frames.size() == 32);
    for (const auto& f : seq.frames) {
        REQUIRE(f.valid == 1);
        REQUIRE(f.gt.has_value());
        const auto proj = project(f.gt->joints_3d, f.camera);
        for (int j = 0; j < model().joint_count; ++j) {
            REQUIRE(proj[static_cast<size_t>(j)].visible);
            REQUIRE(f.keypoints(2, j) >= 0.5);
            REQUIRE((f.keypoints.block<2, 1>(0, j) - proj[static_cast<size_t>(j)].uv)
                        .norm() < 1e-12);
        }
    }
}

TEST_CASE("close-up shots drop knee and ankle detections in every frame") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SimConfig cfg;
        cfg.shots.truncation_prob = 0.7;
        MotionConfig mc = cfg.motion;
        mc.rng_seed = substream(seed, 0);
        const MotionSample motion = sample_motion(model(), mc);
        const ShotSchedule schedule =
            sample_shots(mc.frame_count, cfg.shots, substream(seed, 0));
        const SequenceRecord seq = synthesize_observations(
            model(), motion, schedule, cfg.noise_sigma_px, substream(seed, 0));
        bool saw_closeup = false;
        for (const auto& shot : schedule.shots) {
            if (!shot.closeup) continue;
            saw_closeup = true;
            for (int t = shot.start; t < shot.start + shot.length; ++t)
                for (int j : default_knee_ankle_joints())
                    REQUIRE(seq.frames[t].keypoints(2, j) == 0.0);
        }
        // Upper body stays observed in close-ups (when the frame is valid).
        for (const auto& shot : schedule.shots) {
            if (!shot.closeup) continue;
            for (int t = shot.start; t < shot.start + shot.length; ++t) {
                if (!seq.frames[t].valid) continue;
                REQUIRE(seq.frames[t].keypoints(2, 4) > 0.0);  // head
            }
        }
        (void)saw_closeup;
    }
}

TEST_CASE("missing-frame fraction matches the configured probability") {
    SimConfig cfg;
    cfg.motion.frame_count = 64;
    cfg.sequences = 160;
    const SequenceDataset d = generate_dataset(model(), cfg, 23);
    long missing = 0, total = 0;
    for (const auto& s : d.sequences)
        for (const auto& f : s.frames) {
            missing += f.valid ? 0 : 1;
            ++total;
        }
    const double p = cfg.shots.missing_prob;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(total));
    REQUIRE(std::abs(static_cast<double>(missing) / total - p) <= 3.0 * sigma);
}

TEST_CASE("parallel-style per-sequence generation equals batch generation") {
    SimConfig cfg;
    cfg.sequences = 4;
    cfg.motion.frame_count = 16;
    const SequenceDataset d = generate_dataset(model(), cfg, 7);
    for (int i = 0; i < cfg.sequences; ++i) {
        const SequenceRecord solo = generate_sequence(model(), cfg, 7, i);
        REQUIRE(solo.frames.size() == d.sequences[i].frames.size());
        for (size_t t = 0; t < solo.frames.size(); ++t) {
            REQUIRE(solo.frames[t].valid == d.sequences[i].frames[t].valid);
            REQUIRE(solo.frames[t].keypoints == d.sequences[i].frames[t].keypoints);
        }
    }
}

TEST_CASE("within a shot the camera-frame orientation changes smoothly") {
    SimConfig cfg;
    cfg.shots.missing_prob = 0.0;
    for (std::uint64_t seed = 40; seed < 44; ++seed) {
        const SequenceRecord seq = generate_sequence(model(), cfg, seed, 0);
        for (size_t t = 0; t + 1 < seq.frames.size(); ++t) {
            if (seq.frames[t].shot_id != seq.frames[t + 1].shot_id) continue;
            // Static cameras: the camera-frame step equals the world step.
            REQUIRE(geodesic_distance(seq.frames[t].gt->params.r_gl,
                                      seq.frames[t + 1].gt->params.r_gl) <=
                    cfg.motion.max_joint_speed + 1e-9);
        }
    }
}

TEST_CASE("cuts jump in the camera frame while the canonical body stays smooth") {
    SimConfig cfg;
    cfg.motion.frame_count = 64;
    cfg.shots.missing_prob = 0.0;
    long boundaries = 0;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const SequenceRecord seq = generate_sequence(model(), cfg, seed, 0);
        for (size_t t = 0; t + 1 < seq.frames.size(); ++t) {
            const auto& fa = seq.frames[t];
            const auto& fb = seq.frames[t + 1];
            const Eigen::Matrix3Xd can_a = canonicalize(fa.gt->joints_3d, fa.gt->params.r_gl);
            const Eigen::Matrix3Xd can_b = canonicalize(fb.gt->joints_3d, fb.gt->params.r_gl);
            const double can_step = (can_a - can_b).colwise().norm().mean();
            REQUIRE(can_step < 0.2);  // smooth 3D under the motion budget
            if (fa.shot_id != fb.shot_id) {
                ++boundaries;
                const double cam_step =
                    (fa.gt->joints_3d - fb.gt->joints_3d).colwise().norm().mean();
                REQUIRE(cam_step > 0.5);  // the cut is a real discontinuity
            }
        }
    }
    REQUIRE(boundaries > 20);
}

TEST_CASE("tracklet assembly modes") {
    // Build a dataset by hand: 9 frames, shots 0/1/2 of 3 frames each.
    SequenceDataset d;
    SequenceRecord s;
    s.identity = 0;
    for (int t = 0; t < 9; ++t) {
        FrameObservation f;
        f.frame_index = t;
        f.shot_id = t / 3;
        f.valid = 1;
        f.keypoints.setZero(3, 1);
        s.frames.push_back(f);
    }
    d.sequences.push_back(s);

    SECTION("three shots, no missing frames: 3 / 1 / 1") {
        REQUIRE(assemble_tracklets(d, TrackletMode::single_shot).tracklets.size() == 3);
        REQUIRE(assemble_tracklets(d, TrackletMode::continuous_identity).tracklets.size() ==
                1);
        REQUIRE(assemble_tracklets(d, TrackletMode::multi_shot).tracklets.size() == 1);
    }

    SECTION("a missing frame mid-shot splits continuous_identity but not multi_shot") {
        d.sequences[0].frames[4].valid = 0;
        d.sequences[0].frames[4].keypoints.setZero();
        REQUIRE(assemble_tracklets(d, TrackletMode::continuous_identity).tracklets.size() ==
                2);
        REQUIRE(assemble_tracklets(d, TrackletMode::multi_shot).tracklets.size() == 1);
        REQUIRE(assemble_tracklets(d, TrackletMode::single_shot).tracklets.size() == 4);
    }
}

TEST_CASE("tracklet counts are monotone across modes and partition valid frames") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SimConfig cfg;
        cfg.sequences = 6;
        const SequenceDataset d = generate_dataset(model(), cfg, seed);
        const TrackletSet single = assemble_tracklets(d, TrackletMode::single_shot);
        const TrackletSet cont = assemble_tracklets(d, TrackletMode::continuous_identity);
        const TrackletSet multi = assemble_tracklets(d, TrackletMode::multi_shot);
        REQUIRE(single.stats.count_all >= cont.stats.count_all);
        REQUIRE(cont.stats.count_all >= multi.stats.count_all);
        // Merging fragments can only grow the footprint of long tracklets.
        REQUIRE(single.stats.frames_long <= cont.stats.frames_long);
        REQUIRE(cont.stats.frames_long <= multi.stats.frames_long);
        // Same valid frames in every mode, each exactly once.
        long valid = 0;
        for (const auto& s : d.sequences)
            for (const auto& f : s.frames) valid += f.valid;
        for (const TrackletSet* set : {&single, &cont, &multi}) {
            REQUIRE(set->stats.frames_all == valid);
            std::set<std::pair<int, int>> seen;
            for (const auto& t : set->tracklets)
                for (int pos : t.frame_positions)
                    REQUIRE(seen.insert({t.sequence_index, pos}).second);
        }
    }
}

TEST_CASE("unknown tracklet mode is rejected") {
    REQUIRE_THROWS_AS(tracklet_mode_from_string("bogus"), DataError);
}
