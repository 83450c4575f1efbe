#include <catch2/catch.hpp>

#include <filesystem>

#include "multishot/metrics.hpp"
#include "multishot/solver.hpp"
#include "scenario.hpp"
#include "test_util.hpp"

using namespace multishot;

namespace {

const BodyModel& model() {
    static const BodyModel m = default_body_model();
    return m;
}

SequenceRecord clean_sequence(std::uint64_t seed, int frames) {
    SimConfig cfg;
    cfg.noise_sigma_px = 0.0;
    cfg.shots.truncation_prob = 0.0;
    cfg.shots.missing_prob = 0.0;
    cfg.motion.frame_count = frames;
    return generate_sequence(model(), cfg, seed, 0);
}

double mean_pa_mpjpe(const SequenceEstimate& est, const SequenceRecord& seq) {
    double total = 0.0;
    long n = 0;
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        if (!seq.frames[t].valid) continue;
        const Eigen::Matrix3Xd pred = pose_joints(
            forward_kinematics(model(), est.frames[t].theta_b, est.beta),
            est.frames[t].r_gl, est.frames[t].t_gl);
        total += pa_mpjpe(pred, seq.frames[t].gt->joints_3d);
        ++n;
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("perturbed_gt with zero noise reproduces the ground truth") {
    const SequenceRecord seq = clean_sequence(71, 8);
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.0;
    const SequenceEstimate est = initialize_sequence(model(), seq, cfg, 5);
    REQUIRE(est.beta == *seq.beta_gt);
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        REQUIRE(est.frames[t].r_gl == seq.frames[t].gt->params.r_gl);
        REQUIRE(est.frames[t].t_gl == seq.frames[t].gt->params.t_gl);
    }
}

TEST_CASE("perturbed_gt without ground truth is an error") {
    SequenceRecord seq = clean_sequence(73, 4);
    seq.beta_gt.reset();
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    REQUIRE_THROWS_AS(initialize_sequence(model(), seq, cfg, 0), DataError);
}

TEST_CASE("invalid frames initialize to the rest pose and stay unconverged") {
    SequenceRecord seq = clean_sequence(75, 6);
    seq.frames[2].valid = 0;
    seq.frames[2].keypoints.setZero();
    SolverConfig cfg;
    cfg.init = InitStrategy::coarse;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 0);
    for (const auto& a : init.frames[2].theta_b) REQUIRE(a.norm() == 0.0);

    cfg.max_iters = 30;
    const SequenceEstimate est = optimize_sequence(model(), seq, cfg, init);
    REQUIRE_FALSE(est.converged[2]);
}

TEST_CASE("coarse initialization finds the yaw of a frontal frame") {
    // Exact member of the grid family, 3 degrees off the nearest grid point.
    const double true_yaw = 73.0 * M_PI / 180.0;
    FrameParams p = FrameParams::rest(model());
    p.r_gl = detail::upright_yaw(true_yaw);
    p.t_gl = {0.0, 0.0, 4.0};
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(model().shape_dim);
    const FrameObservation obs = test_util::exact_observation(model(), p, beta);
    const FrameParams init = coarse_init_frame(model(), obs, 50.0);
    REQUIRE(geodesic_distance(init.r_gl, p.r_gl) < 10.0 * M_PI / 180.0);
    // Median bones foreshorten under yaw, so depth is only basin-of-attraction
    // accurate.
    REQUIRE(std::abs(init.t_gl.z() - 4.0) < 2.0);
}

TEST_CASE("accepted-step energies never increase") {
    const SequenceRecord seq = clean_sequence(77, 10);
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.3;
    cfg.max_iters = 120;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 9);
    const SequenceEstimate est = optimize_sequence(model(), seq, cfg, init);
    REQUIRE(est.energy_trace.size() >= 2);
    for (size_t i = 1; i < est.energy_trace.size(); ++i)
        REQUIRE(est.energy_trace[i] <= est.energy_trace[i - 1]);
}

TEST_CASE("with zero smoothness weights all modes agree") {
    const SequenceRecord seq = clean_sequence(79, 8);
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.1;
    cfg.weights.w_sm_joint = 0.0;
    cfg.weights.w_sm_param = 0.0;
    cfg.max_iters = 200;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 13);

    std::vector<double> finals;
    for (const FitMode mode :
         {FitMode::single_frame, FitMode::single_shot, FitMode::multi_shot}) {
        SolverConfig c = cfg;
        c.mode = mode;
        finals.push_back(optimize_sequence(model(), seq, c, init).energy.total);
    }
    REQUIRE(finals[0] == Approx(finals[1]).epsilon(1e-6));
    REQUIRE(finals[0] == Approx(finals[2]).epsilon(1e-6));
}

TEST_CASE("solver is deterministic") {
    const SequenceRecord seq = clean_sequence(81, 8);
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.2;
    cfg.max_iters = 60;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 21);
    const SequenceEstimate a = optimize_sequence(model(), seq, cfg, init);
    const SequenceEstimate b = optimize_sequence(model(), seq, cfg, init);
    REQUIRE(a.beta == b.beta);
    REQUIRE(a.iterations == b.iterations);
    for (size_t t = 0; t < a.frames.size(); ++t) {
        REQUIRE(a.frames[t].r_gl == b.frames[t].r_gl);
        REQUIRE(a.frames[t].t_gl == b.frames[t].t_gl);
        for (size_t j = 0; j < a.frames[t].theta_b.size(); ++j)
            REQUIRE(a.frames[t].theta_b[j] == b.frames[t].theta_b[j]);
    }
}

TEST_CASE("noiseless recovery reaches millimeter accuracy") {
    const SequenceRecord seq = clean_sequence(83, 10);
    SolverConfig cfg;
    cfg.mode = FitMode::multi_shot;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.05;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 3);
    const SequenceEstimate est = optimize_sequence(model(), seq, cfg, init);
    REQUIRE(mean_pa_mpjpe(est, seq) < 5.0);
}

TEST_CASE("canonical smoothness at ground truth is small; camera jumps are not") {
    const SequenceRecord seq = clean_sequence(85, 16);
    const SequenceLayout layout{16, model().joint_count, model().shape_dim};
    std::vector<FrameParams> gt;
    for (const auto& f : seq.frames) gt.push_back(f.gt->params);
    const Eigen::VectorXd x = pack_sequence(layout, *seq.beta_gt, gt);
    Weights w;
    const EnergyBreakdown canonical = total_energy(model(), seq.frames, layout, x, w,
                                                   {SmoothnessSpace::canonical, false});
    const EnergyBreakdown camera = total_energy(model(), seq.frames, layout, x, w,
                                                {SmoothnessSpace::camera_frame, false});
    // Per-pair canonical joint motion obeys the speed budget; the camera-frame
    // version blows up at every cut.
    REQUIRE(canonical.e_sm_joint < camera.e_sm_joint / 20.0);
    bool found_boundary = false;
    for (size_t t = 0; t + 1 < seq.frames.size(); ++t) {
        if (seq.frames[t].shot_id == seq.frames[t + 1].shot_id) continue;
        found_boundary = true;
        REQUIRE(camera.per_frame_sm_joint[t] > 1.0);
        REQUIRE(canonical.per_frame_sm_joint[t] < 0.5);
    }
    REQUIRE(found_boundary);
}

TEST_CASE("multi-shot fills in the truncated lower body from the other shot") {
    // One two-shot scene: shot 2 is a close-up missing knees and ankles.
    const auto& legs = default_knee_ankle_joints();
    int wins = 0;
    for (std::uint64_t seed = 300; seed < 303; ++seed) {
        const SequenceRecord seq =
            scenario::two_shot_sequence(model(), seed, 0, scenario::TwoShotOptions{});
        SolverConfig cfg;
        cfg.init = InitStrategy::perturbed_gt;
        cfg.init_noise = 0.2;
        cfg.max_iters = 250;
        const SequenceEstimate init = initialize_sequence(model(), seq, cfg, seed);

        auto leg_error = [&](const SequenceEstimate& est) {
            double err = 0.0;
            long n = 0;
            for (size_t t = 0; t < seq.frames.size(); ++t) {
                if (seq.frames[t].shot_id != 1) continue;  // truncated shot only
                const Eigen::Matrix3Xd pred = pose_joints(
                    forward_kinematics(model(), est.frames[t].theta_b, est.beta),
                    est.frames[t].r_gl, est.frames[t].t_gl);
                const Eigen::Matrix3Xd can_pred = canonicalize(pred, est.frames[t].r_gl);
                const Eigen::Matrix3Xd can_gt = canonicalize(
                    seq.frames[t].gt->joints_3d, seq.frames[t].gt->params.r_gl);
                for (int j : legs) {
                    err += (can_pred.col(j) - can_gt.col(j)).norm();
                    ++n;
                }
            }
            return err / static_cast<double>(n);
        };

        SolverConfig multi = cfg;
        multi.mode = FitMode::multi_shot;
        SolverConfig single = cfg;
        single.mode = FitMode::single_frame;
        const double err_multi = leg_error(optimize_sequence(model(), seq, multi, init));
        const double err_single = leg_error(optimize_sequence(model(), seq, single, init));
        if (err_multi < err_single) ++wins;
    }
    REQUIRE(wins >= 2);
}

TEST_CASE("non-finite energy reports the offending frame") {
    SequenceRecord seq = clean_sequence(89, 4);
    seq.frames[2].keypoints(0, 3) = std::numeric_limits<double>::quiet_NaN();
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.0;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 0);
    try {
        optimize_sequence(model(), seq, cfg, init);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        REQUIRE(std::string(e.what()).find("frame 2") != std::string::npos);
    }
}

TEST_CASE("estimates json round trip") {
    const SequenceRecord seq = clean_sequence(87, 6);
    SolverConfig cfg;
    cfg.init = InitStrategy::perturbed_gt;
    cfg.init_noise = 0.1;
    cfg.max_iters = 20;
    const SequenceEstimate init = initialize_sequence(model(), seq, cfg, 1);
    const SequenceEstimate est = optimize_sequence(model(), seq, cfg, init);

    const std::string path =
        (std::filesystem::temp_directory_path() / "multishot_estimates.json").string();
    write_estimates(model(), {est}, path);
    const auto back = read_estimates(path, model().joint_count - 1);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].identity == est.identity);
    REQUIRE(back[0].beta == est.beta);
    REQUIRE(back[0].frames.size() == est.frames.size());
    for (size_t t = 0; t < est.frames.size(); ++t) {
        REQUIRE(back[0].frames[t].r_gl == est.frames[t].r_gl);
        REQUIRE(back[0].frames[t].t_gl == est.frames[t].t_gl);
        REQUIRE(back[0].converged[t] == est.converged[t]);
    }
    std::filesystem::remove(path);
}
