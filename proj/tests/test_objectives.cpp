#include <catch2/catch.hpp>

#include "multishot/objectives.hpp"
#include "multishot/scene_sim.hpp"
#include "test_util.hpp"

using namespace multishot;

namespace {

const BodyModel& model() {
    static const BodyModel m = default_body_model();
    return m;
}

// Random short sequence with varied validity, shots and noisy detections.
std::vector<FrameObservation> random_sequence(Rng& rng, int T, const Eigen::VectorXd& beta,
                                              bool with_invalid = true) {
    std::vector<FrameObservation> frames;
    for (int t = 0; t < T; ++t) {
        const FrameParams p = test_util::random_frame_params(model(), rng, 0.4);
        FrameObservation obs = test_util::exact_observation(model(), p, beta, t, t / 2);
        for (int j = 0; j < model().joint_count; ++j) {
            if (obs.keypoints(2, j) <= 0.0) continue;
            obs.keypoints(0, j) += rng.normal(0.0, 8.0);
            obs.keypoints(1, j) += rng.normal(0.0, 8.0);
            obs.keypoints(2, j) = rng.uniform(0.3, 1.0);
        }
        if (with_invalid && rng.bernoulli(0.2)) {
            obs.valid = 0;
            obs.keypoints.setZero();
        }
        frames.push_back(std::move(obs));
    }
    return frames;
}

}  // namespace

TEST_CASE("e_proj vanishes on exact detections and unobserved frames") {
    Rng rng(51);
    const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
    const FrameParams p = test_util::random_frame_params(model(), rng);
    FrameObservation obs = test_util::exact_observation(model(), p, beta);

    Eigen::VectorXd grad;
    REQUIRE(e_proj(model(), p, beta, obs, 50.0, &grad) == Approx(0.0).margin(1e-18));

    obs.keypoints.row(2).setZero();
    REQUIRE(e_proj(model(), p, beta, obs, 50.0, &grad) == 0.0);
    REQUIRE(grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("geman-mcclure hits sigma^2/2 at residual sigma") {
    Rng rng(53);
    const double sigma = 50.0;
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(model().shape_dim);
    const FrameParams p = test_util::random_frame_params(model(), rng);
    FrameObservation obs = test_util::exact_observation(model(), p, beta);
    // Keep exactly one joint, displaced by exactly sigma pixels.
    for (int j = 0; j < model().joint_count; ++j)
        if (j != 4) obs.keypoints(2, j) = 0.0;
    REQUIRE(obs.keypoints(2, 4) > 0.0);
    obs.keypoints(2, 4) = 1.0;
    obs.keypoints(0, 4) += sigma;
    REQUIRE(e_proj(model(), p, beta, obs, sigma) == Approx(sigma * sigma / 2.0).epsilon(1e-12));
}

TEST_CASE("geman-mcclure term is bounded by sigma^2 times total confidence") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
        const FrameParams p = test_util::random_frame_params(model(), rng);
        FrameObservation obs = test_util::exact_observation(model(), p, beta);
        double conf_sum = 0.0;
        for (int j = 0; j < model().joint_count; ++j) {
            if (obs.keypoints(2, j) <= 0.0) continue;
            obs.keypoints(0, j) += rng.uniform(-4000.0, 4000.0);
            obs.keypoints(1, j) += rng.uniform(-4000.0, 4000.0);
            conf_sum += obs.keypoints(2, j);
        }
        const double sigma = 50.0;
        REQUIRE(e_proj(model(), p, beta, obs, sigma) <= sigma * sigma * conf_sum + 1e-9);
    }
}

TEST_CASE("e_prior evaluates the quadratic about the rest pose") {
    const Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(model().shape_dim);
    FrameParams rest = FrameParams::rest(model());
    REQUIRE(e_prior(rest, beta0, 0.1, 1.0) == 0.0);

    FrameParams one = rest;
    one.theta_b[3][1] = 1.0;
    REQUIRE(e_prior(one, beta0, 0.1, 1.0) == Approx(0.1));

    // Gradient = 2 w theta, checked against finite differences.
    Rng rng(57);
    const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
    const FrameParams p = test_util::random_frame_params(model(), rng);
    Eigen::VectorXd g_theta, g_beta;
    e_prior(p, beta, 0.1, 1.0, &g_theta, &g_beta);
    const int n = 3 * (model().joint_count - 1);
    Eigen::VectorXd x(n + model().shape_dim);
    for (int j = 0; j + 1 < model().joint_count; ++j)
        x.segment<3>(3 * j) = p.theta_b[static_cast<size_t>(j)];
    x.tail(model().shape_dim) = beta;
    const Eigen::VectorXd fd = test_util::fd_gradient(
        [&](const Eigen::VectorXd& v) {
            FrameParams q = p;
            for (int j = 0; j + 1 < model().joint_count; ++j)
                q.theta_b[static_cast<size_t>(j)] = v.segment<3>(3 * j);
            return e_prior(q, v.tail(model().shape_dim), 0.1, 1.0);
        },
        x, 1e-6);
    Eigen::VectorXd analytic(n + model().shape_dim);
    analytic.head(n) = g_theta;
    analytic.tail(model().shape_dim) = g_beta;
    REQUIRE(test_util::rel_error(analytic, fd) < 1e-6);
}

TEST_CASE("canonical joint smoothness ignores both frames' rigid transforms") {
    Rng rng(59);
    const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
    const FrameParams a = test_util::random_frame_params(model(), rng);
    REQUIRE(e_sm_joint(model(), a.theta_b, a.theta_b, beta) == 0.0);

    // Whole-sequence gradient: r_gl / t_gl blocks of the smoothness term are
    // exactly zero. Isolate by zeroing every other weight.
    std::vector<FrameObservation> frames;
    FrameParams b = a;
    b.r_gl = test_util::random_vec3(rng, 2.0);
    b.t_gl = test_util::random_vec3(rng, 3.0);
    b.theta_b[5][0] += 0.3;
    frames.push_back(test_util::exact_observation(model(), a, beta, 0, 0));
    frames.push_back(test_util::exact_observation(model(), b, beta, 1, 1));
    const SequenceLayout layout{2, model().joint_count, model().shape_dim};
    Weights w;
    w.w_proj = 0.0;
    w.w_prior_pose = 0.0;
    w.w_prior_shape = 0.0;
    w.w_sm_param = 0.0;
    w.w_sm_joint = 1.0;
    const Eigen::VectorXd x =
        pack_sequence(layout, beta, {a, b});
    Eigen::VectorXd grad;
    const EnergyBreakdown br = total_energy(model(), frames, layout, x, w,
                                            {SmoothnessSpace::canonical, false}, &grad);
    REQUIRE(br.e_sm_joint > 0.0);
    for (int t = 0; t < 2; ++t)
        REQUIRE(grad.segment<6>(layout.frame_offset(t)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("small elbow bend has the hand-computed smoothness value") {
    BodyModel m;  // root - elbow - wrist chain, one meter bones
    m.joint_count = 3;
    m.shape_dim = 0;
    m.parent = {-1, 0, 1};
    m.rest_offset = {{0, 0, 0}, {1, 0, 0}, {0.5, 0, 0}};
    m.shape_basis = {{}, {}, {}};
    m.validate();
    const double delta = 1e-3;
    std::vector<Eigen::Vector3d> theta_a = {{0, 0, 0}, {0, 0, 0}};
    std::vector<Eigen::Vector3d> theta_b = {{0, 0, delta}, {0, 0, 0}};
    const double value = e_sm_joint(m, theta_a, theta_b, Eigen::VectorXd());
    // Only the wrist moves, by (bone * delta) to first order.
    REQUIRE(value == Approx(0.5 * delta * 0.5 * delta).epsilon(0.01));
}

TEST_CASE("parameter smoothness equals the brute-force sum") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const FrameParams a = test_util::random_frame_params(model(), rng);
        const FrameParams b = test_util::random_frame_params(model(), rng);
        double brute = 0.0;
        for (size_t j = 0; j < a.theta_b.size(); ++j)
            brute += (a.theta_b[j] - b.theta_b[j]).squaredNorm();
        REQUIRE(e_sm_param(a.theta_b, b.theta_b) == Approx(brute).margin(1e-12));

        std::vector<Eigen::Vector3d> unit = a.theta_b;
        unit[7][2] += 1.0;
        REQUIRE(e_sm_param(a.theta_b, unit) == Approx(1.0));
        REQUIRE(e_sm_param(a.theta_b, a.theta_b) == 0.0);
    }
}

TEST_CASE("total energy boundary cases") {
    Rng rng(63);
    const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
    Weights w;

    SECTION("single frame has no smoothness terms") {
        const auto frames = random_sequence(rng, 1, beta, false);
        const SequenceLayout layout{1, model().joint_count, model().shape_dim};
        const Eigen::VectorXd x =
            pack_sequence(layout, beta, {test_util::random_frame_params(model(), rng)});
        const EnergyBreakdown br = total_energy(model(), frames, layout, x, w,
                                                {SmoothnessSpace::canonical, false});
        REQUIRE(br.e_sm_joint == 0.0);
        REQUIRE(br.e_sm_param == 0.0);
        REQUIRE(br.total == Approx(w.w_proj * br.e_proj + br.e_prior));
    }

    SECTION("all frames invalid leaves only the prior") {
        auto frames = random_sequence(rng, 3, beta, false);
        for (auto& f : frames) {
            f.valid = 0;
            f.keypoints.setZero();
        }
        const SequenceLayout layout{3, model().joint_count, model().shape_dim};
        std::vector<FrameParams> params;
        for (int t = 0; t < 3; ++t)
            params.push_back(test_util::random_frame_params(model(), rng));
        const Eigen::VectorXd x = pack_sequence(layout, beta, params);
        const EnergyBreakdown br = total_energy(model(), frames, layout, x, w,
                                                {SmoothnessSpace::canonical, false});
        REQUIRE(br.e_proj == 0.0);
        REQUIRE(br.e_sm_joint == 0.0);
        REQUIRE(br.e_sm_param == 0.0);
        REQUIRE(br.total == Approx(br.e_prior));
        REQUIRE(br.e_prior > 0.0);
    }
}

TEST_CASE("breakdown total equals the weighted sum of terms") {
    Rng rng(65);
    const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
    const auto frames = random_sequence(rng, 5, beta);
    const SequenceLayout layout{5, model().joint_count, model().shape_dim};
    std::vector<FrameParams> params;
    for (int t = 0; t < 5; ++t) params.push_back(test_util::random_frame_params(model(), rng));
    const Eigen::VectorXd x = pack_sequence(layout, beta, params);
    Weights w;
    w.w_proj = 0.7;
    w.w_sm_joint = 3.0;
    w.w_sm_param = 0.4;
    const EnergyBreakdown br =
        total_energy(model(), frames, layout, x, w, {SmoothnessSpace::canonical, false});
    REQUIRE(br.total == Approx(w.w_proj * br.e_proj + br.e_prior +
                               w.w_sm_joint * br.e_sm_joint + w.w_sm_param * br.e_sm_param)
                            .margin(1e-10));
    REQUIRE(br.e_proj >= 0.0);
    REQUIRE(br.e_prior >= 0.0);
    REQUIRE(br.e_sm_joint >= 0.0);
    REQUIRE(br.e_sm_param >= 0.0);
}

TEST_CASE("total energy gradient matches finite differences in every mode") {
    Rng rng(67);
    const std::vector<SmoothnessRule> rules = {
        {SmoothnessSpace::none, false},
        {SmoothnessSpace::camera_frame, true},
        {SmoothnessSpace::canonical, false},
    };
    int checked = 0;
    for (int trial = 0; trial < 12; ++trial) {
        const int T = 2 + static_cast<int>(rng.index(4));
        const Eigen::VectorXd beta = test_util::random_beta(model(), rng);
        const auto frames = random_sequence(rng, T, beta);
        const SequenceLayout layout{T, model().joint_count, model().shape_dim};
        std::vector<FrameParams> params;
        for (int t = 0; t < T; ++t)
            params.push_back(test_util::random_frame_params(model(), rng, 0.4));
        const Eigen::VectorXd x = pack_sequence(layout, beta, params);
        Weights w;
        w.w_sm_joint = 2.0;
        for (const auto& rule : rules) {
            Eigen::VectorXd grad;
            total_energy(model(), frames, layout, x, w, rule, &grad);
            const Eigen::VectorXd fd = test_util::fd_gradient(
                [&](const Eigen::VectorXd& v) {
                    return total_energy(model(), frames, layout, v, w, rule).total;
                },
                x, 1e-5);
            REQUIRE(test_util::rel_error(grad, fd) < 1e-4);
            ++checked;
        }
    }
    REQUIRE(checked == 36);
}
