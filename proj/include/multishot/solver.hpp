#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

#include "multishot/errors.hpp"
#include "multishot/objectives.hpp"
#include "multishot/rng.hpp"

namespace multishot {

enum class FitMode { single_frame, single_shot, multi_shot };

inline FitMode fit_mode_from_string(const std::string& s) {
    if (s == "single_frame" || s == "single-frame") return FitMode::single_frame;
    if (s == "single_shot" || s == "single-shot") return FitMode::single_shot;
    if (s == "multi_shot" || s == "multi-shot") return FitMode::multi_shot;
    throw DataError("unknown fit mode: " + s);
}

inline std::string to_string(FitMode m) {
    switch (m) {
        case FitMode::single_frame: return "single_frame";
        case FitMode::single_shot: return "single_shot";
        case FitMode::multi_shot: return "multi_shot";
    }
    return "?";
}

inline SmoothnessRule smoothness_rule(FitMode mode) {
    switch (mode) {
        case FitMode::single_frame: return {SmoothnessSpace::none, false};
        case FitMode::single_shot: return {SmoothnessSpace::camera_frame, true};
        case FitMode::multi_shot: return {SmoothnessSpace::canonical, false};
    }
    return {};
}

enum class InitStrategy { perturbed_gt, coarse };

inline InitStrategy init_strategy_from_string(const std::string& s) {
    if (s == "perturbed_gt" || s == "perturbed-gt") return InitStrategy::perturbed_gt;
    if (s == "coarse") return InitStrategy::coarse;
    throw DataError("unknown init strategy: " + s);
}

struct SolverConfig {
    FitMode mode = FitMode::multi_shot;
    Weights weights;
    int max_iters = 300;
    double grad_tol = 1e-6;   // infinity norm of the gradient
    double step_tol = 1e-9;   // relative step size
    double init_noise = 0.2;  // sigma for perturbed_gt initialization
    InitStrategy init = InitStrategy::coarse;
    int history = 10;         // quasi-Newton memory
    double beta_bound = 3.0;  // beta kept in [-bound, bound] by projection

    void validate() const {
        if (max_iters < 1 || grad_tol <= 0.0 || step_tol <= 0.0 || history < 1)
            throw DataError("solver config: tolerances and budgets must be positive");
    }
};

struct SequenceEstimate {
    int identity = 0;
    ShapeParams beta;
    std::vector<FrameParams> frames;
    std::vector<bool> converged;        // per frame
    EnergyBreakdown energy;
    int iterations = 0;
    std::vector<double> energy_trace;   // accepted-step energies, non-increasing
};

// --- Initialization ---------------------------------------------------------

namespace detail {

// Upright orientation family used by the coarse yaw grid search: body-up
// mapped to image-up, free yaw.
inline Eigen::Vector3d upright_yaw(double yaw) {
    return log_rotation(rodrigues({M_PI, 0.0, 0.0}) * rodrigues({0.0, yaw, 0.0}));
}

inline double coarse_depth(const BodyModel& model, const FrameObservation& obs) {
    std::vector<double> depths;
    const ShapeParams beta0 = Eigen::VectorXd::Zero(model.shape_dim);
    for (int j = 1; j < model.joint_count; ++j) {
        const int p = model.parent[j];
        if (obs.keypoints(2, j) <= 0.0 || obs.keypoints(2, p) <= 0.0) continue;
        const double len2d = (obs.keypoints.block<2, 1>(0, j) -
                              obs.keypoints.block<2, 1>(0, p)).norm();
        if (len2d < 1e-6) continue;
        const double len3d = model.bone_offset(j, beta0).norm();
        if (len3d < 1e-9) continue;
        depths.push_back(obs.camera.focal * len3d / len2d);
    }
    if (depths.empty()) return 4.0;
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    return depths[depths.size() / 2];
}

}  // namespace detail

// Rest pose, beta = 0, orientation from a 36-point yaw grid minimizing the
// reprojection term, depth from the median bone length / pixel length ratio.
inline FrameParams coarse_init_frame(const BodyModel& model, const FrameObservation& obs,
                                     double gm_sigma) {
    FrameParams p = FrameParams::rest(model);
    const double z = detail::coarse_depth(model, obs);
    double wsum = 0.0;
    Eigen::Vector2d mean_uv = Eigen::Vector2d::Zero();
    for (int j = 0; j < model.joint_count; ++j) {
        const double c = obs.keypoints(2, j);
        if (c <= 0.0) continue;
        mean_uv += c * obs.keypoints.block<2, 1>(0, j);
        wsum += c;
    }
    if (wsum > 0.0) mean_uv /= wsum;
    else mean_uv = obs.camera.principal;
    p.t_gl = {(mean_uv.x() - obs.camera.principal.x()) * z / obs.camera.focal,
              (mean_uv.y() - obs.camera.principal.y()) * z / obs.camera.focal, z};

    const ShapeParams beta0 = Eigen::VectorXd::Zero(model.shape_dim);
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 36; ++k) {
        FrameParams cand = p;
        cand.r_gl = detail::upright_yaw(2.0 * M_PI * k / 36.0);
        const double e = e_proj(model, cand, beta0, obs, gm_sigma);
        if (e < best) {
            best = e;
            p.r_gl = cand.r_gl;
        }
    }
    return p;
}

inline SequenceEstimate initialize_sequence(const BodyModel& model,
                                            const SequenceRecord& seq,
                                            const SolverConfig& cfg,
                                            std::uint64_t seed = 0) {
    SequenceEstimate est;
    est.identity = seq.identity;
    est.beta = Eigen::VectorXd::Zero(model.shape_dim);
    est.frames.assign(seq.frames.size(), FrameParams::rest(model));
    est.converged.assign(seq.frames.size(), false);

    if (cfg.init == InitStrategy::perturbed_gt) {
        if (!seq.beta_gt)
            throw DataError("perturbed_gt initialization requires ground truth");
        Rng rng(substream(seed, 41));
        est.beta = *seq.beta_gt;
        for (int k = 0; k < est.beta.size(); ++k)
            est.beta[k] += cfg.init_noise * rng.normal();
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            if (!seq.frames[t].valid) continue;  // rest pose, flagged unconverged
            if (!seq.frames[t].gt)
                throw DataError("perturbed_gt initialization requires ground truth");
            FrameParams p = seq.frames[t].gt->params;
            for (int i = 0; i < 3; ++i) {
                p.r_gl[i] += cfg.init_noise * rng.normal();
                p.t_gl[i] += cfg.init_noise * rng.normal();
            }
            for (auto& a : p.theta_b)
                for (int i = 0; i < 3; ++i) a[i] += cfg.init_noise * rng.normal();
            est.frames[t] = p;
        }
    } else {
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            if (!seq.frames[t].valid) continue;
            est.frames[t] = coarse_init_frame(model, seq.frames[t], cfg.weights.gm_sigma);
        }
    }
    return est;
}

// --- Minimization ------------------------------------------------------------

namespace detail {

inline void clamp_beta(Eigen::VectorXd& x, const SequenceLayout& layout, double bound) {
    for (int k = 0; k < layout.shape_dim; ++k)
        x[k] = std::min(bound, std::max(-bound, x[k]));
}

inline int first_nonfinite_frame(const EnergyBreakdown& br) {
    for (size_t t = 0; t < br.per_frame_proj.size(); ++t)
        if (!std::isfinite(br.per_frame_proj[t]) || !std::isfinite(br.per_frame_prior[t]) ||
            !std::isfinite(br.per_frame_sm_joint[t]) ||
            !std::isfinite(br.per_frame_sm_param[t]))
            return static_cast<int>(t);
    return -1;
}

}  // namespace detail

// Limited-memory quasi-Newton minimization of the sequence energy with
// Armijo backtracking; accepted steps never increase the energy. Shape
// parameters are projected back into [-beta_bound, beta_bound] after every
// trial step.
inline SequenceEstimate optimize_sequence(const BodyModel& model,
                                          const SequenceRecord& seq,
                                          const SolverConfig& cfg,
                                          const SequenceEstimate& init) {
    cfg.validate();
    if (init.frames.size() != seq.frames.size())
        throw DataError("optimize_sequence: init layout does not match sequence");
    const SequenceLayout layout{static_cast<int>(seq.frames.size()), model.joint_count,
                                model.shape_dim};
    const SmoothnessRule rule = smoothness_rule(cfg.mode);

    Eigen::VectorXd x = pack_sequence(layout, init.beta, init.frames);
    detail::clamp_beta(x, layout, cfg.beta_bound);

    Eigen::VectorXd g(layout.total_dim()), curv(layout.total_dim());
    EnergyBreakdown br =
        total_energy(model, seq.frames, layout, x, cfg.weights, rule, &g, &curv);
    if (!std::isfinite(br.total)) {
        const int t = detail::first_nonfinite_frame(br);
        throw NumericalError("non-finite energy at initialization (frame " +
                             std::to_string(t) + ")");
    }

    std::deque<Eigen::VectorXd> mem_s, mem_y;
    std::deque<double> mem_rho;
    std::vector<double> trace{br.total};
    bool converged = false;
    int iter = 0;
    constexpr double kArmijoC = 1e-4;

    // The pixel-scale data term and the metric/radian parameters give the
    // energy a badly mixed diagonal; seed the quasi-Newton inverse with the
    // Gauss-Newton diagonal instead of a scalar. The floor caps the
    // preconditioner's dynamic range: the body-scale/depth direction is an
    // exact null family of the data term, and letting it move at full speed
    // early drags the pose parameters through a badly warped valley.
    Eigen::VectorXd h0_inv(layout.total_dim());
    auto refresh_h0 = [&]() {
        const double floor = 1e-3 * curv.maxCoeff() + 1e-12;
        h0_inv = (curv.array() + floor).inverse();
    };
    refresh_h0();

    for (; iter < cfg.max_iters; ++iter) {
        if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) {
            converged = true;
            break;
        }
        // Two-loop recursion with the diagonal H0.
        Eigen::VectorXd d = -g;
        std::vector<double> alpha(mem_s.size());
        for (int i = static_cast<int>(mem_s.size()) - 1; i >= 0; --i) {
            alpha[i] = mem_rho[i] * mem_s[i].dot(d);
            d -= alpha[i] * mem_y[i];
        }
        if (!mem_s.empty()) {
            const Eigen::VectorXd hy = h0_inv.cwiseProduct(mem_y.back());
            const double gamma =
                mem_s.back().dot(mem_y.back()) / mem_y.back().dot(hy);
            d = gamma * h0_inv.cwiseProduct(d);
        } else {
            d = h0_inv.cwiseProduct(d);
        }
        for (size_t i = 0; i < mem_s.size(); ++i) {
            const double beta_i = mem_rho[i] * mem_y[i].dot(d);
            d += (alpha[i] - beta_i) * mem_s[i];
        }
        if (d.dot(g) >= 0.0) {  // not a descent direction; restart
            mem_s.clear();
            mem_y.clear();
            mem_rho.clear();
            d = -h0_inv.cwiseProduct(g);
            if (d.dot(g) >= 0.0) d = -g;
        }

        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new, g_new, curv_new;
        EnergyBreakdown br_new;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * d;
            detail::clamp_beta(x_new, layout, cfg.beta_bound);
            const Eigen::VectorXd s = x_new - x;
            const double slope = g.dot(s);
            if (slope < 0.0) {
                br_new = total_energy(model, seq.frames, layout, x_new, cfg.weights,
                                      rule, &g_new, &curv_new);
                if (std::isfinite(br_new.total) &&
                    br_new.total <= br.total + kArmijoC * slope) {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) break;  // stuck; return best so far, unconverged

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            mem_rho.push_back(1.0 / sy);
            if (static_cast<int>(mem_s.size()) > cfg.history) {
                mem_s.pop_front();
                mem_y.pop_front();
                mem_rho.pop_front();
            }
        }
        x = std::move(x_new);
        g = std::move(g_new);
        curv = std::move(curv_new);
        refresh_h0();
        br = br_new;
        trace.push_back(br.total);

        if (s.cwiseAbs().maxCoeff() <=
            cfg.step_tol * (x.cwiseAbs().maxCoeff() + cfg.step_tol)) {
            ++iter;
            converged = true;
            break;
        }
    }

    SequenceEstimate out;
    out.identity = seq.identity;
    out.beta = unpack_beta(layout, x);
    out.frames.resize(seq.frames.size());
    out.converged.assign(seq.frames.size(), false);
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        out.frames[t] = unpack_frame(layout, x, static_cast<int>(t));
        out.converged[t] = seq.frames[t].valid && converged;
    }
    out.energy = br;
    out.iterations = iter;
    out.energy_trace = std::move(trace);
    return out;
}

// --- Estimates file ----------------------------------------------------------

inline constexpr const char* kEstimatesFormatVersion = "1";

inline nlohmann::json estimates_to_json(const BodyModel& model,
                                        const std::vector<SequenceEstimate>& ests) {
    nlohmann::json out;
    out["format_version"] = kEstimatesFormatVersion;
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& est : ests) {
        nlohmann::json j;
        j["identity"] = est.identity;
        nlohmann::json beta = nlohmann::json::array();
        for (Eigen::Index i = 0; i < est.beta.size(); ++i) beta.push_back(est.beta[i]);
        j["beta"] = beta;
        j["iterations"] = est.iterations;
        j["energy"] = {{"e_proj", est.energy.e_proj},
                       {"e_prior", est.energy.e_prior},
                       {"e_sm_joint", est.energy.e_sm_joint},
                       {"e_sm_param", est.energy.e_sm_param},
                       {"total", est.energy.total}};
        nlohmann::json frames = nlohmann::json::array();
        for (size_t t = 0; t < est.frames.size(); ++t) {
            const FrameParams& p = est.frames[t];
            nlohmann::json f;
            f["r_gl"] = {p.r_gl.x(), p.r_gl.y(), p.r_gl.z()};
            f["t_gl"] = {p.t_gl.x(), p.t_gl.y(), p.t_gl.z()};
            nlohmann::json theta = nlohmann::json::array();
            for (const auto& a : p.theta_b)
                for (int i = 0; i < 3; ++i) theta.push_back(a[i]);
            f["theta_b"] = theta;
            const Eigen::Matrix3Xd x3 =
                pose_joints(forward_kinematics(model, p.theta_b, est.beta), p.r_gl, p.t_gl);
            nlohmann::json x3j = nlohmann::json::array();
            for (Eigen::Index c = 0; c < x3.cols(); ++c)
                for (int i = 0; i < 3; ++i) x3j.push_back(x3(i, c));
            f["x3d"] = x3j;
            f["converged"] = static_cast<bool>(est.converged[t]);
            frames.push_back(f);
        }
        j["frames"] = frames;
        seqs.push_back(j);
    }
    out["sequences"] = seqs;
    return out;
}

inline void write_estimates(const BodyModel& model,
                            const std::vector<SequenceEstimate>& ests,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << estimates_to_json(model, ests).dump(1) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<SequenceEstimate> read_estimates(const std::string& path,
                                                    int expected_theta_joints = -1) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("estimates json: ") + e.what());
    }
    try {
        const std::string version = j.at("format_version").get<std::string>();
        if (version != kEstimatesFormatVersion)
            throw DataError("estimates format_version \"" + version +
                            "\" not supported (expected \"" + kEstimatesFormatVersion +
                            "\")");
        std::vector<SequenceEstimate> out;
        for (const auto& sj : j.at("sequences")) {
            SequenceEstimate est;
            est.identity = sj.at("identity").get<int>();
            const auto& beta = sj.at("beta");
            est.beta.resize(static_cast<Eigen::Index>(beta.size()));
            for (size_t i = 0; i < beta.size(); ++i)
                est.beta[static_cast<Eigen::Index>(i)] = beta.at(i).get<double>();
            est.iterations = sj.value("iterations", 0);
            if (sj.contains("energy")) {
                est.energy.e_proj = sj["energy"].value("e_proj", 0.0);
                est.energy.e_prior = sj["energy"].value("e_prior", 0.0);
                est.energy.e_sm_joint = sj["energy"].value("e_sm_joint", 0.0);
                est.energy.e_sm_param = sj["energy"].value("e_sm_param", 0.0);
                est.energy.total = sj["energy"].value("total", 0.0);
            }
            for (const auto& fj : sj.at("frames")) {
                FrameParams p;
                for (int i = 0; i < 3; ++i) {
                    p.r_gl[i] = fj.at("r_gl").at(i).get<double>();
                    p.t_gl[i] = fj.at("t_gl").at(i).get<double>();
                }
                const auto& theta = fj.at("theta_b");
                if (theta.size() % 3 != 0)
                    throw DataError("estimates theta_b length not a multiple of 3");
                p.theta_b.resize(theta.size() / 3);
                for (size_t k = 0; k < p.theta_b.size(); ++k)
                    for (int i = 0; i < 3; ++i)
                        p.theta_b[k][i] = theta.at(3 * k + i).get<double>();
                if (expected_theta_joints >= 0 &&
                    static_cast<int>(p.theta_b.size()) != expected_theta_joints)
                    throw DataError("estimates theta_b joint count mismatch");
                est.frames.push_back(std::move(p));
                est.converged.push_back(fj.value("converged", false));
            }
            out.push_back(std::move(est));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("estimates json: ") + e.what());
    }
}

}  // namespace multishot
