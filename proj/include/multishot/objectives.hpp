#pragma once

#include <cmath>
#include <vector>

#include "multishot/body_model.hpp"
#include "multishot/camera.hpp"
#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"

namespace multishot {

// Term weights for the sequence energy. The priors are applied per frame,
// so their effective strength grows with sequence length; the defaults are
// tuned so that on noiseless data the energy minimum stays within a few
// millimeters of the true pose.
struct Weights {
    double w_proj = 1.0;
    double w_prior_pose = 0.01;
    double w_prior_shape = 0.1;
    double w_sm_joint = 5.0;
    double w_sm_param = 1.0;
    double gm_sigma = 50.0;  // Geman-McClure scale, pixels
};

struct EnergyBreakdown {
    double e_proj = 0.0;      // raw sums; total applies the weights
    double e_prior = 0.0;     // already carries w_prior_pose / w_prior_shape
    double e_sm_joint = 0.0;
    double e_sm_param = 0.0;
    double total = 0.0;
    std::vector<double> per_frame_proj;
    std::vector<double> per_frame_prior;
    std::vector<double> per_frame_sm_joint;  // stored at the pair's first frame
    std::vector<double> per_frame_sm_param;
};

// Parameter vector layout for a whole sequence: [beta | per-frame blocks],
// each frame block being [r_gl(3) | t_gl(3) | theta_b(3(J-1))].
struct SequenceLayout {
    int frame_count = 0;
    int joint_count = 0;
    int shape_dim = 0;

    int frame_dim() const { return 6 + 3 * (joint_count - 1); }
    int total_dim() const { return shape_dim + frame_count * frame_dim(); }
    int beta_offset() const { return 0; }
    int frame_offset(int t) const { return shape_dim + t * frame_dim(); }
};

inline Eigen::VectorXd pack_sequence(const SequenceLayout& layout,
                                     const ShapeParams& beta,
                                     const std::vector<FrameParams>& frames) {
    if (static_cast<int>(frames.size()) != layout.frame_count ||
        beta.size() != layout.shape_dim)
        throw DataError("pack_sequence: layout mismatch");
    Eigen::VectorXd x(layout.total_dim());
    x.head(layout.shape_dim) = beta;
    for (int t = 0; t < layout.frame_count; ++t) {
        const int off = layout.frame_offset(t);
        x.segment<3>(off) = frames[t].r_gl;
        x.segment<3>(off + 3) = frames[t].t_gl;
        for (int j = 0; j + 1 < layout.joint_count; ++j)
            x.segment<3>(off + 6 + 3 * j) = frames[t].theta_b[j];
    }
    return x;
}

inline FrameParams unpack_frame(const SequenceLayout& layout, const Eigen::VectorXd& x,
                                int t) {
    FrameParams p;
    const int off = layout.frame_offset(t);
    p.r_gl = x.segment<3>(off);
    p.t_gl = x.segment<3>(off + 3);
    p.theta_b.resize(static_cast<size_t>(layout.joint_count - 1));
    for (int j = 0; j + 1 < layout.joint_count; ++j)
        p.theta_b[j] = x.segment<3>(off + 6 + 3 * j);
    return p;
}

inline ShapeParams unpack_beta(const SequenceLayout& layout, const Eigen::VectorXd& x) {
    return x.head(layout.shape_dim);
}

// Geman-McClure rho(r) = sigma^2 r^2 / (sigma^2 + r^2); bounded by sigma^2.
inline double geman_mcclure(double r, double sigma) {
    const double s2 = sigma * sigma;
    const double r2 = r * r;
    return s2 * r2 / (s2 + r2);
}

// Confidence-weighted robust reprojection term for one frame. The optional
// gradient has the fk_jacobian column layout [r_gl t_gl theta_b beta]; the
// optional curvature output accumulates the Gauss-Newton diagonal in the
// same layout (used by the solver as a preconditioner).
inline double e_proj(const BodyModel& model, const FrameParams& params,
                     const ShapeParams& beta, const FrameObservation& obs,
                     double gm_sigma, Eigen::VectorXd* grad = nullptr,
                     Eigen::VectorXd* curvature = nullptr) {
    if (obs.joint_count() != model.joint_count)
        throw DataError("e_proj: observation joint count does not match model");
    const double s2 = gm_sigma * gm_sigma;

    FkJacobian fk;
    Eigen::Matrix3Xd joints;
    if (grad) {
        fk = fk_jacobian(model, params, beta);
        joints = fk.joints;
        grad->setZero(model.param_dim());
    } else {
        joints = pose_joints(forward_kinematics(model, params.theta_b, beta),
                             params.r_gl, params.t_gl);
    }

    double energy = 0.0;
    for (int j = 0; j < model.joint_count; ++j) {
        const double conf = obs.keypoints(2, j);
        if (conf <= 0.0) continue;
        const Eigen::Vector3d x = joints.col(j);
        if (std::abs(x.z()) < 1e-9) {
            // Saturated limit of the robustifier as the projection blows up.
            energy += conf * s2;
            continue;
        }
        const Eigen::Vector2d uv = project_point(x, obs.camera);
        const Eigen::Vector2d d = uv - obs.keypoints.block<2, 1>(0, j);
        const double r2 = d.squaredNorm();
        energy += conf * s2 * r2 / (s2 + r2);
        if (grad) {
            const double denom = s2 + r2;
            const double scale = conf * 2.0 * s2 * s2 / (denom * denom);
            const Eigen::Matrix<double, 2, 3> pj = projection_jacobian(x, obs.camera);
            grad->noalias() +=
                scale * (fk.d_all.middleRows(3 * j, 3).transpose() * (pj.transpose() * d));
            if (curvature) {
                const Eigen::Matrix<double, 2, Eigen::Dynamic> rows =
                    pj * fk.d_all.middleRows(3 * j, 3);
                curvature->noalias() += scale * rows.colwise().squaredNorm().transpose();
            }
        }
    }
    return energy;
}

// Quadratic priors about the rest pose and zero shape; the two prior
// weights are part of the term itself.
inline double e_prior(const FrameParams& params, const ShapeParams& beta,
                      double w_prior_pose, double w_prior_shape,
                      Eigen::VectorXd* grad_theta = nullptr,
                      Eigen::VectorXd* grad_beta = nullptr) {
    double energy = w_prior_shape * beta.squaredNorm();
    for (const auto& a : params.theta_b) energy += w_prior_pose * a.squaredNorm();
    if (grad_theta) {
        grad_theta->setZero(3 * static_cast<int>(params.theta_b.size()));
        for (size_t j = 0; j < params.theta_b.size(); ++j)
            grad_theta->segment<3>(3 * static_cast<int>(j)) =
                2.0 * w_prior_pose * params.theta_b[j];
    }
    if (grad_beta) *grad_beta = 2.0 * w_prior_shape * beta;
    return energy;
}

// Canonical-frame joint smoothness between two frames sharing beta:
// || X_can^t - X_can^{t+1} ||^2. Since canonicalization undoes the global
// rigid transform exactly, this is evaluated on body-frame joints and is
// independent of either frame's r_gl and t_gl by construction (their
// gradients are exactly zero and are not touched here).
inline double e_sm_joint(const BodyModel& model,
                         const std::vector<Eigen::Vector3d>& theta_t,
                         const std::vector<Eigen::Vector3d>& theta_t1,
                         const ShapeParams& beta,
                         Eigen::VectorXd* grad_theta_t = nullptr,
                         Eigen::VectorXd* grad_theta_t1 = nullptr,
                         Eigen::VectorXd* grad_beta = nullptr,
                         Eigen::VectorXd* curv_theta_t = nullptr,
                         Eigen::VectorXd* curv_theta_t1 = nullptr,
                         Eigen::VectorXd* curv_beta = nullptr) {
    if (!grad_theta_t) {
        const Eigen::Matrix3Xd a = forward_kinematics(model, theta_t, beta);
        const Eigen::Matrix3Xd b = forward_kinematics(model, theta_t1, beta);
        return (a - b).squaredNorm();
    }
    const BodyJacobian ja = body_jacobian(model, theta_t, beta);
    const BodyJacobian jb = body_jacobian(model, theta_t1, beta);
    const Eigen::VectorXd diff = (ja.joints - jb.joints).reshaped();
    *grad_theta_t = 2.0 * (ja.d_theta.transpose() * diff);
    if (grad_theta_t1) *grad_theta_t1 = -2.0 * (jb.d_theta.transpose() * diff);
    if (grad_beta) *grad_beta = 2.0 * ((ja.d_beta - jb.d_beta).transpose() * diff);
    if (curv_theta_t)
        *curv_theta_t = 2.0 * ja.d_theta.colwise().squaredNorm().transpose();
    if (curv_theta_t1)
        *curv_theta_t1 = 2.0 * jb.d_theta.colwise().squaredNorm().transpose();
    if (curv_beta)
        *curv_beta = 2.0 * (ja.d_beta - jb.d_beta).colwise().squaredNorm().transpose();
    return diff.squaredNorm();
}

// Camera-frame variant used by the single-shot baseline; depends on the
// rigid parameters of both frames. Gradients use the full frame layout.
inline double e_sm_joint_camera(const BodyModel& model, const FrameParams& params_t,
                                const FrameParams& params_t1, const ShapeParams& beta,
                                Eigen::VectorXd* grad_frame_t = nullptr,
                                Eigen::VectorXd* grad_frame_t1 = nullptr,
                                Eigen::VectorXd* grad_beta = nullptr,
                                Eigen::VectorXd* curv_frame_t = nullptr,
                                Eigen::VectorXd* curv_frame_t1 = nullptr,
                                Eigen::VectorXd* curv_beta = nullptr) {
    if (!grad_frame_t) {
        const Eigen::Matrix3Xd a = pose_joints(
            forward_kinematics(model, params_t.theta_b, beta), params_t.r_gl, params_t.t_gl);
        const Eigen::Matrix3Xd b = pose_joints(
            forward_kinematics(model, params_t1.theta_b, beta), params_t1.r_gl,
            params_t1.t_gl);
        return (a - b).squaredNorm();
    }
    const FkJacobian ja = fk_jacobian(model, params_t, beta);
    const FkJacobian jb = fk_jacobian(model, params_t1, beta);
    const Eigen::VectorXd diff = (ja.joints - jb.joints).reshaped();
    const int rigid_pose = 6 + 3 * (model.joint_count - 1);
    Eigen::VectorXd ga = 2.0 * (ja.d_all.transpose() * diff);
    Eigen::VectorXd gb = -2.0 * (jb.d_all.transpose() * diff);
    *grad_frame_t = ga.head(rigid_pose);
    if (grad_frame_t1) *grad_frame_t1 = gb.head(rigid_pose);
    if (grad_beta) *grad_beta = ga.tail(model.shape_dim) + gb.tail(model.shape_dim);
    if (curv_frame_t || curv_frame_t1 || curv_beta) {
        const Eigen::VectorXd ca = 2.0 * ja.d_all.colwise().squaredNorm().transpose();
        const Eigen::VectorXd cb = 2.0 * jb.d_all.colwise().squaredNorm().transpose();
        if (curv_frame_t) *curv_frame_t = ca.head(rigid_pose);
        if (curv_frame_t1) *curv_frame_t1 = cb.head(rigid_pose);
        if (curv_beta) *curv_beta = ca.tail(model.shape_dim) + cb.tail(model.shape_dim);
    }
    return diff.squaredNorm();
}

// || theta_b^t - theta_b^{t+1} ||^2; global orientation excluded.
inline double e_sm_param(const std::vector<Eigen::Vector3d>& theta_t,
                         const std::vector<Eigen::Vector3d>& theta_t1,
                         Eigen::VectorXd* grad_theta_t = nullptr,
                         Eigen::VectorXd* grad_theta_t1 = nullptr) {
    double energy = 0.0;
    if (grad_theta_t) grad_theta_t->setZero(3 * static_cast<int>(theta_t.size()));
    if (grad_theta_t1) grad_theta_t1->setZero(3 * static_cast<int>(theta_t.size()));
    for (size_t j = 0; j < theta_t.size(); ++j) {
        const Eigen::Vector3d d = theta_t[j] - theta_t1[j];
        energy += d.squaredNorm();
        if (grad_theta_t) grad_theta_t->segment<3>(3 * static_cast<int>(j)) = 2.0 * d;
        if (grad_theta_t1) grad_theta_t1->segment<3>(3 * static_cast<int>(j)) = -2.0 * d;
    }
    return energy;
}

// How smoothness terms pair frames up across the sequence.
enum class SmoothnessSpace { none, camera_frame, canonical };

struct SmoothnessRule {
    SmoothnessSpace space = SmoothnessSpace::canonical;
    bool within_shot_only = false;
};

// Eq-style total over a sequence: data + prior per frame, smoothness
// between consecutive valid frames (weight scaled by 1/gap across absent
// frames). Priors apply to every frame so absent frames stay anchored.
inline EnergyBreakdown total_energy(const BodyModel& model,
                                    const std::vector<FrameObservation>& frames,
                                    const SequenceLayout& layout,
                                    const Eigen::VectorXd& x, const Weights& weights,
                                    const SmoothnessRule& rule,
                                    Eigen::VectorXd* grad = nullptr,
                                    Eigen::VectorXd* curvature = nullptr) {
    if (static_cast<int>(frames.size()) != layout.frame_count ||
        x.size() != layout.total_dim())
        throw DataError("total_energy: layout mismatch");
    const int T = layout.frame_count;
    const int n_theta = 3 * (layout.joint_count - 1);
    if (curvature && !grad)
        throw DataError("total_energy: curvature requires the gradient");

    EnergyBreakdown br;
    br.per_frame_proj.assign(T, 0.0);
    br.per_frame_prior.assign(T, 0.0);
    br.per_frame_sm_joint.assign(T, 0.0);
    br.per_frame_sm_param.assign(T, 0.0);
    if (grad) grad->setZero(layout.total_dim());
    if (curvature) curvature->setZero(layout.total_dim());

    const ShapeParams beta = unpack_beta(layout, x);
    std::vector<FrameParams> params(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) params[t] = unpack_frame(layout, x, t);

    Eigen::VectorXd g_local, g_theta, g_theta1, g_beta;
    Eigen::VectorXd c_local, c_theta, c_theta1, c_beta;
    for (int t = 0; t < T; ++t) {
        if (frames[t].valid) {
            if (curvature) c_local.setZero(model.param_dim());
            const double e =
                e_proj(model, params[t], beta, frames[t], weights.gm_sigma,
                       grad ? &g_local : nullptr, curvature ? &c_local : nullptr);
            br.per_frame_proj[t] = e;
            br.e_proj += e;
            if (grad) {
                grad->segment(layout.frame_offset(t), layout.frame_dim()) +=
                    weights.w_proj * g_local.head(layout.frame_dim());
                grad->head(layout.shape_dim) +=
                    weights.w_proj * g_local.tail(layout.shape_dim);
            }
            if (curvature) {
                curvature->segment(layout.frame_offset(t), layout.frame_dim()) +=
                    weights.w_proj * c_local.head(layout.frame_dim());
                curvature->head(layout.shape_dim) +=
                    weights.w_proj * c_local.tail(layout.shape_dim);
            }
        }
        const double e = e_prior(params[t], beta, weights.w_prior_pose,
                                 weights.w_prior_shape, grad ? &g_theta : nullptr,
                                 grad ? &g_beta : nullptr);
        br.per_frame_prior[t] = e;
        br.e_prior += e;
        if (grad) {
            grad->segment(layout.frame_offset(t) + 6, n_theta) += g_theta;
            grad->head(layout.shape_dim) += g_beta;
        }
        if (curvature) {
            curvature->segment(layout.frame_offset(t) + 6, n_theta).array() +=
                2.0 * weights.w_prior_pose;
            curvature->head(layout.shape_dim).array() += 2.0 * weights.w_prior_shape;
        }
    }

    if (rule.space != SmoothnessSpace::none) {
        int prev = -1;
        for (int t = 0; t < T; ++t) {
            if (!frames[t].valid) continue;
            if (prev >= 0) {
                const bool same_shot = frames[prev].shot_id == frames[t].shot_id;
                if (!rule.within_shot_only || same_shot) {
                    const double gap = frames[t].frame_index - frames[prev].frame_index;
                    const double scale = 1.0 / gap;

                    double ej;
                    if (rule.space == SmoothnessSpace::canonical) {
                        ej = e_sm_joint(model, params[prev].theta_b, params[t].theta_b,
                                        beta, grad ? &g_theta : nullptr,
                                        grad ? &g_theta1 : nullptr,
                                        grad ? &g_beta : nullptr,
                                        curvature ? &c_theta : nullptr,
                                        curvature ? &c_theta1 : nullptr,
                                        curvature ? &c_beta : nullptr);
                        const double w = weights.w_sm_joint * scale;
                        if (grad) {
                            grad->segment(layout.frame_offset(prev) + 6, n_theta) += w * g_theta;
                            grad->segment(layout.frame_offset(t) + 6, n_theta) += w * g_theta1;
                            grad->head(layout.shape_dim) += w * g_beta;
                        }
                        if (curvature) {
                            curvature->segment(layout.frame_offset(prev) + 6, n_theta) +=
                                w * c_theta;
                            curvature->segment(layout.frame_offset(t) + 6, n_theta) +=
                                w * c_theta1;
                            curvature->head(layout.shape_dim) += w * c_beta;
                        }
                    } else {
                        Eigen::VectorXd g_frame, g_frame1, c_frame, c_frame1;
                        ej = e_sm_joint_camera(model, params[prev], params[t], beta,
                                               grad ? &g_frame : nullptr,
                                               grad ? &g_frame1 : nullptr,
                                               grad ? &g_beta : nullptr,
                                               curvature ? &c_frame : nullptr,
                                               curvature ? &c_frame1 : nullptr,
                                               curvature ? &c_beta : nullptr);
                        const double w = weights.w_sm_joint * scale;
                        if (grad) {
                            grad->segment(layout.frame_offset(prev), layout.frame_dim()) +=
                                w * g_frame;
                            grad->segment(layout.frame_offset(t), layout.frame_dim()) +=
                                w * g_frame1;
                            grad->head(layout.shape_dim) += w * g_beta;
                        }
                        if (curvature) {
                            curvature->segment(layout.frame_offset(prev), layout.frame_dim()) +=
                                w * c_frame;
                            curvature->segment(layout.frame_offset(t), layout.frame_dim()) +=
                                w * c_frame1;
                            curvature->head(layout.shape_dim) += w * c_beta;
                        }
                    }
                    br.per_frame_sm_joint[prev] = scale * ej;
                    br.e_sm_joint += scale * ej;

                    const double ep = e_sm_param(params[prev].theta_b, params[t].theta_b,
                                                 grad ? &g_theta : nullptr,
                                                 grad ? &g_theta1 : nullptr);
                    const double w = weights.w_sm_param * scale;
                    if (grad) {
                        grad->segment(layout.frame_offset(prev) + 6, n_theta) += w * g_theta;
                        grad->segment(layout.frame_offset(t) + 6, n_theta) += w * g_theta1;
                    }
                    if (curvature) {
                        curvature->segment(layout.frame_offset(prev) + 6, n_theta).array() +=
                            2.0 * w;
                        curvature->segment(layout.frame_offset(t) + 6, n_theta).array() +=
                            2.0 * w;
                    }
                    br.per_frame_sm_param[prev] = scale * ep;
                    br.e_sm_param += scale * ep;
                }
            }
            prev = t;
        }
    }

    br.total = weights.w_proj * br.e_proj + br.e_prior +
               weights.w_sm_joint * br.e_sm_joint + weights.w_sm_param * br.e_sm_param;
    return br;
}

}  // namespace multishot
