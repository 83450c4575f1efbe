#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <string>
#include <vector>

#include "multishot/errors.hpp"
#include "multishot/rotation.hpp"

namespace multishot {

using ShapeParams = Eigen::VectorXd;  // beta, dimensionless

// Articulated skeleton: topology, rest bone offsets and a linear shape
// basis that deforms the bone offsets additively per unit of beta.
struct BodyModel {
    int joint_count = 0;
    int shape_dim = 0;
    std::vector<int> parent;                                // -1 for the root
    std::vector<Eigen::Vector3d> rest_offset;               // [J]
    std::vector<std::vector<Eigen::Vector3d>> shape_basis;  // [J][B]
    std::vector<std::string> joint_names;

    int param_dim() const { return 6 + 3 * (joint_count - 1) + shape_dim; }

    // Bone offset from parent for joint j under shape beta.
    Eigen::Vector3d bone_offset(int j, const ShapeParams& beta) const {
        Eigen::Vector3d o = rest_offset[j];
        for (int k = 0; k < shape_dim; ++k) o += beta[k] * shape_basis[j][k];
        return o;
    }

    void validate() const {
        if (joint_count < 1) throw DataError("body model: joint_count must be >= 1");
        if (static_cast<int>(parent.size()) != joint_count ||
            static_cast<int>(rest_offset.size()) != joint_count ||
            static_cast<int>(shape_basis.size()) != joint_count)
            throw DataError("body model: array sizes do not match joint_count");
        if (parent[0] != -1) throw DataError("body model: joint 0 must be the root");
        if (!rest_offset[0].isZero(0.0))
            throw DataError("body model: root rest_offset must be zero");
        for (int j = 1; j < joint_count; ++j)
            if (parent[j] < 0 || parent[j] >= j)
                throw DataError("body model: parents must be topologically ordered (parent[j] < j)");
        for (int j = 0; j < joint_count; ++j)
            if (static_cast<int>(shape_basis[j].size()) != shape_dim)
                throw DataError("body model: shape_basis must have J x B entries");
    }
};

// Per-frame rigid + articulated parameters. Axis-angle magnitudes are
// stored as-is, no wrapping.
struct FrameParams {
    Eigen::Vector3d r_gl = Eigen::Vector3d::Zero();  // global orientation
    Eigen::Vector3d t_gl = Eigen::Vector3d::Zero();  // root translation, camera frame
    std::vector<Eigen::Vector3d> theta_b;            // [J-1] body pose

    static FrameParams rest(const BodyModel& model) {
        FrameParams p;
        p.theta_b.assign(static_cast<size_t>(model.joint_count - 1),
                         Eigen::Vector3d::Zero());
        return p;
    }
};

namespace detail {

inline void check_pose_dims(const BodyModel& model,
                            const std::vector<Eigen::Vector3d>& theta_b,
                            const ShapeParams& beta) {
    if (static_cast<int>(theta_b.size()) != model.joint_count - 1)
        throw DataError("forward kinematics: theta_b size does not match model");
    if (beta.size() != model.shape_dim)
        throw DataError("forward kinematics: beta size does not match model");
}

}  // namespace detail

struct FkResult {
    Eigen::Matrix3Xd joints;              // 3 x J, body frame, root at origin
    std::vector<Eigen::Matrix3d> chain;   // composed rotation up to joint j
};

// Body-frame joints. The root carries no rotation of its own; joint j's own
// rotation only moves its descendants.
inline FkResult forward_kinematics_full(const BodyModel& model,
                                        const std::vector<Eigen::Vector3d>& theta_b,
                                        const ShapeParams& beta) {
    detail::check_pose_dims(model, theta_b, beta);
    const int J = model.joint_count;
    FkResult r;
    r.joints.setZero(3, J);
    r.chain.assign(static_cast<size_t>(J), Eigen::Matrix3d::Identity());
    for (int j = 1; j < J; ++j) {
        const int p = model.parent[j];
        r.joints.col(j) = r.joints.col(p) + r.chain[p] * model.bone_offset(j, beta);
        r.chain[j] = r.chain[p] * rodrigues(theta_b[j - 1]);
    }
    return r;
}

inline Eigen::Matrix3Xd forward_kinematics(const BodyModel& model,
                                           const std::vector<Eigen::Vector3d>& theta_b,
                                           const ShapeParams& beta) {
    return forward_kinematics_full(model, theta_b, beta).joints;
}

// X = R_gl * X_b + t_gl
inline Eigen::Matrix3Xd pose_joints(const Eigen::Matrix3Xd& body_joints,
                                    const Eigen::Vector3d& r_gl,
                                    const Eigen::Vector3d& t_gl) {
    return (rodrigues(r_gl) * body_joints).colwise() + t_gl;
}

// X_can = R_gl^T (X - X[root]). Root-centering makes this the exact inverse
// of pose_joints on body-frame joints.
inline Eigen::Matrix3Xd canonicalize(const Eigen::Matrix3Xd& joints,
                                     const Eigen::Vector3d& r_gl) {
    return rodrigues(r_gl).transpose() * (joints.colwise() - joints.col(0));
}

// Jacobian of body-frame joints w.r.t. (theta_b, beta); also returns the
// joints themselves. Column layout: [3(J-1) pose | B shape], rows 3J.
struct BodyJacobian {
    Eigen::Matrix3Xd joints;
    Eigen::MatrixXd d_theta;  // 3J x 3(J-1)
    Eigen::MatrixXd d_beta;   // 3J x B
};

inline BodyJacobian body_jacobian(const BodyModel& model,
                                  const std::vector<Eigen::Vector3d>& theta_b,
                                  const ShapeParams& beta) {
    detail::check_pose_dims(model, theta_b, beta);
    const int J = model.joint_count;
    const int n_theta = 3 * (J - 1);

    BodyJacobian out;
    out.joints.setZero(3, J);
    out.d_theta.setZero(3 * J, n_theta);
    out.d_beta.setZero(3 * J, model.shape_dim);

    std::vector<Eigen::Matrix3d> chain(static_cast<size_t>(J), Eigen::Matrix3d::Identity());
    // d(chain rotation of joint j) / d(theta channel c), forward-propagated.
    std::vector<Eigen::Matrix3d> dchain(static_cast<size_t>(J) * n_theta,
                                        Eigen::Matrix3d::Zero());
    // Ancestor flags to skip channels with no influence.
    std::vector<std::vector<bool>> affects(static_cast<size_t>(J),
                                           std::vector<bool>(static_cast<size_t>(J), false));

    for (int j = 1; j < J; ++j) {
        const int p = model.parent[j];
        const Eigen::Vector3d offset = model.bone_offset(j, beta);

        // Positions and their derivatives use the parent's chain state.
        out.joints.col(j) = out.joints.col(p) + chain[p] * offset;
        for (int k = 1; k < J; ++k) {
            if (!affects[p][k]) continue;
            for (int a = 0; a < 3; ++a) {
                const int c = 3 * (k - 1) + a;
                out.d_theta.block<3, 1>(3 * j, c) =
                    out.d_theta.block<3, 1>(3 * p, c) + dchain[p * n_theta + c] * offset;
            }
        }
        for (int k = 0; k < model.shape_dim; ++k)
            out.d_beta.block<3, 1>(3 * j, k) =
                out.d_beta.block<3, 1>(3 * p, k) + chain[p] * model.shape_basis[j][k];

        // Advance the chain through joint j's own rotation.
        const Eigen::Matrix3d rj = rodrigues(theta_b[j - 1]);
        const auto drj = rodrigues_jacobian(theta_b[j - 1]);
        chain[j] = chain[p] * rj;
        affects[j] = affects[p];
        affects[j][j] = true;
        for (int k = 1; k < J; ++k) {
            if (!affects[p][k]) continue;
            for (int a = 0; a < 3; ++a) {
                const int c = 3 * (k - 1) + a;
                dchain[j * n_theta + c] = dchain[p * n_theta + c] * rj;
            }
        }
        for (int a = 0; a < 3; ++a)
            dchain[j * n_theta + 3 * (j - 1) + a] += chain[p] * drj[a];
    }
    return out;
}

// Full Jacobian of camera-frame joints X = R_gl X_b + t_gl with respect to
// [r_gl(3) | t_gl(3) | theta_b(3(J-1)) | beta(B)]; rows are stacked joints.
struct FkJacobian {
    Eigen::Matrix3Xd joints;  // camera frame
    Eigen::MatrixXd d_all;    // 3J x (6 + 3(J-1) + B)
};

inline FkJacobian fk_jacobian(const BodyModel& model, const FrameParams& params,
                              const ShapeParams& beta) {
    const int J = model.joint_count;
    BodyJacobian body = body_jacobian(model, params.theta_b, beta);
    const Eigen::Matrix3d r = rodrigues(params.r_gl);
    const auto dr = rodrigues_jacobian(params.r_gl);

    FkJacobian out;
    out.joints = (r * body.joints).colwise() + params.t_gl;
    out.d_all.setZero(3 * J, model.param_dim());
    for (int j = 0; j < J; ++j) {
        for (int a = 0; a < 3; ++a)
            out.d_all.block<3, 1>(3 * j, a) = dr[a] * body.joints.col(j);
        out.d_all.block<3, 3>(3 * j, 3).setIdentity();
    }
    for (int j = 0; j < J; ++j) {
        out.d_all.block(3 * j, 6, 3, 3 * (J - 1)) =
            r * body.d_theta.middleRows(3 * j, 3);
        out.d_all.block(3 * j, 6 + 3 * (J - 1), 3, model.shape_dim) =
            r * body.d_beta.middleRows(3 * j, 3);
    }
    return out;
}

// The default 17-joint skeleton: pelvis root, spine/chest/neck/head chain,
// T-pose arms, hanging legs. Units are meters, body frame is y-up.
inline BodyModel default_body_model() {
    BodyModel m;
    m.joint_count = 17;
    m.shape_dim = 2;
    m.joint_names = {"pelvis",     "spine",   "chest",   "neck",    "head",
                     "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
                     "l_wrist",    "r_wrist", "l_hip",   "r_hip",   "l_knee",
                     "r_knee",     "l_ankle", "r_ankle"};
    m.parent = {-1, 0, 1, 2, 3, 2, 2, 5, 6, 7, 8, 0, 0, 11, 12, 13, 14};
    m.rest_offset = {
        {0.0, 0.0, 0.0},       // pelvis
        {0.0, 0.13, 0.0},      // spine
        {0.0, 0.16, 0.0},      // chest
        {0.0, 0.17, 0.0},      // neck
        {0.0, 0.14, 0.0},      // head
        {0.19, 0.14, 0.0},     // l_shoulder
        {-0.19, 0.14, 0.0},    // r_shoulder
        {0.27, 0.0, 0.0},      // l_elbow
        {-0.27, 0.0, 0.0},     // r_elbow
        {0.26, 0.0, 0.0},      // l_wrist
        {-0.26, 0.0, 0.0},     // r_wrist
        {0.09, -0.07, 0.0},    // l_hip
        {-0.09, -0.07, 0.0},   // r_hip
        {0.0, -0.43, 0.0},     // l_knee
        {0.0, -0.43, 0.0},     // r_knee
        {0.0, -0.42, 0.0},     // l_ankle
        {-0.0, -0.42, 0.0},    // r_ankle
    };
    // Shape dim 0: overall scale (+12% bone length per unit beta).
    // Shape dim 1: limb-vs-torso ratio (longer limbs, shorter torso).
    m.shape_basis.assign(17, std::vector<Eigen::Vector3d>(2, Eigen::Vector3d::Zero()));
    const std::vector<int> torso = {1, 2, 3, 4};
    const std::vector<int> limbs = {7, 8, 9, 10, 13, 14, 15, 16};
    for (int j = 0; j < 17; ++j) m.shape_basis[j][0] = 0.12 * m.rest_offset[j];
    for (int j : torso) m.shape_basis[j][1] = -0.06 * m.rest_offset[j];
    for (int j : limbs) m.shape_basis[j][1] = 0.10 * m.rest_offset[j];
    m.validate();
    return m;
}

// Named leg joints of the default skeleton, used by truncation logic and
// the controlled experiments.
inline const std::vector<int>& default_lower_body_joints() {
    static const std::vector<int> joints = {11, 12, 13, 14, 15, 16};
    return joints;
}
inline const std::vector<int>& default_knee_ankle_joints() {
    static const std::vector<int> joints = {13, 14, 15, 16};
    return joints;
}

inline nlohmann::json body_model_to_json(const BodyModel& m) {
    nlohmann::json j;
    j["joint_count"] = m.joint_count;
    j["parents"] = m.parent;
    auto vec3 = [](const Eigen::Vector3d& v) {
        return nlohmann::json::array({v.x(), v.y(), v.z()});
    };
    nlohmann::json offsets = nlohmann::json::array();
    for (const auto& o : m.rest_offset) offsets.push_back(vec3(o));
    j["rest_offsets"] = offsets;
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& per_joint : m.shape_basis) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& b : per_joint) row.push_back(vec3(b));
        basis.push_back(row);
    }
    j["shape_basis"] = basis;
    j["joint_names"] = m.joint_names;
    return j;
}

inline BodyModel body_model_from_json(const nlohmann::json& j) {
    BodyModel m;
    try {
        m.joint_count = j.at("joint_count").get<int>();
        m.parent = j.at("parents").get<std::vector<int>>();
        for (const auto& o : j.at("rest_offsets"))
            m.rest_offset.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(),
                                       o.at(2).get<double>());
        for (const auto& per_joint : j.at("shape_basis")) {
            std::vector<Eigen::Vector3d> row;
            for (const auto& b : per_joint)
                row.emplace_back(b.at(0).get<double>(), b.at(1).get<double>(),
                                 b.at(2).get<double>());
            m.shape_basis.push_back(std::move(row));
        }
        m.shape_dim = m.shape_basis.empty() ? 0 : static_cast<int>(m.shape_basis[0].size());
        if (j.contains("joint_names"))
            m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("body model json: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace multishot
