#pragma once

#include <Eigen/Core>

#include <vector>

namespace multishot {

// Minimum depth in front of the camera for a point to count as visible.
inline constexpr double kMinDepth = 0.1;

// Pinhole with fixed square-pixel intrinsics. Extrinsics are not modeled
// here; the per-frame (r_gl, t_gl) parameters carry them.
struct Camera {
    double focal = 500.0;
    Eigen::Vector2d principal = {256.0, 256.0};
    int width = 512;
    int height = 512;
    int shot_id = 0;
};

struct ProjectedJoint {
    Eigen::Vector2d uv;
    bool visible = false;
};

inline Eigen::Vector2d project_point(const Eigen::Vector3d& x, const Camera& cam) {
    return {cam.focal * x.x() / x.z() + cam.principal.x(),
            cam.focal * x.y() / x.z() + cam.principal.y()};
}

inline bool in_bounds(const Eigen::Vector2d& uv, const Camera& cam) {
    return uv.x() >= 0.0 && uv.x() < cam.width && uv.y() >= 0.0 && uv.y() < cam.height;
}

// Invisible (never an error) for points at or behind kMinDepth.
inline std::vector<ProjectedJoint> project(const Eigen::Matrix3Xd& joints,
                                           const Camera& cam) {
    std::vector<ProjectedJoint> out(static_cast<size_t>(joints.cols()));
    for (Eigen::Index j = 0; j < joints.cols(); ++j) {
        const Eigen::Vector3d x = joints.col(j);
        if (x.z() <= kMinDepth) {
            out[j] = {Eigen::Vector2d::Zero(), false};
            continue;
        }
        const Eigen::Vector2d uv = project_point(x, cam);
        out[j] = {uv, in_bounds(uv, cam)};
    }
    return out;
}

// d(u,v)/d(x,y,z) at a camera-frame point.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& x,
                                                       const Camera& cam) {
    const double iz = 1.0 / x.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.focal * iz, 0.0, -cam.focal * x.x() * iz * iz,
         0.0, cam.focal * iz, -cam.focal * x.y() * iz * iz;
    return j;
}

}  // namespace multishot
