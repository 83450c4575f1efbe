#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>

namespace multishot {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return m;
}

namespace detail {

// Coefficients of the exponential map written as functions of t2 = theta^2:
//   R = I + s(t2) * K + c(t2) * K^2,   K = skew(a)
// with s = sin(theta)/theta and c = (1 - cos(theta))/theta^2, plus their
// derivatives with respect to t2. Series branches keep all four smooth
// through theta = 0.
struct ExpCoeffs {
    double s, c, ds, dc;
};

inline ExpCoeffs exp_coeffs(double t2) {
    ExpCoeffs e;
    if (t2 < 1e-8) {
        e.s = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        e.c = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        e.ds = -1.0 / 6.0 + t2 / 60.0 - t2 * t2 / 1680.0;
        e.dc = -1.0 / 24.0 + t2 / 360.0 - t2 * t2 / 13440.0;
    } else {
        const double t = std::sqrt(t2);
        const double st = std::sin(t);
        const double ct = std::cos(t);
        e.s = st / t;
        e.c = (1.0 - ct) / t2;
        e.ds = (t * ct - st) / (2.0 * t2 * t);
        e.dc = (t * st - 2.0 * (1.0 - ct)) / (2.0 * t2 * t2);
    }
    return e;
}

}  // namespace detail

// Axis-angle exponential map. Total on finite input; orthonormal, det +1.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle) {
    const auto e = detail::exp_coeffs(axis_angle.squaredNorm());
    const Eigen::Matrix3d k = skew(axis_angle);
    return Eigen::Matrix3d::Identity() + e.s * k + e.c * (k * k);
}

// dR/da_i for i = 0,1,2. Chain rule on the coefficient form above:
//   dR/da_i = 2 a_i s' K + s E_i + 2 a_i c' K^2 + c (E_i K + K E_i)
// where E_i = skew(e_i). Exact limit s E_i at a = 0.
inline std::array<Eigen::Matrix3d, 3> rodrigues_jacobian(const Eigen::Vector3d& axis_angle) {
    const auto e = detail::exp_coeffs(axis_angle.squaredNorm());
    const Eigen::Matrix3d k = skew(axis_angle);
    const Eigen::Matrix3d k2 = k * k;
    std::array<Eigen::Matrix3d, 3> out;
    for (int i = 0; i < 3; ++i) {
        const Eigen::Matrix3d ei = skew(Eigen::Vector3d::Unit(i));
        const double ai = axis_angle[i];
        out[i] = 2.0 * ai * e.ds * k + e.s * ei + 2.0 * ai * e.dc * k2 +
                 e.c * (ei * k + k * ei);
    }
    return out;
}

// Principal log of a rotation matrix, as an axis-angle vector with
// magnitude in [0, pi].
inline Eigen::Vector3d log_rotation(const Eigen::Matrix3d& r) {
    const double cos_t = std::min(1.0, std::max(-1.0, (r.trace() - 1.0) * 0.5));
    const double t = std::acos(cos_t);
    Eigen::Vector3d w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    if (t < 1e-7) {
        // sin t ~ t: w = 2 sin(t) * axis ~ 2 t * axis
        return 0.5 * w;
    }
    if (t > M_PI - 1e-5) {
        // Near pi the skew part degenerates; recover the axis from the
        // symmetric part R + I = 2 (cos t I + (1 - cos t) n n^T) - ish.
        Eigen::Matrix3d b = 0.5 * (r + Eigen::Matrix3d::Identity());
        Eigen::Vector3d n;
        int k = 0;
        b.diagonal().maxCoeff(&k);
        n[k] = std::sqrt(std::max(0.0, b(k, k)));
        for (int i = 0; i < 3; ++i)
            if (i != k) n[i] = b(k, i) / n[k];
        n.normalize();
        // Fix the sign using the skew part (vanishes exactly at pi).
        if (n.dot(w) < 0.0) n = -n;
        return t * n;
    }
    return (t / (2.0 * std::sin(t))) * w;
}

// Geodesic distance between two axis-angle rotations, in radians.
inline double geodesic_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return log_rotation(rodrigues(a).transpose() * rodrigues(b)).norm();
}

// Spherical interpolation R(s) = Ra * exp(s * log(Ra^T Rb)), returned as
// axis-angle.
inline Eigen::Vector3d slerp_axis_angle(const Eigen::Vector3d& a,
                                        const Eigen::Vector3d& b, double s) {
    const Eigen::Matrix3d ra = rodrigues(a);
    const Eigen::Vector3d rel = log_rotation(ra.transpose() * rodrigues(b));
    return log_rotation(ra * rodrigues(s * rel));
}

}  // namespace multishot
