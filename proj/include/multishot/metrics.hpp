#pragma once

#include <Eigen/Dense>

#include <vector>

#include "multishot/body_model.hpp"
#include "multishot/camera.hpp"
#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"
#include "multishot/solver.hpp"

namespace multishot {

struct PckReport {
    std::vector<double> alphas;
    std::vector<double> pck;            // percent, per alpha
    Eigen::MatrixXd per_joint;          // percent, n_alphas x J
    long pairs = 0;                     // directed transfers evaluated
    long joints_evaluated = 0;
};

// Fraction of evaluated joints within alpha * max(bbox_w, bbox_h) of the
// ground-truth 2D bounding box (taken over all GT joints), in percent.
inline double pck(const Eigen::Matrix2Xd& pred_2d, const Eigen::Matrix2Xd& gt_2d,
                  const std::vector<bool>& evaluate, double alpha) {
    if (pred_2d.cols() != gt_2d.cols() ||
        static_cast<Eigen::Index>(evaluate.size()) != gt_2d.cols())
        throw DataError("pck: joint counts do not match");
    const Eigen::Vector2d lo = gt_2d.rowwise().minCoeff();
    const Eigen::Vector2d hi = gt_2d.rowwise().maxCoeff();
    const double norm = std::max(hi.x() - lo.x(), hi.y() - lo.y());
    long total = 0, hit = 0;
    for (Eigen::Index j = 0; j < gt_2d.cols(); ++j) {
        if (!evaluate[static_cast<size_t>(j)]) continue;
        ++total;
        if ((pred_2d.col(j) - gt_2d.col(j)).norm() <= alpha * norm) ++hit;
    }
    if (total == 0) throw DataError("pck: empty evaluation set");
    return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

inline double pck(const Eigen::Matrix2Xd& pred_2d, const Eigen::Matrix2Xd& gt_2d,
                  double alpha) {
    return pck(pred_2d, gt_2d,
               std::vector<bool>(static_cast<size_t>(gt_2d.cols()), true), alpha);
}

namespace detail {

// Ground-truth 2D joints of a frame (exact projections, no bounds test:
// the novel view scores joints that were truncated in the source frame).
inline Eigen::Matrix2Xd gt_projections(const FrameObservation& f) {
    if (!f.gt) throw DataError("frame has no ground truth");
    Eigen::Matrix2Xd out(2, f.gt->joints_3d.cols());
    for (Eigen::Index j = 0; j < f.gt->joints_3d.cols(); ++j)
        out.col(j) = project_point(f.gt->joints_3d.col(j), f.camera);
    return out;
}

}  // namespace detail

// Novel-view evaluation across shot boundaries: the estimated body pose of
// one side of the cut is posed with the other side's estimated global
// alignment, projected into that frame's camera and scored against that
// frame's ground-truth 2D joints; both directions, all boundaries.
inline PckReport cross_shot_pck(const BodyModel& model, const SequenceEstimate& est,
                                const SequenceRecord& seq,
                                const std::vector<double>& alphas) {
    if (est.frames.size() != seq.frames.size())
        throw DataError("cross_shot_pck: estimate does not cover the sequence");
    const int J = model.joint_count;
    PckReport report;
    report.alphas = alphas;
    Eigen::MatrixXd hits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(alphas.size()), J);
    long transfers = 0;

    auto score_direction = [&](size_t source, size_t target) {
        const Eigen::Matrix3Xd body =
            forward_kinematics(model, est.frames[source].theta_b, est.beta);
        const Eigen::Matrix3Xd joints =
            pose_joints(body, est.frames[target].r_gl, est.frames[target].t_gl);
        Eigen::Matrix2Xd pred(2, J);
        for (int j = 0; j < J; ++j)
            pred.col(j) = joints(2, j) > 1e-9
                              ? project_point(joints.col(j), seq.frames[target].camera)
                              : Eigen::Vector2d(1e9, 1e9);
        const Eigen::Matrix2Xd gt = detail::gt_projections(seq.frames[target]);
        const Eigen::Vector2d lo = gt.rowwise().minCoeff();
        const Eigen::Vector2d hi = gt.rowwise().maxCoeff();
        const double norm = std::max(hi.x() - lo.x(), hi.y() - lo.y());
        for (int j = 0; j < J; ++j) {
            const double err = (pred.col(j) - gt.col(j)).norm();
            for (size_t a = 0; a < alphas.size(); ++a)
                if (err <= alphas[a] * norm) hits(static_cast<Eigen::Index>(a), j) += 1.0;
        }
        ++transfers;
    };

    for (size_t i = 0; i + 1 < seq.frames.size(); ++i) {
        const auto& fa = seq.frames[i];
        const auto& fb = seq.frames[i + 1];
        if (fa.shot_id == fb.shot_id || !fa.valid || !fb.valid) continue;
        if (!fa.gt || !fb.gt) continue;
        score_direction(i, i + 1);
        score_direction(i + 1, i);
    }
    if (transfers == 0) throw DataError("no shot boundaries with valid frames on both sides");

    report.pairs = transfers;
    report.joints_evaluated = transfers * J;
    report.per_joint = 100.0 * hits / static_cast<double>(transfers);
    report.pck.resize(alphas.size());
    for (size_t a = 0; a < alphas.size(); ++a)
        report.pck[a] = hits.row(static_cast<Eigen::Index>(a)).sum() /
                        static_cast<double>(transfers * J) * 100.0;
    return report;
}

// Mean per-joint position error after root alignment, in millimeters.
inline double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
    if (pred.cols() != gt.cols() || pred.cols() < 1)
        throw DataError("mpjpe: joint counts do not match");
    const Eigen::Matrix3Xd p = pred.colwise() - Eigen::Vector3d(pred.col(0));
    const Eigen::Matrix3Xd g = gt.colwise() - Eigen::Vector3d(gt.col(0));
    return 1000.0 * (p - g).colwise().norm().mean();
}

// Mean error after the optimal similarity alignment (rotation, translation,
// scale; reflections excluded), in millimeters.
inline double pa_mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
    if (pred.cols() != gt.cols() || pred.cols() < 3)
        throw DataError("pa_mpjpe: need matching sets of >= 3 joints");
    const Eigen::Vector3d pc = pred.rowwise().mean();
    const Eigen::Vector3d gc = gt.rowwise().mean();
    const Eigen::Matrix3Xd p = pred.colwise() - pc;
    const Eigen::Matrix3Xd g = gt.colwise() - gc;

    const Eigen::Matrix3d h = g * p.transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(1) < 1e-12 * std::max(1.0, svd.singularValues()(0)))
        throw NumericalError("pa_mpjpe: degenerate (collinear) point set");
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    d(2) = ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) ? -1.0 : 1.0;
    const Eigen::Matrix3d r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();

    const double denom = p.squaredNorm();
    if (denom < 1e-18) throw NumericalError("pa_mpjpe: degenerate prediction");
    const double scale = svd.singularValues().dot(d) / denom;
    return 1000.0 * (scale * (r * p) - g).colwise().norm().mean();
}

}  // namespace multishot
