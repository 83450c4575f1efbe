#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "multishot/body_model.hpp"
#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"
#include "multishot/nn.hpp"
#include "multishot/objectives.hpp"
#include "multishot/solver.hpp"

namespace multishot {

struct TrainConfig {
    int window = 16;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 100;
    double lambda_2d = 1.0;
    double lambda_smpl = 1.0;
    double lambda_sm = 0.1;
    std::uint64_t seed = 0;
    bool freeze_encoder = true;

    void validate() const {
        if (window < 1 || batch_size < 1 || epochs < 1 || learning_rate <= 0.0)
            throw DataError("train config: hyperparameters must be positive");
    }
};

struct LossValues {
    double l2d = 0.0;
    double lsmpl = 0.0;
    double lsm_joint = 0.0;
    double lsm_param = 0.0;

    double lsm() const { return lsm_joint + lsm_param; }
    double total(const TrainConfig& cfg) const {
        return cfg.lambda_2d * l2d + cfg.lambda_smpl * lsmpl + cfg.lambda_sm * lsm();
    }
};

namespace detail {

inline FrameParams frame_params_from_vector(const Eigen::VectorXd& p, int joint_count) {
    FrameParams fp;
    fp.r_gl = p.segment<3>(0);
    fp.t_gl = p.segment<3>(3);
    fp.theta_b.resize(static_cast<size_t>(joint_count - 1));
    for (int j = 0; j + 1 < joint_count; ++j) fp.theta_b[j] = p.segment<3>(6 + 3 * j);
    return fp;
}

}  // namespace detail

// Training losses over one window and their gradient w.r.t. the predicted
// parameters (one column per frame, layout [r_gl t_gl theta_b beta]).
// L_2D: confidence-weighted L1 on projected joints vs the detections.
// L_smpl: squared error on (r_gl, theta_b, beta) vs the pseudo ground truth
// (t_gl plays the camera's role and is supervised through L_2D only).
// Smoothness: canonical-frame joints and body pose of adjacent valid frames.
// Everything is masked to valid frames / valid pairs and mean-normalized.
inline LossValues compute_losses(const BodyModel& model,
                                 const std::vector<FrameObservation>& window,
                                 const std::vector<FrameParams>& gt_params,
                                 const ShapeParams& gt_beta,
                                 const Eigen::MatrixXd& pred, const TrainConfig& cfg,
                                 Eigen::MatrixXd* dpred = nullptr) {
    const int T = static_cast<int>(window.size());
    const int J = model.joint_count;
    const int B = model.shape_dim;
    const int P = model.param_dim();
    if (pred.rows() != P || pred.cols() != T || static_cast<int>(gt_params.size()) != T)
        throw DataError("compute_losses: shape mismatch");
    if (dpred) dpred->setZero(P, T);

    int n_valid = 0;
    for (const auto& f : window) n_valid += f.valid ? 1 : 0;
    if (n_valid == 0) throw DataError("compute_losses: no valid frames in window");

    LossValues loss;
    std::vector<FrameParams> pred_params(static_cast<size_t>(T));
    std::vector<ShapeParams> pred_beta(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        pred_params[t] = detail::frame_params_from_vector(pred.col(t), J);
        pred_beta[t] = pred.col(t).tail(B);
    }

    const double inv_valid = 1.0 / n_valid;
    for (int t = 0; t < T; ++t) {
        if (!window[t].valid) continue;

        // L_2D through the kinematic chain and the projection.
        const FkJacobian fk = fk_jacobian(model, pred_params[t], pred_beta[t]);
        for (int j = 0; j < J; ++j) {
            const double conf = window[t].keypoints(2, j);
            if (conf <= 0.0) continue;
            const Eigen::Vector3d x = fk.joints.col(j);
            // Projections inside the camera's blind zone are undefined (the
            // camera model calls z <= kMinDepth invisible); no supervision.
            if (x.z() <= kMinDepth) continue;
            const Eigen::Vector2d uv = project_point(x, window[t].camera);
            const Eigen::Vector2d d = uv - window[t].keypoints.block<2, 1>(0, j);
            loss.l2d += conf * (std::abs(d.x()) + std::abs(d.y())) * inv_valid;
            if (dpred) {
                const Eigen::Vector2d sgn(d.x() >= 0.0 ? 1.0 : -1.0,
                                          d.y() >= 0.0 ? 1.0 : -1.0);
                const Eigen::Matrix<double, 2, 3> pj =
                    projection_jacobian(x, window[t].camera);
                dpred->col(t) += (cfg.lambda_2d * conf * inv_valid) *
                                 (fk.d_all.middleRows(3 * j, 3).transpose() *
                                  (pj.transpose() * sgn));
            }
        }

        // L_smpl on pose and shape.
        Eigen::VectorXd target(P);
        target.segment<3>(0) = gt_params[t].r_gl;
        target.segment<3>(3) = pred_params[t].t_gl;  // excluded from the loss
        for (int j = 0; j + 1 < J; ++j)
            target.segment<3>(6 + 3 * j) = gt_params[t].theta_b[j];
        target.tail(B) = gt_beta;
        const Eigen::VectorXd diff = pred.col(t) - target;
        loss.lsmpl += diff.squaredNorm() * inv_valid;
        if (dpred) dpred->col(t) += (cfg.lambda_smpl * 2.0 * inv_valid) * diff;
    }

    // Smoothness between adjacent valid frames of the window.
    int n_pairs = 0;
    for (int t = 0; t + 1 < T; ++t)
        if (window[t].valid && window[t + 1].valid) ++n_pairs;
    if (n_pairs > 0) {
        const double inv_pairs = 1.0 / n_pairs;
        Eigen::VectorXd g_theta, g_theta1, g_beta;
        for (int t = 0; t + 1 < T; ++t) {
            if (!window[t].valid || !window[t + 1].valid) continue;

            const BodyJacobian ja = body_jacobian(model, pred_params[t].theta_b, pred_beta[t]);
            const BodyJacobian jb =
                body_jacobian(model, pred_params[t + 1].theta_b, pred_beta[t + 1]);
            const Eigen::VectorXd diff = (ja.joints - jb.joints).reshaped();
            loss.lsm_joint += diff.squaredNorm() * inv_pairs;
            if (dpred) {
                const double s = cfg.lambda_sm * 2.0 * inv_pairs;
                dpred->col(t).segment(6, 3 * (J - 1)) += s * (ja.d_theta.transpose() * diff);
                dpred->col(t).tail(B) += s * (ja.d_beta.transpose() * diff);
                dpred->col(t + 1).segment(6, 3 * (J - 1)) -=
                    s * (jb.d_theta.transpose() * diff);
                dpred->col(t + 1).tail(B) -= s * (jb.d_beta.transpose() * diff);
            }

            const double ep = e_sm_param(pred_params[t].theta_b, pred_params[t + 1].theta_b,
                                         dpred ? &g_theta : nullptr,
                                         dpred ? &g_theta1 : nullptr);
            loss.lsm_param += ep * inv_pairs;
            if (dpred) {
                const double s = cfg.lambda_sm * inv_pairs;
                dpred->col(t).segment(6, 3 * (J - 1)) += s * g_theta;
                dpred->col(t + 1).segment(6, 3 * (J - 1)) += s * g_theta1;
            }
        }
    }
    return loss;
}

// --- Flattened parameter view (Adam, finite differences, serialization) -----

inline int parameter_count(const TemporalModelWeights& w) {
    int n = 0;
    w.for_each_param([&](const char*, const auto& arr) { n += static_cast<int>(arr.size()); });
    return n;
}

inline Eigen::VectorXd flatten_params(const TemporalModelWeights& w) {
    Eigen::VectorXd x(parameter_count(w));
    int off = 0;
    w.for_each_param([&](const char*, const auto& arr) {
        x.segment(off, arr.size()) =
            Eigen::Map<const Eigen::VectorXd>(arr.data(), arr.size());
        off += static_cast<int>(arr.size());
    });
    return x;
}

inline void unflatten_params(const Eigen::VectorXd& x, TemporalModelWeights& w) {
    int off = 0;
    w.for_each_param([&](const char*, auto& arr) {
        Eigen::Map<Eigen::VectorXd>(arr.data(), arr.size()) = x.segment(off, arr.size());
        off += static_cast<int>(arr.size());
    });
}

// 1 where the flattened entry belongs to the (frozen) encoder.
inline Eigen::VectorXd encoder_mask(const TemporalModelWeights& w) {
    Eigen::VectorXd mask(parameter_count(w));
    int off = 0;
    w.for_each_param([&](const char* name, const auto& arr) {
        const double v = w.is_encoder_param(name) ? 1.0 : 0.0;
        mask.segment(off, arr.size()).setConstant(v);
        off += static_cast<int>(arr.size());
    });
    return mask;
}

// --- Training ---------------------------------------------------------------

struct TrainWindow {
    int sequence = 0;
    int start = 0;
    int length = 0;
};

struct LossCurveRow {
    int epoch = 0;
    double l2d = 0.0, lsmpl = 0.0, lsm = 0.0, total = 0.0;
};

struct TrainResult {
    TemporalModelWeights weights;
    std::vector<LossCurveRow> curve;
};

namespace detail {

inline std::vector<TrainWindow> make_windows(const SequenceDataset& data, ModelKind kind,
                                             int window) {
    std::vector<TrainWindow> out;
    for (size_t s = 0; s < data.sequences.size(); ++s) {
        const auto& frames = data.sequences[s].frames;
        const int T = static_cast<int>(frames.size());
        if (kind == ModelKind::single_frame) {
            for (int t = 0; t < T; ++t)
                if (frames[t].valid) out.push_back({static_cast<int>(s), t, 1});
        } else {
            for (int start = 0; start < T; start += window) {
                const int len = std::min(window, T - start);
                if (len < 1) break;
                bool any_valid = false;
                for (int t = start; t < start + len; ++t)
                    any_valid = any_valid || frames[t].valid;
                if (any_valid) out.push_back({static_cast<int>(s), start, len});
            }
        }
    }
    return out;
}

}  // namespace detail

// Mini-batch Adam over the masked losses. Pseudo ground truth comes from the
// offline multi-shot optimization (or straight from the simulator in
// controlled runs); it must cover every training sequence.
inline TrainResult train(const BodyModel& model, const SequenceDataset& data,
                         const std::vector<SequenceEstimate>& pseudo_gt, ModelKind kind,
                         const TrainConfig& cfg, const TemporalModelWeights* start = nullptr) {
    cfg.validate();
    if (pseudo_gt.size() != data.sequences.size())
        throw DataError("train: pseudo ground truth does not cover the dataset");
    for (size_t s = 0; s < data.sequences.size(); ++s)
        if (pseudo_gt[s].frames.size() != data.sequences[s].frames.size())
            throw DataError("train: pseudo ground truth frame count mismatch");

    TemporalModelWeights w =
        start ? *start : init_weights(model.joint_count, model.shape_dim, kind, 64, 4,
                                      cfg.seed);
    w.kind = kind;

    std::vector<TrainWindow> windows = detail::make_windows(data, kind, cfg.window);
    if (windows.empty()) throw DataError("train: no usable windows in dataset");

    const int n = parameter_count(w);
    Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd frozen = cfg.freeze_encoder
                                       ? encoder_mask(w)
                                       : Eigen::VectorXd::Zero(n);
    Rng shuffle_rng(substream(cfg.seed, 11));
    long adam_t = 0;

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = windows.size(); i > 1; --i)
            std::swap(windows[i - 1], windows[shuffle_rng.index(i)]);

        LossCurveRow row;
        row.epoch = epoch;
        long batches = 0;
        for (size_t b0 = 0; b0 < windows.size(); b0 += cfg.batch_size) {
            const size_t b1 = std::min(windows.size(), b0 + cfg.batch_size);
            TemporalModelWeights grad = zeroed_like(w);
            LossValues batch_loss;
            for (size_t i = b0; i < b1; ++i) {
                const auto& tw = windows[i];
                const auto& frames = data.sequences[tw.sequence].frames;
                std::vector<FrameObservation> obs(frames.begin() + tw.start,
                                                  frames.begin() + tw.start + tw.length);
                std::vector<FrameParams> gt(
                    pseudo_gt[tw.sequence].frames.begin() + tw.start,
                    pseudo_gt[tw.sequence].frames.begin() + tw.start + tw.length);
                WindowCache cache;
                const Eigen::MatrixXd pred = forward_window(w, obs, cache);
                Eigen::MatrixXd dpred;
                const LossValues lv = compute_losses(model, obs, gt,
                                                     pseudo_gt[tw.sequence].beta, pred,
                                                     cfg, &dpred);
                backward_window(w, cache, dpred, grad);
                batch_loss.l2d += lv.l2d;
                batch_loss.lsmpl += lv.lsmpl;
                batch_loss.lsm_joint += lv.lsm_joint;
                batch_loss.lsm_param += lv.lsm_param;
            }
            const double inv_count = 1.0 / static_cast<double>(b1 - b0);
            if (!std::isfinite(batch_loss.total(cfg)))
                throw NumericalError("non-finite loss in batch " + std::to_string(batches) +
                                     " of epoch " + std::to_string(epoch));
            Eigen::VectorXd gflat = flatten_params(grad) * inv_count;
            gflat = gflat.cwiseProduct((1.0 - frozen.array()).matrix());

            ++adam_t;
            adam_m = cfg.adam_beta1 * adam_m + (1.0 - cfg.adam_beta1) * gflat;
            adam_v = cfg.adam_beta2 * adam_v.array().matrix() +
                     (1.0 - cfg.adam_beta2) * gflat.cwiseProduct(gflat);
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
            Eigen::VectorXd x = flatten_params(w);
            x -= (cfg.learning_rate * (adam_m / bc1).array() /
                  ((adam_v / bc2).array().sqrt() + cfg.adam_eps))
                     .matrix();
            unflatten_params(x, w);

            row.l2d += batch_loss.l2d * inv_count;
            row.lsmpl += batch_loss.lsmpl * inv_count;
            row.lsm += batch_loss.lsm() * inv_count;
            ++batches;
        }
        row.l2d /= static_cast<double>(batches);
        row.lsmpl /= static_cast<double>(batches);
        row.lsm /= static_cast<double>(batches);
        row.total = cfg.lambda_2d * row.l2d + cfg.lambda_smpl * row.lsmpl +
                    cfg.lambda_sm * row.lsm;
        result.curve.push_back(row);
    }
    result.weights = std::move(w);
    return result;
}

// Run the model over a whole sequence (windows of cfg.window) and package
// the predictions like a solver estimate; beta is averaged over valid frames.
inline SequenceEstimate predict_sequence(const BodyModel& model,
                                         const TemporalModelWeights& w,
                                         const SequenceRecord& seq, int window) {
    const int T = static_cast<int>(seq.frames.size());
    SequenceEstimate est;
    est.identity = seq.identity;
    est.beta = Eigen::VectorXd::Zero(model.shape_dim);
    est.frames.assign(static_cast<size_t>(T), FrameParams::rest(model));
    est.converged.assign(static_cast<size_t>(T), false);
    long n_valid = 0;
    for (int start = 0; start < T; start += window) {
        const int len = std::min(window, T - start);
        std::vector<FrameObservation> obs(seq.frames.begin() + start,
                                          seq.frames.begin() + start + len);
        WindowCache cache;
        const Eigen::MatrixXd pred = forward_window(w, obs, cache);
        for (int t = 0; t < len; ++t) {
            est.frames[start + t] =
                detail::frame_params_from_vector(pred.col(t), model.joint_count);
            if (seq.frames[start + t].valid) {
                est.beta += pred.col(t).tail(model.shape_dim);
                ++n_valid;
                est.converged[start + t] = true;
            }
        }
    }
    if (n_valid > 0) est.beta /= static_cast<double>(n_valid);
    return est;
}

// --- Weights file -------------------------------------------------------------

inline constexpr const char* kWeightsFormatVersion = "1";

inline nlohmann::json weights_to_json(const TemporalModelWeights& w) {
    nlohmann::json j;
    j["format_version"] = kWeightsFormatVersion;
    j["model"] = to_string(w.kind);
    j["dims"] = {{"input_dim", w.input_dim},   {"feature_dim", w.feature_dim},
                 {"hidden_dim", w.hidden_dim}, {"ffn_dim", w.ffn_dim},
                 {"regressor_hidden", w.regressor_hidden},
                 {"heads", w.heads},           {"param_dim", w.param_dim},
                 {"ief_steps", w.ief_steps}};
    nlohmann::json arrays;
    w.for_each_param([&](const char* name, const auto& arr) {
        nlohmann::json data = nlohmann::json::array();
        for (Eigen::Index i = 0; i < arr.size(); ++i) data.push_back(arr.data()[i]);
        arrays[name] = {{"shape", {arr.rows(), arr.cols()}}, {"data", data}};
    });
    j["arrays"] = arrays;
    return j;
}

inline TemporalModelWeights weights_from_json(const nlohmann::json& j) {
    try {
        const std::string version = j.at("format_version").get<std::string>();
        if (version != kWeightsFormatVersion)
            throw DataError("weights format_version \"" + version + "\" not supported");
        const auto& dims = j.at("dims");
        TemporalModelWeights w;
        w.kind = model_kind_from_string(j.at("model").get<std::string>());
        w.input_dim = dims.at("input_dim").get<int>();
        w.feature_dim = dims.at("feature_dim").get<int>();
        w.hidden_dim = dims.at("hidden_dim").get<int>();
        w.ffn_dim = dims.at("ffn_dim").get<int>();
        w.regressor_hidden = dims.at("regressor_hidden").get<int>();
        w.heads = dims.at("heads").get<int>();
        w.param_dim = dims.at("param_dim").get<int>();
        w.ief_steps = dims.at("ief_steps").get<int>();
        const auto& arrays = j.at("arrays");
        w.for_each_param([&](const char* name, auto& arr) {
            const auto& entry = arrays.at(name);
            const long rows = entry.at("shape").at(0).get<long>();
            const long cols = entry.at("shape").at(1).get<long>();
            arr.resize(rows, cols);
            const auto& data = entry.at("data");
            if (static_cast<Eigen::Index>(data.size()) != arr.size())
                throw DataError(std::string("weights array size mismatch: ") + name);
            for (Eigen::Index i = 0; i < arr.size(); ++i)
                arr.data()[i] = data.at(static_cast<size_t>(i)).get<double>();
        });
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("weights json: ") + e.what());
    }
}

inline void write_weights(const TemporalModelWeights& w, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << weights_to_json(w).dump() << "\n";
    if (!out) throw DataError("write failed: " + path);
}

inline TemporalModelWeights read_weights(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("weights json: ") + e.what());
    }
    return weights_from_json(j);
}

inline void write_loss_curve(const std::vector<LossCurveRow>& curve,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "epoch,l2d,lsmpl,lsm,total\n";
    char buf[160];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l2d,
                      r.lsmpl, r.lsm, r.total);
        out << buf;
    }
}

}  // namespace multishot
