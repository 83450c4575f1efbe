#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"
#include "multishot/rng.hpp"

namespace multishot {

enum class ModelKind { single_frame, transformer, conv_baseline };

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "single_frame" || s == "single-frame") return ModelKind::single_frame;
    if (s == "transformer") return ModelKind::transformer;
    if (s == "conv" || s == "conv_baseline" || s == "conv-baseline")
        return ModelKind::conv_baseline;
    throw DataError("unknown model kind: " + s);
}

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::single_frame: return "single_frame";
        case ModelKind::transformer: return "transformer";
        case ModelKind::conv_baseline: return "conv_baseline";
    }
    return "?";
}

namespace nn {

struct Linear {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;

    void init(int out, int in, Rng& rng) {
        const double s = std::sqrt(6.0 / (in + out));
        w.resize(out, in);
        for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-s, s);
        b = Eigen::VectorXd::Zero(out);
    }
    // Column-wise batch: Y = W X + b 1^T.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
        return (w * x).colwise() + b;
    }
};

struct LayerNorm {
    Eigen::VectorXd gain, bias;
    static constexpr double kEps = 1e-6;

    void init(int dim) {
        gain = Eigen::VectorXd::Ones(dim);
        bias = Eigen::VectorXd::Zero(dim);
    }
};

struct LayerNormCache {
    Eigen::MatrixXd xhat;        // normalized input
    Eigen::VectorXd inv_sigma;   // per column
};

inline Eigen::MatrixXd layer_norm_forward(const LayerNorm& ln, const Eigen::MatrixXd& x,
                                          LayerNormCache& cache) {
    const Eigen::Index d = x.rows();
    cache.xhat.resize(d, x.cols());
    cache.inv_sigma.resize(x.cols());
    Eigen::MatrixXd y(d, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double mu = x.col(c).mean();
        const double var = (x.col(c).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + LayerNorm::kEps);
        cache.inv_sigma[c] = inv;
        cache.xhat.col(c) = (x.col(c).array() - mu) * inv;
        y.col(c) = ln.gain.cwiseProduct(cache.xhat.col(c)) + ln.bias;
    }
    return y;
}

// dL/dx for y = gain .* xhat + bias; also accumulates parameter grads.
inline Eigen::MatrixXd layer_norm_backward(const LayerNorm& ln, const LayerNormCache& cache,
                                           const Eigen::MatrixXd& dy,
                                           Eigen::VectorXd& dgain, Eigen::VectorXd& dbias) {
    const Eigen::Index d = dy.rows();
    Eigen::MatrixXd dx(d, dy.cols());
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
        dgain += dy.col(c).cwiseProduct(cache.xhat.col(c));
        dbias += dy.col(c);
        const Eigen::VectorXd dxhat = dy.col(c).cwiseProduct(ln.gain);
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(cache.xhat.col(c)).mean();
        dx.col(c) = cache.inv_sigma[c] *
                    (dxhat.array() - m1 - cache.xhat.col(c).array() * m2).matrix();
    }
    return dx;
}

struct Conv1d {
    // Temporal kernel of width 3, zero padding at the sequence edges.
    std::array<Eigen::MatrixXd, 3> w;  // taps t-1, t, t+1
    Eigen::VectorXd b;

    void init(int out, int in, Rng& rng) {
        const double s = std::sqrt(6.0 / (3 * in + out));
        for (auto& m : w) {
            m.resize(out, in);
            for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-s, s);
        }
        b = Eigen::VectorXd::Zero(out);
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
        const Eigen::Index T = x.cols();
        Eigen::MatrixXd y = b.replicate(1, T);
        for (Eigen::Index t = 0; t < T; ++t)
            for (int k = -1; k <= 1; ++k) {
                const Eigen::Index s = t + k;
                if (s < 0 || s >= T) continue;
                y.col(t) += w[static_cast<size_t>(k + 1)] * x.col(s);
            }
        return y;
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy,
                             Conv1d& grad) const {
        const Eigen::Index T = x.cols();
        Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(x.rows(), T);
        for (Eigen::Index t = 0; t < T; ++t) {
            grad.b += dy.col(t);
            for (int k = -1; k <= 1; ++k) {
                const Eigen::Index s = t + k;
                if (s < 0 || s >= T) continue;
                grad.w[static_cast<size_t>(k + 1)] += dy.col(t) * x.col(s).transpose();
                dx.col(s) += w[static_cast<size_t>(k + 1)].transpose() * dy.col(t);
            }
        }
        return dx;
    }
};

}  // namespace nn

struct FrameFeature {
    Eigen::VectorXd phi;
    int valid = 1;
    int frame_index = 0;
};

// All weights of the desk-scale recovery models. The temporal stage in use
// is picked by `kind`; the encoder and regressor are shared across kinds.
struct TemporalModelWeights {
    ModelKind kind = ModelKind::transformer;
    int input_dim = 0;    // 3J
    int feature_dim = 64; // d
    int hidden_dim = 64;  // encoder hidden
    int ffn_dim = 128;
    int regressor_hidden = 128;
    int heads = 4;
    int param_dim = 0;    // 6 + 3(J-1) + B
    int ief_steps = 3;

    nn::Linear enc1, enc2;
    nn::LayerNorm ln1, ln2;
    nn::Linear wq, wk, wv, wo;
    nn::Linear ff1, ff2;
    nn::Conv1d conv1a, conv1b, conv2a, conv2b;
    nn::Linear reg1, reg2;
    Eigen::VectorXd mean_params;

    int head_dim() const { return feature_dim / heads; }

    // Enumerate every trainable array with a stable name.
    template <class F> void for_each_param(F&& f) {
        f("enc1.w", enc1.w); f("enc1.b", enc1.b);
        f("enc2.w", enc2.w); f("enc2.b", enc2.b);
        f("ln1.gain", ln1.gain); f("ln1.bias", ln1.bias);
        f("ln2.gain", ln2.gain); f("ln2.bias", ln2.bias);
        f("wq.w", wq.w); f("wq.b", wq.b);
        f("wk.w", wk.w); f("wk.b", wk.b);
        f("wv.w", wv.w); f("wv.b", wv.b);
        f("wo.w", wo.w); f("wo.b", wo.b);
        f("ff1.w", ff1.w); f("ff1.b", ff1.b);
        f("ff2.w", ff2.w); f("ff2.b", ff2.b);
        for (int k = 0; k < 3; ++k) {
            const std::string t = std::to_string(k);
            f(("conv1a.w" + t).c_str(), conv1a.w[static_cast<size_t>(k)]);
            f(("conv1b.w" + t).c_str(), conv1b.w[static_cast<size_t>(k)]);
            f(("conv2a.w" + t).c_str(), conv2a.w[static_cast<size_t>(k)]);
            f(("conv2b.w" + t).c_str(), conv2b.w[static_cast<size_t>(k)]);
        }
        f("conv1a.b", conv1a.b); f("conv1b.b", conv1b.b);
        f("conv2a.b", conv2a.b); f("conv2b.b", conv2b.b);
        f("reg1.w", reg1.w); f("reg1.b", reg1.b);
        f("reg2.w", reg2.w); f("reg2.b", reg2.b);
        f("mean_params", mean_params);
    }
    template <class F> void for_each_param(F&& f) const {
        const_cast<TemporalModelWeights*>(this)->for_each_param(
            [&](const char* name, auto& arr) { f(name, std::as_const(arr)); });
    }

    bool is_encoder_param(const std::string& name) const {
        return name.rfind("enc", 0) == 0;
    }
};

inline TemporalModelWeights init_weights(int joint_count, int shape_dim, ModelKind kind,
                                         int feature_dim, int heads, std::uint64_t seed) {
    if (feature_dim % heads != 0)
        throw DataError("feature_dim must be divisible by heads");
    if (feature_dim % 2 != 0) throw DataError("feature_dim must be even");
    TemporalModelWeights w;
    w.kind = kind;
    w.input_dim = 3 * joint_count;
    w.feature_dim = feature_dim;
    w.heads = heads;
    w.param_dim = 6 + 3 * (joint_count - 1) + shape_dim;
    Rng rng(substream(seed, 7));
    w.enc1.init(w.hidden_dim, w.input_dim, rng);
    w.enc2.init(feature_dim, w.hidden_dim, rng);
    w.ln1.init(feature_dim);
    w.ln2.init(feature_dim);
    w.wq.init(feature_dim, feature_dim, rng);
    w.wk.init(feature_dim, feature_dim, rng);
    w.wv.init(feature_dim, feature_dim, rng);
    w.wo.init(feature_dim, feature_dim, rng);
    w.ff1.init(w.ffn_dim, feature_dim, rng);
    w.ff2.init(feature_dim, w.ffn_dim, rng);
    w.conv1a.init(feature_dim, feature_dim, rng);
    w.conv1b.init(feature_dim, feature_dim, rng);
    w.conv2a.init(feature_dim, feature_dim, rng);
    w.conv2b.init(feature_dim, feature_dim, rng);
    w.reg1.init(w.regressor_hidden, feature_dim + w.param_dim, rng);
    w.reg2.init(w.param_dim, w.regressor_hidden, rng);
    // Start the iterative refinement from an upright mid-scene body.
    w.mean_params = Eigen::VectorXd::Zero(w.param_dim);
    w.mean_params[0] = M_PI;  // r_gl ~ upright facing the camera
    w.mean_params[5] = 4.0;   // t_gl z
    return w;
}

// Fixed sinusoidal positional encoding; pairs (sin, cos) of geometrically
// spaced frequencies.
inline Eigen::VectorXd positional_encoding(int t, int d) {
    if (t < 0) throw DataError("positional_encoding: t must be >= 0");
    if (d % 2 != 0) throw DataError("positional_encoding: d must be even");
    Eigen::VectorXd p(d);
    for (int k = 0; k < d / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / d);
        p[2 * k] = std::sin(t * freq);
        p[2 * k + 1] = std::cos(t * freq);
    }
    return p;
}

// Keypoints normalized to [-1, 1] by the image size, confidences appended
// per joint: input (u', v', conf) x J.
inline Eigen::VectorXd frame_input(const FrameObservation& obs) {
    const int J = obs.joint_count();
    Eigen::VectorXd x(3 * J);
    for (int j = 0; j < J; ++j) {
        x[3 * j] = 2.0 * obs.keypoints(0, j) / obs.camera.width - 1.0;
        x[3 * j + 1] = 2.0 * obs.keypoints(1, j) / obs.camera.height - 1.0;
        x[3 * j + 2] = obs.keypoints(2, j);
    }
    return x;
}

// --- Whole-window forward/backward -------------------------------------------

// Cached activations of one window; inputs to the backward pass.
struct WindowCache {
    int T = 0;
    std::vector<char> valid;
    Eigen::MatrixXd input;   // 3J x T
    Eigen::MatrixXd enc_h;   // hidden after tanh
    Eigen::MatrixXd phi;     // d x T (zeroed at invalid frames)
    // transformer
    Eigen::MatrixXd z;       // phi + positional
    nn::LayerNormCache ln1_cache;
    Eigen::MatrixXd ln1_out, q, k, v;
    std::vector<Eigen::MatrixXd> attn;  // per head, T x T, rows = queries
    Eigen::MatrixXd concat, u, a1;
    nn::LayerNormCache ln2_cache;
    Eigen::MatrixXd ln2_out, ff_h, g;
    // conv
    Eigen::MatrixXd c1_h, c1_out, c2_h, c2_out;
    // shared
    Eigen::MatrixXd Phi;     // d x T
    // regressor, per IEF step
    std::vector<Eigen::MatrixXd> ief_in;   // (d+P) x T
    std::vector<Eigen::MatrixXd> ief_h;    // hidden x T
    std::vector<Eigen::MatrixXd> ief_theta;  // P x T, theta after step i (and [0]=mean)
    bool all_invalid = false;
};

namespace detail {

inline void transformer_stage(const TemporalModelWeights& w, WindowCache& c) {
    const int T = c.T;
    const int d = w.feature_dim;
    const int H = w.heads;
    const int dh = w.head_dim();

    c.z = c.phi;
    for (int t = 0; t < T; ++t) c.z.col(t) += positional_encoding(t, d);
    c.ln1_out = layer_norm_forward(w.ln1, c.z, c.ln1_cache);
    c.q = w.wq.forward(c.ln1_out);
    c.k = w.wk.forward(c.ln1_out);
    c.v = w.wv.forward(c.ln1_out);

    c.attn.assign(static_cast<size_t>(H), Eigen::MatrixXd::Zero(T, T));
    c.concat.setZero(d, T);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < H; ++h) {
        auto& a = c.attn[static_cast<size_t>(h)];
        for (int t = 0; t < T; ++t) {
            if (!c.valid[static_cast<size_t>(t)]) continue;
            // Softmax over valid keys only; invalid frames are skipped
            // entirely so their features can never leak into valid outputs.
            double mx = -std::numeric_limits<double>::infinity();
            for (int s = 0; s < T; ++s) {
                if (!c.valid[static_cast<size_t>(s)]) continue;
                const double l = scale * c.q.col(t).segment(h * dh, dh)
                                             .dot(c.k.col(s).segment(h * dh, dh));
                a(t, s) = l;
                mx = std::max(mx, l);
            }
            double denom = 0.0;
            for (int s = 0; s < T; ++s) {
                if (!c.valid[static_cast<size_t>(s)]) continue;
                a(t, s) = std::exp(a(t, s) - mx);
                denom += a(t, s);
            }
            for (int s = 0; s < T; ++s) {
                if (!c.valid[static_cast<size_t>(s)]) { a(t, s) = 0.0; continue; }
                a(t, s) /= denom;
                c.concat.col(t).segment(h * dh, dh) += a(t, s) * c.v.col(s).segment(h * dh, dh);
            }
        }
    }
    c.u = w.wo.forward(c.concat);
    c.a1 = c.z + c.u;
    c.ln2_out = layer_norm_forward(w.ln2, c.a1, c.ln2_cache);
    c.ff_h = w.ff1.forward(c.ln2_out).array().tanh();
    c.g = w.ff2.forward(c.ff_h);

    // Residual on top of the raw frame feature; invalid frames pass through.
    c.Phi = c.phi;
    for (int t = 0; t < T; ++t)
        if (c.valid[static_cast<size_t>(t)]) c.Phi.col(t) += c.u.col(t) + c.g.col(t);
}

inline void conv_stage(const TemporalModelWeights& w, WindowCache& c) {
    c.c1_h = w.conv1a.forward(c.phi).array().tanh();
    c.c1_out = c.phi + w.conv1b.forward(c.c1_h);
    c.c2_h = w.conv2a.forward(c.c1_out).array().tanh();
    c.c2_out = c.c1_out + w.conv2b.forward(c.c2_h);
    c.Phi = c.c2_out;
}

}  // namespace detail

// Forward pass over a window of observations. Features of absent frames are
// zero and, for the transformer, excluded from attention; the conv baseline
// consumes them as zero padding.
inline Eigen::MatrixXd forward_window(const TemporalModelWeights& w,
                                      const std::vector<FrameObservation>& window,
                                      WindowCache& c) {
    const int T = static_cast<int>(window.size());
    if (T < 1) throw DataError("forward_window: empty window");
    c.T = T;
    c.valid.resize(static_cast<size_t>(T));
    c.input.setZero(w.input_dim, T);
    for (int t = 0; t < T; ++t) {
        c.valid[static_cast<size_t>(t)] = static_cast<char>(window[static_cast<size_t>(t)].valid);
        c.input.col(t) = frame_input(window[static_cast<size_t>(t)]);
    }

    c.enc_h = w.enc1.forward(c.input).array().tanh();
    c.phi = w.enc2.forward(c.enc_h);
    for (int t = 0; t < T; ++t)
        if (!c.valid[static_cast<size_t>(t)]) c.phi.col(t).setZero();

    c.all_invalid = true;
    for (int t = 0; t < T; ++t)
        if (c.valid[static_cast<size_t>(t)]) c.all_invalid = false;

    switch (w.kind) {
        case ModelKind::single_frame: c.Phi = c.phi; break;
        case ModelKind::transformer:
            if (c.all_invalid) c.Phi = c.phi;
            else detail::transformer_stage(w, c);
            break;
        case ModelKind::conv_baseline: detail::conv_stage(w, c); break;
    }

    // Iterative error feedback regressor, shared weights across steps.
    const int P = w.param_dim;
    c.ief_in.assign(static_cast<size_t>(w.ief_steps), Eigen::MatrixXd());
    c.ief_h.assign(static_cast<size_t>(w.ief_steps), Eigen::MatrixXd());
    c.ief_theta.assign(static_cast<size_t>(w.ief_steps) + 1, Eigen::MatrixXd());
    c.ief_theta[0] = w.mean_params.replicate(1, T);
    for (int i = 0; i < w.ief_steps; ++i) {
        Eigen::MatrixXd in(w.feature_dim + P, T);
        in.topRows(w.feature_dim) = c.Phi;
        in.bottomRows(P) = c.ief_theta[static_cast<size_t>(i)];
        c.ief_in[static_cast<size_t>(i)] = in;
        c.ief_h[static_cast<size_t>(i)] = w.reg1.forward(in).array().tanh();
        c.ief_theta[static_cast<size_t>(i) + 1] =
            c.ief_theta[static_cast<size_t>(i)] +
            w.reg2.forward(c.ief_h[static_cast<size_t>(i)]);
    }
    return c.ief_theta[static_cast<size_t>(w.ief_steps)];
}

inline TemporalModelWeights zeroed_like(const TemporalModelWeights& w) {
    TemporalModelWeights g = w;
    g.for_each_param([](const char*, auto& arr) { arr.setZero(); });
    return g;
}

// Zero the output projections of the temporal residual stages so a freshly
// initialized temporal model starts as an exact identity on top of the
// per-frame features. Warm-starting temporal training this way puts the
// transformer and the conv baseline at the same starting point.
inline void zero_temporal_residual(TemporalModelWeights& w) {
    w.wo.w.setZero();
    w.wo.b.setZero();
    w.ff2.w.setZero();
    w.ff2.b.setZero();
    w.conv1b.b.setZero();
    w.conv2b.b.setZero();
    for (auto& m : w.conv1b.w) m.setZero();
    for (auto& m : w.conv2b.w) m.setZero();
}

// Accumulates dL/d(weights) for one window into `grad`, given dL/d(predictions).
inline void backward_window(const TemporalModelWeights& w, const WindowCache& c,
                            const Eigen::MatrixXd& dpred, TemporalModelWeights& grad) {
    const int T = c.T;
    const int d = w.feature_dim;
    const int P = w.param_dim;

    // Regressor (IEF, shared weights).
    Eigen::MatrixXd dPhi = Eigen::MatrixXd::Zero(d, T);
    Eigen::MatrixXd dtheta = dpred;
    for (int i = w.ief_steps - 1; i >= 0; --i) {
        const auto& h = c.ief_h[static_cast<size_t>(i)];
        const auto& in = c.ief_in[static_cast<size_t>(i)];
        // theta_{i+1} = theta_i + reg2(h)
        grad.reg2.b += dtheta.rowwise().sum();
        grad.reg2.w += dtheta * h.transpose();
        Eigen::MatrixXd dh = w.reg2.w.transpose() * dtheta;
        dh.array() *= (1.0 - h.array().square());
        grad.reg1.b += dh.rowwise().sum();
        grad.reg1.w += dh * in.transpose();
        const Eigen::MatrixXd din = w.reg1.w.transpose() * dh;
        dPhi += din.topRows(d);
        dtheta += din.bottomRows(P);  // dtheta_i = dtheta_{i+1} + d(input slice)
    }
    grad.mean_params += dtheta.rowwise().sum();

    // Temporal stage.
    Eigen::MatrixXd dphi = Eigen::MatrixXd::Zero(d, T);
    if (w.kind == ModelKind::single_frame ||
        (w.kind == ModelKind::transformer && c.all_invalid)) {
        dphi = dPhi;
    } else if (w.kind == ModelKind::transformer) {
        const int H = w.heads;
        const int dh_dim = w.head_dim();
        Eigen::MatrixXd du = Eigen::MatrixXd::Zero(d, T);
        Eigen::MatrixXd dg = Eigen::MatrixXd::Zero(d, T);
        for (int t = 0; t < T; ++t) {
            if (!c.valid[static_cast<size_t>(t)]) continue;
            du.col(t) = dPhi.col(t);
            dg.col(t) = dPhi.col(t);
            dphi.col(t) += dPhi.col(t);  // Phi = phi + u + g on valid frames
        }

        // FFN branch: g = ff2(tanh(ff1(ln2(a1))))
        grad.ff2.b += dg.rowwise().sum();
        grad.ff2.w += dg * c.ff_h.transpose();
        Eigen::MatrixXd dffh = w.ff2.w.transpose() * dg;
        dffh.array() *= (1.0 - c.ff_h.array().square());
        grad.ff1.b += dffh.rowwise().sum();
        grad.ff1.w += dffh * c.ln2_out.transpose();
        const Eigen::MatrixXd dln2 = w.ff1.w.transpose() * dffh;
        Eigen::MatrixXd da1 =
            layer_norm_backward(w.ln2, c.ln2_cache, dln2, grad.ln2.gain, grad.ln2.bias);

        // a1 = z + u
        Eigen::MatrixXd dz = da1;
        du += da1;

        // u = wo(concat)
        grad.wo.b += du.rowwise().sum();
        grad.wo.w += du * c.concat.transpose();
        const Eigen::MatrixXd dconcat = w.wo.w.transpose() * du;

        // attention
        Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(d, T);
        Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(d, T);
        Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(d, T);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh_dim));
        for (int h = 0; h < H; ++h) {
            const auto& a = c.attn[static_cast<size_t>(h)];
            for (int t = 0; t < T; ++t) {
                if (!c.valid[static_cast<size_t>(t)]) continue;
                const Eigen::VectorXd dout = dconcat.col(t).segment(h * dh_dim, dh_dim);
                // out_t = sum_s a(t,s) v_s
                double dot_sum = 0.0;
                Eigen::VectorXd dlogit(T);
                for (int s = 0; s < T; ++s) {
                    if (!c.valid[static_cast<size_t>(s)]) continue;
                    dv.col(s).segment(h * dh_dim, dh_dim) += a(t, s) * dout;
                    const double da = dout.dot(c.v.col(s).segment(h * dh_dim, dh_dim));
                    dlogit[s] = da;
                    dot_sum += a(t, s) * da;
                }
                for (int s = 0; s < T; ++s) {
                    if (!c.valid[static_cast<size_t>(s)]) continue;
                    const double dl = a(t, s) * (dlogit[s] - dot_sum);
                    dq.col(t).segment(h * dh_dim, dh_dim) +=
                        dl * scale * c.k.col(s).segment(h * dh_dim, dh_dim);
                    dk.col(s).segment(h * dh_dim, dh_dim) +=
                        dl * scale * c.q.col(t).segment(h * dh_dim, dh_dim);
                }
            }
        }
        grad.wq.b += dq.rowwise().sum();
        grad.wq.w += dq * c.ln1_out.transpose();
        grad.wk.b += dk.rowwise().sum();
        grad.wk.w += dk * c.ln1_out.transpose();
        grad.wv.b += dv.rowwise().sum();
        grad.wv.w += dv * c.ln1_out.transpose();
        const Eigen::MatrixXd dln1 = w.wq.w.transpose() * dq + w.wk.w.transpose() * dk +
                                     w.wv.w.transpose() * dv;
        dz += layer_norm_backward(w.ln1, c.ln1_cache, dln1, grad.ln1.gain, grad.ln1.bias);
        dphi += dz;  // z = phi + positional (constant)
    } else {
        // conv baseline: c2_out = c1_out + conv2b(tanh(conv2a(c1_out)))
        Eigen::MatrixXd dc2 = dPhi;
        Eigen::MatrixXd dh2 = w.conv2b.backward(c.c2_h, dc2, grad.conv2b);
        dh2.array() *= (1.0 - c.c2_h.array().square());
        Eigen::MatrixXd dc1 = dc2 + w.conv2a.backward(c.c1_out, dh2, grad.conv2a);
        Eigen::MatrixXd dh1 = w.conv1b.backward(c.c1_h, dc1, grad.conv1b);
        dh1.array() *= (1.0 - c.c1_h.array().square());
        dphi = dc1 + w.conv1a.backward(c.phi, dh1, grad.conv1a);
    }

    // Encoder; invalid frames were zeroed after enc2, so their gradient stops.
    for (int t = 0; t < T; ++t)
        if (!c.valid[static_cast<size_t>(t)]) dphi.col(t).setZero();
    grad.enc2.b += dphi.rowwise().sum();
    grad.enc2.w += dphi * c.enc_h.transpose();
    Eigen::MatrixXd dench = w.enc2.w.transpose() * dphi;
    dench.array() *= (1.0 - c.enc_h.array().square());
    grad.enc1.b += dench.rowwise().sum();
    grad.enc1.w += dench * c.input.transpose();
}

// --- Spec-level convenience wrappers ------------------------------------------

inline FrameFeature encode_frame(const FrameObservation& obs,
                                 const TemporalModelWeights& w) {
    FrameFeature f;
    f.frame_index = obs.frame_index;
    f.valid = obs.valid;
    if (!obs.valid) {
        f.phi = Eigen::VectorXd::Zero(w.feature_dim);
        return f;
    }
    const Eigen::VectorXd x = frame_input(obs);
    f.phi = w.enc2.forward(w.enc1.forward(x).array().tanh().matrix());
    return f;
}

namespace detail {

inline WindowCache cache_from_features(const std::vector<FrameFeature>& features,
                                       const TemporalModelWeights& w) {
    WindowCache c;
    c.T = static_cast<int>(features.size());
    if (c.T < 1) throw DataError("empty feature window");
    c.valid.resize(features.size());
    c.phi.setZero(w.feature_dim, c.T);
    c.all_invalid = true;
    // Features are taken as given, including at invalid frames: the
    // transformer's attention mask is what protects valid outputs, while the
    // conv baseline has no such mechanism (its protection is that the
    // pipeline feeds it zero features for absent frames).
    for (int t = 0; t < c.T; ++t) {
        const auto& f = features[static_cast<size_t>(t)];
        c.valid[static_cast<size_t>(t)] = static_cast<char>(f.valid);
        if (f.phi.size() == w.feature_dim) c.phi.col(t) = f.phi;
        if (f.valid) c.all_invalid = false;
    }
    return c;
}

}  // namespace detail

// Per-frame sequence features Phi_t from per-frame features. Invalid frames
// come back unchanged (zero residual).
inline std::vector<FrameFeature> transformer_forward(const std::vector<FrameFeature>& features,
                                                     const TemporalModelWeights& w) {
    WindowCache c = detail::cache_from_features(features, w);
    if (!c.all_invalid) detail::transformer_stage(w, c);
    else c.Phi = c.phi;
    std::vector<FrameFeature> out = features;
    for (int t = 0; t < c.T; ++t)
        if (features[static_cast<size_t>(t)].valid)
            out[static_cast<size_t>(t)].phi = c.Phi.col(t);
    return out;
}

inline std::vector<FrameFeature> conv_forward(const std::vector<FrameFeature>& features,
                                              const TemporalModelWeights& w) {
    WindowCache c = detail::cache_from_features(features, w);
    detail::conv_stage(w, c);
    std::vector<FrameFeature> out = features;
    for (int t = 0; t < c.T; ++t) out[static_cast<size_t>(t)].phi = c.Phi.col(t);
    return out;
}

// Attention matrices (rows = queries) for inspection/tests.
inline std::vector<Eigen::MatrixXd> attention_weights(const std::vector<FrameFeature>& features,
                                                      const TemporalModelWeights& w) {
    WindowCache c = detail::cache_from_features(features, w);
    if (c.all_invalid)
        return std::vector<Eigen::MatrixXd>(
            static_cast<size_t>(w.heads), Eigen::MatrixXd::Zero(c.T, c.T));
    detail::transformer_stage(w, c);
    return c.attn;
}

// Theta-hat for one sequence feature: 3 additive refinement steps from the
// mean parameter vector.
inline Eigen::VectorXd regress_params(const Eigen::VectorXd& Phi,
                                      const TemporalModelWeights& w) {
    if (Phi.size() != w.feature_dim) throw DataError("regress_params: feature dim mismatch");
    Eigen::VectorXd theta = w.mean_params;
    Eigen::VectorXd in(w.feature_dim + w.param_dim);
    for (int i = 0; i < w.ief_steps; ++i) {
        in.head(w.feature_dim) = Phi;
        in.tail(w.param_dim) = theta;
        const Eigen::VectorXd h = (w.reg1.w * in + w.reg1.b).array().tanh();
        theta += w.reg2.w * h + w.reg2.b;
    }
    return theta;
}

}  // namespace multishot
