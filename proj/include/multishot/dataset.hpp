#pragma once

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "multishot/body_model.hpp"
#include "multishot/camera.hpp"
#include "multishot/errors.hpp"

namespace multishot {

inline constexpr const char* kDatasetFormatVersion = "1";

struct FrameGroundTruth {
    FrameParams params;
    Eigen::Matrix3Xd joints_3d;  // camera frame, 3 x J
};

// One observed frame of one identity: detections plus per-shot camera.
// valid == 0 means the identity is absent; all confidences are 0 then.
struct FrameObservation {
    int frame_index = 0;
    int shot_id = 0;
    int valid = 1;
    Eigen::Matrix3Xd keypoints;  // rows (u, v, conf), one column per joint
    Camera camera;
    std::optional<FrameGroundTruth> gt;

    int joint_count() const { return static_cast<int>(keypoints.cols()); }
};

struct SequenceRecord {
    int identity = 0;
    std::optional<Eigen::VectorXd> beta_gt;
    std::vector<FrameObservation> frames;
};

struct SequenceDataset {
    std::vector<SequenceRecord> sequences;
    nlohmann::json generator_config;  // snapshot; may be null
    std::string format_version = kDatasetFormatVersion;
};

namespace detail {

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline nlohmann::json vec3_to_json(const Eigen::Vector3d& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a.at(i).get<double>();
    return v;
}

inline nlohmann::json frame_to_json(const FrameObservation& f) {
    nlohmann::json j;
    j["t"] = f.frame_index;
    j["shot_id"] = f.shot_id;
    j["valid"] = f.valid;
    j["cam"] = {{"focal", f.camera.focal}, {"cx", f.camera.principal.x()},
                {"cy", f.camera.principal.y()}, {"w", f.camera.width},
                {"h", f.camera.height}};
    nlohmann::json kp = nlohmann::json::array();
    for (Eigen::Index c = 0; c < f.keypoints.cols(); ++c)
        kp.push_back(nlohmann::json::array(
            {f.keypoints(0, c), f.keypoints(1, c), f.keypoints(2, c)}));
    j["kp2d"] = kp;
    if (f.gt) {
        nlohmann::json g;
        g["r_gl"] = vec3_to_json(f.gt->params.r_gl);
        g["t_gl"] = vec3_to_json(f.gt->params.t_gl);
        nlohmann::json theta = nlohmann::json::array();
        for (const auto& a : f.gt->params.theta_b)
            for (int i = 0; i < 3; ++i) theta.push_back(a[i]);
        g["theta_b"] = theta;
        nlohmann::json x3 = nlohmann::json::array();
        for (Eigen::Index c = 0; c < f.gt->joints_3d.cols(); ++c)
            for (int i = 0; i < 3; ++i) x3.push_back(f.gt->joints_3d(i, c));
        g["x3d"] = x3;
        j["gt"] = g;
    } else {
        j["gt"] = nullptr;
    }
    return j;
}

inline FrameObservation frame_from_json(const nlohmann::json& j) {
    FrameObservation f;
    f.frame_index = j.at("t").get<int>();
    f.shot_id = j.at("shot_id").get<int>();
    f.valid = j.at("valid").get<int>();
    const auto& cam = j.at("cam");
    f.camera.focal = cam.at("focal").get<double>();
    f.camera.principal = {cam.at("cx").get<double>(), cam.at("cy").get<double>()};
    f.camera.width = cam.at("w").get<int>();
    f.camera.height = cam.at("h").get<int>();
    f.camera.shot_id = f.shot_id;
    const auto& kp = j.at("kp2d");
    f.keypoints.resize(3, static_cast<Eigen::Index>(kp.size()));
    for (size_t c = 0; c < kp.size(); ++c)
        for (int i = 0; i < 3; ++i)
            f.keypoints(i, static_cast<Eigen::Index>(c)) = kp.at(c).at(i).get<double>();
    if (j.contains("gt") && !j.at("gt").is_null()) {
        const auto& g = j.at("gt");
        FrameGroundTruth gt;
        for (int i = 0; i < 3; ++i) {
            gt.params.r_gl[i] = g.at("r_gl").at(i).get<double>();
            gt.params.t_gl[i] = g.at("t_gl").at(i).get<double>();
        }
        const auto& theta = g.at("theta_b");
        if (theta.size() % 3 != 0) throw DataError("gt.theta_b length not a multiple of 3");
        gt.params.theta_b.resize(theta.size() / 3);
        for (size_t k = 0; k < gt.params.theta_b.size(); ++k)
            for (int i = 0; i < 3; ++i)
                gt.params.theta_b[k][i] = theta.at(3 * k + i).get<double>();
        const auto& x3 = g.at("x3d");
        if (x3.size() % 3 != 0) throw DataError("gt.x3d length not a multiple of 3");
        gt.joints_3d.resize(3, static_cast<Eigen::Index>(x3.size() / 3));
        for (Eigen::Index c = 0; c < gt.joints_3d.cols(); ++c)
            for (int i = 0; i < 3; ++i)
                gt.joints_3d(i, c) = x3.at(3 * c + i).get<double>();
        f.gt = std::move(gt);
    }
    return f;
}

inline void validate_sequence(const SequenceRecord& s, int line) {
    for (size_t i = 0; i < s.frames.size(); ++i) {
        const auto& f = s.frames[i];
        if (i > 0) {
            if (f.frame_index <= s.frames[i - 1].frame_index)
                throw DataError("line " + std::to_string(line) +
                                ": frame indices must be strictly increasing");
            if (f.shot_id < s.frames[i - 1].shot_id)
                throw DataError("line " + std::to_string(line) +
                                ": shot_id must be non-decreasing");
        }
        if (f.valid == 0 && f.keypoints.row(2).cwiseAbs().maxCoeff() != 0.0)
            throw DataError("line " + std::to_string(line) +
                            ": invalid frame with nonzero confidences");
        if (f.keypoints.cols() > 0 &&
            (f.keypoints.row(2).minCoeff() < 0.0 || f.keypoints.row(2).maxCoeff() > 1.0))
            throw DataError("line " + std::to_string(line) +
                            ": confidences must be in [0, 1]");
    }
}

}  // namespace detail

// JSON Lines, one sequence per line. A leading header line (object without
// "identity") carries the generator config snapshot when one is present.
inline void write_dataset(const SequenceDataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    if (!d.generator_config.is_null()) {
        nlohmann::json header;
        header["format_version"] = d.format_version;
        header["generator_config"] = d.generator_config;
        out << header.dump() << "\n";
    }
    for (const auto& s : d.sequences) {
        nlohmann::json j;
        j["identity"] = s.identity;
        j["beta_gt"] = s.beta_gt ? detail::vec_to_json(*s.beta_gt) : nlohmann::json();
        nlohmann::json frames = nlohmann::json::array();
        for (const auto& f : s.frames) frames.push_back(detail::frame_to_json(f));
        j["frames"] = frames;
        j["format_version"] = d.format_version;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline SequenceDataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    SequenceDataset d;
    d.generator_config = nullptr;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            const std::string version = j.at("format_version").get<std::string>();
            if (version != kDatasetFormatVersion)
                throw DataError("line " + std::to_string(line_no) +
                                ": format_version \"" + version +
                                "\" not supported by reader (expected \"" +
                                kDatasetFormatVersion + "\")");
            if (!j.contains("identity")) {
                // Header line.
                if (line_no != 1)
                    throw DataError("line " + std::to_string(line_no) +
                                    ": header line only allowed first");
                d.generator_config = j.value("generator_config", nlohmann::json());
                continue;
            }
            SequenceRecord s;
            s.identity = j.at("identity").get<int>();
            if (j.contains("beta_gt") && !j.at("beta_gt").is_null())
                s.beta_gt = detail::vec_from_json(j.at("beta_gt"));
            for (const auto& fj : j.at("frames"))
                s.frames.push_back(detail::frame_from_json(fj));
            detail::validate_sequence(s, line_no);
            d.sequences.push_back(std::move(s));
        } catch (const nlohmann::json::out_of_range& e) {
            // Missing required field; nlohmann names the key in what().
            throw DataError("line " + std::to_string(line_no) + ": missing field (" +
                            e.what() + ")");
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return d;
}

}  // namespace multishot
