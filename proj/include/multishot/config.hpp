#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "multishot/errors.hpp"
#include "multishot/scene_sim.hpp"
#include "multishot/solver.hpp"
#include "multishot/training.hpp"

namespace multishot {

// Flat TOML subset: [section] headers, key = value lines, # comments.
// Values: double-quoted strings, booleans, numbers. Enough for the config
// files in this project; anything fancier is rejected loudly.
class TomlTable {
  public:
    static TomlTable parse(std::istream& in, const std::string& origin) {
        TomlTable t;
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            bool in_quote = false;
            for (size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '"') in_quote = !in_quote;
                else if (line[i] == '#' && !in_quote) {
                    line.erase(i);
                    break;
                }
            }
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw DataError(origin + ":" + std::to_string(line_no) +
                                    ": malformed section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw DataError(origin + ":" + std::to_string(line_no) +
                                ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty() || value.empty())
                throw DataError(origin + ":" + std::to_string(line_no) +
                                ": empty key or value");
            t.values_[section.empty() ? key : section + "." + key] = value;
        }
        return t;
    }

    static TomlTable parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config: " + path);
        return parse(in, path);
    }

    static TomlTable parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in, "<config>");
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        char* end = nullptr;
        const double v = std::strtod(it->second.c_str(), &end);
        if (end == it->second.c_str() || *end != '\0')
            throw DataError("config key " + key + ": not a number: " + it->second);
        return v;
    }

    int get_int(const std::string& key, int fallback) const {
        const double v = get_double(key, static_cast<double>(fallback));
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw DataError("config key " + key + ": not an integer");
        return i;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw DataError("config key " + key + ": expected true or false");
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v.size() < 2 || v.front() != '"' || v.back() != '"')
            throw DataError("config key " + key + ": expected a quoted string");
        return v.substr(1, v.size() - 2);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

inline Weights weights_from_toml(const TomlTable& t) {
    Weights w;
    w.w_proj = t.get_double("weights.w_proj", w.w_proj);
    w.w_prior_pose = t.get_double("weights.w_prior_pose", w.w_prior_pose);
    w.w_prior_shape = t.get_double("weights.w_prior_shape", w.w_prior_shape);
    w.w_sm_joint = t.get_double("weights.w_sm_joint", w.w_sm_joint);
    w.w_sm_param = t.get_double("weights.w_sm_param", w.w_sm_param);
    w.gm_sigma = t.get_double("weights.gm_sigma", w.gm_sigma);
    if (w.w_proj < 0 || w.w_prior_pose < 0 || w.w_prior_shape < 0 || w.w_sm_joint < 0 ||
        w.w_sm_param < 0 || w.gm_sigma <= 0)
        throw DataError("weights: all weights must be >= 0 and gm_sigma > 0");
    return w;
}

inline SolverConfig solver_config_from_toml(const TomlTable& t) {
    SolverConfig cfg;
    if (t.has("solver.mode")) cfg.mode = fit_mode_from_string(t.get_string("solver.mode", ""));
    cfg.max_iters = t.get_int("solver.max_iters", cfg.max_iters);
    cfg.grad_tol = t.get_double("solver.grad_tol", cfg.grad_tol);
    cfg.step_tol = t.get_double("solver.step_tol", cfg.step_tol);
    cfg.init_noise = t.get_double("solver.init_noise", cfg.init_noise);
    if (t.has("solver.init"))
        cfg.init = init_strategy_from_string(t.get_string("solver.init", ""));
    cfg.history = t.get_int("solver.history", cfg.history);
    cfg.beta_bound = t.get_double("solver.beta_bound", cfg.beta_bound);
    cfg.weights = weights_from_toml(t);
    cfg.validate();
    return cfg;
}

inline SimConfig sim_config_from_toml(const TomlTable& t) {
    SimConfig cfg;
    cfg.motion.frame_count = t.get_int("motion.frame_count", cfg.motion.frame_count);
    cfg.motion.keyframe_spacing =
        t.get_int("motion.keyframe_spacing", cfg.motion.keyframe_spacing);
    cfg.motion.max_joint_speed =
        t.get_double("motion.max_joint_speed", cfg.motion.max_joint_speed);
    cfg.motion.pose_amplitude =
        t.get_double("motion.pose_amplitude", cfg.motion.pose_amplitude);
    cfg.motion.beta_range = t.get_double("motion.beta_range", cfg.motion.beta_range);
    cfg.shots.mean_shot_length =
        t.get_double("shots.mean_shot_length", cfg.shots.mean_shot_length);
    cfg.shots.camera_distance_min =
        t.get_double("shots.camera_distance_min", cfg.shots.camera_distance_min);
    cfg.shots.camera_distance_max =
        t.get_double("shots.camera_distance_max", cfg.shots.camera_distance_max);
    cfg.shots.truncation_prob =
        t.get_double("shots.truncation_prob", cfg.shots.truncation_prob);
    cfg.shots.missing_prob = t.get_double("shots.missing_prob", cfg.shots.missing_prob);
    cfg.sequences = t.get_int("sim.sequences", cfg.sequences);
    cfg.noise_sigma_px = t.get_double("sim.noise_sigma_px", cfg.noise_sigma_px);
    if (cfg.motion.frame_count < 2 || cfg.motion.keyframe_spacing < 2 ||
        cfg.sequences < 1)
        throw DataError("sim config: frame_count >= 2, keyframe_spacing >= 2, sequences >= 1");
    if (cfg.shots.truncation_prob < 0 || cfg.shots.truncation_prob > 1 ||
        cfg.shots.missing_prob < 0 || cfg.shots.missing_prob > 1)
        throw DataError("sim config: probabilities must be in [0, 1]");
    return cfg;
}

inline TrainConfig train_config_from_toml(const TomlTable& t) {
    TrainConfig cfg;
    cfg.window = t.get_int("train.window", cfg.window);
    cfg.batch_size = t.get_int("train.batch_size", cfg.batch_size);
    cfg.learning_rate = t.get_double("train.learning_rate", cfg.learning_rate);
    cfg.epochs = t.get_int("train.epochs", cfg.epochs);
    cfg.lambda_2d = t.get_double("train.lambda_2d", cfg.lambda_2d);
    cfg.lambda_smpl = t.get_double("train.lambda_smpl", cfg.lambda_smpl);
    cfg.lambda_sm = t.get_double("train.lambda_sm", cfg.lambda_sm);
    cfg.freeze_encoder = t.get_bool("train.freeze_encoder", cfg.freeze_encoder);
    cfg.validate();
    return cfg;
}

}  // namespace multishot
