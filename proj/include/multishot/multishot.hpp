#pragma once

// Umbrella header: multi-shot 3D body recovery at desk scale on synthetic
// data. Simulation, canonical-frame sequence fitting, evaluation metrics and
// the keypoint-based temporal regressors.

#include "multishot/body_model.hpp"
#include "multishot/camera.hpp"
#include "multishot/config.hpp"
#include "multishot/dataset.hpp"
#include "multishot/errors.hpp"
#include "multishot/metrics.hpp"
#include "multishot/nn.hpp"
#include "multishot/objectives.hpp"
#include "multishot/report.hpp"
#include "multishot/rng.hpp"
#include "multishot/rotation.hpp"
#include "multishot/scene_sim.hpp"
#include "multishot/solver.hpp"
#include "multishot/training.hpp"
