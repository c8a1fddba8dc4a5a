#pragma once

// Convenience include for the whole library.

#include "sdfreg/benchmark.hpp"
#include "sdfreg/corruptions.hpp"
#include "sdfreg/metrics.hpp"
#include "sdfreg/mlp.hpp"
#include "sdfreg/pointcloud.hpp"
#include "sdfreg/registration.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/scene_json.hpp"
#include "sdfreg/sdf.hpp"
#include "sdfreg/sdf_train.hpp"
#include "sdfreg/se3.hpp"
