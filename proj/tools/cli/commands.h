#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.h"
#include "rmnerf/joint_optimizer.h"

namespace rmnerf::cli {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out;
};

// Config file plus --set overrides.
FlatConfig BuildConfig(const CommonOptions& opts);

// Training hyperparameters from config keys named after TrainConfig fields,
// with fixed_lambda accepting "none".
TrainConfig TrainConfigFrom(const FlatConfig& cfg, std::uint64_t seed);

// Bundled pretrained refiner parameters: $RMNERF_DATA_DIR, the source tree,
// then the install prefix.
std::string DefaultRefinerPath();

void RunSynth(const CommonOptions& opts);

struct SolveOptions {
  std::string graph;
  std::string method = "irls";
};
void RunSolvePoses(const CommonOptions& opts, const SolveOptions& solve);

struct TrainOptions {
  std::string data;
};
void RunTrain(const CommonOptions& opts, const TrainOptions& train);

struct RenderOptions {
  std::string checkpoint;
  std::string poses;
};
void RunRender(const CommonOptions& opts, const RenderOptions& render);

struct EvalOptions {
  std::string renders;
  std::string references;
};
void RunEval(const CommonOptions& opts, const EvalOptions& eval);

void RunReport(const CommonOptions& opts, const std::vector<std::string>& runs);

void RunTrainRefiner(const CommonOptions& opts);

}  // namespace rmnerf::cli
