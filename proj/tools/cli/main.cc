#include <cstdio>
#include <exception>
#include <iostream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "commands.h"

namespace {

int Fail(int code, const std::string& kind, const std::string& command, const std::string& msg) {
  const nlohmann::json err = {
      {"error", kind}, {"command", command}, {"message", msg}, {"exit_code", code}};
  std::cerr << err.dump() << std::endl;
  return code;
}

void AddCommon(CLI::App* sub, rmnerf::cli::CommonOptions* opts) {
  sub->add_option("--config", opts->config_path, "key = value config file");
  sub->add_option("--set", opts->overrides, "config override key=value (repeatable)");
  sub->add_option("--seed", opts->seed, "RNG seed");
  sub->add_option("--out", opts->out, "output path")->required();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rmnerf::cli;
  CLI::App app{"rmnerf: rotation-averaged multi-scale radiance fields"};
  app.require_subcommand(1);

  CommonOptions opts;
  SolveOptions solve;
  TrainOptions train;
  RenderOptions render;
  EvalOptions eval;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-scale benchmark");
  AddCommon(synth, &opts);

  auto* solve_cmd = app.add_subcommand("solve-poses", "rotation averaging on a view graph");
  AddCommon(solve_cmd, &opts);
  solve_cmd->add_option("--graph", solve.graph, "view graph JSON")->required();
  solve_cmd->add_option("--method", solve.method, "tree, irls or refiner")
      ->check(CLI::IsMember({"tree", "irls", "refiner"}));

  auto* train_cmd = app.add_subcommand("train", "joint pose and radiance field training");
  AddCommon(train_cmd, &opts);
  train_cmd->add_option("--data", train.data, "benchmark directory from synth")->required();

  auto* render_cmd = app.add_subcommand("render", "render a trained field at given poses");
  AddCommon(render_cmd, &opts);
  render_cmd->add_option("--checkpoint", render.checkpoint, "train output directory")
      ->required();
  render_cmd->add_option("--poses", render.poses, "pose JSON array")->required();

  auto* eval_cmd = app.add_subcommand("eval", "PSNR and SSIM between two image directories");
  AddCommon(eval_cmd, &opts);
  eval_cmd->add_option("--renders", eval.renders)->required();
  eval_cmd->add_option("--references", eval.references)->required();

  auto* report_cmd = app.add_subcommand("report", "tabulate training runs");
  AddCommon(report_cmd, &opts);
  report_cmd->add_option("runs", runs, "train output directories")->required();

  auto* refiner_cmd = app.add_subcommand("train-refiner", "pretrain the rotation refiner");
  AddCommon(refiner_cmd, &opts);

  std::string command = "rmnerf";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return Fail(1, "usage", command, e.what());
  }

  try {
    if (synth->parsed()) {
      command = "synth";
      RunSynth(opts);
    } else if (solve_cmd->parsed()) {
      command = "solve-poses";
      RunSolvePoses(opts, solve);
    } else if (train_cmd->parsed()) {
      command = "train";
      RunTrain(opts, train);
    } else if (render_cmd->parsed()) {
      command = "render";
      RunRender(opts, render);
    } else if (eval_cmd->parsed()) {
      command = "eval";
      RunEval(opts, eval);
    } else if (report_cmd->parsed()) {
      command = "report";
      RunReport(opts, runs);
    } else if (refiner_cmd->parsed()) {
      command = "train-refiner";
      RunTrainRefiner(opts);
    }
  } catch (const UsageError& e) {
    return Fail(1, "usage", command, e.what());
  } catch (const std::invalid_argument& e) {
    return Fail(1, "invalid_argument", command, e.what());
  } catch (const std::domain_error& e) {
    return Fail(2, "domain_error", command, e.what());
  } catch (const std::logic_error& e) {
    return Fail(2, "logic_error", command, e.what());
  } catch (const std::exception& e) {
    return Fail(2, "runtime_error", command, e.what());
  }
  return 0;
}
