// SPDX-License-Identifier: Apache-2.0
//
// ubtlab - desk-scale laboratory for backdoor unlearning in dual-encoder
// contrastive models. Subcommands: generate, train, defend, eval, bound,
// sweep.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ubt/commands.hpp"
#include "ubt/errors.hpp"

namespace {

ubt::ExperimentConfig load_config(const std::string& path) {
  return ubt::ExperimentConfig::load(path);
}

int dispatch(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ubt::InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ubt::exit_code::kConfigError;
  } catch (const ubt::InvalidPacInputsError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ubt::exit_code::kConfigError;
  } catch (const ubt::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return ubt::exit_code::kMissingArtifact;
  } catch (const ubt::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return ubt::exit_code::kMissingArtifact;
  } catch (const ubt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ubt::exit_code::kNumericFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"backdoor unlearning laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string stage;
  std::string checkpoint = "defended.ckpt";
  std::string axis;
  std::vector<std::uint64_t> sweep_values;

  auto* generate = app.add_subcommand(
      "generate", "write clean and poisoned dataset snapshots");
  generate->add_option("-c,--config", config_path, "config file")->required();

  auto* train = app.add_subcommand("train", "run a training stage");
  train->add_option("-c,--config", config_path, "config file")->required();
  train->add_option("-s,--stage", stage, "pretrain | poison | retrain")
      ->required();

  auto* defend = app.add_subcommand("defend", "run the configured defense");
  defend->add_option("-c,--config", config_path, "config file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("-c,--config", config_path, "config file")->required();
  eval->add_option("-k,--checkpoint", checkpoint,
                   "checkpoint filename inside the run directory");

  ubt::PacInputs pac;
  std::optional<std::size_t> pac_n;
  auto* bound =
      app.add_subcommand("bound", "evaluate the minimum-sample bound");
  bound->add_option("--kl", pac.kl_q, "posterior/prior KL surrogate");
  bound->add_option("--c0", pac.c0, "absorbed constant");
  bound->add_option("--r", pac.r, "risk gap");
  bound->add_option("--eps", pac.eps, "rate exponent in (0,1)");
  bound->add_option("--delta", pac.delta, "confidence level in (0,1)");
  bound->add_option("--n", pac_n, "sample count for the finite-n bound");

  auto* sweep = app.add_subcommand("sweep", "pipeline sweep over one axis");
  sweep->add_option("-c,--config", config_path, "config file")->required();
  sweep->add_option("-a,--axis", axis, "poison_count | dataset_size")
      ->required();
  sweep->add_option("-v,--values", sweep_values, "axis values")->required();

  CLI11_PARSE(app, argc, argv);

  if (generate->parsed()) {
    return dispatch([&] { return ubt::cmd_generate(load_config(config_path)); });
  }
  if (train->parsed()) {
    return dispatch(
        [&] { return ubt::cmd_train(load_config(config_path), stage); });
  }
  if (defend->parsed()) {
    return dispatch([&] { return ubt::cmd_defend(load_config(config_path)); });
  }
  if (eval->parsed()) {
    return dispatch(
        [&] { return ubt::cmd_eval(load_config(config_path), checkpoint); });
  }
  if (bound->parsed()) {
    return dispatch([&] { return ubt::cmd_bound(pac, pac_n); });
  }
  if (sweep->parsed()) {
    return dispatch([&] {
      return ubt::cmd_sweep(load_config(config_path), axis, sweep_values);
    });
  }
  return 1;
}
