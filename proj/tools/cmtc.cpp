// cmtc - event-based video person re-identification workbench.
//
// Subcommands:
//   synth    generate a synthetic event-camera ReID dataset
//   train    pretrain EventNet and train the ReID network end to end
//   eval     score a checkpoint on the query/gallery protocol
//   ablate   run the five-stage ablation matrix over several seeds
//
// Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cmtc/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (overrides the preset)");
  cmd->add_option("--preset", args.preset, "Config preset: smoke | desk | paper")
      ->check(CLI::IsMember({"smoke", "desk", "paper"}));
  cmd->add_option("--seed", args.seed, "Run seed (overrides config)");
  cmd->add_option("--out", args.out, "Output directory")->required();
  cmd->add_flag("--force", args.force, "Overwrite a non-empty output directory");
}

cmtc::RunConfig build_config(const CommonArgs& args) {
  cmtc::RunConfig cfg = args.config_path.empty() ? cmtc::RunConfig::preset(args.preset)
                                                 : cmtc::RunConfig::load(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modality and temporal collaboration network for event-based video person "
               "re-identification"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event dataset");
  add_common(synth, synth_args);

  CommonArgs train_args;
  std::string train_data, train_resume, train_ablation;
  std::optional<int> train_epochs;
  auto* train = app.add_subcommand("train", "Train the ReID network");
  add_common(train, train_args);
  train->add_option("--data", train_data, "Dataset directory (from synth)")->required();
  train->add_option("--ablation", train_ablation,
                    "Ablation: baseline | eventnet | mc | tc | full");
  train->add_option("--epochs", train_epochs, "Override the epoch count");
  train->add_option("--resume", train_resume, "Resume from a training checkpoint");

  CommonArgs eval_args;
  std::string eval_data, eval_checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

  CommonArgs ablate_args;
  std::string ablate_data;
  int ablate_seeds = 3;
  auto* ablate = app.add_subcommand("ablate", "Run the ablation matrix");
  add_common(ablate, ablate_args);
  ablate->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate->add_option("--seeds", ablate_seeds, "Number of seeds per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cmtc::run_synth(build_config(synth_args), synth_args.out, synth_args.force);
    } else if (train->parsed()) {
      cmtc::RunConfig cfg = build_config(train_args);
      if (!train_ablation.empty()) {
        cfg.ablation = cmtc::AblationConfig::from_name(train_ablation);
      }
      if (train_epochs) cfg.train.epochs = *train_epochs;
      cmtc::run_train(cfg, train_data, train_args.out, train_args.force, train_resume);
    } else if (eval->parsed()) {
      cmtc::RunConfig cfg = build_config(eval_args);
      if (eval_args.config_path.empty()) {
        // fall back to the config snapshot in the checkpoint's run directory
        const auto run_dir = std::filesystem::path(eval_checkpoint).parent_path().parent_path();
        const auto snapshot = run_dir / "config.json";
        if (std::filesystem::exists(snapshot)) {
          cfg = cmtc::RunConfig::load(snapshot.string());
          if (eval_args.seed) cfg.seed = *eval_args.seed;
        }
      }
      cmtc::run_eval(cfg, eval_checkpoint, eval_data, eval_args.out, eval_args.force);
    } else if (ablate->parsed()) {
      cmtc::run_ablate(build_config(ablate_args), ablate_data, ablate_args.out, ablate_args.force,
                       ablate_seeds);
    }
  } catch (const cmtc::ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cmtc::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
