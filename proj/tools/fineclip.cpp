#include <CLI11.hpp>

#include <iostream>

#include "fineclip/pipeline.hpp"

using namespace fineclip;

namespace {

constexpr int kOk = 0, kConfigError = 2, kNumericError = 3;

// Applies `--section.key value` and `--section.key=value` pairs left over after CLI parsing.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    std::string value;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg = arg.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("flag --" + arg + " needs a value");
      value = extras[++i];
    }
    set_config_value(cfg, arg, value);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fine-grained zero-shot triplet recognition"};
  app.require_subcommand(1);

  std::string config_path, side = "both", axis = "components", checkpoint;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->allow_extras();
    return sub;
  };
  auto* gen = add_common(app.add_subcommand("gen-data", "render a synthetic dataset"));
  auto* split = add_common(app.add_subcommand("split", "write base/novel partitions"));
  auto* train_cmd = add_common(app.add_subcommand("train", "train and keep the best validation checkpoint"));
  auto* eval_cmd = add_common(app.add_subcommand("eval", "score the test split"));
  eval_cmd->add_option("--side", side, "base, novel or both");
  eval_cmd->add_option("--checkpoint", checkpoint, "defaults to <run.out>/model.ckpt");
  auto* ablate_cmd = add_common(app.add_subcommand("ablate", "train and evaluate a grid of variants"));
  ablate_cmd->add_option("--axis", axis, "components, layer_j or clusters_k");
  auto* report_cmd = add_common(app.add_subcommand("report", "metrics.json, per_class.csv and cluster maps"));
  report_cmd->add_option("--checkpoint", checkpoint, "defaults to <run.out>/model.ckpt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    apply_overrides(cfg, sub->remaining());
    cfg.validate();
    const fs::path ckpt = checkpoint.empty() ? checkpoint_path(cfg) : fs::path(checkpoint);

    if (sub == gen) {
      gen_data(cfg, std::cout);
    } else if (sub == split) {
      split_dataset(cfg, std::cout);
    } else if (sub == train_cmd) {
      const auto r = train(cfg, std::cout);
      std::cout << "best epoch " << r.best_epoch << ", checkpoint " << checkpoint_path(cfg).string() << '\n';
    } else if (sub == eval_cmd) {
      evaluate(cfg, parse_side(side), ckpt, std::cout);
    } else if (sub == ablate_cmd) {
      ablate(cfg, axis, std::cout);
    } else if (sub == report_cmd) {
      report(cfg, ckpt, std::cout);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
