#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optout/common.hpp"
#include "optout/experiment.hpp"

namespace {

using namespace optout;

struct Args {
  std::string config;
  std::string run_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> target;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
};

void add_common(CLI::App* cmd, Args& args, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", args.config, "JSON experiment config");
  if (config_required) opt->required();
  cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set train.learning_rate=0.001")
      ->allow_extra_args(false);
  cmd->add_option("--run-dir", args.run_dir, "Run directory (overrides run_dir)");
}

void add_cell(CLI::App* cmd, Args& args) {
  cmd->add_option("--target", args.target, "Target (world seed); default prepare.world.seed");
  cmd->add_option("--seed", args.seed, "Training seed; default train.seed");
  cmd->add_option("--method", args.method, "Method spec, e.g. NPO+RT or OPT_OUT@manhattan");
}

ExperimentConfig load(const Args& args) {
  std::vector<std::string> overrides = args.overrides;
  if (!args.run_dir.empty()) overrides.push_back("run_dir=\"" + args.run_dir + "\"");
  return load_experiment_config(args.config, overrides);
}

int run(const std::string& verb, const Args& args) {
  if (verb == "report" && args.config.empty()) {
    if (args.run_dir.empty()) {
      throw ConfigError("report needs --config or --run-dir");
    }
    std::cout << write_report(args.run_dir).markdown;
    return 0;
  }
  const ExperimentConfig cfg = load(args);
  const Experiment exp(cfg);
  const std::uint64_t target = args.target.value_or(cfg.prepare.world.seed);
  const std::uint64_t seed = args.seed.value_or(cfg.train.seed);
  const std::string method = args.method.value_or(cfg.method);
  parse_method_spec(method, cfg.train.reg_metric);

  if (verb == "prepare") {
    const PreparedCorpus corpus = exp.prepare(target);
    exp.write_manifest({});
    std::cout << "corpus " << exp.corpus_dir(target).string() << " hash " << corpus_hash(corpus)
              << " forget " << corpus.bundle.forget_set.size() << " retain "
              << corpus.bundle.all_retain_records().size() << " world "
              << corpus.bundle.world_set.size() << " attacks " << corpus.attacks.size() << "\n";
  } else if (verb == "pretrain") {
    exp.pretrained(target, seed);
    std::cout << exp.pretrained_path(target, seed, false).string() << "\n";
    if (cfg.eval.ks_oracle) {
      exp.pretrained(target, seed, true);
      std::cout << exp.pretrained_path(target, seed, true).string() << "\n";
    }
  } else if (verb == "unlearn" || verb == "evaluate" || verb == "attack") {
    const nlohmann::json cell = {{"target", target}, {"method", method}, {"seed", seed}};
    exp.write_manifest({cell});
    if (verb == "unlearn") {
      const RunRecord rec = exp.unlearn(target, method, seed);
      std::cout << (exp.cell_dir(target, method, seed) / "run_record.json").string()
                << " best_epoch " << rec.best_epoch << "\n";
      if (!rec.error.empty()) {
        std::cerr << "error: " << rec.error << "\n";
        return 1;
      }
    } else if (verb == "evaluate") {
      std::cout << nlohmann::json(exp.evaluate(target, method, seed)).dump(2) << "\n";
    } else {
      const CellResult res = exp.attack(target, method, seed);
      std::cout << "mia " << res.mia.accuracy_mean << " +- " << res.mia.accuracy_std << "\n";
      for (const auto& [type, r] : res.adversarial) {
        std::cout << type << " fq " << r.fq << "\n";
      }
    }
  } else if (verb == "report") {
    std::cout << write_report(exp.root()).markdown;
  } else if (verb == "run-matrix") {
    const nlohmann::json report = exp.run_matrix();
    std::cout << read_file(exp.root() / "report.md");
    if (report.at("partial").get<bool>()) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-level unlearning experiments on a toy language model"};
  app.require_subcommand(1);
  Args args;
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"prepare", "Generate the synthetic corpus for a target"},
      {"pretrain", "Train (or reuse) the pretrained and oracle checkpoints"},
      {"unlearn", "Run one unlearning method from the pretrained checkpoint"},
      {"evaluate", "Score a cell model on the test split"},
      {"attack", "Membership inference and adversarial prompts on a cell model"},
      {"report", "Render report.md / report.json from a run directory"},
      {"run-matrix", "Run every target x seed x method cell and report"},
  };
  for (const auto& [name, help] : verbs) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, args, name != "report");
    if (name == "pretrain" || name == "unlearn" || name == "evaluate" || name == "attack" ||
        name == "prepare") {
      add_cell(cmd, args);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    const auto subs = app.get_subcommands();
    std::cerr << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }
  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    return run(verb, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
