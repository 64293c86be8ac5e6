#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cmt/app/commands.hpp"
#include "cmt/data/tensor_io.hpp"

namespace {

using cmt::app::Command;

struct Flags {
  std::optional<std::string> config;
  std::vector<std::string> set;
  std::optional<std::string> out, task, mode, direction, stay, cohort, checkpoint, ehr_checkpoint, split;
  std::vector<std::string> seeds;
  std::vector<std::string> rollout;
};

std::vector<std::string> overrides(const Flags& f) {
  std::vector<std::string> o = f.set;
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    if (v) o.push_back(std::string(key) + "=" + nlohmann::json(*v).dump());
  };
  put("out", f.out);
  put("task", f.task);
  put("mode", f.mode);
  put("direction", f.direction);
  put("stay", f.stay);
  put("cohort", f.cohort);
  put("checkpoint", f.checkpoint);
  put("ehr_checkpoint", f.ehr_checkpoint);
  put("split", f.split);
  if (!f.seeds.empty()) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& x : f.seeds) {
      try {
        s.push_back(std::stoull(x));
      } catch (const std::exception&) {
        throw cmt::app::ConfigError("bad seed '" + x + "'");
      }
    }
    o.push_back("seeds=" + s.dump());
  }
  if (!f.rollout.empty()) o.push_back("rollout=" + nlohmann::json(f.rollout).dump());
  return o;
}

int fail(int code, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::cerr << "error: " << msg << "\n";
  return code;
}

int run(Command cmd, const Flags& f) {
  const auto cfg = cmt::app::load_run_config(f.config, overrides(f));
  switch (cmd) {
    case Command::kSynth: cmt::app::cmd_synth(cfg, std::cerr); break;
    case Command::kTrain: cmt::app::cmd_train(cfg, std::cerr); break;
    case Command::kEval: {
      const auto report = cmt::app::cmd_eval(cfg, std::cerr);
      std::cout << nlohmann::json(report).dump() << "\n";
      break;
    }
    case Command::kAblate: cmt::app::cmd_ablate(cfg, std::cerr); break;
    case Command::kExplain: cmt::app::cmd_explain(cfg, std::cerr); break;
    case Command::kGradcheck:
      if (!cmt::app::cmd_gradcheck(std::cout).passed()) {
        std::cerr << "error: gradient check failed\n";
        return 2;
      }
      break;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal EHR and clinical-note transformer: synthetic cohorts, training, evaluation, ablation and attention analysis"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run config");
    sub->add_option("--set", f.set, "Override a config key (dotted path), e.g. train.lr=1e-4")->take_all();
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--seed", f.seeds, "Seed, repeatable (default 0..4; train uses the first)")->take_all();
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--cohort", f.cohort, "Cohort directory");
    sub->add_option("--task", f.task, "decomp, ihm or pheno");
    sub->add_option("--mode", f.mode, "ehr_only, text_only or cross_modal");
  };

  std::vector<std::pair<CLI::App*, Command>> subs;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  common(synth);
  subs.emplace_back(synth, Command::kSynth);

  auto* train = app.add_subcommand("train", "Train one model");
  common(train);
  model_flags(train);
  subs.emplace_back(train, Command::kTrain);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  common(eval);
  eval->add_option("--cohort", f.cohort, "Cohort directory");
  eval->add_option("--checkpoint", f.checkpoint, "Model checkpoint (.cmt)");
  eval->add_option("--split", f.split, "train, val or test");
  subs.emplace_back(eval, Command::kEval);

  auto* ablate = app.add_subcommand("ablate", "Note-type ablation over several seeds");
  common(ablate);
  model_flags(ablate);
  ablate->add_option("--direction", f.direction, "increasing or decreasing");
  subs.emplace_back(ablate, Command::kAblate);

  auto* explain = app.add_subcommand("explain", "Attention maps, divergence and rollout for one stay");
  common(explain);
  explain->add_option("--cohort", f.cohort, "Cohort directory");
  explain->add_option("--checkpoint", f.checkpoint, "Cross-modal checkpoint");
  explain->add_option("--ehr-checkpoint", f.ehr_checkpoint, "EHR-only checkpoint");
  explain->add_option("--stay", f.stay, "Stay id");
  explain->add_option("--rollout", f.rollout, "Rollout input container, repeatable")->take_all();
  subs.emplace_back(explain, Command::kExplain);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient battery");
  subs.emplace_back(gradcheck, Command::kGradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, e.what());
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      return run(cmd, f);
    } catch (const cmt::app::ConfigError& e) {
      return fail(1, e.what());
    } catch (const cmt::FormatError& e) {
      return fail(1, e.what());
    } catch (const std::exception& e) {
      return fail(2, e.what());
    }
  }
  return 1;
}
