// Experiment runner: trains or evaluates a policy from a JSON config.

#include <iostream>

#include <CLI11.hpp>

#include "sgelab/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"strategy-exploration lab runner"};

  std::string config_path;
  std::string method_override;
  std::string out_override;
  std::string env_address;
  std::string eval_checkpoint;
  int64_t seed_override = -1;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed_override, "override the config's seed list");
  app.add_option("--method", method_override,
                 "grpo | sge | entropy_adv | rnd | rlad");
  app.add_option("--out", out_override, "output directory");
  app.add_option("--env-address", env_address,
                 "HOST:PORT of an environment server (remote rollouts)");
  app.add_option("--eval-only", eval_checkpoint,
                 "evaluate this checkpoint instead of training");
  CLI11_PARSE(app, argc, argv);

  try {
    sgelab::RunConfig cfg =
        config_path.empty() ? sgelab::RunConfig{} : sgelab::load_config(config_path);
    if (seed_override >= 0)
      cfg.seeds = {static_cast<uint64_t>(seed_override)};
    if (!method_override.empty())
      cfg.trainer.method = sgelab::parse_method(method_override);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!env_address.empty()) cfg.env_address = env_address;
    cfg.validate();

    if (!eval_checkpoint.empty()) {
      auto results = sgelab::run_eval(cfg, eval_checkpoint);
      for (const auto& r : results) {
        std::cout << sgelab::split_name(r.split);
        for (size_t i = 0; i < r.ks.size(); ++i)
          std::cout << " pass@" << r.ks[i] << "="
                    << sgelab::format_real(r.pass_curve[i]);
        std::cout << "\n";
      }
      return 0;
    }

    auto results = sgelab::run_train(cfg, &std::cerr);
    for (const auto& r : results) {
      std::cout << "seed " << r.seed
                << " train pass@1=" << sgelab::format_real(r.final_train.mean_pass(1))
                << " test pass@1=" << sgelab::format_real(r.final_test.mean_pass(1))
                << " distinct_outcomes=" << sgelab::format_real(r.distinct_outcomes_cum)
                << " checkpoint=" << r.checkpoint_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
