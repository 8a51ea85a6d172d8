#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfd/trainer.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    seeds.push_back(std::stoull(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

std::vector<std::uint32_t> parse_id_list(const std::string& text) {
  std::vector<std::uint32_t> ids;
  for (std::uint64_t v : parse_seed_list(text))
    ids.push_back(static_cast<std::uint32_t>(v));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"channel-wise feature denoising PAD pipeline"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_path, out_dir, seeds_text, ids_text;
  std::int64_t seed_arg = -1;
  bool no_mask = false;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed_arg, "override the config seed");

  auto* eval = app.add_subcommand("eval", "score a dataset with a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset container or PGM directory")->required();
  eval->add_flag("--no-mask", no_mask, "disable the trained channel mask");
  eval->add_option("--out", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train every variant over several seeds");
  ablate->add_option("--config", config_path, "run config file")->required();
  ablate->add_option("--seeds", seeds_text, "comma-separated seed list")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();

  auto* explain = app.add_subcommand("explain", "emit Grad-CAM maps and removal curves");
  explain->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  explain->add_option("--data", data_path, "dataset container or PGM directory")->required();
  explain->add_option("--ids", ids_text, "comma-separated sample ids")->required();
  explain->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      std::optional<std::uint64_t> seed;
      if (train->count("--seed")) seed = static_cast<std::uint64_t>(seed_arg);
      cfd::cmd_train(config_path, out_dir, seed);
    } else if (eval->parsed()) {
      cfd::cmd_eval(ckpt_path, data_path, no_mask, out_dir);
    } else if (ablate->parsed()) {
      cfd::cmd_ablate(config_path, parse_seed_list(seeds_text), out_dir);
    } else if (explain->parsed()) {
      cfd::cmd_explain(ckpt_path, data_path, parse_id_list(ids_text), out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
