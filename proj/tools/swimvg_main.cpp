#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "swimvg/cli.hpp"

namespace {

using namespace swimvg;

std::vector<double> parse_thresholds(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) {
      throw Error(ErrorKind::InvalidValue, "iou", "not a number: " + item);
    }
    out.push_back(v);
  }
  return out;
}

void add_dataset_options(CLI::App* cmd, cli::DatasetArgs& data) {
  cmd->add_option("--data", data.dir, "Dataset directory written by gen-data");
  cmd->add_option("--count", data.count, "Generate this many eval samples instead of reading --data");
  cmd->add_option("--seed", data.seed, "Seed for generated samples (default: the checkpoint's data_seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SwimVG visual grounding at desk scale"};
  app.require_subcommand(1);

  cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and metrics");
  train_cmd->add_option("-c,--config", train.config, "Config JSON file or profile name (toy, paper)")->required();
  train_cmd->add_option("-o,--out", train.out_dir, "Run directory")->required();
  train_cmd->add_option("--set", train.overrides, "Override a config key: key=value (repeatable)");
  train_cmd->add_flag("-q,--quiet", train.quiet, "Do not print per-evaluation metrics");

  cli::EvalArgs eval;
  std::string iou_list = "0.5,0.6,0.8";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  add_dataset_options(eval_cmd, eval.data);
  eval_cmd->add_option("--iou", iou_list, "Comma-separated IoU thresholds");
  eval_cmd->add_option("--report", eval.report, "Write the JSON report here");

  cli::InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect-params", "Print the parameter budget");
  inspect_cmd->add_option("source", inspect.source, "Config file, profile name (toy, paper) or checkpoint")
      ->required();
  inspect_cmd->add_option("--set", inspect.overrides, "Override a config key: key=value (repeatable)");

  cli::ExportAttentionArgs attention;
  std::string query = "reg";
  auto* attention_cmd = app.add_subcommand("export-attention", "Write the final-layer attention grid");
  attention_cmd->add_option("checkpoint", attention.checkpoint, "Checkpoint file")->required();
  add_dataset_options(attention_cmd, attention.data);
  attention_cmd->add_option("--index", attention.index, "Sample index");
  attention_cmd->add_option("-o,--out", attention.out_prefix, "Output prefix for .csv and .pgm")->required();
  attention_cmd->add_option("--query", query, "Query rows: reg or swip")
      ->check(CLI::IsMember({"reg", "swip"}));

  cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Export a synthetic dataset");
  gen_cmd->add_option("-c,--config", gen.config, "Config JSON file or profile name");
  gen_cmd->add_option("--set", gen.overrides, "Override a config key: key=value (repeatable)");
  gen_cmd->add_option("-o,--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("-n,--count", gen.count, "Number of samples")->required();
  gen_cmd->add_flag("--eval", gen.eval_split, "Use the eval seed range");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed (default: the config's data_seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitInputError;
  }

  if (*train_cmd) {
    return cli::cmd_train(train, std::cout, std::cerr);
  }
  if (*eval_cmd) {
    try {
      eval.thresholds = parse_thresholds(iou_list);
    } catch (const std::exception& e) {
      std::cerr << cli::error_line(e) << '\n';
      return cli::kExitInputError;
    }
    return cli::cmd_eval(eval, std::cout, std::cerr);
  }
  if (*inspect_cmd) {
    return cli::cmd_inspect_params(inspect, std::cout, std::cerr);
  }
  if (*attention_cmd) {
    attention.query = query == "swip" ? AttentionQuery::Swip : AttentionQuery::Reg;
    return cli::cmd_export_attention(attention, std::cout, std::cerr);
  }
  return cli::cmd_gen_data(gen, std::cout, std::cerr);
}
