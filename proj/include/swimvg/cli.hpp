#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "swimvg/budget.hpp"
#include "swimvg/model.hpp"

namespace swimvg::cli {

// Process exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;      // self-check mismatch, unexpected error
inline constexpr int kExitInputError = 2;   // config, checkpoint, dataset or argument errors
inline constexpr int kExitNonFinite = 3;    // NonFiniteLoss during training

// One JSON line: {"error": <kind>, "subject": ..., "message": ...}.
std::string error_line(const std::exception& e);

// A config source is a JSON file path or one of the built-in profile names
// "toy" and "paper".
Json load_config_source(const std::string& source);

struct TrainArgs {
  std::string config;
  std::filesystem::path out_dir;
  std::vector<std::string> overrides;  // "dotted.key=value", applied in order
  bool quiet = false;
};

// out_dir gets manifest.json (before training), metrics.jsonl, last.ckpt and
// best.ckpt. On a config error nothing but error.log is written.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct DatasetArgs {
  std::optional<std::filesystem::path> dir;  // exported by gen-data
  std::optional<int> count;                  // else: generate this many eval samples
  std::optional<std::uint64_t> seed;         // defaults to the config's data_seed
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  DatasetArgs data;
  std::vector<double> thresholds = {0.5, 0.6, 0.8};
  std::optional<std::filesystem::path> report;  // JSON report file
};

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct InspectArgs {
  std::string source;  // config file, profile name, or checkpoint
  std::vector<std::string> overrides;
};

// The per-group table followed by the enumeration / closed-form cross-check.
std::string budget_table(const ParamBudget& enumerated, const ParamBudget& closed_form);

int cmd_inspect_params(const InspectArgs& args, std::ostream& out, std::ostream& err);

struct ExportAttentionArgs {
  std::filesystem::path checkpoint;
  DatasetArgs data;
  int index = 0;
  std::filesystem::path out_prefix;  // writes <prefix>.csv and <prefix>.pgm
  AttentionQuery query = AttentionQuery::Reg;
};

std::string attention_csv(const Mat<double>& grid);
// Binary P5, min-max scaled to 0..255; a constant grid maps to 0.
std::string attention_pgm(const Mat<double>& grid);

int cmd_export_attention(const ExportAttentionArgs& args, std::ostream& out, std::ostream& err);

struct GenDataArgs {
  std::string config = "toy";
  std::vector<std::string> overrides;
  std::filesystem::path out_dir;
  int count = 0;
  bool eval_split = false;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);

}  // namespace swimvg::cli
