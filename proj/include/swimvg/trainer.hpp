#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swimvg/budget.hpp"
#include "swimvg/data.hpp"
#include "swimvg/model.hpp"

namespace swimvg {

struct Partition {
  std::vector<ParamId> frozen;
  std::vector<ParamId> tunable;
};

// Throws UntaggedParameter if any tensor lacks a tag.
template <typename T>
Partition partition_parameters(const Model<T>& model);

template <typename T>
ParamBudget param_budget(const Model<T>& model) {
  return enumerate_budget(model.params());
}

// Adam moments exist for tunable coordinates only.
template <typename T>
struct TrainState {
  std::int64_t step = 0;
  std::vector<T> m;
  std::vector<T> v;
  Rng rng{};
  double best_eval = -1.0;
};

template <typename T>
TrainState<T> initial_state(const Model<T>& model);

struct StepStats {
  LossBreakdown loss;   // averaged over the batch
  double grad_norm = 0; // before clipping
};

// Batch-averaged loss and its gradient w.r.t. every tunable coordinate.
template <typename T>
LossBreakdown loss_and_grad(const Model<T>& model, std::span<const SyntheticSample* const> batch, std::span<T> grads);

// Batch-averaged loss only.
template <typename T>
LossBreakdown batch_loss(const Model<T>& model, std::span<const SyntheticSample* const> batch);

// Forward, loss, backward, global-norm clipping, one AdamW update.
// Throws NonFiniteLoss (state and parameters untouched) if the loss is not finite.
template <typename T>
StepStats train_step(Model<T>& model, std::span<const SyntheticSample* const> batch, TrainState<T>& state);

struct SubsetMetrics {
  std::size_t count = 0;
  std::vector<double> precision;  // one per threshold
  double mean_iou = 0;
  LossBreakdown loss;
};

struct MetricsReport {
  std::int64_t step = 0;
  std::vector<double> thresholds;
  SubsetMetrics overall;
  SubsetMetrics ambiguous;
  SubsetMetrics unambiguous;

  double precision_at(double tau) const;
};

inline const std::vector<double> kDefaultThresholds{0.5, 0.6, 0.8};

// Read-only pass over `samples`. Throws EmptyDataset.
template <typename T>
MetricsReport evaluate(const Model<T>& model, std::span<const SyntheticSample> samples,
                       const std::vector<double>& thresholds = kDefaultThresholds, std::int64_t step = 0);

std::string threshold_key(double tau);  // "pr@0.5"
nlohmann::ordered_json to_json(const MetricsReport& report);

// ----------------------------------------------------------------- checkpoint --

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  TrainState<T> state;
};

// Atomic: writes `path`.tmp then renames over `path`.
template <typename T>
void save_checkpoint(const Model<T>& model, const TrainState<T>& state, const std::filesystem::path& path);

// Throws VersionMismatch, CorruptFile, or ConfigMismatch (when `expected` is
// given and differs from the embedded config).
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

// Embedded config only, after the same integrity checks as load_checkpoint.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

// ----------------------------------------------------------- gradient check --

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  std::map<ParamGroup, double> max_rel_error_by_group;
  std::map<ParamGroup, std::size_t> coordinates_by_group;
};

// Central differences on `coords` random tunable coordinates, spread evenly
// over every tunable group present. Error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport finite_diff_check(Model<double>& model, std::span<const SyntheticSample* const> batch, double eps,
                                  std::size_t coords, std::uint64_t seed);

// Adds N(0, std^2) noise to every tunable coordinate, so zero-initialized
// up-projections stop masking the gradients behind them.
template <typename T>
void jitter_tunable(Model<T>& model, std::uint64_t seed, double std);

// --------------------------------------------------------------- train loop --

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.jsonl, last.ckpt, best.ckpt
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<MetricsReport> evals;
  MetricsReport final_eval;
};

// Runs cfg.epochs epochs over split.train, evaluating on split.eval every
// cfg.eval_every epochs and after the last one.
template <typename T>
TrainResult train(Model<T>& model, TrainState<T>& state, const Split& split, const TrainOptions& options);

}  // namespace swimvg
