#include "swimvg/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "swimvg/data.hpp"
#include "swimvg/trainer.hpp"
#include "swimvg/version.hpp"

namespace swimvg::cli {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw Error(ErrorKind::Io, path.string(), "cannot open for writing");
  }
  os << text;
  if (!os) {
    throw Error(ErrorKind::Io, path.string(), "write failed");
  }
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return err->kind() == ErrorKind::NonFiniteLoss ? kExitNonFinite : kExitInputError;
  }
  if (dynamic_cast<const Json::exception*>(&e) != nullptr) {
    return kExitInputError;
  }
  return kExitFailure;
}

// Runs `body`, turning any exception into the one-line error report.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << error_line(e) << '\n';
    return exit_code_for(e);
  }
}

ModelConfig resolve_config(const std::string& source, const std::vector<std::string>& overrides) {
  Json raw = load_config_source(source);
  for (const auto& o : overrides) {
    apply_override(raw, o);
  }
  return validate_config(raw);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string percent(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << 100.0 * fraction << "%";
  return os.str();
}

bool is_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  return is.gcount() == 8 && std::string(magic, 8) == "SWIMVGCK";
}

std::vector<SyntheticSample> load_samples(const DatasetArgs& data, const ModelConfig& cfg) {
  if (data.dir) {
    return import_dataset(*data.dir);
  }
  const int count = data.count.value_or(cfg.n_eval);
  if (count < 0) {
    throw Error(ErrorKind::InvalidValue, "count", "sample count must be non-negative");
  }
  return generate_range(GenConfig::from_model(cfg), static_cast<std::size_t>(count), data.seed.value_or(cfg.data_seed),
                        true);
}

void print_report(const MetricsReport& r, std::ostream& out) {
  out << std::left << std::setw(12) << "subset" << std::setw(8) << "n";
  for (double tau : r.thresholds) {
    out << std::setw(10) << threshold_key(tau);
  }
  out << "mean_iou\n";
  auto row = [&](const char* name, const SubsetMetrics& m) {
    out << std::setw(12) << name << std::setw(8) << m.count << std::fixed << std::setprecision(4);
    for (double p : m.precision) {
      out << std::setw(10) << p;
    }
    out << m.mean_iou << '\n';
    out.unsetf(std::ios::floatfield);
  };
  row("overall", r.overall);
  row("ambiguous", r.ambiguous);
  row("unambiguous", r.unambiguous);
}

template <typename T>
int run_training(const ModelConfig& cfg, const TrainArgs& args, std::ostream& out) {
  const auto split = make_split(GenConfig::from_model(cfg), static_cast<std::size_t>(cfg.n_train),
                                static_cast<std::size_t>(cfg.n_eval), cfg.data_seed);
  Model<T> model(cfg);
  auto state = initial_state(model);
  TrainOptions options;
  options.out_dir = args.out_dir;
  if (!args.quiet) {
    options.log = [&out](const std::string& line) { out << line << '\n' << std::flush; };
  }
  const auto result = train(model, state, split, options);
  out << "final pr@0.5 " << format_double(result.final_eval.precision_at(0.5)) << '\n';
  return kExitOk;
}

template <typename T>
int run_eval(const EvalArgs& args, std::ostream& out) {
  const auto ck = load_checkpoint<T>(args.checkpoint);
  const auto samples = load_samples(args.data, ck.model.config());
  const auto report = evaluate(ck.model, std::span<const SyntheticSample>(samples), args.thresholds, ck.state.step);
  print_report(report, out);
  if (args.report) {
    write_text(*args.report, to_json(report).dump(2) + "\n");
  }
  return kExitOk;
}

template <typename T>
int run_export(const ExportAttentionArgs& args, std::ostream& out) {
  const auto ck = load_checkpoint<T>(args.checkpoint);
  const auto& cfg = ck.model.config();
  DatasetArgs data = args.data;
  if (!data.dir && !data.count) {
    data.count = args.index + 1;
  }
  const auto samples = load_samples(data, cfg);
  if (args.index < 0 || static_cast<std::size_t>(args.index) >= samples.size()) {
    throw Error(ErrorKind::InvalidValue, "index",
                "sample index " + std::to_string(args.index) + " outside [0, " + std::to_string(samples.size()) + ")");
  }
  const auto& sample = samples[static_cast<std::size_t>(args.index)];
  ForwardCache<T> cache;
  ck.model.forward(sample.view(), sample.word_ids, &cache);
  const auto grid = ck.model.attention_grid(cache, args.query);
  auto csv = args.out_prefix;
  csv += ".csv";
  auto pgm = args.out_prefix;
  pgm += ".pgm";
  if (args.out_prefix.has_parent_path()) {
    std::filesystem::create_directories(args.out_prefix.parent_path());
  }
  write_text(csv, attention_csv(grid));
  write_text(pgm, attention_pgm(grid));
  out << "grid " << grid.rows() << "x" << grid.cols() << " mass " << format_double(grid.sum()) << '\n';
  return kExitOk;
}

}  // namespace

std::string error_line(const std::exception& e) {
  nlohmann::ordered_json j;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    j["error"] = std::string(to_string(err->kind()));
    j["subject"] = err->subject();
  } else if (dynamic_cast<const Json::exception*>(&e) != nullptr) {
    j["error"] = "InvalidValue";
    j["subject"] = "";
  } else {
    j["error"] = "Internal";
    j["subject"] = "";
  }
  j["message"] = e.what();
  return j.dump();
}

Json load_config_source(const std::string& source) {
  if (source == "toy") {
    return toy_profile();
  }
  if (source == "paper") {
    return paper_profile();
  }
  return load_config_file(source);
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  ModelConfig cfg;
  try {
    cfg = resolve_config(args.config, args.overrides);
  } catch (const std::exception& e) {
    const auto line = error_line(e);
    err << line << '\n';
    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (!ec) {
      std::ofstream(args.out_dir / "error.log", std::ios::trunc) << line << '\n';
    }
    return exit_code_for(e);
  }
  return guarded(err, [&] {
    std::filesystem::create_directories(args.out_dir);
    std::filesystem::remove(args.out_dir / "metrics.jsonl");
    std::filesystem::remove(args.out_dir / "error.log");

    nlohmann::ordered_json manifest;
    manifest["version"] = std::string(kVersion);
    manifest["config_source"] = args.config;
    manifest["overrides"] = args.overrides;
    manifest["config"] = to_json(cfg);
    manifest["dataset"] = {{"data_seed", cfg.data_seed},
                           {"n_train", cfg.n_train},
                           {"n_eval", cfg.n_eval},
                           {"train_seeds", "(data_seed << 32) + i"},
                           {"eval_seeds", "(data_seed << 32) + 2^31 + i"}};
    manifest["outputs"] = {{"metrics", "metrics.jsonl"}, {"last", "last.ckpt"}, {"best", "best.ckpt"}};
    write_text(args.out_dir / "manifest.json", manifest.dump(2) + "\n");

    try {
      return cfg.precision == Precision::Float64 ? run_training<double>(cfg, args, out)
                                                 : run_training<float>(cfg, args, out);
    } catch (const std::exception& e) {
      std::ofstream(args.out_dir / "error.log", std::ios::trunc) << error_line(e) << '\n';
      throw;
    }
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.thresholds.empty()) {
      throw Error(ErrorKind::EmptyList, "iou", "threshold list is empty");
    }
    for (double tau : args.thresholds) {
      if (!(tau > 0.0 && tau <= 1.0)) {
        throw Error(ErrorKind::InvalidValue, "iou", "thresholds must lie in (0, 1], got " + format_double(tau));
      }
    }
    const auto cfg = read_checkpoint_config(args.checkpoint);
    return cfg.precision == Precision::Float64 ? run_eval<double>(args, out) : run_eval<float>(args, out);
  });
}

std::string budget_table(const ParamBudget& enumerated, const ParamBudget& closed_form) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "group" << std::right << std::setw(14) << "enumerated" << std::setw(14)
     << "closed-form" << '\n';
  auto row = [&](const std::string& name, std::size_t a, std::size_t b) {
    os << std::left << std::setw(18) << name << std::right << std::setw(14) << a << std::setw(14) << b << '\n';
  };
  auto group_count = [](const ParamBudget& b, ParamGroup g) {
    const auto it = b.per_group.find(g);
    return it == b.per_group.end() ? std::size_t{0} : it->second;
  };
  for (auto g : kTunableGroups) {
    if (group_count(enumerated, g) != 0 || group_count(closed_form, g) != 0) {
      row(std::string(to_string(g)), group_count(enumerated, g), group_count(closed_form, g));
    }
  }
  row("tunable", enumerated.tunable_count, closed_form.tunable_count);
  row("frozen", enumerated.frozen_count, closed_form.frozen_count);
  row("total", enumerated.tunable_count + enumerated.frozen_count,
      closed_form.tunable_count + closed_form.frozen_count);
  os << "tunable fraction  " << percent(enumerated.tunable_fraction) << " (reference "
     << percent(kReferenceTunableFraction) << ")\n";
  const auto diffs = budget_differences(enumerated, closed_form);
  if (diffs.empty()) {
    os << "cross-check       ok\n";
  } else {
    os << "cross-check       MISMATCH\n";
    for (const auto& d : diffs) {
      os << "  " << d << '\n';
    }
  }
  return os.str();
}

int cmd_inspect_params(const InspectArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ModelConfig cfg;
    if (is_checkpoint(args.source)) {
      Json raw = to_json(read_checkpoint_config(args.source));
      for (const auto& o : args.overrides) {
        apply_override(raw, o);
      }
      cfg = validate_config(raw);
    } else {
      cfg = resolve_config(args.source, args.overrides);
    }
    const Model<float> model(cfg, LayoutOnly{});
    const auto enumerated = param_budget(model);
    const auto closed = closed_form_budget(cfg);
    out << budget_table(enumerated, closed);
    return budget_differences(enumerated, closed).empty() ? kExitOk : kExitFailure;
  });
}

std::string attention_csv(const Mat<double>& grid) {
  std::string s;
  for (Index r = 0; r < grid.rows(); ++r) {
    for (Index c = 0; c < grid.cols(); ++c) {
      if (c > 0) {
        s += ',';
      }
      s += format_double(grid(r, c));
    }
    s += '\n';
  }
  return s;
}

std::string attention_pgm(const Mat<double>& grid) {
  std::string s = "P5\n" + std::to_string(grid.cols()) + " " + std::to_string(grid.rows()) + "\n255\n";
  const double lo = grid.minCoeff();
  const double hi = grid.maxCoeff();
  for (Index r = 0; r < grid.rows(); ++r) {
    for (Index c = 0; c < grid.cols(); ++c) {
      const double t = hi > lo ? (grid(r, c) - lo) / (hi - lo) : 0.0;
      s += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
    }
  }
  return s;
}

int cmd_export_attention(const ExportAttentionArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = read_checkpoint_config(args.checkpoint);
    return cfg.precision == Precision::Float64 ? run_export<double>(args, out) : run_export<float>(args, out);
  });
}

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = resolve_config(args.config, args.overrides);
    if (args.count < 0) {
      throw Error(ErrorKind::InvalidValue, "count", "sample count must be non-negative");
    }
    const auto samples = generate_range(GenConfig::from_model(cfg), static_cast<std::size_t>(args.count),
                                        args.seed.value_or(cfg.data_seed), args.eval_split);
    export_dataset(args.out_dir, samples);
    const auto ambiguous = std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.ambiguous; });
    out << "wrote " << samples.size() << " samples (" << ambiguous << " ambiguous) to " << args.out_dir.string()
        << '\n';
    return kExitOk;
  });
}

}  // namespace swimvg::cli
