#include <cstring>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "swimvg/trainer.hpp"

namespace {

using namespace swimvg;

struct Outcome {
  bool pass = false;
  std::string detail;
};

ModelConfig toy_with(const std::vector<std::string>& overrides) {
  Json raw = toy_profile();
  for (const auto& o : overrides) {
    apply_override(raw, o);
  }
  return validate_config(raw);
}

std::vector<const SyntheticSample*> pointers(const std::vector<SyntheticSample>& samples) {
  std::vector<const SyntheticSample*> out;
  for (const auto& s : samples) {
    out.push_back(&s);
  }
  return out;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

template <typename T>
bool bit_equal(const Mat<T>& a, const Mat<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(T)) == 0;
}

Mat<double> random_mat(Rng& rng, Index rows, Index cols) {
  Mat<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.normal();
  }
  return m;
}

// ------------------------------------------------------------------ 1 --

Outcome freezing_invariant() {
  const double start = cpu_seconds();
  const auto cfg = toy_with({});
  Model<float> model(cfg);
  auto state = initial_state(model);
  const auto& ps = model.params();
  std::vector<std::uint64_t> before;
  for (const auto& info : ps.infos()) {
    if (!info.tunable()) {
      before.push_back(fnv1a(ps.values().data() + info.offset, info.size() * sizeof(float)));
    }
  }
  const auto samples = generate_range(GenConfig::from_model(cfg), 64, cfg.data_seed, false);
  const auto all = pointers(samples);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t step = 0; step < 100; ++step) {
    const std::size_t off = (step * batch) % (all.size() - batch + 1);
    train_step<float>(model, std::span(all).subspan(off, batch), state);
  }
  std::size_t changed = 0;
  std::size_t k = 0;
  for (const auto& info : ps.infos()) {
    if (!info.tunable()) {
      changed += fnv1a(ps.values().data() + info.offset, info.size() * sizeof(float)) != before[k++] ? 1 : 0;
    }
  }
  const double elapsed = cpu_seconds() - start;
  return {changed == 0 && elapsed < 60.0, std::to_string(before.size()) + " frozen tensors, " +
                                               std::to_string(changed) + " changed after 100 steps, " +
                                               fixed(elapsed, 1) + " s CPU (limit 60)"};
}

// ------------------------------------------------------------------ 2 --

Outcome residual_identities() {
  const auto cfg = toy_with({});
  Model<double> model(cfg);
  jitter_tunable(model, 17, 0.2);
  Rng rng(18);
  const auto& ids = model.ids();
  const int cia_layer = cfg.cia_layers.front();
  const int dosa_layer = cfg.dosa_layers.front();
  const CiaIds cia = *ids.cia[static_cast<std::size_t>(cia_layer)];
  const DosaIds dosa = *ids.dosa[static_cast<std::size_t>(dosa_layer)];
  Model<double> zero_up = model;
  zero_up.params()[cia.up].setZero();
  zero_up.params()[dosa.up].setZero();

  int failures = 0;
  const Index text_rows = cfg.max_text_len + 1;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat<double> fv = random_mat(rng, 67, cfg.vision_dim);
    const Mat<double> text = random_mat(rng, text_rows, cfg.text_dim);
    std::vector<std::uint8_t> pad(static_cast<std::size_t>(text_rows), 0);
    for (Index j = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.max_text_len))); j < text_rows; ++j) {
      pad[static_cast<std::size_t>(j)] = 1;
    }
    failures += bit_equal(cia_forward<double>(fv, text, model.params(), cia, cfg.cia_heads, 0.0, pad, nullptr), fv) ? 0 : 1;
    failures += bit_equal(
                    cia_forward<double>(fv, text, zero_up.params(), cia, cfg.cia_heads, cfg.adapter_scale_vt, pad, nullptr),
                    fv)
                    ? 0
                    : 1;
    failures += bit_equal(dosa_forward<double>(text, model.params(), dosa, 0.0, nullptr), text) ? 0 : 1;
    failures += bit_equal(dosa_forward<double>(text, zero_up.params(), dosa, cfg.adapter_scale_t, nullptr), text) ? 0 : 1;
  }
  return {failures == 0, "400 checks (CIA/DoSA x scale 0/zero up x 100 inputs), " + std::to_string(failures) +
                             " not bit-exact"};
}

// ------------------------------------------------------------------ 3 --

Outcome gradient_correctness() {
  const double start = cpu_seconds();
  const auto cfg = toy_with({"precision=float64"});
  Model<double> model(cfg);
  jitter_tunable(model, 23, 0.05);
  const auto samples = generate_range(GenConfig::from_model(cfg), 2, cfg.data_seed, false);
  // Smaller steps are dominated by roundoff on coordinates with tiny gradients.
  const auto report = finite_diff_check(model, pointers(samples), 1e-4, 300, 29);
  const double elapsed = cpu_seconds() - start;
  bool all_groups = true;
  std::ostringstream detail;
  detail << "max rel error " << std::scientific << std::setprecision(2) << report.max_rel_error << " over "
         << report.coordinates << " coords (limit 1e-4);";
  for (auto g : {ParamGroup::Prompt, ParamGroup::Bridge, ParamGroup::Cia, ParamGroup::Dosa, ParamGroup::Head,
                 ParamGroup::Reg}) {
    const auto it = report.max_rel_error_by_group.find(g);
    if (it == report.max_rel_error_by_group.end()) {
      all_groups = false;
      detail << " " << to_string(g) << " missing";
    } else {
      detail << " " << to_string(g) << " " << it->second;
    }
  }
  detail << "; " << std::fixed << std::setprecision(1) << elapsed << " s CPU";
  return {all_groups && report.max_rel_error < 1e-4 && elapsed < 300.0, detail.str()};
}

// ------------------------------------------------------------------ 4 --

Outcome giou_oracle() {
  const Corners unit{0, 0, 1, 1};
  const double same = giou(unit, unit);
  const double touching = giou(unit, Corners{1, 0, 2, 1});
  const double apart = giou(unit, Corners{2, 0, 3, 1});
  const bool closed = std::abs(same - 1.0) <= 1e-12 && std::abs(touching) <= 1e-12 &&
                      std::abs(apart + 1.0 / 3.0) <= 1e-12;
  Rng rng(41);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto box = [&] {
      return to_corners(
          BoundingBox{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)});
    };
    const Corners a = box();
    const Corners b = box();
    worst = std::max(worst, std::abs(giou(a, b) - testing::pixel_overlap(a, b, rng).giou));
  }
  std::ostringstream detail;
  detail << "closed form " << (closed ? "exact" : "off") << " (1, " << touching << ", " << apart
         << "); worst pixel-oracle gap " << std::scientific << std::setprecision(2) << worst
         << " over 1000 pairs (limit 2e-3)";
  return {closed && worst <= 2e-3, detail.str()};
}

// ------------------------------------------------------------------ 5 --

bool counts_match(const ModelConfig& cfg, const std::vector<int>& counts) {
  const int n = (cfg.image_size / cfg.patch_size) * (cfg.image_size / cfg.patch_size);
  if (counts.size() != static_cast<std::size_t>(cfg.vision_depth)) {
    return false;
  }
  for (int i = 0; i < cfg.vision_depth; ++i) {
    if (counts[static_cast<std::size_t>(i)] != 1 + std::min(i + 1, cfg.text_depth) + n) {
      return false;
    }
  }
  return true;
}

std::vector<int> forward_counts(const ModelConfig& cfg) {
  const Model<float> model(cfg);
  const auto sample = generate_sample(1, GenConfig::from_model(cfg));
  ForwardCache<float> cache;
  model.forward(sample.view(), sample.word_ids, &cache);
  std::vector<int> counts;
  for (const auto& layer : cache.vision_layers) {
    counts.push_back(static_cast<int>(layer.roles.size()));
  }
  return counts;
}

Outcome swip_schedule_counts() {
  const auto toy = toy_with({});
  const auto deep = toy_with({"text_depth=12", "vision_depth=24", "cia_layers=[12,13,14,15,16,17,18,19,20,21,22,23]"});
  const bool toy_ok = counts_match(toy, derive_shapes(toy).vision_tokens_at_layer) && counts_match(toy, forward_counts(toy));
  const bool deep_ok =
      counts_match(deep, derive_shapes(deep).vision_tokens_at_layer) && counts_match(deep, forward_counts(deep));
  std::ostringstream detail;
  detail << "toy " << (toy_ok ? "ok" : "mismatch") << " (";
  for (int c : forward_counts(toy)) {
    detail << c << " ";
  }
  detail << "), 12/24 " << (deep_ok ? "ok" : "mismatch") << " (first " << derive_shapes(deep).vision_tokens_at_layer.front()
         << ", last " << derive_shapes(deep).vision_tokens_at_layer.back() << "), shape derivation and forward pass";
  return {toy_ok && deep_ok, detail.str()};
}

// ------------------------------------------------------------------ 6 --

Outcome parameter_budget() {
  const std::vector<std::vector<std::string>> matrix = {
      {},
      {"text_depth=3", "vision_depth=5"},
      {"swip_bridge_shared=false", "cia_bridge_shared=false"},
      {"swip_enabled=false"},
      {"cia_enabled=false", "dosa_enabled=false"},
      {"bottleneck_dim=4", "cia_heads=2"},
      {"cia_layers=[0,1,2,3]", "dosa_layers=[1]"},
      {"text_dim=64", "text_heads=4", "head_hidden_dim=20"},
      {"image_size=32", "patch_size=4", "vision_depth=2", "cia_layers=[1]"},
      {"text_depth=6", "vision_depth=3", "max_text_len=5", "vocab_size=100"},
  };
  int agree = 0;
  for (const auto& overrides : matrix) {
    const auto cfg = toy_with(overrides);
    agree += param_budget(Model<float>(cfg, LayoutOnly{})) == closed_form_budget(cfg) ? 1 : 0;
  }
  const auto paper = validate_config(paper_profile());
  const auto enumerated = param_budget(Model<float>(paper, LayoutOnly{}));
  const bool paper_agrees = enumerated == closed_form_budget(paper);
  const double f = enumerated.tunable_fraction;
  std::ostringstream detail;
  detail << agree << "/10 configs agree; paper profile tunable " << enumerated.tunable_count << " of "
         << enumerated.tunable_count + enumerated.frozen_count << " = " << fixed(100 * f, 3) << "% (reference "
         << fixed(100 * kReferenceTunableFraction, 2) << "%, band 1.5-2.6%)";
  return {agree == 10 && paper_agrees && f >= 0.015 && f <= 0.026, detail.str()};
}

// ---------------------------------------------------------------- 7-9 --

// Settings found by a learning-rate / initialization sweep on the toy task; the
// profile defaults do not learn at all within the time budget.
const std::vector<std::string> kTrainSettings = {
    "n_train=2000",      "n_eval=500",          "epochs=40",          "eval_every=10",
    "batch_size=16",     "learning_rate=0.003", "vision_pos_init=sincos", "vision_pos_scale=3.0",
    "backbone_init_std=0.15",
};

struct Run {
  std::string name;
  MetricsReport final_eval;
  std::vector<MetricsReport> evals;
  double cpu = 0;
};

Run train_run(const std::string& name, std::vector<std::string> overrides, const std::filesystem::path& root) {
  overrides.insert(overrides.begin(), kTrainSettings.begin(), kTrainSettings.end());
  const auto cfg = toy_with(overrides);
  const auto split = make_split(GenConfig::from_model(cfg), static_cast<std::size_t>(cfg.n_train),
                                static_cast<std::size_t>(cfg.n_eval), cfg.data_seed);
  const auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Model<float> model(cfg);
  auto state = initial_state(model);
  TrainOptions options;
  options.out_dir = dir;
  options.log = [&](const std::string& line) {
    const auto j = Json::parse(line);
    std::cout << "  [" << name << "] epoch " << j["epoch"] << " pr@0.5 " << fixed(j["pr@0.5"].get<double>())
              << " ambiguous " << fixed(j["ambiguous"]["pr@0.5"].get<double>()) << std::endl;
  };
  const double start = cpu_seconds();
  const auto result = train<float>(model, state, split, options);
  Run run{name, result.final_eval, result.evals, cpu_seconds() - start};
  std::cout << "  [" << name << "] done in " << fixed(run.cpu, 0) << " s CPU" << std::endl;
  return run;
}

double ambiguous_pr(const Run& r) { return r.final_eval.ambiguous.precision[0]; }

Outcome fusion_necessity(const Run& full, const Run& off) {
  const double pr = full.final_eval.precision_at(0.5);
  const double off_amb = ambiguous_pr(off);
  std::ostringstream detail;
  detail << "full pr@0.5 " << fixed(pr) << " on " << full.final_eval.overall.count << " held-out (need >= 0.85) in "
         << fixed(full.cpu, 0) << " s CPU (limit 600); fusion-off ambiguous pr@0.5 " << fixed(off_amb)
         << " (need <= 0.60)";
  return {pr >= 0.85 && off_amb <= 0.60 && full.cpu <= 600.0, detail.str()};
}

Outcome ablation_ordering(const Run& full, const Run& swip, const Run& cia, const Run& off) {
  const double f = ambiguous_pr(full), s = ambiguous_pr(swip), c = ambiguous_pr(cia), o = ambiguous_pr(off);
  std::ostringstream detail;
  detail << "ambiguous pr@0.5: swip+cia " << fixed(f) << ", swip-only " << fixed(s) << ", cia-only " << fixed(c)
         << ", off " << fixed(o) << " (need swip,cia >= off + 0.05 and swip+cia >= max - 0.01)";
  return {s >= o + 0.05 && c >= o + 0.05 && f >= std::max(s, c) - 0.01, detail.str()};
}

Outcome metric_monotonicity(const std::vector<const Run*>& runs) {
  int checked = 0;
  int bad = 0;
  for (const Run* r : runs) {
    for (const auto& e : r->evals) {
      for (const SubsetMetrics* m : {&e.overall, &e.ambiguous, &e.unambiguous}) {
        if (m->count == 0) {
          continue;
        }
        ++checked;
        // Thresholds are 0.5, 0.6, 0.8 in that order.
        bad += (m->precision[2] <= m->precision[1] && m->precision[1] <= m->precision[0]) ? 0 : 1;
      }
    }
  }
  return {checked > 0 && bad == 0,
          std::to_string(checked) + " evaluation subsets checked, " + std::to_string(bad) + " out of order"};
}

// ----------------------------------------------------------------- 10 --

Outcome determinism(const std::filesystem::path& root) {
  const auto cfg = toy_with({"batch_size=8"});
  const auto samples = generate_range(GenConfig::from_model(cfg), 80, cfg.data_seed, false);
  const auto all = pointers(samples);
  std::vector<double> losses[2];
  Model<float> trained(cfg);
  auto trained_state = initial_state(trained);
  for (auto& seq : losses) {
    Model<float> model(cfg);
    auto state = initial_state(model);
    for (std::size_t step = 0; step < 10; ++step) {
      seq.push_back(train_step<float>(model, std::span(all).subspan(step * 8, 8), state).loss.total);
    }
    trained = model;
    trained_state = state;
  }
  const bool same_losses = losses[0] == losses[1];

  const auto path = root / "determinism.ckpt";
  std::filesystem::create_directories(root);
  save_checkpoint(trained, trained_state, path);
  const auto loaded = load_checkpoint<float>(path, &cfg);
  const auto eval = generate_range(GenConfig::from_model(cfg), 100, cfg.data_seed, true);
  const auto a = to_json(evaluate<float>(trained, eval, kDefaultThresholds, trained_state.step)).dump(2);
  const auto b = to_json(evaluate<float>(loaded.model, eval, kDefaultThresholds, loaded.state.step)).dump(2);
  return {same_losses && a == b, std::string("10-step losses ") + (same_losses ? "identical" : "differ") +
                                     "; save/load/eval report " + (a == b ? "byte-identical" : "differs") + " (" +
                                     std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::filesystem::path out = "acceptance_runs";
  bool skip_training = false;
  std::vector<int> known_failures;
  app.add_option("--out", out, "Directory for training runs");
  app.add_flag("--skip-training", skip_training, "Skip the four training runs behind criteria 7-9");
  app.add_option("--known-failures", known_failures,
                 "Criteria whose FAIL does not change the exit status (documented as unattained)")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  std::map<int, Outcome> results;
  auto record = [&](int id, Outcome o) {
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << std::endl;
    results[id] = std::move(o);
  };

  try {
    record(1, freezing_invariant());
    record(2, residual_identities());
    record(3, gradient_correctness());
    record(4, giou_oracle());
    record(5, swip_schedule_counts());
    record(6, parameter_budget());
    if (skip_training) {
      for (int id : {7, 8, 9}) {
        record(id, {false, "skipped (--skip-training)"});
      }
    } else {
      const Run full = train_run("swip_cia", {}, out);
      const Run swip = train_run("swip_only", {"cia_enabled=false"}, out);
      const Run cia = train_run("cia_only", {"swip_enabled=false"}, out);
      const Run off = train_run("fusion_off", {"swip_enabled=false", "cia_enabled=false"}, out);
      record(7, fusion_necessity(full, off));
      record(8, ablation_ordering(full, swip, cia, off));
      record(9, metric_monotonicity({&full, &swip, &cia, &off}));
    }
    record(10, determinism(out));
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  int passed = 0;
  bool blocking = false;
  const std::set<int> known(known_failures.begin(), known_failures.end());
  for (const auto& [id, o] : results) {
    passed += o.pass ? 1 : 0;
    blocking = blocking || (!o.pass && known.count(id) == 0);
  }
  std::cout << "summary: " << passed << "/" << results.size() << " criteria passed";
  if (!known.empty()) {
    std::cout << "; known unattained:";
    for (int id : known) {
      std::cout << " " << id;
    }
  }
  std::cout << std::endl;
  return blocking ? 1 : 0;
}
