#include "swimvg/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace swimvg {

template <typename T>
Partition partition_parameters(const Model<T>& model) {
  Partition p;
  const auto& infos = model.params().infos();
  for (ParamId id = 0; id < infos.size(); ++id) {
    switch (infos[id].tag) {
      case Trainability::Untagged:
        throw Error(ErrorKind::UntaggedParameter, infos[id].name, "parameter has no frozen/tunable tag");
      case Trainability::Frozen:
        p.frozen.push_back(id);
        break;
      case Trainability::Tunable:
        p.tunable.push_back(id);
        break;
    }
  }
  return p;
}

template <typename T>
TrainState<T> initial_state(const Model<T>& model) {
  TrainState<T> s;
  s.m.assign(model.params().tunable_count(), T(0));
  s.v.assign(model.params().tunable_count(), T(0));
  s.rng = Rng(model.config().data_seed * 1000003ULL + model.config().seed);
  return s;
}

template <typename T>
LossBreakdown loss_and_grad(const Model<T>& model, std::span<const SyntheticSample* const> batch, std::span<T> grads) {
  std::fill(grads.begin(), grads.end(), T(0));
  const auto& cfg = model.config();
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossBreakdown total;
  ForwardCache<T> cache;
  for (const SyntheticSample* s : batch) {
    const auto out = model.forward(s->view(), s->word_ids, &cache);
    if (!std::all_of(out.begin(), out.end(), [](T v) { return std::isfinite(v); })) {
      // Reported by the caller together with the step number.
      total.total = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    std::array<double, 4> d{};
    const auto l = grounding_loss_grad(to_box(out), s->gt_box, cfg.lambda_l1, cfg.lambda_giou, d);
    total.l1 += l.l1 * inv;
    total.giou_loss += l.giou_loss * inv;
    total.total += l.total * inv;
    std::array<T, 4> d_box{};
    for (std::size_t i = 0; i < 4; ++i) {
      d_box[i] = static_cast<T>(d[i] * inv);
    }
    model.backward(cache, d_box, grads);
  }
  return total;
}

template <typename T>
LossBreakdown batch_loss(const Model<T>& model, std::span<const SyntheticSample* const> batch) {
  const auto& cfg = model.config();
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossBreakdown total;
  for (const SyntheticSample* s : batch) {
    const auto l = grounding_loss(to_box(model.forward(s->view(), s->word_ids, nullptr)), s->gt_box, cfg.lambda_l1,
                                  cfg.lambda_giou);
    total.l1 += l.l1 * inv;
    total.giou_loss += l.giou_loss * inv;
    total.total += l.total * inv;
  }
  return total;
}

template <typename T>
StepStats train_step(Model<T>& model, std::span<const SyntheticSample* const> batch, TrainState<T>& state) {
  if (batch.empty()) {
    throw Error(ErrorKind::EmptyDataset, "batch", "training step needs at least one sample");
  }
  const auto& cfg = model.config();
  auto& ps = model.params();
  std::vector<T> grads(ps.tunable_count(), T(0));
  StepStats stats;
  stats.loss = loss_and_grad<T>(model, batch, grads);

  double sq = 0;
  for (T g : grads) {
    sq += static_cast<double>(g) * static_cast<double>(g);
  }
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.loss.total) || !std::isfinite(stats.grad_norm)) {
    std::ostringstream msg;
    msg << "l1=" << stats.loss.l1 << " giou_loss=" << stats.loss.giou_loss << " total=" << stats.loss.total
        << " grad_norm=" << stats.grad_norm;
    throw Error(ErrorKind::NonFiniteLoss, "step " + std::to_string(state.step), msg.str());
  }
  if (cfg.grad_clip > 0 && stats.grad_norm > cfg.grad_clip) {
    const T scale = static_cast<T>(cfg.grad_clip / stats.grad_norm);
    for (T& g : grads) {
      g *= scale;
    }
  }

  const std::int64_t t = state.step + 1;
  double lr = cfg.learning_rate;
  if (cfg.warmup_steps > 0) {
    lr *= std::min(1.0, static_cast<double>(t) / static_cast<double>(cfg.warmup_steps));
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.adam_eps);
  const T decay = static_cast<T>(lr * cfg.weight_decay);
  auto values = ps.values();
  for (const auto& info : ps.infos()) {
    if (!info.tunable()) {
      continue;
    }
    T* p = values.data() + info.offset;
    const auto go = static_cast<std::size_t>(info.grad_offset);
    for (std::size_t k = 0; k < info.size(); ++k) {
      const T g = grads[go + k];
      T& m = state.m[go + k];
      T& v = state.v[go + k];
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g * g;
      if (info.decay) {
        p[k] -= decay * p[k];
      }
      p[k] -= step_size * m / (std::sqrt(v) * inv_sqrt_bc2 + eps);
    }
  }
  state.step = t;
  return stats;
}

// ------------------------------------------------------------------ metrics --

double MetricsReport::precision_at(double tau) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == tau) {
      return overall.precision.at(i);
    }
  }
  throw Error(ErrorKind::InvalidValue, threshold_key(tau), "threshold was not evaluated");
}

namespace {

struct Accum {
  std::size_t count = 0;
  std::vector<std::size_t> hits;
  double iou_sum = 0;
  LossBreakdown loss;

  explicit Accum(std::size_t n) : hits(n, 0) {}

  void add(double iou_value, const LossBreakdown& l, const std::vector<double>& thresholds) {
    ++count;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      hits[i] += iou_value >= thresholds[i] ? 1 : 0;
    }
    iou_sum += iou_value;
    loss.l1 += l.l1;
    loss.giou_loss += l.giou_loss;
    loss.total += l.total;
  }

  SubsetMetrics finish() const {
    SubsetMetrics m;
    m.count = count;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(count);
    for (auto h : hits) {
      m.precision.push_back(count == 0 ? nan : static_cast<double>(h) / n);
    }
    m.mean_iou = count == 0 ? nan : iou_sum / n;
    m.loss.l1 = count == 0 ? nan : loss.l1 / n;
    m.loss.giou_loss = count == 0 ? nan : loss.giou_loss / n;
    m.loss.total = count == 0 ? nan : loss.total / n;
    return m;
  }
};

nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json subset_json(const SubsetMetrics& m, const std::vector<double>& thresholds) {
  nlohmann::ordered_json j;
  j["n"] = m.count;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    j[threshold_key(thresholds[i])] = number_or_null(m.precision[i]);
  }
  j["mean_iou"] = number_or_null(m.mean_iou);
  j["l1"] = number_or_null(m.loss.l1);
  j["giou_loss"] = number_or_null(m.loss.giou_loss);
  j["loss"] = number_or_null(m.loss.total);
  return j;
}

}  // namespace

template <typename T>
MetricsReport evaluate(const Model<T>& model, std::span<const SyntheticSample> samples,
                       const std::vector<double>& thresholds, std::int64_t step) {
  if (samples.empty()) {
    throw Error(ErrorKind::EmptyDataset, "samples", "evaluation needs at least one sample");
  }
  const auto& cfg = model.config();
  Accum all(thresholds.size());
  Accum amb(thresholds.size());
  Accum unamb(thresholds.size());
  for (const auto& s : samples) {
    const BoundingBox pred = to_box(model.forward(s.view(), s.word_ids, nullptr));
    const double v = iou(pred, s.gt_box);
    const auto l = grounding_loss(pred, s.gt_box, cfg.lambda_l1, cfg.lambda_giou);
    all.add(v, l, thresholds);
    (s.ambiguous ? amb : unamb).add(v, l, thresholds);
  }
  MetricsReport r;
  r.step = step;
  r.thresholds = thresholds;
  r.overall = all.finish();
  r.ambiguous = amb.finish();
  r.unambiguous = unamb.finish();
  return r;
}

std::string threshold_key(double tau) {
  std::ostringstream os;
  os << "pr@" << tau;
  return os.str();
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["step"] = report.step;
  const auto overall = subset_json(report.overall, report.thresholds);
  for (const auto& [k, v] : overall.items()) {
    j[k] = v;
  }
  j["ambiguous"] = subset_json(report.ambiguous, report.thresholds);
  j["unambiguous"] = subset_json(report.unambiguous, report.thresholds);
  return j;
}

// --------------------------------------------------------------- checkpoint --

namespace {

constexpr char kMagic[8] = {'S', 'W', 'I', 'M', 'V', 'G', 'C', 'K'};
enum class DType : std::uint32_t { F32 = 0, F64 = 1 };

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  template <typename T>
  void array(const std::string& name, const T* data, std::size_t rows, std::size_t cols) {
    bytes(name);
    u32(static_cast<std::uint32_t>(std::is_same_v<T, float> ? DType::F32 : DType::F64));
    u64(rows);
    u64(cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      if constexpr (std::is_same_v<T, float>) {
        u32(std::bit_cast<std::uint32_t>(data[i]));
      } else {
        f64(data[i]);
      }
    }
  }
  std::string& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string path) : buf_(buf), end_(end), path_(std::move(path)) {}

  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes() {
    const std::size_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  struct Array {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
  };
  Array array() {
    Array a;
    a.name = bytes();
    const auto dtype = u32();
    if (dtype > 1) {
      throw Error(ErrorKind::CorruptFile, path_, "unknown dtype in array " + a.name);
    }
    a.rows = u64();
    a.cols = u64();
    const std::size_t width = dtype == 0 ? 4 : 8;
    if (a.rows != 0 && a.cols > (end_ - pos_) / width / a.rows) {
      throw Error(ErrorKind::CorruptFile, path_, "array " + a.name + " runs past the end of the file");
    }
    a.data.resize(a.rows * a.cols);
    for (auto& v : a.data) {
      v = dtype == 0 ? static_cast<double>(std::bit_cast<float>(u32())) : f64();
    }
    return a;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) {
      throw Error(ErrorKind::CorruptFile, path_, "truncated checkpoint");
    }
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const TrainState<T>& state, const std::filesystem::path& path) {
  Writer w;
  w.buffer().append(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.bytes(to_json(model.config()).dump());
  w.u64(static_cast<std::uint64_t>(state.step));
  w.f64(state.best_eval);
  w.bytes(state.rng.state());
  const auto& ps = model.params();
  w.u32(static_cast<std::uint32_t>(ps.count() + 2));
  for (ParamId id = 0; id < ps.count(); ++id) {
    const auto& info = ps.info(id);
    w.array(info.name, ps.values().data() + info.offset, static_cast<std::size_t>(info.rows),
            static_cast<std::size_t>(info.cols));
  }
  w.array("adam.m", state.m.data(), state.m.size(), 1);
  w.array("adam.v", state.v.data(), state.v.size(), 1);
  const std::uint64_t checksum = fnv1a(w.buffer().data(), w.buffer().size());
  w.u64(checksum);

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw Error(ErrorKind::Io, tmp.string(), "cannot open for writing");
    }
    os.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!os) {
      throw Error(ErrorKind::Io, tmp.string(), "write failed");
    }
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw Error(ErrorKind::Io, path.string(), "cannot open checkpoint");
  }
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Verifies magic, version and checksum, parses the embedded config and leaves
// the reader at the training state.
Reader open_checkpoint(const std::string& buf, const std::string& name, ModelConfig& cfg) {
  if (buf.size() < sizeof(kMagic) + 4 + 8 || !std::equal(kMagic, kMagic + sizeof(kMagic), buf.begin())) {
    throw Error(ErrorKind::CorruptFile, name, "not a checkpoint file");
  }
  Reader header(buf, buf.size(), name);
  header.get(sizeof(kMagic));
  const auto version = header.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::VersionMismatch, name,
                "format version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::size_t body = buf.size() - 8;
  const std::string trailer = buf.substr(body);
  Reader tail(trailer, trailer.size(), name);
  if (tail.u64() != fnv1a(buf.data(), body)) {
    throw Error(ErrorKind::CorruptFile, name, "checksum mismatch");
  }

  Reader r(buf, body, name);
  r.get(sizeof(kMagic));
  r.u32();
  try {
    cfg = validate_config(Json::parse(r.bytes()));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::CorruptFile, name, std::string("embedded config: ") + e.what());
  }
  return r;
}

}  // namespace

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  const std::string buf = read_file_bytes(path);
  ModelConfig cfg;
  open_checkpoint(buf, path.string(), cfg);
  return cfg;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  const std::string buf = read_file_bytes(path);
  const std::string name = path.string();
  ModelConfig cfg;
  Reader r = open_checkpoint(buf, name, cfg);
  if (expected != nullptr && !(*expected == cfg)) {
    throw Error(ErrorKind::ConfigMismatch, name, "embedded config differs from the requested one");
  }
  Checkpoint<T> ck{Model<T>(cfg, LayoutOnly{}), TrainState<T>{}};
  ck.state.step = static_cast<std::int64_t>(r.u64());
  ck.state.best_eval = r.f64();
  ck.state.rng.set_state(r.bytes());
  const std::size_t n = r.u32();
  auto& ps = ck.model.params();
  if (n != ps.count() + 2) {
    throw Error(ErrorKind::CorruptFile, name, "array count does not match the embedded config");
  }
  auto values = ps.values();
  for (ParamId id = 0; id < ps.count(); ++id) {
    const auto a = r.array();
    const auto& info = ps.info(id);
    if (a.name != info.name || a.rows != static_cast<std::size_t>(info.rows) ||
        a.cols != static_cast<std::size_t>(info.cols)) {
      throw Error(ErrorKind::CorruptFile, name, "unexpected array " + a.name);
    }
    std::transform(a.data.begin(), a.data.end(), values.begin() + static_cast<std::ptrdiff_t>(info.offset),
                   [](double v) { return static_cast<T>(v); });
  }
  for (auto* moments : {&ck.state.m, &ck.state.v}) {
    const auto a = r.array();
    if (a.data.size() != ps.tunable_count()) {
      throw Error(ErrorKind::CorruptFile, name, "optimizer moments do not match the tunable count");
    }
    moments->resize(a.data.size());
    std::transform(a.data.begin(), a.data.end(), moments->begin(), [](double v) { return static_cast<T>(v); });
  }
  if (!r.done()) {
    throw Error(ErrorKind::CorruptFile, name, "trailing bytes");
  }
  return ck;
}

// ------------------------------------------------------------ gradient check --

GradCheckReport finite_diff_check(Model<double>& model, std::span<const SyntheticSample* const> batch, double eps,
                                  std::size_t coords, std::uint64_t seed) {
  auto& ps = model.params();
  std::vector<double> grads(ps.tunable_count(), 0.0);
  loss_and_grad<double>(model, batch, grads);

  std::map<ParamGroup, std::vector<const ParamInfo*>> by_group;
  std::map<ParamGroup, std::size_t> sizes;
  for (const auto& info : ps.infos()) {
    if (info.tunable()) {
      by_group[info.group].push_back(&info);
      sizes[info.group] += info.size();
    }
  }
  GradCheckReport report;
  if (by_group.empty()) {
    return report;
  }
  const std::size_t per_group = (coords + by_group.size() - 1) / by_group.size();
  Rng rng(seed);
  auto values = ps.values();
  for (const auto& [group, infos] : by_group) {
    double& group_max = report.max_rel_error_by_group[group];
    for (std::size_t c = 0; c < per_group; ++c) {
      std::size_t k = rng.below(sizes[group]);
      const ParamInfo* info = nullptr;
      for (const auto* i : infos) {
        if (k < i->size()) {
          info = i;
          break;
        }
        k -= i->size();
      }
      double& x = values[info->offset + k];
      const double orig = x;
      x = orig + eps;
      const double plus = batch_loss<double>(model, batch).total;
      x = orig - eps;
      const double minus = batch_loss<double>(model, batch).total;
      x = orig;
      const double numeric = (plus - minus) / (2 * eps);
      const double analytic = grads[static_cast<std::size_t>(info->grad_offset) + k];
      const double err =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      group_max = std::max(group_max, err);
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.coordinates_by_group[group];
      ++report.coordinates;
    }
  }
  return report;
}

template <typename T>
void jitter_tunable(Model<T>& model, std::uint64_t seed, double std) {
  Rng rng(seed);
  auto& ps = model.params();
  auto values = ps.values();
  for (const auto& info : ps.infos()) {
    if (info.tunable()) {
      for (std::size_t k = 0; k < info.size(); ++k) {
        values[info.offset + k] += static_cast<T>(rng.normal(0.0, std));
      }
    }
  }
}

// --------------------------------------------------------------- train loop --

template <typename T>
TrainResult train(Model<T>& model, TrainState<T>& state, const Split& split, const TrainOptions& options) {
  const auto& cfg = model.config();
  if (split.train.empty()) {
    throw Error(ErrorKind::EmptyDataset, "train", "training split is empty");
  }
  TrainResult result;
  std::vector<std::size_t> order(split.train.size());
  std::vector<const SyntheticSample*> batch;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = i;
    }
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[state.rng.below(i)]);
    }
    double epoch_loss = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        batch.push_back(&split.train[order[i]]);
      }
      const auto stats = train_step<T>(model, batch, state);
      result.step_losses.push_back(stats.loss.total);
      epoch_loss += stats.loss.total;
      ++steps;
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (!last && (epoch + 1) % cfg.eval_every != 0) {
      continue;
    }
    const auto report = evaluate<T>(model, split.eval, kDefaultThresholds, state.step);
    result.evals.push_back(report);
    auto line = to_json(report);
    line["epoch"] = epoch + 1;
    line["train_loss"] = epoch_loss / static_cast<double>(steps);
    if (options.log) {
      options.log(line.dump());
    }
    const double score = report.precision_at(0.5);
    const bool improved = score > state.best_eval;
    if (improved) {
      state.best_eval = score;
    }
    if (options.out_dir) {
      std::ofstream metrics(*options.out_dir / "metrics.jsonl", std::ios::app);
      metrics << line.dump() << '\n';
      if (improved) {
        save_checkpoint(model, state, *options.out_dir / "best.ckpt");
      }
      save_checkpoint(model, state, *options.out_dir / "last.ckpt");
    }
  }
  result.final_eval = result.evals.back();
  return result;
}

#define SWIMVG_INSTANTIATE(T)                                                                                     \
  template Partition partition_parameters(const Model<T>&);                                                        \
  template TrainState<T> initial_state(const Model<T>&);                                                           \
  template LossBreakdown loss_and_grad(const Model<T>&, std::span<const SyntheticSample* const>, std::span<T>);   \
  template LossBreakdown batch_loss(const Model<T>&, std::span<const SyntheticSample* const>);                    \
  template StepStats train_step(Model<T>&, std::span<const SyntheticSample* const>, TrainState<T>&);              \
  template MetricsReport evaluate(const Model<T>&, std::span<const SyntheticSample>, const std::vector<double>&, \
                                  std::int64_t);                                                                   \
  template void save_checkpoint(const Model<T>&, const TrainState<T>&, const std::filesystem::path&);             \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&, const ModelConfig*);                        \
  template void jitter_tunable(Model<T>&, std::uint64_t, double);                                                 \
  template TrainResult train(Model<T>&, TrainState<T>&, const Split&, const TrainOptions&);

SWIMVG_INSTANTIATE(float)
SWIMVG_INSTANTIATE(double)

#undef SWIMVG_INSTANTIATE

}  // namespace swimvg
