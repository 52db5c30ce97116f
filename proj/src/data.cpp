#include "swimvg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace swimvg {

namespace {

constexpr std::array<Shape, 3> kShapes{Shape::Circle, Shape::Square, Shape::Triangle};
constexpr std::array<Color, 4> kColors{Color::Red, Color::Green, Color::Blue, Color::Yellow};
constexpr std::array<Relation, 4> kRelations{Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below};
constexpr int kPlacementTries = 50;

int extent_for(SizeClass s, int canvas) {
  return static_cast<int>(std::lround((s == SizeClass::Small ? 0.19 : 0.31) * canvas));
}

double box_iou(const SceneObject& a, const SceneObject& b) {
  const int iw = std::max(0, std::min(a.x + a.extent, b.x + b.extent) - std::max(a.x, b.x));
  const int ih = std::max(0, std::min(a.y + a.extent, b.y + b.extent) - std::max(a.y, b.y));
  const double inter = static_cast<double>(iw) * ih;
  const double uni = static_cast<double>(a.extent) * a.extent + static_cast<double>(b.extent) * b.extent - inter;
  return inter / uni;
}

bool covers(const SceneObject& o, double px, double py) {
  const double x0 = o.x;
  const double y0 = o.y;
  const double e = o.extent;
  if (px < x0 || px >= x0 + e || py < y0 || py >= y0 + e) {
    return false;
  }
  switch (o.shape) {
    case Shape::Square:
      return true;
    case Shape::Circle: {
      const double dx = px - o.cx();
      const double dy = py - o.cy();
      return dx * dx + dy * dy <= e * e / 4.0;
    }
    case Shape::Triangle:
      // Apex at the top center, base along the bottom edge.
      return std::abs(px - o.cx()) <= (py - y0) / 2.0;
  }
  return false;
}

std::string relation_word(Relation r) {
  switch (r) {
    case Relation::LeftOf:
      return "left";
    case Relation::RightOf:
      return "right";
    case Relation::Above:
      return "above";
    case Relation::Below:
      return "below";
  }
  return "";
}

bool try_place(Rng& rng, const GenConfig& cfg, Scene& scene) {
  const int n = rng.range(cfg.min_objects, cfg.max_objects);
  scene.objects.clear();
  for (int k = 0; k < n; ++k) {
    SceneObject o;
    o.shape = kShapes[rng.below(kShapes.size())];
    o.color = kColors[rng.below(kColors.size())];
    o.size = rng.bernoulli(0.5) ? SizeClass::Large : SizeClass::Small;
    o.extent = extent_for(o.size, cfg.canvas_size);
    bool placed = false;
    for (int t = 0; t < kPlacementTries && !placed; ++t) {
      o.x = rng.range(0, cfg.canvas_size - o.extent);
      o.y = rng.range(0, cfg.canvas_size - o.extent);
      placed = std::all_of(scene.objects.begin(), scene.objects.end(),
                           [&](const SceneObject& other) { return box_iou(o, other) < 0.1; });
    }
    if (!placed) {
      return false;
    }
    scene.objects.push_back(o);
  }
  return true;
}

std::vector<Expression> unique_expressions(const Scene& scene, std::size_t target, Expression::Kind kind) {
  const auto& t = scene.objects[target];
  std::vector<Expression> candidates;
  if (kind == Expression::Kind::ColorShape) {
    candidates.push_back({Expression::Kind::ColorShape, t.shape, t.color});
  } else if (kind == Expression::Kind::SizeColorShape) {
    candidates.push_back({Expression::Kind::SizeColorShape, t.shape, t.color, t.size});
  } else {
    for (std::size_t a = 0; a < scene.objects.size(); ++a) {
      if (a == target) {
        continue;
      }
      for (auto r : kRelations) {
        Expression e{Expression::Kind::Relational, t.shape, t.color, t.size, r, scene.objects[a].color,
                     scene.objects[a].shape};
        candidates.push_back(e);
      }
    }
  }
  std::vector<Expression> out;
  for (const auto& e : candidates) {
    if (e.kind == Expression::Kind::Relational) {
      // The anchor must itself be unambiguous.
      Expression anchor{Expression::Kind::ColorShape, e.anchor_shape, e.anchor_color};
      if (matching_objects(anchor, scene).size() != 1) {
        continue;
      }
    }
    const auto m = matching_objects(e, scene);
    if (m.size() == 1 && m[0] == target) {
      out.push_back(e);
    }
  }
  return out;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) {
    throw Error(ErrorKind::CorruptFile, "image", "truncated image file");
  }
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::string to_string(Shape s) {
  switch (s) {
    case Shape::Circle:
      return "circle";
    case Shape::Square:
      return "square";
    case Shape::Triangle:
      return "triangle";
  }
  return "";
}

std::string to_string(Color c) {
  switch (c) {
    case Color::Red:
      return "red";
    case Color::Green:
      return "green";
    case Color::Blue:
      return "blue";
    case Color::Yellow:
      return "yellow";
  }
  return "";
}

std::string to_string(SizeClass s) { return s == SizeClass::Small ? "small" : "large"; }

BoundingBox SceneObject::box(int canvas) const {
  const double s = canvas;
  return {cx() / s, cy() / s, extent / s, extent / s};
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Red:
      return {0.9f, 0.1f, 0.1f};
    case Color::Green:
      return {0.1f, 0.8f, 0.2f};
    case Color::Blue:
      return {0.15f, 0.25f, 0.95f};
    case Color::Yellow:
      return {0.95f, 0.9f, 0.1f};
  }
  return {kBackground, kBackground, kBackground};
}

std::vector<float> render_scene(const Scene& scene, int size) {
  std::vector<float> img(static_cast<std::size_t>(size) * size * 3, kBackground);
  const double scale = static_cast<double>(scene.canvas_size) / size;
  for (const auto& o : scene.objects) {
    const auto rgb = color_rgb(o.color);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (covers(o, (x + 0.5) * scale, (y + 0.5) * scale)) {
          float* px = &img[(static_cast<std::size_t>(y) * size + x) * 3];
          std::copy(rgb.begin(), rgb.end(), px);
        }
      }
    }
  }
  return img;
}

Vocab::Vocab()
    : words_{"<pad>", "<unk>",  "the",  "of",    "circle", "square", "triangle", "red",  "green",
             "blue",  "yellow", "small", "large", "left",   "right",  "above",    "below"} {}

int Vocab::id(const std::string& word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  return it == words_.end() ? kUnk : static_cast<int>(it - words_.begin());
}

const std::string& Vocab::word(int id) const {
  return words_.at(static_cast<std::size_t>(id < 0 || id >= size() ? kUnk : id));
}

const Vocab& default_vocab() {
  static const Vocab vocab;
  return vocab;
}

std::vector<int> tokenize_expression(const std::vector<std::string>& words, const Vocab& vocab, int length) {
  std::vector<int> ids(static_cast<std::size_t>(std::max(length, 0)), Vocab::kPad);
  for (std::size_t i = 0; i < words.size() && i < ids.size(); ++i) {
    ids[i] = vocab.id(words[i]);
  }
  return ids;
}

std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == Vocab::kPad) {
      break;
    }
    out.push_back(vocab.word(id));
  }
  return out;
}

std::vector<std::string> Expression::words() const {
  switch (kind) {
    case Kind::ColorShape:
      return {"the", to_string(color), to_string(shape)};
    case Kind::SizeColorShape:
      return {"the", to_string(size), to_string(color), to_string(shape)};
    case Kind::Relational: {
      std::vector<std::string> w{"the", to_string(shape), relation_word(relation)};
      if (relation == Relation::LeftOf || relation == Relation::RightOf) {
        w.emplace_back("of");
      }
      w.insert(w.end(), {"the", to_string(anchor_color), to_string(anchor_shape)});
      return w;
    }
  }
  return {};
}

double relation_margin(int canvas) { return canvas / 16.0; }

bool relation_holds(const SceneObject& a, Relation r, const SceneObject& b, int canvas) {
  const double m = relation_margin(canvas);
  switch (r) {
    case Relation::LeftOf:
      return a.cx() + m <= b.cx();
    case Relation::RightOf:
      return a.cx() >= b.cx() + m;
    case Relation::Above:
      return a.cy() + m <= b.cy();
    case Relation::Below:
      return a.cy() >= b.cy() + m;
  }
  return false;
}

std::vector<std::size_t> matching_objects(const Expression& e, const Scene& scene) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    bool ok = o.shape == e.shape;
    if (e.kind != Expression::Kind::Relational) {
      ok = ok && o.color == e.color;
    }
    if (e.kind == Expression::Kind::SizeColorShape) {
      ok = ok && o.size == e.size;
    }
    if (ok && e.kind == Expression::Kind::Relational) {
      ok = false;
      for (std::size_t a = 0; a < scene.objects.size() && !ok; ++a) {
        const auto& anchor = scene.objects[a];
        ok = a != i && anchor.color == e.anchor_color && anchor.shape == e.anchor_shape &&
             relation_holds(o, e.relation, anchor, scene.canvas_size);
      }
    }
    if (ok) {
      out.push_back(i);
    }
  }
  return out;
}

GenConfig GenConfig::from_model(const ModelConfig& cfg) {
  GenConfig g;
  g.canvas_size = cfg.image_size;
  g.min_objects = cfg.min_objects;
  g.max_objects = cfg.max_objects;
  g.ambiguity_rate = cfg.ambiguity_rate;
  g.text_length = cfg.max_text_len;
  return g;
}

ImageView SyntheticSample::view() const {
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(image.size() / 3))));
  return ImageView{image, s, s, 3};
}

SyntheticSample generate_sample(std::uint64_t seed, const GenConfig& cfg) {
  if (cfg.canvas_size < 32) {
    throw Error(ErrorKind::InvalidValue, "canvas_size", "canvas must be at least 32 pixels");
  }
  if (cfg.min_objects < 2 || cfg.max_objects < cfg.min_objects) {
    throw Error(ErrorKind::InvalidValue, "min_objects", "object count bounds must satisfy 2 <= min <= max");
  }
  Rng rng(seed);
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Scene scene;
    scene.canvas_size = cfg.canvas_size;
    if (!try_place(rng, cfg, scene)) {
      continue;
    }
    const auto n = scene.objects.size();
    const std::size_t target = rng.below(n);
    const auto shares_shape = [&] {
      for (std::size_t i = 0; i < n; ++i) {
        if (i != target && scene.objects[i].shape == scene.objects[target].shape) {
          return true;
        }
      }
      return false;
    };
    if (rng.bernoulli(cfg.ambiguity_rate) && !shares_shape()) {
      std::size_t other = rng.below(n - 1);
      other += other >= target ? 1 : 0;
      scene.objects[other].shape = scene.objects[target].shape;
    }

    // Pick a template among those that can name the target, then a filler.
    std::vector<std::vector<Expression>> options;
    for (auto kind : {Expression::Kind::ColorShape, Expression::Kind::SizeColorShape, Expression::Kind::Relational}) {
      auto u = unique_expressions(scene, target, kind);
      if (!u.empty()) {
        options.push_back(std::move(u));
      }
    }
    if (options.empty()) {
      continue;
    }
    const auto& chosen = options[rng.below(options.size())];
    const Expression expr = chosen[rng.below(chosen.size())];

    SyntheticSample s;
    s.seed = seed;
    s.target = target;
    s.expression = expr.words();
    s.word_ids = tokenize_expression(s.expression, default_vocab(), cfg.text_length);
    s.gt_box = scene.objects[target].box(cfg.canvas_size);
    s.ambiguous = shares_shape();
    s.image = render_scene(scene, cfg.canvas_size);
    s.scene = std::move(scene);
    return s;
  }
  throw Error(ErrorKind::GenerationExhausted, "seed " + std::to_string(seed),
              "no valid scene after " + std::to_string(cfg.max_attempts) + " attempts");
}

std::uint64_t train_seed(std::uint64_t seed, std::size_t index) { return (seed << 32) + index; }

std::uint64_t eval_seed(std::uint64_t seed, std::size_t index) { return (seed << 32) + (1ULL << 31) + index; }

std::vector<SyntheticSample> generate_range(const GenConfig& cfg, std::size_t n, std::uint64_t seed, bool eval) {
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(generate_sample(eval ? eval_seed(seed, i) : train_seed(seed, i), cfg));
  }
  return out;
}

Split make_split(const GenConfig& cfg, std::size_t n_train, std::size_t n_eval, std::uint64_t seed) {
  if (n_train < 1 || n_eval < 1) {
    throw Error(ErrorKind::InvalidValue, n_train < 1 ? "n_train" : "n_eval", "split sizes must be at least 1");
  }
  Split split;
  split.train = generate_range(cfg, n_train, seed, false);
  split.eval = generate_range(cfg, n_eval, seed, true);
  for (std::size_t i = 0; i < split.eval.size(); ++i) {
    (split.eval[i].ambiguous ? split.eval_ambiguous : split.eval_unambiguous).push_back(i);
  }
  return split;
}

std::uint64_t image_hash(const std::vector<float>& image) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : image) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int k = 0; k < 4; ++k) {
      const auto byte = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
      h = fnv1a(&byte, 1, h);
    }
  }
  return h;
}

void write_image(const std::filesystem::path& path, const std::vector<float>& image, int width, int height,
                 int channels) {
  if (image.size() != static_cast<std::size_t>(width) * height * channels) {
    throw Error(ErrorKind::ShapeMismatch, "image", "pixel count does not match the header");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw Error(ErrorKind::Io, path.string(), "cannot open for writing");
  }
  put_u32(os, static_cast<std::uint32_t>(width));
  put_u32(os, static_cast<std::uint32_t>(height));
  put_u32(os, static_cast<std::uint32_t>(channels));
  for (float v : image) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
}

std::vector<float> read_image(const std::filesystem::path& path, int& width, int& height, int& channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw Error(ErrorKind::Io, path.string(), "cannot open for reading");
  }
  width = static_cast<int>(get_u32(is));
  height = static_cast<int>(get_u32(is));
  channels = static_cast<int>(get_u32(is));
  std::vector<float> out(static_cast<std::size_t>(width) * height * channels);
  for (auto& v : out) {
    v = std::bit_cast<float>(get_u32(is));
  }
  return out;
}

void export_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) {
    throw Error(ErrorKind::Io, (dir / "manifest.jsonl").string(), "cannot open for writing");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".bin";
    const int side = s.view().width;
    write_image(dir / name.str(), s.image, side, side, 3);
    Json j;
    j["seed"] = s.seed;
    j["expression"] = s.expression;
    j["word_ids"] = s.word_ids;
    j["gt_box"] = {s.gt_box.cx, s.gt_box.cy, s.gt_box.w, s.gt_box.h};
    j["ambiguous"] = s.ambiguous;
    j["image"] = name.str();
    manifest << j.dump() << '\n';
  }
}

std::vector<SyntheticSample> import_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) {
    throw Error(ErrorKind::Io, (dir / "manifest.jsonl").string(), "cannot open for reading");
  }
  std::vector<SyntheticSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      const Json j = Json::parse(line);
      SyntheticSample s;
      s.seed = j.at("seed").get<std::uint64_t>();
      s.expression = j.at("expression").get<std::vector<std::string>>();
      s.word_ids = j.at("word_ids").get<std::vector<int>>();
      const auto b = j.at("gt_box").get<std::vector<double>>();
      if (b.size() != 4) {
        throw Error(ErrorKind::CorruptFile, "gt_box", "expected 4 values");
      }
      s.gt_box = {b[0], b[1], b[2], b[3]};
      s.ambiguous = j.at("ambiguous").get<bool>();
      int w = 0;
      int h = 0;
      int c = 0;
      s.image = read_image(dir / j.at("image").get<std::string>(), w, h, c);
      if (w != h || c != 3) {
        throw Error(ErrorKind::ShapeMismatch, "image", "expected a square RGB image");
      }
      out.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::CorruptFile, (dir / "manifest.jsonl").string(), e.what());
    }
  }
  return out;
}

}  // namespace swimvg
