#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "swimvg/backbone.hpp"
#include "swimvg/config.hpp"
#include "swimvg/head.hpp"

namespace swimvg {

enum class Shape { Circle, Square, Triangle };
enum class Color { Red, Green, Blue, Yellow };
enum class SizeClass { Small, Large };
enum class Relation { LeftOf, RightOf, Above, Below };

std::string to_string(Shape s);
std::string to_string(Color c);
std::string to_string(SizeClass s);

// Axis-aligned placement in canvas pixels: the object covers [x, x + extent) x [y, y + extent).
struct SceneObject {
  Shape shape = Shape::Square;
  Color color = Color::Red;
  SizeClass size = SizeClass::Small;
  int x = 0;
  int y = 0;
  int extent = 1;

  double cx() const { return x + extent / 2.0; }
  double cy() const { return y + extent / 2.0; }
  BoundingBox box(int canvas) const;
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  int canvas_size = 64;
};

inline constexpr float kBackground = 0.5f;
std::array<float, 3> color_rgb(Color c);

// Row-major [size x size x 3]. Integer-grid coverage test at pixel centers,
// no anti-aliasing; later objects paint over earlier ones.
std::vector<float> render_scene(const Scene& scene, int size);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
};

const Vocab& default_vocab();

// OOV -> UNK, right-padded with PAD, truncated to L.
std::vector<int> tokenize_expression(const std::vector<std::string>& words, const Vocab& vocab, int length);
// Stops at the first PAD.
std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocab& vocab);

// A parsed referring expression. Attribute templates leave `relation` empty.
struct Expression {
  enum class Kind { ColorShape, SizeColorShape, Relational } kind = Kind::ColorShape;
  Shape shape = Shape::Circle;
  Color color = Color::Red;
  SizeClass size = SizeClass::Small;
  Relation relation = Relation::LeftOf;
  Color anchor_color = Color::Red;
  Shape anchor_shape = Shape::Circle;

  std::vector<std::string> words() const;
};

// Minimum center offset (pixels) for a spatial relation to hold.
double relation_margin(int canvas);
bool relation_holds(const SceneObject& a, Relation r, const SceneObject& b, int canvas);
// Indices of all scene objects satisfying the expression.
std::vector<std::size_t> matching_objects(const Expression& e, const Scene& scene);

struct GenConfig {
  int canvas_size = 64;
  int min_objects = 2;
  int max_objects = 4;
  double ambiguity_rate = 0.5;
  int max_attempts = 100;
  int text_length = 12;

  static GenConfig from_model(const ModelConfig& cfg);
};

struct SyntheticSample {
  std::uint64_t seed = 0;
  Scene scene;
  std::size_t target = 0;
  std::vector<float> image;  // [S x S x 3] in [0, 1]
  std::vector<std::string> expression;
  std::vector<int> word_ids;  // length text_length
  BoundingBox gt_box;
  bool ambiguous = false;  // another object shares the target's shape

  ImageView view() const;
};

SyntheticSample generate_sample(std::uint64_t seed, const GenConfig& cfg);

struct Split {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> eval;
  std::vector<std::size_t> eval_ambiguous;
  std::vector<std::size_t> eval_unambiguous;
};

std::uint64_t train_seed(std::uint64_t seed, std::size_t index);
std::uint64_t eval_seed(std::uint64_t seed, std::size_t index);
std::vector<SyntheticSample> generate_range(const GenConfig& cfg, std::size_t n, std::uint64_t seed, bool eval);
Split make_split(const GenConfig& cfg, std::size_t n_train, std::size_t n_eval, std::uint64_t seed);

std::uint64_t image_hash(const std::vector<float>& image);

// Binary image: width, height, channels as little-endian int32, then
// row-major float32 pixels.
void write_image(const std::filesystem::path& path, const std::vector<float>& image, int width, int height,
                 int channels);
std::vector<float> read_image(const std::filesystem::path& path, int& width, int& height, int& channels);

// manifest.jsonl plus images/NNNNNN.bin.
void export_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples);
// Reads an exported directory back. Scenes are not stored, so `scene` is empty.
std::vector<SyntheticSample> import_dataset(const std::filesystem::path& dir);

}  // namespace swimvg
