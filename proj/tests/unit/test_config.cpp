#include <gtest/gtest.h>

#include "swimvg/config.hpp"
#include "swimvg/error.hpp"

namespace swimvg {
namespace {

ErrorKind kind_of(const Json& raw, std::string* subject = nullptr) {
  try {
    validate_config(raw);
  } catch (const Error& e) {
    if (subject != nullptr) {
      *subject = e.subject();
    }
    return e.kind();
  }
  ADD_FAILURE() << "config was accepted: " << raw.dump();
  return ErrorKind::Io;
}

TEST(Config, ToyProfileIsValid) {
  const auto cfg = validate_config(toy_profile());
  EXPECT_EQ(cfg.text_dim, 32);
  EXPECT_EQ(cfg.vision_depth, 4);
  EXPECT_EQ(cfg.cia_layers, (std::vector<int>{2, 3}));
  EXPECT_EQ(cfg.dosa_layers, (std::vector<int>{0, 1}));
  EXPECT_EQ(cfg.head_hidden_dim, 48);
}

TEST(Config, PaperProfileIsValid) {
  const auto cfg = validate_config(paper_profile());
  EXPECT_EQ(cfg.vision_dim, 768);
  EXPECT_EQ(cfg.text_dim, 512);
  EXPECT_EQ(cfg.bottleneck_dim, 56);
  EXPECT_DOUBLE_EQ(cfg.adapter_scale_vt, 0.2);
  EXPECT_DOUBLE_EQ(cfg.adapter_scale_t, 0.2);
  EXPECT_EQ(cfg.cia_layers.size(), 12u);
  EXPECT_EQ(cfg.cia_layers.front(), 12);
}

TEST(Config, IndivisiblePatchSizeNamesPatchSize) {
  Json raw = paper_profile();
  raw["patch_size"] = 15;
  std::string subject;
  EXPECT_EQ(kind_of(raw, &subject), ErrorKind::InvalidValue);
  EXPECT_EQ(subject, "patch_size");
}

TEST(Config, InvariantViolationsNameTheirKey) {
  const std::vector<std::pair<std::string, Json>> cases = {
      {"vision_heads", 5},      {"text_heads", 3},           {"bottleneck_dim", 33},
      {"bottleneck_dim", 0},    {"cia_layers", Json{0, 4}},  {"dosa_layers", Json{-1}},
      {"adapter_scale_vt", "x"}, {"lambda_l1", -1.0},        {"lambda_giou", -0.5},
  };
  for (const auto& [key, value] : cases) {
    Json raw = toy_profile();
    raw[key] = value;
    std::string subject;
    EXPECT_EQ(kind_of(raw, &subject), ErrorKind::InvalidValue) << key;
    EXPECT_EQ(subject, key);
  }
}

TEST(Config, MissingRequiredKey) {
  for (auto key : required_config_keys()) {
    Json raw = toy_profile();
    raw.erase(std::string(key));
    std::string subject;
    EXPECT_EQ(kind_of(raw, &subject), ErrorKind::MissingKey);
    EXPECT_EQ(subject, key);
  }
}

TEST(Config, UnknownKeyIsRejected) {
  Json raw = toy_profile();
  raw["swip_enable"] = true;
  std::string subject;
  EXPECT_EQ(kind_of(raw, &subject), ErrorKind::InvalidValue);
  EXPECT_EQ(subject, "swip_enable");
}

TEST(Config, SectionPrefixedKeysAreAccepted) {
  Json raw = toy_profile();
  raw["fusion.swip_enabled"] = false;
  EXPECT_FALSE(validate_config(raw).swip_enabled);
  raw["swip_enabled"] = true;
  EXPECT_EQ(kind_of(raw), ErrorKind::InvalidValue);  // same key twice
}

TEST(Config, RoundTripIsIdempotent) {
  for (const Json& raw : {toy_profile(), paper_profile()}) {
    const auto a = validate_config(raw);
    const auto b = validate_config(to_json(a));
    EXPECT_EQ(a, b);
    EXPECT_EQ(to_json(a), to_json(b));
  }
}

TEST(Config, OverrideReplacesAliasSpelling) {
  Json raw = toy_profile();
  raw["fusion.cia_enabled"] = true;
  apply_override(raw, "cia_enabled=false");
  apply_override(raw, "train.learning_rate=0.003");
  apply_override(raw, "cia_layers=[0,1]");
  apply_override(raw, "vision_pos_init=sincos");
  const auto cfg = validate_config(raw);
  EXPECT_FALSE(cfg.cia_enabled);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 0.003);
  EXPECT_EQ(cfg.cia_layers, (std::vector<int>{0, 1}));
  EXPECT_EQ(cfg.vision_pos_init, PosInit::Sincos);
  EXPECT_THROW(apply_override(raw, "no_equals_sign"), Error);
  EXPECT_THROW(apply_override(raw, "not_a_key=1"), Error);
}

TEST(Config, SincosNeedsDimDivisibleByFour) {
  Json raw = toy_profile();
  raw["vision_pos_init"] = "sincos";
  raw["vision_dim"] = 50;
  raw["vision_heads"] = 5;
  std::string subject;
  EXPECT_EQ(kind_of(raw, &subject), ErrorKind::InvalidValue);
  EXPECT_EQ(subject, "vision_pos_init");
}

TEST(Shapes, PatchCounts) {
  EXPECT_EQ(derive_shapes(validate_config(toy_profile())).patch_count, 64);
  EXPECT_EQ(derive_shapes(validate_config(paper_profile())).patch_count, 256);
  Json raw = toy_profile();
  raw["patch_size"] = 64;
  EXPECT_EQ(derive_shapes(validate_config(raw)).patch_count, 1);
}

TEST(Shapes, ToyTokenCountsFollowSwipSchedule) {
  const auto r = derive_shapes(validate_config(toy_profile()));
  EXPECT_EQ(r.vision_tokens_at_layer, (std::vector<int>{1 + 1 + 64, 1 + 2 + 64, 1 + 2 + 64, 1 + 2 + 64}));
  EXPECT_EQ(r.text_tokens, 13);
}

TEST(Shapes, TokenCountsNondecreasingAndCapped) {
  for (int l = 1; l <= 6; ++l) {
    for (int n = 1; n <= 6; ++n) {
      Json raw = toy_profile();
      raw["text_depth"] = l;
      raw["vision_depth"] = n;
      const auto cfg = validate_config(raw);
      const auto r = derive_shapes(cfg);
      ASSERT_EQ(r.vision_tokens_at_layer.size(), static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const int t = r.vision_tokens_at_layer[static_cast<std::size_t>(i)];
        EXPECT_LE(t, 1 + std::min(i + 1, l) + r.patch_count);
        if (i > 0) {
          EXPECT_GE(t, r.vision_tokens_at_layer[static_cast<std::size_t>(i - 1)]);
        }
      }
    }
  }
}

TEST(Shapes, DerivationIsPure) {
  const auto cfg = validate_config(paper_profile());
  EXPECT_EQ(derive_shapes(cfg), derive_shapes(cfg));
}

TEST(Shapes, SwipDisabledKeepsConstantTokenCount) {
  Json raw = toy_profile();
  raw["swip_enabled"] = false;
  const auto r = derive_shapes(validate_config(raw));
  for (int t : r.vision_tokens_at_layer) {
    EXPECT_EQ(t, 65);
  }
}

}  // namespace
}  // namespace swimvg
