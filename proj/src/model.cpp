#include "swimvg/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace swimvg {

namespace {

enum class Init { Normal, Zero, One, XavierUniform, KaimingNormal };

struct Layout {
  std::vector<Init> rules;
};

template <typename T>
void insert_row(Mat<T>& x, Index at, const Mat<T>& row) {
  Mat<T> out(x.rows() + 1, x.cols());
  out.topRows(at) = x.topRows(at);
  out.row(at) = row.row(0);
  out.bottomRows(x.rows() - at) = x.bottomRows(x.rows() - at);
  x = std::move(out);
}

template <typename T>
void remove_row(Mat<T>& x, Index at) {
  Mat<T> out(x.rows() - 1, x.cols());
  out.topRows(at) = x.topRows(at);
  out.bottomRows(x.rows() - at - 1) = x.bottomRows(x.rows() - at - 1);
  x = std::move(out);
}

// Row t is patch (x, y) = (t % grid, t / grid). Columns hold, for q = dim / 4
// frequencies w_f = 100^(-f/q): sin(x w), cos(x w), sin(y w), cos(y w).
template <typename T>
void fill_sincos(MatMap<T> pos, int grid, double scale) {
  const Index q = pos.cols() / 4;
  for (Index t = 0; t < pos.rows(); ++t) {
    const double coord[2] = {static_cast<double>(t % grid), static_cast<double>(t / grid)};
    for (int axis = 0; axis < 2; ++axis) {
      for (Index f = 0; f < q; ++f) {
        const double w = std::pow(100.0, -static_cast<double>(f) / static_cast<double>(q));
        pos(t, 2 * axis * q + f) = static_cast<T>(scale * std::sin(coord[axis] * w));
        pos(t, 2 * axis * q + q + f) = static_cast<T>(scale * std::cos(coord[axis] * w));
      }
    }
  }
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  build_layout();
  initialize();
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, LayoutOnly) : cfg_(cfg) {
  build_layout();
}

// Parameters are added in a fixed order; initialize() walks the same order so
// a given seed always produces the same weights.
template <typename T>
void Model<T>::build_layout() {
  const Index ct = cfg_.text_dim;
  const Index cv = cfg_.vision_dim;
  const Index cd = cfg_.bottleneck_dim;
  const Index hidden = cfg_.head_hidden_dim;
  const auto frozen = Trainability::Frozen;
  const auto tunable = Trainability::Tunable;

  auto encoder_layer = [&](const std::string& prefix, Index dim, ParamGroup group) {
    EncoderLayerIds l;
    auto norm = [&](const std::string& name) {
      return ops::LayerNormIds{params_.add(prefix + name + ".gamma", 1, dim, group, frozen),
                               params_.add(prefix + name + ".beta", 1, dim, group, frozen)};
    };
    auto lin = [&](const std::string& name, Index in, Index out) {
      return ops::LinearIds{params_.add(prefix + name + ".weight", in, out, group, frozen),
                            params_.add(prefix + name + ".bias", 1, out, group, frozen)};
    };
    l.ln1 = norm("ln1");
    l.attn.q = lin("attn.q", dim, dim);
    l.attn.k = lin("attn.k", dim, dim);
    l.attn.v = lin("attn.v", dim, dim);
    l.attn.o = lin("attn.o", dim, dim);
    l.ln2 = norm("ln2");
    l.fc1 = lin("mlp.fc1", dim, 4 * dim);
    l.fc2 = lin("mlp.fc2", 4 * dim, dim);
    return l;
  };

  ids_.word_embed = params_.add("text.word_embed", cfg_.vocab_size, ct, ParamGroup::TextBackbone, frozen);
  ids_.text_pos = params_.add("text.pos_embed", cfg_.max_text_len, ct, ParamGroup::TextBackbone, frozen);
  for (int i = 0; i < cfg_.text_depth; ++i) {
    ids_.text_layers.push_back(encoder_layer("text.layer" + std::to_string(i) + ".", ct, ParamGroup::TextBackbone));
  }
  ids_.text_norm = {params_.add("text.norm.gamma", 1, ct, ParamGroup::TextBackbone, frozen),
                    params_.add("text.norm.beta", 1, ct, ParamGroup::TextBackbone, frozen)};

  const Index patch_dim = static_cast<Index>(cfg_.patch_size) * cfg_.patch_size * cfg_.in_channels;
  ids_.patch_embed = {params_.add("vision.patch_embed.weight", patch_dim, cv, ParamGroup::VisionBackbone, frozen),
                      params_.add("vision.patch_embed.bias", 1, cv, ParamGroup::VisionBackbone, frozen)};
  ids_.vision_pos = params_.add("vision.pos_embed", cfg_.patch_count(), cv, ParamGroup::VisionBackbone, frozen);
  for (int i = 0; i < cfg_.vision_depth; ++i) {
    ids_.vision_layers.push_back(
        encoder_layer("vision.layer" + std::to_string(i) + ".", cv, ParamGroup::VisionBackbone));
  }
  ids_.vision_norm = {params_.add("vision.norm.gamma", 1, cv, ParamGroup::VisionBackbone, frozen),
                      params_.add("vision.norm.beta", 1, cv, ParamGroup::VisionBackbone, frozen)};

  if (cfg_.text_branch_used()) {
    ids_.prompt = params_.add("prompt", 1, ct, ParamGroup::Prompt, tunable);
  }
  ids_.reg = params_.add("reg", 1, cv, ParamGroup::Reg, tunable);

  std::optional<ParamId> shared;
  if ((cfg_.swip_enabled && cfg_.swip_bridge_shared) || (cfg_.cia_active() && cfg_.cia_bridge_shared)) {
    shared = params_.add("bridge.shared", ct, cv, ParamGroup::Bridge, tunable, true);
  }
  const auto schedule = swip_schedule(cfg_);
  for (std::size_t j = 0; j < schedule.size(); ++j) {
    if (schedule[j].inject) {
      ids_.swip_bridges.push_back(cfg_.swip_bridge_shared
                                      ? *shared
                                      : params_.add("bridge.swip" + std::to_string(j), ct, cv, ParamGroup::Bridge,
                                                    tunable, true));
    }
  }

  ids_.cia.resize(static_cast<std::size_t>(cfg_.vision_depth));
  for (int j = 0; j < cfg_.vision_depth; ++j) {
    if (!cfg_.has_cia_at(j)) {
      continue;
    }
    const std::string p = "cia" + std::to_string(j) + ".";
    CiaIds c;
    c.down = params_.add(p + "down", cv, cd, ParamGroup::Cia, tunable, true);
    c.linear = params_.add(p + "linear", cd, cd, ParamGroup::Cia, tunable, true);
    c.up = params_.add(p + "up", cd, cv, ParamGroup::Cia, tunable, true);
    c.wq = params_.add(p + "mhca.wq", cd, cd, ParamGroup::Cia, tunable, true);
    c.wk = params_.add(p + "mhca.wk", cv, cd, ParamGroup::Cia, tunable, true);
    c.wv = params_.add(p + "mhca.wv", cv, cd, ParamGroup::Cia, tunable, true);
    c.bridge = cfg_.cia_bridge_shared
                   ? *shared
                   : params_.add("bridge.cia" + std::to_string(j), ct, cv, ParamGroup::Bridge, tunable, true);
    ids_.cia[static_cast<std::size_t>(j)] = c;
  }

  ids_.dosa.resize(static_cast<std::size_t>(cfg_.text_depth));
  for (int i = 0; i < cfg_.text_depth; ++i) {
    if (!cfg_.has_dosa_at(i)) {
      continue;
    }
    const std::string p = "dosa" + std::to_string(i) + ".";
    ids_.dosa[static_cast<std::size_t>(i)] =
        DosaIds{params_.add(p + "down", ct, cd, ParamGroup::Dosa, tunable, true),
                params_.add(p + "up", cd, ct, ParamGroup::Dosa, tunable, true)};
  }

  ids_.head.hidden = {params_.add("head.hidden.weight", cv, hidden, ParamGroup::Head, tunable, true),
                      params_.add("head.hidden.bias", 1, hidden, ParamGroup::Head, tunable)};
  ids_.head.out = {params_.add("head.out.weight", hidden, 4, ParamGroup::Head, tunable, true),
                   params_.add("head.out.bias", 1, 4, ParamGroup::Head, tunable)};
}

template <typename T>
void Model<T>::initialize() {
  Rng rng(cfg_.seed);
  auto fill = [&](ParamId id, Init rule) {
    auto m = params_[id];
    const auto& info = params_.info(id);
    switch (rule) {
      case Init::Zero:
        m.setZero();
        break;
      case Init::One:
        m.setOnes();
        break;
      case Init::Normal:
        for (Index k = 0; k < m.size(); ++k) {
          m.data()[k] = static_cast<T>(rng.normal(0.0, cfg_.backbone_init_std));
        }
        break;
      case Init::XavierUniform: {
        const double bound = std::sqrt(6.0 / static_cast<double>(info.rows + info.cols));
        for (Index k = 0; k < m.size(); ++k) {
          m.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
        }
        break;
      }
      case Init::KaimingNormal: {
        const double std = std::sqrt(2.0 / static_cast<double>(info.rows));
        for (Index k = 0; k < m.size(); ++k) {
          m.data()[k] = static_cast<T>(rng.normal(0.0, std));
        }
        break;
      }
    }
  };

  auto backbone_layer = [&](const EncoderLayerIds& l) {
    fill(l.ln1.gamma, Init::One);
    fill(l.ln1.beta, Init::Zero);
    for (const auto* lin : {&l.attn.q, &l.attn.k, &l.attn.v, &l.attn.o, &l.fc1, &l.fc2}) {
      fill(lin->weight, Init::Normal);
      fill(*lin->bias, Init::Zero);
    }
    fill(l.ln2.gamma, Init::One);
    fill(l.ln2.beta, Init::Zero);
  };

  fill(ids_.word_embed, Init::Normal);
  fill(ids_.text_pos, Init::Normal);
  for (const auto& l : ids_.text_layers) {
    backbone_layer(l);
  }
  fill(ids_.text_norm.gamma, Init::One);
  fill(ids_.text_norm.beta, Init::Zero);
  fill(ids_.patch_embed.weight, Init::Normal);
  fill(*ids_.patch_embed.bias, Init::Zero);
  fill(ids_.vision_pos, Init::Normal);
  if (cfg_.vision_pos_init == PosInit::Sincos) {
    fill_sincos(params_[ids_.vision_pos], cfg_.image_size / cfg_.patch_size, cfg_.vision_pos_scale);
  }
  for (const auto& l : ids_.vision_layers) {
    backbone_layer(l);
  }
  fill(ids_.vision_norm.gamma, Init::One);
  fill(ids_.vision_norm.beta, Init::Zero);

  if (ids_.prompt) {
    fill(*ids_.prompt, Init::XavierUniform);
  }
  fill(ids_.reg, Init::XavierUniform);
  std::vector<ParamId> bridges = ids_.swip_bridges;
  for (const auto& c : ids_.cia) {
    if (c) {
      bridges.push_back(c->bridge);
    }
  }
  std::sort(bridges.begin(), bridges.end());
  bridges.erase(std::unique(bridges.begin(), bridges.end()), bridges.end());
  for (auto b : bridges) {
    fill(b, Init::KaimingNormal);
  }
  for (const auto& c : ids_.cia) {
    if (c) {
      fill(c->down, Init::KaimingNormal);
      fill(c->linear, Init::KaimingNormal);
      fill(c->up, Init::Zero);
      fill(c->wq, Init::KaimingNormal);
      fill(c->wk, Init::KaimingNormal);
      fill(c->wv, Init::KaimingNormal);
    }
  }
  for (const auto& d : ids_.dosa) {
    if (d) {
      fill(d->down, Init::KaimingNormal);
      fill(d->up, Init::Zero);
    }
  }
  fill(ids_.head.hidden.weight, Init::KaimingNormal);
  fill(*ids_.head.hidden.bias, Init::Zero);
  fill(ids_.head.out.weight, Init::XavierUniform);
  fill(*ids_.head.out.bias, Init::Zero);
}

template <typename T>
TokenSequence<T> Model<T>::embed_patches(const ImageView& image) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size || image.channels != cfg_.in_channels ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width) *
                                  static_cast<std::size_t>(image.channels)) {
    throw Error(ErrorKind::ShapeMismatch, "image",
                "expected " + std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) + "x" +
                    std::to_string(cfg_.in_channels) + " pixels");
  }
  const Mat<T> patches = patchify<T>(image, cfg_.patch_size);
  TokenSequence<T> out;
  out.data.resize(patches.rows() + 1, cfg_.vision_dim);
  out.data.row(0) = params_[ids_.reg].row(0);
  out.data.bottomRows(patches.rows()) = ops::linear(patches, params_, ids_.patch_embed) + params_[ids_.vision_pos];
  out.roles.assign(static_cast<std::size_t>(patches.rows()) + 1, TokenRole::Patch);
  out.roles[0] = TokenRole::Reg;
  return out;
}

template <typename T>
std::vector<int> Model<T>::checked_ids(std::span<const int> word_ids) const {
  std::vector<int> ids(static_cast<std::size_t>(cfg_.max_text_len), 0);
  for (std::size_t i = 0; i < word_ids.size(); ++i) {
    if (word_ids[i] < 0 || word_ids[i] >= cfg_.vocab_size) {
      throw Error(ErrorKind::VocabOverflow, "word_ids",
                  "id " + std::to_string(word_ids[i]) + " outside [0, " + std::to_string(cfg_.vocab_size) + ")");
    }
    if (i < ids.size()) {
      ids[i] = word_ids[i];
    }
  }
  return ids;
}

template <typename T>
void Model<T>::run_text(const std::vector<int>& ids, ForwardCache<T>& cache, std::vector<Mat<T>>* post_mha,
                        Mat<T>* final_tokens) const {
  const Index len = static_cast<Index>(ids.size());
  Mat<T> x(len + 1, cfg_.text_dim);
  if (ids_.prompt) {
    x.row(0) = params_[*ids_.prompt].row(0);
  } else {
    x.row(0).setZero();
  }
  const auto embed = params_[ids_.word_embed];
  const auto pos = params_[ids_.text_pos];
  cache.text_pad.assign(static_cast<std::size_t>(len) + 1, 0);
  for (Index i = 0; i < len; ++i) {
    x.row(i + 1) = embed.row(ids[static_cast<std::size_t>(i)]) + pos.row(i);
    cache.text_pad[static_cast<std::size_t>(i) + 1] = ids[static_cast<std::size_t>(i)] == 0 ? 1 : 0;
  }
  cache.text_used = true;
  cache.text_layers.assign(static_cast<std::size_t>(cfg_.text_depth), {});
  cache.prompts.assign(static_cast<std::size_t>(cfg_.text_depth), {});
  for (int i = 0; i < cfg_.text_depth; ++i) {
    auto& lc = cache.text_layers[static_cast<std::size_t>(i)];
    const auto& lid = ids_.text_layers[static_cast<std::size_t>(i)];
    Mat<T> h = attention_block(x, params_, lid, cfg_.text_heads, cache.text_pad, &lc.attn);
    lc.post_mha = h;
    if (post_mha != nullptr) {
      post_mha->push_back(h);
    }
    if (const auto& d = ids_.dosa[static_cast<std::size_t>(i)]) {
      lc.dosa.emplace();
      h = dosa_forward(h, params_, *d, static_cast<T>(cfg_.adapter_scale_t), &*lc.dosa);
    }
    x = ffn_block(h, params_, lid, &lc.ffn);
    cache.prompts[static_cast<std::size_t>(i)] = x.topRows(1);
  }
  if (final_tokens != nullptr) {
    *final_tokens = ops::layer_norm<T>(x, params_, ids_.text_norm, nullptr);
  }
}

template <typename T>
TextEncoding<T> Model<T>::encode_text(std::span<const int> word_ids) const {
  ForwardCache<T> cache;
  TextEncoding<T> out;
  run_text(checked_ids(word_ids), cache, &out.trace.post_mha, &out.final_tokens);
  out.prompts = cache.prompts;
  out.pad = cache.text_pad;
  out.trace.final_attention = cache.text_layers.back().attn.attn.probs;
  return out;
}

template <typename T>
Mat<T> Model<T>::run_vision(const TokenSequence<T>& tokens, const VisionInputs<T>& inputs, ForwardCache<T>& cache,
                            std::vector<Mat<T>>* post_mha, std::vector<int>* counts) const {
  const auto schedule = swip_schedule(cfg_);
  const auto injections = static_cast<std::size_t>(
      std::count_if(schedule.begin(), schedule.end(), [](const SwipStep& s) { return s.inject; }));
  if (inputs.swip_tokens.size() != injections) {
    throw Error(ErrorKind::ScheduleMismatch, "swip_tokens",
                "schedule expects " + std::to_string(injections) + " tokens, got " +
                    std::to_string(inputs.swip_tokens.size()));
  }
  if (cfg_.cia_active() && inputs.text_features.size() != static_cast<std::size_t>(cfg_.text_depth)) {
    throw Error(ErrorKind::ScheduleMismatch, "text_features", "CIA needs post-MHA text features for every text layer");
  }
  if (tokens.count(TokenRole::Reg) != 1) {
    throw Error(ErrorKind::ShapeMismatch, "tokens", "vision sequence must hold exactly one REG token");
  }

  Mat<T> x = tokens.data;
  std::vector<TokenRole> roles = tokens.roles;
  std::size_t next_swip = 0;
  cache.vision_layers.assign(static_cast<std::size_t>(cfg_.vision_depth), {});
  for (int j = 0; j < cfg_.vision_depth; ++j) {
    auto& lc = cache.vision_layers[static_cast<std::size_t>(j)];
    const auto& lid = ids_.vision_layers[static_cast<std::size_t>(j)];
    if (schedule[static_cast<std::size_t>(j)].inject) {
      // After REG and every Swip token already carried in the sequence.
      const auto at = static_cast<Index>(1 + std::count(roles.begin(), roles.end(), TokenRole::Swip));
      insert_row(x, at, inputs.swip_tokens[next_swip++]);
      roles.insert(roles.begin() + at, TokenRole::Swip);
      lc.injected_row = at;
    }
    lc.roles = roles;
    if (counts != nullptr) {
      counts->push_back(static_cast<int>(x.rows()));
    }
    Mat<T> h = attention_block<T>(x, params_, lid, cfg_.vision_heads, {}, &lc.attn);
    if (post_mha != nullptr) {
      post_mha->push_back(h);
    }
    if (const auto& c = ids_.cia[static_cast<std::size_t>(j)]) {
      lc.cia_text_layer = std::min(j, cfg_.text_depth - 1);
      lc.cia.emplace();
      h = cia_forward(h, inputs.text_features[static_cast<std::size_t>(lc.cia_text_layer)], params_, *c,
                      cfg_.cia_heads, static_cast<T>(cfg_.adapter_scale_vt), inputs.text_pad, &*lc.cia);
    }
    x = ffn_block(h, params_, lid, &lc.ffn);
  }
  cache.final_roles = roles;
  return ops::layer_norm(x, params_, ids_.vision_norm, &cache.vision_norm);
}

template <typename T>
VisionEncoding<T> Model<T>::encode_vision(const TokenSequence<T>& tokens, const VisionInputs<T>& inputs) const {
  ForwardCache<T> cache;
  VisionEncoding<T> out;
  out.final_tokens.data = run_vision(tokens, inputs, cache, &out.trace.post_mha, &out.tokens_per_layer);
  out.final_tokens.roles = cache.final_roles;
  out.trace.final_attention = cache.vision_layers.back().attn.attn.probs;
  return out;
}

template <typename T>
std::array<T, 4> Model<T>::forward(const ImageView& image, std::span<const int> word_ids,
                                   ForwardCache<T>* cache) const {
  ForwardCache<T> local;
  ForwardCache<T>& c = cache != nullptr ? *cache : local;
  c = ForwardCache<T>{};
  const TokenSequence<T> tokens = embed_patches(image);
  VisionInputs<T> inputs;
  if (cfg_.text_branch_used()) {
    run_text(checked_ids(word_ids), c, nullptr, nullptr);
    const auto schedule = swip_schedule(cfg_);
    for (std::size_t j = 0, k = 0; j < schedule.size(); ++j) {
      if (schedule[j].inject) {
        const auto src = static_cast<std::size_t>(*schedule[j].source_text_layer);
        inputs.swip_tokens.push_back(bridge_project(c.prompts[src], params_, ids_.swip_bridges[k++]));
      }
    }
    if (cfg_.cia_active()) {
      for (const auto& lc : c.text_layers) {
        inputs.text_features.push_back(lc.post_mha);
      }
      inputs.text_pad = c.text_pad;
    }
  }
  const Mat<T> final_tokens = run_vision(tokens, inputs, c, nullptr, nullptr);
  return head_forward<T>(final_tokens.topRows(1), params_, ids_.head, &c.head);
}

template <typename T>
void Model<T>::backward(const ForwardCache<T>& c, const std::array<T, 4>& d_box, std::span<T> grads) const {
  const Mat<T> dreg = head_backward(d_box, c.head, params_, ids_.head, grads);
  Mat<T> dfinal = Mat<T>::Zero(static_cast<Index>(c.final_roles.size()), cfg_.vision_dim);
  dfinal.row(0) = dreg.row(0);
  Mat<T> dx = ops::layer_norm_backward(dfinal, c.vision_norm, params_, ids_.vision_norm, grads);

  const auto text_rows = static_cast<Index>(c.text_pad.size());
  std::vector<Mat<T>> dtext_post;
  std::vector<Mat<T>> dprompt;
  if (c.text_used) {
    dtext_post.assign(static_cast<std::size_t>(cfg_.text_depth), Mat<T>::Zero(text_rows, cfg_.text_dim));
    dprompt.assign(static_cast<std::size_t>(cfg_.text_depth), Mat<T>::Zero(1, cfg_.text_dim));
  }

  const auto schedule = swip_schedule(cfg_);
  for (int j = cfg_.vision_depth - 1; j >= 0; --j) {
    const auto& lc = c.vision_layers[static_cast<std::size_t>(j)];
    const auto& lid = ids_.vision_layers[static_cast<std::size_t>(j)];
    Mat<T> dh = ffn_block_backward(dx, lc.ffn, params_, lid, grads);
    if (lc.cia) {
      Mat<T> dtext;
      dh = cia_backward(dh, *lc.cia, params_, *ids_.cia[static_cast<std::size_t>(j)], cfg_.cia_heads,
                        static_cast<T>(cfg_.adapter_scale_vt), grads, dtext);
      dtext_post[static_cast<std::size_t>(lc.cia_text_layer)] += dtext;
    }
    dx = attention_block_backward(dh, lc.attn, params_, lid, cfg_.vision_heads, grads);
    if (lc.injected_row) {
      const auto src = static_cast<std::size_t>(*schedule[static_cast<std::size_t>(j)].source_text_layer);
      const Mat<T> dm = dx.row(*lc.injected_row);
      dprompt[src] += bridge_project_backward(c.prompts[src], dm, params_,
                                              ids_.swip_bridges[static_cast<std::size_t>(j)], grads);
      remove_row(dx, *lc.injected_row);
    }
  }
  if (T* g = params_.grad_slot(grads, ids_.reg)) {
    grad_view(g, 1, cfg_.vision_dim) += dx.row(0);
  }

  if (!c.text_used) {
    return;
  }
  Mat<T> dxt = Mat<T>::Zero(text_rows, cfg_.text_dim);
  for (int i = cfg_.text_depth - 1; i >= 0; --i) {
    const auto& lc = c.text_layers[static_cast<std::size_t>(i)];
    const auto& lid = ids_.text_layers[static_cast<std::size_t>(i)];
    dxt.row(0) += dprompt[static_cast<std::size_t>(i)].row(0);
    Mat<T> dh = ffn_block_backward(dxt, lc.ffn, params_, lid, grads);
    if (lc.dosa) {
      dh = dosa_backward(dh, *lc.dosa, params_, *ids_.dosa[static_cast<std::size_t>(i)],
                         static_cast<T>(cfg_.adapter_scale_t), grads);
    }
    dh += dtext_post[static_cast<std::size_t>(i)];
    dxt = attention_block_backward(dh, lc.attn, params_, lid, cfg_.text_heads, grads);
  }
  if (ids_.prompt) {
    if (T* g = params_.grad_slot(grads, *ids_.prompt)) {
      grad_view(g, 1, cfg_.text_dim) += dxt.row(0);
    }
  }
}

template <typename T>
Mat<double> Model<T>::attention_grid(const ForwardCache<T>& cache, AttentionQuery query) const {
  const auto& last = cache.vision_layers.back();
  const auto& probs = last.attn.attn.probs;
  std::vector<Index> rows;
  std::vector<Index> patch_cols;
  for (std::size_t i = 0; i < last.roles.size(); ++i) {
    const auto role = last.roles[i];
    if ((query == AttentionQuery::Reg && role == TokenRole::Reg) ||
        (query == AttentionQuery::Swip && role == TokenRole::Swip)) {
      rows.push_back(static_cast<Index>(i));
    }
    if (role == TokenRole::Patch) {
      patch_cols.push_back(static_cast<Index>(i));
    }
  }
  if (rows.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "attention_query", "no token of the requested role in the final layer");
  }
  const int side = cfg_.image_size / cfg_.patch_size;
  Mat<double> grid = Mat<double>::Zero(side, side);
  const double norm = 1.0 / static_cast<double>(probs.size() * rows.size());
  for (const auto& head : probs) {
    for (auto r : rows) {
      for (std::size_t p = 0; p < patch_cols.size(); ++p) {
        grid(static_cast<Index>(p) / side, static_cast<Index>(p) % side) +=
            static_cast<double>(head(r, patch_cols[p])) * norm;
      }
    }
  }
  return grid;
}

template class Model<float>;
template class Model<double>;

}  // namespace swimvg
