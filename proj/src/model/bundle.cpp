#include "noduleclip/model/bundle.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "noduleclip/common/error.hpp"

namespace noduleclip::model {
namespace {

constexpr std::string_view kCheckpointFormat = "noduleclip-checkpoint-v1";

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void check_stack(const preprocess::ViewStack& s, int image_size) {
  const std::size_t per_view = 3 * static_cast<std::size_t>(s.size) * s.size;
  if (s.size <= 0 || s.data.size() % per_view != 0 || s.data.size() / per_view != preprocess::kNumViews) {
    throw ValidationError("expected 9 views of 3 x " + std::to_string(s.size) + " x " + std::to_string(s.size));
  }
  if (s.size != image_size) {
    throw ValidationError("view size " + std::to_string(s.size) + " does not match encoder image size " +
                          std::to_string(image_size));
  }
}

std::vector<ag::Segment> uniform_segments(Eigen::Index count, Eigen::Index length) {
  std::vector<ag::Segment> segs;
  segs.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) segs.push_back({i * length, length});
  return segs;
}

}  // namespace

ag::Matrix extract_patches(const std::vector<const preprocess::ViewStack*>& stacks, int patch_size) {
  if (stacks.empty()) return ag::Matrix(0, 3 * patch_size * patch_size);
  const int size = stacks.front()->size;
  const int grid = size / patch_size;
  const Eigen::Index per_image = static_cast<Eigen::Index>(grid) * grid;
  const Eigen::Index rows = static_cast<Eigen::Index>(stacks.size()) * preprocess::kNumViews * per_image;
  ag::Matrix out(rows, 3 * patch_size * patch_size);
  Eigen::Index r = 0;
  for (const auto* s : stacks) {
    for (int v = 0; v < preprocess::kNumViews; ++v) {
      for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx, ++r) {
          double* dst = out.row(r).data();
          for (int c = 0; c < 3; ++c) {
            for (int py = 0; py < patch_size; ++py) {
              const float* src = &s->data[v * s->view_stride() +
                                          (static_cast<std::size_t>(c) * size + gy * patch_size + py) * size +
                                          gx * patch_size];
              for (int px = 0; px < patch_size; ++px) *dst++ = src[px];
            }
          }
        }
      }
    }
  }
  return out;
}

ag::Var VisionEncoder::forward(const ag::Matrix& patches, Eigen::Index images, const ForwardContext& ctx) const {
  const Eigen::Index per_image = static_cast<Eigen::Index>(config.grid()) * config.grid();
  if (patches.rows() != images * per_image || patches.cols() != config.patch_dim()) {
    throw ValidationError("patch matrix shape does not match the vision config");
  }
  ag::Var tokens;
  if (conv1.requires_grad()) {
    tokens = ag::matmul_nt(ag::constant(patches), conv1);
  } else {
    tokens = ag::constant(patches * conv1.value().transpose());
  }
  return forward_tokens(tokens, images, ctx);
}

ag::Var VisionEncoder::forward_tokens(const ag::Var& tokens, Eigen::Index images, const ForwardContext& ctx) const {
  const Eigen::Index per_image = static_cast<Eigen::Index>(config.grid()) * config.grid();
  ag::Var x = ag::assemble_tokens(tokens, class_embedding, positional_embedding, images);
  x = ln_pre.forward(x);
  x = transformer.forward(x, uniform_segments(images, per_image + 1), false, ctx);
  std::vector<Eigen::Index> cls(static_cast<std::size_t>(images));
  for (Eigen::Index i = 0; i < images; ++i) cls[static_cast<std::size_t>(i)] = i * (per_image + 1);
  return ln_post.forward(ag::gather_rows(x, cls));
}

std::vector<int> truncate_tokens(const std::vector<int>& ids, int context_length) {
  if (static_cast<int>(ids.size()) <= context_length) return ids;
  std::vector<int> out(ids.begin(), ids.begin() + (context_length - 1));
  out.push_back(ids.back());
  return out;
}

ag::Var TextEncoder::forward(const std::vector<std::vector<int>>& sequences, const ForwardContext& ctx) const {
  std::vector<Eigen::Index> flat;
  std::vector<ag::Segment> segments;
  std::vector<Eigen::Index> last;
  for (const auto& raw : sequences) {
    const auto ids = truncate_tokens(raw, config.context_length);
    if (ids.empty()) throw ValidationError("empty token sequence");
    const auto start = static_cast<Eigen::Index>(flat.size());
    for (int id : ids) {
      if (id < 0 || id >= config.vocab_size) {
        throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(config.vocab_size));
      }
      flat.push_back(id);
    }
    segments.push_back({start, static_cast<Eigen::Index>(ids.size())});
    last.push_back(start + static_cast<Eigen::Index>(ids.size()) - 1);
  }
  ag::Var x = ag::gather_rows(token_embedding, flat);
  x = ag::add_positional(x, positional_embedding, segments);
  x = transformer.forward(x, segments, true, ctx);
  return ln_final.forward(ag::gather_rows(x, last));
}

MilOutput MilAttention::forward(const ag::Var& features, Eigen::Index bag_size, const ForwardContext& ctx) const {
  if (bag_size <= 0 || features.rows() % bag_size != 0) {
    throw ValidationError("MIL input of " + std::to_string(features.rows()) + " rows is not a whole number of bags");
  }
  ag::Var h = ag::tanh(attention_v.forward(features, ctx));
  if (kind == MilKind::gated) h = ag::mul(h, ag::sigmoid(attention_u.forward(features, ctx)));
  const ag::Var scores = attention_w.forward(h, ctx);
  MilOutput out;
  out.weights = ag::segment_softmax(scores, bag_size);
  out.pooled = ag::segment_weighted_sum(out.weights, features, bag_size);
  return out;
}

ag::Var ProjectionHead::forward(const ag::Var& x, const ForwardContext& ctx) const {
  if (hidden.weight.defined()) return out.forward(ag::quick_gelu(hidden.forward(x, ctx)), ctx);
  return out.forward(x, ctx);
}

ModelBundle::ModelBundle(ModelConfig config, BaseSource base, bool layout_only)
    : config_(std::move(config)), base_(std::move(base)), store_(!layout_only, base_.seed) {
  config_.validate();
  if (!layout_only) {
    tokenizer_ = make_tokenizer(config_.tokenizer);
    if (tokenizer_->vocab_size() != config_.text.vocab_size) {
      throw ValidationError("tokenizer vocabulary size " + std::to_string(tokenizer_->vocab_size()) +
                            " does not match text vocab_size " + std::to_string(config_.text.vocab_size));
    }
  }

  const auto& vc = config_.vision;
  const auto& tc = config_.text;
  const double vsd = 1.0 / std::sqrt(static_cast<double>(vc.width));
  vision_.config = vc;
  vision_.conv1 = store_.create("visual.conv1.weight", vc.width, vc.patch_dim(), ParamGroup::base,
                                Init::gaussian(1.0 / std::sqrt(static_cast<double>(vc.patch_dim()))));
  vision_.class_embedding = store_.create("visual.class_embedding", 1, vc.width, ParamGroup::base, Init::gaussian(vsd));
  vision_.positional_embedding =
      store_.create("visual.positional_embedding", vc.tokens(), vc.width, ParamGroup::base, Init::gaussian(vsd));
  vision_.ln_pre = LayerNorm::create(store_, "visual.ln_pre", vc.width, ParamGroup::base);
  vision_.transformer = Transformer::create(store_, "visual.transformer", vc.width, vc.depth, vc.heads);
  vision_.ln_post = LayerNorm::create(store_, "visual.ln_post", vc.width, ParamGroup::base);

  text_.config = tc;
  text_.token_embedding =
      store_.create("token_embedding.weight", tc.vocab_size, tc.width, ParamGroup::base, Init::gaussian(0.02));
  text_.positional_embedding =
      store_.create("positional_embedding", tc.context_length, tc.width, ParamGroup::base, Init::gaussian(0.01));
  text_.transformer = Transformer::create(store_, "transformer", tc.width, tc.depth, tc.heads);
  text_.ln_final = LayerNorm::create(store_, "ln_final", tc.width, ParamGroup::base);

  const auto& ad = config_.adapter;
  if (config_.tuning == TuningMode::lora && ad.rank > 0) {
    vision_.transformer.attach_adapters(store_, "visual.transformer", ad.rank, ad.scale, ad.dropout);
    text_.transformer.attach_adapters(store_, "transformer", ad.rank, ad.scale, ad.dropout);
  }

  if (config_.heads.enabled) {
    const int h = config_.mil.hidden;
    const int e = config_.heads.embed_dim;
    auto sd = [](int in) { return Init::gaussian(1.0 / std::sqrt(static_cast<double>(in))); };
    mil_.kind = config_.mil.kind;
    mil_.attention_v = Linear::create(store_, "mil.attention_V", vc.width, h, true, ParamGroup::mil, sd(vc.width));
    if (mil_.kind == MilKind::gated) {
      mil_.attention_u = Linear::create(store_, "mil.attention_U", vc.width, h, true, ParamGroup::mil, sd(vc.width));
    }
    mil_.attention_w = Linear::create(store_, "mil.attention_w", h, 1, true, ParamGroup::mil, sd(h));

    auto make_projection = [&](const std::string& name, int in) {
      ProjectionHead p;
      const int ph = config_.heads.projection_hidden;
      const bool bias = config_.heads.projection_bias;
      if (ph > 0) {
        p.hidden = Linear::create(store_, name + ".hidden", in, ph, bias, ParamGroup::projection, sd(in));
        p.out = Linear::create(store_, name + ".fc", ph, e, bias, ParamGroup::projection, sd(ph));
      } else {
        p.out = Linear::create(store_, name + ".fc", in, e, bias, ParamGroup::projection, sd(in));
      }
      return p;
    };
    image_projection_ = make_projection("image_projection", vc.width);
    text_projection_ = make_projection("text_projection", tc.width);

    const bool projected = config_.heads.risk_input == RiskInput::projected;
    const int image_in = projected ? e : vc.width;
    const int text_in = projected ? e : tc.width;
    image_head_ = Linear::create(store_, "image_head", image_in, 2, true, ParamGroup::head, sd(image_in));
    text_head_ = Linear::create(store_, "text_head", text_in, 2, true, ParamGroup::head, sd(text_in));
  }

  log_temperature_ = store_.create("log_temperature", 1, 1, ParamGroup::temperature, Init::zero());
  if (!layout_only) {
    log_temperature_.mutable_value()(0, 0) = std::log(config_.temperature_init);
    for (auto& entry : store_.entries()) entry.var.set_requires_grad(is_trainable(entry.group));
    if (base_.kind == "archive") {
      load_base_weights(TensorArchive::load(base_.archive_path));
    } else if (base_.kind != "random") {
      throw ValidationError("unknown base source '" + base_.kind + "'");
    }
  }
}

bool ModelBundle::is_trainable(ParamGroup group) const {
  switch (config_.tuning) {
    case TuningMode::full: return true;
    case TuningMode::probe: return group != ParamGroup::base && group != ParamGroup::adapter;
    case TuningMode::lora: return group != ParamGroup::base;
  }
  return false;
}

std::vector<ag::Var> ModelBundle::trainable_parameters() const {
  std::vector<ag::Var> out;
  for (const auto& e : store_.entries()) {
    if (is_trainable(e.group)) out.push_back(e.var);
  }
  return out;
}

std::vector<const ParamEntry*> ModelBundle::trainable_entries() const {
  std::vector<const ParamEntry*> out;
  for (const auto& e : store_.entries()) {
    if (is_trainable(e.group)) out.push_back(&e);
  }
  return out;
}

ParameterCounts ModelBundle::count_parameters() const {
  ParameterCounts c;
  for (const auto& e : store_.entries()) {
    c.by_group[e.group] += e.numel();
    (is_trainable(e.group) ? c.trainable : c.frozen) += e.numel();
  }
  return c;
}

std::uint64_t ModelBundle::frozen_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : store_.entries()) {
    if (is_trainable(e.group) || !e.var.defined()) continue;
    h = fnv_bytes(h, e.name.data(), e.name.size());
    h = fnv_bytes(h, e.var.value().data(), static_cast<std::size_t>(e.var.value().size()) * sizeof(double));
  }
  return h;
}

void ModelBundle::require_heads() const {
  if (!config_.heads.enabled) throw ValidationError("bundle was built without heads");
  if (layout_only()) throw ValidationError("layout-only bundle cannot run forward passes");
}

ag::Var ModelBundle::encode_views(const std::vector<const preprocess::ViewStack*>& stacks,
                                  const ForwardContext& ctx) const {
  if (layout_only()) throw ValidationError("layout-only bundle cannot run forward passes");
  if (stacks.empty()) throw ValidationError("no view stacks to encode");
  for (const auto* s : stacks) check_stack(*s, config_.vision.image_size);
  const auto images = static_cast<Eigen::Index>(stacks.size()) * preprocess::kNumViews;
  if (vision_.conv1.requires_grad()) {
    return vision_.forward(extract_patches(stacks, config_.vision.patch_size), images, ctx);
  }
  // Frozen patch embedding: process one nodule at a time to bound memory.
  const Eigen::Index per_image = static_cast<Eigen::Index>(config_.vision.grid()) * config_.vision.grid();
  ag::Matrix tokens(images * per_image, config_.vision.width);
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const ag::Matrix patches = extract_patches({stacks[i]}, config_.vision.patch_size);
    tokens.middleRows(static_cast<Eigen::Index>(i) * preprocess::kNumViews * per_image, patches.rows()).noalias() =
        patches * vision_.conv1.value().transpose();
  }
  return vision_.forward_tokens(ag::constant(std::move(tokens)), images, ctx);
}

MilOutput ModelBundle::mil_aggregate(const ag::Var& view_features, const ForwardContext& ctx) const {
  require_heads();
  if (view_features.rows() % preprocess::kNumViews != 0) {
    throw ValidationError("MIL expects 9 view features per nodule, got " + std::to_string(view_features.rows()) +
                          " rows");
  }
  return mil_.forward(view_features, preprocess::kNumViews, ctx);
}

ag::Var ModelBundle::project_image(const ag::Var& pooled, const ForwardContext& ctx) const {
  require_heads();
  return image_projection_.forward(pooled, ctx);
}

ag::Var ModelBundle::predict_image_risk(const ag::Var& pooled, const ag::Var& embedding,
                                        const ForwardContext& ctx) const {
  require_heads();
  return image_head_.forward(config_.heads.risk_input == RiskInput::projected ? embedding : pooled, ctx);
}

ImageOutput ModelBundle::encode_image(const std::vector<const preprocess::ViewStack*>& stacks,
                                      const ForwardContext& ctx) const {
  require_heads();
  ImageOutput out;
  out.view_features = encode_views(stacks, ctx);
  out.mil = mil_aggregate(out.view_features, ctx);
  out.embedding = project_image(out.mil.pooled, ctx);
  out.logits = predict_image_risk(out.mil.pooled, out.embedding, ctx);
  return out;
}

ag::Var ModelBundle::encode_text_features(const std::vector<std::vector<int>>& sequences,
                                          const ForwardContext& ctx) const {
  if (layout_only()) throw ValidationError("layout-only bundle cannot run forward passes");
  if (sequences.empty()) throw ValidationError("no token sequences to encode");
  return text_.forward(sequences, ctx);
}

ag::Var ModelBundle::project_text(const ag::Var& features, const ForwardContext& ctx) const {
  require_heads();
  return text_projection_.forward(features, ctx);
}

ag::Var ModelBundle::predict_text_risk(const ag::Var& features, const ag::Var& embedding,
                                       const ForwardContext& ctx) const {
  require_heads();
  return text_head_.forward(config_.heads.risk_input == RiskInput::projected ? embedding : features, ctx);
}

TextOutput ModelBundle::encode_text(const std::vector<std::vector<int>>& sequences, const ForwardContext& ctx) const {
  require_heads();
  TextOutput out;
  out.features = encode_text_features(sequences, ctx);
  out.embedding = project_text(out.features, ctx);
  out.logits = predict_text_risk(out.features, out.embedding, ctx);
  return out;
}

TextOutput ModelBundle::encode_text(const std::vector<std::string>& texts, const ForwardContext& ctx) const {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenizer_->encode(t));
  return encode_text(seqs, ctx);
}

double ModelBundle::temperature() const { return std::exp(log_temperature_.scalar()); }

void ModelBundle::set_tensor(const std::string& name, const ag::Matrix& value) {
  for (auto& e : store_.entries()) {
    if (e.name != name) continue;
    if (value.rows() != e.rows || value.cols() != e.cols) {
      throw ValidationError("tensor " + name + " has shape " + std::to_string(value.rows()) + "x" +
                            std::to_string(value.cols()) + ", expected " + std::to_string(e.rows) + "x" +
                            std::to_string(e.cols));
    }
    e.var.mutable_value() = value;
    return;
  }
  throw ValidationError("unknown tensor " + name);
}

void ModelBundle::load_base_weights(const TensorArchive& archive) {
  for (const auto& e : store_.entries()) {
    if (e.group != ParamGroup::base) continue;
    if (!archive.contains(e.name)) throw ValidationError("weight archive is missing " + e.name);
    const Tensor& t = archive.at(e.name);
    // Vectors may be stored 1-D and conv kernels 4-D; only the element count
    // and leading dimension have to agree.
    const bool leading_ok = t.shape.empty() ? false : (t.shape[0] == e.rows || (e.rows == 1 && t.shape.size() == 1));
    if (static_cast<Eigen::Index>(t.numel()) != e.numel() || !leading_ok) {
      throw ValidationError("weight archive tensor " + e.name + " has an incompatible shape");
    }
    const auto values = t.to_double();
    ag::Matrix m(e.rows, e.cols);
    std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
    set_tensor(e.name, m);
  }
}

void save_checkpoint(const ModelBundle& bundle, const CheckpointMeta& meta, const std::filesystem::path& stem) {
  if (bundle.layout_only()) throw ValidationError("cannot checkpoint a layout-only bundle");
  TensorArchive archive;
  nlohmann::json names = nlohmann::json::array();
  for (const auto* e : bundle.trainable_entries()) {
    const auto& v = e->var.value();
    archive.put(e->name, Tensor::from_f64({e->rows, e->cols}, std::span<const double>(v.data(), v.size())));
    names.push_back(e->name);
  }
  if (!stem.parent_path().empty()) std::filesystem::create_directories(stem.parent_path());
  archive.save(stem.string() + ".ncta");

  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["model"] = to_json(bundle.config());
  j["base"] = {{"kind", bundle.base_source().kind},
               {"seed", bundle.base_source().seed},
               {"archive_path", bundle.base_source().archive_path}};
  j["meta"] = {{"fold", meta.fold},
               {"epoch", meta.epoch},
               {"val_auroc", meta.val_auroc},
               {"rng_state", meta.rng_state},
               {"extra", meta.extra}};
  j["tensors"] = names;
  std::ofstream os(stem.string() + ".json");
  if (!os) throw RuntimeFailure("cannot write checkpoint config " + stem.string() + ".json");
  os << j.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem) {
  const std::string json_path = stem.string() + ".json";
  std::ifstream is(json_path);
  if (!is) throw ValidationError("checkpoint config not found: " + json_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint config " + json_path + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw ValidationError("unsupported checkpoint format in " + json_path);

  LoadedCheckpoint out;
  BaseSource base;
  try {
    base.kind = j.at("base").at("kind").get<std::string>();
    base.seed = j.at("base").at("seed").get<std::uint64_t>();
    base.archive_path = j.at("base").at("archive_path").get<std::string>();
    const auto& m = j.at("meta");
    out.meta.fold = m.at("fold").get<int>();
    out.meta.epoch = m.at("epoch").get<int>();
    // NaN (single-class validation) is written as null
    out.meta.val_auroc = m.at("val_auroc").is_null() ? std::nan("") : m.at("val_auroc").get<double>();
    out.meta.rng_state = m.at("rng_state").get<std::string>();
    out.meta.extra = m.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint config " + json_path + ": " + e.what());
  }
  out.bundle = std::make_unique<ModelBundle>(model_config_from_json(j.at("model")), base);

  const auto archive = TensorArchive::load(stem.string() + ".ncta");
  for (const auto* e : out.bundle->trainable_entries()) {
    if (!archive.contains(e->name)) throw ValidationError("checkpoint is missing tensor " + e->name);
    const Tensor& t = archive.at(e->name);
    if (t.shape.size() != 2 || t.shape[0] != e->rows || t.shape[1] != e->cols) {
      throw ValidationError("checkpoint tensor " + e->name + " does not match the model config");
    }
    const auto values = t.to_double();
    ag::Matrix m(e->rows, e->cols);
    std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
    out.bundle->set_tensor(e->name, m);
  }
  return out;
}

}  // namespace noduleclip::model
