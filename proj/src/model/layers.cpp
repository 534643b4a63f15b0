#include "noduleclip/model/layers.hpp"

#include <cmath>

#include "noduleclip/common/error.hpp"

namespace noduleclip::model {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::base: return "base";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::mil: return "mil";
    case ParamGroup::projection: return "projection";
    case ParamGroup::head: return "head";
    case ParamGroup::temperature: return "temperature";
  }
  return "base";
}

ag::Var ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols, ParamGroup group,
                           Init init) {
  if (find(name)) throw RuntimeFailure("duplicate parameter name " + name);
  ParamEntry entry{name, rows, cols, group, {}};
  if (materialize_) {
    ag::Matrix value;
    switch (init.kind) {
      case Init::zeros: value = ag::Matrix::Zero(rows, cols); break;
      case Init::ones: value = ag::Matrix::Ones(rows, cols); break;
      case Init::normal: {
        // Each tensor draws from its own name-derived stream, so values do not
        // depend on creation order or on which optional parts exist.
        Rng rng(derive_seed(seed_, {fnv1a(name)}));
        value.resize(rows, cols);
        for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = rng.normal(0.0, init.stddev);
        break;
      }
    }
    entry.var = ag::parameter(std::move(value));
  }
  entries_.push_back(entry);
  return entry.var;
}

const ParamEntry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
                      ParamGroup group, Init weight_init) {
  Linear l;
  l.weight = store.create(name + ".weight", out, in, group, weight_init);
  if (bias) l.bias = store.create(name + ".bias", 1, out, group, Init::zero());
  return l;
}

void Linear::attach_adapter(ParamStore& store, const std::string& name, int rank, double scale, double dropout) {
  const auto* w = store.find(name + ".weight");
  if (!w) throw RuntimeFailure("adapter target " + name + " has no weight");
  lora_a = store.create(name + ".lora_A", rank, w->cols, ParamGroup::adapter,
                        Init::gaussian(1.0 / std::sqrt(static_cast<double>(w->cols))));
  lora_b = store.create(name + ".lora_B", w->rows, rank, ParamGroup::adapter, Init::zero());
  lora_scale = scale;
  lora_dropout = dropout;
}

ag::Var Linear::forward(const ag::Var& x, const ForwardContext& ctx) const {
  if (x.cols() != weight.cols()) {
    throw ValidationError("linear input width " + std::to_string(x.cols()) + " does not match weight width " +
                          std::to_string(weight.cols()));
  }
  ag::Var y = ag::matmul_nt(x, weight);
  if (bias.defined()) y = ag::add_row(y, bias);
  if (has_adapter()) {
    ag::Var xin = x;
    if (ctx.training && lora_dropout > 0.0) {
      if (!ctx.rng) throw RuntimeFailure("training forward needs a dropout generator");
      xin = ag::dropout(x, lora_dropout, *ctx.rng);
    }
    ag::Var delta = ag::matmul_nt(ag::matmul_nt(xin, lora_a), lora_b);
    y = ag::add(y, lora_scale == 1.0 ? delta : ag::scale(delta, lora_scale));
  }
  return y;
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index width, ParamGroup group) {
  return {store.create(name + ".weight", 1, width, group, Init::one()),
          store.create(name + ".bias", 1, width, group, Init::zero())};
}

ResidualBlock ResidualBlock::create(ParamStore& store, const std::string& name, int width, int heads) {
  const double attn_sd = 1.0 / std::sqrt(static_cast<double>(width));
  const double fc_sd = 1.0 / std::sqrt(static_cast<double>(4 * width));
  ResidualBlock b;
  b.heads = heads;
  b.ln_1 = LayerNorm::create(store, name + ".ln_1", width, ParamGroup::base);
  b.q_proj = Linear::create(store, name + ".attn.q_proj", width, width, true, ParamGroup::base, Init::gaussian(attn_sd));
  b.k_proj = Linear::create(store, name + ".attn.k_proj", width, width, true, ParamGroup::base, Init::gaussian(attn_sd));
  b.v_proj = Linear::create(store, name + ".attn.v_proj", width, width, true, ParamGroup::base, Init::gaussian(attn_sd));
  b.out_proj =
      Linear::create(store, name + ".attn.out_proj", width, width, true, ParamGroup::base, Init::gaussian(attn_sd));
  b.ln_2 = LayerNorm::create(store, name + ".ln_2", width, ParamGroup::base);
  b.c_fc = Linear::create(store, name + ".mlp.c_fc", width, 4 * width, true, ParamGroup::base, Init::gaussian(attn_sd));
  b.c_proj =
      Linear::create(store, name + ".mlp.c_proj", 4 * width, width, true, ParamGroup::base, Init::gaussian(fc_sd));
  return b;
}

ag::Var ResidualBlock::forward(const ag::Var& x, const std::vector<ag::Segment>& segments, bool causal,
                               const ForwardContext& ctx) const {
  const ag::Var h = ln_1.forward(x);
  const ag::Var attn = ag::attention(q_proj.forward(h, ctx), k_proj.forward(h, ctx), v_proj.forward(h, ctx), segments,
                                     heads, causal);
  const ag::Var x1 = ag::add(x, out_proj.forward(attn, ctx));
  const ag::Var m = c_proj.forward(ag::quick_gelu(c_fc.forward(ln_2.forward(x1), ctx)), ctx);
  return ag::add(x1, m);
}

Transformer Transformer::create(ParamStore& store, const std::string& name, int width, int depth, int heads) {
  Transformer t;
  for (int i = 0; i < depth; ++i) {
    t.blocks.push_back(ResidualBlock::create(store, name + ".resblocks." + std::to_string(i), width, heads));
  }
  return t;
}

void Transformer::attach_adapters(ParamStore& store, const std::string& name, int rank, double scale,
                                  double dropout) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = name + ".resblocks." + std::to_string(i) + ".attn.";
    blocks[i].q_proj.attach_adapter(store, prefix + "q_proj", rank, scale, dropout);
    blocks[i].k_proj.attach_adapter(store, prefix + "k_proj", rank, scale, dropout);
    blocks[i].v_proj.attach_adapter(store, prefix + "v_proj", rank, scale, dropout);
  }
}

ag::Var Transformer::forward(ag::Var x, const std::vector<ag::Segment>& segments, bool causal,
                             const ForwardContext& ctx) const {
  for (const auto& b : blocks) x = b.forward(x, segments, causal, ctx);
  return x;
}

}  // namespace noduleclip::model
