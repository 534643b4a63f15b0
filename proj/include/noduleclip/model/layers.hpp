#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noduleclip/common/random.hpp"
#include "noduleclip/model/autograd.hpp"

namespace noduleclip::model {

enum class ParamGroup { base, adapter, mil, projection, head, temperature };
std::string to_string(ParamGroup group);

struct ParamEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  ParamGroup group = ParamGroup::base;
  ag::Var var;  // undefined in layout-only stores

  Eigen::Index numel() const { return rows * cols; }
};

struct Init {
  enum Kind { zeros, ones, normal } kind = zeros;
  double stddev = 0.0;

  static Init zero() { return {zeros, 0.0}; }
  static Init one() { return {ones, 0.0}; }
  static Init gaussian(double sd) { return {normal, sd}; }
};

// Named parameter registry. In layout-only mode shapes are recorded without
// allocating, which is enough for parameter counting of large presets.
class ParamStore {
 public:
  ParamStore(bool materialize, std::uint64_t seed) : materialize_(materialize), seed_(seed) {}

  ag::Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols, ParamGroup group, Init init);

  bool materialized() const { return materialize_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const ParamEntry* find(const std::string& name) const;

 private:
  bool materialize_;
  std::uint64_t seed_;
  std::vector<ParamEntry> entries_;
};

// Training flag and dropout stream for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

// y = x W^T + b, plus scale * (dropout(x) A^T) B^T when an adapter is attached.
struct Linear {
  ag::Var weight;  // out x in
  ag::Var bias;    // 1 x out, may be undefined
  ag::Var lora_a;  // r x in
  ag::Var lora_b;  // out x r, zero at init
  double lora_scale = 1.0;
  double lora_dropout = 0.0;

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
                       ParamGroup group, Init weight_init);
  void attach_adapter(ParamStore& store, const std::string& name, int rank, double scale, double dropout);
  bool has_adapter() const { return lora_a.defined(); }

  ag::Var forward(const ag::Var& x, const ForwardContext& ctx) const;
};

struct LayerNorm {
  ag::Var gamma;
  ag::Var beta;

  static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index width, ParamGroup group);
  ag::Var forward(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

// Pre-norm residual block: x + attn(ln_1(x)), then x + mlp(ln_2(x)).
struct ResidualBlock {
  LayerNorm ln_1;
  Linear q_proj, k_proj, v_proj, out_proj;
  LayerNorm ln_2;
  Linear c_fc, c_proj;
  int heads = 1;

  static ResidualBlock create(ParamStore& store, const std::string& name, int width, int heads);
  ag::Var forward(const ag::Var& x, const std::vector<ag::Segment>& segments, bool causal,
                  const ForwardContext& ctx) const;
};

struct Transformer {
  std::vector<ResidualBlock> blocks;

  static Transformer create(ParamStore& store, const std::string& name, int width, int depth, int heads);
  void attach_adapters(ParamStore& store, const std::string& name, int rank, double scale, double dropout);
  ag::Var forward(ag::Var x, const std::vector<ag::Segment>& segments, bool causal, const ForwardContext& ctx) const;
};

}  // namespace noduleclip::model
