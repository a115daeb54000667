#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "aat/container.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Toy pre-LN transformer image encoder with per-head attention gates.
// Token row 0 is the class token; rows 1..N-1 are image tokens.

struct EncoderSpec {
  int layers = 4;
  int heads = 4;
  int token_dim = 32;
  int head_dim = 8;
  int ffn_dim = 64;
  int embed_dim = 32;
  int tokens = 9;

  void validate() const;
};

struct LayerNormParams {
  std::vector<float> gain;
  std::vector<float> bias;
};

struct HeadWeights {
  Tensor2 wq, wk, wv;  // token_dim x head_dim
  std::vector<float> bq, bk, bv;
  Tensor2 wo;  // head_dim x token_dim, summed across heads to merge
};

struct LayerWeights {
  LayerNormParams ln1, ln2;
  std::vector<HeadWeights> heads;
  std::vector<float> attn_bias;  // token_dim, applied once after the head merge
  Tensor2 w1;                    // token_dim x ffn_dim
  std::vector<float> b1;
  Tensor2 w2;  // ffn_dim x token_dim
  std::vector<float> b2;
};

struct EncoderWeights {
  EncoderSpec spec;
  std::vector<LayerWeights> layers;
  LayerNormParams ln_final;
  Tensor2 proj;  // token_dim x embed_dim, no bias
};

// Per-head attention scale factors.  beta == 1 leaves a head untouched;
// beta < 1 suppresses how much the class pathway listens to image tokens.
struct AblationConfig {
  int layers = 0;
  int heads = 0;
  std::vector<float> beta;

  static AblationConfig ones(int layers, int heads);

  float get(int layer, int head) const {
    return beta[std::size_t(layer) * std::size_t(heads) + std::size_t(head)];
  }
  void set(int layer, int head, float b) {
    beta[std::size_t(layer) * std::size_t(heads) + std::size_t(head)] = b;
  }
  // Binary view used by stats and mask round-trips.
  bool ablated(int layer, int head) const { return get(layer, head) < 0.5f; }
  int count_ablated() const;
  bool is_identity() const;

  void validate() const;
};

// Mask bit 1 means "ablate this head"; bits are row-major over (layer, head).
AblationConfig config_from_mask(const std::vector<std::uint8_t>& mask, int layers, int heads,
                                float beta = 0.1f);
std::vector<std::uint8_t> mask_from_config(const AblationConfig& cfg);

void save_ablation_config(const AblationConfig& cfg, const std::string& path);
AblationConfig load_ablation_config(const std::string& path);
nlohmann::json ablation_config_to_json(const AblationConfig& cfg);
AblationConfig ablation_config_from_json(const nlohmann::json& j);

// The manipulation step: scale every image-token column by beta, then
// renormalize each row to sum one.  Rows whose scaled mass collapses fall
// back to a one-hot on the class token and raise `degenerate`.
Tensor2 manipulate_attention(const Tensor2& a, float beta, bool* degenerate = nullptr);

// Single head: scores -> softmax -> manipulation -> value mixing.
Tensor2 head_attention(const Tensor2& x_ln, const HeadWeights& w, int head_dim, float beta);

class EncodeError : public std::runtime_error {
 public:
  EncodeError(int layer, int head, const std::string& what)
      : std::runtime_error(what), layer(layer), head(head) {}
  int layer;
  int head;  // -1 when the fault is outside a head (FFN, projection)
};

// Full forward pass to a unit-norm embedding.
std::vector<float> encode_image(const Tensor2& tokens, const EncoderWeights& w,
                                const AblationConfig& cfg);

// Final-layer-norm class row, before the embedding projection: the
// embedding is the L2-normalized product of this row with `proj`.
std::vector<float> encode_class_row(const Tensor2& tokens, const EncoderWeights& w,
                                    const AblationConfig& cfg);

// One embedding row per item; bitwise identical to sequential encode_image
// calls for any thread count.
Tensor2 encode_batch(const std::vector<Tensor2>& items, const EncoderWeights& w,
                     const AblationConfig& cfg, int threads = 1);

Container weights_to_container(const EncoderWeights& w);
EncoderWeights weights_from_container(const Container& c);

}  // namespace aat
