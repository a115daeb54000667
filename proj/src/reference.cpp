#include "aat/reference.hpp"

#include <cmath>

namespace aat {
namespace reference {

std::vector<float> encode_image_vanilla(const Tensor2& tokens, const EncoderWeights& w) {
  const EncoderSpec& spec = w.spec;
  if (tokens.rows != spec.tokens || tokens.cols != spec.token_dim)
    throw std::invalid_argument("encode_image_vanilla: token grid does not match the spec");

  Tensor2 x = tokens;
  for (int layer = 0; layer < spec.layers; ++layer) {
    const LayerWeights& lw = w.layers[std::size_t(layer)];
    Tensor2 h = layer_norm(x, lw.ln1.gain, lw.ln1.bias);
    Tensor2 attn_out(x.rows, x.cols);
    for (int head = 0; head < spec.heads; ++head) {
      const HeadWeights& hw = lw.heads[std::size_t(head)];
      Tensor2 q = matmul(h, hw.wq);
      add_row_inplace(q, hw.bq);
      Tensor2 k = matmul(h, hw.wk);
      add_row_inplace(k, hw.bk);
      Tensor2 v = matmul(h, hw.wv);
      add_row_inplace(v, hw.bv);
      const float scale = 1.0f / std::sqrt(float(spec.head_dim));
      Tensor2 attn = softmax_rows(matmul_nt(q, k, scale));
      Tensor2 y = matmul(attn, v);
      matmul_acc(attn_out, y, hw.wo);
    }
    add_row_inplace(attn_out, lw.attn_bias);
    add_inplace(x, attn_out);

    Tensor2 f = layer_norm(x, lw.ln2.gain, lw.ln2.bias);
    Tensor2 inner = matmul(f, lw.w1);
    add_row_inplace(inner, lw.b1);
    inner = gelu(inner);
    Tensor2 ffn_out = matmul(inner, lw.w2);
    add_row_inplace(ffn_out, lw.b2);
    add_inplace(x, ffn_out);
  }

  Tensor2 cls(1, spec.token_dim);
  for (int j = 0; j < spec.token_dim; ++j) cls.at(0, j) = x.at(0, j);
  cls = layer_norm(cls, w.ln_final.gain, w.ln_final.bias);
  Tensor2 e = matmul(cls, w.proj);
  l2_normalize(e.row(0), e.cols);
  return e.data;
}

Tensor2 encode_batch_serial(const std::vector<Tensor2>& items, const EncoderWeights& w,
                            const AblationConfig& cfg) {
  Tensor2 out(int(items.size()), w.spec.embed_dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::vector<float> e = encode_image(items[i], w, cfg);
    float* r = out.row(int(i));
    for (int j = 0; j < w.spec.embed_dim; ++j) r[j] = e[std::size_t(j)];
  }
  return out;
}

}  // namespace reference
}  // namespace aat
