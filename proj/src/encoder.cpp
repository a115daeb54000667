#include "aat/encoder.hpp"

#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aat {

void EncoderSpec::validate() const {
  if (layers <= 0 || heads <= 0 || token_dim <= 0 || head_dim <= 0 || ffn_dim <= 0 ||
      embed_dim <= 0)
    throw std::invalid_argument("encoder spec: dimensions must be positive");
  if (token_dim != heads * head_dim)
    throw std::invalid_argument("encoder spec: token_dim must equal heads * head_dim");
  if (tokens < 2) throw std::invalid_argument("encoder spec: need a class token plus image tokens");
}

AblationConfig AblationConfig::ones(int layers, int heads) {
  AblationConfig c;
  c.layers = layers;
  c.heads = heads;
  c.beta.assign(std::size_t(layers) * std::size_t(heads), 1.0f);
  return c;
}

int AblationConfig::count_ablated() const {
  int n = 0;
  for (float b : beta)
    if (b < 0.5f) ++n;
  return n;
}

bool AblationConfig::is_identity() const {
  for (float b : beta)
    if (b != 1.0f) return false;
  return true;
}

void AblationConfig::validate() const {
  if (layers <= 0 || heads <= 0) throw std::invalid_argument("ablation config: empty grid");
  if (beta.size() != std::size_t(layers) * std::size_t(heads))
    throw std::invalid_argument("ablation config: grid size mismatch");
  for (float b : beta)
    if (!(b >= 0.0f && b <= 1.0f))
      throw std::invalid_argument("ablation config: beta outside [0, 1]");
}

AblationConfig config_from_mask(const std::vector<std::uint8_t>& mask, int layers, int heads,
                                float beta) {
  if (mask.size() != std::size_t(layers) * std::size_t(heads))
    throw std::invalid_argument("mask length does not match the head grid");
  AblationConfig c = AblationConfig::ones(layers, heads);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) c.beta[i] = beta;
  return c;
}

std::vector<std::uint8_t> mask_from_config(const AblationConfig& cfg) {
  std::vector<std::uint8_t> mask(cfg.beta.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = cfg.beta[i] < 0.5f ? 1 : 0;
  return mask;
}

nlohmann::json ablation_config_to_json(const AblationConfig& cfg) {
  nlohmann::json j;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["default_beta"] = 1.0;
  nlohmann::json entries = nlohmann::json::array();
  for (int l = 0; l < cfg.layers; ++l)
    for (int h = 0; h < cfg.heads; ++h) {
      const float b = cfg.get(l, h);
      if (b != 1.0f) {
        nlohmann::json e;
        e["layer"] = l;
        e["head"] = h;
        e["beta"] = double(b);
        entries.push_back(e);
      }
    }
  j["entries"] = entries;
  return j;
}

AblationConfig ablation_config_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("layers") || !j.contains("heads"))
    throw std::invalid_argument("ablation config: missing layers/heads");
  const int layers = j.at("layers").get<int>();
  const int heads = j.at("heads").get<int>();
  if (layers <= 0 || heads <= 0) throw std::invalid_argument("ablation config: empty grid");
  const float default_beta = j.contains("default_beta") ? j.at("default_beta").get<float>() : 1.0f;
  AblationConfig c = AblationConfig::ones(layers, heads);
  for (auto& b : c.beta) b = default_beta;
  if (j.contains("entries")) {
    for (const auto& e : j.at("entries")) {
      const int l = e.at("layer").get<int>();
      const int h = e.at("head").get<int>();
      if (l < 0 || l >= layers || h < 0 || h >= heads)
        throw std::invalid_argument("ablation config: entry outside the head grid");
      c.set(l, h, e.at("beta").get<float>());
    }
  }
  c.validate();
  return c;
}

void save_ablation_config(const AblationConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << ablation_config_to_json(cfg).dump(2) << "\n";
}

AblationConfig load_ablation_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContainerError(ContainerFault::missing_file, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + std::string(e.what()));
  }
  return ablation_config_from_json(j);
}

Tensor2 manipulate_attention(const Tensor2& a, float beta, bool* degenerate) {
  if (a.rows != a.cols || a.rows < 1)
    throw std::invalid_argument("manipulate_attention: matrix must be square");
  if (!(beta >= 0.0f && beta <= 1.0f))
    throw std::invalid_argument("manipulate_attention: beta outside [0, 1]");
  for (int i = 0; i < a.rows; ++i) {
    double sum = 0.0;
    const float* r = a.row(i);
    for (int j = 0; j < a.cols; ++j) {
      if (!(r[j] >= 0.0f)) throw std::invalid_argument("manipulate_attention: negative weight");
      sum += double(r[j]);
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw std::invalid_argument("manipulate_attention: input rows must sum to one");
  }
  if (degenerate) *degenerate = false;
  if (beta == 1.0f) return a;

  Tensor2 out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const float* r = a.row(i);
    float* o = out.row(i);
    o[0] = r[0];
    double sum = double(r[0]);
    for (int j = 1; j < a.cols; ++j) {
      o[j] = r[j] * beta;
      sum += double(o[j]);
    }
    if (sum < 1e-12) {
      for (int j = 0; j < a.cols; ++j) o[j] = 0.0f;
      o[0] = 1.0f;
      if (degenerate) *degenerate = true;
      continue;
    }
    const float inv = float(1.0 / sum);
    for (int j = 0; j < a.cols; ++j) o[j] *= inv;
  }
  return out;
}

Tensor2 head_attention(const Tensor2& x_ln, const HeadWeights& w, int head_dim, float beta) {
  Tensor2 q = matmul(x_ln, w.wq);
  add_row_inplace(q, w.bq);
  Tensor2 k = matmul(x_ln, w.wk);
  add_row_inplace(k, w.bk);
  Tensor2 v = matmul(x_ln, w.wv);
  add_row_inplace(v, w.bv);

  const float scale = 1.0f / std::sqrt(float(head_dim));
  Tensor2 scores = matmul_nt(q, k, scale);
  Tensor2 attn = softmax_rows(scores);
  attn = manipulate_attention(attn, beta);
  return matmul(attn, v);
}

namespace {

// Runs one block in place.  When `strict` is set every head output is
// checked so a non-finite activation can be pinned to its head.
void run_layer(Tensor2& x, const LayerWeights& lw, const EncoderSpec& spec,
               const AblationConfig& cfg, int layer, bool strict) {
  Tensor2 h = layer_norm(x, lw.ln1.gain, lw.ln1.bias);
  Tensor2 attn_out(x.rows, x.cols);
  for (int head = 0; head < spec.heads; ++head) {
    Tensor2 y = head_attention(h, lw.heads[std::size_t(head)], spec.head_dim, cfg.get(layer, head));
    if (strict && !all_finite(y))
      throw EncodeError(layer, head, "non-finite activation in attention head");
    matmul_acc(attn_out, y, lw.heads[std::size_t(head)].wo);
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

}  // namespace

std::vector<float> encode_image(const Tensor2& tokens, const EncoderWeights& w,
                                const AblationConfig& cfg) {
  const EncoderSpec& spec = w.spec;
  if (tokens.rows != spec.tokens || tokens.cols != spec.token_dim)
    throw std::invalid_argument("encode_image: token grid does not match the encoder spec");
  if (cfg.layers != spec.layers || cfg.heads != spec.heads)
    throw std::invalid_argument("encode_image: ablation config does not match the encoder spec");

  Tensor2 x = tokens;
  for (int layer = 0; layer < spec.layers; ++layer) {
    run_layer(x, w.layers[std::size_t(layer)], spec, cfg, layer, false);
    if (!all_finite(x)) {
      // Re-run the block with per-head checks to name the culprit.
      Tensor2 redo = tokens;
      for (int l2 = 0; l2 <= layer; ++l2)
        run_layer(redo, w.layers[std::size_t(l2)], spec, cfg, l2, true);
      throw EncodeError(layer, -1, "non-finite activation in feed-forward path");
    }
  }

  Tensor2 cls(1, spec.token_dim);
  for (int j = 0; j < spec.token_dim; ++j) cls.at(0, j) = x.at(0, j);
  cls = layer_norm(cls, w.ln_final.gain, w.ln_final.bias);
  Tensor2 e = matmul(cls, w.proj);
  if (!all_finite(e)) throw EncodeError(spec.layers, -1, "non-finite embedding");
  l2_normalize(e.row(0), e.cols);
  return e.data;
}

std::vector<float> encode_class_row(const Tensor2& tokens, const EncoderWeights& w,
                                    const AblationConfig& cfg) {
  const EncoderSpec& spec = w.spec;
  if (tokens.rows != spec.tokens || tokens.cols != spec.token_dim)
    throw std::invalid_argument("encode_class_row: token grid does not match the encoder spec");
  if (cfg.layers != spec.layers || cfg.heads != spec.heads)
    throw std::invalid_argument("encode_class_row: ablation config does not match the encoder spec");

  Tensor2 x = tokens;
  for (int layer = 0; layer < spec.layers; ++layer)
    run_layer(x, w.layers[std::size_t(layer)], spec, cfg, layer, false);

  Tensor2 cls(1, spec.token_dim);
  for (int j = 0; j < spec.token_dim; ++j) cls.at(0, j) = x.at(0, j);
  cls = layer_norm(cls, w.ln_final.gain, w.ln_final.bias);
  return cls.data;
}

Tensor2 encode_batch(const std::vector<Tensor2>& items, const EncoderWeights& w,
                     const AblationConfig& cfg, int threads) {
  Tensor2 out(int(items.size()), w.spec.embed_dim);
  const int n = int(items.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : 1) if (threads > 1)
#endif
  for (int i = 0; i < n; ++i) {
    const std::vector<float> e = encode_image(items[std::size_t(i)], w, cfg);
    float* r = out.row(i);
    for (int j = 0; j < w.spec.embed_dim; ++j) r[j] = e[std::size_t(j)];
  }
  return out;
}

Container weights_to_container(const EncoderWeights& w) {
  Container c;
  c.meta["spec"] = {
      {"layers", w.spec.layers},       {"heads", w.spec.heads},
      {"token_dim", w.spec.token_dim}, {"head_dim", w.spec.head_dim},
      {"ffn_dim", w.spec.ffn_dim},     {"embed_dim", w.spec.embed_dim},
      {"tokens", w.spec.tokens},
  };
  for (int l = 0; l < w.spec.layers; ++l) {
    const LayerWeights& lw = w.layers[std::size_t(l)];
    const std::string p = "layers." + std::to_string(l) + ".";
    c.put(p + "ln1.gain", lw.ln1.gain);
    c.put(p + "ln1.bias", lw.ln1.bias);
    c.put(p + "ln2.gain", lw.ln2.gain);
    c.put(p + "ln2.bias", lw.ln2.bias);
    for (int h = 0; h < w.spec.heads; ++h) {
      const HeadWeights& hw = lw.heads[std::size_t(h)];
      const std::string q = p + "heads." + std::to_string(h) + ".";
      c.put(q + "wq", hw.wq);
      c.put(q + "wk", hw.wk);
      c.put(q + "wv", hw.wv);
      c.put(q + "wo", hw.wo);
      c.put(q + "bq", hw.bq);
      c.put(q + "bk", hw.bk);
      c.put(q + "bv", hw.bv);
    }
    c.put(p + "attn_bias", lw.attn_bias);
    c.put(p + "w1", lw.w1);
    c.put(p + "b1", lw.b1);
    c.put(p + "w2", lw.w2);
    c.put(p + "b2", lw.b2);
  }
  c.put("ln_final.gain", w.ln_final.gain);
  c.put("ln_final.bias", w.ln_final.bias);
  c.put("proj", w.proj);
  return c;
}

EncoderWeights weights_from_container(const Container& c) {
  EncoderWeights w;
  try {
    const auto& s = c.meta.at("spec");
    w.spec.layers = s.at("layers").get<int>();
    w.spec.heads = s.at("heads").get<int>();
    w.spec.token_dim = s.at("token_dim").get<int>();
    w.spec.head_dim = s.at("head_dim").get<int>();
    w.spec.ffn_dim = s.at("ffn_dim").get<int>();
    w.spec.embed_dim = s.at("embed_dim").get<int>();
    w.spec.tokens = s.at("tokens").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerFault::corrupt_manifest,
                         "model meta.spec: " + std::string(e.what()));
  }
  w.spec.validate();
  w.layers.resize(std::size_t(w.spec.layers));
  for (int l = 0; l < w.spec.layers; ++l) {
    LayerWeights& lw = w.layers[std::size_t(l)];
    const std::string p = "layers." + std::to_string(l) + ".";
    lw.ln1.gain = c.get1d(p + "ln1.gain");
    lw.ln1.bias = c.get1d(p + "ln1.bias");
    lw.ln2.gain = c.get1d(p + "ln2.gain");
    lw.ln2.bias = c.get1d(p + "ln2.bias");
    lw.heads.resize(std::size_t(w.spec.heads));
    for (int h = 0; h < w.spec.heads; ++h) {
      HeadWeights& hw = lw.heads[std::size_t(h)];
      const std::string q = p + "heads." + std::to_string(h) + ".";
      hw.wq = c.get2d(q + "wq");
      hw.wk = c.get2d(q + "wk");
      hw.wv = c.get2d(q + "wv");
      hw.wo = c.get2d(q + "wo");
      hw.bq = c.get1d(q + "bq");
      hw.bk = c.get1d(q + "bk");
      hw.bv = c.get1d(q + "bv");
    }
    lw.attn_bias = c.get1d(p + "attn_bias");
    lw.w1 = c.get2d(p + "w1");
    lw.b1 = c.get1d(p + "b1");
    lw.w2 = c.get2d(p + "w2");
    lw.b2 = c.get1d(p + "b2");
  }
  w.ln_final.gain = c.get1d("ln_final.gain");
  w.ln_final.bias = c.get1d("ln_final.bias");
  w.proj = c.get2d("proj");
  return w;
}

}  // namespace aat
