#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aat/bench.hpp"
#include "aat/encoder.hpp"
#include "aat/tape.hpp"

namespace aat {

// Differentiable head gating: each head carries a free scalar alpha and is
// scaled by beta = sigmoid(tau * alpha) inside the attention manipulation.
// Training moves only the alphas; the encoder weights stay frozen.

struct GatingParams {
  float tau = 5.0f;
  Tensor2 alphas;  // layers x heads

  static GatingParams init(int layers, int heads, float tau = 5.0f, float alpha0 = 1.0f);
};

float beta_from_alpha(float alpha, float tau);
Tensor2 betas_from_gating(const GatingParams& g);

// Soft export copies the betas verbatim; binarized export writes 0.1 for
// betas below the threshold and 1.0 otherwise (a tie keeps the head).
AblationConfig export_config(const GatingParams& g, bool binarize, float threshold = 0.5f);

void save_gating(const GatingParams& g, const std::string& path);
GatingParams load_gating(const std::string& path);

// Symmetric InfoNCE over unit embeddings, in full precision.
double contrastive_loss(const Tensor2& image_embs, const Tensor2& text_embs, float scale);

struct BpParams {
  double lr = 2e-2;
  int epochs = 32;
  int batch_size = 256;  // clamps to the dataset size
  float tau = 5.0f;
  float alpha_init = 1.0f;
  float logit_scale = 14.285303f;  // e^2.659, the usual frozen CLIP temperature
  std::string optimizer = "adam";  // "adam" | "sgd"
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
};

struct BpEpochStat {
  int epoch = 0;  // 0 is the pre-training baseline
  double loss = 0.0;
  double mean_beta = 0.0;
  double frac_polarized = 0.0;  // betas outside (0.2, 0.8)
};

struct BpResult {
  GatingParams gating;
  std::vector<BpEpochStat> history;
  int epochs_run = 0;
  bool diverged = false;
};

BpResult train_gating(const EncoderWeights& model, const PairDataset& data, const BpParams& params);

void save_bp_history(const BpResult& r, const std::string& path);

}  // namespace aat
