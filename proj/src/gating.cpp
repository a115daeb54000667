#include "aat/gating.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "aat/rng.hpp"

namespace aat {

GatingParams GatingParams::init(int layers, int heads, float tau, float alpha0) {
  if (layers <= 0 || heads <= 0) throw std::invalid_argument("gating: non-positive grid");
  GatingParams g;
  g.tau = tau;
  g.alphas = Tensor2(layers, heads);
  std::fill(g.alphas.data.begin(), g.alphas.data.end(), alpha0);
  return g;
}

float beta_from_alpha(float alpha, float tau) {
  return 1.0f / (1.0f + std::exp(-tau * alpha));
}

Tensor2 betas_from_gating(const GatingParams& g) {
  Tensor2 b(g.alphas.rows, g.alphas.cols);
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = beta_from_alpha(g.alphas.data[i], g.tau);
  return b;
}

AblationConfig export_config(const GatingParams& g, bool binarize, float threshold) {
  Tensor2 b = betas_from_gating(g);
  AblationConfig cfg = AblationConfig::ones(b.rows, b.cols);
  for (int l = 0; l < b.rows; ++l) {
    for (int h = 0; h < b.cols; ++h) {
      float v = b.at(l, h);
      cfg.set(l, h, binarize ? (v < threshold ? 0.1f : 1.0f) : v);
    }
  }
  return cfg;
}

void save_gating(const GatingParams& g, const std::string& path) {
  nlohmann::json j;
  j["tau"] = g.tau;
  nlohmann::json rows = nlohmann::json::array();
  for (int l = 0; l < g.alphas.rows; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (int h = 0; h < g.alphas.cols; ++h) row.push_back(g.alphas.at(l, h));
    rows.push_back(std::move(row));
  }
  j["alphas"] = std::move(rows);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("gating: cannot write " + path);
  out << j.dump(2) << "\n";
}

GatingParams load_gating(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContainerError(ContainerFault::missing_file, "gating: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("gating: bad json: ") + e.what());
  }
  GatingParams g;
  g.tau = j.at("tau").get<float>();
  const auto& rows = j.at("alphas");
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument("gating: empty alphas");
  int layers = static_cast<int>(rows.size());
  int heads = static_cast<int>(rows.at(0).size());
  if (heads <= 0) throw std::invalid_argument("gating: empty alpha row");
  g.alphas = Tensor2(layers, heads);
  for (int l = 0; l < layers; ++l) {
    const auto& row = rows.at(l);
    if (static_cast<int>(row.size()) != heads) throw std::invalid_argument("gating: ragged alphas");
    for (int h = 0; h < heads; ++h) g.alphas.at(l, h) = row.at(h).get<float>();
  }
  return g;
}

double contrastive_loss(const Tensor2& image_embs, const Tensor2& text_embs, float scale) {
  if (!image_embs.same_shape(text_embs)) throw std::invalid_argument("contrastive: shape mismatch");
  const int n = image_embs.rows;
  if (n < 2) throw std::invalid_argument("contrastive: need at least two pairs");
  Tensor2 s = matmul_nt(image_embs, text_embs, scale);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    // image -> text over row i, text -> image over column i
    double row_max = -1e300, col_max = -1e300;
    for (int j = 0; j < n; ++j) {
      row_max = std::max(row_max, static_cast<double>(s.at(i, j)));
      col_max = std::max(col_max, static_cast<double>(s.at(j, i)));
    }
    double row_sum = 0.0, col_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      row_sum += std::exp(static_cast<double>(s.at(i, j)) - row_max);
      col_sum += std::exp(static_cast<double>(s.at(j, i)) - col_max);
    }
    double diag = static_cast<double>(s.at(i, i));
    total += -(diag - row_max - std::log(row_sum));
    total += -(diag - col_max - std::log(col_sum));
  }
  return 0.5 * total / n;
}

namespace {

// Full-precision loss of the current gates over sequential batches, used for
// the epoch-0 baseline row in the history.
double eval_loss(const EncoderWeights& model, const PairDataset& data, const GatingParams& g,
                 float scale, int batch_size) {
  AblationConfig cfg = export_config(g, /*binarize=*/false);
  const int n = data.n();
  double total = 0.0;
  int counted = 0;
  for (int start = 0; start < n; start += batch_size) {
    int b = std::min(batch_size, n - start);
    if (b < 2) break;
    Tensor2 img(b, model.spec.embed_dim);
    Tensor2 txt(b, model.spec.embed_dim);
    for (int i = 0; i < b; ++i) {
      std::vector<float> e = encode_image(data.images[start + i], model, cfg);
      for (int d = 0; d < model.spec.embed_dim; ++d) {
        img.at(i, d) = e[static_cast<std::size_t>(d)];
        txt.at(i, d) = data.texts.at(start + i, d);
      }
    }
    total += contrastive_loss(img, txt, scale) * b;
    counted += b;
  }
  if (counted == 0) throw std::invalid_argument("gating: dataset too small for a batch");
  return total / counted;
}

BpEpochStat make_stat(int epoch, double loss, const GatingParams& g) {
  Tensor2 b = betas_from_gating(g);
  double sum = 0.0;
  int polar = 0;
  for (float v : b.data) {
    sum += v;
    if (v < 0.2f || v > 0.8f) ++polar;
  }
  BpEpochStat st;
  st.epoch = epoch;
  st.loss = loss;
  st.mean_beta = sum / b.data.size();
  st.frac_polarized = static_cast<double>(polar) / static_cast<double>(b.data.size());
  return st;
}

}  // namespace

BpResult train_gating(const EncoderWeights& model, const PairDataset& data, const BpParams& params) {
  model.spec.validate();
  if (params.epochs < 0) throw std::invalid_argument("gating: negative epochs");
  if (params.lr <= 0.0) throw std::invalid_argument("gating: non-positive lr");
  if (params.batch_size < 2) throw std::invalid_argument("gating: batch size below two");
  if (params.optimizer != "adam" && params.optimizer != "sgd")
    throw std::invalid_argument("gating: unknown optimizer " + params.optimizer);
  if (data.n() < 2) throw std::invalid_argument("gating: need at least two pairs");

  const int L = model.spec.layers;
  const int H = model.spec.heads;
  const int P = L * H;
  const int batch = std::min(params.batch_size, data.n());

  BpResult res;
  res.gating = GatingParams::init(L, H, params.tau, params.alpha_init);
  res.history.push_back(
      make_stat(0, eval_loss(model, data, res.gating, params.logit_scale, batch), res.gating));

  std::vector<double> m(P, 0.0), v(P, 0.0);
  long step = 0;

  std::vector<int> order(data.n());
  for (int i = 0; i < data.n(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= params.epochs; ++epoch) {
    Rng rng(substream(params.seed, "batches", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    int epoch_items = 0;
    for (int start = 0; start < data.n(); start += batch) {
      int b = std::min(batch, data.n() - start);
      if (b < 2) break;  // a singleton batch has no contrastive signal

      std::vector<float> before(res.gating.alphas.data);

      GradTape tape;
      std::vector<GradTape::NodeId> alpha_nodes(static_cast<std::size_t>(P));
      std::vector<GradTape::NodeId> beta_nodes(static_cast<std::size_t>(P));
      for (int p = 0; p < P; ++p) {
        alpha_nodes[static_cast<std::size_t>(p)] = tape.leaf(res.gating.alphas.data[static_cast<std::size_t>(p)]);
        beta_nodes[static_cast<std::size_t>(p)] =
            tape.sigmoid_scale(alpha_nodes[static_cast<std::size_t>(p)], params.tau);
      }

      Tensor2 txt(b, model.spec.embed_dim);
      std::vector<GradTape::NodeId> emb_rows(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        int idx = order[static_cast<std::size_t>(start + i)];
        emb_rows[static_cast<std::size_t>(i)] = encode_image_tape(tape, data.images[idx], model, beta_nodes);
        for (int d = 0; d < model.spec.embed_dim; ++d) txt.at(i, d) = data.texts.at(idx, d);
      }
      GradTape::NodeId stacked = tape.stack_rows(emb_rows);
      GradTape::NodeId loss = tape.contrastive(stacked, &txt, params.logit_scale);
      tape.finalize();

      double batch_loss = tape.value(loss).at(0, 0);
      if (!std::isfinite(batch_loss)) {
        res.gating.alphas.data = before;
        res.diverged = true;
        res.epochs_run = epoch - 1;
        return res;
      }

      std::vector<float> grads = backward_gating(tape, loss);
      ++step;
      if (params.optimizer == "adam") {
        double c1 = 1.0 - std::pow(params.adam_beta1, static_cast<double>(step));
        double c2 = 1.0 - std::pow(params.adam_beta2, static_cast<double>(step));
        for (int p = 0; p < P; ++p) {
          double ggrad = grads[static_cast<std::size_t>(p)];
          m[static_cast<std::size_t>(p)] = params.adam_beta1 * m[static_cast<std::size_t>(p)] + (1.0 - params.adam_beta1) * ggrad;
          v[static_cast<std::size_t>(p)] = params.adam_beta2 * v[static_cast<std::size_t>(p)] + (1.0 - params.adam_beta2) * ggrad * ggrad;
          double update = params.lr * (m[static_cast<std::size_t>(p)] / c1) /
                          (std::sqrt(v[static_cast<std::size_t>(p)] / c2) + params.adam_eps);
          res.gating.alphas.data[static_cast<std::size_t>(p)] =
              static_cast<float>(res.gating.alphas.data[static_cast<std::size_t>(p)] - update);
        }
      } else {
        for (int p = 0; p < P; ++p) {
          res.gating.alphas.data[static_cast<std::size_t>(p)] -=
              static_cast<float>(params.lr * grads[static_cast<std::size_t>(p)]);
        }
      }

      epoch_loss += batch_loss * b;
      epoch_items += b;
    }

    if (epoch_items == 0) throw std::invalid_argument("gating: dataset too small for a batch");
    res.history.push_back(make_stat(epoch, epoch_loss / epoch_items, res.gating));
    res.epochs_run = epoch;
  }
  return res;
}

void save_bp_history(const BpResult& r, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("gating: cannot write " + path);
  for (const BpEpochStat& st : r.history) {
    nlohmann::json j;
    j["epoch"] = st.epoch;
    j["loss"] = st.loss;
    j["mean_beta"] = st.mean_beta;
    j["frac_polarized"] = st.frac_polarized;
    out << j.dump() << "\n";
  }
  nlohmann::json tail;
  tail["type"] = "result";
  tail["epochs_run"] = r.epochs_run;
  tail["diverged"] = r.diverged;
  out << tail.dump() << "\n";
}

}  // namespace aat
