#include "aat/bench.hpp"

#include <algorithm>
#include <cmath>

#include "aat/metrics.hpp"

namespace aat {

namespace {

Tensor2 gaussian_matrix(int rows, int cols, float stddev, Rng& rng) {
  Tensor2 m(rows, cols);
  for (float& v : m.data) v = rng.normalf(0.0f, stddev);
  return m;
}

std::vector<float> zeros(int n) { return std::vector<float>(std::size_t(n), 0.0f); }
std::vector<float> ones(int n) { return std::vector<float>(std::size_t(n), 1.0f); }

// Orthonormal basis of the signal subspace, a pure function of the model
// seed.  Concept content only ever enters tokens through this basis, and the
// planted value projections are made exactly blind to it, so whatever they
// inject into the class pathway is concept-independent by construction.
// Columns are kept orthogonal to the all-ones direction too: layer norm's
// mean subtraction then never moves token content on or off the basis, so
// a token row built without basis content stays exactly basis-free after
// normalization.
Tensor2 signal_basis(int token_dim, int concept_dim, std::uint64_t model_seed) {
  Rng rng(substream(model_seed, "signal_basis"));
  std::vector<std::vector<double>> cols;
  cols.reserve(std::size_t(concept_dim) + 1);
  {
    std::vector<double> ones_dir(static_cast<std::size_t>(token_dim),
                                 1.0 / std::sqrt(double(token_dim)));
    cols.push_back(std::move(ones_dir));
  }
  for (int c = 0; c < concept_dim; ++c) {
    std::vector<double> v(static_cast<std::size_t>(token_dim));
    for (double& x : v) x = rng.normal();
    for (const std::vector<double>& prev : cols) {
      double dot = 0.0;
      for (int j = 0; j < token_dim; ++j) dot += prev[std::size_t(j)] * v[std::size_t(j)];
      for (int j = 0; j < token_dim; ++j) v[std::size_t(j)] -= dot * prev[std::size_t(j)];
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
    for (double& x : v) x *= inv;
    cols.push_back(std::move(v));
  }
  Tensor2 u(token_dim, concept_dim);
  for (int j = 0; j < token_dim; ++j)
    for (int c = 0; c < concept_dim; ++c)
      u.at(j, c) = float(cols[std::size_t(c) + 1][std::size_t(j)]);
  return u;
}

// Column-wise m <- m - U (U^T m), removing every signal-subspace component.
void project_out_basis(const Tensor2& basis, Tensor2& m) {
  for (int col = 0; col < m.cols; ++col) {
    for (int c = 0; c < basis.cols; ++c) {
      double dot = 0.0;
      for (int j = 0; j < basis.rows; ++j) dot += double(basis.at(j, c)) * double(m.at(j, col));
      for (int j = 0; j < basis.rows; ++j) m.at(j, col) -= float(dot * double(basis.at(j, c)));
    }
  }
}

void project_out_basis(const Tensor2& basis, std::vector<float>& v) {
  for (int c = 0; c < basis.cols; ++c) {
    double dot = 0.0;
    for (int j = 0; j < basis.rows; ++j) dot += double(basis.at(j, c)) * double(v[std::size_t(j)]);
    for (int j = 0; j < basis.rows; ++j) v[std::size_t(j)] -= float(dot * double(basis.at(j, c)));
  }
}

// Row-wise m <- m - (m U) U^T: every row of m becomes orthogonal to the
// basis columns, so a map applied as row-times-matrix from the right never
// writes onto the signal subspace.
void project_out_basis_rows(const Tensor2& basis, Tensor2& m) {
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < basis.cols; ++c) {
      double dot = 0.0;
      for (int j = 0; j < basis.rows; ++j) dot += double(basis.at(j, c)) * double(m.at(r, j));
      for (int j = 0; j < basis.rows; ++j) m.at(r, j) -= float(dot * double(basis.at(j, c)));
    }
  }
}

// Shared fixtures for pair construction: the class token row, the fixed
// per-position token bases, one concept mixer per signal position, and the
// common nuisance direction the distractor tokens ride on.  All of it is a
// pure function of the model seed — the model and its token world are one
// package — so data seeds only vary which pairs get sampled.  The nuisance
// direction lives in the basis complement, where the planted heads listen.
struct DataFixtures {
  std::vector<float> class_init;
  Tensor2 basis;               // token_dim x concept_dim, orthonormal columns
  Tensor2 token_base;          // image_tokens x token_dim, fixed per position
  std::vector<Tensor2> mixers;  // concept_dim x concept_dim per signal position
  std::vector<float> nuisance;  // token_dim, orthogonal to the basis
  int signal_tokens = 0;
  int distractor_tokens = 0;

  DataFixtures(const EncoderSpec& enc, int concept_dim, std::uint64_t model_seed) {
    const int image_tokens = enc.tokens - 1;
    signal_tokens = (image_tokens + 1) / 2;
    distractor_tokens = image_tokens - signal_tokens;
    basis = signal_basis(enc.token_dim, concept_dim, model_seed);

    // Bases and the class row start basis-free: a token's coordinates on
    // the signal subspace are then exactly what the concept mixers put
    // there, with no fixed offset shared by every image.
    Rng cls(substream(model_seed, "class_token"));
    const float tok_std = 1.0f / std::sqrt(float(enc.token_dim));
    class_init.resize(std::size_t(enc.token_dim));
    for (float& v : class_init) v = cls.normalf(0.0f, tok_std);
    project_out_basis(basis, class_init);

    Rng br(substream(model_seed, "token_base"));
    token_base = gaussian_matrix(image_tokens, enc.token_dim, tok_std, br);
    project_out_basis_rows(basis, token_base);

    const float mix_std = 1.0f / std::sqrt(float(concept_dim));
    for (int p = 0; p < signal_tokens; ++p) {
      Rng mr(substream(model_seed, "signal_map", std::uint64_t(p)));
      mixers.push_back(gaussian_matrix(concept_dim, concept_dim, mix_std, mr));
    }

    Rng nr(substream(model_seed, "nuisance"));
    nuisance.resize(std::size_t(enc.token_dim));
    for (float& v : nuisance) v = nr.normalf();
    project_out_basis(basis, nuisance);
    double norm2 = 0.0;
    for (float v : nuisance) norm2 += double(v) * double(v);
    const float inv = float(1.0 / std::sqrt(std::max(norm2, 1e-30)));
    for (float& v : nuisance) v *= inv;
  }
};

std::vector<float> unit_concept(int dim, Rng& rng) {
  std::vector<float> c(static_cast<std::size_t>(dim));
  double norm2 = 0.0;
  for (float& v : c) {
    v = rng.normalf();
    norm2 += double(v) * double(v);
  }
  const float inv = float(1.0 / std::sqrt(std::max(norm2, 1e-30)));
  for (float& v : c) v *= inv;
  return c;
}

// One image token grid plus the concept it depicts.
std::pair<Tensor2, std::vector<float>> build_pair(const EncoderSpec& enc, const BenchSpec& spec,
                                                  const DataFixtures& fx, Rng& rng) {
  std::vector<float> c = unit_concept(spec.concept_dim, rng);
  Tensor2 tokens(enc.tokens, enc.token_dim);
  for (int j = 0; j < enc.token_dim; ++j) tokens.at(0, j) = fx.class_init[std::size_t(j)];

  int row = 1;
  std::vector<double> mixed(std::size_t(spec.concept_dim));
  for (int p = 0; p < fx.signal_tokens; ++p, ++row) {
    const Tensor2& mix = fx.mixers[std::size_t(p)];
    for (int r = 0; r < spec.concept_dim; ++r) {
      double acc = 0.0;
      for (int k = 0; k < spec.concept_dim; ++k)
        acc += double(mix.at(r, k)) * double(c[std::size_t(k)]);
      mixed[std::size_t(r)] = acc;
    }
    const float* base = fx.token_base.row(row - 1);
    float* t = tokens.row(row);
    for (int j = 0; j < enc.token_dim; ++j) {
      double acc = 0.0;
      for (int k = 0; k < spec.concept_dim; ++k)
        acc += double(fx.basis.at(j, k)) * mixed[std::size_t(k)];
      t[j] = base[j] + spec.signal_gain * float(acc);
    }
  }
  for (int p = 0; p < fx.distractor_tokens; ++p, ++row) {
    const float gain = rng.normalf(0.0f, spec.nuisance_gain);
    const float* base = fx.token_base.row(row - 1);
    float* t = tokens.row(row);
    for (int j = 0; j < enc.token_dim; ++j) t[j] = base[j] + gain * fx.nuisance[std::size_t(j)];
  }
  for (int r = 1; r < enc.tokens; ++r) {
    float* t = tokens.row(r);
    for (int j = 0; j < enc.token_dim; ++j) t[j] += rng.normalf(0.0f, spec.noise_scale);
  }
  return {std::move(tokens), std::move(c)};
}

// Text-map calibration against the encoder with the planted set suppressed.
// A ridge decoder c ~ G (emb - mean) is fit in double via Cholesky and the
// text map is its transpose, so text-image scores reduce to concept cosines:
// the decoder folds in the inverse embedding covariance, which a forward fit
// emb ~ T c would not (scores would then follow J^T J and its spectrum skew
// would scramble rankings).  The mean offset only adds per-text constants.
Tensor2 calibrate_text_map(const BenchModel& model, const DataFixtures& fx,
                           std::uint64_t data_seed) {
  const int n_cal = 512;
  const int d = model.spec.concept_dim;
  const int e = model.spec.encoder.embed_dim;

  std::vector<Tensor2> probes;
  probes.reserve(n_cal);
  std::vector<std::vector<float>> concepts;
  concepts.reserve(n_cal);
  for (int i = 0; i < n_cal; ++i) {
    Rng rng(substream(data_seed, "calib", std::uint64_t(i)));
    auto [tokens, c] = build_pair(model.spec.encoder, model.spec, fx, rng);
    probes.push_back(std::move(tokens));
    concepts.push_back(std::move(c));
  }
  const Tensor2 emb = encode_batch(probes, model.weights, planted_config(model, 0.1f), 1);

  std::vector<double> mean(std::size_t(e), 0.0);
  for (int i = 0; i < n_cal; ++i)
    for (int s = 0; s < e; ++s) mean[std::size_t(s)] += double(emb.at(i, s));
  for (double& v : mean) v /= double(n_cal);

  // A = Ec^T Ec + lambda I (e x e), B = Ec^T C (e x d), Ec centered
  std::vector<double> a(std::size_t(e) * std::size_t(e), 0.0);
  std::vector<double> b(std::size_t(e) * std::size_t(d), 0.0);
  std::vector<double> ec(static_cast<std::size_t>(e));
  for (int i = 0; i < n_cal; ++i) {
    for (int s = 0; s < e; ++s) ec[std::size_t(s)] = double(emb.at(i, s)) - mean[std::size_t(s)];
    const std::vector<float>& c = concepts[std::size_t(i)];
    for (int r = 0; r < e; ++r) {
      for (int s = 0; s < e; ++s)
        a[std::size_t(r) * std::size_t(e) + std::size_t(s)] += ec[std::size_t(r)] * ec[std::size_t(s)];
      for (int s = 0; s < d; ++s)
        b[std::size_t(r) * std::size_t(d) + std::size_t(s)] +=
            ec[std::size_t(r)] * double(c[std::size_t(s)]);
    }
  }
  double tr = 0.0;
  for (int r = 0; r < e; ++r) tr += a[std::size_t(r) * std::size_t(e) + std::size_t(r)];
  const double lambda = 1e-4 * tr / double(e);
  for (int r = 0; r < e; ++r) a[std::size_t(r) * std::size_t(e) + std::size_t(r)] += lambda;

  // Cholesky A = L L^T
  std::vector<double> l(std::size_t(e) * std::size_t(e), 0.0);
  for (int i = 0; i < e; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[std::size_t(i) * std::size_t(e) + std::size_t(j)];
      for (int k = 0; k < j; ++k)
        sum -= l[std::size_t(i) * std::size_t(e) + std::size_t(k)] *
               l[std::size_t(j) * std::size_t(e) + std::size_t(k)];
      if (i == j)
        l[std::size_t(i) * std::size_t(e) + std::size_t(j)] = std::sqrt(std::max(sum, 1e-30));
      else
        l[std::size_t(i) * std::size_t(e) + std::size_t(j)] =
            sum / l[std::size_t(j) * std::size_t(e) + std::size_t(j)];
    }
  }

  // Solve L L^T X = B column by column; T = X (e x d)
  Tensor2 t_map(e, d);
  std::vector<double> y(static_cast<std::size_t>(e)), x(static_cast<std::size_t>(e));
  for (int col = 0; col < d; ++col) {
    for (int i = 0; i < e; ++i) {
      double sum = b[std::size_t(i) * std::size_t(d) + std::size_t(col)];
      for (int k = 0; k < i; ++k)
        sum -= l[std::size_t(i) * std::size_t(e) + std::size_t(k)] * y[std::size_t(k)];
      y[std::size_t(i)] = sum / l[std::size_t(i) * std::size_t(e) + std::size_t(i)];
    }
    for (int i = e - 1; i >= 0; --i) {
      double sum = y[std::size_t(i)];
      for (int k = i + 1; k < e; ++k)
        sum -= l[std::size_t(k) * std::size_t(e) + std::size_t(i)] * x[std::size_t(k)];
      x[std::size_t(i)] = sum / l[std::size_t(i) * std::size_t(e) + std::size_t(i)];
      t_map.at(i, col) = float(x[std::size_t(i)]);
    }
  }

  // Make every text orthogonal to the mean embedding.  Otherwise each text
  // picks up its own constant along that mean, which cancels when ranking
  // images per text but scrambles the text gallery seen from an image.
  double m2 = 0.0;
  for (double v : mean) m2 += v * v;
  if (m2 > 0.0) {
    for (int col = 0; col < d; ++col) {
      double dot = 0.0;
      for (int i = 0; i < e; ++i) dot += mean[std::size_t(i)] * double(t_map.at(i, col));
      for (int i = 0; i < e; ++i)
        t_map.at(i, col) -= float(mean[std::size_t(i)] * dot / m2);
    }
  }
  return t_map;
}

std::vector<float> text_embedding(const Tensor2& t_map, const std::vector<float>& c) {
  std::vector<double> acc(std::size_t(t_map.rows), 0.0);
  for (int i = 0; i < t_map.rows; ++i)
    for (int k = 0; k < t_map.cols; ++k)
      acc[std::size_t(i)] += double(t_map.at(i, k)) * double(c[std::size_t(k)]);
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
  std::vector<float> out(std::size_t(t_map.rows));
  for (int i = 0; i < t_map.rows; ++i) out[std::size_t(i)] = float(acc[std::size_t(i)] * inv);
  return out;
}

PairDataset build_split(const BenchModel& model, const DataFixtures& fx, const Tensor2& t_map,
                        const std::string& split, int base, int n, std::uint64_t seed) {
  PairDataset ds;
  ds.split = split;
  ds.seed = seed;
  ds.images.reserve(std::size_t(n));
  ds.texts = Tensor2(n, model.spec.encoder.embed_dim);
  for (int i = 0; i < n; ++i) {
    Rng rng(substream(seed, "pair", std::uint64_t(base + i)));
    auto [tokens, c] = build_pair(model.spec.encoder, model.spec, fx, rng);
    ds.images.push_back(std::move(tokens));
    const std::vector<float> t = text_embedding(t_map, c);
    for (int j = 0; j < model.spec.encoder.embed_dim; ++j) ds.texts.at(i, j) = t[std::size_t(j)];
  }
  return ds;
}

}  // namespace

double spectral_norm(const Tensor2& w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(std::size_t(w.cols));
  for (double& x : v) x = rng.normal();
  double sigma = 0.0;
  std::vector<double> u(std::size_t(w.rows));
  for (int iter = 0; iter < 60; ++iter) {
    for (int i = 0; i < w.rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < w.cols; ++j) acc += double(w.at(i, j)) * v[std::size_t(j)];
      u[std::size_t(i)] = acc;
    }
    double un = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(std::max(un, 1e-300));
    sigma = un;
    for (int j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (int i = 0; i < w.rows; ++i) acc += double(w.at(i, j)) * u[std::size_t(i)] / un;
      v[std::size_t(j)] = acc;
    }
    double vn = 0.0;
    for (double x : v) vn += x * x;
    vn = std::sqrt(std::max(vn, 1e-300));
    for (double& x : v) x /= vn;
  }
  return sigma;
}

BenchModel generate_model(const BenchSpec& spec) {
  spec.encoder.validate();
  if (spec.concept_dim <= 0 || spec.concept_dim > spec.encoder.token_dim)
    throw std::invalid_argument("bench spec: concept_dim must be in [1, token_dim]");
  if (!(spec.kappa >= 1.0f)) throw std::invalid_argument("bench spec: kappa must be at least one");
  const int total_heads = spec.encoder.layers * spec.encoder.heads;
  if (spec.planted_count < 0 || spec.planted_count > total_heads)
    throw std::invalid_argument("bench spec: planted head count out of range");

  BenchModel m;
  m.spec = spec;
  EncoderWeights& w = m.weights;
  w.spec = spec.encoder;

  const float proj_std = 1.0f / std::sqrt(float(spec.encoder.token_dim));
  const float ffn_std = 1.0f / std::sqrt(float(spec.encoder.ffn_dim));
  const Tensor2 basis = signal_basis(spec.encoder.token_dim, spec.concept_dim, spec.seed);

  // Choose the planted set first; clean-head concept slices skip over it.
  if (!spec.planted_override.empty()) {
    m.planted = spec.planted_override;
    for (auto [l, h] : m.planted)
      if (l < 0 || l >= spec.encoder.layers || h < 0 || h >= spec.encoder.heads)
        throw std::invalid_argument("bench spec: planted head outside the grid");
  } else {
    Rng sr(substream(spec.seed, "planted"));
    const std::vector<int> flat = sr.sample_distinct(total_heads, spec.planted_count, {});
    for (int f : flat)
      m.planted.push_back({f / spec.encoder.heads, f % spec.encoder.heads});
    std::sort(m.planted.begin(), m.planted.end());
  }

  // Span of the nuisance axis as it appears after the first layer norm at
  // each distractor token's base point: secants across +/- one nuisance
  // unit, orthonormalized.  Clean heads are blinded to it below so unlucky
  // clean heads cannot read enough distractor junk to be mildly detrimental
  // themselves, which would cost the planted set its ground-truth status.
  const DataFixtures fx(spec.encoder, spec.concept_dim, spec.seed);
  Tensor2 nuis_span;
  {
    const int n_dis = fx.distractor_tokens;
    Tensor2 pts(2 * n_dis, spec.encoder.token_dim);
    for (int p = 0; p < n_dis; ++p) {
      const float* base = fx.token_base.row(fx.signal_tokens + p);
      for (int j = 0; j < spec.encoder.token_dim; ++j) {
        pts.at(2 * p, j) = base[j] + fx.nuisance[std::size_t(j)];
        pts.at(2 * p + 1, j) = base[j] - fx.nuisance[std::size_t(j)];
      }
    }
    const Tensor2 ln = layer_norm(pts, ones(spec.encoder.token_dim),
                                  zeros(spec.encoder.token_dim));
    std::vector<std::vector<double>> dirs;
    for (int p = 0; p < n_dis; ++p) {
      std::vector<double> d(static_cast<std::size_t>(spec.encoder.token_dim));
      for (int j = 0; j < spec.encoder.token_dim; ++j)
        d[std::size_t(j)] = double(ln.at(2 * p, j)) - double(ln.at(2 * p + 1, j));
      for (const std::vector<double>& prev : dirs) {
        double dot = 0.0;
        for (int j = 0; j < spec.encoder.token_dim; ++j) dot += prev[std::size_t(j)] * d[std::size_t(j)];
        for (int j = 0; j < spec.encoder.token_dim; ++j) d[std::size_t(j)] -= dot * prev[std::size_t(j)];
      }
      double n2 = 0.0;
      for (double x : d) n2 += x * x;
      if (n2 < 1e-12) continue;
      const double inv = 1.0 / std::sqrt(n2);
      for (double& x : d) x *= inv;
      dirs.push_back(std::move(d));
    }
    nuis_span = Tensor2(spec.encoder.token_dim, int(dirs.size()));
    for (int j = 0; j < spec.encoder.token_dim; ++j)
      for (int c = 0; c < int(dirs.size()); ++c)
        nuis_span.at(j, c) = float(dirs[std::size_t(c)][std::size_t(j)]);
  }

  // Clean value projections read exactly one concept axis each (round-robin
  // over the basis columns), on top of a random concept-blind remainder.
  // With each axis owned by at most a couple of heads, suppressing any clean
  // head costs retrieval something, so only the planted set is free to cut.
  //
  // Everything else is kept off the signal subspace, in both directions.
  // Queries and keys are blinded to the basis and the nuisance span, so
  // attention weights depend only on the fixed token bases and each head
  // reads its axis with a near-constant per-image coefficient.  Head output
  // maps and the feed-forward blocks neither read nor write the basis, so
  // token rows carry exactly the mixer-injected concept coordinates at
  // every layer: a late head sees the same pristine signal as an early one,
  // and no residual echo ties one head's value to another's gate.  Without
  // this separation, marginal heads arrive noisy enough that pruning them
  // can look profitable to a contrastive objective.
  int next_axis = 0;
  for (int l = 0; l < spec.encoder.layers; ++l) {
    Rng rng(substream(spec.seed, "layer", std::uint64_t(l)));
    LayerWeights lw;
    lw.ln1 = {ones(spec.encoder.token_dim), zeros(spec.encoder.token_dim)};
    lw.ln2 = {ones(spec.encoder.token_dim), zeros(spec.encoder.token_dim)};
    for (int h = 0; h < spec.encoder.heads; ++h) {
      const bool is_planted =
          std::find(m.planted.begin(), m.planted.end(), std::array<int, 2>{l, h}) !=
          m.planted.end();
      HeadWeights hw;
      hw.wq = gaussian_matrix(spec.encoder.token_dim, spec.encoder.head_dim, proj_std, rng);
      hw.wk = gaussian_matrix(spec.encoder.token_dim, spec.encoder.head_dim, proj_std, rng);
      hw.wv = gaussian_matrix(spec.encoder.token_dim, spec.encoder.head_dim, proj_std, rng);
      project_out_basis(basis, hw.wq);
      project_out_basis(nuis_span, hw.wq);
      project_out_basis(basis, hw.wk);
      project_out_basis(nuis_span, hw.wk);
      project_out_basis(basis, hw.wv);
      if (!is_planted)
        for (float& v : hw.wv.data) v *= spec.clean_noise;
      if (spec.signal_align != 0.0f && !is_planted) {
        const int axis = next_axis++ % spec.concept_dim;
        std::vector<float> g(std::size_t(spec.encoder.head_dim));
        for (float& v : g) v = rng.normalf(0.0f, spec.signal_align * proj_std);
        for (int j = 0; j < spec.encoder.token_dim; ++j)
          for (int k = 0; k < spec.encoder.head_dim; ++k)
            hw.wv.at(j, k) += basis.at(j, axis) * g[std::size_t(k)];
      }
      if (!is_planted) project_out_basis(nuis_span, hw.wv);
      hw.wo = gaussian_matrix(spec.encoder.head_dim, spec.encoder.token_dim, proj_std, rng);
      project_out_basis_rows(basis, hw.wo);
      hw.bq = zeros(spec.encoder.head_dim);
      hw.bk = zeros(spec.encoder.head_dim);
      hw.bv = zeros(spec.encoder.head_dim);
      lw.heads.push_back(std::move(hw));
    }
    lw.attn_bias = zeros(spec.encoder.token_dim);
    lw.w1 = gaussian_matrix(spec.encoder.token_dim, spec.encoder.ffn_dim, proj_std, rng);
    project_out_basis(basis, lw.w1);
    lw.b1 = zeros(spec.encoder.ffn_dim);
    lw.w2 = gaussian_matrix(spec.encoder.ffn_dim, spec.encoder.token_dim, ffn_std, rng);
    project_out_basis_rows(basis, lw.w2);
    lw.b2 = zeros(spec.encoder.token_dim);
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = {ones(spec.encoder.token_dim), zeros(spec.encoder.token_dim)};
  Rng pr(substream(spec.seed, "proj"));
  w.proj = gaussian_matrix(spec.encoder.token_dim, spec.encoder.embed_dim, proj_std, pr);

  // Rescale planted value projections to kappa times the clean median norm.
  std::vector<double> clean_norms;
  for (int l = 0; l < spec.encoder.layers; ++l)
    for (int h = 0; h < spec.encoder.heads; ++h) {
      const bool is_planted =
          std::find(m.planted.begin(), m.planted.end(), std::array<int, 2>{l, h}) !=
          m.planted.end();
      if (!is_planted)
        clean_norms.push_back(
            spectral_norm(w.layers[std::size_t(l)].heads[std::size_t(h)].wv,
                          substream(spec.seed, "power", std::uint64_t(l * 64 + h))));
    }
  std::sort(clean_norms.begin(), clean_norms.end());
  const double median = clean_norms.empty() ? 1.0 : clean_norms[(clean_norms.size() - 1) / 2];

  // Planted value projections: random, blind to the signal subspace, and
  // rescaled to kappa times the clean median norm.
  int idx = 0;
  for (auto [l, h] : m.planted) {
    Rng rr(substream(spec.seed, "planted_noise", std::uint64_t(idx++)));
    Tensor2 r = gaussian_matrix(spec.encoder.token_dim, spec.encoder.head_dim, 1.0f, rr);
    project_out_basis(basis, r);
    const double rn =
        spectral_norm(r, substream(spec.seed, "power_planted", std::uint64_t(l * 64 + h)));
    const float scale = float(double(spec.kappa) * median / std::max(rn, 1e-12));
    for (float& v : r.data) v *= scale;
    w.layers[std::size_t(l)].heads[std::size_t(h)].wv = std::move(r);
  }

  // Blind the embedding projection to the constant class-pathway content.
  // The final class row is dominated by a component every image shares
  // (attention reads of the fixed token bases and their feed-forward
  // images) which would eat the unit embedding norm and compress all pair
  // cosines to a hairline.  That constant shifts when heads are suppressed,
  // so it is measured and removed under every regime the toolkit scores:
  // vanilla, the full planted set suppressed, and each planted head alone.
  {
    const int n_cal = 128;
    std::vector<Tensor2> probes;
    probes.reserve(std::size_t(n_cal));
    for (int i = 0; i < n_cal; ++i) {
      Rng rng(substream(spec.seed, "projcal", std::uint64_t(i)));
      probes.push_back(build_pair(spec.encoder, spec, fx, rng).first);
    }
    std::vector<AblationConfig> regimes;
    regimes.push_back(AblationConfig::ones(spec.encoder.layers, spec.encoder.heads));
    regimes.push_back(planted_config(m, 0.1f));
    for (auto [l, h] : m.planted) {
      AblationConfig solo = AblationConfig::ones(spec.encoder.layers, spec.encoder.heads);
      solo.set(l, h, 0.1f);
      regimes.push_back(solo);
    }
    std::vector<std::vector<double>> dirs;
    for (const AblationConfig& cfg : regimes) {
      std::vector<double> mean(std::size_t(spec.encoder.token_dim), 0.0);
      for (const Tensor2& probe : probes) {
        const std::vector<float> row = encode_class_row(probe, w, cfg);
        for (int j = 0; j < spec.encoder.token_dim; ++j) mean[std::size_t(j)] += double(row[std::size_t(j)]);
      }
      for (double& v : mean) v /= double(n_cal);
      for (const std::vector<double>& prev : dirs) {
        double dot = 0.0;
        for (int j = 0; j < spec.encoder.token_dim; ++j) dot += prev[std::size_t(j)] * mean[std::size_t(j)];
        for (int j = 0; j < spec.encoder.token_dim; ++j) mean[std::size_t(j)] -= dot * prev[std::size_t(j)];
      }
      double n2 = 0.0;
      for (double v : mean) n2 += v * v;
      if (n2 < 1e-12) continue;
      const double inv = 1.0 / std::sqrt(n2);
      for (double& v : mean) v *= inv;
      dirs.push_back(std::move(mean));
    }
    Tensor2 span(spec.encoder.token_dim, int(dirs.size()));
    for (int j = 0; j < spec.encoder.token_dim; ++j)
      for (int c = 0; c < int(dirs.size()); ++c)
        span.at(j, c) = float(dirs[std::size_t(c)][std::size_t(j)]);
    project_out_basis(span, w.proj);
  }
  return m;
}

AblationConfig planted_config(const BenchModel& m, float beta) {
  AblationConfig cfg = AblationConfig::ones(m.spec.encoder.layers, m.spec.encoder.heads);
  for (auto [l, h] : m.planted) cfg.set(l, h, beta);
  return cfg;
}

BenchBundle generate_splits(const BenchModel& model, int n_train, int n_val, int n_test,
                            std::uint64_t seed, bool enforce_gate, double gate_margin) {
  if (n_train < 0 || n_val < 0 || n_test < 0)
    throw std::invalid_argument("generate_splits: negative split size");
  const DataFixtures fx(model.spec.encoder, model.spec.concept_dim, model.spec.seed);
  const Tensor2 t_map = calibrate_text_map(model, fx, seed);

  BenchBundle out;
  out.train = build_split(model, fx, t_map, "train", 0, n_train, seed);
  out.val = build_split(model, fx, t_map, "val", n_train, n_val, seed);
  out.test = build_split(model, fx, t_map, "test", n_train + n_val, n_test, seed);

  if (n_test > 0) {
    const AblationConfig vanilla = AblationConfig::ones(model.spec.encoder.layers,
                                                        model.spec.encoder.heads);
    const Tensor2 ev = encode_batch(out.test.images, model.weights, vanilla, 1);
    const Tensor2 ea = encode_batch(out.test.images, model.weights, planted_config(model, 0.1f), 1);
    std::vector<int> gt(static_cast<std::size_t>(n_test));
    for (int i = 0; i < n_test; ++i) gt[std::size_t(i)] = i;
    out.gate.vanilla_mean_r =
        recall_report(similarity_matrix(out.test.texts, ev), gt, "text_to_image").mean_r;
    out.gate.planted_mean_r =
        recall_report(similarity_matrix(out.test.texts, ea), gt, "text_to_image").mean_r;
    if (enforce_gate && out.gate.margin() < gate_margin) {
      throw BenchGateError(
          out.gate, "benchmark rejected: planted ablation lifts test mean_r by " +
                        std::to_string(out.gate.margin()) + " points, below the gate of " +
                        std::to_string(gate_margin));
    }
  }
  return out;
}

void save_dataset(const PairDataset& ds, const std::string& manifest_path) {
  Container c;
  const int n = ds.n();
  const int tokens = ds.images.empty() ? 0 : ds.images[0].rows;
  const int token_dim = ds.images.empty() ? 0 : ds.images[0].cols;
  c.meta["n_pairs"] = n;
  c.meta["n_tokens"] = tokens;
  c.meta["token_dim"] = token_dim;
  c.meta["embed_dim"] = ds.texts.cols;
  c.meta["split"] = ds.split;
  c.meta["seed"] = ds.seed;

  std::vector<float> flat;
  flat.reserve(std::size_t(n) * std::size_t(tokens) * std::size_t(token_dim));
  for (const Tensor2& img : ds.images) flat.insert(flat.end(), img.data.begin(), img.data.end());
  c.put("image_tokens", {n, tokens, token_dim}, std::move(flat));
  c.put("text_embs", ds.texts);
  save_container(c, manifest_path);
}

PairDataset load_dataset(const std::string& manifest_path) {
  const Container c = load_container(manifest_path);
  PairDataset ds;
  int n = 0, tokens = 0, token_dim = 0;
  try {
    n = c.meta.at("n_pairs").get<int>();
    tokens = c.meta.at("n_tokens").get<int>();
    token_dim = c.meta.at("token_dim").get<int>();
    ds.split = c.meta.at("split").get<std::string>();
    ds.seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerFault::corrupt_manifest,
                         manifest_path + ": dataset meta: " + std::string(e.what()));
  }
  const NamedTensor& img = c.get("image_tokens");
  if (img.shape != std::vector<int>{n, tokens, token_dim})
    throw ContainerError(ContainerFault::shape_mismatch,
                         manifest_path + ": image_tokens shape disagrees with meta");
  ds.images.reserve(std::size_t(n));
  const std::size_t stride = std::size_t(tokens) * std::size_t(token_dim);
  for (int i = 0; i < n; ++i) {
    Tensor2 t(tokens, token_dim);
    std::copy_n(img.data.begin() + std::size_t(i) * stride, stride, t.data.begin());
    ds.images.push_back(std::move(t));
  }
  ds.texts = c.get2d("text_embs");
  if (ds.texts.rows != n)
    throw ContainerError(ContainerFault::shape_mismatch,
                         manifest_path + ": text_embs row count disagrees with meta");
  return ds;
}

void save_model(const BenchModel& m, const std::string& manifest_path) {
  Container c = weights_to_container(m.weights);
  nlohmann::json planted = nlohmann::json::array();
  for (auto [l, h] : m.planted) planted.push_back({l, h});
  c.meta["planted"] = planted;
  c.meta["kappa"] = m.spec.kappa;
  c.meta["concept_dim"] = m.spec.concept_dim;
  c.meta["nuisance_gain"] = m.spec.nuisance_gain;
  c.meta["noise_scale"] = m.spec.noise_scale;
  c.meta["signal_align"] = m.spec.signal_align;
  c.meta["clean_noise"] = m.spec.clean_noise;
  c.meta["signal_gain"] = m.spec.signal_gain;
  c.meta["seed"] = m.spec.seed;
  save_container(c, manifest_path);
}

BenchModel load_model(const std::string& manifest_path) {
  const Container c = load_container(manifest_path);
  BenchModel m;
  m.weights = weights_from_container(c);
  m.spec.encoder = m.weights.spec;
  try {
    for (const auto& p : c.meta.at("planted"))
      m.planted.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    m.spec.kappa = c.meta.at("kappa").get<float>();
    m.spec.concept_dim = c.meta.at("concept_dim").get<int>();
    m.spec.nuisance_gain = c.meta.at("nuisance_gain").get<float>();
    m.spec.noise_scale = c.meta.at("noise_scale").get<float>();
    m.spec.signal_align = c.meta.at("signal_align").get<float>();
    m.spec.clean_noise = c.meta.at("clean_noise").get<float>();
    m.spec.signal_gain = c.meta.at("signal_gain").get<float>();
    m.spec.seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerFault::corrupt_manifest,
                         manifest_path + ": model meta: " + std::string(e.what()));
  }
  m.spec.planted_count = int(m.planted.size());
  return m;
}

}  // namespace aat
