#include "aat/ga.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "aat/rng.hpp"

namespace aat {

namespace {

std::string mask_key(const std::vector<std::uint8_t>& mask) {
  std::string k(mask.size(), '0');
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) k[i] = '1';
  return k;
}

int popcount(const std::vector<std::uint8_t>& mask) {
  int n = 0;
  for (std::uint8_t b : mask) n += b ? 1 : 0;
  return n;
}

// FIFO-evicting map from mask to gallery embeddings.  Fitness is a pure
// function of (mask, model, context), so reusing embeddings across
// generations changes nothing numerically.
class EmbeddingCache {
 public:
  EmbeddingCache(const EncoderWeights& model, const std::vector<Tensor2>& images, float beta,
                 int capacity, int threads)
      : model_(model), images_(images), beta_(beta), capacity_(capacity), threads_(threads) {}

  const Tensor2& lookup(const std::vector<std::uint8_t>& mask, bool& computed) {
    const std::string key = mask_key(mask);
    auto it = map_.find(key);
    if (it != map_.end()) {
      computed = false;
      return it->second;
    }
    const AblationConfig cfg =
        config_from_mask(mask, model_.spec.layers, model_.spec.heads, beta_);
    Tensor2 emb = encode_batch(images_, model_, cfg, threads_);
    ++evals_;
    computed = true;
    if (int(order_.size()) >= capacity_) {
      map_.erase(order_.front());
      order_.pop_front();
    }
    order_.push_back(key);
    return map_.emplace(key, std::move(emb)).first->second;
  }

  int evals() const { return evals_; }

 private:
  const EncoderWeights& model_;
  const std::vector<Tensor2>& images_;
  float beta_;
  int capacity_;
  int threads_;
  int evals_ = 0;
  std::unordered_map<std::string, Tensor2> map_;
  std::deque<std::string> order_;
};

double mean_pairwise_hamming(const std::vector<std::vector<std::uint8_t>>& pop) {
  const std::size_t p = pop.size();
  if (p < 2) return 0.0;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) {
      const auto& a = pop[i];
      const auto& b = pop[j];
      for (std::size_t k = 0; k < a.size(); ++k) total += a[k] != b[k] ? 1 : 0;
    }
  return double(total) / (double(p) * double(p - 1) / 2.0);
}

}  // namespace

FitnessContext build_fitness_context(const EncoderWeights& model, const PairDataset& data,
                                     int k1, int k2, std::uint64_t seed, int threads) {
  const int n = data.n();
  if (k1 < 0 || k2 < 0 || k1 + k2 < 1)
    throw std::invalid_argument("fitness context: need at least one negative");
  if (k1 + k2 > n - 1)
    throw std::invalid_argument("fitness context: k1 + k2 must not exceed n - 1");

  FitnessContext ctx;
  ctx.n = n;
  ctx.k1 = k1;
  ctx.k2 = k2;
  ctx.seed = seed;
  ctx.mined.assign(std::size_t(n), {});
  ctx.random_negatives.assign(std::size_t(n), {});

  const AblationConfig vanilla = AblationConfig::ones(model.spec.layers, model.spec.heads);
  const Tensor2 emb = encode_batch(data.images, model, vanilla, threads);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<double> sims(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      sims[std::size_t(j)] = dot64(data.texts.row(i), emb.row(j), data.texts.cols);
    for (int j = 0; j < n; ++j) order[std::size_t(j)] = j;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (sims[std::size_t(a)] != sims[std::size_t(b)])
        return sims[std::size_t(a)] > sims[std::size_t(b)];
      return a < b;
    });
    auto& mined = ctx.mined[std::size_t(i)];
    mined.reserve(std::size_t(k1));
    for (int j : order) {
      if (int(mined.size()) == k1) break;
      if (j != i) mined.push_back(j);
    }
  }
  refresh_random_negatives(ctx, 0);
  return ctx;
}

void refresh_random_negatives(FitnessContext& ctx, int generation) {
  for (int i = 0; i < ctx.n; ++i) {
    Rng rng(substream(ctx.seed, "negatives",
                      std::uint64_t(generation) * std::uint64_t(ctx.n) + std::uint64_t(i)));
    std::vector<int> excluded = ctx.mined[std::size_t(i)];
    excluded.push_back(i);
    ctx.random_negatives[std::size_t(i)] = rng.sample_distinct(ctx.n, ctx.k2, excluded);
  }
}

double fitness_margin(const Tensor2& image_embs, const Tensor2& text_embs,
                      const FitnessContext& ctx) {
  if (image_embs.rows != ctx.n || text_embs.rows != ctx.n)
    throw std::invalid_argument("fitness_margin: embedding counts disagree with the context");
  double total = 0.0;
  for (int i = 0; i < ctx.n; ++i) {
    const double pos = dot64(text_embs.row(i), image_embs.row(i), text_embs.cols);
    double worst = -std::numeric_limits<double>::infinity();
    for (int j : ctx.mined[std::size_t(i)])
      worst = std::max(worst, dot64(text_embs.row(i), image_embs.row(j), text_embs.cols));
    for (int j : ctx.random_negatives[std::size_t(i)])
      worst = std::max(worst, dot64(text_embs.row(i), image_embs.row(j), text_embs.cols));
    total += pos - worst;
  }
  return total / double(ctx.n);
}

GaResult evolve(const EncoderWeights& model, const PairDataset& data, const GaParams& params) {
  if (params.population < 2) throw std::invalid_argument("evolve: population must be at least 2");
  if (params.generations < 1) throw std::invalid_argument("evolve: need at least one generation");
  if (params.tournament < 1 || params.tournament > params.population)
    throw std::invalid_argument("evolve: bad tournament size");

  const int length = model.spec.layers * model.spec.heads;
  const double neg_inf = -std::numeric_limits<double>::infinity();

  FitnessContext ctx =
      build_fitness_context(model, data, params.k1, params.k2, params.seed, params.threads);
  EmbeddingCache cache(model, data.images, params.beta, params.cache_capacity, params.threads);
  Rng rng(substream(params.seed, "ga"));

  // Seed population: one all-zeros individual plus Bernoulli-density masks.
  std::vector<std::vector<std::uint8_t>> pop(std::size_t(params.population),
                                             std::vector<std::uint8_t>(std::size_t(length), 0));
  for (int i = 1; i < params.population; ++i)
    for (int b = 0; b < length; ++b)
      pop[std::size_t(i)][std::size_t(b)] = rng.bernoulli(params.init_bit_p) ? 1 : 0;

  GaResult result;
  result.best_fitness = neg_inf;
  result.stop_reason = "generations";

  int stale = 0;
  std::vector<double> fit(std::size_t(params.population), neg_inf);

  for (int gen = 0; gen < params.generations; ++gen) {
    if (gen > 0) refresh_random_negatives(ctx, gen);

    const int evals_before = cache.evals();
    int skipped = 0;
    double mean_acc = 0.0;
    int evaluated = 0;
    for (int i = 0; i < params.population; ++i) {
      const auto& mask = pop[std::size_t(i)];
      if (params.skip_ratio < 1.0 &&
          double(popcount(mask)) / double(length) > params.skip_ratio) {
        fit[std::size_t(i)] = neg_inf;
        ++skipped;
        continue;
      }
      bool computed = false;
      const Tensor2& emb = cache.lookup(mask, computed);
      fit[std::size_t(i)] = fitness_margin(emb, data.texts, ctx);
      mean_acc += fit[std::size_t(i)];
      ++evaluated;
    }

    // Hall of fame. Fitness gaps below parsimony_eps are treated as evaluation
    // noise: a larger mask must beat the incumbent by at least that much per
    // extra bit, and exact ties go to the sparser mask. Best fitness stays
    // non-decreasing either way.
    const double prev_best = result.best_fitness;
    for (int i = 0; i < params.population; ++i) {
      const double f = fit[std::size_t(i)];
      if (!std::isfinite(f)) continue;
      const int b = popcount(pop[std::size_t(i)]);
      const int grown = std::max(0, b - popcount(result.best_mask));
      if (f > result.best_fitness + params.parsimony_eps * double(grown) ||
          (f == result.best_fitness && b < popcount(result.best_mask))) {
        result.best_fitness = f;
        result.best_mask = pop[std::size_t(i)];
      }
    }

    GaGenerationStat stat;
    stat.gen = gen;
    stat.best_fitness = result.best_fitness;
    stat.mean_fitness = evaluated > 0 ? mean_acc / double(evaluated) : 0.0;
    stat.diversity = mean_pairwise_hamming(pop);
    stat.evals = cache.evals() - evals_before;
    stat.skipped = skipped;
    result.history.push_back(stat);
    result.generations_run = gen + 1;

    if (std::isfinite(prev_best) && result.best_fitness - prev_best < params.early_stop_eps)
      ++stale;
    else
      stale = 0;
    if (stale >= params.patience) {
      result.stop_reason = "stagnation";
      break;
    }
    if (stat.diversity < params.diversity_floor_frac * double(length)) {
      result.stop_reason = "diversity";
      break;
    }
    if (gen == params.generations - 1) break;

    // Tournament selection. Gaps within parsimony_eps count as ties and go to
    // the sparser mask; remaining ties keep the earlier pick.
    std::vector<int> bits(std::size_t(params.population));
    for (int i = 0; i < params.population; ++i)
      bits[std::size_t(i)] = popcount(pop[std::size_t(i)]);
    std::vector<std::vector<std::uint8_t>> next;
    next.reserve(std::size_t(params.population));
    for (int i = 0; i < params.population; ++i) {
      int winner = int(rng.below(std::uint64_t(params.population)));
      for (int t = 1; t < params.tournament; ++t) {
        const int cand = int(rng.below(std::uint64_t(params.population)));
        const double fc = fit[std::size_t(cand)];
        const double fw = fit[std::size_t(winner)];
        if (fc > fw + params.parsimony_eps) {
          winner = cand;
        } else if (!(fw > fc + params.parsimony_eps) &&
                   bits[std::size_t(cand)] < bits[std::size_t(winner)]) {
          winner = cand;
        }
      }
      next.push_back(pop[std::size_t(winner)]);
    }

    // Two-point crossover over consecutive pairs.
    for (int i = 0; i + 1 < params.population; i += 2) {
      if (!rng.bernoulli(params.crossover_p)) continue;
      int a = 1 + int(rng.below(std::uint64_t(length - 1)));
      int b = 1 + int(rng.below(std::uint64_t(length - 1)));
      if (a > b) std::swap(a, b);
      for (int k = a; k < b; ++k)
        std::swap(next[std::size_t(i)][std::size_t(k)], next[std::size_t(i + 1)][std::size_t(k)]);
    }

    // Flip-bit mutation at rate 1/length for selected individuals.
    const double flip_p = 1.0 / double(length);
    for (auto& ind : next) {
      if (!rng.bernoulli(params.mutation_p)) continue;
      for (int k = 0; k < length; ++k)
        if (rng.bernoulli(flip_p)) ind[std::size_t(k)] ^= 1;
    }
    pop = std::move(next);
  }

  result.total_evals = cache.evals();
  if (result.best_mask.empty()) result.best_mask.assign(std::size_t(length), 0);
  return result;
}

void save_ga_history(const GaResult& r, const GaParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  nlohmann::json header;
  header["type"] = "params";
  header["population"] = p.population;
  header["generations"] = p.generations;
  header["crossover_p"] = p.crossover_p;
  header["mutation_p"] = p.mutation_p;
  header["tournament"] = p.tournament;
  header["init_bit_p"] = p.init_bit_p;
  header["skip_ratio"] = p.skip_ratio;
  header["beta"] = double(p.beta);
  header["k1"] = p.k1;
  header["k2"] = p.k2;
  header["early_stop_eps"] = p.early_stop_eps;
  header["parsimony_eps"] = p.parsimony_eps;
  header["patience"] = p.patience;
  header["diversity_floor_frac"] = p.diversity_floor_frac;
  header["seed"] = p.seed;
  out << header.dump() << "\n";
  for (const GaGenerationStat& s : r.history) {
    nlohmann::json j;
    j["gen"] = s.gen;
    j["best_fitness"] = s.best_fitness;
    j["mean_fitness"] = s.mean_fitness;
    j["diversity"] = s.diversity;
    j["evals"] = s.evals;
    j["skipped"] = s.skipped;
    out << j.dump() << "\n";
  }
  nlohmann::json tail;
  tail["type"] = "result";
  tail["best_fitness"] = r.best_fitness;
  tail["total_evals"] = r.total_evals;
  tail["generations_run"] = r.generations_run;
  tail["stop_reason"] = r.stop_reason;
  out << tail.dump() << "\n";
}

}  // namespace aat
