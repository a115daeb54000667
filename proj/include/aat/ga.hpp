#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aat/bench.hpp"
#include "aat/encoder.hpp"

namespace aat {

// Genetic search for a binary head mask (bit 1 = ablate).  Fitness is the
// mean margin between each text's true image and its hardest negative,
// where negatives mix mined vanilla-model false positives with random
// non-matching images that are redrawn every generation.

struct GaParams {
  int population = 48;
  int generations = 100;
  double crossover_p = 0.9;   // two-point crossover per pair
  double mutation_p = 0.5;    // per individual; bits then flip at rate 1/length
  int tournament = 3;
  double init_bit_p = 0.25;   // Bernoulli density of the seed population
  double skip_ratio = 0.6;    // ablation ratio above which fitness is skipped; >= 1 disables
  float beta = 0.1f;
  int k1 = 10;
  int k2 = 10;
  double early_stop_eps = 1e-4;
  double parsimony_eps = 1e-4;  // fitness gaps below this count as ties; sparser masks win them
  int patience = 10;
  double diversity_floor_frac = 0.02;  // of chromosome length, in mean pairwise Hamming bits
  std::uint64_t seed = 1;
  int threads = 1;
  int cache_capacity = 1024;  // embedding cache entries (one per distinct mask)
};

struct FitnessContext {
  int n = 0;
  int k1 = 0;
  int k2 = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> mined;           // fixed vanilla-model false positives
  std::vector<std::vector<int>> random_negatives;  // refreshed each generation
};

// Mines the k1 highest-cosine non-matching images per text under the vanilla
// model and draws the first batch of k2 random negatives (generation 0).
FitnessContext build_fitness_context(const EncoderWeights& model, const PairDataset& data,
                                     int k1, int k2, std::uint64_t seed, int threads = 1);

// Redraws the k2 random negatives for the given generation, keeping them
// distinct from the ground truth and the mined set.
void refresh_random_negatives(FitnessContext& ctx, int generation);

// Mean margin over texts given already-computed image embeddings.
double fitness_margin(const Tensor2& image_embs, const Tensor2& text_embs,
                      const FitnessContext& ctx);

struct GaGenerationStat {
  int gen = 0;
  double best_fitness = 0.0;  // best-ever (hall of fame), non-decreasing
  double mean_fitness = 0.0;  // over evaluated individuals this generation
  double diversity = 0.0;     // mean pairwise Hamming distance, in bits
  int evals = 0;              // model evaluations (distinct uncached masks)
  int skipped = 0;
};

struct GaResult {
  std::vector<std::uint8_t> best_mask;
  double best_fitness = 0.0;
  std::vector<GaGenerationStat> history;
  int total_evals = 0;
  int generations_run = 0;
  std::string stop_reason;  // "generations" | "stagnation" | "diversity"
};

GaResult evolve(const EncoderWeights& model, const PairDataset& data, const GaParams& params);

// JSON lines: a parameter header, one record per generation, a result line.
void save_ga_history(const GaResult& r, const GaParams& p, const std::string& path);

}  // namespace aat
