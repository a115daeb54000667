#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "aat/encoder.hpp"
#include "aat/rng.hpp"

namespace aat {

// Synthetic benchmark with known-bad heads.  Every image-text pair is built
// from a latent concept vector; a few "planted" heads get value projections
// rescaled to kappa times the clean median spectral norm, which floods the
// class-token pathway with concept-independent content.  Suppressing exactly
// those heads should recover retrieval quality, and the generator verifies
// that before handing the benchmark out.

struct BenchSpec {
  EncoderSpec encoder;
  int planted_count = 3;
  // Explicit (layer, head) positions; leave empty to sample them uniformly.
  std::vector<std::array<int, 2>> planted_override;
  float kappa = 5.0f;
  int concept_dim = 13;
  float nuisance_gain = 0.5f;
  float noise_scale = 0.02f;
  // Extra concept-subspace read added to every clean value projection, so
  // the class-token output correlates with the latent concept.
  float signal_align = 4.0f;
  // Scale on the concept-blind random remainder of clean value projections.
  // Smaller values mean clean heads carry less non-signal content, keeping
  // every head's marginal contribution to retrieval solidly positive.
  float clean_noise = 0.3f;
  // Concept strength relative to the fixed per-position token base.  Every
  // image token sits on a constant base vector so the norms the layer norms
  // divide by stay concept-independent; the concept rides on top at this
  // gain, keeping the embedding map close to linear in the concept.
  float signal_gain = 1.0f;
  std::uint64_t seed = 1;
};

struct BenchModel {
  EncoderWeights weights;
  std::vector<std::array<int, 2>> planted;
  BenchSpec spec;
};

struct PairDataset {
  std::string split;
  std::uint64_t seed = 0;
  std::vector<Tensor2> images;  // token grids
  Tensor2 texts;                // unit rows, n x embed_dim
  int n() const { return texts.rows; }
};

struct GateReport {
  double vanilla_mean_r = 0.0;
  double planted_mean_r = 0.0;
  double margin() const { return planted_mean_r - vanilla_mean_r; }
};

struct BenchBundle {
  PairDataset train, val, test;
  GateReport gate;
};

class BenchGateError : public std::runtime_error {
 public:
  BenchGateError(const GateReport& r, const std::string& what)
      : std::runtime_error(what), report(r) {}
  GateReport report;
};

BenchModel generate_model(const BenchSpec& spec);

// Config with every planted head at `beta` and the rest untouched.
AblationConfig planted_config(const BenchModel& m, float beta = 0.1f);

// Builds train/val/test with disjoint per-pair substreams (train occupies
// indices [0, n_train), val and test follow).  With enforce_gate set, the
// generator requires hard-ablating the planted set at beta 0.1 to lift test
// text-to-image mean_r by at least `gate_margin` points, and throws
// BenchGateError otherwise so a bad seed cannot slip through.
BenchBundle generate_splits(const BenchModel& model, int n_train, int n_val, int n_test,
                            std::uint64_t seed, bool enforce_gate = true,
                            double gate_margin = 2.0);

void save_dataset(const PairDataset& ds, const std::string& manifest_path);
PairDataset load_dataset(const std::string& manifest_path);

void save_model(const BenchModel& m, const std::string& manifest_path);
BenchModel load_model(const std::string& manifest_path);

// Largest singular value by power iteration; used to scale planted heads.
double spectral_norm(const Tensor2& w, std::uint64_t seed);

}  // namespace aat
