#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "aat/encoder.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Retrieval scoring.  Recalls are percentages rounded to one decimal, the
// way results tables usually print them; mean_r is the rounded mean of the
// three rounded recalls.  Ranking itself runs in full precision with ties
// broken toward the lower gallery index.

struct RetrievalReport {
  std::string direction;  // "text_to_image" or "image_to_text"
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  double mean_r = 0.0;
  int n_queries = 0;
};

double round1(double x);

// queries x gallery cosine matrix (rows are unit vectors already).
Tensor2 similarity_matrix(const Tensor2& queries, const Tensor2& gallery);

// Rank of gt[q] in row q: one plus the number of strictly better gallery
// items plus the number of equal-scoring items with a lower index.
int retrieval_rank(const Tensor2& sim, int query, int gt_index);

double recall_at_k(const Tensor2& sim, const std::vector<int>& gt, int k);

RetrievalReport recall_report(const Tensor2& sim, const std::vector<int>& gt,
                              const std::string& direction);

// Both directions for a paired dataset (text i matches image i).
std::pair<RetrievalReport, RetrievalReport> paired_retrieval(const Tensor2& image_embs,
                                                             const Tensor2& text_embs);

nlohmann::json report_to_json(const RetrievalReport& r);
RetrievalReport report_from_json(const nlohmann::json& j);

// Classification accuracy against stored class embeddings; argmax ties go to
// the lower class index.
double zero_shot_top1(const Tensor2& image_embs, const Tensor2& class_embs,
                      const std::vector<int>& labels);

struct GridRow {
  int layer = 0;
  int head = 0;
  RetrievalReport report;  // text-to-image
};

struct GridTable {
  RetrievalReport vanilla;
  std::vector<GridRow> rows;  // (layer, head) ascending
};

// One-head-at-a-time scan: encodes the gallery once per head plus once
// vanilla, scoring text-to-image retrieval.
GridTable grid_search_single_head(const EncoderWeights& w, const std::vector<Tensor2>& images,
                                  const Tensor2& text_embs, float beta, int threads = 1);

std::vector<GridRow> sorted_by_mean_r(const GridTable& table);

void save_grid_csv(const GridTable& table, const std::string& path);
GridTable load_grid_csv(const std::string& path);

// Ablate every head whose solo mean_r strictly beats vanilla.
AblationConfig naive_joint_ablation(const GridTable& table, int layers, int heads, float beta);

struct ConfigStats {
  double overall_ratio = 0.0;
  std::vector<int> per_layer;
  double mean_per_layer = 0.0;
};

ConfigStats config_stats(const AblationConfig& cfg);
nlohmann::json config_stats_to_json(const ConfigStats& s);

}  // namespace aat
