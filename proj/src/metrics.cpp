#include "aat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aat {

double round1(double x) { return std::round(x * 10.0) / 10.0; }

Tensor2 similarity_matrix(const Tensor2& queries, const Tensor2& gallery) {
  if (queries.cols != gallery.cols)
    throw std::invalid_argument("similarity_matrix: embedding dimensions differ");
  Tensor2 sim(queries.rows, gallery.rows);
  for (int i = 0; i < queries.rows; ++i) {
    float* r = sim.row(i);
    for (int j = 0; j < gallery.rows; ++j)
      r[j] = float(dot64(queries.row(i), gallery.row(j), queries.cols));
  }
  return sim;
}

int retrieval_rank(const Tensor2& sim, int query, int gt_index) {
  const float* r = sim.row(query);
  const float s = r[gt_index];
  int rank = 1;
  for (int j = 0; j < sim.cols; ++j) {
    if (r[j] > s) ++rank;
    else if (r[j] == s && j < gt_index) ++rank;
  }
  return rank;
}

double recall_at_k(const Tensor2& sim, const std::vector<int>& gt, int k) {
  if (int(gt.size()) != sim.rows)
    throw std::invalid_argument("recall_at_k: one ground-truth index per query required");
  int hits = 0;
  for (int q = 0; q < sim.rows; ++q)
    if (retrieval_rank(sim, q, gt[std::size_t(q)]) <= k) ++hits;
  return 100.0 * double(hits) / double(sim.rows);
}

RetrievalReport recall_report(const Tensor2& sim, const std::vector<int>& gt,
                              const std::string& direction) {
  RetrievalReport rep;
  rep.direction = direction;
  rep.n_queries = sim.rows;
  rep.r1 = round1(recall_at_k(sim, gt, 1));
  rep.r5 = round1(recall_at_k(sim, gt, 5));
  rep.r10 = round1(recall_at_k(sim, gt, 10));
  rep.mean_r = round1((rep.r1 + rep.r5 + rep.r10) / 3.0);
  return rep;
}

std::pair<RetrievalReport, RetrievalReport> paired_retrieval(const Tensor2& image_embs,
                                                             const Tensor2& text_embs) {
  if (image_embs.rows != text_embs.rows)
    throw std::invalid_argument("paired_retrieval: pair counts differ");
  std::vector<int> gt(std::size_t(image_embs.rows));
  for (int i = 0; i < image_embs.rows; ++i) gt[std::size_t(i)] = i;
  const Tensor2 t2i = similarity_matrix(text_embs, image_embs);
  const Tensor2 i2t = similarity_matrix(image_embs, text_embs);
  return {recall_report(t2i, gt, "text_to_image"), recall_report(i2t, gt, "image_to_text")};
}

nlohmann::json report_to_json(const RetrievalReport& r) {
  nlohmann::json j;
  j["direction"] = r.direction;
  j["recalls"] = {{"1", r.r1}, {"5", r.r5}, {"10", r.r10}};
  j["mean_r"] = r.mean_r;
  j["n_queries"] = r.n_queries;
  return j;
}

RetrievalReport report_from_json(const nlohmann::json& j) {
  RetrievalReport r;
  r.direction = j.at("direction").get<std::string>();
  r.r1 = j.at("recalls").at("1").get<double>();
  r.r5 = j.at("recalls").at("5").get<double>();
  r.r10 = j.at("recalls").at("10").get<double>();
  r.mean_r = j.at("mean_r").get<double>();
  r.n_queries = j.at("n_queries").get<int>();
  return r;
}

double zero_shot_top1(const Tensor2& image_embs, const Tensor2& class_embs,
                      const std::vector<int>& labels) {
  if (int(labels.size()) != image_embs.rows)
    throw std::invalid_argument("zero_shot_top1: one label per image required");
  int hits = 0;
  for (int i = 0; i < image_embs.rows; ++i) {
    int best = 0;
    double best_s = dot64(image_embs.row(i), class_embs.row(0), image_embs.cols);
    for (int c = 1; c < class_embs.rows; ++c) {
      const double s = dot64(image_embs.row(i), class_embs.row(c), image_embs.cols);
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    if (best == labels[std::size_t(i)]) ++hits;
  }
  return 100.0 * double(hits) / double(image_embs.rows);
}

namespace {

RetrievalReport score_t2i(const Tensor2& image_embs, const Tensor2& text_embs) {
  std::vector<int> gt(std::size_t(image_embs.rows));
  for (int i = 0; i < image_embs.rows; ++i) gt[std::size_t(i)] = i;
  return recall_report(similarity_matrix(text_embs, image_embs), gt, "text_to_image");
}

}  // namespace

GridTable grid_search_single_head(const EncoderWeights& w, const std::vector<Tensor2>& images,
                                  const Tensor2& text_embs, float beta, int threads) {
  const int layers = w.spec.layers;
  const int heads = w.spec.heads;
  GridTable table;
  table.rows.resize(std::size_t(layers) * std::size_t(heads));

  const AblationConfig vanilla = AblationConfig::ones(layers, heads);
  table.vanilla = score_t2i(encode_batch(images, w, vanilla, threads), text_embs);

  const int cells = layers * heads;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : 1) if (threads > 1)
#endif
  for (int c = 0; c < cells; ++c) {
    const int layer = c / heads;
    const int head = c % heads;
    AblationConfig cfg = AblationConfig::ones(layers, heads);
    cfg.set(layer, head, beta);
    GridRow row;
    row.layer = layer;
    row.head = head;
    row.report = score_t2i(encode_batch(images, w, cfg, 1), text_embs);
    table.rows[std::size_t(c)] = row;
  }
  return table;
}

std::vector<GridRow> sorted_by_mean_r(const GridTable& table) {
  std::vector<GridRow> rows = table.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    return a.report.mean_r > b.report.mean_r;
  });
  return rows;
}

void save_grid_csv(const GridTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "layer,head,r1,r5,r10,mean_r\n";
  char buf[160];
  for (const GridRow& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.1f,%.1f,%.1f,%.1f\n", r.layer, r.head, r.report.r1,
                  r.report.r5, r.report.r10, r.report.mean_r);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "-1,-1,%.1f,%.1f,%.1f,%.1f\n", table.vanilla.r1, table.vanilla.r5,
                table.vanilla.r10, table.vanilla.mean_r);
  out << buf;
}

GridTable load_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContainerError(ContainerFault::missing_file, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "layer,head,r1,r5,r10,mean_r")
    throw std::invalid_argument(path + ": unexpected grid CSV header");
  GridTable table;
  bool saw_vanilla = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw std::invalid_argument(path + ": malformed grid CSV row");
    GridRow r;
    r.layer = std::stoi(fields[0]);
    r.head = std::stoi(fields[1]);
    r.report.direction = "text_to_image";
    r.report.r1 = std::stod(fields[2]);
    r.report.r5 = std::stod(fields[3]);
    r.report.r10 = std::stod(fields[4]);
    r.report.mean_r = std::stod(fields[5]);
    if (r.layer == -1 && r.head == -1) {
      table.vanilla = r.report;
      saw_vanilla = true;
    } else {
      table.rows.push_back(r);
    }
  }
  if (!saw_vanilla) throw std::invalid_argument(path + ": grid CSV lacks the vanilla row");
  return table;
}

AblationConfig naive_joint_ablation(const GridTable& table, int layers, int heads, float beta) {
  AblationConfig cfg = AblationConfig::ones(layers, heads);
  for (const GridRow& r : table.rows)
    if (r.report.mean_r > table.vanilla.mean_r) cfg.set(r.layer, r.head, beta);
  return cfg;
}

ConfigStats config_stats(const AblationConfig& cfg) {
  ConfigStats s;
  s.per_layer.assign(std::size_t(cfg.layers), 0);
  int total = 0;
  for (int l = 0; l < cfg.layers; ++l)
    for (int h = 0; h < cfg.heads; ++h)
      if (cfg.ablated(l, h)) {
        ++s.per_layer[std::size_t(l)];
        ++total;
      }
  s.overall_ratio = double(total) / double(cfg.layers * cfg.heads);
  s.mean_per_layer = double(total) / double(cfg.layers);
  return s;
}

nlohmann::json config_stats_to_json(const ConfigStats& s) {
  nlohmann::json j;
  j["overall_ratio"] = s.overall_ratio;
  j["per_layer"] = s.per_layer;
  j["mean_per_layer"] = s.mean_per_layer;
  return j;
}

}  // namespace aat
