#include "aat/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "aat/bench.hpp"
#include "aat/container.hpp"
#include "aat/encoder.hpp"
#include "aat/ga.hpp"
#include "aat/gating.hpp"
#include "aat/metrics.hpp"
#include "aat/rng.hpp"

namespace aat::cli {
namespace {

constexpr const char* kVersion = "aat 0.1.0";

using Clock = std::chrono::steady_clock;

void emit_error(const std::string& kind, const std::string& message,
                const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json e = extra;
  e["kind"] = kind;
  e["message"] = message;
  nlohmann::json j;
  j["error"] = std::move(e);
  std::cerr << j.dump() << "\n";
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// Every subcommand drops a replayable record next to its primary output:
// <output>.run.json with the resolved parameters (feedable back through
// --params), input and output paths, and the wall time.
void write_run_manifest(const std::string& primary_path, const std::string& subcommand,
                        const nlohmann::json& params, const nlohmann::json& inputs,
                        const nlohmann::json& outputs, Clock::time_point t0) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["subcommand"] = subcommand;
  j["params"] = params;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["duration_ms"] =
      std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  write_json_file(primary_path + ".run.json", j);
}

std::string scalar_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// --params files are flat JSON objects {"option": value}; explicit
// command-line flags still win over file values.
class JsonParams : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }
  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::FileError(std::string("params file is not valid json: ") + e.what());
    }
    if (!j.is_object()) throw CLI::FileError("params file must hold a json object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      if (value.is_array()) {
        for (const auto& e : value) item.inputs.push_back(scalar_to_string(e));
      } else {
        item.inputs.push_back(scalar_to_string(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

void attach_params_file(CLI::App* sub) {
  sub->set_config("--params", "", "json file with defaults for these options");
  sub->config_formatter(std::make_shared<JsonParams>());
}

AblationConfig config_for_model(const EncoderWeights& w, const std::string& path) {
  if (path.empty()) return AblationConfig::ones(w.spec.layers, w.spec.heads);
  AblationConfig cfg = load_ablation_config(path);
  if (cfg.layers != w.spec.layers || cfg.heads != w.spec.heads)
    throw std::invalid_argument("config grid does not match the model");
  return cfg;
}

nlohmann::json report_pair_json(const RetrievalReport& t2i, const RetrievalReport& i2t) {
  nlohmann::json j;
  j["text_to_image"] = report_to_json(t2i);
  j["image_to_text"] = report_to_json(i2t);
  return j;
}

// ---------------------------------------------------------------- gen-model

struct GenModelOpts {
  std::string out;
  std::uint64_t seed = 1;
  int layers = 4, heads = 4, token_dim = 32, head_dim = 8, ffn_dim = 64, embed_dim = 32,
      tokens = 9;
  int planted = 3;
  std::vector<std::string> plant;  // explicit "layer:head" picks
  float kappa = 5.0f;
  int concept_dim = 13;
  float nuisance_gain = 0.5f;
  float noise_scale = 0.02f;
  float signal_align = 4.0f;
  float clean_noise = 0.3f;
  float signal_gain = 1.0f;
};

void run_gen_model(const GenModelOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchSpec spec;
  spec.encoder.layers = o.layers;
  spec.encoder.heads = o.heads;
  spec.encoder.token_dim = o.token_dim;
  spec.encoder.head_dim = o.head_dim;
  spec.encoder.ffn_dim = o.ffn_dim;
  spec.encoder.embed_dim = o.embed_dim;
  spec.encoder.tokens = o.tokens;
  spec.planted_count = o.planted;
  spec.kappa = o.kappa;
  spec.concept_dim = o.concept_dim;
  spec.nuisance_gain = o.nuisance_gain;
  spec.noise_scale = o.noise_scale;
  spec.signal_align = o.signal_align;
  spec.clean_noise = o.clean_noise;
  spec.signal_gain = o.signal_gain;
  spec.seed = o.seed;
  for (const std::string& s : o.plant) {
    int l = -1, h = -1;
    if (std::sscanf(s.c_str(), "%d:%d", &l, &h) != 2)
      throw std::invalid_argument("--plant wants layer:head, got " + s);
    spec.planted_override.push_back({l, h});
  }

  BenchModel m = generate_model(spec);
  save_model(m, o.out);

  std::string where;
  for (const auto& p : m.planted) where += " " + std::to_string(p[0]) + ":" + std::to_string(p[1]);
  std::cerr << "gen-model: " << o.layers << "x" << o.heads << " grid, planted" << where << " -> "
            << o.out << "\n";

  nlohmann::json params{{"out", o.out},
                        {"seed", o.seed},
                        {"layers", o.layers},
                        {"heads", o.heads},
                        {"token-dim", o.token_dim},
                        {"head-dim", o.head_dim},
                        {"ffn-dim", o.ffn_dim},
                        {"embed-dim", o.embed_dim},
                        {"tokens", o.tokens},
                        {"planted", o.planted},
                        {"plant", o.plant},
                        {"kappa", o.kappa},
                        {"concept-dim", o.concept_dim},
                        {"nuisance-gain", o.nuisance_gain},
                        {"noise-scale", o.noise_scale},
                        {"signal-align", o.signal_align},
                        {"clean-noise", o.clean_noise},
                        {"signal-gain", o.signal_gain}};
  nlohmann::json planted_json = nlohmann::json::array();
  for (const auto& p : m.planted) planted_json.push_back({p[0], p[1]});
  nlohmann::json outputs{{"model", o.out}, {"blob", blob_path_for(o.out)}};
  outputs["planted"] = planted_json;
  write_run_manifest(o.out, "gen-model", params, nlohmann::json::object(), outputs, t0);
}

// ----------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::string model;
  std::string out_prefix;
  int train = 1000, val = 1000, test = 1000;
  std::uint64_t seed = 7;
  double gate_margin = 2.0;
  bool no_gate = false;
};

void run_gen_data(const GenDataOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  BenchBundle b = generate_splits(m, o.train, o.val, o.test, o.seed, !o.no_gate, o.gate_margin);

  std::string train_path = o.out_prefix + ".train.json";
  std::string val_path = o.out_prefix + ".val.json";
  std::string test_path = o.out_prefix + ".test.json";
  save_dataset(b.train, train_path);
  save_dataset(b.val, val_path);
  save_dataset(b.test, test_path);

  std::cerr << "gen-data: gate mean_r " << b.gate.vanilla_mean_r << " -> " << b.gate.planted_mean_r
            << " (margin " << b.gate.margin() << ") -> " << o.out_prefix << ".{train,val,test}\n";

  nlohmann::json params{{"model", o.model},    {"out-prefix", o.out_prefix},
                        {"train", o.train},    {"val", o.val},
                        {"test", o.test},      {"seed", o.seed},
                        {"gate-margin", o.gate_margin}, {"no-gate", o.no_gate}};
  nlohmann::json inputs{{"model", o.model}};
  nlohmann::json outputs{{"train", train_path}, {"val", val_path}, {"test", test_path}};
  outputs["gate"] = {{"vanilla_mean_r", b.gate.vanilla_mean_r},
                     {"planted_mean_r", b.gate.planted_mean_r},
                     {"margin", b.gate.margin()}};
  write_run_manifest(o.out_prefix, "gen-data", params, inputs, outputs, t0);
}

// --------------------------------------------------------------------- grid

struct GridOpts {
  std::string model, data, out;
  float beta = 0.1f;
  int threads = 1;
};

void run_grid(const GridOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  PairDataset ds = load_dataset(o.data);
  GridTable table = grid_search_single_head(m.weights, ds.images, ds.texts, o.beta, o.threads);
  save_grid_csv(table, o.out);

  std::vector<GridRow> ranked = sorted_by_mean_r(table);
  std::cerr << "grid: vanilla mean_r " << table.vanilla.mean_r;
  if (!ranked.empty())
    std::cerr << ", best single " << ranked.front().layer << ":" << ranked.front().head << " at "
              << ranked.front().report.mean_r;
  std::cerr << " -> " << o.out << "\n";

  nlohmann::json params{
      {"model", o.model}, {"data", o.data}, {"out", o.out}, {"beta", o.beta}, {"threads", o.threads}};
  write_run_manifest(o.out, "grid", params, {{"model", o.model}, {"data", o.data}},
                     {{"grid", o.out}}, t0);
}

// -------------------------------------------------------------- naive-joint

struct NaiveJointOpts {
  std::string grid, out;
  float beta = 0.1f;
};

void run_naive_joint(const NaiveJointOpts& o) {
  Clock::time_point t0 = Clock::now();
  GridTable table = load_grid_csv(o.grid);
  int layers = 0, heads = 0;
  for (const GridRow& r : table.rows) {
    layers = std::max(layers, r.layer + 1);
    heads = std::max(heads, r.head + 1);
  }
  AblationConfig cfg = naive_joint_ablation(table, layers, heads, o.beta);
  save_ablation_config(cfg, o.out);

  std::cerr << "naive-joint: ablating " << cfg.count_ablated() << " of " << layers * heads
            << " heads -> " << o.out << "\n";

  nlohmann::json params{{"grid", o.grid}, {"out", o.out}, {"beta", o.beta}};
  write_run_manifest(o.out, "naive-joint", params, {{"grid", o.grid}}, {{"config", o.out}}, t0);
}

// ----------------------------------------------------------------------- ga

struct GaOpts {
  std::string model, data, out, history;
  GaParams p;
};

void run_ga(const GaOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  PairDataset ds = load_dataset(o.data);
  std::string history = o.history.empty() ? o.out + ".history.jsonl" : o.history;

  GaResult r = evolve(m.weights, ds, o.p);
  AblationConfig cfg =
      config_from_mask(r.best_mask, m.weights.spec.layers, m.weights.spec.heads, o.p.beta);
  save_ablation_config(cfg, o.out);
  save_ga_history(r, o.p, history);

  std::cerr << "ga: best fitness " << r.best_fitness << " after " << r.generations_run
            << " generations (" << r.stop_reason << ", " << r.total_evals << " evals), ablating "
            << cfg.count_ablated() << " heads -> " << o.out << "\n";

  nlohmann::json params{{"model", o.model},
                        {"data", o.data},
                        {"out", o.out},
                        {"history", history},
                        {"pop", o.p.population},
                        {"gens", o.p.generations},
                        {"crossover-p", o.p.crossover_p},
                        {"mutation-p", o.p.mutation_p},
                        {"tournament", o.p.tournament},
                        {"init-bit-p", o.p.init_bit_p},
                        {"skip-ratio", o.p.skip_ratio},
                        {"beta", o.p.beta},
                        {"k1", o.p.k1},
                        {"k2", o.p.k2},
                        {"eps", o.p.early_stop_eps},
                        {"parsimony-eps", o.p.parsimony_eps},
                        {"patience", o.p.patience},
                        {"diversity-floor", o.p.diversity_floor_frac},
                        {"seed", o.p.seed},
                        {"threads", o.p.threads},
                        {"cache", o.p.cache_capacity}};
  write_run_manifest(o.out, "ga", params, {{"model", o.model}, {"data", o.data}},
                     {{"config", o.out}, {"history", history}}, t0);
}

// ----------------------------------------------------------------------- bp

struct BpOpts {
  std::string model, data, out, gating_out, history;
  BpParams p;
  float threshold = 0.5f;
  bool soft = false;
};

void run_bp(const BpOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  PairDataset ds = load_dataset(o.data);
  std::string gating_out = o.gating_out.empty() ? o.out + ".gating.json" : o.gating_out;
  std::string history = o.history.empty() ? o.out + ".history.jsonl" : o.history;

  BpResult r = train_gating(m.weights, ds, o.p);
  AblationConfig cfg = export_config(r.gating, !o.soft, o.threshold);
  save_ablation_config(cfg, o.out);
  save_gating(r.gating, gating_out);
  save_bp_history(r, history);

  std::cerr << "bp: loss " << r.history.front().loss << " -> " << r.history.back().loss << " over "
            << r.epochs_run << " epochs" << (r.diverged ? " (diverged, kept last good state)" : "")
            << ", ablating " << cfg.count_ablated() << " heads -> " << o.out << "\n";

  nlohmann::json params{{"model", o.model},
                        {"data", o.data},
                        {"out", o.out},
                        {"gating-out", gating_out},
                        {"history", history},
                        {"lr", o.p.lr},
                        {"epochs", o.p.epochs},
                        {"batch", o.p.batch_size},
                        {"tau", o.p.tau},
                        {"alpha-init", o.p.alpha_init},
                        {"logit-scale", o.p.logit_scale},
                        {"optimizer", o.p.optimizer},
                        {"seed", o.p.seed},
                        {"threshold", o.threshold},
                        {"soft", o.soft}};
  write_run_manifest(o.out, "bp", params, {{"model", o.model}, {"data", o.data}},
                     {{"config", o.out}, {"gating", gating_out}, {"history", history}}, t0);
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
  std::string model, data, config, out;
  int threads = 1;
};

void run_eval(const EvalOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  PairDataset ds = load_dataset(o.data);
  AblationConfig cfg = config_for_model(m.weights, o.config);

  Tensor2 embs = encode_batch(ds.images, m.weights, cfg, o.threads);
  auto [t2i, i2t] = paired_retrieval(embs, ds.texts);
  write_json_file(o.out, report_pair_json(t2i, i2t));

  std::cerr << "eval: text->image mean_r " << t2i.mean_r << ", image->text mean_r " << i2t.mean_r
            << " -> " << o.out << "\n";

  nlohmann::json params{{"model", o.model},
                        {"data", o.data},
                        {"config", o.config},
                        {"out", o.out},
                        {"threads", o.threads}};
  nlohmann::json inputs{{"model", o.model}, {"data", o.data}};
  if (!o.config.empty()) inputs["config"] = o.config;
  write_run_manifest(o.out, "eval", params, inputs, {{"report", o.out}}, t0);
}

// -------------------------------------------------------------------- stats

struct StatsOpts {
  std::string config, out;
};

void run_stats(const StatsOpts& o) {
  Clock::time_point t0 = Clock::now();
  AblationConfig cfg = load_ablation_config(o.config);
  ConfigStats st = config_stats(cfg);
  nlohmann::json j = config_stats_to_json(st);
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["ablated"] = cfg.count_ablated();
  write_json_file(o.out, j);

  std::cerr << "stats: " << cfg.count_ablated() << "/" << cfg.layers * cfg.heads
            << " heads ablated (ratio " << st.overall_ratio << ") -> " << o.out << "\n";

  nlohmann::json params{{"config", o.config}, {"out", o.out}};
  write_run_manifest(o.out, "stats", params, {{"config", o.config}}, {{"stats", o.out}}, t0);
}

// --------------------------------------------------------------- sweep-beta

struct SweepBetaOpts {
  std::string model, data, config, out;
  int threads = 1;
};

void run_sweep_beta(const SweepBetaOpts& o) {
  Clock::time_point t0 = Clock::now();
  BenchModel m = load_model(o.model);
  PairDataset ds = load_dataset(o.data);
  AblationConfig base = config_for_model(m.weights, o.config);
  std::vector<std::uint8_t> mask = mask_from_config(base);
  if (base.count_ablated() == 0)
    throw std::invalid_argument("sweep-beta: the config ablates no head");

  const std::vector<float> betas{1.0f, 0.5f, 0.2f, 0.1f, 0.05f, 0.02f};
  nlohmann::json points = nlohmann::json::array();
  float best_beta = betas.front();
  double best_mean_r = -1.0;
  for (float beta : betas) {
    AblationConfig cfg = config_from_mask(mask, base.layers, base.heads, beta);
    Tensor2 embs = encode_batch(ds.images, m.weights, cfg, o.threads);
    auto [t2i, i2t] = paired_retrieval(embs, ds.texts);
    points.push_back({{"beta", beta},
                      {"r1", t2i.r1},
                      {"r5", t2i.r5},
                      {"r10", t2i.r10},
                      {"mean_r", t2i.mean_r}});
    if (t2i.mean_r > best_mean_r) {
      best_mean_r = t2i.mean_r;
      best_beta = beta;
    }
  }

  nlohmann::json j;
  j["direction"] = "text_to_image";
  j["points"] = std::move(points);
  j["best_beta"] = best_beta;
  j["best_mean_r"] = best_mean_r;
  write_json_file(o.out, j);

  std::cerr << "sweep-beta: best beta " << best_beta << " at mean_r " << best_mean_r << " -> "
            << o.out << "\n";

  nlohmann::json params{{"model", o.model},
                        {"data", o.data},
                        {"config", o.config},
                        {"out", o.out},
                        {"threads", o.threads}};
  write_run_manifest(o.out, "sweep-beta", params,
                     {{"model", o.model}, {"data", o.data}, {"config", o.config}},
                     {{"sweep", o.out}}, t0);
}

// -------------------------------------------------------------- sweep-dsize

struct SweepDsizeOpts {
  std::string model, pool, test, out;
  std::string method = "ga";
  std::uint64_t seed = 1;
  int threads = 1;
};

PairDataset subset_dataset(const PairDataset& pool, int n, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(pool.n()));
  for (int i = 0; i < pool.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(substream(seed, "dsize", static_cast<std::uint64_t>(n)));
  rng.shuffle(order);
  PairDataset sub;
  sub.split = pool.split + "-subset";
  sub.seed = seed;
  sub.texts = Tensor2(n, pool.texts.cols);
  sub.images.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int idx = order[static_cast<std::size_t>(i)];
    sub.images.push_back(pool.images[static_cast<std::size_t>(idx)]);
    for (int d = 0; d < pool.texts.cols; ++d) sub.texts.at(i, d) = pool.texts.at(idx, d);
  }
  return sub;
}

void run_sweep_dsize(const SweepDsizeOpts& o) {
  Clock::time_point t0 = Clock::now();
  if (o.method != "ga" && o.method != "bp")
    throw std::invalid_argument("sweep-dsize: method must be ga or bp");
  BenchModel m = load_model(o.model);
  PairDataset pool = load_dataset(o.pool);
  PairDataset test = load_dataset(o.test);

  AblationConfig vanilla = AblationConfig::ones(m.weights.spec.layers, m.weights.spec.heads);
  Tensor2 vanilla_embs = encode_batch(test.images, m.weights, vanilla, o.threads);
  auto [vanilla_t2i, vanilla_i2t] = paired_retrieval(vanilla_embs, test.texts);

  const std::vector<int> sizes{100, 200, 500, 1000};
  nlohmann::json points = nlohmann::json::array();
  int used = 0;
  for (int n : sizes) {
    if (n > pool.n()) {
      std::cerr << "sweep-dsize: skipping size " << n << " beyond the pool of " << pool.n()
                << "\n";
      continue;
    }
    ++used;
    PairDataset sub = subset_dataset(pool, n, o.seed);
    AblationConfig cfg;
    if (o.method == "ga") {
      GaParams p;
      p.seed = substream(o.seed, "dsize-ga", static_cast<std::uint64_t>(n));
      p.threads = o.threads;
      GaResult r = evolve(m.weights, sub, p);
      cfg = config_from_mask(r.best_mask, m.weights.spec.layers, m.weights.spec.heads, p.beta);
    } else {
      BpParams p;
      p.seed = substream(o.seed, "dsize-bp", static_cast<std::uint64_t>(n));
      BpResult r = train_gating(m.weights, sub, p);
      cfg = export_config(r.gating, /*binarize=*/true);
    }
    Tensor2 embs = encode_batch(test.images, m.weights, cfg, o.threads);
    auto [t2i, i2t] = paired_retrieval(embs, test.texts);
    points.push_back({{"n", n}, {"mean_r", t2i.mean_r}, {"ablated", cfg.count_ablated()}});
    std::cerr << "sweep-dsize: n=" << n << " mean_r " << t2i.mean_r << " (" << cfg.count_ablated()
              << " heads)\n";
  }
  if (used == 0) throw std::invalid_argument("sweep-dsize: pool smaller than every sweep size");

  nlohmann::json j;
  j["method"] = o.method;
  j["vanilla_mean_r"] = vanilla_t2i.mean_r;
  j["points"] = std::move(points);
  write_json_file(o.out, j);

  nlohmann::json params{{"model", o.model}, {"pool", o.pool},     {"test", o.test},
                        {"out", o.out},     {"method", o.method}, {"seed", o.seed},
                        {"threads", o.threads}};
  write_run_manifest(o.out, "sweep-dsize", params,
                     {{"model", o.model}, {"pool", o.pool}, {"test", o.test}}, {{"sweep", o.out}},
                     t0);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"per-head attention gating toolkit for a toy image-text encoder"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  auto gen_model = std::make_shared<GenModelOpts>();
  {
    CLI::App* sub = app.add_subcommand("gen-model", "generate an encoder with planted bad heads");
    attach_params_file(sub);
    sub->add_option("--out", gen_model->out, "model manifest path")->required();
    sub->add_option("--seed", gen_model->seed, "model seed");
    sub->add_option("--layers", gen_model->layers, "transformer depth");
    sub->add_option("--heads", gen_model->heads, "heads per layer");
    sub->add_option("--token-dim", gen_model->token_dim, "token width");
    sub->add_option("--head-dim", gen_model->head_dim, "per-head width");
    sub->add_option("--ffn-dim", gen_model->ffn_dim, "feed-forward width");
    sub->add_option("--embed-dim", gen_model->embed_dim, "output embedding width");
    sub->add_option("--tokens", gen_model->tokens, "tokens per image, class token included");
    sub->add_option("--planted", gen_model->planted, "how many bad heads to plant");
    sub->add_option("--plant", gen_model->plant, "explicit layer:head plant (repeatable)");
    sub->add_option("--kappa", gen_model->kappa, "spectral blow-up of planted value projections");
    sub->add_option("--concept-dim", gen_model->concept_dim, "latent concept width");
    sub->add_option("--nuisance-gain", gen_model->nuisance_gain, "distractor token strength");
    sub->add_option("--noise-scale", gen_model->noise_scale, "token noise sigma");
    sub->add_option("--signal-align", gen_model->signal_align,
                    "concept read strength added to clean value projections");
    sub->add_option("--clean-noise", gen_model->clean_noise,
                    "scale on the concept-blind remainder of clean value projections");
    sub->add_option("--signal-gain", gen_model->signal_gain,
                    "concept strength relative to the fixed token bases");
    sub->callback([gen_model] { run_gen_model(*gen_model); });
  }

  auto gen_data = std::make_shared<GenDataOpts>();
  {
    CLI::App* sub = app.add_subcommand("gen-data", "generate train/val/test pair splits");
    attach_params_file(sub);
    sub->add_option("--model", gen_data->model, "model manifest path")->required();
    sub->add_option("--out-prefix", gen_data->out_prefix, "dataset path prefix")->required();
    sub->add_option("--train", gen_data->train, "train pairs");
    sub->add_option("--val", gen_data->val, "val pairs");
    sub->add_option("--test", gen_data->test, "test pairs");
    sub->add_option("--seed", gen_data->seed, "data seed");
    sub->add_option("--gate-margin", gen_data->gate_margin,
                    "required mean_r lift from suppressing the planted heads");
    sub->add_flag("--no-gate", gen_data->no_gate, "skip the generator self-check");
    sub->callback([gen_data] { run_gen_data(*gen_data); });
  }

  auto grid = std::make_shared<GridOpts>();
  {
    CLI::App* sub = app.add_subcommand("grid", "score every single-head ablation");
    attach_params_file(sub);
    sub->add_option("--model", grid->model, "model manifest path")->required();
    sub->add_option("--data", grid->data, "dataset manifest path")->required();
    sub->add_option("--out", grid->out, "grid csv path")->required();
    sub->add_option("--beta", grid->beta, "ablation strength")->check(CLI::Range(0.0f, 1.0f));
    sub->add_option("--threads", grid->threads, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->callback([grid] { run_grid(*grid); });
  }

  auto naive = std::make_shared<NaiveJointOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("naive-joint", "jointly ablate every head that helped solo");
    attach_params_file(sub);
    sub->add_option("--grid", naive->grid, "grid csv path")->required();
    sub->add_option("--out", naive->out, "ablation config path")->required();
    sub->add_option("--beta", naive->beta, "ablation strength")->check(CLI::Range(0.0f, 1.0f));
    sub->callback([naive] { run_naive_joint(*naive); });
  }

  auto ga = std::make_shared<GaOpts>();
  {
    CLI::App* sub = app.add_subcommand("ga", "evolve a head mask against the margin fitness");
    attach_params_file(sub);
    sub->add_option("--model", ga->model, "model manifest path")->required();
    sub->add_option("--data", ga->data, "search split manifest path")->required();
    sub->add_option("--out", ga->out, "ablation config path")->required();
    sub->add_option("--history", ga->history, "jsonl history path (default <out>.history.jsonl)");
    sub->add_option("--pop", ga->p.population, "population size");
    sub->add_option("--gens", ga->p.generations, "generation cap");
    sub->add_option("--crossover-p", ga->p.crossover_p, "two-point crossover probability");
    sub->add_option("--mutation-p", ga->p.mutation_p, "per-individual mutation probability");
    sub->add_option("--tournament", ga->p.tournament, "tournament size");
    sub->add_option("--init-bit-p", ga->p.init_bit_p, "seed population bit density");
    sub->add_option("--skip-ratio", ga->p.skip_ratio, "ablation ratio that skips evaluation");
    sub->add_option("--beta", ga->p.beta, "ablation strength")->check(CLI::Range(0.0f, 1.0f));
    sub->add_option("--k1", ga->p.k1, "mined hard negatives per text");
    sub->add_option("--k2", ga->p.k2, "random negatives per text, redrawn each generation");
    sub->add_option("--eps", ga->p.early_stop_eps, "stagnation improvement threshold");
    sub->add_option("--parsimony-eps", ga->p.parsimony_eps,
                    "fitness gap treated as a tie; sparser masks win ties");
    sub->add_option("--patience", ga->p.patience, "stagnant generations before stopping");
    sub->add_option("--diversity-floor", ga->p.diversity_floor_frac,
                    "mean Hamming fraction that stops the run");
    sub->add_option("--seed", ga->p.seed, "search seed");
    sub->add_option("--threads", ga->p.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--cache", ga->p.cache_capacity, "embedding cache entries");
    sub->callback([ga] { run_ga(*ga); });
  }

  auto bp = std::make_shared<BpOpts>();
  {
    CLI::App* sub = app.add_subcommand("bp", "train sigmoid head gates by backprop");
    attach_params_file(sub);
    sub->add_option("--model", bp->model, "model manifest path")->required();
    sub->add_option("--data", bp->data, "train split manifest path")->required();
    sub->add_option("--out", bp->out, "ablation config path")->required();
    sub->add_option("--gating-out", bp->gating_out,
                    "raw gate parameters path (default <out>.gating.json)");
    sub->add_option("--history", bp->history, "jsonl history path (default <out>.history.jsonl)");
    sub->add_option("--lr", bp->p.lr, "learning rate");
    sub->add_option("--epochs", bp->p.epochs, "training epochs");
    sub->add_option("--batch", bp->p.batch_size, "batch size (clamps to the dataset)");
    sub->add_option("--tau", bp->p.tau, "sigmoid sharpness");
    sub->add_option("--alpha-init", bp->p.alpha_init, "initial gate logit");
    sub->add_option("--logit-scale", bp->p.logit_scale, "similarity temperature");
    sub->add_option("--optimizer", bp->p.optimizer, "adam or sgd");
    sub->add_option("--seed", bp->p.seed, "batch shuffling seed");
    sub->add_option("--threshold", bp->threshold, "binarization threshold on beta");
    sub->add_flag("--soft", bp->soft, "export raw betas instead of binarizing");
    sub->callback([bp] { run_bp(*bp); });
  }

  auto eval = std::make_shared<EvalOpts>();
  {
    CLI::App* sub = app.add_subcommand("eval", "score retrieval in both directions");
    attach_params_file(sub);
    sub->add_option("--model", eval->model, "model manifest path")->required();
    sub->add_option("--data", eval->data, "dataset manifest path")->required();
    sub->add_option("--config", eval->config, "ablation config path (default vanilla)");
    sub->add_option("--out", eval->out, "report json path")->required();
    sub->add_option("--threads", eval->threads, "worker threads")->check(CLI::PositiveNumber);
    sub->callback([eval] { run_eval(*eval); });
  }

  auto stats = std::make_shared<StatsOpts>();
  {
    CLI::App* sub = app.add_subcommand("stats", "summarize an ablation config");
    attach_params_file(sub);
    sub->add_option("--config", stats->config, "ablation config path")->required();
    sub->add_option("--out", stats->out, "stats json path")->required();
    sub->callback([stats] { run_stats(*stats); });
  }

  auto sweep_beta = std::make_shared<SweepBetaOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("sweep-beta", "rescore a config's ablated set across beta values");
    attach_params_file(sub);
    sub->add_option("--model", sweep_beta->model, "model manifest path")->required();
    sub->add_option("--data", sweep_beta->data, "dataset manifest path")->required();
    sub->add_option("--config", sweep_beta->config, "ablation config path")->required();
    sub->add_option("--out", sweep_beta->out, "sweep json path")->required();
    sub->add_option("--threads", sweep_beta->threads, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->callback([sweep_beta] { run_sweep_beta(*sweep_beta); });
  }

  auto sweep_dsize = std::make_shared<SweepDsizeOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("sweep-dsize", "search on growing subsets and score on a test split");
    attach_params_file(sub);
    sub->add_option("--model", sweep_dsize->model, "model manifest path")->required();
    sub->add_option("--pool", sweep_dsize->pool, "search pool manifest path")->required();
    sub->add_option("--test", sweep_dsize->test, "test split manifest path")->required();
    sub->add_option("--out", sweep_dsize->out, "sweep json path")->required();
    sub->add_option("--method", sweep_dsize->method, "ga or bp");
    sub->add_option("--seed", sweep_dsize->seed, "sweep seed");
    sub->add_option("--threads", sweep_dsize->threads, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->callback([sweep_dsize] { run_sweep_dsize(*sweep_dsize); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return 2;
  } catch (const ContainerError& e) {
    switch (e.fault) {
      case ContainerFault::missing_file:
        emit_error("missing_file", e.what());
        return 3;
      case ContainerFault::corrupt_manifest:
        emit_error("corrupt_manifest", e.what());
        return 4;
      case ContainerFault::truncated_blob:
        emit_error("truncated_blob", e.what());
        return 4;
      case ContainerFault::shape_mismatch:
        emit_error("shape_mismatch", e.what());
        return 4;
    }
    emit_error("container", e.what());
    return 4;
  } catch (const BenchGateError& e) {
    emit_error("bench_gate", e.what(),
               {{"vanilla_mean_r", e.report.vanilla_mean_r},
                {"planted_mean_r", e.report.planted_mean_r},
                {"margin", e.report.margin()}});
    return 4;
  } catch (const EncodeError& e) {
    emit_error("non_finite", e.what(), {{"layer", e.layer}, {"head", e.head}});
    return 4;
  } catch (const std::invalid_argument& e) {
    emit_error("invariant", e.what());
    return 4;
  } catch (const std::logic_error& e) {
    emit_error("internal", e.what());
    return 4;
  } catch (const std::exception& e) {
    emit_error("io", e.what());
    return 4;
  }
  return 0;
}

}  // namespace aat::cli
