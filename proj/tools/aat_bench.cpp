// Times the OpenMP batch encoder against the serial reference loop and
// checks they agree bitwise.  Usage: aat_bench [items] [threads] [reps]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "aat/bench.hpp"
#include "aat/encoder.hpp"
#include "aat/reference.hpp"
#include "aat/rng.hpp"

namespace {

template <typename F>
double best_ms(F&& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int items = argc > 1 ? std::atoi(argv[1]) : 256;
#ifdef _OPENMP
  int threads = argc > 2 ? std::atoi(argv[2]) : omp_get_max_threads();
#else
  int threads = argc > 2 ? std::atoi(argv[2]) : 1;
#endif
  int reps = argc > 3 ? std::atoi(argv[3]) : 3;
  if (items <= 0 || threads <= 0 || reps <= 0) {
    std::fprintf(stderr, "usage: aat_bench [items] [threads] [reps]\n");
    return 2;
  }

  aat::BenchSpec spec;
  aat::BenchModel model = aat::generate_model(spec);
  const aat::EncoderSpec& es = model.weights.spec;

  std::vector<aat::Tensor2> images;
  images.reserve(static_cast<std::size_t>(items));
  aat::Rng rng(aat::substream(42, "bench-tokens"));
  for (int i = 0; i < items; ++i) {
    aat::Tensor2 t(es.tokens, es.token_dim);
    for (float& v : t.data) v = rng.normalf(0.0f, 1.0f);
    images.push_back(std::move(t));
  }

  aat::AblationConfig vanilla = aat::AblationConfig::ones(es.layers, es.heads);
  aat::AblationConfig planted = aat::planted_config(model, 0.1f);

  std::printf("%-28s %9s %9s %8s\n", "kernel", "serial", "parallel", "speedup");
  for (const auto& [name, cfg] :
       {std::pair<const char*, const aat::AblationConfig*>{"encode_batch (vanilla)", &vanilla},
        std::pair<const char*, const aat::AblationConfig*>{"encode_batch (3 heads off)",
                                                           &planted}}) {
    aat::Tensor2 ref, par;
    double t_serial =
        best_ms([&] { ref = aat::reference::encode_batch_serial(images, model.weights, *cfg); },
                reps);
    double t_par =
        best_ms([&] { par = aat::encode_batch(images, model.weights, *cfg, threads); }, reps);
    bool same = ref.rows == par.rows && ref.cols == par.cols &&
                std::memcmp(ref.data.data(), par.data.data(), ref.data.size() * sizeof(float)) == 0;
    std::printf("%-28s %7.2fms %7.2fms %7.2fx%s\n", name, t_serial, t_par, t_serial / t_par,
                same ? "" : "  MISMATCH");
    if (!same) return 1;
  }
  std::printf("items %d, threads %d, best of %d\n", items, threads, reps);
  return 0;
}
