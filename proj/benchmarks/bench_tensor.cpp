// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "timl/autodiff.hpp"
#include "timl/rng.hpp"

using namespace timl;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = false) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)));
    for (double& v : d) v = rng.uniform(-1.0, 1.0);
    return tensor(std::move(shape), std::move(d), rg);
}

void BM_Matmul(benchmark::State& state) {
    Rng rng(1);
    auto n = state.range(0);
    Tensor a = rand_tensor({n, n}, rng);
    Tensor b = rand_tensor({n, n}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_GradMlp(benchmark::State& state) {
    Rng rng(2);
    bool second_order = state.range(0) != 0;
    Tensor w1 = rand_tensor({8, 32}, rng, true);
    Tensor w2 = rand_tensor({32, 1}, rng, true);
    Tensor x = rand_tensor({20, 8}, rng);
    Tensor y = rand_tensor({20, 1}, rng);
    Tensor wrt[] = {w1, w2};
    for (auto _ : state) {
        Tensor out = matmul(gelu(matmul(x, w1)), w2);
        Tensor loss = squared_error(out, y);
        auto g = grad(loss, std::span<const Tensor>(wrt, 2), {.create_graph = second_order});
        if (second_order) {
            Tensor gsum = add(sum(g[0]), sum(g[1]));
            benchmark::DoNotOptimize(grad(gsum, std::span<const Tensor>(wrt, 2)));
        } else {
            benchmark::DoNotOptimize(g);
        }
    }
}
BENCHMARK(BM_GradMlp)->Arg(0)->Arg(1);

} // namespace

BENCHMARK_MAIN();
