#include <algorithm>
#include <stdexcept>

#include "gradselect/model.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gradselect::detail {

namespace {
constexpr std::size_t kBlock = 8;  // examples folded sequentially per block
}

double batch_backprop(const Model& model, std::span<const double* const> xs,
                      std::span<const int> labels, double* mean_flat_out,
                      BatchGradScratch& scratch) {
    const std::size_t n = xs.size();
    if (n == 0) throw std::invalid_argument("batch_gradient: empty batch");
    if (labels.size() != n) {
        throw std::invalid_argument("batch_gradient: label count mismatch");
    }
    const std::size_t p = model.param_count();

#ifdef _OPENMP
    const std::size_t nthreads = static_cast<std::size_t>(omp_get_max_threads());
#else
    const std::size_t nthreads = 1;
#endif
    const std::size_t group = std::max<std::size_t>(4 * nthreads, 8);

    if (scratch.thread_ws.size() < nthreads) scratch.thread_ws.resize(nthreads);
    if (scratch.thread_flat.size() < nthreads) scratch.thread_flat.resize(nthreads);
    for (auto& f : scratch.thread_flat) {
        if (f.size() < p) f.resize(p);
    }
    if (scratch.partials.size() < group) scratch.partials.resize(group);
    for (auto& b : scratch.partials) {
        if (b.size() < p) b.resize(p);
    }
    if (scratch.losses.size() < n) scratch.losses.resize(n);

    std::fill(mean_flat_out, mean_flat_out + p, 0.0);

    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    for (std::size_t b0 = 0; b0 < n_blocks; b0 += group) {
        const std::size_t nb = std::min(group, n_blocks - b0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (std::size_t bi = 0; bi < nb; ++bi) {
#ifdef _OPENMP
            const std::size_t tid = static_cast<std::size_t>(omp_get_thread_num());
#else
            const std::size_t tid = 0;
#endif
            double* partial = scratch.partials[bi].data();
            std::fill(partial, partial + p, 0.0);
            double* flat = scratch.thread_flat[tid].data();
            Workspace& ws = scratch.thread_ws[tid];
            const std::size_t lo = (b0 + bi) * kBlock;
            const std::size_t hi = std::min(lo + kBlock, n);
            for (std::size_t i = lo; i < hi; ++i) {
                scratch.losses[i] = backprop_flat(model, xs[i], labels[i], flat, ws);
                for (std::size_t j = 0; j < p; ++j) partial[j] += flat[j];
            }
        }
        for (std::size_t bi = 0; bi < nb; ++bi) {
            const double* partial = scratch.partials[bi].data();
            for (std::size_t j = 0; j < p; ++j) mean_flat_out[j] += partial[j];
        }
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < p; ++j) mean_flat_out[j] *= inv_n;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss += scratch.losses[i];
    return loss * inv_n;
}

}  // namespace gradselect::detail
