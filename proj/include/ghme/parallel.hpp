#pragma once

#include <cstddef>
#include <functional>

namespace ghme {

// Worker count used by likelihood reductions and Monte Carlo maps. Results
// never depend on it: work is split into a fixed partition and partial
// results are combined in index order.
void set_thread_count(int threads);
int thread_count();

// Resolves the effective worker count from an explicit request (> 0), the
// GHME_THREADS environment variable, or 1.
int resolve_thread_count(int requested);

// Runs body(k) for k in [0, n). Calls made from inside a running
// parallel_for execute serially on the calling worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// Compensated (Neumaier) accumulator.
class KahanSum {
public:
    void add(double x);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace ghme
