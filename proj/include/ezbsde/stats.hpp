#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ezbsde {

/// Pairwise (tree) summation. The reduction order depends only on the length of
/// the input, which keeps reported means independent of the thread count.
inline double pairwise_sum(std::span<const double> x) {
    if (x.size() <= 8) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

struct SampleStats {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t count = 0;
};

inline SampleStats sample_stats(std::span<const double> x) {
    SampleStats s;
    s.count = x.size();
    if (x.empty()) return s;
    s.mean = pairwise_sum(x) / static_cast<double>(x.size());
    if (x.size() < 2) return s;
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - s.mean) * (x[i] - s.mean);
    const double var = pairwise_sum(sq) / static_cast<double>(x.size() - 1);
    s.std_error = std::sqrt(var / static_cast<double>(x.size()));
    return s;
}

/// Batched-means estimate: the sample is cut into `batches` contiguous blocks and
/// the standard error is taken across block means.
inline SampleStats batch_stats(std::span<const double> x, std::size_t batches) {
    SampleStats s;
    s.count = x.size();
    if (x.empty()) return s;
    batches = std::clamp<std::size_t>(batches, 1, x.size());
    std::vector<double> means(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * x.size() / batches;
        const std::size_t hi = (b + 1) * x.size() / batches;
        means[b] = pairwise_sum(x.subspan(lo, hi - lo)) / static_cast<double>(hi - lo);
    }
    s.mean = pairwise_sum(x) / static_cast<double>(x.size());
    if (batches < 2) return s;
    std::vector<double> sq(batches);
    const double mm = pairwise_sum(means) / static_cast<double>(batches);
    for (std::size_t b = 0; b < batches; ++b) sq[b] = (means[b] - mm) * (means[b] - mm);
    s.std_error = std::sqrt(pairwise_sum(sq) / static_cast<double>(batches - 1) /
                          static_cast<double>(batches));
    return s;
}

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }
inline double negative_part(double x) { return x < 0.0 ? -x : 0.0; }

}  // namespace ezbsde
