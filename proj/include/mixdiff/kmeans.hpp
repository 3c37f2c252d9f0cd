#pragma once

#include <cstddef>
#include <vector>

#include "mixdiff/rng.hpp"

namespace mixdiff {

struct KMeansResult {
    std::size_t k = 0, dim = 0;
    std::vector<double> centroids;  // k x dim
    std::vector<std::size_t> labels;
    double inertia = 0.0;

    std::size_t nearest(const double* point) const;
};

struct KMeansOptions {
    std::size_t max_iter = 50;
    std::size_t restarts = 3;
};

// Lloyd iterations from k-means++ seeds; the restart with the lowest
// inertia is kept. `points` is n x dim row-major.
KMeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t dim, std::size_t k, Rng& rng,
                    const KMeansOptions& options = {});

}  // namespace mixdiff
