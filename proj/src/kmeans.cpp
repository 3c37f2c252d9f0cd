#include "mixdiff/kmeans.hpp"

#include <limits>

#include "mixdiff/error.hpp"

namespace mixdiff {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::vector<double> seed_plus_plus(const std::vector<double>& X, std::size_t n, std::size_t d, std::size_t k,
                                   Rng& rng) {
    std::vector<double> c(k * d);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.uniform_int(0, n - 1);
    for (std::size_t j = 0; j < k; ++j) {
        std::copy_n(&X[pick * d], d, &c[j * d]);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], sq_dist(&X[i * d], &c[j * d], d));
            total += best[i];
        }
        if (j + 1 == k) break;
        if (total <= 0.0) {
            pick = rng.uniform_int(0, n - 1);
            continue;
        }
        double r = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            r -= best[i];
            if (r < 0.0) {
                pick = i;
                break;
            }
        }
    }
    return c;
}

double assign(const std::vector<double>& X, std::size_t n, std::size_t d, KMeansResult& r) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < r.k; ++j) {
            const double dd = sq_dist(&X[i * d], &r.centroids[j * d], d);
            if (dd < best) {
                best = dd;
                arg = j;
            }
        }
        r.labels[i] = arg;
        inertia += best;
    }
    return inertia;
}

}  // namespace

std::size_t KMeansResult::nearest(const double* point) const {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
        const double dd = sq_dist(point, &centroids[j * dim], dim);
        if (dd < best) {
            best = dd;
            arg = j;
        }
    }
    return arg;
}

KMeansResult kmeans(const std::vector<double>& X, std::size_t n, std::size_t d, std::size_t k, Rng& rng,
                    const KMeansOptions& options) {
    if (k == 0) throw ParameterError("k-means needs k >= 1");
    if (n < k) throw ParameterError("k-means needs at least k = " + std::to_string(k) + " rows, got " + std::to_string(n));
    if (X.size() != n * d) throw ShapeError("k-means input size does not match n x dim");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < std::max<std::size_t>(1, options.restarts); ++restart) {
        KMeansResult r;
        r.k = k;
        r.dim = d;
        r.centroids = seed_plus_plus(X, n, d, k, rng);
        r.labels.assign(n, 0);
        assign(X, n, d, r);
        std::vector<double> sums(k * d);
        std::vector<std::size_t> counts(k);
        for (std::size_t it = 0; it < options.max_iter; ++it) {
            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++counts[r.labels[i]];
                for (std::size_t q = 0; q < d; ++q) sums[r.labels[i] * d + q] += X[i * d + q];
            }
            for (std::size_t j = 0; j < k; ++j)
                if (counts[j] > 0)
                    for (std::size_t q = 0; q < d; ++q) r.centroids[j * d + q] = sums[j * d + q] / counts[j];
            const auto before = r.labels;
            assign(X, n, d, r);
            if (r.labels == before) break;
        }
        r.inertia = assign(X, n, d, r);
        if (r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

}  // namespace mixdiff
