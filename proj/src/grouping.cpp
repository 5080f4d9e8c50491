#include "tdro/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tdro/error.hpp"
#include "tdro/rng.hpp"

namespace tdro::grouping {

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

// Returns inertia; fills assignment with the nearest centroid (lowest index on ties).
double assign(std::span<const double> points, std::size_t dim, const std::vector<double>& centroids, int k,
              std::vector<int>& assignment, std::vector<double>& best_dist) {
    const std::size_t n = points.size() / dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = points.data() + i * dim;
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            double d = sq_dist(x, centroids.data() + static_cast<std::size_t>(c) * dim, dim);
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        assignment[i] = best;
        best_dist[i] = bd;
        total += bd;
    }
    return total;
}

std::vector<double> means(std::span<const double> points, std::size_t dim, std::span<const int> assignment, int k,
                          std::vector<std::size_t>& counts) {
    std::vector<double> centroids(static_cast<std::size_t>(k) * dim, 0.0);
    counts.assign(static_cast<std::size_t>(k), 0);
    const std::size_t n = assignment.size();
    for (std::size_t i = 0; i < n; ++i) {
        auto c = static_cast<std::size_t>(assignment[i]);
        ++counts[c];
        for (std::size_t d = 0; d < dim; ++d) centroids[c * dim + d] += points[i * dim + d];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c)
        if (counts[c] > 0)
            for (std::size_t d = 0; d < dim; ++d) centroids[c * dim + d] /= static_cast<double>(counts[c]);
    return centroids;
}

// Moves the farthest point of a multi-member cluster into each empty cluster.
bool reseed_empty(std::vector<int>& assignment, std::vector<double>& best_dist, std::vector<std::size_t>& counts,
                  int k) {
    bool changed = false;
    for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) continue;
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (best_dist[i] > fd && counts[static_cast<std::size_t>(assignment[i])] > 1) {
                fd = best_dist[i];
                far = i;
            }
        }
        --counts[static_cast<std::size_t>(assignment[far])];
        assignment[far] = c;
        counts[static_cast<std::size_t>(c)] = 1;
        best_dist[far] = 0.0;
        changed = true;
    }
    return changed;
}

}  // namespace

double inertia_of(std::span<const double> points, std::size_t dim, std::span<const int> assignment, int k) {
    std::vector<std::size_t> counts;
    auto centroids = means(points, dim, assignment, k, counts);
    double total = 0.0;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        total += sq_dist(points.data() + i * dim, centroids.data() + static_cast<std::size_t>(assignment[i]) * dim, dim);
    return total;
}

KMeansResult kmeans(std::span<const double> points, std::size_t dim, const KMeansOptions& options) {
    if (dim == 0) throw ConfigError("k-means needs a positive feature dimension");
    const std::size_t n = points.size() / dim;
    const int k = options.k;
    if (k < 1) throw ConfigError("K must be at least 1");
    if (static_cast<std::size_t>(k) > n)
        throw ConfigError("K=" + std::to_string(k) + " exceeds the number of warm items (" + std::to_string(n) + ")");
    for (double v : points)
        if (!std::isfinite(v)) throw IntegrityError("non-finite feature passed to k-means");

    auto rng = make_rng(options.seed, "kmeans");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k-means++ seeding
    std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::copy_n(points.data() + first * dim, dim, centroids.data());
    for (int c = 1; c < k; ++c) {
        const double* prev = centroids.data() + static_cast<std::size_t>(c - 1) * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points.data() + i * dim, prev, dim));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = unit(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            // every point coincides with a centroid already; any choice has zero cost
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
        std::copy_n(points.data() + pick * dim, dim, centroids.data() + static_cast<std::size_t>(c) * dim);
    }

    KMeansResult result;
    result.assignment.assign(n, 0);
    std::vector<double> best_dist(n, 0.0);
    std::vector<std::size_t> counts;
    result.inertia_trace.push_back(assign(points, dim, centroids, k, result.assignment, best_dist));

    for (int iter = 0; iter < options.max_iters; ++iter) {
        auto next = means(points, dim, result.assignment, k, counts);
        if (reseed_empty(result.assignment, best_dist, counts, k)) next = means(points, dim, result.assignment, k, counts);
        double shift = 0.0;
        for (std::size_t j = 0; j < next.size(); j += dim)
            shift = std::max(shift, std::sqrt(sq_dist(next.data() + j, centroids.data() + j, dim)));
        centroids = std::move(next);
        result.inertia_trace.push_back(assign(points, dim, centroids, k, result.assignment, best_dist));
        result.iterations = iter + 1;
        if (shift < options.tol) break;
    }
    // the last assignment step can empty a cluster again when points coincide
    means(points, dim, result.assignment, k, counts);
    if (reseed_empty(result.assignment, best_dist, counts, k))
        result.inertia_trace.push_back(inertia_of(points, dim, result.assignment, k));
    result.centroids = means(points, dim, result.assignment, k, counts);
    return result;
}

std::vector<int> split_periods(std::size_t num_interactions, int num_periods) {
    if (num_periods < 1) throw ConfigError("E must be at least 1");
    if (static_cast<std::size_t>(num_periods) > num_interactions)
        throw ConfigError("E=" + std::to_string(num_periods) + " exceeds the number of train interactions (" +
                          std::to_string(num_interactions) + ")");
    const std::size_t e = static_cast<std::size_t>(num_periods);
    const std::size_t base = num_interactions / e;
    const std::size_t extra = num_interactions % e;
    std::vector<int> period(num_interactions);
    std::size_t pos = 0;
    for (std::size_t p = 0; p < e; ++p) {
        std::size_t len = base + (p < extra ? 1 : 0);
        std::fill_n(period.begin() + static_cast<std::ptrdiff_t>(pos), len, static_cast<int>(p));
        pos += len;
    }
    return period;
}

std::vector<double> period_weights(int num_periods, double p, bool normalize) {
    if (num_periods < 1) throw ConfigError("E must be at least 1");
    std::vector<double> beta(static_cast<std::size_t>(num_periods));
    double total = 0.0;
    for (int e = 0; e < num_periods; ++e) {
        beta[static_cast<std::size_t>(e)] = std::exp(p * static_cast<double>(e + 1));
        total += beta[static_cast<std::size_t>(e)];
    }
    if (normalize)
        for (auto& b : beta) b /= total;
    return beta;
}

GroupPeriodIndex build_index(const Dataset& dataset, const SplitDataset& split, const IndexOptions& options) {
    const std::size_t dim = dataset.features.dim();
    std::vector<double> points;
    points.reserve(split.warm_items.size() * dim);
    for (auto item : split.warm_items) {
        auto row = dataset.features.row(item);
        points.insert(points.end(), row.begin(), row.end());
    }
    auto km = kmeans(points, dim, {options.num_groups, options.seed, options.max_iters, options.tol});

    GroupPeriodIndex index;
    index.num_groups = options.num_groups;
    index.num_periods = options.num_periods;
    index.item_group.assign(dataset.num_items, -1);
    for (std::size_t j = 0; j < split.warm_items.size(); ++j)
        index.item_group[static_cast<std::size_t>(split.warm_items[j])] = km.assignment[j];
    index.interaction_period = split_periods(split.train.size(), options.num_periods);
    index.beta = period_weights(options.num_periods, options.p, options.normalize_beta);
    return index;
}

}  // namespace tdro::grouping
