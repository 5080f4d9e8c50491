#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tdro/data.hpp"

namespace tdro::grouping {

struct KMeansOptions {
    int k = 3;
    std::uint64_t seed = 0;
    int max_iters = 100;
    double tol = 1e-8;
};

struct KMeansResult {
    std::vector<int> assignment;      // one entry per input point
    std::vector<double> centroids;    // k x dim, row-major
    std::vector<double> inertia_trace;  // inertia after every assignment step
    int iterations = 0;

    double inertia() const { return inertia_trace.empty() ? 0.0 : inertia_trace.back(); }
};

/// Lloyd's algorithm with k-means++ seeding. `points` is n x dim row-major.
/// Empty clusters are re-seeded from the point farthest from its centroid.
KMeansResult kmeans(std::span<const double> points, std::size_t dim, const KMeansOptions& options);

/// Sum of squared distances of each point to the mean of its cluster.
double inertia_of(std::span<const double> points, std::size_t dim, std::span<const int> assignment, int k);

/// Equal-count chronological chunks; the first (n mod E) periods get one extra.
std::vector<int> split_periods(std::size_t num_interactions, int num_periods);

/// beta[e] = exp(p * (e + 1)); optionally divided by its sum.
std::vector<double> period_weights(int num_periods, double p, bool normalize = false);

struct GroupPeriodIndex {
    int num_groups = 0;
    int num_periods = 0;
    std::vector<int> item_group;          // by item id, -1 for non-warm items
    std::vector<int> interaction_period;  // parallel to SplitDataset::train
    std::vector<double> beta;
};

struct IndexOptions {
    int num_groups = 3;
    int num_periods = 3;
    double p = 0.2;
    bool normalize_beta = false;
    std::uint64_t seed = 0;
    int max_iters = 100;
    double tol = 1e-8;
};

/// Clusters warm items by feature and splits train interactions into periods.
GroupPeriodIndex build_index(const Dataset& dataset, const SplitDataset& split, const IndexOptions& options);

}  // namespace tdro::grouping
