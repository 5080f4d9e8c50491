#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tdro {

using UserId = std::int32_t;
using ItemId = std::int32_t;

struct Interaction {
    UserId user;
    ItemId item;
    std::int64_t timestamp;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Dense row-major item feature matrix, row i is the raw feature vector of item i.
class ItemFeatures {
public:
    ItemFeatures() = default;
    ItemFeatures(std::size_t num_items, std::size_t dim);

    std::size_t num_items() const { return num_items_; }
    std::size_t dim() const { return dim_; }

    std::span<const double> row(ItemId item) const {
        return {values_.data() + static_cast<std::size_t>(item) * dim_, dim_};
    }
    std::span<double> row(ItemId item) {
        return {values_.data() + static_cast<std::size_t>(item) * dim_, dim_};
    }

    const std::vector<double>& values() const { return values_; }

    friend bool operator==(const ItemFeatures&, const ItemFeatures&) = default;

private:
    std::size_t num_items_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

/// Interactions sorted by (timestamp, input order) plus aligned item features.
struct Dataset {
    std::vector<Interaction> interactions;
    ItemFeatures features;
    std::size_t num_users = 0;
    std::size_t num_items = 0;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Train/valid/test as positions into Dataset::interactions, each ascending.
/// Warm items are the train item set, cold items occur only in valid or test.
struct SplitDataset {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;
    std::vector<ItemId> warm_items;  // ascending
    std::vector<ItemId> cold_items;  // ascending
    std::vector<std::uint8_t> is_warm;  // indexed by item id

    friend bool operator==(const SplitDataset&, const SplitDataset&) = default;
};

using SplitRatios = std::array<double, 3>;
inline constexpr SplitRatios kDefaultRatios{0.8, 0.1, 0.1};

/// Builds a Dataset from in-memory records: stable-sorts by timestamp and
/// checks ids, timestamps and feature coverage.
Dataset make_dataset(std::vector<Interaction> interactions, ItemFeatures features);

/// Reads `user<TAB>item<TAB>timestamp` and `item<TAB>v1,v2,...` files.
Dataset load_dataset(const std::filesystem::path& interactions_path,
                     const std::filesystem::path& features_path);

void write_interactions(const std::filesystem::path& path, std::span<const Interaction> interactions);
void write_features(const std::filesystem::path& path, const ItemFeatures& features);

/// First floor(r0*N) interactions to train, next floor(r1*N) to valid, rest to test.
SplitDataset chronological_split(const Dataset& dataset, const SplitRatios& ratios = kDefaultRatios);

/// Same sizes as chronological_split but membership drawn from a seeded
/// permutation. For data without a usable global clock.
SplitDataset random_split(const Dataset& dataset, std::uint64_t seed,
                          const SplitRatios& ratios = kDefaultRatios);

}  // namespace tdro
