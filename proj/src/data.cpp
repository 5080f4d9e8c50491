#include "tdro/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>

#include "tdro/error.hpp"
#include "tdro/rng.hpp"

namespace tdro {

ItemFeatures::ItemFeatures(std::size_t num_items, std::size_t dim)
    : num_items_(num_items), dim_(dim), values_(num_items * dim, 0.0) {}

namespace {

template <typename T>
bool parse_number(std::string_view field, T& out) {
    if (field.empty()) return false;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(line.substr(start));
            return parts;
        }
        parts.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
    auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n) + 1e-9));
    auto n_valid = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    std::size_t n_test = n - n_train - n_valid;
    if (n_train == 0 || n_valid == 0 || n_test == 0) throw ConfigError("degenerate split");
    return {n_train, n_valid, n_test};
}

void fill_partition(const Dataset& dataset, SplitDataset& split) {
    split.is_warm.assign(dataset.num_items, 0);
    for (auto idx : split.train) split.is_warm[dataset.interactions[idx].item] = 1;
    std::vector<std::uint8_t> later(dataset.num_items, 0);
    for (const auto* part : {&split.valid, &split.test})
        for (auto idx : *part) later[dataset.interactions[idx].item] = 1;
    for (std::size_t i = 0; i < dataset.num_items; ++i) {
        if (split.is_warm[i]) split.warm_items.push_back(static_cast<ItemId>(i));
        else if (later[i]) split.cold_items.push_back(static_cast<ItemId>(i));
    }
}

}  // namespace

Dataset make_dataset(std::vector<Interaction> interactions, ItemFeatures features) {
    if (interactions.empty()) throw IntegrityError("empty dataset");
    Dataset ds;
    std::stable_sort(interactions.begin(), interactions.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    std::int64_t max_user = -1;
    std::int64_t max_item = -1;
    for (const auto& x : interactions) {
        if (x.user < 0 || x.item < 0) throw IntegrityError("negative id in interactions");
        if (x.timestamp < 0) throw IntegrityError("negative timestamp");
        max_user = std::max<std::int64_t>(max_user, x.user);
        max_item = std::max<std::int64_t>(max_item, x.item);
    }
    if (static_cast<std::int64_t>(features.num_items()) <= max_item)
        throw IntegrityError("item " + std::to_string(max_item) + " has interactions but no feature row");
    for (double v : features.values())
        if (!std::isfinite(v)) throw IntegrityError("non-finite feature value");
    ds.num_users = static_cast<std::size_t>(max_user + 1);
    ds.num_items = features.num_items();
    ds.interactions = std::move(interactions);
    ds.features = std::move(features);
    return ds;
}

Dataset load_dataset(const std::filesystem::path& interactions_path,
                     const std::filesystem::path& features_path) {
    std::vector<Interaction> interactions;
    {
        auto in = open_input(interactions_path);
        std::string raw;
        std::size_t lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            auto line = strip_cr(raw);
            if (line.empty()) continue;
            auto fields = split(line, '\t');
            Interaction x{};
            if (fields.size() != 3 || !parse_number(fields[0], x.user) || !parse_number(fields[1], x.item) ||
                !parse_number(fields[2], x.timestamp))
                throw ParseError(interactions_path.string(), lineno, "expected user<TAB>item<TAB>timestamp");
            if (x.user < 0 || x.item < 0 || x.timestamp < 0)
                throw ParseError(interactions_path.string(), lineno, "ids and timestamp must be non-negative");
            interactions.push_back(x);
        }
    }
    if (interactions.empty()) throw IntegrityError("empty dataset");

    // Feature rows may come in any order; every id 0..max must be present.
    std::vector<std::pair<ItemId, std::vector<double>>> rows;
    std::size_t dim = 0;
    {
        auto in = open_input(features_path);
        std::string raw;
        std::size_t lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            auto line = strip_cr(raw);
            if (line.empty()) continue;
            auto fields = split(line, '\t');
            ItemId id = 0;
            if (fields.size() != 2 || !parse_number(fields[0], id) || id < 0)
                throw ParseError(features_path.string(), lineno, "expected item<TAB>v1,v2,...");
            std::vector<double> values;
            for (auto tok : split(fields[1], ',')) {
                double v = 0.0;
                if (!parse_number(tok, v))
                    throw ParseError(features_path.string(), lineno, "bad feature value '" + std::string(tok) + "'");
                if (!std::isfinite(v))
                    throw IntegrityError("non-finite feature value for item " + std::to_string(id));
                values.push_back(v);
            }
            if (rows.empty()) dim = values.size();
            else if (values.size() != dim)
                throw ParseError(features_path.string(), lineno,
                                 "feature row has " + std::to_string(values.size()) + " values, expected " +
                                     std::to_string(dim));
            rows.emplace_back(id, std::move(values));
        }
    }

    ItemId max_item = -1;
    for (const auto& r : rows) max_item = std::max(max_item, r.first);
    for (const auto& x : interactions) max_item = std::max(max_item, x.item);
    const auto num_items = static_cast<std::size_t>(max_item + 1);
    ItemFeatures features(num_items, dim);
    std::vector<std::uint8_t> present(num_items, 0);
    for (auto& [id, values] : rows) {
        if (present[id]) throw IntegrityError("duplicate feature row for item " + std::to_string(id));
        present[id] = 1;
        std::copy(values.begin(), values.end(), features.row(id).begin());
    }
    for (const auto& x : interactions)
        if (!present[x.item])
            throw IntegrityError("item " + std::to_string(x.item) + " has interactions but no feature row");
    for (std::size_t i = 0; i < num_items; ++i)
        if (!present[i]) throw IntegrityError("item " + std::to_string(i) + " has no feature row");

    return make_dataset(std::move(interactions), std::move(features));
}

void write_interactions(const std::filesystem::path& path, std::span<const Interaction> interactions) {
    auto out = open_output(path);
    for (const auto& x : interactions) out << x.user << '\t' << x.item << '\t' << x.timestamp << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

void write_features(const std::filesystem::path& path, const ItemFeatures& features) {
    auto out = open_output(path);
    for (std::size_t i = 0; i < features.num_items(); ++i) {
        out << i << '\t';
        auto row = features.row(static_cast<ItemId>(i));
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out << ',';
            out << format_double(row[k]);
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

SplitDataset chronological_split(const Dataset& dataset, const SplitRatios& ratios) {
    const auto n = dataset.interactions.size();
    if (n == 0) throw ConfigError("empty dataset");
    auto [n_train, n_valid, n_test] = split_sizes(n, ratios);
    SplitDataset split;
    split.train.resize(n_train);
    split.valid.resize(n_valid);
    split.test.resize(n_test);
    std::iota(split.train.begin(), split.train.end(), std::size_t{0});
    std::iota(split.valid.begin(), split.valid.end(), n_train);
    std::iota(split.test.begin(), split.test.end(), n_train + n_valid);
    fill_partition(dataset, split);
    return split;
}

SplitDataset random_split(const Dataset& dataset, std::uint64_t seed, const SplitRatios& ratios) {
    const auto n = dataset.interactions.size();
    if (n == 0) throw ConfigError("empty dataset");
    auto [n_train, n_valid, n_test] = split_sizes(n, ratios);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = make_rng(seed, "split");
    std::shuffle(perm.begin(), perm.end(), rng);
    SplitDataset split;
    split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.valid.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                       perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), perm.end());
    (void)n_test;
    for (auto* part : {&split.train, &split.valid, &split.test}) std::sort(part->begin(), part->end());
    fill_partition(dataset, split);
    return split;
}

}  // namespace tdro
