#include "tdro/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <span>

#include <json.hpp>

#include "tdro/error.hpp"
#include "tdro/rng.hpp"

namespace tdro::synth {

namespace {

// Index i with cumulative weight first exceeding r; the last index absorbs rounding.
std::size_t draw(std::span<const double> weights, double r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (r < acc) return i;
    }
    return weights.size() - 1;
}

}  // namespace

void SynthConfig::validate() const {
    if (num_users < 1 || num_items < 1 || num_concepts < 1 || feature_dim < 1 || periods < 1 ||
        interactions_per_period < 1)
        throw ConfigError("synthetic counts must all be at least 1");
    if (!(drift >= 0.0 && drift <= 1.0)) throw ConfigError("drift must lie in [0, 1]");
    if (!(feature_noise >= 0.0) || !std::isfinite(feature_noise)) throw ConfigError("feature noise must be >= 0");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
    if (!(dominant_share > 0.0 && dominant_share <= 1.0)) throw ConfigError("dominant share must lie in (0, 1]");
    if (num_items < num_concepts)
        throw ConfigError("infeasible config: " + std::to_string(num_concepts) + " concepts but only " +
                          std::to_string(num_items) + " items, some concept would have zero items");
}

std::vector<std::vector<double>> concept_mixtures(const SynthConfig& config) {
    const std::size_t g = config.num_concepts;
    std::vector<double> start(g, g == 1 ? 1.0 : (1.0 - config.dominant_share) / static_cast<double>(g - 1));
    start[kDominantConcept] = g == 1 ? 1.0 : config.dominant_share;
    std::vector<std::vector<double>> rows(config.periods, start);
    if (g < 2 || config.periods < 2) return rows;
    // delta/(T-1) per period, capped so the dominant concept never goes negative
    for (std::size_t t = 0; t < config.periods; ++t) {
        const double moved = std::min(start[kDominantConcept],
                                      config.drift * static_cast<double>(t) / static_cast<double>(config.periods - 1));
        rows[t][kDominantConcept] -= moved;
        rows[t][kRisingConcept] += moved;
    }
    return rows;
}

SynthResult generate(const SynthConfig& config) {
    config.validate();
    const std::size_t g = config.num_concepts;
    const std::size_t dim = config.feature_dim;
    SynthResult out;
    out.mixtures = concept_mixtures(config);

    // concept centroids on the unit sphere
    auto feat_rng = make_rng(config.seed, "synth/features");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> centroids(g * dim);
    for (std::size_t c = 0; c < g; ++c) {
        double norm = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            centroids[c * dim + k] = gauss(feat_rng);
            norm += centroids[c * dim + k] * centroids[c * dim + k];
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < dim; ++k) centroids[c * dim + k] /= norm;
    }

    // items: round-robin concepts; the first item of each concept is uploaded in period 0
    auto upload_rng = make_rng(config.seed, "synth/upload");
    std::uniform_int_distribution<std::size_t> period_pick(0, config.periods - 1);
    ItemFeatures features(config.num_items, dim);
    out.item_concept.resize(config.num_items);
    out.item_period.resize(config.num_items);
    for (std::size_t i = 0; i < config.num_items; ++i) {
        const std::size_t c = i % g;
        out.item_concept[i] = static_cast<int>(c);
        out.item_period[i] = i < g ? 0 : static_cast<int>(period_pick(upload_rng));
        auto row = features.row(static_cast<ItemId>(i));
        for (std::size_t k = 0; k < dim; ++k) row[k] = centroids[c * dim + k] + config.feature_noise * gauss(feat_rng);
    }

    // static user preferences, unit norm
    auto user_rng = make_rng(config.seed, "synth/users");
    std::vector<double> prefs(config.num_users * dim);
    for (std::size_t u = 0; u < config.num_users; ++u) {
        double norm = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            prefs[u * dim + k] = gauss(user_rng);
            norm += prefs[u * dim + k] * prefs[u * dim + k];
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < dim; ++k) prefs[u * dim + k] /= norm;
    }

    auto inter_rng = make_rng(config.seed, "synth/interactions");
    std::uniform_int_distribution<std::size_t> user_pick(0, config.num_users - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Interaction> interactions;
    interactions.reserve(config.periods * config.interactions_per_period);
    std::vector<std::vector<ItemId>> available(g);
    std::vector<double> weights;

    for (std::size_t t = 0; t < config.periods; ++t) {
        for (std::size_t i = 0; i < config.num_items; ++i)
            if (static_cast<std::size_t>(out.item_period[i]) == t) available[i % g].push_back(static_cast<ItemId>(i));
        const auto& mix = out.mixtures[t];
        for (std::size_t n = 0; n < config.interactions_per_period; ++n) {
            const std::size_t u = user_pick(inter_rng);
            // concept from the period's mixture
            const std::size_t c = draw(mix, unit(inter_rng));
            // item from that concept's uploaded items, softmax over preference / temperature
            const auto& pool = available[c];
            weights.resize(pool.size());
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < pool.size(); ++j) {
                auto s = features.row(pool[j]);
                double logit = 0.0;
                for (std::size_t k = 0; k < dim; ++k) logit += prefs[u * dim + k] * s[k];
                weights[j] = logit / config.temperature;
                best = std::max(best, weights[j]);
            }
            double total = 0.0;
            for (auto& w : weights) {
                w = std::exp(w - best);
                total += w;
            }
            const std::size_t j = draw(weights, unit(inter_rng) * total);
            interactions.push_back({static_cast<UserId>(u), pool[j],
                                    static_cast<std::int64_t>(t * config.interactions_per_period + n)});
        }
    }
    out.dataset = make_dataset(std::move(interactions), std::move(features));
    return out;
}

std::string provenance_json(const SynthConfig& config, const SynthResult& result) {
    nlohmann::json j;
    j["config"] = {{"num_users", config.num_users},
                   {"num_items", config.num_items},
                   {"num_concepts", config.num_concepts},
                   {"feature_dim", config.feature_dim},
                   {"periods", config.periods},
                   {"interactions_per_period", config.interactions_per_period},
                   {"drift", config.drift},
                   {"feature_noise", config.feature_noise},
                   {"temperature", config.temperature},
                   {"dominant_share", config.dominant_share},
                   {"seed", config.seed}};
    j["dominant_concept"] = kDominantConcept;
    j["rising_concept"] = kRisingConcept;
    j["mixtures"] = result.mixtures;
    j["item_concept"] = result.item_concept;
    j["item_upload_period"] = result.item_period;
    return j.dump(2) + "\n";
}

void write(const std::filesystem::path& dir, const SynthConfig& config, const SynthResult& result) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_interactions(dir / "interactions.tsv", result.dataset.interactions);
    write_features(dir / "features.tsv", result.dataset.features);
    std::ofstream out(dir / "provenance.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "provenance.json").string());
    out << provenance_json(config, result);
    if (!out) throw IoError("failed writing provenance.json");
}

}  // namespace tdro::synth
