#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdro/data.hpp"

namespace tdro::synth {

/// Knobs of the temporal item-feature-shift generator.
struct SynthConfig {
    std::size_t num_users = 500;
    std::size_t num_items = 2000;
    std::size_t num_concepts = 4;
    std::size_t feature_dim = 16;
    std::size_t periods = 10;
    std::size_t interactions_per_period = 5000;
    double drift = 0.6;           // mixture mass moved from dominant to rising concept by the last period
    double feature_noise = 0.3;   // std-dev of item features around their concept centroid
    double temperature = 0.5;     // softmax temperature of user preference
    double dominant_share = 0.7;  // initial mixture weight of the dominant concept
    std::uint64_t seed = 0;

    void validate() const;
};

/// Concept 0 starts dominant and loses mass; concept 1 rises.
inline constexpr std::size_t kDominantConcept = 0;
inline constexpr std::size_t kRisingConcept = 1;

struct SynthResult {
    Dataset dataset;
    std::vector<std::vector<double>> mixtures;  // periods x concepts
    std::vector<int> item_concept;
    std::vector<int> item_period;
};

/// Per-period concept mixture: linear transfer from the dominant to the rising concept.
std::vector<std::vector<double>> concept_mixtures(const SynthConfig& config);

SynthResult generate(const SynthConfig& config);

/// interactions.tsv, features.tsv and provenance.json under `dir`.
void write(const std::filesystem::path& dir, const SynthConfig& config, const SynthResult& result);

std::string provenance_json(const SynthConfig& config, const SynthResult& result);

}  // namespace tdro::synth
