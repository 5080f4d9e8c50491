#include <doctest.h>

#include <fstream>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "support.hpp"
#include "tdro/error.hpp"
#include "tdro/synth.hpp"

using namespace tdro;
using namespace tdro::synth;

namespace {

// interactions per (period, concept)
std::vector<std::vector<double>> concept_counts(const SynthConfig& c, const SynthResult& r) {
    std::vector<std::vector<double>> n(c.periods, std::vector<double>(c.num_concepts, 0.0));
    for (const auto& x : r.dataset.interactions) {
        const auto t = static_cast<std::size_t>(x.timestamp) / c.interactions_per_period;
        n[t][static_cast<std::size_t>(r.item_concept[static_cast<std::size_t>(x.item)])] += 1;
    }
    return n;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthConfig small() {
    SynthConfig c;
    c.num_users = 50;
    c.num_items = 200;
    c.periods = 5;
    c.interactions_per_period = 400;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("same seed gives byte-identical files") {
    auto c = small();
    auto a = testing::temp_dir("synth_a"), b = testing::temp_dir("synth_b");
    write(a, c, generate(c));
    write(b, c, generate(c));
    for (const char* f : {"interactions.tsv", "features.tsv", "provenance.json"}) CHECK(slurp(a / f) == slurp(b / f));
    c.seed = 4;
    CHECK_FALSE(generate(c).dataset == generate(small()).dataset);
}

TEST_CASE("without drift the concept share is constant across periods") {
    SynthConfig c;
    c.drift = 0.0;
    c.interactions_per_period = 10000;
    c.seed = 11;
    auto r = generate(c);
    auto n = concept_counts(c, r);
    // chi-square test of homogeneity over the periods x concepts table
    std::vector<double> row(c.periods, 0.0), col(c.num_concepts, 0.0);
    double total = 0;
    for (std::size_t t = 0; t < c.periods; ++t)
        for (std::size_t g = 0; g < c.num_concepts; ++g) row[t] += n[t][g], col[g] += n[t][g], total += n[t][g];
    double stat = 0;
    for (std::size_t t = 0; t < c.periods; ++t)
        for (std::size_t g = 0; g < c.num_concepts; ++g) {
            const double e = row[t] * col[g] / total;
            stat += (n[t][g] - e) * (n[t][g] - e) / e;
        }
    boost::math::chi_squared dist(static_cast<double>((c.periods - 1) * (c.num_concepts - 1)));
    const double p = boost::math::cdf(boost::math::complement(dist, stat));
    CHECK(p > 0.01);
}

TEST_CASE("with full drift the rising concept gains share") {
    auto c = small();
    c.num_concepts = 2;
    c.drift = 1.0;
    auto r = generate(c);
    auto n = concept_counts(c, r);
    const double first = n.front()[kRisingConcept] / static_cast<double>(c.interactions_per_period);
    const double last = n.back()[kRisingConcept] / static_cast<double>(c.interactions_per_period);
    CHECK(last > first);
}

TEST_CASE("mixtures are distributions and the rising weight never falls") {
    for (double drift : {0.0, 0.3, 0.6, 0.9, 1.0}) {
        for (std::size_t g : {1, 2, 4}) {
            auto c = small();
            c.drift = drift;
            c.num_concepts = g;
            c.periods = 7;
            auto m = concept_mixtures(c);
            REQUIRE(m.size() == 7);
            for (const auto& row : m) {
                double s = 0;
                for (double v : row) {
                    CHECK(v >= 0.0);
                    s += v;
                }
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
            if (g >= 2)
                for (std::size_t t = 1; t < m.size(); ++t) CHECK(m[t][kRisingConcept] >= m[t - 1][kRisingConcept]);
        }
    }
    // the default config ends with the dominant and rising concepts swapped
    auto m = concept_mixtures(SynthConfig{});
    CHECK(m.front()[0] == doctest::Approx(0.7));
    CHECK(m.back()[0] == doctest::Approx(0.1));
    CHECK(m.back()[1] == doctest::Approx(0.7));
}

TEST_CASE("every interacted item has a feature row and the last periods feed the cold pool") {
    auto c = small();
    auto r = generate(c);
    CHECK(r.dataset.features.num_items() == c.num_items);
    for (const auto& x : r.dataset.interactions) {
        CHECK(static_cast<std::size_t>(x.item) < c.num_items);
        // an item is only interacted with once uploaded
        CHECK(static_cast<std::size_t>(r.item_period[static_cast<std::size_t>(x.item)]) <=
              static_cast<std::size_t>(x.timestamp) / c.interactions_per_period);
    }
    auto sp = chronological_split(r.dataset);
    for (auto item : sp.cold_items) CHECK(r.item_period[static_cast<std::size_t>(item)] >= 1);
}

TEST_CASE("invalid configs are rejected") {
    auto bad = [](auto mutate) {
        auto c = small();
        mutate(c);
        CHECK_THROWS_AS(generate(c), ConfigError);
    };
    bad([](SynthConfig& c) { c.num_items = 3; });  // 4 concepts, one would be empty
    bad([](SynthConfig& c) { c.num_users = 0; });
    bad([](SynthConfig& c) { c.drift = -0.1; });
    bad([](SynthConfig& c) { c.temperature = 0.0; });
    bad([](SynthConfig& c) { c.feature_noise = -1.0; });
}

TEST_CASE("provenance echoes the config and lists one mixture row per period") {
    auto c = small();
    auto r = generate(c);
    auto j = nlohmann::json::parse(provenance_json(c, r));
    CHECK(j["config"]["seed"].get<std::uint64_t>() == c.seed);
    CHECK(j["mixtures"].size() == c.periods);
    for (const auto& row : j["mixtures"]) {
        double s = 0;
        for (const auto& v : row) s += v.get<double>();
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}
