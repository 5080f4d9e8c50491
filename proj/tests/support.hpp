#pragma once

// Fixtures and independent reference implementations shared by the unit tests
// and the acceptance suite. Nothing here calls into the code under test except
// to build inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "tdro/data.hpp"
#include "tdro/model.hpp"

namespace tdro::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tdro_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline ItemFeatures random_features(std::size_t n, std::size_t dim, std::mt19937_64& rng, double scale = 1.0) {
    ItemFeatures f(n, dim);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (std::size_t i = 0; i < n; ++i)
        for (auto& v : f.row(static_cast<ItemId>(i))) v = u(rng);
    return f;
}

/// Small model with warm items 0..num_warm-1 and parameters ~ U(-scale, scale).
inline Model random_model(std::size_t users, std::size_t items, std::size_t num_warm, std::size_t dim,
                          std::size_t hidden, std::size_t feat_dim, std::mt19937_64& rng, double scale = 0.5,
                          double alpha = 0.5, double gamma = 0.1) {
    std::vector<ItemId> warm(num_warm);
    for (std::size_t i = 0; i < num_warm; ++i) warm[i] = static_cast<ItemId>(i);
    Model m(ModelShape{dim, hidden, feat_dim, users, items}, warm, alpha, gamma);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& p : m.params()) p = u(rng);
    return m;
}

inline Batch random_batch(std::size_t n, std::size_t users, std::size_t num_warm, int groups, int periods,
                          std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pu(0, static_cast<int>(users) - 1);
    std::uniform_int_distribution<int> pi(0, static_cast<int>(num_warm) - 1);
    std::uniform_int_distribution<int> pg(0, groups - 1);
    std::uniform_int_distribution<int> pe(0, periods - 1);
    Batch b;
    for (std::size_t k = 0; k < n; ++k) {
        Sample s{pu(rng), pi(rng), 0, pg(rng), pe(rng)};
        do s.neg = pi(rng);
        while (s.neg == s.pos);
        b.push_back(s);
    }
    return b;
}

// ------------------------------------------------------------------ oracles

/// Literal loss of one sample, computed without the library's loss routine:
/// -ln sigma(x_pos - x_neg) + gamma * ||q_pos - f(s_pos)||^2.
inline double reference_sample_loss(const Model& m, const ItemFeatures& feats, const Sample& s) {
    const auto& sh = m.shape();
    const auto& L = m.layout();
    auto P = m.params();
    auto f = [&](ItemId item) {
        auto x = feats.row(item);
        std::vector<double> hdn(sh.hidden), out(sh.dim);
        for (std::size_t r = 0; r < sh.hidden; ++r) {
            double a = P[L.b1 + r];
            for (std::size_t c = 0; c < sh.feature_dim; ++c) a += P[L.w1 + r * sh.feature_dim + c] * x[c];
            hdn[r] = a > 0.0 ? a : 0.0;
        }
        for (std::size_t r = 0; r < sh.dim; ++r) {
            double a = P[L.b2 + r];
            for (std::size_t c = 0; c < sh.hidden; ++c) a += P[L.w2 + r * sh.hidden + c] * hdn[c];
            out[r] = a;
        }
        return out;
    };
    auto row_of = [&](ItemId item) {
        const auto& w = m.warm_items();
        return static_cast<std::size_t>(std::find(w.begin(), w.end(), item) - w.begin());
    };
    auto uvec = [&](std::size_t k) { return P[L.user_emb + static_cast<std::size_t>(s.user) * sh.dim + k]; };
    auto qvec = [&](ItemId item, std::size_t k) { return P[L.item_emb + row_of(item) * sh.dim + k]; };
    const auto fp = f(s.pos), fn = f(s.neg);
    double xp = 0, xn = 0, align = 0;
    const double a = m.alpha();
    for (std::size_t k = 0; k < sh.dim; ++k) {
        xp += uvec(k) * (a * qvec(s.pos, k) + (1 - a) * fp[k]);
        xn += uvec(k) * (a * qvec(s.neg, k) + (1 - a) * fn[k]);
        align += (qvec(s.pos, k) - fp[k]) * (qvec(s.pos, k) - fp[k]);
    }
    double sig = 1.0 / (1.0 + std::exp(-(xp - xn)));
    sig = std::clamp(sig, 1e-12, 1.0 - 1e-12);
    return -std::log(sig) + m.gamma() * align;
}

inline double reference_mean_loss(const Model& m, const ItemFeatures& feats, const Batch& b) {
    double t = 0;
    for (const auto& s : b) t += reference_sample_loss(m, feats, s);
    return t / static_cast<double>(b.size());
}

/// Central finite-difference gradient of the reference mean loss.
inline std::vector<double> fd_gradient(Model m, const ItemFeatures& feats, const Batch& b, double h = 1e-5) {
    std::vector<double> g(m.num_params());
    auto P = m.params();
    for (std::size_t t = 0; t < P.size(); ++t) {
        const double keep = P[t];
        P[t] = keep + h;
        const double up = reference_mean_loss(m, feats, b);
        P[t] = keep - h;
        const double dn = reference_mean_loss(m, feats, b);
        P[t] = keep;
        g[t] = (up - dn) / (2 * h);
    }
    return g;
}

/// Objective maximized by the weight update:
/// sum_i w_i c_i - (1/eta_w) KL(w || w_old).
inline double kl_objective(const std::vector<double>& w, const std::vector<double>& c,
                           const std::vector<double>& w_old, double eta_w) {
    double lin = 0, kl = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        lin += w[i] * c[i];
        if (w[i] > 0) kl += w[i] * std::log(w[i] / w_old[i]);
    }
    return lin - kl / eta_w;
}

/// Numerical maximizer of kl_objective on the simplex: coarse grid for a
/// start, then repeated golden-section search along pairwise mass transfers.
/// Knows nothing about the closed form.
inline std::vector<double> maximize_on_simplex(const std::vector<double>& c, const std::vector<double>& w_old,
                                               double eta_w) {
    const std::size_t k = c.size();
    auto obj = [&](const std::vector<double>& w) { return kl_objective(w, c, w_old, eta_w); };
    // grid start, step 1/40
    std::vector<double> best(k, 1.0 / static_cast<double>(k));
    double best_v = obj(best);
    const int steps = 40;
    std::vector<int> idx(k, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t pos, int left) {
        if (pos == k - 1) {
            idx[pos] = left;
            std::vector<double> w(k);
            for (std::size_t i = 0; i < k; ++i) w[i] = static_cast<double>(idx[i]) / steps;
            const double v = obj(w);
            if (v > best_v) best_v = v, best = w;
            return;
        }
        for (int a = 0; a <= left; ++a) {
            idx[pos] = a;
            rec(pos + 1, left - a);
        }
    };
    rec(0, steps);
    // pairwise coordinate refinement
    const double phi = (std::sqrt(5.0) - 1) / 2;
    for (int sweep = 0; sweep < 200; ++sweep) {
        double moved = 0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                const double total = best[i] + best[j];
                auto at = [&](double x) {
                    auto w = best;
                    w[i] = x;
                    w[j] = total - x;
                    return obj(w);
                };
                double lo = 0, hi = total;
                double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
                double f1 = at(x1), f2 = at(x2);
                for (int it = 0; it < 120 && hi - lo > 1e-15; ++it) {
                    if (f1 < f2) {
                        lo = x1, x1 = x2, f1 = f2, x2 = lo + phi * (hi - lo), f2 = at(x2);
                    } else {
                        hi = x2, x2 = x1, f2 = f1, x1 = hi - phi * (hi - lo), f1 = at(x1);
                    }
                }
                const double x = (lo + hi) / 2;
                if (at(x) >= obj(best)) {
                    moved += std::abs(x - best[i]);
                    best[i] = x;
                    best[j] = total - x;
                }
            }
        if (moved < 1e-14) break;
    }
    return best;
}

/// Literal Recall@K / NDCG@K for one user: fully sort by (score desc, id asc).
struct NaiveMetric {
    double recall, ndcg;
};
inline NaiveMetric naive_user_metric(const std::vector<std::pair<ItemId, double>>& scored,
                                     const std::set<ItemId>& relevant, std::size_t k) {
    auto v = scored;
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    double hits = 0, dcg = 0, idcg = 0;
    for (std::size_t r = 0; r < std::min(k, v.size()); ++r)
        if (relevant.count(v[r].first)) {
            hits += 1;
            dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
    for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return {hits / static_cast<double>(relevant.size()), idcg > 0 ? dcg / idcg : 0.0};
}

/// Literal full-ranking evaluation over split.test: per user, candidates of the
/// setting minus its train items (except in the cold setting), cold items
/// scored from features only, relevant = test items among the candidates,
/// users without relevant candidates skipped, plain mean over the rest.
inline NaiveMetric naive_full_rank(const Model& m, const Dataset& ds, const SplitDataset& sp, int setting,
                                   std::size_t k) {
    // setting: 0 all, 1 warm, 2 cold
    std::vector<std::set<ItemId>> train(ds.num_users), test(ds.num_users);
    for (auto i : sp.train) train[static_cast<std::size_t>(ds.interactions[i].user)].insert(ds.interactions[i].item);
    for (auto i : sp.test) test[static_cast<std::size_t>(ds.interactions[i].user)].insert(ds.interactions[i].item);
    double rsum = 0, nsum = 0, users = 0;
    for (std::size_t u = 0; u < ds.num_users; ++u) {
        if (test[u].empty()) continue;
        std::vector<std::pair<ItemId, double>> scored;
        for (std::size_t i = 0; i < ds.num_items; ++i) {
            const auto item = static_cast<ItemId>(i);
            const bool warm = std::find(sp.warm_items.begin(), sp.warm_items.end(), item) != sp.warm_items.end();
            const bool cold = std::find(sp.cold_items.begin(), sp.cold_items.end(), item) != sp.cold_items.end();
            if ((setting == 1 && !warm) || (setting == 2 && !cold) || (!warm && !cold)) continue;
            if (setting != 2 && train[u].count(item)) continue;
            const auto uid = static_cast<UserId>(u);
            scored.push_back({item, warm ? score(m, uid, item, ScoreMode::hybrid, ds.features.row(item))
                                         : score(m, uid, item, ScoreMode::feature_only, ds.features.row(item))});
        }
        std::set<ItemId> rel;
        for (auto item : test[u])
            for (const auto& sc : scored)
                if (sc.first == item) rel.insert(item);
        if (rel.empty()) continue;
        auto r = naive_user_metric(scored, rel, k);
        rsum += r.recall;
        nsum += r.ndcg;
        users += 1;
    }
    return {users > 0 ? rsum / users : 0.0, users > 0 ? nsum / users : 0.0};
}

/// Random instance with at most `max_items` items: a handful of users, a
/// chronological split, random features and a random model.
struct MetricInstance {
    Dataset ds;
    SplitDataset sp;
    Model model;
};

inline MetricInstance random_metric_instance(std::mt19937_64& rng, std::size_t max_items = 10) {
    std::uniform_int_distribution<std::size_t> ni(3, max_items), nu(1, 4);
    const std::size_t items = ni(rng), users = nu(rng);
    std::uniform_int_distribution<int> pu(0, static_cast<int>(users) - 1), pi(0, static_cast<int>(items) - 1);
    std::vector<Interaction> xs;
    const int n = 20 + static_cast<int>(rng() % 21);
    for (int t = 0; t < n; ++t) xs.push_back({pu(rng), pi(rng), t});
    xs.back().user = static_cast<UserId>(users - 1);
    xs.front().item = static_cast<ItemId>(items - 1);
    auto ds = make_dataset(xs, random_features(items, 3, rng));
    auto sp = chronological_split(ds);
    Model m(ModelShape{4, 5, 3, ds.num_users, ds.num_items}, sp.warm_items);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& p : m.params()) p = u(rng);
    return {std::move(ds), std::move(sp), std::move(m)};
}

}  // namespace tdro::testing
