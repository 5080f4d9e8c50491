#include "tdro/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tdro/error.hpp"

namespace tdro::eval {

const char* to_string(Setting s) {
    switch (s) {
        case Setting::all: return "all";
        case Setting::warm: return "warm";
        case Setting::cold: return "cold";
    }
    return "?";
}

Setting parse_setting(const std::string& name) {
    if (name == "all") return Setting::all;
    if (name == "warm") return Setting::warm;
    if (name == "cold") return Setting::cold;
    throw ConfigError("unknown setting '" + name + "' (expected all, warm or cold)");
}

std::vector<ItemId> candidates(const SplitDataset& split, Setting setting) {
    switch (setting) {
        case Setting::warm: return split.warm_items;
        case Setting::cold: return split.cold_items;
        case Setting::all: {
            std::vector<ItemId> all;
            all.reserve(split.warm_items.size() + split.cold_items.size());
            std::merge(split.warm_items.begin(), split.warm_items.end(), split.cold_items.begin(),
                       split.cold_items.end(), std::back_inserter(all));
            return all;
        }
    }
    return {};
}

std::vector<ItemId> rank_top_k(std::span<const double> scores, std::span<const ItemId> cands, std::size_t k) {
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t top = std::min(k, order.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return cands[a] < cands[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(), better);
    std::vector<ItemId> ranked(top);
    for (std::size_t r = 0; r < top; ++r) ranked[r] = cands[order[r]];
    return ranked;
}

namespace {

bool contains(std::span<const ItemId> sorted, ItemId item) {
    return std::binary_search(sorted.begin(), sorted.end(), item);
}

}  // namespace

double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t k) {
    if (relevant.empty()) return 0.0;
    std::vector<ItemId> rel(relevant.begin(), relevant.end());
    std::sort(rel.begin(), rel.end());
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
        if (contains(rel, ranked[r])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t k) {
    if (relevant.empty()) return 0.0;
    std::vector<ItemId> rel(relevant.begin(), relevant.end());
    std::sort(rel.begin(), rel.end());
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
        if (contains(rel, ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, rel.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

// Sorted, de-duplicated item lists per user.
std::vector<std::vector<ItemId>> items_by_user(const Dataset& dataset, std::span<const std::size_t> positions) {
    std::vector<std::vector<ItemId>> by_user(dataset.num_users);
    for (auto idx : positions) {
        const auto& x = dataset.interactions[idx];
        by_user[static_cast<std::size_t>(x.user)].push_back(x.item);
    }
    for (auto& v : by_user) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return by_user;
}

}  // namespace

Metrics full_rank_metrics(const Model& model, const Dataset& dataset, const SplitDataset& split,
                          std::span<const std::size_t> eval_interactions, Setting setting,
                          const EvalOptions& options, std::vector<UserMetric>* per_user,
                          std::span<const ItemId> restrict_items) {
    if (options.k < 1) throw ConfigError("K for metrics must be positive");
    auto cands = candidates(split, setting);
    if (!restrict_items.empty()) {
        std::vector<ItemId> allowed(restrict_items.begin(), restrict_items.end());
        std::sort(allowed.begin(), allowed.end());
        std::erase_if(cands, [&](ItemId i) { return !contains(allowed, i); });
    }
    if (cands.empty()) throw ConfigError(std::string("empty candidate set for setting ") + to_string(setting));
    if (model.shape().num_users < dataset.num_users)
        throw ConfigError("model has " + std::to_string(model.shape().num_users) + " users, dataset has " +
                          std::to_string(dataset.num_users));

    const std::size_t d = model.shape().dim;
    const double alpha = model.alpha();
    const auto reps = all_feature_reps(model, dataset.features);
    // Per-candidate scoring plan: CF row pointer (or null) and feature rep pointer.
    struct Plan {
        const double* cf;
        const double* feat;
    };
    std::vector<Plan> plan(cands.size());
    for (std::size_t c = 0; c < cands.size(); ++c) {
        const ItemId item = cands[c];
        const double* feat = reps.data() + static_cast<std::size_t>(item) * d;
        const bool warm = split.is_warm[static_cast<std::size_t>(item)] != 0;
        // Cold items are never looked up in the CF table.
        plan[c] = {warm && options.warm_mode != ScoreMode::feature_only ? model.item_vec(item).data() : nullptr,
                   warm && options.warm_mode == ScoreMode::cf_only ? nullptr : feat};
    }

    const auto relevant_all = items_by_user(dataset, eval_interactions);
    const bool mask_train = setting != Setting::cold;
    const auto train_items = mask_train ? items_by_user(dataset, split.train) : std::vector<std::vector<ItemId>>{};

    std::vector<UserId> users;
    for (std::size_t u = 0; u < relevant_all.size(); ++u)
        if (!relevant_all[u].empty()) users.push_back(static_cast<UserId>(u));

    struct Slot {
        bool evaluated = false;
        double recall = 0.0;
        double ndcg = 0.0;
    };
    std::vector<Slot> slots(users.size());
    const auto k = static_cast<std::size_t>(options.k);

    auto work = [&](std::size_t begin, std::size_t end) {
        std::vector<double> scores;
        std::vector<ItemId> live;
        std::vector<ItemId> relevant;
        for (std::size_t n = begin; n < end; ++n) {
            const UserId u = users[n];
            const auto uu = static_cast<std::size_t>(u);
            const double* p = model.user_vec(u).data();
            std::span<const ItemId> masked;
            if (mask_train) masked = train_items[uu];
            scores.clear();
            live.clear();
            for (std::size_t c = 0; c < cands.size(); ++c) {
                if (!masked.empty() && contains(masked, cands[c])) continue;
                const Plan& pl = plan[c];
                double s;
                if (pl.cf && pl.feat) s = alpha * dot(p, pl.cf, d) + (1.0 - alpha) * dot(p, pl.feat, d);
                else if (pl.cf) s = dot(p, pl.cf, d);
                else s = dot(p, pl.feat, d);
                scores.push_back(s);
                live.push_back(cands[c]);
            }
            relevant.clear();
            for (ItemId item : relevant_all[uu])
                if (std::binary_search(live.begin(), live.end(), item)) relevant.push_back(item);
            if (relevant.empty()) continue;
            auto ranked = rank_top_k(scores, live, k);
            slots[n] = {true, recall_at_k(ranked, relevant, k), ndcg_at_k(ranked, relevant, k)};
        }
    };

    const std::size_t threads =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), 1, std::max<std::size_t>(1, users.size()));
    if (threads == 1) {
        work(0, users.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (users.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t b = std::min(users.size(), t * chunk);
            const std::size_t e = std::min(users.size(), b + chunk);
            pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    Metrics m;
    for (std::size_t n = 0; n < users.size(); ++n) {
        if (!slots[n].evaluated) {
            ++m.skipped;
            continue;
        }
        ++m.users;
        m.recall += slots[n].recall;
        m.ndcg += slots[n].ndcg;
        if (per_user) per_user->push_back({users[n], slots[n].recall, slots[n].ndcg});
    }
    if (m.users > 0) {
        m.recall /= static_cast<double>(m.users);
        m.ndcg /= static_cast<double>(m.users);
    }
    return m;
}

namespace {

// Equal-count chunking shared by both breakdowns: first (n mod g) groups get one extra.
std::vector<int> chunk_labels(std::size_t n, int n_groups) {
    const auto g = static_cast<std::size_t>(std::max(1, std::min<int>(n_groups, static_cast<int>(std::max<std::size_t>(n, 1)))));
    std::vector<int> labels(n);
    const std::size_t base = n / g;
    const std::size_t extra = n % g;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < g; ++j) {
        const std::size_t len = base + (j < extra ? 1 : 0);
        for (std::size_t t = 0; t < len; ++t) labels[pos++] = static_cast<int>(j);
    }
    return labels;
}

}  // namespace

UserShiftGroups user_shift_groups(const Dataset& dataset, const SplitDataset& split, int n_groups) {
    if (n_groups < 1) throw ConfigError("number of user groups must be positive");
    const std::size_t dim = dataset.features.dim();
    const std::size_t nu = dataset.num_users;
    std::vector<double> train_sum(nu * dim, 0.0), test_sum(nu * dim, 0.0);
    std::vector<std::size_t> train_n(nu, 0), test_n(nu, 0);
    auto accumulate = [&](std::span<const std::size_t> positions, std::vector<double>& sum,
                          std::vector<std::size_t>& count) {
        for (auto idx : positions) {
            const auto& x = dataset.interactions[idx];
            const auto u = static_cast<std::size_t>(x.user);
            auto row = dataset.features.row(x.item);
            for (std::size_t k = 0; k < dim; ++k) sum[u * dim + k] += row[k];
            ++count[u];
        }
    };
    accumulate(split.train, train_sum, train_n);
    accumulate(split.test, test_sum, test_n);

    UserShiftGroups out;
    out.group.assign(nu, -1);
    out.distance.assign(nu, std::numeric_limits<double>::quiet_NaN());
    std::vector<UserId> eligible;
    for (std::size_t u = 0; u < nu; ++u) {
        if (train_n[u] == 0 || test_n[u] == 0) {
            if (train_n[u] + test_n[u] > 0) ++out.excluded;
            continue;
        }
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double diff = train_sum[u * dim + k] / static_cast<double>(train_n[u]) -
                                test_sum[u * dim + k] / static_cast<double>(test_n[u]);
            s += diff * diff;
        }
        out.distance[u] = std::sqrt(s);
        eligible.push_back(static_cast<UserId>(u));
    }
    std::stable_sort(eligible.begin(), eligible.end(), [&](UserId a, UserId b) {
        return out.distance[static_cast<std::size_t>(a)] < out.distance[static_cast<std::size_t>(b)];
    });
    auto labels = chunk_labels(eligible.size(), n_groups);
    for (std::size_t r = 0; r < eligible.size(); ++r) out.group[static_cast<std::size_t>(eligible[r])] = labels[r];
    out.num_groups = eligible.empty() ? 0 : labels.back() + 1;
    return out;
}

std::vector<int> item_popularity_groups(const Dataset& dataset, std::span<const std::size_t> test_interactions,
                                        int n_groups) {
    if (n_groups < 1) throw ConfigError("number of item groups must be positive");
    if (test_interactions.empty()) throw ConfigError("no test interactions for popularity groups");
    std::vector<std::size_t> count(dataset.num_items, 0);
    for (auto idx : test_interactions) ++count[static_cast<std::size_t>(dataset.interactions[idx].item)];
    std::vector<ItemId> items;
    for (std::size_t i = 0; i < count.size(); ++i)
        if (count[i] > 0) items.push_back(static_cast<ItemId>(i));
    // share = count / total, so ranking by count is ranking by share
    std::stable_sort(items.begin(), items.end(), [&](ItemId a, ItemId b) {
        return count[static_cast<std::size_t>(a)] > count[static_cast<std::size_t>(b)];
    });
    std::vector<int> group(dataset.num_items, -1);
    auto labels = chunk_labels(items.size(), n_groups);
    for (std::size_t r = 0; r < items.size(); ++r) group[static_cast<std::size_t>(items[r])] = labels[r];
    return group;
}

EvalReport evaluate(const Model& model, const Dataset& dataset, const SplitDataset& split, Setting setting,
                    const ReportOptions& options) {
    EvalReport report;
    report.k = options.eval.k;
    report.setting = setting;
    std::vector<UserMetric> per_user;
    report.overall = full_rank_metrics(model, dataset, split, split.test, setting, options.eval, &per_user);

    if (options.user_shift_groups > 0) {
        auto groups = user_shift_groups(dataset, split, options.user_shift_groups);
        report.user_shift_excluded = groups.excluded;
        for (int g = 0; g < options.user_shift_groups; ++g) {
            Metrics m;
            for (const auto& um : per_user) {
                if (groups.group[static_cast<std::size_t>(um.user)] != g) continue;
                ++m.users;
                m.recall += um.recall;
                m.ndcg += um.ndcg;
            }
            if (m.users) {
                m.recall /= static_cast<double>(m.users);
                m.ndcg /= static_cast<double>(m.users);
            }
            report.user_shift.push_back({g, m});
        }
    }
    if (options.item_pop_groups > 0) {
        auto groups = item_popularity_groups(dataset, split.test, options.item_pop_groups);
        for (int g = 0; g < options.item_pop_groups; ++g) {
            std::vector<ItemId> members;
            for (std::size_t i = 0; i < groups.size(); ++i)
                if (groups[i] == g) members.push_back(static_cast<ItemId>(i));
            Metrics m;
            auto cands = candidates(split, setting);
            const bool any = std::any_of(members.begin(), members.end(), [&](ItemId i) {
                return std::binary_search(cands.begin(), cands.end(), i);
            });
            if (any) m = full_rank_metrics(model, dataset, split, split.test, setting, options.eval, nullptr, members);
            report.item_popularity.push_back({g, m});
        }
    }
    return report;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
    return {{"recall", m.recall}, {"ndcg", m.ndcg}, {"users", m.users}, {"skipped", m.skipped}};
}

Metrics metrics_from(const nlohmann::json& j) {
    Metrics m;
    m.recall = j.at("recall").get<double>();
    m.ndcg = j.at("ndcg").get<double>();
    m.users = j.value("users", std::size_t{0});
    m.skipped = j.value("skipped", std::size_t{0});
    return m;
}

}  // namespace

std::string to_json(const EvalReport& report) {
    nlohmann::json j;
    j["k"] = report.k;
    j["setting"] = to_string(report.setting);
    j["overall"] = metrics_json(report.overall);
    j["user_shift_groups"] = nlohmann::json::array();
    for (const auto& g : report.user_shift) {
        auto e = metrics_json(g.metrics);
        e["group"] = g.group;
        j["user_shift_groups"].push_back(e);
    }
    j["user_shift_excluded"] = report.user_shift_excluded;
    j["item_popularity_groups"] = nlohmann::json::array();
    for (const auto& g : report.item_popularity) {
        auto e = metrics_json(g.metrics);
        e["group"] = g.group;
        j["item_popularity_groups"].push_back(e);
    }
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    EvalReport r;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        r.k = j.at("k").get<int>();
        r.setting = parse_setting(j.at("setting").get<std::string>());
        r.overall = metrics_from(j.at("overall"));
        for (const auto& e : j.value("user_shift_groups", nlohmann::json::array()))
            r.user_shift.push_back({e.at("group").get<int>(), metrics_from(e)});
        r.user_shift_excluded = j.value("user_shift_excluded", std::size_t{0});
        for (const auto& e : j.value("item_popularity_groups", nlohmann::json::array()))
            r.item_popularity.push_back({e.at("group").get<int>(), metrics_from(e)});
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string to_csv(const EvalReport& report) {
    std::ostringstream os;
    os.precision(17);
    const std::string s = to_string(report.setting);
    const std::string k = std::to_string(report.k);
    os << "setting,metric,group_kind,group,value\n";
    auto rows = [&](const std::string& kind, const std::string& group, const Metrics& m) {
        os << s << ",recall@" << k << ',' << kind << ',' << group << ',' << m.recall << '\n';
        os << s << ",ndcg@" << k << ',' << kind << ',' << group << ',' << m.ndcg << '\n';
    };
    rows("overall", "all", report.overall);
    for (const auto& g : report.user_shift) rows("user_shift", std::to_string(g.group), g.metrics);
    for (const auto& g : report.item_popularity) rows("item_popularity", std::to_string(g.group), g.metrics);
    return os.str();
}

}  // namespace tdro::eval
