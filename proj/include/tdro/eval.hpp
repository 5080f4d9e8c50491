#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdro/data.hpp"
#include "tdro/model.hpp"

namespace tdro::eval {

enum class Setting { all, warm, cold };

const char* to_string(Setting s);
Setting parse_setting(const std::string& name);

struct Metrics {
    double recall = 0.0;
    double ndcg = 0.0;
    std::size_t users = 0;    // users that had at least one relevant candidate
    std::size_t skipped = 0;  // users with eval interactions but nothing relevant in the candidate set
};

struct UserMetric {
    UserId user;
    double recall;
    double ndcg;
};

struct EvalOptions {
    int k = 20;
    ScoreMode warm_mode = ScoreMode::hybrid;
    int threads = 1;
};

/// Candidate items of a setting: warm ∪ cold, warm only, or cold only.
std::vector<ItemId> candidates(const SplitDataset& split, Setting setting);

/// Top-k of `candidates` by descending score, ties by ascending item id.
/// `scores` is parallel to `candidates`.
std::vector<ItemId> rank_top_k(std::span<const double> scores, std::span<const ItemId> candidates, std::size_t k);

double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t k);
/// Binary-gain NDCG with 1/log2(rank+1) discount, IDCG over min(k, |relevant|).
double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t k);

/// Full-ranking Recall@K / NDCG@K over `eval_interactions` (positions into
/// dataset.interactions). Cold items are scored from features only. In the
/// all/warm settings each user's train items are removed from its candidates.
/// `restrict_items`, when non-empty, further limits candidates to those items.
Metrics full_rank_metrics(const Model& model, const Dataset& dataset, const SplitDataset& split,
                          std::span<const std::size_t> eval_interactions, Setting setting,
                          const EvalOptions& options, std::vector<UserMetric>* per_user = nullptr,
                          std::span<const ItemId> restrict_items = {});

struct UserShiftGroups {
    std::vector<int> group;        // by user id; -1 when excluded
    std::vector<double> distance;  // by user id; NaN when excluded
    std::size_t excluded = 0;      // users lacking train or test interactions
    int num_groups = 0;
};

/// Ranks users by ||mean train item feature - mean test item feature|| and
/// cuts them into equal-count groups, group 0 = smallest shift.
UserShiftGroups user_shift_groups(const Dataset& dataset, const SplitDataset& split, int n_groups);

/// Items of the test interactions ranked by interaction share, cut into
/// equal-count groups, group 0 = most popular. By item id; -1 when untested.
std::vector<int> item_popularity_groups(const Dataset& dataset, std::span<const std::size_t> test_interactions,
                                        int n_groups = 4);

struct GroupMetrics {
    int group;
    Metrics metrics;
};

struct EvalReport {
    int k = 20;
    Setting setting = Setting::all;
    Metrics overall;
    std::vector<GroupMetrics> user_shift;
    std::vector<GroupMetrics> item_popularity;
    std::size_t user_shift_excluded = 0;
};

struct ReportOptions {
    EvalOptions eval;
    int user_shift_groups = 0;  // 0 disables the breakdown
    int item_pop_groups = 0;
};

EvalReport evaluate(const Model& model, const Dataset& dataset, const SplitDataset& split, Setting setting,
                    const ReportOptions& options);

std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
/// setting,metric,group_kind,group,value rows with a header line.
std::string to_csv(const EvalReport& report);

}  // namespace tdro::eval
