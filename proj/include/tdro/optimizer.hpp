#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tdro/data.hpp"
#include "tdro/grouping.hpp"
#include "tdro/model.hpp"

namespace tdro::opt {

/// erm: plain mean-loss descent. group_dro: descend on the worst streaming
/// group only. sdro: smoothed group weights driven by streaming losses alone.
/// tdro: smoothed weights driven by worst-case and shifting factors.
enum class Mode { erm, group_dro, sdro, tdro };

const char* to_string(Mode m);
Mode parse_mode(const std::string& name);

/// How a (group, period) cell's loss is normalized. group_mean: mean over the
/// cell's samples. period_share: sum over the cell divided by the period's
/// sample count, so summing a period's cells gives that period's mean loss.
enum class CellWeighting { group_mean, period_share };

const char* to_string(CellWeighting c);
CellWeighting parse_cell_weighting(const std::string& name);

struct TdroConfig {
    Mode mode = Mode::tdro;
    int num_groups = 3;   // K
    int num_periods = 3;  // E
    double lambda = 0.3;
    double p = 0.2;
    double mu = 0.2;      // streaming step size
    double eta_w = 0.1;   // weight step size
    double eta = 1.0;     // learning rate
    bool normalize_gradients = false;
    double ema_decay = 0.9;
    // Extensions, all off by default.
    bool worst_case_factor = true;   // false drops (1-lambda) * loss from the scores
    bool extractor_only_trend = false;
    CellWeighting cell_weighting = CellWeighting::period_share;

    void validate() const;
};

/// Group weights on the simplex plus the smoothed statistics behind them.
/// Cell (group i, period e) lives at index i * E + e.
struct TdroState {
    std::vector<double> w;
    std::vector<double> stream_loss;
    std::vector<std::uint8_t> seen;  // group has been observed at least once
    std::vector<std::vector<double>> grad_group;
    std::vector<std::vector<double>> grad_cell;
    std::uint64_t step = 0;
    int num_groups = 0;
    int num_periods = 0;

    static TdroState initial(int num_groups, int num_periods, std::size_t num_params);
    friend bool operator==(const TdroState&, const TdroState&) = default;
};

double stream_update(double prev, double next, double mu);

/// sum_e sum_i beta[e] * grad_cell[i * E + e]
std::vector<double> shifting_trend(const std::vector<std::vector<double>>& grad_cell, std::span<const double> beta,
                                   int num_groups);

struct ScoreOptions {
    bool normalize_gradients = false;
    bool worst_case_factor = true;
    std::size_t offset = 0;   // inner products over [offset, offset + length)
    std::size_t length = 0;   // 0 = to the end
};

/// c_j = (1 - lambda) * L_j + lambda * <g_j, trend>
std::vector<double> group_scores(std::span<const double> stream_loss,
                                 const std::vector<std::vector<double>>& grad_group, std::span<const double> trend,
                                 double lambda, const ScoreOptions& options = {});

/// w_i * exp(eta_w * c_i) / sum_s w_s * exp(eta_w * c_s), max-shifted.
std::vector<double> weight_update(std::span<const double> w, std::span<const double> c, double eta_w);

struct StepStats {
    double batch_loss = 0.0;
    int selected_group = -1;  // group_dro only
};

StepStats erm_step(Model& model, const ItemFeatures& features, const Batch& batch, const TdroConfig& config);
StepStats group_dro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                         const TdroConfig& config);
StepStats sdro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                    const TdroConfig& config);
StepStats tdro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                    const TdroConfig& config, std::span<const double> beta);

/// Dispatches on config.mode. In erm mode the state's streaming losses are
/// still tracked for logging; weights stay untouched.
StepStats step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
               const TdroConfig& config, std::span<const double> beta);

struct EpochLog {
    int epoch = 0;
    Mode mode = Mode::tdro;
    double train_loss = 0.0;
    std::vector<double> stream_loss;
    std::vector<double> weights;
    double val_recall = 0.0;
    double wall_ms = 0.0;
};

struct TrainOptions {
    int epochs = 20;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    int patience = 0;        // 0 = never stop early
    int start_epoch = 0;     // for resumed runs
    int k_metric = 20;
    ScoreMode warm_mode = ScoreMode::hybrid;
    int threads = 1;
    bool check_invariants = false;  // assert simplex/streaming invariants after every step
};

struct TrainResult {
    Model best;             // best validation Recall@K among trained epochs
    Model last;
    TdroState state;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_recall = 0.0;
    std::uint64_t invariant_checks = 0;
};

TrainResult train(const Dataset& dataset, const SplitDataset& split, const grouping::GroupPeriodIndex& index,
                  const Model& initial, const TdroConfig& config, const TrainOptions& options,
                  const TdroState* resume = nullptr);

std::string log_csv_header(int num_groups, int k_metric = 20);
std::string log_csv_row(const EpochLog& row);
/// Same as log_csv_row without the mode and wall_ms columns.
std::string log_csv_row_deterministic(const EpochLog& row);

void save_state(const std::filesystem::path& path, const TdroState& state);
TdroState load_state(const std::filesystem::path& path);

}  // namespace tdro::opt
