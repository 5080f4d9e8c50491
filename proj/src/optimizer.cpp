#include <charconv>
#include "tdro/optimizer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tdro/error.hpp"
#include "tdro/eval.hpp"
#include "tdro/rng.hpp"

namespace tdro::opt {

const char* to_string(Mode m) {
    switch (m) {
        case Mode::erm: return "erm";
        case Mode::group_dro: return "dro";
        case Mode::sdro: return "sdro";
        case Mode::tdro: return "tdro";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    if (name == "erm") return Mode::erm;
    if (name == "dro" || name == "group_dro") return Mode::group_dro;
    if (name == "sdro") return Mode::sdro;
    if (name == "tdro") return Mode::tdro;
    throw ConfigError("unknown mode '" + name + "' (expected erm, dro, sdro or tdro)");
}

const char* to_string(CellWeighting c) { return c == CellWeighting::group_mean ? "mean" : "share"; }

CellWeighting parse_cell_weighting(const std::string& name) {
    if (name == "mean" || name == "group_mean") return CellWeighting::group_mean;
    if (name == "share" || name == "period_share") return CellWeighting::period_share;
    throw ConfigError("unknown cell weighting '" + name + "' (expected mean or share)");
}

void TdroConfig::validate() const {
    if (num_groups < 1) throw ConfigError("K must be at least 1");
    if (num_periods < 1) throw ConfigError("E must be at least 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("p must be non-negative");
    if (!(mu > 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in (0, 1]");
    if (!(eta_w >= 0.0) || !std::isfinite(eta_w)) throw ConfigError("eta_w must be non-negative");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
}

TdroState TdroState::initial(int num_groups, int num_periods, std::size_t num_params) {
    TdroState s;
    s.num_groups = num_groups;
    s.num_periods = num_periods;
    const auto k = static_cast<std::size_t>(num_groups);
    s.w.assign(k, 1.0 / static_cast<double>(num_groups));
    s.stream_loss.assign(k, 0.0);
    s.seen.assign(k, 0);
    s.grad_group.assign(k, std::vector<double>(num_params, 0.0));
    s.grad_cell.assign(k * static_cast<std::size_t>(num_periods), std::vector<double>(num_params, 0.0));
    return s;
}

double stream_update(double prev, double next, double mu) { return (1.0 - mu) * prev + mu * next; }

std::vector<double> shifting_trend(const std::vector<std::vector<double>>& grad_cell, std::span<const double> beta,
                                   int num_groups) {
    const auto k = static_cast<std::size_t>(num_groups);
    const std::size_t e_count = beta.size();
    if (grad_cell.size() != k * e_count) throw ConfigError("grad_cell must hold K*E vectors");
    const std::size_t n = grad_cell.empty() ? 0 : grad_cell.front().size();
    std::vector<double> trend(n, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t e = 0; e < e_count; ++e) {
            const auto& g = grad_cell[i * e_count + e];
            if (g.size() != n) throw ConfigError("gradient length mismatch in shifting trend");
            const double b = beta[e];
            for (std::size_t t = 0; t < n; ++t) trend[t] += b * g[t];
        }
    }
    return trend;
}

namespace {

double dot_range(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += a[t] * b[t];
    return s;
}

}  // namespace

std::vector<double> group_scores(std::span<const double> stream_loss,
                                 const std::vector<std::vector<double>>& grad_group, std::span<const double> trend,
                                 double lambda, const ScoreOptions& options) {
    const std::size_t k = stream_loss.size();
    if (grad_group.size() != k) throw ConfigError("one gradient per group expected");
    const std::size_t off = std::min(options.offset, trend.size());
    const std::size_t len = options.length == 0 ? trend.size() - off : std::min(options.length, trend.size() - off);
    const double* tr = trend.data() + off;
    double trend_norm = 1.0;
    if (options.normalize_gradients) trend_norm = std::sqrt(dot_range(tr, tr, len));

    std::vector<double> c(k);
    for (std::size_t j = 0; j < k; ++j) {
        if (grad_group[j].size() != trend.size()) throw ConfigError("gradient length mismatch in group scores");
        const double* g = grad_group[j].data() + off;
        double ip = dot_range(g, tr, len);
        if (options.normalize_gradients) {
            const double gn = std::sqrt(dot_range(g, g, len));
            ip = (gn > 0.0 && trend_norm > 0.0) ? ip / (gn * trend_norm) : 0.0;
        }
        c[j] = options.worst_case_factor ? (1.0 - lambda) * stream_loss[j] + lambda * ip : lambda * ip;
    }
    return c;
}

std::vector<double> weight_update(std::span<const double> w, std::span<const double> c, double eta_w) {
    if (w.size() != c.size()) throw ConfigError("weights and scores differ in length");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : c) m = std::max(m, v);
    std::vector<double> out(w.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = w[i] * std::exp(eta_w * (c[i] - m));
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

namespace {

// Sample positions of each group, in batch order.
std::vector<std::vector<std::size_t>> partition_groups(const Batch& batch, int num_groups) {
    std::vector<std::vector<std::size_t>> parts(static_cast<std::size_t>(num_groups));
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const int g = batch[s].group;
        if (g < 0 || g >= num_groups) throw ConfigError("sample group out of range");
        parts[static_cast<std::size_t>(g)].push_back(s);
    }
    return parts;
}

double mean_of(std::span<const double> values, std::span<const std::size_t> idx) {
    double total = 0.0;
    for (auto i : idx) total += values[i];
    return total / static_cast<double>(idx.size());
}

// Feeds the per-group batch means into the streaming estimates. A group's
// first observation initializes its estimate.
void observe_losses(TdroState& state, std::span<const double> per_sample,
                    const std::vector<std::vector<std::size_t>>& parts, double mu) {
    for (std::size_t j = 0; j < parts.size(); ++j) {
        if (parts[j].empty()) continue;
        const double l = mean_of(per_sample, parts[j]);
        state.stream_loss[j] = state.seen[j] ? stream_update(state.stream_loss[j], l, mu) : l;
        state.seen[j] = 1;
    }
}

void check_state(const TdroState& state, const Model& model, const TdroConfig& config) {
    if (state.num_groups != config.num_groups || state.w.size() != static_cast<std::size_t>(config.num_groups))
        throw ConfigError("optimizer state has " + std::to_string(state.num_groups) + " groups, config has " +
                          std::to_string(config.num_groups));
    if (state.num_periods != config.num_periods)
        throw ConfigError("optimizer state has " + std::to_string(state.num_periods) + " periods, config has " +
                          std::to_string(config.num_periods));
    if (!state.grad_group.empty() && state.grad_group.front().size() != model.num_params())
        throw ConfigError("optimizer state does not match the model's parameter count");
}

// theta -= eta * sum_j w_j g_j over the groups that have a batch gradient.
void weighted_descent(Model& model, const std::vector<std::vector<double>>& grads,
                      const std::vector<std::vector<std::size_t>>& parts, std::span<const double> w, double eta) {
    auto theta = model.params();
    std::vector<double> direction(theta.size(), 0.0);
    for (std::size_t j = 0; j < parts.size(); ++j) {
        if (parts[j].empty()) continue;
        const double wj = w[j];
        const auto& g = grads[j];
        for (std::size_t t = 0; t < theta.size(); ++t) direction[t] += wj * g[t];
    }
    for (std::size_t t = 0; t < theta.size(); ++t) theta[t] -= eta * direction[t];
}

void descend_mean(Model& model, const ItemFeatures& features, const Batch& batch, double eta) {
    std::vector<double> grad;
    loss_and_gradient(model, features, batch, {}, grad);
    auto theta = model.params();
    for (std::size_t t = 0; t < theta.size(); ++t) theta[t] -= eta * grad[t];
}

void renormalize(std::vector<double>& w) {
    double total = 0.0;
    for (double v : w) total += v;
    for (auto& v : w) v /= total;
}

ScoreOptions score_options(const Model& model, const TdroConfig& config) {
    ScoreOptions so;
    so.normalize_gradients = config.normalize_gradients;
    so.worst_case_factor = config.worst_case_factor;
    if (config.extractor_only_trend) {
        so.offset = model.layout().w1;
        so.length = model.num_params() - so.offset;
    }
    return so;
}

// Group losses and gradients shared by the DRO variants.
struct GroupPass {
    LossResult losses;
    std::vector<std::vector<std::size_t>> parts;
    std::vector<std::vector<double>> grads;
};

GroupPass group_pass(const Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                     const TdroConfig& config) {
    if (batch.empty()) throw ConfigError("empty batch");
    check_state(state, model, config);
    GroupPass gp;
    gp.losses = loss(model, features, batch);
    gp.parts = partition_groups(batch, config.num_groups);
    gp.grads.resize(gp.parts.size());
    for (std::size_t j = 0; j < gp.parts.size(); ++j)
        if (!gp.parts[j].empty()) loss_and_gradient(model, features, batch, gp.parts[j], gp.grads[j]);
    observe_losses(state, gp.losses.per_sample, gp.parts, config.mu);
    return gp;
}

}  // namespace

StepStats erm_step(Model& model, const ItemFeatures& features, const Batch& batch, const TdroConfig& config) {
    if (batch.empty()) throw ConfigError("empty batch");
    StepStats st;
    st.batch_loss = loss(model, features, batch).mean;
    descend_mean(model, features, batch, config.eta);
    return st;
}

StepStats group_dro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                         const TdroConfig& config) {
    auto gp = group_pass(model, features, batch, state, config);
    // worst streaming loss among groups present in the batch, lowest index on ties
    int best = -1;
    for (std::size_t j = 0; j < gp.parts.size(); ++j) {
        if (gp.parts[j].empty()) continue;
        if (best < 0 || state.stream_loss[j] > state.stream_loss[static_cast<std::size_t>(best)])
            best = static_cast<int>(j);
    }
    const auto jb = static_cast<std::size_t>(best);
    state.grad_group[jb] = gp.grads[jb];
    auto theta = model.params();
    for (std::size_t t = 0; t < theta.size(); ++t) theta[t] -= config.eta * gp.grads[jb][t];
    std::fill(state.w.begin(), state.w.end(), 0.0);
    state.w[jb] = 1.0;
    ++state.step;
    return {gp.losses.mean, best};
}

StepStats sdro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                    const TdroConfig& config) {
    auto gp = group_pass(model, features, batch, state, config);
    for (std::size_t j = 0; j < gp.parts.size(); ++j)
        if (!gp.parts[j].empty()) state.grad_group[j] = gp.grads[j];
    state.w = weight_update(state.w, state.stream_loss, config.eta_w);
    renormalize(state.w);
    weighted_descent(model, gp.grads, gp.parts, state.w, config.eta);
    ++state.step;
    return {gp.losses.mean, -1};
}

StepStats tdro_step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
                    const TdroConfig& config, std::span<const double> beta) {
    if (beta.size() != static_cast<std::size_t>(config.num_periods))
        throw ConfigError("beta must have one entry per period");
    // (1)-(2) group losses, gradients and streaming estimates
    auto gp = group_pass(model, features, batch, state, config);
    for (std::size_t j = 0; j < gp.parts.size(); ++j)
        if (!gp.parts[j].empty()) state.grad_group[j] = gp.grads[j];

    // With lambda = 0 the scores are the streaming losses alone; the cell
    // table and trend cannot affect them, so that work is skipped.
    if (config.lambda == 0.0) {
        std::vector<double> c(state.stream_loss.size(), 0.0);
        if (config.worst_case_factor) c = state.stream_loss;
        state.w = weight_update(state.w, c, config.eta_w);
        renormalize(state.w);
        weighted_descent(model, gp.grads, gp.parts, state.w, config.eta);
        ++state.step;
        return {gp.losses.mean, -1};
    }

    // (3) cell gradients, EMA-merged; absent cells keep their value
    const auto e_count = static_cast<std::size_t>(config.num_periods);
    std::vector<std::vector<std::size_t>> cells(gp.parts.size() * e_count);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const int e = batch[s].period;
        if (e < 0 || static_cast<std::size_t>(e) >= e_count) throw ConfigError("sample period out of range");
        cells[static_cast<std::size_t>(batch[s].group) * e_count + static_cast<std::size_t>(e)].push_back(s);
    }
    std::vector<double> g;
    const double decay = config.ema_decay;
    const bool share = config.cell_weighting == CellWeighting::period_share;
    std::vector<std::size_t> period_count(e_count, 0);
    for (const auto& s : batch) ++period_count[static_cast<std::size_t>(s.period)];
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto& acc = state.grad_cell[c];
        if (cells[c].empty()) {
            // an observed period without this group contributes a zero share
            if (share && period_count[c % e_count] > 0)
                for (auto& a : acc) a *= decay;
            continue;
        }
        loss_and_gradient(model, features, batch, cells[c], g);
        const double scale = share ? static_cast<double>(cells[c].size()) /
                                         static_cast<double>(period_count[c % e_count])
                                   : 1.0;
        for (std::size_t t = 0; t < g.size(); ++t) acc[t] = decay * acc[t] + (1.0 - decay) * (scale * g[t]);
    }

    // (4)-(5) trend and group scores
    auto trend = shifting_trend(state.grad_cell, beta, config.num_groups);
    auto c = group_scores(state.stream_loss, state.grad_group, trend, config.lambda, score_options(model, config));

    // (6) weights, (7) weighted descent
    state.w = weight_update(state.w, c, config.eta_w);
    renormalize(state.w);
    weighted_descent(model, gp.grads, gp.parts, state.w, config.eta);
    ++state.step;
    return {gp.losses.mean, -1};
}

StepStats step(Model& model, const ItemFeatures& features, const Batch& batch, TdroState& state,
               const TdroConfig& config, std::span<const double> beta) {
    switch (config.mode) {
        case Mode::erm: {
            check_state(state, model, config);
            if (batch.empty()) throw ConfigError("empty batch");
            auto losses = loss(model, features, batch);
            observe_losses(state, losses.per_sample, partition_groups(batch, config.num_groups), config.mu);
            descend_mean(model, features, batch, config.eta);
            ++state.step;
            return {losses.mean, -1};
        }
        case Mode::group_dro: return group_dro_step(model, features, batch, state, config);
        case Mode::sdro: return sdro_step(model, features, batch, state, config);
        case Mode::tdro: return tdro_step(model, features, batch, state, config, beta);
    }
    throw ConfigError("unknown mode");
}

namespace {

void verify_invariants(const TdroState& state) {
    double total = 0.0;
    for (double w : state.w) {
        if (!(w >= 0.0)) throw std::logic_error("group weight left the simplex (negative entry)");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::logic_error("group weights do not sum to 1");
    for (double l : state.stream_loss)
        if (!std::isfinite(l)) throw std::logic_error("streaming loss is not finite");
}

}  // namespace

TrainResult train(const Dataset& dataset, const SplitDataset& split, const grouping::GroupPeriodIndex& index,
                  const Model& initial, const TdroConfig& config, const TrainOptions& options,
                  const TdroState* resume) {
    config.validate();
    if (index.num_groups != config.num_groups || index.num_periods != config.num_periods)
        throw ConfigError("group/period index does not match K and E of the optimizer config");
    if (options.batch_size == 0) throw ConfigError("batch size must be positive");
    if (initial.num_warm() < 2) throw ConfigError("need at least two warm items for negative sampling");
    if (index.interaction_period.size() != split.train.size())
        throw ConfigError("period index does not cover the train split");

    TrainResult result;
    result.best = initial;
    result.last = initial;
    result.state = resume ? *resume : TdroState::initial(config.num_groups, config.num_periods, initial.num_params());
    if (resume) check_state(result.state, initial, config);

    // One sample per train interaction; the negative is drawn per epoch.
    std::vector<Sample> pool;
    pool.reserve(split.train.size());
    for (std::size_t t = 0; t < split.train.size(); ++t) {
        const auto& x = dataset.interactions[split.train[t]];
        pool.push_back({x.user, x.item, -1, index.item_group[static_cast<std::size_t>(x.item)],
                        index.interaction_period[t]});
    }
    const auto& warm = initial.warm_items();
    eval::EvalOptions eo{options.k_metric, options.warm_mode, options.threads};

    Model& model = result.last;
    int stale = 0;
    for (int ep = 0; ep < options.epochs; ++ep) {
        const int epoch = options.start_epoch + ep;
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t epoch_seed = derive_seed(options.seed, "epoch/" + std::to_string(epoch));
        auto shuffle_rng = make_rng(epoch_seed, "shuffle");
        auto neg_rng = make_rng(epoch_seed, "sampling");
        std::uniform_int_distribution<std::size_t> pick(0, warm.size() - 1);

        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        Batch batch;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) {
                Sample s = pool[order[k]];
                do s.neg = warm[pick(neg_rng)];
                while (s.neg == s.pos);
                batch.push_back(s);
            }
            auto st = step(model, dataset.features, batch, result.state, config, index.beta);
            if (!std::isfinite(st.batch_loss))
                throw ConfigError("training diverged in epoch " + std::to_string(epoch) +
                                  " (non-finite loss); lower the learning rate");
            loss_sum += st.batch_loss;
            ++batches;
            if (options.check_invariants) {
                verify_invariants(result.state);
                ++result.invariant_checks;
            }
        }

        auto val = eval::full_rank_metrics(model, dataset, split, split.valid, eval::Setting::all, eo);
        EpochLog row;
        row.epoch = epoch;
        row.mode = config.mode;
        row.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        row.stream_loss = result.state.stream_loss;
        row.weights = result.state.w;
        row.val_recall = val.recall;
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(row);

        if (result.best_epoch < 0 || val.recall > result.best_recall) {
            result.best_recall = val.recall;
            result.best_epoch = epoch;
            result.best = model;
            stale = 0;
        } else if (options.patience > 0 && ++stale >= options.patience) {
            break;
        }
    }
    return result;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

std::string log_csv_header(int num_groups, int k_metric) {
    std::string h = "epoch,mode,train_loss";
    for (int j = 0; j < num_groups; ++j) h += ",loss_g" + std::to_string(j);
    for (int j = 0; j < num_groups; ++j) h += ",w_g" + std::to_string(j);
    h += ",val_recall@" + std::to_string(k_metric) + ",wall_ms";
    return h;
}

std::string log_csv_row_deterministic(const EpochLog& row) {
    std::string s = std::to_string(row.epoch) + "," + fmt(row.train_loss);
    for (double v : row.stream_loss) s += "," + fmt(v);
    for (double v : row.weights) s += "," + fmt(v);
    s += "," + fmt(row.val_recall);
    return s;
}

std::string log_csv_row(const EpochLog& row) {
    std::string s = std::to_string(row.epoch) + "," + to_string(row.mode) + "," + fmt(row.train_loss);
    for (double v : row.stream_loss) s += "," + fmt(v);
    for (double v : row.weights) s += "," + fmt(v);
    s += "," + fmt(row.val_recall);
    std::ostringstream ms;
    ms.setf(std::ios::fixed);
    ms.precision(1);
    ms << row.wall_ms;
    s += "," + ms.str();
    return s;
}

namespace {

constexpr char kStateMagic[8] = {'T', 'D', 'R', 'O', 'S', 'T', 'A', '\0'};
constexpr std::uint32_t kStateVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        out.write(bytes.data(), sizeof(T));
    } else {
        out.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }
}

template <typename T>
T get(std::ifstream& in) {
    std::array<char, sizeof(T)> bytes{};
    if (!in.read(bytes.data(), sizeof(T))) throw IntegrityError("truncated optimizer state");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

}  // namespace

void save_state(const std::filesystem::path& path, const TdroState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kStateMagic, sizeof(kStateMagic));
    put<std::uint32_t>(out, kStateVersion);
    const std::uint64_t num_params = state.grad_group.empty() ? 0 : state.grad_group.front().size();
    put<std::uint64_t>(out, static_cast<std::uint64_t>(state.num_groups));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(state.num_periods));
    put<std::uint64_t>(out, num_params);
    put<std::uint64_t>(out, state.step);
    for (double v : state.w) put<double>(out, v);
    for (double v : state.stream_loss) put<double>(out, v);
    for (auto v : state.seen) put<std::uint8_t>(out, v);
    for (const auto& g : state.grad_group)
        for (double v : g) put<double>(out, v);
    for (const auto& g : state.grad_cell)
        for (double v : g) put<double>(out, v);
    if (!out) throw IoError("failed writing " + path.string());
}

TdroState load_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kStateMagic, sizeof(kStateMagic)) != 0)
        throw IntegrityError(path.string() + " is not an optimizer state file");
    if (get<std::uint32_t>(in) != kStateVersion) throw IntegrityError("unsupported optimizer state version");
    const auto k = get<std::uint64_t>(in);
    const auto e = get<std::uint64_t>(in);
    const auto num_params = get<std::uint64_t>(in);
    if (k == 0 || e == 0 || k > 1'000'000 || e > 1'000'000) throw IntegrityError("corrupt optimizer state header");
    auto state = TdroState::initial(static_cast<int>(k), static_cast<int>(e), num_params);
    state.step = get<std::uint64_t>(in);
    for (auto& v : state.w) v = get<double>(in);
    for (auto& v : state.stream_loss) v = get<double>(in);
    for (auto& v : state.seen) v = get<std::uint8_t>(in);
    for (auto& g : state.grad_group)
        for (auto& v : g) v = get<double>(in);
    for (auto& g : state.grad_cell)
        for (auto& v : g) v = get<double>(in);
    if (in.peek() != std::char_traits<char>::eof()) throw IntegrityError("trailing bytes in " + path.string());
    return state;
}

}  // namespace tdro::opt
