#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tdro/data.hpp"

namespace tdro {

enum class ScoreMode { hybrid, cf_only, feature_only };

struct ModelShape {
    std::size_t dim = 128;        // CF / feature representation size d
    std::size_t hidden = 256;     // extractor hidden width h
    std::size_t feature_dim = 0;  // raw item feature size
    std::size_t num_users = 0;
    std::size_t num_items = 0;    // all items; only warm ones get a CF row

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Parameter blocks in the flat vector, in this order:
/// user_emb (U x d), item_emb (W x d), W1 (h x d_feat), b1 (h), W2 (d x h), b2 (d).
struct ParamLayout {
    std::size_t user_emb = 0, item_emb = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;

    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

/// Two-tower cold-start recommender. All trainable values live in one flat
/// vector so optimizers can treat the model as a point in R^P.
class Model {
public:
    Model() = default;
    /// `warm_items` lists the items that own a CF embedding row, in row order.
    Model(const ModelShape& shape, std::span<const ItemId> warm_items, double alpha = 0.5, double gamma = 0.1);

    const ModelShape& shape() const { return shape_; }
    const ParamLayout& layout() const { return layout_; }
    double alpha() const { return alpha_; }
    double gamma() const { return gamma_; }
    void set_alpha(double a);
    void set_gamma(double g);

    std::size_t num_params() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    std::size_t num_warm() const { return warm_items_.size(); }
    const std::vector<ItemId>& warm_items() const { return warm_items_; }
    bool has_cf(ItemId item) const {
        return item >= 0 && static_cast<std::size_t>(item) < item_row_.size() && item_row_[item] >= 0;
    }
    /// CF row of a warm item; throws ConfigError for items without one.
    std::size_t cf_row(ItemId item) const;

    std::span<const double> user_vec(UserId u) const;
    std::span<const double> item_vec(ItemId item) const;

    /// Uniform(-scale, scale) over every parameter.
    void init_uniform(std::uint64_t seed, double scale = 0.01);

    friend bool operator==(const Model&, const Model&) = default;

private:
    ModelShape shape_;
    ParamLayout layout_;
    double alpha_ = 0.5;
    double gamma_ = 0.1;
    std::vector<ItemId> warm_items_;
    std::vector<std::int64_t> item_row_;
    std::vector<double> params_;
};

struct Sample {
    UserId user;
    ItemId pos;
    ItemId neg;
    int group = 0;
    int period = 0;
};

using Batch = std::vector<Sample>;

/// f(s) = W2 relu(W1 s + b1) + b2
std::vector<double> feature_rep(const Model& model, std::span<const double> s);

/// Feature representations of every item, row-major num_items x d.
std::vector<double> all_feature_reps(const Model& model, const ItemFeatures& features);

double score(const Model& model, UserId u, ItemId i, ScoreMode mode, std::span<const double> s_i = {});

struct LossResult {
    double mean = 0.0;
    std::vector<double> per_sample;
};

/// BPR on hybrid scores plus gamma * ||q_pos - f(s_pos)||^2.
LossResult loss(const Model& model, const ItemFeatures& features, std::span<const Sample> batch);

/// Gradient of the mean loss over `batch[subset[k]]`, in ParamLayout order.
/// An empty subset means "all samples". Samples are reduced in subset order.
std::vector<double> loss_gradient(const Model& model, const ItemFeatures& features, std::span<const Sample> batch,
                                  std::span<const std::size_t> subset = {});

/// Same as above but writes into `grad` (resized and zeroed) and returns the mean loss.
double loss_and_gradient(const Model& model, const ItemFeatures& features, std::span<const Sample> batch,
                         std::span<const std::size_t> subset, std::vector<double>& grad);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace tdro
