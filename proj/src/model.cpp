#include "tdro/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "tdro/error.hpp"
#include "tdro/rng.hpp"

namespace tdro {

namespace {

constexpr double kProbEps = 1e-12;

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

// Forward pass of the extractor with the intermediates needed for backprop.
struct ExtractorPass {
    std::vector<double> z;  // pre-activation, h
    std::vector<double> f;  // output, d
};

void extractor_forward(const Model& m, const double* s, ExtractorPass& out) {
    const auto& sh = m.shape();
    const auto& L = m.layout();
    const double* p = m.params().data();
    out.z.resize(sh.hidden);
    out.f.resize(sh.dim);
    for (std::size_t r = 0; r < sh.hidden; ++r)
        out.z[r] = dot(p + L.w1 + r * sh.feature_dim, s, sh.feature_dim) + p[L.b1 + r];
    for (std::size_t r = 0; r < sh.dim; ++r) {
        const double* w2 = p + L.w2 + r * sh.hidden;
        double acc = 0.0;
        for (std::size_t c = 0; c < sh.hidden; ++c) acc += w2[c] * (out.z[c] > 0.0 ? out.z[c] : 0.0);
        out.f[r] = acc + p[L.b2 + r];
    }
}

// Accumulates d(loss)/d(extractor params) given d(loss)/df into grad.
void extractor_backward(const Model& m, const double* s, const ExtractorPass& pass, const double* df,
                        double* grad, std::vector<double>& dz) {
    const auto& sh = m.shape();
    const auto& L = m.layout();
    const double* p = m.params().data();
    dz.assign(sh.hidden, 0.0);
    for (std::size_t r = 0; r < sh.dim; ++r) {
        const double g = df[r];
        if (g == 0.0) continue;
        grad[L.b2 + r] += g;
        double* gw2 = grad + L.w2 + r * sh.hidden;
        const double* w2 = p + L.w2 + r * sh.hidden;
        for (std::size_t c = 0; c < sh.hidden; ++c) {
            const double a = pass.z[c] > 0.0 ? pass.z[c] : 0.0;
            gw2[c] += g * a;
            dz[c] += g * w2[c];
        }
    }
    for (std::size_t c = 0; c < sh.hidden; ++c) {
        if (!(pass.z[c] > 0.0) || dz[c] == 0.0) continue;
        grad[L.b1 + c] += dz[c];
        double* gw1 = grad + L.w1 + c * sh.feature_dim;
        for (std::size_t k = 0; k < sh.feature_dim; ++k) gw1[k] += dz[c] * s[k];
    }
}

void check_features(const Model& m, const ItemFeatures& features) {
    if (features.dim() != m.shape().feature_dim)
        throw ConfigError("feature dimension mismatch: model expects " + std::to_string(m.shape().feature_dim) +
                          ", features have " + std::to_string(features.dim()));
}

double hybrid_score(double alpha, double cf, double feat) { return alpha * cf + (1.0 - alpha) * feat; }

template <typename T>
void put(std::ofstream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        out.write(bytes.data(), sizeof(T));
    } else {
        out.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    std::array<char, sizeof(T)> bytes{};
    if (!in.read(bytes.data(), sizeof(T))) throw IntegrityError("truncated checkpoint " + path.string());
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

constexpr char kMagic[8] = {'T', 'D', 'R', 'O', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

Model::Model(const ModelShape& shape, std::span<const ItemId> warm_items, double alpha, double gamma)
    : shape_(shape), warm_items_(warm_items.begin(), warm_items.end()) {
    set_alpha(alpha);
    set_gamma(gamma);
    if (shape.dim == 0 || shape.hidden == 0 || shape.feature_dim == 0)
        throw ConfigError("model dimensions must be positive");
    item_row_.assign(shape.num_items, -1);
    for (std::size_t r = 0; r < warm_items_.size(); ++r) {
        auto item = warm_items_[r];
        if (item < 0 || static_cast<std::size_t>(item) >= shape.num_items)
            throw ConfigError("warm item " + std::to_string(item) + " out of range");
        if (item_row_[item] >= 0) throw ConfigError("duplicate warm item " + std::to_string(item));
        item_row_[item] = static_cast<std::int64_t>(r);
    }
    auto& L = layout_;
    L.user_emb = 0;
    L.item_emb = L.user_emb + shape.num_users * shape.dim;
    L.w1 = L.item_emb + warm_items_.size() * shape.dim;
    L.b1 = L.w1 + shape.hidden * shape.feature_dim;
    L.w2 = L.b1 + shape.hidden;
    L.b2 = L.w2 + shape.dim * shape.hidden;
    L.total = L.b2 + shape.dim;
    params_.assign(L.total, 0.0);
}

void Model::set_alpha(double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    alpha_ = a;
}

void Model::set_gamma(double g) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma must be non-negative");
    gamma_ = g;
}

std::size_t Model::cf_row(ItemId item) const {
    if (!has_cf(item)) throw ConfigError("item " + std::to_string(item) + " has no CF embedding");
    return static_cast<std::size_t>(item_row_[item]);
}

std::span<const double> Model::user_vec(UserId u) const {
    if (u < 0 || static_cast<std::size_t>(u) >= shape_.num_users)
        throw ConfigError("user " + std::to_string(u) + " out of range");
    return {params_.data() + layout_.user_emb + static_cast<std::size_t>(u) * shape_.dim, shape_.dim};
}

std::span<const double> Model::item_vec(ItemId item) const {
    return {params_.data() + layout_.item_emb + cf_row(item) * shape_.dim, shape_.dim};
}

void Model::init_uniform(std::uint64_t seed, double scale) {
    auto rng = make_rng(seed, "init");
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& v : params_) v = dist(rng);
}

std::vector<double> feature_rep(const Model& model, std::span<const double> s) {
    if (s.size() != model.shape().feature_dim)
        throw ConfigError("feature vector has dimension " + std::to_string(s.size()) + ", expected " +
                          std::to_string(model.shape().feature_dim));
    ExtractorPass pass;
    extractor_forward(model, s.data(), pass);
    return std::move(pass.f);
}

std::vector<double> all_feature_reps(const Model& model, const ItemFeatures& features) {
    check_features(model, features);
    const std::size_t d = model.shape().dim;
    std::vector<double> reps(features.num_items() * d);
    ExtractorPass pass;
    for (std::size_t i = 0; i < features.num_items(); ++i) {
        extractor_forward(model, features.row(static_cast<ItemId>(i)).data(), pass);
        std::copy(pass.f.begin(), pass.f.end(), reps.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return reps;
}

double score(const Model& model, UserId u, ItemId i, ScoreMode mode, std::span<const double> s_i) {
    auto p = model.user_vec(u);
    const std::size_t d = model.shape().dim;
    if (mode == ScoreMode::cf_only) return dot(p.data(), model.item_vec(i).data(), d);
    if (s_i.empty()) throw ConfigError("item " + std::to_string(i) + " has no features for feature scoring");
    auto f = feature_rep(model, s_i);
    const double feat = dot(p.data(), f.data(), d);
    if (mode == ScoreMode::feature_only) return feat;
    return hybrid_score(model.alpha(), dot(p.data(), model.item_vec(i).data(), d), feat);
}

LossResult loss(const Model& model, const ItemFeatures& features, std::span<const Sample> batch) {
    LossResult out;
    out.per_sample.reserve(batch.size());
    check_features(model, features);
    const std::size_t d = model.shape().dim;
    const double a = model.alpha();
    ExtractorPass fp, fn;
    double total = 0.0;
    for (const auto& s : batch) {
        auto p = model.user_vec(s.user);
        auto qp = model.item_vec(s.pos);
        auto qn = model.item_vec(s.neg);
        extractor_forward(model, features.row(s.pos).data(), fp);
        extractor_forward(model, features.row(s.neg).data(), fn);
        const double xpos = hybrid_score(a, dot(p.data(), qp.data(), d), dot(p.data(), fp.f.data(), d));
        const double xneg = hybrid_score(a, dot(p.data(), qn.data(), d), dot(p.data(), fn.f.data(), d));
        double sig = 1.0 / (1.0 + std::exp(-(xpos - xneg)));
        sig = std::clamp(sig, kProbEps, 1.0 - kProbEps);
        double align = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double r = qp[k] - fp.f[k];
            align += r * r;
        }
        const double l = -std::log(sig) + model.gamma() * align;
        out.per_sample.push_back(l);
        total += l;
    }
    out.mean = batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
    return out;
}

double loss_and_gradient(const Model& model, const ItemFeatures& features, std::span<const Sample> batch,
                         std::span<const std::size_t> subset, std::vector<double>& grad) {
    check_features(model, features);
    grad.assign(model.num_params(), 0.0);
    const std::size_t n = subset.empty() ? batch.size() : subset.size();
    if (n == 0) return 0.0;

    const auto& sh = model.shape();
    const auto& L = model.layout();
    const std::size_t d = sh.dim;
    const double a = model.alpha();
    const double gamma = model.gamma();
    ExtractorPass fp, fn;
    std::vector<double> df(d), dz;
    double total = 0.0;

    for (std::size_t k = 0; k < n; ++k) {
        const Sample& s = batch[subset.empty() ? k : subset[k]];
        auto p = model.user_vec(s.user);
        auto qp = model.item_vec(s.pos);
        auto qn = model.item_vec(s.neg);
        const double* sp = features.row(s.pos).data();
        const double* sn = features.row(s.neg).data();
        extractor_forward(model, sp, fp);
        extractor_forward(model, sn, fn);

        const double xpos = hybrid_score(a, dot(p.data(), qp.data(), d), dot(p.data(), fp.f.data(), d));
        const double xneg = hybrid_score(a, dot(p.data(), qn.data(), d), dot(p.data(), fn.f.data(), d));
        const double raw = 1.0 / (1.0 + std::exp(-(xpos - xneg)));
        const double sig = std::clamp(raw, kProbEps, 1.0 - kProbEps);
        const double dx = (sig == raw) ? sig - 1.0 : 0.0;  // d(-ln sig)/dx, flat where clamped

        double align = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double r = qp[c] - fp.f[c];
            align += r * r;
        }
        total += -std::log(sig) + gamma * align;

        double* gu = grad.data() + L.user_emb + static_cast<std::size_t>(s.user) * d;
        double* gqp = grad.data() + L.item_emb + model.cf_row(s.pos) * d;
        double* gqn = grad.data() + L.item_emb + model.cf_row(s.neg) * d;
        for (std::size_t c = 0; c < d; ++c) {
            const double vpos = a * qp[c] + (1.0 - a) * fp.f[c];
            const double vneg = a * qn[c] + (1.0 - a) * fn.f[c];
            const double r2 = 2.0 * gamma * (qp[c] - fp.f[c]);
            gu[c] += dx * (vpos - vneg);
            gqp[c] += dx * a * p[c] + r2;
            gqn[c] -= dx * a * p[c];
            df[c] = dx * (1.0 - a) * p[c] - r2;
        }
        extractor_backward(model, sp, fp, df.data(), grad.data(), dz);
        for (std::size_t c = 0; c < d; ++c) df[c] = -dx * (1.0 - a) * p[c];
        extractor_backward(model, sn, fn, df.data(), grad.data(), dz);
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& g : grad) g *= inv;
    return total / static_cast<double>(n);
}

std::vector<double> loss_gradient(const Model& model, const ItemFeatures& features, std::span<const Sample> batch,
                                  std::span<const std::size_t> subset) {
    std::vector<double> grad;
    loss_and_gradient(model, features, batch, subset, grad);
    return grad;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const auto& sh = model.shape();
    for (std::uint64_t v : {sh.dim, sh.hidden, sh.feature_dim, sh.num_users, sh.num_items}) put<std::uint64_t>(out, v);
    put<double>(out, model.alpha());
    put<double>(out, model.gamma());
    put<std::uint64_t>(out, model.num_warm());
    for (auto item : model.warm_items()) put<std::int64_t>(out, item);
    for (double v : model.params()) put<double>(out, v);
    if (!out) throw IoError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError(path.string() + " is not a model checkpoint");
    auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
    ModelShape sh;
    sh.dim = get<std::uint64_t>(in, path);
    sh.hidden = get<std::uint64_t>(in, path);
    sh.feature_dim = get<std::uint64_t>(in, path);
    sh.num_users = get<std::uint64_t>(in, path);
    sh.num_items = get<std::uint64_t>(in, path);
    const double alpha = get<double>(in, path);
    const double gamma = get<double>(in, path);
    const auto num_warm = get<std::uint64_t>(in, path);
    if (num_warm > sh.num_items) throw IntegrityError("corrupt checkpoint: more warm rows than items");
    std::vector<ItemId> warm(num_warm);
    for (auto& w : warm) w = static_cast<ItemId>(get<std::int64_t>(in, path));
    Model model(sh, warm, alpha, gamma);
    for (auto& v : model.params()) v = get<double>(in, path);
    if (in.peek() != std::char_traits<char>::eof()) throw IntegrityError("trailing bytes in " + path.string());
    return model;
}

}  // namespace tdro
