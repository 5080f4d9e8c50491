#include <doctest.h>

#include "support.hpp"
#include "tdro/error.hpp"
#include "tdro/eval.hpp"
#include "tdro/grouping.hpp"
#include "tdro/optimizer.hpp"
#include "tdro/synth.hpp"

using namespace tdro;
using namespace tdro::opt;

namespace {

struct Toy {
    ItemFeatures feats;
    Model model;
    Batch batch;
};

Toy toy(std::uint64_t seed, int groups, int periods, std::size_t n = 24) {
    std::mt19937_64 rng(seed);
    Toy t{testing::random_features(8, 3, rng), testing::random_model(5, 8, 8, 4, 5, 3, rng, 0.3), {}};
    t.batch = testing::random_batch(n, 5, 8, groups, periods, rng);
    return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<std::size_t> members(const Batch& b, int group, int period = -1) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < b.size(); ++s)
        if (b[s].group == group && (period < 0 || b[s].period == period)) out.push_back(s);
    return out;
}

}  // namespace

TEST_CASE("stream update") {
    CHECK(stream_update(2, 4, 0.5) == 3);
    CHECK(stream_update(2, 4, 1.0) == 4);
    for (double mu : {0.1, 0.3, 0.9}) CHECK(stream_update(1.7, 1.7, mu) == doctest::Approx(1.7).epsilon(1e-15));
}

TEST_CASE("shifting trend") {
    std::vector<double> g{0.5, -1.0, 2.0};
    std::vector<std::vector<double>> cells(6, g);  // K=2, E=3
    auto beta = grouping::period_weights(3, 0.2);
    auto tr = shifting_trend(cells, beta, 2);
    const double sb = beta[0] + beta[1] + beta[2];
    for (std::size_t t = 0; t < 3; ++t) CHECK(tr[t] == doctest::Approx(2 * sb * g[t]).epsilon(1e-14));

    auto one = shifting_trend({{1, 0}, {0, 1}}, grouping::period_weights(2, 0.0), 1);
    CHECK(one == std::vector<double>{1, 1});

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<std::vector<double>> rc(3 * 4, std::vector<double>(7));
    for (auto& c : rc)
        for (auto& v : c) v = u(rng);
    std::vector<double> b{0.3, 1.1, 2.0, 0.7};
    auto got = shifting_trend(rc, b, 3);
    for (std::size_t t = 0; t < 7; ++t) {
        double s = 0;
        for (int e = 0; e < 4; ++e)
            for (int i = 0; i < 3; ++i) s += b[static_cast<std::size_t>(e)] * rc[static_cast<std::size_t>(i * 4 + e)][t];
        CHECK(got[t] == doctest::Approx(s).epsilon(1e-13));
    }
    CHECK_THROWS_AS(shifting_trend({{1, 2}, {1}}, std::vector<double>{1, 1}, 1), ConfigError);
}

TEST_CASE("group scores") {
    std::vector<double> L{0.2, 0.7};
    std::vector<std::vector<double>> g{{1, 0}, {0, 2}};
    std::vector<double> trend{3, 4};
    auto c0 = group_scores(L, g, trend, 0.0);
    CHECK(c0 == L);
    auto hand = group_scores(std::vector<double>{0.2}, {{1, 0}}, trend, 0.5);
    CHECK(hand[0] == doctest::Approx(1.6).epsilon(1e-15));
    auto orth = group_scores(std::vector<double>{0.4}, {{4, -3}}, trend, 1.0);
    CHECK(orth[0] == 0.0);
    ScoreOptions norm;
    norm.normalize_gradients = true;
    auto cn = group_scores(L, g, trend, 1.0, norm);
    CHECK(cn[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(cn[1] == doctest::Approx(0.8).epsilon(1e-15));
    auto zero = group_scores(L, {{0, 0}, {0, 2}}, trend, 1.0, norm);
    CHECK(zero[0] == 0.0);
    ScoreOptions no_wc;
    no_wc.worst_case_factor = false;
    auto nw = group_scores(L, g, trend, 0.5, no_wc);
    CHECK(nw[0] == doctest::Approx(1.5).epsilon(1e-15));
    ScoreOptions slice;
    slice.offset = 1;
    auto sl = group_scores(L, g, trend, 1.0, slice);
    CHECK(sl[0] == 0.0);
    CHECK(sl[1] == 8.0);
}

TEST_CASE("weight update closed form and properties") {
    auto w = weight_update(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}, 1.0);
    CHECK(w[0] == doctest::Approx(0.731058578630005).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.268941421369995).epsilon(1e-12));
    std::vector<double> w0{0.2, 0.3, 0.5};
    CHECK(weight_update(w0, std::vector<double>{3, -1, 2}, 0.0) == w0);
    auto same = weight_update(w0, std::vector<double>{1.5, 1.5, 1.5}, 0.7);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == doctest::Approx(w0[i]).epsilon(1e-15));
    // huge scores do not overflow; shifting all scores changes nothing
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> c{u(rng), u(rng), u(rng), u(rng)}, cs = c;
        const double shift = 1e3 * u(rng) + 700.0;
        for (auto& v : cs) v += shift;
        std::vector<double> wo{0.1, 0.2, 0.3, 0.4};
        auto a = weight_update(wo, c, 0.8), b = weight_update(wo, cs, 0.8);
        double total = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(a[i] >= 0.0);
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
            total += a[i];
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("weight update maximizes the KL-regularized objective") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-2, 2), pos(0.05, 1.0), step(0.05, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 2 + static_cast<std::size_t>(trial % 3);
        std::vector<double> c(k), wo(k);
        double s = 0;
        for (std::size_t i = 0; i < k; ++i) c[i] = u(rng), wo[i] = pos(rng), s += wo[i];
        for (auto& v : wo) v /= s;
        const double eta_w = step(rng);
        auto closed = weight_update(wo, c, eta_w);
        auto num = testing::maximize_on_simplex(c, wo, eta_w);
        CHECK(testing::kl_objective(num, c, wo, eta_w) - testing::kl_objective(closed, c, wo, eta_w) <= 1e-6);
        for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(num[i] - closed[i]) <= 1e-4);
    }
}

TEST_CASE("tdro step matches a hand-unrolled computation") {
    for (auto cw : {CellWeighting::group_mean, CellWeighting::period_share}) {
        auto t = toy(5, 2, 2);
        TdroConfig cfg;
        cfg.num_groups = 2;
        cfg.num_periods = 2;
        cfg.lambda = 0.4;
        cfg.mu = 0.3;
        cfg.eta_w = 0.5;
        cfg.eta = 0.05;
        cfg.ema_decay = 0.9;
        cfg.cell_weighting = cw;
        const std::vector<double> beta{1.5, 2.5};
        auto state = TdroState::initial(2, 2, t.model.num_params());
        // pretend an earlier step left something behind
        state.stream_loss = {0.9, 0.4};
        state.seen = {1, 1};
        state.w = {0.6, 0.4};
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(-0.01, 0.01);
        for (auto& c : state.grad_cell)
            for (auto& v : c) v = u(rng);

        // hand computation
        const auto theta0 = std::vector<double>(t.model.params().begin(), t.model.params().end());
        auto prev = state;
        std::vector<std::vector<double>> gj(2);
        std::vector<double> L(2);
        for (int j = 0; j < 2; ++j) {
            auto idx = members(t.batch, j);
            Batch sub;
            for (auto s : idx) sub.push_back(t.batch[s]);
            gj[j] = loss_gradient(t.model, t.feats, sub);
            const double lj = testing::reference_mean_loss(t.model, t.feats, sub);
            L[j] = (1 - 0.3) * prev.stream_loss[j] + 0.3 * lj;
        }
        auto cells = prev.grad_cell;
        for (int i = 0; i < 2; ++i)
            for (int e = 0; e < 2; ++e) {
                Batch sub;
                for (auto s : members(t.batch, i, e)) sub.push_back(t.batch[s]);
                if (sub.empty()) continue;
                std::size_t in_period = members(t.batch, 0, e).size() + members(t.batch, 1, e).size();
                const double scale =
                    cw == CellWeighting::period_share ? double(sub.size()) / double(in_period) : 1.0;
                auto g = loss_gradient(t.model, t.feats, sub);
                auto& acc = cells[static_cast<std::size_t>(i * 2 + e)];
                for (std::size_t q = 0; q < g.size(); ++q) acc[q] = 0.9 * acc[q] + 0.1 * scale * g[q];
            }
        std::vector<double> trend(theta0.size(), 0.0);
        for (int i = 0; i < 2; ++i)
            for (int e = 0; e < 2; ++e)
                for (std::size_t q = 0; q < trend.size(); ++q)
                    trend[q] += beta[static_cast<std::size_t>(e)] * cells[static_cast<std::size_t>(i * 2 + e)][q];
        std::vector<double> c(2), w(2);
        for (int j = 0; j < 2; ++j) c[j] = 0.6 * L[j] + 0.4 * dot(gj[j], trend);
        const double z = prev.w[0] * std::exp(0.5 * c[0]) + prev.w[1] * std::exp(0.5 * c[1]);
        for (int j = 0; j < 2; ++j) w[j] = prev.w[j] * std::exp(0.5 * c[j]) / z;
        std::vector<double> theta1(theta0.size());
        for (std::size_t q = 0; q < theta0.size(); ++q) theta1[q] = theta0[q] - 0.05 * (w[0] * gj[0][q] + w[1] * gj[1][q]);

        tdro_step(t.model, t.feats, t.batch, state, cfg, beta);
        for (int j = 0; j < 2; ++j) {
            CHECK(state.stream_loss[j] == doctest::Approx(L[j]).epsilon(1e-12));
            CHECK(state.w[j] == doctest::Approx(w[j]).epsilon(1e-10));
        }
        for (std::size_t q = 0; q < theta0.size(); ++q)
            CHECK(t.model.params()[q] == doctest::Approx(theta1[q]).epsilon(1e-10).scale(1e-12));
        CHECK(state.step == 1);
    }
}

TEST_CASE("absent groups keep their streaming loss; absent cells keep their EMA") {
    auto t = toy(8, 3, 2);
    for (auto& s : t.batch) s.group = s.group == 2 ? 0 : s.group;  // group 2 absent
    for (auto& s : t.batch) s.period = 0;                           // period 1 absent
    TdroConfig cfg;
    cfg.num_groups = 3;
    cfg.num_periods = 2;
    auto state = TdroState::initial(3, 2, t.model.num_params());
    state.stream_loss[2] = 0.123;
    state.seen[2] = 1;
    state.grad_cell[2 * 2 + 1].assign(t.model.num_params(), 0.5);
    state.grad_cell[0 * 2 + 1].assign(t.model.num_params(), 0.25);
    tdro_step(t.model, t.feats, t.batch, state, cfg, std::vector<double>{1, 2});
    CHECK(state.stream_loss[2] == 0.123);
    CHECK(state.grad_cell[2 * 2 + 1][0] == 0.5);
    CHECK(state.grad_cell[0 * 2 + 1][0] == 0.25);
}

TEST_CASE("first observation initializes the streaming loss") {
    auto t = toy(9, 1, 1);
    TdroConfig cfg;
    cfg.num_groups = 1;
    cfg.num_periods = 1;
    auto state = TdroState::initial(1, 1, t.model.num_params());
    const double l = loss(t.model, t.feats, t.batch).mean;
    tdro_step(t.model, t.feats, t.batch, state, cfg, std::vector<double>{1});
    CHECK(state.stream_loss[0] == l);
}

TEST_CASE("K=1 reduces tdro and group_dro to erm exactly") {
    for (auto mode : {Mode::tdro, Mode::group_dro, Mode::sdro}) {
        auto t = toy(11, 1, 3);
        Model erm = t.model, other = t.model;
        TdroConfig cfg;
        cfg.num_groups = 1;
        cfg.num_periods = 3;
        cfg.eta = 0.5;
        cfg.mode = mode;
        TdroConfig ecfg = cfg;
        ecfg.mode = Mode::erm;
        auto s1 = TdroState::initial(1, 3, erm.num_params()), s2 = s1;
        const auto beta = grouping::period_weights(3, 0.2);
        for (int it = 0; it < 5; ++it) {
            step(erm, t.feats, t.batch, s1, ecfg, beta);
            step(other, t.feats, t.batch, s2, cfg, beta);
            CHECK(s2.w[0] == 1.0);
        }
        CHECK(erm.params()[0] == other.params()[0]);
        CHECK(erm == other);
        CHECK(s1.stream_loss == s2.stream_loss);
    }
}

TEST_CASE("lambda=0 reduces tdro to sdro exactly") {
    auto t = toy(12, 3, 2, 40);
    Model a = t.model, b = t.model;
    TdroConfig cfg;
    cfg.num_groups = 3;
    cfg.num_periods = 2;
    cfg.lambda = 0.0;
    cfg.eta = 0.3;
    TdroConfig scfg = cfg;
    scfg.mode = Mode::sdro;
    auto sa = TdroState::initial(3, 2, a.num_params()), sb = sa;
    for (int it = 0; it < 5; ++it) {
        tdro_step(a, t.feats, t.batch, sa, cfg, std::vector<double>{1, 3});
        sdro_step(b, t.feats, t.batch, sb, scfg);
    }
    CHECK(a == b);
    CHECK(sa.w == sb.w);
    CHECK(sa.stream_loss == sb.stream_loss);
}

TEST_CASE("group dro descends on the worst streaming group only") {
    auto t = toy(13, 2, 1);
    TdroConfig cfg;
    cfg.num_groups = 2;
    cfg.num_periods = 1;
    cfg.mu = 1.0;
    cfg.eta = 0.1;
    // make group 1's loss larger by moving its positives' embeddings
    auto state = TdroState::initial(2, 1, t.model.num_params());
    auto losses = loss(t.model, t.feats, t.batch);
    auto g0 = members(t.batch, 0), g1 = members(t.batch, 1);
    double l0 = 0, l1 = 0;
    for (auto s : g0) l0 += losses.per_sample[s];
    for (auto s : g1) l1 += losses.per_sample[s];
    l0 /= double(g0.size()), l1 /= double(g1.size());
    const int worst = l1 > l0 ? 1 : 0;
    Batch sub;
    for (auto s : (worst ? g1 : g0)) sub.push_back(t.batch[s]);
    auto g = loss_gradient(t.model, t.feats, sub);
    std::vector<double> expect(t.model.params().begin(), t.model.params().end());
    for (std::size_t q = 0; q < expect.size(); ++q) expect[q] -= 0.1 * g[q];
    auto st = group_dro_step(t.model, t.feats, t.batch, state, cfg);
    CHECK(st.selected_group == worst);
    CHECK(state.w[static_cast<std::size_t>(worst)] == 1.0);
    CHECK(std::vector<double>(t.model.params().begin(), t.model.params().end()) == expect);

    // ties go to the lowest index
    auto t2 = toy(14, 2, 1);
    auto s2 = TdroState::initial(2, 1, t2.model.num_params());
    s2.stream_loss = {0.5, 0.5};
    s2.seen = {1, 1};
    TdroConfig tie = cfg;
    tie.mu = 1e-300;  // keeps the estimates at their (equal) previous values
    CHECK(group_dro_step(t2.model, t2.feats, t2.batch, s2, tie).selected_group == 0);
}

TEST_CASE("erm step: zero gradient is a fixed point, small steps descend") {
    std::vector<ItemId> warm{0, 1};
    Model m(ModelShape{2, 2, 2, 1, 2}, warm, 0.5, 0.0);
    ItemFeatures feats(2, 2);
    Batch b{{0, 0, 1, 0, 0}};
    TdroConfig cfg;
    cfg.eta = 1.0;
    auto before = m;
    erm_step(m, feats, b, cfg);
    CHECK(m == before);

    std::mt19937_64 rng(15);
    cfg.eta = 1e-4;
    for (int trial = 0; trial < 20; ++trial) {
        auto t = toy(100 + trial, 1, 1);
        const double l0 = loss(t.model, t.feats, t.batch).mean;
        erm_step(t.model, t.feats, t.batch, cfg);
        CHECK(loss(t.model, t.feats, t.batch).mean <= l0);
    }
}

TEST_CASE("config validation") {
    TdroConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = [](auto mutate) {
        TdroConfig x;
        mutate(x);
        CHECK_THROWS_AS(x.validate(), ConfigError);
    };
    bad([](TdroConfig& x) { x.lambda = 1.5; });
    bad([](TdroConfig& x) { x.mu = 0.0; });
    bad([](TdroConfig& x) { x.eta = 0.0; });
    bad([](TdroConfig& x) { x.eta_w = -1.0; });
    bad([](TdroConfig& x) { x.ema_decay = 1.0; });
    bad([](TdroConfig& x) { x.num_groups = 0; });
    bad([](TdroConfig& x) { x.p = -0.1; });
    CHECK(parse_mode("dro") == Mode::group_dro);
    CHECK(std::string(to_string(Mode::group_dro)) == "dro");
    CHECK_THROWS_AS(parse_mode("adam"), ConfigError);
}

namespace {

struct Run {
    Dataset ds;
    SplitDataset sp;
    grouping::GroupPeriodIndex idx;
    Model init;
};

Run small_run(int k, int e, std::size_t users = 40, std::size_t items = 120, std::size_t per_period = 300) {
    synth::SynthConfig sc;
    sc.num_users = users;
    sc.num_items = items;
    sc.periods = 5;
    sc.interactions_per_period = per_period;
    sc.seed = 4;
    auto gen = synth::generate(sc);
    Run r{gen.dataset, chronological_split(gen.dataset), {}, {}};
    grouping::IndexOptions io;
    io.num_groups = k;
    io.num_periods = e;
    io.seed = 4;
    r.idx = grouping::build_index(r.ds, r.sp, io);
    r.init = Model(ModelShape{8, 8, r.ds.features.dim(), r.ds.num_users, r.ds.num_items}, r.sp.warm_items);
    r.init.init_uniform(4, 0.3);
    return r;
}

}  // namespace

TEST_CASE("train: zero epochs, determinism, invariants, resume") {
    auto r = small_run(3, 3);
    TdroConfig cfg;
    cfg.eta = 0.5;
    TrainOptions opt;
    opt.batch_size = 64;
    opt.seed = 9;
    opt.epochs = 0;
    auto none = train(r.ds, r.sp, r.idx, r.init, cfg, opt);
    CHECK(none.best == r.init);
    CHECK(none.last == r.init);
    CHECK(none.log.empty());

    opt.epochs = 3;
    opt.check_invariants = true;
    auto a = train(r.ds, r.sp, r.idx, r.init, cfg, opt);
    auto b = train(r.ds, r.sp, r.idx, r.init, cfg, opt);
    CHECK(a.last == b.last);
    CHECK(a.state == b.state);
    CHECK(a.invariant_checks > 0);
    REQUIRE(a.log.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(log_csv_row_deterministic(a.log[i]) == log_csv_row_deterministic(b.log[i]));

    // two epochs, then one resumed epoch, equals three straight epochs
    opt.epochs = 2;
    auto first = train(r.ds, r.sp, r.idx, r.init, cfg, opt);
    auto dir = testing::temp_dir("state");
    save_state(dir / "s.bin", first.state);
    auto restored = load_state(dir / "s.bin");
    CHECK(restored == first.state);
    opt.epochs = 1;
    opt.start_epoch = 2;
    auto rest = train(r.ds, r.sp, r.idx, first.last, cfg, opt, &restored);
    CHECK(rest.last == a.last);
    CHECK(rest.state == a.state);

    // a state for a different K is rejected
    auto other = TdroState::initial(2, 3, r.init.num_params());
    CHECK_THROWS_AS(train(r.ds, r.sp, r.idx, r.init, cfg, opt, &other), ConfigError);
}

TEST_CASE("train improves validation recall over the initial model on shifted data") {
    auto r = small_run(4, 3, 150, 400, 1500);
    TdroConfig cfg;
    cfg.num_groups = 4;
    cfg.eta = 3.0;
    TrainOptions opt;
    opt.batch_size = 64;
    opt.epochs = 30;
    opt.seed = 1;
    opt.k_metric = 20;
    auto res = train(r.ds, r.sp, r.idx, r.init, cfg, opt);
    auto init_recall =
        eval::full_rank_metrics(r.init, r.ds, r.sp, r.sp.valid, eval::Setting::all, eval::EvalOptions{}).recall;
    CHECK(res.best_recall >= init_recall);
    REQUIRE(res.best_epoch >= 0);
    CHECK(res.best_recall == res.log[static_cast<std::size_t>(res.best_epoch)].val_recall);
}

TEST_CASE("log format") {
    EpochLog row;
    row.epoch = 2;
    row.mode = Mode::tdro;
    row.train_loss = 0.5;
    row.stream_loss = {0.25, 0.75};
    row.weights = {0.4, 0.6};
    row.val_recall = 0.125;
    row.wall_ms = 3.0;
    CHECK(log_csv_header(2) == "epoch,mode,train_loss,loss_g0,loss_g1,w_g0,w_g1,val_recall@20,wall_ms");
    CHECK(log_csv_row(row) == "2,tdro,0.5,0.25,0.75,0.4,0.6,0.125,3.0");
    CHECK(log_csv_row_deterministic(row) == "2,0.5,0.25,0.75,0.4,0.6,0.125");
}
