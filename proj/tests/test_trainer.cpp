#include <doctest.h>

#include <cmath>

#include "tom/trainer.hpp"

using namespace tom;

namespace {

Dataset linear_stateless_dataset(uint64_t seed, int machines, int ticks) {
    Dataset ds;
    ds.fleet_seed = seed;
    ds.fleet = spawn_fleet(seed, {{MachineClass::STATELESS, machines}});
    for (auto& spec : ds.fleet) std::get<StatelessParams>(spec.params).linear = true;
    ds.excitation = {0.1, 0.05, ticks};
    for (const auto& spec : ds.fleet) {
        Machine m(spec);
        ds.trajectories.push_back(
            roll(m, excite(mix_seed({seed, static_cast<uint64_t>(spec.machine_id), kExciteSalt}),
                           ticks, 0.1, 0.05)));
    }
    if (machines == 1) {
        ds.split.train_ids = {0};
    } else {
        ds.split = split_fleet(ds.fleet, machines - 1, 1, seed);
    }
    return ds;
}

// Head that reproduces o = 2 W u exactly; everything else zero.
Model exact_linear_model(const StatelessParams& p) {
    Model m = Model::make(ModelDims{4});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.params[m.head_w].value.at(i, 8 + j) = 2.0 * p.w[i * 3 + j];
    return m;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamBlock block;
    block.add("p", 3);
    block[0].value[0] = 1.5;
    block[0].value[1] = -2.5;
    AdamState st;
    adam_step(block, st, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(block[0].value[0] == 1.5);
    CHECK(block[0].value[1] == -2.5);
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves by ~ -lr * sign(g)") {
    ParamBlock block;
    block.add("p", 2);
    block[0].grad[0] = 3.7;
    block[0].grad[1] = -0.004;
    AdamState st;
    adam_step(block, st, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(block[0].value[0] == doctest::Approx(-1e-3).epsilon(1e-4));
    CHECK(block[0].value[1] == doctest::Approx(1e-3).epsilon(1e-2));
}

TEST_CASE("adam: matches the written-out recurrence on 5 coordinates") {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    SplitMix64 rng(55);
    ParamBlock block;
    block.add("p", 5);
    Vec ref(5), m(5, 0.0), v(5, 0.0);
    for (int i = 0; i < 5; ++i) {
        block[0].value[static_cast<size_t>(i)] = rng.symmetric();
        ref[static_cast<size_t>(i)] = block[0].value[static_cast<size_t>(i)];
    }
    AdamState st;
    for (int step = 1; step <= 7; ++step) {
        Vec g(5);
        for (int i = 0; i < 5; ++i) {
            g[static_cast<size_t>(i)] = rng.symmetric();
            block[0].grad[static_cast<size_t>(i)] = g[static_cast<size_t>(i)];
        }
        adam_step(block, st, lr, b1, b2, eps);
        for (int i = 0; i < 5; ++i) {
            const size_t k = static_cast<size_t>(i);
            m[k] = b1 * m[k] + (1 - b1) * g[k];
            v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
            const double mhat = m[k] / (1 - std::pow(b1, step));
            const double vhat = v[k] / (1 - std::pow(b2, step));
            ref[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            CHECK(std::fabs(block[0].value[k] - ref[k]) < 1e-15);
        }
    }
}

TEST_CASE("adam: non-finite gradient aborts") {
    ParamBlock block;
    block.add("p", 1);
    block[0].grad[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState st;
    CHECK_THROWS(adam_step(block, st, 1e-3, 0.9, 0.999, 1e-8));
}

TEST_CASE("train: epochs=0 returns the initial model") {
    const Dataset ds = linear_stateless_dataset(3, 1, 60);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seq_len = 10;
    cfg.stride = 5;
    cfg.embed_dim = 4;
    cfg.seed = 9;
    auto res = train(cfg, ds);
    CHECK(res.metrics.epoch_train_mse.empty());
    Model fresh = init_model(ModelDims{4}, mix_seed({9ULL, 0x0DE1ULL}));
    for (size_t k = 0; k < fresh.params.coord_count(); ++k)
        CHECK(res.model.params.coord(k) == fresh.params.coord(k));
}

TEST_CASE("train: deterministic and improving on a small config") {
    const Dataset ds = linear_stateless_dataset(7, 2, 300);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seq_len = 20;
    cfg.stride = 10;
    cfg.embed_dim = 4;
    cfg.batch_size = 8;
    cfg.seed = 11;
    auto a = train(cfg, ds);
    auto b = train(cfg, ds);
    CHECK(a.metrics.epoch_train_mse == b.metrics.epoch_train_mse);
    for (size_t k = 0; k < a.model.params.coord_count(); ++k)
        CHECK(a.model.params.coord(k) == b.model.params.coord(k));
    CHECK(a.metrics.epoch_train_mse.back() < a.metrics.epoch_train_mse.front());
}

TEST_CASE("train: empty train split rejected") {
    Dataset ds = linear_stateless_dataset(3, 1, 60);
    ds.split.train_ids.clear();
    TrainConfig cfg;
    CHECK_THROWS_AS(train(cfg, ds), DataError);
}

TEST_CASE("evaluate: exact predictor scores ~0 on the linear machine") {
    const Dataset ds = linear_stateless_dataset(5, 1, 200);
    Model m = exact_linear_model(std::get<StatelessParams>(ds.fleet[0].params));
    const auto metrics = evaluate(m, ds, {0}, 20, 10);
    CHECK(metrics.aggregate < 1e-20);
}

TEST_CASE("evaluate: aggregate is the window-weighted mean; eval is pure") {
    const Dataset ds = linear_stateless_dataset(13, 3, 150);
    Model m = init_model(ModelDims{4}, 3);
    std::vector<int> ids;
    for (const auto& s : ds.fleet) ids.push_back(s.machine_id);
    const auto m1 = evaluate(m, ds, ids, 20, 7);
    const auto m2 = evaluate(m, ds, ids, 20, 7);
    CHECK(m1.aggregate == m2.aggregate);

    double weighted = 0;
    long windows = 0;
    for (const auto& pm : m1.per_machine) {
        weighted += pm.mse * pm.windows;
        windows += pm.windows;
    }
    CHECK(std::fabs(m1.aggregate - weighted / static_cast<double>(windows)) < 1e-12);

    CHECK_THROWS_AS(evaluate(m, ds, {}, 20, 7), DataError);
}

TEST_CASE("metrics file: written without wall time, deterministic") {
    Metrics m;
    m.epoch_train_mse = {0.5, 0.25};
    m.per_machine = {{0, 0.1, 10}, {1, 0.2, 12}};
    m.aggregate = 0.1545;
    m.wall_seconds = 123.0;
    const auto dir = std::filesystem::temp_directory_path() / "tom_tests";
    std::filesystem::create_directories(dir);
    write_metrics(m, dir / "metrics_a.json");
    write_metrics(m, dir / "metrics_b.json");
    std::ifstream a(dir / "metrics_a.json"), b(dir / "metrics_b.json");
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(sa.find("wall") == std::string::npos);
    CHECK(sa.find("0.1545") != std::string::npos);
}
