#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tom/analysis.hpp"
#include "tom/trainer.hpp"

namespace tom {

// One-call dataset construction: fleet, excitation, rollout, split.
struct GenConfig {
    std::map<MachineClass, int> counts;
    int ticks = 4000;
    double alpha = 0.1;
    double sigma = 0.05;
    int train_count = -1;  // -1: every machine goes to the train split
    int test_count = 0;
    uint64_t fleet_seed = 0;
    int threads = 1;
    bool stateless_linear = false;  // drop the tanh on STATELESS machines
};

inline Dataset build_dataset(const GenConfig& cfg) {
    if (cfg.ticks < 2) throw ValidationError("ticks must be >= 2");
    if (cfg.threads < 1) throw ValidationError("threads must be >= 1");
    Dataset ds;
    ds.fleet_seed = cfg.fleet_seed;
    ds.excitation = {cfg.alpha, cfg.sigma, cfg.ticks};
    ds.fleet = spawn_fleet(cfg.fleet_seed, cfg.counts);
    if (cfg.stateless_linear)
        for (auto& spec : ds.fleet)
            if (auto* sp = std::get_if<StatelessParams>(&spec.params)) sp->linear = true;

    ds.trajectories.resize(ds.fleet.size());
    auto roll_one = [&](size_t i) {
        const auto& spec = ds.fleet[i];
        Machine m(spec);
        ds.trajectories[i] = roll(
            m, excite(mix_seed({cfg.fleet_seed, static_cast<uint64_t>(spec.machine_id),
                                kExciteSalt}),
                      cfg.ticks, cfg.alpha, cfg.sigma));
    };
    const int nthreads = std::min<int>(cfg.threads, static_cast<int>(ds.fleet.size()));
    if (nthreads <= 1) {
        for (size_t i = 0; i < ds.fleet.size(); ++i) roll_one(i);
    } else {
        // static interleaved partition; slot i is written by exactly one thread,
        // so the merged result is independent of the thread count
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&, t] {
                for (size_t i = static_cast<size_t>(t); i < ds.fleet.size();
                     i += static_cast<size_t>(nthreads))
                    roll_one(i);
            });
        for (auto& th : pool) th.join();
    }

    if (cfg.train_count < 0) {
        for (const auto& spec : ds.fleet) ds.split.train_ids.push_back(spec.machine_id);
    } else {
        ds.split = split_fleet(ds.fleet, cfg.train_count, cfg.test_count, cfg.fleet_seed);
    }
    return ds;
}

// Finite-difference audit of window_loss on a synthetic window; shared by
// the gradcheck subcommand and acceptance criterion 1.
inline GradCheckResult gradcheck_window_loss(uint64_t seed, int embed_dim, int seq_len) {
    Model model = init_model(ModelDims{embed_dim}, seed);
    SplitMix64 rng(mix_seed({seed, 0x6ADCULL}));
    Trajectory traj;
    traj.machine_id = 0;
    for (int t = 0; t < seq_len + 2; ++t) {
        IOPair p;
        p.t = t;
        p.input = {0.2 * rng.symmetric(), 0.2 * rng.symmetric(), 0.2 * rng.symmetric()};
        p.output = {rng.symmetric(), rng.symmetric(), rng.symmetric()};
        traj.pairs.push_back(p);
    }
    Window w;
    w.machine_id = 0;
    w.pairs = traj.pairs.data();
    w.n = seq_len;
    w.start = 0;
    w.next_input = traj.pairs[static_cast<size_t>(seq_len)].input;
    w.next_output = traj.pairs[static_cast<size_t>(seq_len)].output;
    Vec m_prev(static_cast<size_t>(embed_dim));
    for (double& v : m_prev) v = rng.symmetric();

    auto loss_fn = [&](ParamBlock& p, bool fill) {
        Model probe = Model::make(ModelDims{embed_dim});
        probe.params = p;
        auto r = window_loss(probe, w, m_prev, fill);
        if (fill) p = probe.params;
        return r.loss;
    };
    return finite_diff_check(loss_fn, model.params, 1e-5);
}

// PCA artifact: explained fractions, basis, projections.
inline void write_pca(const Pca3Result& res, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "{\"explained\":[" << fmt_double(res.explained[0]) << ','
       << fmt_double(res.explained[1]) << ',' << fmt_double(res.explained[2]) << "],\"basis\":[";
    for (int c = 0; c < 3; ++c) {
        if (c) os << ',';
        detail::emit_double_array(os, res.basis[static_cast<size_t>(c)].data(),
                                  res.basis[static_cast<size_t>(c)].size());
    }
    os << "],\"projections\":[";
    for (size_t i = 0; i < res.projections.size(); ++i) {
        const auto& p = res.projections[i];
        if (i) os << ',';
        os << "{\"machine_id\":" << p.machine_id << ",\"coords\":[" << fmt_double(p.coords[0])
           << ',' << fmt_double(p.coords[1]) << ',' << fmt_double(p.coords[2]) << "]}";
    }
    os << "]}\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << os.str();
}

inline Pca3Result read_pca(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    Pca3Result res;
    for (int c = 0; c < 3; ++c) {
        res.explained[c] = j.at("explained").at(c).get<double>();
        res.basis.push_back(j.at("basis").at(static_cast<size_t>(c)).get<Vec>());
    }
    for (const auto& jp : j.at("projections")) {
        Projection p;
        p.machine_id = jp.at("machine_id").get<int>();
        for (int c = 0; c < 3; ++c) p.coords[c] = jp.at("coords").at(c).get<double>();
        res.projections.push_back(p);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Acceptance pipeline
// ---------------------------------------------------------------------------

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline double normalized_test_mse(const Metrics& test_metrics, const Dataset& ds, int seq_len,
                                  int stride) {
    // pooled per-component variance of the prediction targets on the test split
    double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
    long count = 0;
    for (int id : ds.split.test_ids)
        for (const Window& w : make_windows(ds.traj_of(id), seq_len, stride)) {
            const double o[3] = {w.next_output.dx, w.next_output.dy, w.next_output.dz};
            for (int c = 0; c < 3; ++c) {
                sum[c] += o[c];
                sumsq[c] += o[c] * o[c];
            }
            ++count;
        }
    if (count < 2) throw DataError("normalized_test_mse: not enough test windows");
    double var = 0;
    for (int c = 0; c < 3; ++c) {
        const double mean = sum[c] / static_cast<double>(count);
        var += sumsq[c] / static_cast<double>(count) - mean * mean;
    }
    var /= 3.0;
    if (!(var > 0)) throw DataError("normalized_test_mse: degenerate target variance");
    return test_metrics.aggregate / var;
}

inline std::string files_digest(const std::filesystem::path& dir) {
    // order-stable concatenated FNV-1a over every regular file under dir
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::ostringstream os;
    for (const auto& p : files) {
        std::ifstream f(p, std::ios::binary);
        uint64_t h = 1469598103934665603ULL;
        char c;
        while (f.get(c)) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        os << std::filesystem::relative(p, dir).generic_string() << ':' << h << '\n';
    }
    return os.str();
}

}  // namespace detail

// Runs every acceptance criterion, writing artifacts under out_dir.
// Progress goes to `log`; one CriterionResult per criterion comes back.
inline std::vector<CriterionResult> run_acceptance(const std::filesystem::path& out_dir,
                                                   uint64_t master_seed, std::ostream& log,
                                                   int threads = 1) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<CriterionResult> results;
    auto record = [&](int id, std::string name, bool pass, std::string detail) {
        log << "criterion " << id << " (" << name << "): " << (pass ? "PASS" : "FAIL") << " — "
            << detail << '\n';
        results.push_back({id, std::move(name), pass, std::move(detail)});
    };
    auto seed_for = [&](uint64_t salt) { return mix_seed({master_seed, salt}); };

    // 1. gradient fidelity
    {
        const auto res = gradcheck_window_loss(7, 4, 8);
        record(1, "gradient fidelity", res.max_rel_err < 1e-5,
               "max_rel_err=" + fmt_double(res.max_rel_err) + " at coordinate " +
                   std::to_string(res.worst_coord));
    }

    // 2. linear oracle exactness
    {
        GenConfig gc;
        gc.counts = {{MachineClass::STATELESS, 1}};
        gc.ticks = 8000;
        gc.alpha = 1.0;  // white-noise excitation decorrelates encoder features from next_input
        gc.fleet_seed = seed_for(2);
        gc.stateless_linear = true;
        const Dataset ds = build_dataset(gc);
        TrainConfig tc;
        tc.epochs = 500;
        log << "training linear-oracle model (500 epochs)...\n";
        tc.seed = seed_for(0x22);
        const auto res = train(tc, ds);
        double best = std::numeric_limits<double>::infinity();
        int best_epoch = -1;
        for (size_t e = 0; e < res.metrics.epoch_train_mse.size(); ++e)
            if (res.metrics.epoch_train_mse[e] < best) {
                best = res.metrics.epoch_train_mse[e];
                best_epoch = static_cast<int>(e) + 1;
            }
        record(2, "linear oracle exactness", best <= 1e-5,
               "best train MSE " + fmt_double(best) + " at epoch " + std::to_string(best_epoch));
    }

    // 3. embedding necessity on an LTI fleet
    {
        GenConfig gc;
        gc.counts = {{MachineClass::LTI, 4}};
        gc.ticks = 1500;
        gc.fleet_seed = seed_for(3);
        const Dataset ds = build_dataset(gc);
        TrainConfig tc;
        tc.epochs = 15;
        tc.seed = seed_for(0x33);
        auto full = train(tc, ds);
        tc.zero_embeddings = true;
        auto zeroed = train(tc, ds);
        const double f =
            evaluate(full.model, ds, ds.split.train_ids, tc.seq_len, tc.stride).aggregate;
        const double z = evaluate(zeroed.model, ds, ds.split.train_ids, tc.seq_len, tc.stride,
                                  /*zero_embeddings=*/true)
                             .aggregate;
        record(3, "embedding necessity", f <= 0.8 * z,
               "full train MSE " + fmt_double(f) + " vs zeroed " + fmt_double(z));
    }

    // 4-7 share one paper-analog run: 16 vehicles, 4000 ticks, 12/4 split.
    const fs::path run_dir = out_dir / "paper_analog";
    fs::create_directories(run_dir);
    GenConfig gc4;
    gc4.counts = {{MachineClass::SUV, 4},
                  {MachineClass::TRACK, 4},
                  {MachineClass::SPORT, 4},
                  {MachineClass::GT, 4}};
    gc4.ticks = 4000;
    gc4.train_count = 12;
    gc4.test_count = 4;
    gc4.fleet_seed = seed_for(0x46);
    gc4.threads = threads;
    log << "building paper-analog dataset (16 vehicles x 4000 ticks)...\n";
    const Dataset ds4 = build_dataset(gc4);
    write_dataset(ds4, run_dir / "dataset");
    TrainConfig tc4;
    tc4.seed = seed_for(0x44);
    log << "training paper-analog model (30 epochs)...\n";
    auto full4 = train(tc4, ds4);
    save_model(full4.model, run_dir / "model.json");
    const auto train_m = evaluate(full4.model, ds4, ds4.split.train_ids, tc4.seq_len, tc4.stride);
    const auto test_m = evaluate(full4.model, ds4, ds4.split.test_ids, tc4.seq_len, tc4.stride);
    write_metrics(train_m, run_dir / "metrics_train.json");
    write_metrics(test_m, run_dir / "metrics_test.json");
    {
        const double norm =
            detail::normalized_test_mse(test_m, ds4, tc4.seq_len, tc4.stride);
        const bool a = norm < 0.05;
        const bool b = test_m.aggregate <= 3.0 * train_m.aggregate;
        record(4, "paper-analog generalization", a && b,
               "normalized test MSE " + fmt_double(norm) + ", test/train ratio " +
                   fmt_double(test_m.aggregate / train_m.aggregate));
    }

    // 5/6. embedding structure + nuisance rejection.
    // Embeddings come from a deterministic probe rollout of the same fleet
    // (no excitation noise: a pure throttle ramp with heading pinned at zero),
    // so class character is not drowned by the heading diffusion that free
    // random steering induces over a long noisy trajectory.
    GenConfig probe_cfg = gc4;
    probe_cfg.ticks = 300;
    probe_cfg.sigma = 0.0;
    probe_cfg.train_count = -1;
    probe_cfg.test_count = 0;
    const Dataset probe = build_dataset(probe_cfg);
    write_dataset(probe, run_dir / "probe");
    const auto records = embed_fleet(full4.model, probe, tc4.seq_len, 8, seed_for(0x55));
    write_embeddings(records, run_dir / "embeddings.csv");
    {
        const auto pca = pca3(records);
        write_pca(pca, run_dir / "pca.json");
        emit_scatter(pca.projections, records, "class", run_dir / "scatter_class.svg",
                     run_dir / "table_class.csv");
        emit_scatter(pca.projections, records, "year-bucket", run_dir / "scatter_year.svg",
                     run_dir / "table_year.csv");

        std::vector<EmbeddingRecord> two;
        for (const auto& r : records)
            if (r.class_tag == "SUV" || r.class_tag == "TRACK") two.push_back(r);
        const double s2 = silhouette(two, [](const EmbeddingRecord& r) { return r.class_tag; });
        const double s4 =
            silhouette(records, [](const EmbeddingRecord& r) { return r.class_tag; });
        record(5, "embedding structure", s2 >= 0.2 && s4 >= 0.05,
               "silhouette SUV/TRACK " + fmt_double(s2) + ", 4-class " + fmt_double(s4));

        const double sy =
            silhouette(records, [](const EmbeddingRecord& r) { return r.year_bucket; });
        record(6, "nuisance rejection", sy >= -0.1 && sy <= 0.1,
               "year-bucket silhouette " + fmt_double(sy));
    }

    // 7. stateful ablation
    {
        TrainConfig tz = tc4;
        tz.zero_embeddings = true;
        log << "training zero-embedding baseline...\n";
        auto zero4 = train(tz, ds4);
        const double zt = evaluate(zero4.model, ds4, ds4.split.test_ids, tz.seq_len, tz.stride,
                                   /*zero_embeddings=*/true)
                              .aggregate;
        const bool vehicle_ok = test_m.aggregate <= 0.8 * zt;

        GenConfig gs;
        gs.counts = {{MachineClass::STATELESS, 6}};
        gs.ticks = 1500;
        // white noise: with autocorrelated inputs the window predicts next_input,
        // which would reward embeddings on stateless machines for the wrong reason;
        // larger sigma keeps the throttle bias from acting as a per-machine offset
        gs.alpha = 1.0;
        gs.sigma = 0.15;
        gs.train_count = 4;
        gs.test_count = 2;
        gs.fleet_seed = seed_for(7);
        const Dataset dss = build_dataset(gs);
        TrainConfig ts;
        ts.epochs = 15;
        ts.seed = seed_for(0x77);
        auto fs_full = train(ts, dss);
        ts.zero_embeddings = true;
        auto fs_zero = train(ts, dss);
        const double sf =
            evaluate(fs_full.model, dss, dss.split.test_ids, ts.seq_len, ts.stride).aggregate;
        const double sz = evaluate(fs_zero.model, dss, dss.split.test_ids, ts.seq_len, ts.stride,
                                   /*zero_embeddings=*/true)
                              .aggregate;
        const double stateless_gap = (sz - sf) / sz;
        record(7, "stateful ablation", vehicle_ok && stateless_gap < 0.05,
               "vehicle full/zeroed test MSE " + fmt_double(test_m.aggregate) + "/" +
                   fmt_double(zt) + ", stateless gap " + fmt_double(stateless_gap));
    }

    // 8. determinism of the artifact pipeline
    {
        auto run_once = [&](const fs::path& dir) {
            fs::create_directories(dir);
            GenConfig gc;
            gc.counts = {{MachineClass::SUV, 2}, {MachineClass::TRACK, 2}};
            gc.ticks = 800;
            gc.train_count = 2;
            gc.test_count = 2;
            gc.fleet_seed = seed_for(8);
            gc.threads = threads;
            const Dataset ds = build_dataset(gc);
            write_dataset(ds, dir / "dataset");
            TrainConfig tc;
            tc.epochs = 3;
            tc.embed_dim = 8;
            tc.seed = seed_for(0x88);
            auto res = train(tc, ds);
            save_model(res.model, dir / "model.json");
            write_metrics(evaluate(res.model, ds, ds.split.test_ids, tc.seq_len, tc.stride),
                          dir / "metrics.json");
            const auto recs = embed_fleet(res.model, ds, tc.seq_len, 6, seed_for(0x8E));
            write_embeddings(recs, dir / "embeddings.csv");
            const auto pca = pca3(recs);
            write_pca(pca, dir / "pca.json");
            emit_scatter(pca.projections, recs, "class", dir / "scatter.svg", dir / "table.csv");
        };
        log << "running determinism pipeline twice...\n";
        run_once(out_dir / "determinism" / "run1");
        run_once(out_dir / "determinism" / "run2");
        const std::string d1 = detail::files_digest(out_dir / "determinism" / "run1");
        const std::string d2 = detail::files_digest(out_dir / "determinism" / "run2");
        record(8, "determinism", !d1.empty() && d1 == d2,
               d1 == d2 ? "all artifacts byte-identical across reruns"
                        : "artifact digests differ between reruns");
    }

    // 9. PCA properties
    {
        SplitMix64 rng(seed_for(9));
        std::vector<EmbeddingRecord> cloud;
        for (int i = 0; i < 50; ++i) {
            EmbeddingRecord r;
            r.machine_id = i;
            r.class_tag = "SUV";
            r.s.resize(10);
            for (size_t j = 0; j < 10; ++j)
                r.s[j] = rng.symmetric() * (1.0 + static_cast<double>(j));
            cloud.push_back(std::move(r));
        }
        const auto res = pca3(cloud);
        double ortho = 0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double dot = 0;
                for (size_t j = 0; j < 10; ++j)
                    dot += res.basis[static_cast<size_t>(a)][j] *
                           res.basis[static_cast<size_t>(b)][j];
                ortho = std::max(ortho, std::fabs(dot - (a == b ? 1.0 : 0.0)));
            }

        Vec dir(10);
        double norm = 0;
        for (double& v : dir) {
            v = rng.symmetric();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : dir) v /= norm;
        std::vector<EmbeddingRecord> line;
        for (int i = 0; i < 40; ++i) {
            EmbeddingRecord r;
            r.machine_id = i;
            r.class_tag = "SUV";
            const double t = 5.0 * rng.symmetric();
            r.s.resize(10);
            for (size_t j = 0; j < 10; ++j) r.s[j] = 0.25 + t * dir[j];
            line.push_back(std::move(r));
        }
        const auto rank1 = pca3(line);
        double dot = 0;
        for (size_t j = 0; j < 10; ++j) dot += rank1.basis[0][j] * dir[j];
        const double align_err = std::fabs(std::fabs(dot) - 1.0);
        record(9, "PCA properties",
               ortho < 1e-9 && align_err < 1e-6 && rank1.explained[0] > 0.999,
               "orthonormality err " + fmt_double(ortho) + ", rank-1 alignment err " +
                   fmt_double(align_err) + ", explained " + fmt_double(rank1.explained[0]));
    }

    return results;
}

}  // namespace tom
