#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tom/analysis.hpp"

using namespace tom;
namespace fs = std::filesystem;

namespace {

std::vector<EmbeddingRecord> records_from(const std::vector<Vec>& points) {
    std::vector<EmbeddingRecord> recs;
    for (size_t i = 0; i < points.size(); ++i) {
        EmbeddingRecord r;
        r.machine_id = static_cast<int>(i);
        r.class_tag = "SUV";
        r.mass_bucket = "n/a";
        r.year_bucket = "n/a";
        r.s = points[i];
        recs.push_back(std::move(r));
    }
    return recs;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pca3: exact 3D coordinate subspace of e=16") {
    SplitMix64 rng(61);
    std::vector<Vec> pts;
    for (int i = 0; i < 40; ++i) {
        Vec p(16, 0.0);
        p[2] = 3.0 * rng.symmetric();
        p[7] = 2.0 * rng.symmetric();
        p[11] = 1.0 * rng.symmetric();
        pts.push_back(p);
    }
    const auto res = pca3(records_from(pts));
    CHECK(res.explained[0] + res.explained[1] + res.explained[2] ==
          doctest::Approx(1.0).epsilon(1e-9));
    // basis vectors live in the {2, 7, 11} subspace
    for (const auto& v : res.basis)
        for (size_t j = 0; j < v.size(); ++j)
            if (j != 2 && j != 7 && j != 11) CHECK(std::fabs(v[j]) < 1e-6);
}

TEST_CASE("pca3: rank-1 data recovers its direction") {
    SplitMix64 rng(67);
    Vec dir(8);
    double norm = 0;
    for (double& v : dir) {
        v = rng.symmetric();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;

    std::vector<Vec> pts;
    for (int i = 0; i < 30; ++i) {
        const double t = 5.0 * rng.symmetric();
        Vec p(8);
        for (size_t j = 0; j < 8; ++j) p[j] = 0.5 + t * dir[j];
        pts.push_back(p);
    }
    const auto res = pca3(records_from(pts));
    CHECK(res.explained[0] > 0.999);
    double dot = 0;
    for (size_t j = 0; j < 8; ++j) dot += res.basis[0][j] * dir[j];
    CHECK(std::fabs(std::fabs(dot) - 1.0) < 1e-6);
}

TEST_CASE("pca3: isotropic cloud spreads variance roughly evenly") {
    SplitMix64 rng(71);
    std::vector<Vec> pts;
    for (int i = 0; i < 4000; ++i) {
        Vec p(4);
        for (double& v : p) v = rng.symmetric();
        pts.push_back(p);
    }
    const auto res = pca3(records_from(pts));
    CHECK(res.explained[0] <= 1.2 * res.explained[2]);
}

TEST_CASE("pca3: orthonormal basis, contraction, monotone fractions") {
    SplitMix64 rng(73);
    std::vector<Vec> pts;
    for (int i = 0; i < 50; ++i) {
        Vec p(10);
        for (size_t j = 0; j < 10; ++j) p[j] = rng.symmetric() * (1.0 + static_cast<double>(j));
        pts.push_back(p);
    }
    const auto recs = records_from(pts);
    const auto res = pca3(recs);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double dot = 0;
            for (size_t j = 0; j < 10; ++j)
                dot += res.basis[static_cast<size_t>(a)][j] * res.basis[static_cast<size_t>(b)][j];
            CHECK(std::fabs(dot - (a == b ? 1.0 : 0.0)) < 1e-9);
        }
    CHECK(res.explained[0] >= res.explained[1]);
    CHECK(res.explained[1] >= res.explained[2]);
    CHECK(res.explained[0] <= 1.0);

    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j) {
            double d_full = 0, d_proj = 0;
            for (size_t k = 0; k < 10; ++k) {
                const double d = pts[i][k] - pts[j][k];
                d_full += d * d;
            }
            for (int c = 0; c < 3; ++c) {
                const double d = res.projections[i].coords[c] - res.projections[j].coords[c];
                d_proj += d * d;
            }
            CHECK(std::sqrt(d_proj) <= std::sqrt(d_full) + 1e-9);
        }
}

TEST_CASE("pca3: degenerate covariance rejected") {
    std::vector<Vec> pts(6, Vec(5, 1.0));
    CHECK_THROWS_WITH_AS(pca3(records_from(pts)), doctest::Contains("degenerate"), DataError);
}

TEST_CASE("silhouette: two tight, far-apart clusters") {
    std::vector<Vec> pts = {{0, 0}, {0, 0.01}, {100, 0}, {100, 0.01}};
    auto recs = records_from(pts);
    recs[0].class_tag = recs[1].class_tag = "A";
    recs[2].class_tag = recs[3].class_tag = "B";
    const double s = silhouette(recs, [](const EmbeddingRecord& r) { return r.class_tag; });
    CHECK(s > 0.999);
}

TEST_CASE("silhouette: identical points score 0") {
    std::vector<Vec> pts(6, Vec{1.0, 2.0});
    auto recs = records_from(pts);
    for (size_t i = 0; i < recs.size(); ++i) recs[i].class_tag = i % 2 ? "A" : "B";
    CHECK(silhouette(recs, [](const EmbeddingRecord& r) { return r.class_tag; }) == 0.0);
}

TEST_CASE("silhouette: random labels on an isotropic cloud stay near 0") {
    SplitMix64 rng(83);
    std::vector<Vec> pts;
    for (int i = 0; i < 400; ++i) {
        Vec p(6);
        for (double& v : p) v = rng.symmetric();
        pts.push_back(p);
    }
    auto recs = records_from(pts);
    for (auto& r : recs) r.class_tag = rng.next() % 2 ? "A" : "B";
    CHECK(std::fabs(silhouette(recs, [](const EmbeddingRecord& r) { return r.class_tag; })) <
          0.1);
}

TEST_CASE("silhouette: labels with fewer than 2 members are excluded") {
    std::vector<Vec> pts = {{0, 0}, {0, 1}, {5, 5}, {5, 6}, {99, 99}};
    auto recs = records_from(pts);
    recs[0].class_tag = recs[1].class_tag = "A";
    recs[2].class_tag = recs[3].class_tag = "B";
    recs[4].class_tag = "LONER";
    CHECK_NOTHROW(silhouette(recs, [](const EmbeddingRecord& r) { return r.class_tag; }));

    recs[2].class_tag = "C";
    recs[3].class_tag = "D";
    recs[0].class_tag = "E";
    recs[1].class_tag = "F";
    CHECK_THROWS_AS(silhouette(recs, [](const EmbeddingRecord& r) { return r.class_tag; }),
                    DataError);
}

TEST_CASE("emit_scatter: empty input, legend, determinism, bad tag") {
    const fs::path dir = fs::temp_directory_path() / "tom_tests" / "scatter";
    fs::create_directories(dir);

    emit_scatter({}, {}, "class", dir / "empty.svg", dir / "empty.csv");
    const std::string empty = slurp(dir / "empty.svg");
    CHECK(empty.find("<svg") != std::string::npos);
    CHECK(empty.find("<line") != std::string::npos);
    CHECK(slurp(dir / "empty.csv") == "machine_id,pc1,pc2,pc3,class,mass_bucket,year_bucket\n");

    SplitMix64 rng(91);
    std::vector<Vec> pts;
    for (int i = 0; i < 16; ++i) pts.push_back({rng.symmetric(), rng.symmetric(), 0.0});
    auto recs = records_from(pts);
    for (size_t i = 0; i < recs.size(); ++i)
        recs[i].class_tag = class_name(static_cast<MachineClass>(i % 4));
    std::vector<Projection> projs(recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        projs[i].machine_id = recs[i].machine_id;
        projs[i].coords[0] = pts[i][0];
        projs[i].coords[1] = pts[i][1];
    }
    emit_scatter(projs, recs, "class", dir / "a.svg", dir / "a.csv");
    emit_scatter(projs, recs, "class", dir / "b.svg", dir / "b.csv");
    CHECK(slurp(dir / "a.svg") == slurp(dir / "b.svg"));
    const std::string svg = slurp(dir / "a.svg");
    for (const char* label : {"SUV", "HATCH", "SPORT", "GT"})
        CHECK(svg.find(label) != std::string::npos);

    CHECK_THROWS_WITH_AS(emit_scatter(projs, recs, "nope", dir / "x.svg", dir / "x.csv"),
                         doctest::Contains("class"), DataError);
}

TEST_CASE("embed_fleet: counts, determinism, error on short trajectories") {
    Dataset ds;
    ds.fleet_seed = 21;
    ds.fleet = spawn_fleet(21, {{MachineClass::SUV, 2}, {MachineClass::TRACK, 2}});
    for (const auto& spec : ds.fleet) {
        Machine m(spec);
        ds.trajectories.push_back(
            roll(m, excite(mix_seed({ds.fleet_seed, static_cast<uint64_t>(spec.machine_id),
                                     kExciteSalt}),
                           120, 0.1, 0.05)));
    }
    const Model model = init_model(ModelDims{8}, 17);
    const auto recs = embed_fleet(model, ds, 50, 8, 5);
    CHECK(recs.size() == 32);
    const auto recs2 = embed_fleet(model, ds, 50, 8, 5);
    for (size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].s == recs2[i].s);
    CHECK(recs[0].class_tag == "SUV");
    CHECK(recs[0].mass_bucket == "2000-2500");

    CHECK_THROWS_WITH_AS(embed_fleet(model, ds, 200, 1, 5), doctest::Contains("machine 0"),
                         DataError);

    // write/read round trip of the records table
    const fs::path dir = fs::temp_directory_path() / "tom_tests" / "embeds";
    fs::create_directories(dir);
    write_embeddings(recs, dir / "recs.csv");
    const auto rt = read_embeddings(dir / "recs.csv");
    REQUIRE(rt.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        CHECK(rt[i].machine_id == recs[i].machine_id);
        CHECK(rt[i].class_tag == recs[i].class_tag);
        CHECK(rt[i].s == recs[i].s);
    }
}
