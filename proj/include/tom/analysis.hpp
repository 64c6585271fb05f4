#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tom/model.hpp"
#include "tom/trainer.hpp"

namespace tom {

struct EmbeddingRecord {
    int machine_id = -1;
    std::string class_tag;
    std::string mass_bucket;
    std::string year_bucket;
    Vec s;
};

struct Projection {
    int machine_id = -1;
    double coords[3] = {0, 0, 0};
};

struct Pca3Result {
    std::vector<Projection> projections;
    std::vector<Vec> basis;      // 3 orthonormal vectors
    double explained[3] = {0, 0, 0};
};

inline std::string mass_bucket_of(double mass) {
    if (mass < 1000.0) return "600-999";
    if (mass < 1500.0) return "1000-1499";
    if (mass < 2000.0) return "1500-1999";
    return "2000-2500";
}

inline std::string year_bucket_of(int year) {
    if (year < 1980) return "1960-1979";
    if (year < 2000) return "1980-1999";
    return "2000-2020";
}

// One stateful embedding per sampled window; k windows drawn uniformly
// per machine. Tags come from the fleet specs.
inline std::vector<EmbeddingRecord> embed_fleet(const Model& model, const Dataset& dataset,
                                                int seq_len, int samples_per_machine,
                                                uint64_t seed) {
    if (samples_per_machine < 1) throw ValidationError("samples_per_machine must be >= 1");
    std::vector<EmbeddingRecord> records;
    for (const auto& spec : dataset.fleet) {
        const auto windows = make_windows(dataset.traj_of(spec.machine_id), seq_len, 1);
        if (windows.empty())
            throw DataError("machine " + std::to_string(spec.machine_id) +
                            " has no windows of length " + std::to_string(seq_len));
        SplitMix64 rng(mix_seed({seed, static_cast<uint64_t>(spec.machine_id), 0xE3BEDULL}));
        for (int k = 0; k < samples_per_machine; ++k) {
            const auto& w = windows[static_cast<size_t>(rng.next() % windows.size())];
            EmbeddingRecord rec;
            rec.machine_id = spec.machine_id;
            rec.class_tag = class_name(spec.cls);
            if (const auto* vp = std::get_if<VehicleParams>(&spec.params)) {
                rec.mass_bucket = mass_bucket_of(vp->mass);
                rec.year_bucket = year_bucket_of(vp->year);
            } else {
                rec.mass_bucket = "n/a";
                rec.year_bucket = "n/a";
            }
            rec.s = encode_window(model, w);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// Top-3 principal components of the mean-centered covariance by power
// iteration with deflation. Sign convention: the largest-magnitude
// component of each basis vector is positive.
inline Pca3Result pca3(const std::vector<EmbeddingRecord>& records) {
    const size_t n = records.size();
    if (n < 4) throw DataError("pca3: need at least 4 records");
    const size_t e = records[0].s.size();
    if (e < 3) throw DataError("pca3: embedding dimension must be >= 3");

    Vec mean(e, 0.0);
    for (const auto& r : records)
        for (size_t j = 0; j < e; ++j) mean[j] += r.s[j];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<Vec> centered(n, Vec(e));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < e; ++j) centered[i][j] = records[i].s[j] - mean[j];

    std::vector<Vec> cov(e, Vec(e, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t a = 0; a < e; ++a)
            for (size_t b = 0; b < e; ++b) cov[a][b] += centered[i][a] * centered[i][b];
    for (auto& row : cov)
        for (double& x : row) x /= static_cast<double>(n - 1);

    double trace = 0.0;
    for (size_t a = 0; a < e; ++a) trace += cov[a][a];
    if (!(trace > 1e-300)) throw DataError("pca3: degenerate covariance");

    Pca3Result res;
    for (int comp = 0; comp < 3; ++comp) {
        SplitMix64 rng(mix_seed({0x9CA3ULL, static_cast<uint64_t>(comp)}));
        Vec v(e);
        double norm = 0.0;
        for (size_t j = 0; j < e; ++j) {
            v[j] = rng.symmetric();
            norm += v[j] * v[j];
        }
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;

        for (int it = 0; it < 200; ++it) {
            Vec w(e, 0.0);
            for (size_t a = 0; a < e; ++a)
                for (size_t b = 0; b < e; ++b) w[a] += cov[a][b] * v[b];
            double wn = 0.0;
            for (double x : w) wn += x * x;
            wn = std::sqrt(wn);
            if (wn < 1e-300) break;  // deflated to null space
            double diff = 0.0;
            for (size_t j = 0; j < e; ++j) {
                w[j] /= wn;
                diff += (w[j] - v[j]) * (w[j] - v[j]);
            }
            v = w;
            if (std::sqrt(diff) < 1e-12) break;
        }

        // Rayleigh quotient; v is unit norm.
        double lambda = 0.0;
        for (size_t a = 0; a < e; ++a) {
            double acc = 0.0;
            for (size_t b = 0; b < e; ++b) acc += cov[a][b] * v[b];
            lambda += v[a] * acc;
        }
        if (lambda < 0.0) lambda = 0.0;

        size_t imax = 0;
        for (size_t j = 1; j < e; ++j)
            if (std::fabs(v[j]) > std::fabs(v[imax])) imax = j;
        if (v[imax] < 0.0)
            for (double& x : v) x = -x;

        res.basis.push_back(v);
        res.explained[comp] = lambda / trace;

        for (size_t a = 0; a < e; ++a)
            for (size_t b = 0; b < e; ++b) cov[a][b] -= lambda * v[a] * v[b];
    }

    res.projections.resize(n);
    for (size_t i = 0; i < n; ++i) {
        res.projections[i].machine_id = records[i].machine_id;
        for (int comp = 0; comp < 3; ++comp) {
            double acc = 0.0;
            for (size_t j = 0; j < e; ++j) acc += res.basis[static_cast<size_t>(comp)][j] * centered[i][j];
            res.projections[i].coords[comp] = acc;
        }
    }
    return res;
}

// Mean silhouette over full-dimension embeddings, Euclidean distance.
// Labels with fewer than two members are excluded.
template <typename LabelFn>
inline double silhouette(const std::vector<EmbeddingRecord>& records, LabelFn&& label_fn) {
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < records.size(); ++i) groups[label_fn(records[i])].push_back(i);

    std::map<std::string, std::vector<size_t>> valid;
    for (const auto& [label, members] : groups)
        if (members.size() >= 2) valid[label] = members;
    if (valid.size() < 2)
        throw DataError("silhouette: need at least 2 labels with >= 2 members each");

    auto dist = [&](size_t i, size_t j) {
        double acc = 0.0;
        for (size_t k = 0; k < records[i].s.size(); ++k) {
            const double d = records[i].s[k] - records[j].s[k];
            acc += d * d;
        }
        return std::sqrt(acc);
    };

    double sum = 0.0;
    long count = 0;
    for (const auto& [label, members] : valid) {
        for (size_t i : members) {
            double a = 0.0;
            for (size_t j : members)
                if (j != i) a += dist(i, j);
            a /= static_cast<double>(members.size() - 1);

            double b = std::numeric_limits<double>::infinity();
            for (const auto& [other, omembers] : valid) {
                if (other == label) continue;
                double d = 0.0;
                for (size_t j : omembers) d += dist(i, j);
                b = std::min(b, d / static_cast<double>(omembers.size()));
            }

            const double denom = std::max(a, b);
            sum += denom > 0.0 ? (b - a) / denom : 0.0;
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

namespace detail {

inline std::string svg_num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

inline const char* palette(size_t i) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % 10];
}

}  // namespace detail

// 2D scatter of the first two principal coordinates colored by tag,
// plus a delimited table carrying all three coordinates.
inline void emit_scatter(const std::vector<Projection>& projections,
                         const std::vector<EmbeddingRecord>& records, const std::string& tag,
                         const std::filesystem::path& svg_path,
                         const std::filesystem::path& table_path) {
    if (projections.size() != records.size())
        throw DataError("emit_scatter: projections and records not aligned");
    auto tag_of = [&](const EmbeddingRecord& r) -> const std::string& {
        if (tag == "class") return r.class_tag;
        if (tag == "mass-bucket") return r.mass_bucket;
        if (tag == "year-bucket") return r.year_bucket;
        throw DataError("emit_scatter: unknown tag '" + tag +
                        "' (valid: class, mass-bucket, year-bucket)");
    };

    std::vector<std::string> labels;
    for (const auto& r : records) {
        const std::string& t = tag_of(r);
        if (std::find(labels.begin(), labels.end(), t) == labels.end()) labels.push_back(t);
    }
    std::sort(labels.begin(), labels.end());

    // table
    {
        std::ostringstream os;
        os << "machine_id,pc1,pc2,pc3,class,mass_bucket,year_bucket\n";
        for (size_t i = 0; i < projections.size(); ++i) {
            const auto& p = projections[i];
            const auto& r = records[i];
            os << p.machine_id << ',' << fmt_double(p.coords[0]) << ',' << fmt_double(p.coords[1])
               << ',' << fmt_double(p.coords[2]) << ',' << r.class_tag << ',' << r.mass_bucket
               << ',' << r.year_bucket << '\n';
        }
        std::ofstream f(table_path, std::ios::binary);
        if (!f) throw DataError("cannot write " + table_path.string());
        f << os.str();
    }

    // svg
    const double width = 640, height = 480, margin = 50;
    double lo_x = -1, hi_x = 1, lo_y = -1, hi_y = 1;
    if (!projections.empty()) {
        lo_x = hi_x = projections[0].coords[0];
        lo_y = hi_y = projections[0].coords[1];
        for (const auto& p : projections) {
            lo_x = std::min(lo_x, p.coords[0]);
            hi_x = std::max(hi_x, p.coords[0]);
            lo_y = std::min(lo_y, p.coords[1]);
            hi_y = std::max(hi_y, p.coords[1]);
        }
        if (hi_x - lo_x < 1e-12) { lo_x -= 1; hi_x += 1; }
        if (hi_y - lo_y < 1e-12) { lo_y -= 1; hi_y += 1; }
    }
    auto sx = [&](double x) { return margin + (x - lo_x) / (hi_x - lo_x) * (width - 2 * margin); };
    auto sy = [&](double y) {
        return height - margin - (y - lo_y) / (hi_y - lo_y) * (height - 2 * margin);
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
       << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
       << "\" font-size=\"12\" text-anchor=\"middle\">pc1</text>\n";
    os << "<text x=\"14\" y=\"" << height / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << height / 2
       << ")\">pc2</text>\n";
    for (size_t i = 0; i < projections.size(); ++i) {
        const size_t li = static_cast<size_t>(
            std::find(labels.begin(), labels.end(), tag_of(records[i])) - labels.begin());
        os << "<circle cx=\"" << detail::svg_num(sx(projections[i].coords[0])) << "\" cy=\""
           << detail::svg_num(sy(projections[i].coords[1])) << "\" r=\"4\" fill=\""
           << detail::palette(li) << "\" fill-opacity=\"0.8\"/>\n";
    }
    for (size_t li = 0; li < labels.size(); ++li) {
        const double y = margin + 16.0 * static_cast<double>(li);
        os << "<circle cx=\"" << width - margin - 90 << "\" cy=\"" << y << "\" r=\"5\" fill=\""
           << detail::palette(li) << "\"/>\n";
        os << "<text x=\"" << width - margin - 80 << "\" y=\"" << y + 4
           << "\" font-size=\"12\">" << labels[li] << "</text>\n";
    }
    os << "</svg>\n";
    std::ofstream f(svg_path, std::ios::binary);
    if (!f) throw DataError("cannot write " + svg_path.string());
    f << os.str();
}

// ---- embedding record / projection tables ---------------------------------

inline void write_embeddings(const std::vector<EmbeddingRecord>& records,
                             const std::filesystem::path& path) {
    std::ostringstream os;
    os << "machine_id,class,mass_bucket,year_bucket";
    if (!records.empty())
        for (size_t j = 0; j < records[0].s.size(); ++j) os << ",s" << j;
    os << '\n';
    for (const auto& r : records) {
        os << r.machine_id << ',' << r.class_tag << ',' << r.mass_bucket << ',' << r.year_bucket;
        for (double x : r.s) os << ',' << fmt_double(x);
        os << '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << os.str();
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("missing file: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty embeddings file: " + path.string());
    std::vector<EmbeddingRecord> records;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        EmbeddingRecord r;
        std::getline(ls, field, ',');
        r.machine_id = std::stoi(field);
        std::getline(ls, r.class_tag, ',');
        std::getline(ls, r.mass_bucket, ',');
        std::getline(ls, r.year_bucket, ',');
        while (std::getline(ls, field, ',')) r.s.push_back(std::stod(field));
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace tom
