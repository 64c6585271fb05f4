#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tom/array.hpp"
#include "tom/splitmix64.hpp"

namespace tom {

using Vec = std::vector<double>;

// Named parameter arrays with parallel gradient storage.
class ParamBlock {
public:
    struct Entry {
        std::string name;
        Array value;
        Array grad;
    };

    int add(const std::string& name, int rows, int cols = 1) {
        entries_.push_back({name, Array(rows, cols), Array(rows, cols)});
        return static_cast<int>(entries_.size()) - 1;
    }

    Entry& operator[](int i) { return entries_[static_cast<size_t>(i)]; }
    const Entry& operator[](int i) const { return entries_[static_cast<size_t>(i)]; }

    int find(const std::string& name) const {
        for (size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return static_cast<int>(i);
        throw std::runtime_error("ParamBlock: no entry named " + name);
    }

    size_t entry_count() const { return entries_.size(); }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(0.0);
    }

    size_t coord_count() const {
        size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    double& coord(size_t k) { return locate(k, /*grad=*/false); }
    double& grad_coord(size_t k) { return locate(k, /*grad=*/true); }

    // Flattened copy of all gradients, entry order then row-major.
    Vec grads_flat() const {
        Vec g;
        g.reserve(coord_count());
        for (const auto& e : entries_)
            g.insert(g.end(), e.grad.values().begin(), e.grad.values().end());
        return g;
    }

private:
    double& locate(size_t k, bool grad) {
        for (auto& e : entries_) {
            if (k < e.value.size()) return grad ? e.grad[k] : e.value[k];
            k -= e.value.size();
        }
        throw std::out_of_range("ParamBlock coordinate index");
    }

    std::vector<Entry> entries_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scaled uniform init, fixed row-major fill order.
inline void init_uniform(Array& a, int fan_in, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (size_t k = 0; k < a.size(); ++k) a[k] = rng.uniform(-bound, bound);
}

// y = W x + b, row-major dot products, sequential accumulation.
inline Vec affine_forward(const Array& W, const Array& b, const Vec& x) {
    if (W.cols() != static_cast<int>(x.size()) || b.rows() != W.rows() || b.cols() != 1)
        throw ShapeError("affine_forward: W " + W.shape_str() + ", b " + b.shape_str() +
                         ", x " + std::to_string(x.size()));
    Vec y(static_cast<size_t>(W.rows()));
    for (int i = 0; i < W.rows(); ++i) {
        double acc = b[static_cast<size_t>(i)];
        const double* row = W.data() + static_cast<size_t>(i) * W.cols();
        for (int j = 0; j < W.cols(); ++j) acc += row[j] * x[static_cast<size_t>(j)];
        y[static_cast<size_t>(i)] = acc;
    }
    return y;
}

// Accumulates dW += g x^T, db += g; returns dx = W^T g.
inline Vec affine_backward(const Array& W, const Vec& x, const Vec& g, Array& dW, Array& db) {
    if (static_cast<int>(g.size()) != W.rows() || static_cast<int>(x.size()) != W.cols())
        throw ShapeError("affine_backward: W " + W.shape_str() + ", x " + std::to_string(x.size()) +
                         ", g " + std::to_string(g.size()));
    Vec dx(x.size(), 0.0);
    for (int i = 0; i < W.rows(); ++i) {
        const double gi = g[static_cast<size_t>(i)];
        double* drow = dW.data() + static_cast<size_t>(i) * W.cols();
        const double* wrow = W.data() + static_cast<size_t>(i) * W.cols();
        for (int j = 0; j < W.cols(); ++j) {
            drow[j] += gi * x[static_cast<size_t>(j)];
            dx[static_cast<size_t>(j)] += wrow[j] * gi;
        }
        db[static_cast<size_t>(i)] += gi;
    }
    return dx;
}

// Single gated recurrent cell over a ParamBlock.
//   z = sigma(Wz x + Uz h + bz)
//   r = sigma(Wr x + Ur h + br)
//   hc = tanh(Wh x + Uh (r.h) + bh)
//   h' = (1-z).h + z.hc
struct GruCell {
    int in_dim = 0;
    int hid = 0;
    int Wz = -1, Uz = -1, bz = -1, Wr = -1, Ur = -1, br = -1, Wh = -1, Uh = -1, bh = -1;

    static GruCell attach(ParamBlock& block, const std::string& prefix, int in_dim, int hid) {
        GruCell c;
        c.in_dim = in_dim;
        c.hid = hid;
        c.Wz = block.add(prefix + ".Wz", hid, in_dim);
        c.Uz = block.add(prefix + ".Uz", hid, hid);
        c.bz = block.add(prefix + ".bz", hid);
        c.Wr = block.add(prefix + ".Wr", hid, in_dim);
        c.Ur = block.add(prefix + ".Ur", hid, hid);
        c.br = block.add(prefix + ".br", hid);
        c.Wh = block.add(prefix + ".Wh", hid, in_dim);
        c.Uh = block.add(prefix + ".Uh", hid, hid);
        c.bh = block.add(prefix + ".bh", hid);
        return c;
    }

    void init(ParamBlock& block, SplitMix64& rng) {
        // Gate-by-gate, W then U then b, matching the attach order.
        const int fan[9] = {in_dim, hid, in_dim + hid, in_dim, hid, in_dim + hid,
                            in_dim, hid, in_dim + hid};
        const int idx[9] = {Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh};
        for (int i = 0; i < 9; ++i) init_uniform(block[idx[i]].value, fan[i], rng);
    }

    struct Cache {
        Vec x, h, z, r, rh, hc;
    };

    Vec forward(const ParamBlock& p, const Vec& h, const Vec& x, Cache* cache = nullptr) const {
        if (static_cast<int>(h.size()) != hid || static_cast<int>(x.size()) != in_dim)
            throw ShapeError("gru_step: h " + std::to_string(h.size()) + ", x " +
                             std::to_string(x.size()) + " vs cell " + std::to_string(hid) + "/" +
                             std::to_string(in_dim));
        Vec az = affine_forward(p[Wz].value, p[bz].value, x);
        add_matvec(p[Uz].value, h, az);
        Vec ar = affine_forward(p[Wr].value, p[br].value, x);
        add_matvec(p[Ur].value, h, ar);

        Vec z(az.size()), r(ar.size());
        for (size_t i = 0; i < z.size(); ++i) z[i] = sigmoid(az[i]);
        for (size_t i = 0; i < r.size(); ++i) r[i] = sigmoid(ar[i]);

        Vec rh(static_cast<size_t>(hid));
        for (size_t i = 0; i < rh.size(); ++i) rh[i] = r[i] * h[i];

        Vec ah = affine_forward(p[Wh].value, p[bh].value, x);
        add_matvec(p[Uh].value, rh, ah);
        Vec hc(ah.size());
        for (size_t i = 0; i < hc.size(); ++i) hc[i] = std::tanh(ah[i]);

        Vec hn(static_cast<size_t>(hid));
        for (size_t i = 0; i < hn.size(); ++i) hn[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];

        if (cache) *cache = Cache{x, h, z, r, rh, hc};
        return hn;
    }

    // Accumulates parameter gradients; returns (dh, dx) via out-params.
    void backward(ParamBlock& p, const Cache& c, const Vec& dhn, Vec& dh, Vec& dx) const {
        dh.assign(static_cast<size_t>(hid), 0.0);
        dx.assign(static_cast<size_t>(in_dim), 0.0);

        Vec dz(static_cast<size_t>(hid)), dhc(static_cast<size_t>(hid));
        for (int i = 0; i < hid; ++i) {
            const size_t k = static_cast<size_t>(i);
            dz[k] = dhn[k] * (c.hc[k] - c.h[k]);
            dhc[k] = dhn[k] * c.z[k];
            dh[k] += dhn[k] * (1.0 - c.z[k]);
        }

        // candidate branch
        Vec dah(static_cast<size_t>(hid));
        for (int i = 0; i < hid; ++i) {
            const size_t k = static_cast<size_t>(i);
            dah[k] = dhc[k] * (1.0 - c.hc[k] * c.hc[k]);
        }
        Vec dx_h = affine_backward(p[Wh].value, c.x, dah, p[Wh].grad, p[bh].grad);
        Vec drh = affine_backward_nobias(p[Uh].value, c.rh, dah, p[Uh].grad);
        Vec dr(static_cast<size_t>(hid));
        for (int i = 0; i < hid; ++i) {
            const size_t k = static_cast<size_t>(i);
            dr[k] = drh[k] * c.h[k];
            dh[k] += drh[k] * c.r[k];
        }
        for (size_t k = 0; k < dx.size(); ++k) dx[k] += dx_h[k];

        // reset gate
        Vec dar(static_cast<size_t>(hid));
        for (int i = 0; i < hid; ++i) {
            const size_t k = static_cast<size_t>(i);
            dar[k] = dr[k] * c.r[k] * (1.0 - c.r[k]);
        }
        Vec dx_r = affine_backward(p[Wr].value, c.x, dar, p[Wr].grad, p[br].grad);
        Vec dh_r = affine_backward_nobias(p[Ur].value, c.h, dar, p[Ur].grad);
        for (size_t k = 0; k < dx.size(); ++k) dx[k] += dx_r[k];
        for (size_t k = 0; k < dh.size(); ++k) dh[k] += dh_r[k];

        // update gate
        Vec daz(static_cast<size_t>(hid));
        for (int i = 0; i < hid; ++i) {
            const size_t k = static_cast<size_t>(i);
            daz[k] = dz[k] * c.z[k] * (1.0 - c.z[k]);
        }
        Vec dx_z = affine_backward(p[Wz].value, c.x, daz, p[Wz].grad, p[bz].grad);
        Vec dh_z = affine_backward_nobias(p[Uz].value, c.h, daz, p[Uz].grad);
        for (size_t k = 0; k < dx.size(); ++k) dx[k] += dx_z[k];
        for (size_t k = 0; k < dh.size(); ++k) dh[k] += dh_z[k];
    }

private:
    static void add_matvec(const Array& M, const Vec& x, Vec& y) {
        for (int i = 0; i < M.rows(); ++i) {
            double acc = 0.0;
            const double* row = M.data() + static_cast<size_t>(i) * M.cols();
            for (int j = 0; j < M.cols(); ++j) acc += row[j] * x[static_cast<size_t>(j)];
            y[static_cast<size_t>(i)] += acc;
        }
    }

    static Vec affine_backward_nobias(const Array& W, const Vec& x, const Vec& g, Array& dW) {
        Vec dx(x.size(), 0.0);
        for (int i = 0; i < W.rows(); ++i) {
            const double gi = g[static_cast<size_t>(i)];
            double* drow = dW.data() + static_cast<size_t>(i) * W.cols();
            const double* wrow = W.data() + static_cast<size_t>(i) * W.cols();
            for (int j = 0; j < W.cols(); ++j) {
                drow[j] += gi * x[static_cast<size_t>(j)];
                dx[static_cast<size_t>(j)] += wrow[j] * gi;
            }
        }
        return dx;
    }
};

inline double mse(const Vec& pred, const Vec& target) {
    if (pred.size() != target.size())
        throw ShapeError("mse: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(target.size()));
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

inline Vec mse_backward(const Vec& pred, const Vec& target) {
    Vec g(pred.size());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
    return g;
}

// Central-difference check of analytic gradients. loss_fn must be pure
// in the parameter values; it must also populate grads when fill_grads
// is requested (used once, at the unperturbed point).
struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t worst_coord = 0;
};

inline GradCheckResult finite_diff_check(
    const std::function<double(ParamBlock&, bool fill_grads)>& loss_fn, ParamBlock& params,
    double eps) {
    params.zero_grads();
    const double base = loss_fn(params, true);
    if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");
    const Vec analytic = params.grads_flat();

    GradCheckResult res;
    const size_t n = params.coord_count();
    for (size_t k = 0; k < n; ++k) {
        double& p = params.coord(k);
        const double saved = p;
        p = saved + eps;
        const double lp = loss_fn(params, false);
        p = saved - eps;
        const double lm = loss_fn(params, false);
        p = saved;
        if (!std::isfinite(lp) || !std::isfinite(lm))
            throw std::runtime_error("finite_diff_check: non-finite loss at perturbation");
        const double numeric = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::fabs(analytic[k]), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic[k] - numeric) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = k;
        }
    }
    return res;
}

}  // namespace tom
