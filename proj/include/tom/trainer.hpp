#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tom/datagen.hpp"
#include "tom/model.hpp"

namespace tom {

struct TrainConfig {
    int epochs = 30;
    int seq_len = 100;
    int stride = 25;
    int embed_dim = 16;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    uint64_t seed = 0;
    bool zero_embeddings = false;  // ablation baseline: head sees only next_input

    void validate() const {
        if (epochs < 0) throw ValidationError("epochs must be >= 0");
        if (seq_len < 1) throw ValidationError("seq_len must be >= 1");
        if (stride < 1) throw ValidationError("stride must be >= 1");
        if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    }
};

struct MachineMse {
    int machine_id = -1;
    double mse = 0.0;
    int windows = 0;
};

struct Metrics {
    std::vector<double> epoch_train_mse;
    std::vector<MachineMse> per_machine;
    double aggregate = 0.0;
    double wall_seconds = 0.0;  // informational only, never serialized
};

struct AdamState {
    Vec m, v;
    long step = 0;
};

// Standard Adam with bias correction, applied coordinatewise over the
// whole ParamBlock in flattened coordinate order.
inline void adam_step(ParamBlock& params, AdamState& state, double lr, double beta1, double beta2,
                      double eps, double grad_scale = 1.0) {
    const size_t n = params.coord_count();
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n) throw ShapeError("adam_step: state size mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < n; ++k) {
        const double g = params.grad_coord(k) * grad_scale;
        if (!std::isfinite(g))
            throw std::runtime_error("adam_step: non-finite gradient at coordinate " +
                                     std::to_string(k));
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        const double mhat = state.m[k] / bc1;
        const double vhat = state.v[k] / bc2;
        params.coord(k) -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

struct TrainResult {
    Model model;
    Metrics metrics;
};

namespace detail {

inline std::vector<std::vector<Window>> windows_by_machine(const Dataset& ds,
                                                           const std::vector<int>& ids, int n,
                                                           int stride) {
    std::vector<std::vector<Window>> out;
    for (int id : ids) out.push_back(make_windows(ds.traj_of(id), n, stride));
    return out;
}

}  // namespace detail

// Offline end-to-end training. Machines visited in machine_id order,
// windows in start-tick order; m resets per machine per epoch and is
// carried forward as a constant between windows.
inline TrainResult train(const TrainConfig& config, const Dataset& dataset) {
    config.validate();
    if (dataset.split.train_ids.empty()) throw DataError("train: empty train split");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res{init_model(ModelDims{config.embed_dim}, mix_seed({config.seed, 0x0DE1ULL})),
                    Metrics{}};
    Model& model = res.model;

    const auto machine_windows = detail::windows_by_machine(
        dataset, dataset.split.train_ids, config.seq_len, config.stride);

    AdamState opt;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        model.params.zero_grads();
        int in_batch = 0;
        double epoch_sum = 0.0;
        long epoch_count = 0;
        for (size_t mi = 0; mi < machine_windows.size(); ++mi) {
            Vec m_prev(static_cast<size_t>(config.embed_dim), 0.0);
            for (const Window& w : machine_windows[mi]) {
                auto r = window_loss(model, w, m_prev, /*with_grad=*/true,
                                     config.zero_embeddings);
                if (!std::isfinite(r.loss))
                    throw std::runtime_error(
                        "train: non-finite loss at epoch " + std::to_string(epoch) +
                        ", machine " + std::to_string(w.machine_id) + ", window start " +
                        std::to_string(w.start));
                m_prev = std::move(r.m_new);
                epoch_sum += r.loss;
                ++epoch_count;
                if (++in_batch == config.batch_size) {
                    adam_step(model.params, opt, config.learning_rate, config.adam_beta1,
                              config.adam_beta2, config.adam_eps, 1.0 / in_batch);
                    model.params.zero_grads();
                    in_batch = 0;
                }
            }
        }
        if (in_batch > 0) {
            adam_step(model.params, opt, config.learning_rate, config.adam_beta1,
                      config.adam_beta2, config.adam_eps, 1.0 / in_batch);
            model.params.zero_grads();
        }
        if (epoch_count == 0) throw DataError("train: no windows in train split");
        res.metrics.epoch_train_mse.push_back(epoch_sum / static_cast<double>(epoch_count));
    }

    res.metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// Side-effect-free evaluation, m carried per machine exactly as in
// training. Aggregate is the window-count-weighted mean.
inline Metrics evaluate(Model& model, const Dataset& dataset, const std::vector<int>& split_ids,
                        int seq_len, int stride, bool zero_embeddings = false) {
    if (split_ids.empty()) throw DataError("evaluate: empty split");
    Metrics metrics;
    double total = 0.0;
    long total_windows = 0;
    for (int id : split_ids) {
        const auto windows = make_windows(dataset.traj_of(id), seq_len, stride);
        Vec m_prev(static_cast<size_t>(model.dims.embed_dim), 0.0);
        double sum = 0.0;
        for (const Window& w : windows) {
            auto r = window_loss(model, w, m_prev, /*with_grad=*/false, zero_embeddings);
            m_prev = std::move(r.m_new);
            sum += r.loss;
        }
        const int nw = static_cast<int>(windows.size());
        metrics.per_machine.push_back(
            {id, nw > 0 ? sum / static_cast<double>(nw) : 0.0, nw});
        total += sum;
        total_windows += nw;
    }
    metrics.aggregate = total_windows > 0 ? total / static_cast<double>(total_windows) : 0.0;
    return metrics;
}

// One record per epoch plus the final per-machine table. Wall time is
// deliberately left out so reruns are byte-identical.
inline void write_metrics(const Metrics& metrics, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "{\"epoch_train_mse\":[";
    for (size_t i = 0; i < metrics.epoch_train_mse.size(); ++i) {
        if (i) os << ',';
        os << fmt_double(metrics.epoch_train_mse[i]);
    }
    os << "],\"per_machine\":[";
    for (size_t i = 0; i < metrics.per_machine.size(); ++i) {
        const auto& m = metrics.per_machine[i];
        if (i) os << ',';
        os << "{\"machine_id\":" << m.machine_id << ",\"mse\":" << fmt_double(m.mse)
           << ",\"windows\":" << m.windows << '}';
    }
    os << "],\"aggregate\":" << fmt_double(metrics.aggregate) << "}\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << os.str();
}

}  // namespace tom
