#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tom/datagen.hpp"
#include "tom/netcore.hpp"

namespace tom {

struct ModelDims {
    int embed_dim = 16;
    static constexpr int input_dim = 3;
    static constexpr int output_dim = 3;
    static constexpr int pair_dim = input_dim + output_dim;

    int head_in() const { return 2 * embed_dim + input_dim; }
};

// Window encoder (GRU + projection), decayed accumulator (beta, gamma)
// and the affine theory head, all in one ParamBlock.
struct Model {
    ModelDims dims;
    uint64_t seed = 0;
    ParamBlock params;
    GruCell encoder;
    int proj_w = -1, proj_b = -1;
    int beta_raw = -1, gamma = -1;
    int head_w = -1, head_b = -1;

    static Model make(ModelDims dims) {
        Model m;
        m.dims = dims;
        const int e = dims.embed_dim;
        m.encoder = GruCell::attach(m.params, "encoder", ModelDims::pair_dim, e);
        m.proj_w = m.params.add("proj.W", e, e);
        m.proj_b = m.params.add("proj.b", e);
        m.beta_raw = m.params.add("beta_raw", e);
        m.gamma = m.params.add("gamma", e);
        m.head_w = m.params.add("head.W", ModelDims::output_dim, dims.head_in());
        m.head_b = m.params.add("head.b", ModelDims::output_dim);
        return m;
    }
};

inline Model init_model(ModelDims dims, uint64_t seed) {
    if (dims.embed_dim < 1) throw ValidationError("embed_dim must be >= 1");
    Model m = Model::make(dims);
    m.seed = seed;
    SplitMix64 rng(seed);
    m.encoder.init(m.params, rng);
    init_uniform(m.params[m.proj_w].value, dims.embed_dim, rng);
    init_uniform(m.params[m.proj_b].value, dims.embed_dim, rng);
    m.params[m.beta_raw].value.fill(2.0);  // decay sigma(2) ~ 0.88
    m.params[m.gamma].value.fill(0.1);
    init_uniform(m.params[m.head_w].value, dims.head_in(), rng);
    init_uniform(m.params[m.head_b].value, dims.head_in(), rng);
    return m;
}

struct EncodeCache {
    std::vector<GruCell::Cache> steps;
    Vec h_final;
};

inline Vec pair_features(const IOPair& p) {
    return {p.input.d_throttle, p.input.d_brake, p.input.d_steer,
            p.output.dx,        p.output.dy,     p.output.dz};
}

// s = proj(GRU over the window's pairs in tick order), h_0 = 0.
inline Vec encode_window(const Model& model, const Window& window, EncodeCache* cache = nullptr) {
    const int e = model.dims.embed_dim;
    Vec h(static_cast<size_t>(e), 0.0);
    if (cache) cache->steps.resize(static_cast<size_t>(window.n));
    for (int k = 0; k < window.n; ++k) {
        const Vec x = pair_features(window.pairs[k]);
        h = model.encoder.forward(model.params, h, x, cache ? &cache->steps[static_cast<size_t>(k)] : nullptr);
    }
    if (cache) cache->h_final = h;
    return affine_forward(model.params[model.proj_w].value, model.params[model.proj_b].value, h);
}

// Propagates ds through projection and the GRU chain, accumulating
// parameter gradients. Input features receive no gradient (data).
inline void encode_window_backward(Model& model, const EncodeCache& cache, const Vec& ds) {
    Vec dh = affine_backward(model.params[model.proj_w].value, cache.h_final, ds,
                             model.params[model.proj_w].grad, model.params[model.proj_b].grad);
    Vec dx;
    for (size_t k = cache.steps.size(); k-- > 0;) {
        Vec dh_prev;
        model.encoder.backward(model.params, cache.steps[k], dh, dh_prev, dx);
        dh = std::move(dh_prev);
    }
}

// m = sigma(beta_raw) . m_prev + gamma . s
inline Vec update_stateless(const Model& model, const Vec& m_prev, const Vec& s) {
    const int e = model.dims.embed_dim;
    if (static_cast<int>(m_prev.size()) != e || static_cast<int>(s.size()) != e)
        throw ShapeError("update_stateless: expected vectors of length " + std::to_string(e));
    Vec m(static_cast<size_t>(e));
    const Array& beta = model.params[model.beta_raw].value;
    const Array& gamma = model.params[model.gamma].value;
    for (int i = 0; i < e; ++i) {
        const size_t k = static_cast<size_t>(i);
        m[k] = sigmoid(beta[k]) * m_prev[k] + gamma[k] * s[k];
    }
    return m;
}

// o_hat = head_w . concat(s, m, next_input) + head_b
inline Vec predict_next(const Model& model, const Vec& s, const Vec& m,
                        const ControlDelta& next_input) {
    const int e = model.dims.embed_dim;
    if (static_cast<int>(s.size()) != e || static_cast<int>(m.size()) != e)
        throw ShapeError("predict_next: embedding length mismatch");
    Vec x;
    x.reserve(static_cast<size_t>(model.dims.head_in()));
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), m.begin(), m.end());
    x.push_back(next_input.d_throttle);
    x.push_back(next_input.d_brake);
    x.push_back(next_input.d_steer);
    return affine_forward(model.params[model.head_w].value, model.params[model.head_b].value, x);
}

struct WindowLossResult {
    double loss = 0.0;
    Vec m_new;
    Vec pred;
};

// Forward + (optional) backward for one window. m_prev is a constant:
// no gradient flows into earlier windows. With zero_embeddings the
// encoder and accumulator are bypassed (s = m = 0), leaving a head that
// sees only next_input; this is the ablation baseline.
inline WindowLossResult window_loss(Model& model, const Window& window, const Vec& m_prev,
                                    bool with_grad = true, bool zero_embeddings = false) {
    const int e = model.dims.embed_dim;
    WindowLossResult res;

    EncodeCache cache;
    Vec s;
    if (zero_embeddings) {
        s.assign(static_cast<size_t>(e), 0.0);
        res.m_new.assign(static_cast<size_t>(e), 0.0);
    } else {
        s = encode_window(model, window, with_grad ? &cache : nullptr);
        res.m_new = update_stateless(model, m_prev, s);
    }

    Vec x;
    x.reserve(static_cast<size_t>(model.dims.head_in()));
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), res.m_new.begin(), res.m_new.end());
    x.push_back(window.next_input.d_throttle);
    x.push_back(window.next_input.d_brake);
    x.push_back(window.next_input.d_steer);
    res.pred = affine_forward(model.params[model.head_w].value, model.params[model.head_b].value, x);

    const Vec target = {window.next_output.dx, window.next_output.dy, window.next_output.dz};
    res.loss = mse(res.pred, target);
    if (!with_grad) return res;

    const Vec dpred = mse_backward(res.pred, target);
    const Vec dx = affine_backward(model.params[model.head_w].value, x, dpred,
                                   model.params[model.head_w].grad,
                                   model.params[model.head_b].grad);
    if (zero_embeddings) return res;

    const Array& beta = model.params[model.beta_raw].value;
    const Array& gamma = model.params[model.gamma].value;
    Array& dbeta = model.params[model.beta_raw].grad;
    Array& dgamma = model.params[model.gamma].grad;
    Vec ds(static_cast<size_t>(e));
    for (int i = 0; i < e; ++i) {
        const size_t k = static_cast<size_t>(i);
        const double dm = dx[static_cast<size_t>(e) + k];
        const double sb = sigmoid(beta[k]);
        dbeta[k] += dm * m_prev[k] * sb * (1.0 - sb);
        dgamma[k] += dm * s[k];
        ds[k] = dx[k] + dm * gamma[k];
    }
    encode_window_backward(model, cache, ds);
    return res;
}

// ---- checkpoint format TOMM-1 --------------------------------------------

inline void save_model(const Model& model, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "{\"version\":\"TOMM-1\",\"embed_dim\":" << model.dims.embed_dim
       << ",\"seed\":" << model.seed << ",\"arrays\":[";
    for (size_t i = 0; i < model.params.entry_count(); ++i) {
        const auto& e = model.params[static_cast<int>(i)];
        if (i) os << ',';
        os << "{\"name\":\"" << e.name << "\",\"rows\":" << e.value.rows()
           << ",\"cols\":" << e.value.cols() << ",\"v\":[";
        for (size_t k = 0; k < e.value.size(); ++k) {
            if (k) os << ',';
            os << fmt_double(e.value[k]);
        }
        os << "]}";
    }
    os << "]}\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << os.str();
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("missing file: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
    const std::string version = j.at("version").get<std::string>();
    if (version != "TOMM-1") throw DataError("unsupported checkpoint version: " + version);

    ModelDims dims;
    dims.embed_dim = j.at("embed_dim").get<int>();
    Model m = Model::make(dims);
    m.seed = j.at("seed").get<uint64_t>();
    const auto& arrays = j.at("arrays");
    if (arrays.size() != m.params.entry_count())
        throw DataError("checkpoint array count does not match dims");
    for (size_t i = 0; i < arrays.size(); ++i) {
        const auto& ja = arrays[i];
        auto& e = m.params[static_cast<int>(i)];
        if (ja.at("name").get<std::string>() != e.name ||
            ja.at("rows").get<int>() != e.value.rows() ||
            ja.at("cols").get<int>() != e.value.cols())
            throw DataError("checkpoint array " + e.name + " has inconsistent shape");
        const auto& v = ja.at("v");
        if (v.size() != e.value.size())
            throw DataError("checkpoint array " + e.name + " has wrong length");
        for (size_t k = 0; k < e.value.size(); ++k) e.value[k] = v[k].get<double>();
    }
    return m;
}

}  // namespace tom
