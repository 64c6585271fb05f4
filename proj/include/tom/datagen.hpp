#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tom/machines.hpp"
#include "tom/splitmix64.hpp"

namespace tom {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IOPair {
    int t = 0;
    ControlDelta input;
    MotionDelta output;
};

struct Trajectory {
    int machine_id = -1;
    std::vector<IOPair> pairs;
};

// View into one trajectory: n pairs at ticks [start, start+n-1] plus the
// target pair at tick start+n.
struct Window {
    int machine_id = -1;
    const IOPair* pairs = nullptr;
    int n = 0;
    int start = 0;
    ControlDelta next_input;
    MotionDelta next_output;
};

struct SplitSpec {
    std::vector<int> train_ids, test_ids;
};

struct ExcitationConfig {
    double alpha = 0.1;
    double sigma = 0.05;
    int length = 4000;
};

struct Dataset {
    std::string version = "TOMD-1";
    uint64_t fleet_seed = 0;
    std::vector<MachineSpec> fleet;
    SplitSpec split;
    ExcitationConfig excitation;
    std::vector<Trajectory> trajectories;  // machine_id order

    const MachineSpec& spec_of(int machine_id) const {
        for (const auto& s : fleet)
            if (s.machine_id == machine_id) return s;
        throw DataError("no machine with id " + std::to_string(machine_id));
    }

    const Trajectory& traj_of(int machine_id) const {
        for (const auto& t : trajectories)
            if (t.machine_id == machine_id) return t;
        throw DataError("no trajectory for machine " + std::to_string(machine_id));
    }
};

constexpr uint64_t kExciteSalt = 0xE5C17AULL;

// Per-channel first-order filtered noise, throttle biased +0.05 so the
// vehicles move. Draw order per tick: throttle, brake, steer.
inline std::vector<ControlDelta> excite(uint64_t seed, int length, double alpha, double sigma) {
    if (length < 1) throw DataError("excite: length must be >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DataError("excite: alpha must be in (0, 1]");
    SplitMix64 rng(seed);
    double v[3] = {0.0, 0.0, 0.0};
    const double bias[3] = {0.05, 0.0, 0.0};
    std::vector<ControlDelta> out;
    out.reserve(static_cast<size_t>(length));
    for (int k = 0; k < length; ++k) {
        double u[3];
        for (int c = 0; c < 3; ++c) {
            v[c] = (1.0 - alpha) * v[c] + sigma * rng.symmetric();
            u[c] = clampd(v[c] + bias[c], -kControlBound, kControlBound);
        }
        out.push_back({u[0], u[1], u[2]});
    }
    return out;
}

inline Trajectory roll(Machine& machine, const std::vector<ControlDelta>& controls) {
    Trajectory traj;
    traj.machine_id = machine.spec().machine_id;
    traj.pairs.reserve(controls.size());
    for (size_t k = 0; k < controls.size(); ++k)
        traj.pairs.push_back({static_cast<int>(k), controls[k], machine.step(controls[k])});
    return traj;
}

inline std::vector<Window> make_windows(const Trajectory& traj, int n, int stride) {
    if (n < 1 || stride < 1) throw DataError("make_windows: n and stride must be >= 1");
    std::vector<Window> out;
    const int len = static_cast<int>(traj.pairs.size());
    for (int i = 0; i + n <= len - 1; i += stride) {
        Window w;
        w.machine_id = traj.machine_id;
        w.pairs = traj.pairs.data() + i;
        w.n = n;
        w.start = i;
        w.next_input = traj.pairs[static_cast<size_t>(i + n)].input;
        w.next_output = traj.pairs[static_cast<size_t>(i + n)].output;
        out.push_back(w);
    }
    return out;
}

// Deterministic stratified split by machine identity. Classes with two
// or more members contribute at least one machine to each side.
inline SplitSpec split_fleet(const std::vector<MachineSpec>& fleet, int n_train, int n_test,
                             uint64_t seed) {
    const int total = static_cast<int>(fleet.size());
    if (n_train < 0 || n_test < 0 || n_train + n_test != total)
        throw DataError("split_fleet: n_train + n_test must equal fleet size");
    if (total == 0) return {};

    // group ids by class, in class enum order
    std::vector<MachineClass> classes;
    std::map<MachineClass, std::vector<int>> groups;
    for (const auto& s : fleet) {
        if (groups.find(s.cls) == groups.end()) classes.push_back(s.cls);
        groups[s.cls].push_back(s.machine_id);
    }
    std::sort(classes.begin(), classes.end());

    // largest-remainder test quotas
    const int nclasses = static_cast<int>(classes.size());
    std::vector<int> quota(static_cast<size_t>(nclasses), 0);
    std::vector<std::pair<double, int>> rems;
    int assigned = 0;
    for (int c = 0; c < nclasses; ++c) {
        const double exact = static_cast<double>(n_test) *
                             static_cast<double>(groups[classes[static_cast<size_t>(c)]].size()) /
                             static_cast<double>(total);
        quota[static_cast<size_t>(c)] = static_cast<int>(exact);
        assigned += quota[static_cast<size_t>(c)];
        rems.push_back({exact - static_cast<double>(quota[static_cast<size_t>(c)]), c});
    }
    std::stable_sort(rems.begin(), rems.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; assigned < n_test && k < nclasses; ++k, ++assigned)
        ++quota[static_cast<size_t>(rems[static_cast<size_t>(k)].second)];

    auto qmin = [&](int c) {
        return groups[classes[static_cast<size_t>(c)]].size() >= 2 ? 1 : 0;
    };
    auto qmax = [&](int c) {
        const int cnt = static_cast<int>(groups[classes[static_cast<size_t>(c)]].size());
        return cnt >= 2 ? cnt - 1 : cnt;
    };
    for (int c = 0; c < nclasses; ++c)
        quota[static_cast<size_t>(c)] = std::clamp(quota[static_cast<size_t>(c)], qmin(c), qmax(c));

    int sum = 0;
    for (int q : quota) sum += q;
    for (int guard = 0; sum != n_test; ++guard) {
        bool moved = false;
        for (int c = 0; c < nclasses && sum != n_test; ++c) {
            if (sum < n_test && quota[static_cast<size_t>(c)] < qmax(c)) {
                ++quota[static_cast<size_t>(c)];
                ++sum;
                moved = true;
            } else if (sum > n_test && quota[static_cast<size_t>(c)] > qmin(c)) {
                --quota[static_cast<size_t>(c)];
                --sum;
                moved = true;
            }
        }
        if (!moved || guard > total)
            throw DataError("split_fleet: stratification infeasible for requested sizes");
    }

    SplitSpec split;
    for (int c = 0; c < nclasses; ++c) {
        std::vector<int> ids = groups[classes[static_cast<size_t>(c)]];
        SplitMix64 rng(mix_seed({seed, static_cast<uint64_t>(c), 0x57A7ULL}));
        for (size_t i = ids.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.next() % i);
            std::swap(ids[i - 1], ids[j]);
        }
        for (size_t i = 0; i < ids.size(); ++i)
            (i < static_cast<size_t>(quota[static_cast<size_t>(c)]) ? split.test_ids
                                                                    : split.train_ids)
                .push_back(ids[i]);
    }
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    return split;
}

// ---- serialization -------------------------------------------------------

// 17 significant decimal digits: round-trips any f64 bit-exactly.
inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline void emit_double_array(std::ostream& os, const double* v, size_t n) {
    os << '[';
    for (size_t i = 0; i < n; ++i) {
        if (i) os << ',';
        os << fmt_double(v[i]);
    }
    os << ']';
}

inline void emit_params(std::ostream& os, const MachineParams& params) {
    if (const auto* p = std::get_if<VehicleParams>(&params)) {
        os << "{\"type\":\"vehicle\""
           << ",\"mass\":" << fmt_double(p->mass) << ",\"f_max\":" << fmt_double(p->f_max)
           << ",\"b_max\":" << fmt_double(p->b_max) << ",\"mu0\":" << fmt_double(p->mu0)
           << ",\"c_drag\":" << fmt_double(p->c_drag) << ",\"c_rr\":" << fmt_double(p->c_rr)
           << ",\"wheelbase\":" << fmt_double(p->wheelbase)
           << ",\"delta_max\":" << fmt_double(p->delta_max)
           << ",\"v_max\":" << fmt_double(p->v_max) << ",\"t_opt\":" << fmt_double(p->t_opt)
           << ",\"k_heat\":" << fmt_double(p->k_heat) << ",\"k_cool\":" << fmt_double(p->k_cool)
           << ",\"k_temp_sens\":" << fmt_double(p->k_temp_sens)
           << ",\"slope_amp\":" << fmt_double(p->slope_amp)
           << ",\"slope_period\":" << fmt_double(p->slope_period) << ",\"year\":" << p->year
           << '}';
    } else if (const auto* q = std::get_if<LtiParams>(&params)) {
        os << "{\"type\":\"lti\",\"a\":";
        emit_double_array(os, q->a.data(), q->a.size());
        os << ",\"b\":";
        emit_double_array(os, q->b.data(), q->b.size());
        os << ",\"c\":";
        emit_double_array(os, q->c.data(), q->c.size());
        os << ",\"d\":";
        emit_double_array(os, q->d.data(), q->d.size());
        os << '}';
    } else {
        const auto& s = std::get<StatelessParams>(params);
        os << "{\"type\":\"stateless\",\"w\":";
        emit_double_array(os, s.w.data(), s.w.size());
        os << ",\"linear\":" << (s.linear ? "true" : "false") << '}';
    }
}

inline void emit_int_array(std::ostream& os, const std::vector<int>& v) {
    os << '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    os << ']';
}

template <size_t N>
inline std::array<double, N> parse_double_array(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != N)
        throw DataError("expected array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = j[i].get<double>();
    return out;
}

inline MachineParams parse_params(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "vehicle") {
        VehicleParams p;
        p.mass = j.at("mass").get<double>();
        p.f_max = j.at("f_max").get<double>();
        p.b_max = j.at("b_max").get<double>();
        p.mu0 = j.at("mu0").get<double>();
        p.c_drag = j.at("c_drag").get<double>();
        p.c_rr = j.at("c_rr").get<double>();
        p.wheelbase = j.at("wheelbase").get<double>();
        p.delta_max = j.at("delta_max").get<double>();
        p.v_max = j.at("v_max").get<double>();
        p.t_opt = j.at("t_opt").get<double>();
        p.k_heat = j.at("k_heat").get<double>();
        p.k_cool = j.at("k_cool").get<double>();
        p.k_temp_sens = j.at("k_temp_sens").get<double>();
        p.slope_amp = j.at("slope_amp").get<double>();
        p.slope_period = j.at("slope_period").get<double>();
        p.year = j.at("year").get<int>();
        return p;
    }
    if (type == "lti") {
        LtiParams p;
        p.a = parse_double_array<16>(j.at("a"));
        p.b = parse_double_array<12>(j.at("b"));
        p.c = parse_double_array<12>(j.at("c"));
        p.d = parse_double_array<9>(j.at("d"));
        return p;
    }
    if (type == "stateless") {
        StatelessParams p;
        p.w = parse_double_array<9>(j.at("w"));
        p.linear = j.at("linear").get<bool>();
        return p;
    }
    throw DataError("unknown params type: " + type);
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::ostringstream m;
    m << "{\"version\":\"" << ds.version << "\",\"fleet_seed\":" << ds.fleet_seed
      << ",\"machines\":[";
    for (size_t i = 0; i < ds.fleet.size(); ++i) {
        const auto& s = ds.fleet[i];
        if (i) m << ',';
        m << "{\"machine_id\":" << s.machine_id << ",\"class\":\"" << class_name(s.cls)
          << "\",\"seed\":" << s.seed << ",\"params\":";
        detail::emit_params(m, s.params);
        m << '}';
    }
    m << "],\"split\":{\"train\":";
    detail::emit_int_array(m, ds.split.train_ids);
    m << ",\"test\":";
    detail::emit_int_array(m, ds.split.test_ids);
    m << "},\"excitation\":{\"alpha\":" << fmt_double(ds.excitation.alpha)
      << ",\"sigma\":" << fmt_double(ds.excitation.sigma)
      << ",\"length\":" << ds.excitation.length << "},\"trajectories\":[";
    for (size_t i = 0; i < ds.trajectories.size(); ++i) {
        if (i) m << ',';
        m << "\"traj_" << ds.trajectories[i].machine_id << ".jsonl\"";
    }
    m << "]}\n";

    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw DataError("cannot write " + (dir / "manifest.json").string());
    mf << m.str();
    mf.close();

    for (const auto& traj : ds.trajectories) {
        const auto path = dir / ("traj_" + std::to_string(traj.machine_id) + ".jsonl");
        std::ostringstream t;
        for (const auto& p : traj.pairs) {
            t << "{\"t\":" << p.t << ",\"i\":[" << fmt_double(p.input.d_throttle) << ','
              << fmt_double(p.input.d_brake) << ',' << fmt_double(p.input.d_steer) << "],\"o\":["
              << fmt_double(p.output.dx) << ',' << fmt_double(p.output.dy) << ','
              << fmt_double(p.output.dz) << "]}\n";
        }
        std::ofstream tf(path, std::ios::binary);
        if (!tf) throw DataError("cannot write " + path.string());
        tf << t.str();
    }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf) throw DataError("missing file: " + manifest_path.string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt manifest " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    ds.version = j.at("version").get<std::string>();
    if (ds.version != "TOMD-1")
        throw DataError("unsupported dataset format version: " + ds.version);
    ds.fleet_seed = j.at("fleet_seed").get<uint64_t>();
    for (const auto& jm : j.at("machines")) {
        MachineSpec s;
        s.machine_id = jm.at("machine_id").get<int>();
        s.cls = class_from_name(jm.at("class").get<std::string>());
        s.seed = jm.at("seed").get<uint64_t>();
        s.params = detail::parse_params(jm.at("params"));
        ds.fleet.push_back(std::move(s));
    }
    ds.split.train_ids = j.at("split").at("train").get<std::vector<int>>();
    ds.split.test_ids = j.at("split").at("test").get<std::vector<int>>();
    ds.excitation.alpha = j.at("excitation").at("alpha").get<double>();
    ds.excitation.sigma = j.at("excitation").at("sigma").get<double>();
    ds.excitation.length = j.at("excitation").at("length").get<int>();

    for (const auto& jt : j.at("trajectories")) {
        const auto path = dir / jt.get<std::string>();
        std::ifstream tf(path, std::ios::binary);
        if (!tf) throw DataError("missing file: " + path.string());
        Trajectory traj;
        std::string line;
        int expected_t = 0;
        while (std::getline(tf, line)) {
            if (line.empty()) continue;
            nlohmann::json jr;
            try {
                jr = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw DataError("corrupt record in " + path.string() + ": " + e.what());
            }
            IOPair p;
            p.t = jr.at("t").get<int>();
            if (p.t != expected_t++)
                throw DataError("non-contiguous ticks in " + path.string());
            const auto& ji = jr.at("i");
            const auto& jo = jr.at("o");
            p.input = {ji[0].get<double>(), ji[1].get<double>(), ji[2].get<double>()};
            p.output = {jo[0].get<double>(), jo[1].get<double>(), jo[2].get<double>()};
            traj.pairs.push_back(p);
        }
        const std::string stem = path.stem().string();  // traj_<id>
        traj.machine_id = std::stoi(stem.substr(5));
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

}  // namespace tom
