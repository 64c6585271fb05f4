#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tom/splitmix64.hpp"

namespace tom {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr double kTickDt = 0.1;       // 10 Hz
constexpr double kGravity = 9.81;
constexpr double kAmbientTemp = 300.0;

enum class MachineClass { SUV, HATCH, SPORT, GT, TRACK, LTI, STATELESS };

inline const char* class_name(MachineClass c) {
    switch (c) {
        case MachineClass::SUV: return "SUV";
        case MachineClass::HATCH: return "HATCH";
        case MachineClass::SPORT: return "SPORT";
        case MachineClass::GT: return "GT";
        case MachineClass::TRACK: return "TRACK";
        case MachineClass::LTI: return "LTI";
        case MachineClass::STATELESS: return "STATELESS";
    }
    return "?";
}

inline MachineClass class_from_name(const std::string& s) {
    for (MachineClass c : {MachineClass::SUV, MachineClass::HATCH, MachineClass::SPORT,
                           MachineClass::GT, MachineClass::TRACK, MachineClass::LTI,
                           MachineClass::STATELESS})
        if (s == class_name(c)) return c;
    throw ValidationError("unknown machine class: " + s);
}

struct VehicleParams {
    double mass = 0;        // kg
    double f_max = 0;       // N, peak drive force
    double b_max = 0;       // N, peak brake force
    double mu0 = 0;         // baseline grip
    double c_drag = 0;      // N s^2 / m^2
    double c_rr = 0;        // rolling resistance
    double wheelbase = 0;   // m
    double delta_max = 0;   // rad
    double v_max = 0;       // m/s
    double t_opt = 0;       // K
    double k_heat = 0;
    double k_cool = 0;
    double k_temp_sens = 0;
    double slope_amp = 0;
    double slope_period = 0;  // m
    int year = 0;             // nuisance tag, never enters dynamics

    bool operator==(const VehicleParams&) const = default;
};

struct VehicleState {
    double pos_x = 0, pos_y = 0, pos_z = 0;
    double heading = 0;
    double speed = 0;
    double arc_length = 0;
    double tire_temp = kAmbientTemp;
    double a_thr = 0, a_brk = 0, a_str = 0;
};

struct LtiParams {
    std::array<double, 16> a{};  // 4x4 row-major
    std::array<double, 12> b{};  // 4x3
    std::array<double, 12> c{};  // 3x4
    std::array<double, 9> d{};   // 3x3

    bool operator==(const LtiParams&) const = default;
};

struct StatelessParams {
    std::array<double, 9> w{};  // 3x3
    bool linear = false;        // identity activation instead of tanh

    bool operator==(const StatelessParams&) const = default;
};

using MachineParams = std::variant<VehicleParams, LtiParams, StatelessParams>;

struct MachineSpec {
    int machine_id = -1;
    MachineClass cls = MachineClass::SUV;
    MachineParams params;
    uint64_t seed = 0;
};

struct ControlDelta {
    double d_throttle = 0, d_brake = 0, d_steer = 0;
};

struct MotionDelta {
    double dx = 0, dy = 0, dz = 0;
};

constexpr double kControlBound = 0.2;

inline void validate_control(const ControlDelta& u) {
    for (double v : {u.d_throttle, u.d_brake, u.d_steer})
        if (!(v >= -kControlBound && v <= kControlBound))
            throw ValidationError("control delta component out of [-0.2, 0.2]: " +
                                  std::to_string(v));
}

inline void validate_spec(const MachineSpec& spec) {
    if (const auto* p = std::get_if<VehicleParams>(&spec.params)) {
        const double positives[] = {p->mass,  p->f_max,  p->b_max,      p->mu0,
                                    p->c_drag, p->c_rr,   p->wheelbase,  p->delta_max,
                                    p->v_max, p->t_opt,  p->k_heat,     p->k_cool,
                                    p->k_temp_sens, p->slope_amp, p->slope_period};
        for (double v : positives)
            if (!(v > 0.0)) throw ValidationError("vehicle parameter must be positive");
        if (p->mu0 < 0.5 || p->mu0 > 2.5) throw ValidationError("mu0 outside [0.5, 2.5]");
        if (p->year < 1960 || p->year > 2020) throw ValidationError("year outside [1960, 2020]");
    }
}

inline double clampd(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

// One parameterized deterministic machine behind a uniform reset/step
// interface. Single-owner mutable state.
class Machine {
public:
    explicit Machine(MachineSpec spec) : spec_(std::move(spec)) {
        validate_spec(spec_);
        reset();
    }

    const MachineSpec& spec() const { return spec_; }
    const VehicleState& vehicle_state() const { return vs_; }

    void reset() {
        vs_ = VehicleState{};
        lti_state_ = {0, 0, 0, 0};
    }

    MotionDelta step(const ControlDelta& u) {
        validate_control(u);
        if (std::holds_alternative<VehicleParams>(spec_.params))
            return step_vehicle(std::get<VehicleParams>(spec_.params), u);
        if (std::holds_alternative<LtiParams>(spec_.params))
            return step_lti(std::get<LtiParams>(spec_.params), u);
        return step_stateless(std::get<StatelessParams>(spec_.params), u);
    }

private:
    // Semi-implicit Euler, fixed evaluation order. year is never read.
    MotionDelta step_vehicle(const VehicleParams& p, const ControlDelta& u) {
        vs_.a_thr = clampd(vs_.a_thr + u.d_throttle, 0.0, 1.0);
        vs_.a_brk = clampd(vs_.a_brk + u.d_brake, 0.0, 1.0);
        vs_.a_str = clampd(vs_.a_str + u.d_steer, -1.0, 1.0);

        const double mu_eff =
            p.mu0 * clampd(1.0 - p.k_temp_sens * std::fabs(vs_.tire_temp - p.t_opt) / p.t_opt,
                           0.5, 1.0);

        const double f_drive = vs_.a_thr * p.f_max * std::max(0.0, 1.0 - vs_.speed / p.v_max);
        const double f_brake = vs_.a_brk * p.b_max * (vs_.speed > 0.0 ? 1.0 : 0.0);
        const double f_resist = p.c_drag * vs_.speed * vs_.speed +
                                p.c_rr * p.mass * kGravity * (vs_.speed > 0.0 ? 1.0 : 0.0);

        const double a_long = clampd((f_drive - f_brake - f_resist) / p.mass,
                                     -mu_eff * kGravity, mu_eff * kGravity);
        vs_.speed = std::max(0.0, vs_.speed + a_long * kTickDt);

        const double delta = p.delta_max * vs_.a_str;
        double r = vs_.speed * std::tan(delta) / p.wheelbase;
        if (std::fabs(vs_.speed * r) > mu_eff * kGravity)
            r = (r < 0 ? -1.0 : 1.0) * mu_eff * kGravity / std::max(vs_.speed, 1e-6);
        vs_.heading += r * kTickDt;

        vs_.tire_temp += kTickDt * (p.k_heat * (std::fabs(a_long) + std::fabs(vs_.speed * r)) *
                                        vs_.speed -
                                    p.k_cool * (vs_.tire_temp - kAmbientTemp));

        MotionDelta o;
        o.dx = vs_.speed * std::cos(vs_.heading) * kTickDt;
        o.dy = vs_.speed * std::sin(vs_.heading) * kTickDt;
        vs_.arc_length += vs_.speed * kTickDt;
        o.dz = p.slope_amp * std::sin(2.0 * std::numbers::pi * vs_.arc_length / p.slope_period) *
               vs_.speed * kTickDt;
        vs_.pos_x += o.dx;
        vs_.pos_y += o.dy;
        vs_.pos_z += o.dz;
        return o;
    }

    // y = C x + D u, then x <- A x + B u.
    MotionDelta step_lti(const LtiParams& p, const ControlDelta& u) {
        const double uv[3] = {u.d_throttle, u.d_brake, u.d_steer};
        double y[3];
        for (int i = 0; i < 3; ++i) {
            double acc = 0.0;
            for (int j = 0; j < 4; ++j) acc += p.c[i * 4 + j] * lti_state_[static_cast<size_t>(j)];
            for (int j = 0; j < 3; ++j) acc += p.d[i * 3 + j] * uv[j];
            y[i] = acc;
        }
        std::array<double, 4> next{};
        for (int i = 0; i < 4; ++i) {
            double acc = 0.0;
            for (int j = 0; j < 4; ++j) acc += p.a[i * 4 + j] * lti_state_[static_cast<size_t>(j)];
            for (int j = 0; j < 3; ++j) acc += p.b[i * 3 + j] * uv[j];
            next[static_cast<size_t>(i)] = acc;
        }
        lti_state_ = next;
        return {y[0], y[1], y[2]};
    }

    MotionDelta step_stateless(const StatelessParams& p, const ControlDelta& u) {
        const double uv[3] = {u.d_throttle, u.d_brake, u.d_steer};
        double y[3];
        for (int i = 0; i < 3; ++i) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) acc += p.w[i * 3 + j] * uv[j];
            y[i] = (p.linear ? acc : std::tanh(acc)) * 2.0;
        }
        return {y[0], y[1], y[2]};
    }

    MachineSpec spec_;
    VehicleState vs_;
    std::array<double, 4> lti_state_{};
};

namespace detail {

struct ClassRanges {
    double mass_lo, mass_hi;
    double fmax_lo, fmax_hi;  // N
    double mu_lo, mu_hi;
};

inline ClassRanges ranges_for(MachineClass c) {
    switch (c) {
        case MachineClass::SUV: return {2000, 2500, 4000, 6000, 0.8, 0.9};
        case MachineClass::HATCH: return {1100, 1400, 3000, 5000, 0.9, 1.0};
        case MachineClass::SPORT: return {1300, 1600, 6000, 9000, 1.0, 1.2};
        case MachineClass::GT: return {1400, 1600, 8000, 11000, 1.1, 1.3};
        case MachineClass::TRACK: return {600, 800, 12000, 16000, 1.6, 2.0};
        default: throw ValidationError("no vehicle ranges for ablation class");
    }
}

// Spectral radius estimate by power iteration, fixed seeded start.
inline double spectral_radius_estimate(const std::array<double, 16>& a) {
    std::array<double, 4> v{1.0, 0.5, -0.25, 0.125};
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    // geometric mean of the step ratios after a burn-in; a single final
    // ratio oscillates when the dominant eigenvalue is a complex pair
    double log_sum = 0.0;
    int counted = 0;
    for (int it = 0; it < 100; ++it) {
        std::array<double, 4> w{};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                w[static_cast<size_t>(i)] += a[i * 4 + j] * v[static_cast<size_t>(j)];
        double wn = 0.0;
        for (double x : w) wn += x * x;
        wn = std::sqrt(wn);
        if (wn < 1e-300) return 0.0;
        if (it >= 50) {
            log_sum += std::log(wn);
            ++counted;
        }
        for (int i = 0; i < 4; ++i) v[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] / wn;
    }
    return std::exp(log_sum / counted);
}

}  // namespace detail

// Sampling order per vehicle: mass, f_max, mu0, c_drag, c_rr, wheelbase,
// delta_max, v_max, t_opt, k_heat, k_cool, k_temp_sens, year.
// slope_amp and slope_period are shared per fleet, drawn first from the
// fleet-level stream.
inline std::vector<MachineSpec> spawn_fleet(uint64_t fleet_seed,
                                            const std::map<MachineClass, int>& counts) {
    SplitMix64 fleet_rng(mix_seed({fleet_seed, 0xF1EE7ULL}));
    const double slope_amp = fleet_rng.uniform(0.05, 0.08);
    const double slope_period = fleet_rng.uniform(400.0, 600.0);

    std::vector<MachineSpec> fleet;
    int next_id = 0;
    for (MachineClass c : {MachineClass::SUV, MachineClass::HATCH, MachineClass::SPORT,
                           MachineClass::GT, MachineClass::TRACK, MachineClass::LTI,
                           MachineClass::STATELESS}) {
        auto it = counts.find(c);
        if (it == counts.end()) continue;
        if (it->second < 0) throw ValidationError("negative machine count");
        for (int k = 0; k < it->second; ++k) {
            MachineSpec spec;
            spec.machine_id = next_id++;
            spec.cls = c;
            spec.seed = mix_seed({fleet_seed, static_cast<uint64_t>(spec.machine_id)});
            SplitMix64 rng(spec.seed);
            if (c == MachineClass::LTI) {
                LtiParams p;
                for (double& x : p.a) x = rng.symmetric();
                for (double& x : p.b) x = rng.symmetric();
                for (double& x : p.c) x = rng.symmetric();
                for (double& x : p.d) x = rng.symmetric();
                const double rho = detail::spectral_radius_estimate(p.a);
                if (rho > 1e-12) {
                    const double scale = 0.95 / rho;
                    for (double& x : p.a) x *= scale;
                }
                spec.params = p;
            } else if (c == MachineClass::STATELESS) {
                StatelessParams p;
                for (double& x : p.w) x = rng.symmetric();
                spec.params = p;
            } else {
                const auto r = detail::ranges_for(c);
                VehicleParams p;
                p.mass = rng.uniform(r.mass_lo, r.mass_hi);
                p.f_max = rng.uniform(r.fmax_lo, r.fmax_hi);
                p.b_max = 1.5 * p.f_max;
                p.mu0 = rng.uniform(r.mu_lo, r.mu_hi);
                p.c_drag = rng.uniform(0.3, 0.5);
                p.c_rr = rng.uniform(0.01, 0.02);
                p.wheelbase = rng.uniform(2.4, 3.0);
                p.delta_max = rng.uniform(0.4, 0.6);
                p.v_max = rng.uniform(40.0, 90.0);
                p.t_opt = rng.uniform(350.0, 380.0);
                p.k_heat = rng.uniform(0.02, 0.05);
                p.k_cool = rng.uniform(0.05, 0.1);
                p.k_temp_sens = rng.uniform(0.5, 1.0);
                p.slope_amp = slope_amp;
                p.slope_period = slope_period;
                p.year = 1960 + static_cast<int>(rng.next_double() * 61.0);
                spec.params = p;
            }
            fleet.push_back(std::move(spec));
        }
    }
    return fleet;
}

}  // namespace tom
