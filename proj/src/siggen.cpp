#include "ct/siggen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "ct/dataset.hpp"
#include "ct/metrics.hpp"
#include "ct/rng.hpp"

namespace ct::gen {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double rms(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

void normalize_rms(std::vector<double>& x) {
    const double r = rms(x);
    if (r > 0) {
        const double inv = 1.0 / r;
        for (double& v : x) v *= inv;
    }
}

void add_noise_at_snr(std::vector<double>& x, double snr_db, Pcg32& rng) {
    const double sig = rms(x);
    const double noise_rms = sig * std::pow(10.0, -snr_db / 20.0);
    for (double& v : x) v += noise_rms * rng.normal();
}

// Per-rotor direction tilt patterns (quadrotor trim geometry).
constexpr double kDirPattern[6][4] = {
    {-1, -1, +1, +1},  // forward
    {+1, +1, -1, -1},  // backward
    {-1, +1, -1, +1},  // left
    {+1, -1, +1, -1},  // right
    {+1, -1, -1, +1},  // cw
    {-1, +1, +1, -1},  // ccw
};

}  // namespace

Benchmark benchmark_from_string(const std::string& s) {
    if (s == "drone") return Benchmark::drone;
    if (s == "motor") return Benchmark::motor;
    throw ConfigError("unknown benchmark '" + s + "'");
}

GenSpec GenSpec::defaults(Benchmark b) {
    GenSpec s;
    s.benchmark = b;
    if (b == Benchmark::drone) {
        s.sample_rate = 16000.0;
        s.target_main_ibr = 15.57;
        s.total_samples = 1414;
    } else {
        s.sample_rate = 8000.0;
        s.target_main_ibr = 18.15;
        s.total_samples = 2000;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Drone benchmark.

dsp::Waveform generate_drone(const DroneLabel& label, const GenSpec& spec,
                             std::int64_t sample_index) {
    if (label.fault < 0 || label.fault >= 9 || label.type < 0 || label.type >= 3 ||
        label.direction < 0 || label.direction >= 6)
        throw LabelError("generate_drone: label out of range");
    const auto& C = spec.drone;
    const double sr = spec.sample_rate;
    const auto L = static_cast<std::int64_t>(spec.duration * sr);
    Pcg32 rng(mix_seed(spec.seed, "sample", static_cast<std::uint64_t>(sample_index)));

    const double f0 = C.type_f0[static_cast<std::size_t>(label.type)];
    const bool dent = label.fault >= 1 && label.fault <= 4;
    const bool cut = label.fault >= 5;
    const int fault_rotor = dent ? label.fault - 1 : (cut ? label.fault - 5 : -1);

    std::vector<double> x(static_cast<std::size_t>(L), 0.0);
    for (int r = 0; r < 4; ++r) {
        const double tilt = kDirPattern[label.direction][r];
        const double fr = f0 * (1.0 + C.rotor_trim[static_cast<std::size_t>(r)] +
                                C.direction_freq_tilt * tilt);
        double amp_r = 0.25 * (1.0 + C.direction_amp_tilt * tilt);
        if (cut && r == fault_rotor) amp_r *= C.cut_fundamental_drop;

        // per-rotor, per-harmonic amplitudes: type envelope x rotor coloring
        const int H = C.harmonics;
        std::vector<double> amp_h(static_cast<std::size_t>(H));
        for (int h = 1; h <= H; ++h) {
            double a;
            switch (label.type) {
                case 0: a = 1.0 / h; break;                                  // plain decay
                case 1: a = (h % 2 == 0 ? 1.5 : 1.0) / std::pow(h, 0.6); break;  // even comb
                default: a = (h == 3 ? 2.0 : 1.0) / std::pow(h, 1.4); break;     // resonant 3rd
            }
            a *= 1.0 + C.rotor_color * std::cos(3.14159265358979 * h * (r + 1) / 4.0 + 0.7 * r);
            amp_h[static_cast<std::size_t>(h - 1)] = a;
        }

        std::vector<double> phase(static_cast<std::size_t>(H));
        for (auto& p : phase) p = rng.uniform(0.0, kTwoPi);

        const bool dent_here = dent && r == fault_rotor;
        const double dent_d = dent_here ? C.dent_depth[static_cast<std::size_t>(label.fault - 1)] : 0.0;
        const double dent_ph = dent_here ? C.dent_phase[static_cast<std::size_t>(label.fault - 1)] : 0.0;

        const bool cut_here = cut && r == fault_rotor;
        const double cut_depth_scale = cut_here ? 1.0 + 0.15 * (label.fault - 5) : 0.0;
        const double sub_phase = rng.uniform(0.0, kTwoPi);

        for (std::int64_t i = 0; i < L; ++i) {
            const double t = static_cast<double>(i) / sr;
            double s = 0.0;
            for (int h = 1; h <= H; ++h)
                s += amp_h[static_cast<std::size_t>(h - 1)] *
                     std::sin(kTwoPi * h * fr * t + phase[static_cast<std::size_t>(h - 1)]);
            if (dent_here)
                s *= 1.0 + dent_d * std::cos(kTwoPi * fr * t + phase[0] + dent_ph);
            if (cut_here) {
                s += C.cut_sub_amp * cut_depth_scale * std::sin(kTwoPi * 0.5 * fr * t + sub_phase);
                for (int h = 1; h <= 4; ++h)
                    s += (C.cut_sideband_amp * cut_depth_scale / h) *
                         std::sin(kTwoPi * (h + 0.5) * fr * t + phase[static_cast<std::size_t>(h - 1)] +
                                  sub_phase);
            }
            x[static_cast<std::size_t>(i)] += amp_r * s;
        }
        if (cut_here) {
            const double extra = C.cut_noise_raise * amp_r;
            for (auto& v : x) v += extra * rng.normal();
        }
    }

    add_noise_at_snr(x, rng.uniform(spec.snr_db_lo, spec.snr_db_hi), rng);
    normalize_rms(x);

    dsp::Waveform w;
    w.channels = 1;
    w.sample_rate = sr;
    w.samples.resize(static_cast<std::size_t>(L));
    for (std::int64_t i = 0; i < L; ++i)
        w.samples[static_cast<std::size_t>(i)] = static_cast<float>(x[static_cast<std::size_t>(i)]);
    return w;
}

// ---------------------------------------------------------------------------
// Motor benchmark.

namespace {

// Adds a decaying resonance burst starting at sample i0.
void add_burst(std::vector<double>& x, std::int64_t i0, double amp, double res_hz, double tau_s,
               double sr, double phase) {
    const auto len = static_cast<std::int64_t>(6.0 * tau_s * sr);
    const auto n = static_cast<std::int64_t>(x.size());
    for (std::int64_t d = 0; d < len && i0 + d < n; ++d) {
        const double t = static_cast<double>(d) / sr;
        x[static_cast<std::size_t>(i0 + d)] +=
            amp * std::exp(-t / tau_s) * std::sin(kTwoPi * res_hz * t + phase);
    }
}

double triangle(double phase01) {
    const double p = phase01 - std::floor(phase01);
    return p < 0.5 ? 4.0 * p - 1.0 : 3.0 - 4.0 * p;
}

}  // namespace

dsp::Waveform generate_motor(const MotorLabel& label, const GenSpec& spec,
                             std::int64_t sample_index) {
    if (label.irf < 0 || label.irf >= 2 || label.orf < 0 || label.orf >= 2 || label.mis < 0 ||
        label.mis >= 3 || label.unb < 0 || label.unb >= 3)
        throw LabelError("generate_motor: severity index out of range");
    const auto& C = spec.motor;
    const double sr = spec.sample_rate;
    const auto L = static_cast<std::int64_t>(spec.duration * sr);
    Pcg32 rng(mix_seed(spec.seed, "sample", static_cast<std::uint64_t>(sample_index)));

    const double irf_lvl = label.irf;                       // {0, 1}
    const double orf_lvl = label.orf;                       // {0, 1}
    const double mis_lvl = label.mis * 0.5;                 // {0, 0.5, 1}
    const double unb_lvl = label.unb == 0 ? 0.0 : (label.unb == 1 ? 10.0 / 18.0 : 1.0);

    const double base_hz =
        C.shaft_hz * (1.0 + C.base_speed_jitter * rng.uniform(-1.0, 1.0));
    const double prof_phase = rng.uniform(0.0, 1.0);

    // Instantaneous shaft frequency and accumulated phase.
    std::vector<double> shaft_hz(static_cast<std::size_t>(L));
    std::vector<double> theta(static_cast<std::size_t>(L));
    double acc = rng.uniform(0.0, kTwoPi);
    for (std::int64_t i = 0; i < L; ++i) {
        const double t = static_cast<double>(i) / sr;
        double r = base_hz;
        if (label.rpm == RpmProfile::sinusoidal)
            r *= 1.0 + C.profile_dev * std::sin(kTwoPi * (C.profile_rate_hz * t + prof_phase));
        else if (label.rpm == RpmProfile::triangular)
            r *= 1.0 + C.profile_dev * triangle(C.profile_rate_hz * t + prof_phase);
        shaft_hz[static_cast<std::size_t>(i)] = r;
        theta[static_cast<std::size_t>(i)] = acc;
        acc += kTwoPi * r / sr;
    }

    std::vector<double> x(static_cast<std::size_t>(L), 0.0);

    // Shaft-locked tones. Unbalance scales with r(t)^2; misalignment rides
    // the 2x line with a weaker 1x component; their interaction adds a 3x.
    const double ph2 = rng.uniform(0.0, kTwoPi), ph3 = rng.uniform(0.0, kTwoPi);
    for (std::int64_t i = 0; i < L; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const double r_rel = shaft_hz[ii] / C.shaft_hz;
        const double a1 = C.shaft_1x + C.unb_1x * unb_lvl * r_rel * r_rel + C.mis_1x * mis_lvl;
        const double a2 = C.shaft_2x + C.mis_2x * mis_lvl;
        double s = a1 * std::sin(theta[ii]) + a2 * std::sin(2.0 * theta[ii] + ph2);
        if (mis_lvl > 0 && unb_lvl > 0)
            s += C.mis_unb_3x * mis_lvl * unb_lvl * std::sin(3.0 * theta[ii] + ph3);
        x[ii] += s;
    }

    // Bearing impulse trains. Coupling: unbalance deepens the inner-race
    // load-zone modulation, misalignment modulates the outer-race train and
    // both shift the excited resonances, so no single band isolates one
    // component once several are active.
    const double res_irf = C.res_irf_hz * (1.0 - C.res_cross_shift * orf_lvl) *
                           (1.0 - C.res_mis_shift * mis_lvl);
    const double res_orf = C.res_orf_hz * (1.0 + C.res_cross_shift * irf_lvl) *
                           (1.0 - C.res_mis_shift * mis_lvl);
    if (label.irf) {
        double bphase = rng.uniform(0.0, 1.0);
        for (std::int64_t i = 0; i < L; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            bphase += C.bpfi_ratio * shaft_hz[ii] / sr;
            if (bphase >= 1.0) {
                bphase -= 1.0;
                const double am = (1.0 + C.irf_shaft_am * std::cos(theta[ii])) *
                                  (1.0 + C.irf_unb_am * unb_lvl * std::cos(theta[ii]));
                const double amp = C.irf_burst * irf_lvl * (1.0 - C.irf_mis_unload * mis_lvl) *
                                   am * (1.0 + 0.1 * rng.normal());
                add_burst(x, i, amp, res_irf, C.burst_tau_s, sr, rng.uniform(0.0, kTwoPi));
                add_burst(x, i, amp * C.shared_mode_amp_irf, C.res_shared_hz, C.burst_tau_s, sr,
                          rng.uniform(0.0, kTwoPi));
            }
        }
    }
    if (label.orf) {
        double bphase = rng.uniform(0.0, 1.0);
        for (std::int64_t i = 0; i < L; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            bphase += C.bpfo_ratio * shaft_hz[ii] / sr;
            if (bphase >= 1.0) {
                bphase -= 1.0;
                const double am = 1.0 + C.orf_mis_am * mis_lvl * std::cos(2.0 * theta[ii]);
                const double amp = C.orf_burst * orf_lvl * (1.0 + C.orf_mis_load * mis_lvl) *
                                   am * (1.0 + 0.1 * rng.normal());
                add_burst(x, i, amp, res_orf, C.burst_tau_s, sr, rng.uniform(0.0, kTwoPi));
                add_burst(x, i, amp * C.shared_mode_amp_orf, C.res_shared_hz, C.burst_tau_s, sr,
                          rng.uniform(0.0, kTwoPi));
            }
        }
    }

    // Constant machine pedestal (whine tones + low-passed floor).
    {
        std::array<double, 3> hum_phase{};
        for (auto& p : hum_phase) p = rng.uniform(0.0, kTwoPi);
        double lp_state = 0.0;
        for (std::int64_t i = 0; i < L; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const double t = static_cast<double>(i) / sr;
            double s = 0.0;
            for (int k = 0; k < 3; ++k)
                s += C.hum_amp[static_cast<std::size_t>(k)] *
                     std::sin(kTwoPi * C.hum_hz[static_cast<std::size_t>(k)] * t +
                              hum_phase[static_cast<std::size_t>(k)]);
            lp_state = (1.0 - C.floor_noise_lp) * lp_state +
                       C.floor_noise_lp * C.floor_noise_rms * rng.normal();
            x[ii] += s + lp_state;
        }
    }

    // Two sensors: distinct fixed linear transfer paths over the same
    // mechanical source, independent noise, per-channel RMS normalization.
    std::vector<double> cha(static_cast<std::size_t>(L)), chb(static_cast<std::size_t>(L));
    double lp = 0.0;
    for (std::int64_t i = 0; i < L; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const double prev = i > 0 ? x[ii - 1] : 0.0;
        cha[ii] = x[ii] + C.sensor_a_diff * (x[ii] - prev);
        lp = (1.0 - C.sensor_b_lp) * lp + C.sensor_b_lp * x[ii];
        chb[ii] = lp + C.sensor_b_comb * (i >= 2 ? x[ii - 2] : 0.0);
    }
    const double snr = rng.uniform(spec.snr_db_lo, spec.snr_db_hi);
    add_noise_at_snr(cha, snr, rng);
    add_noise_at_snr(chb, snr, rng);
    normalize_rms(cha);
    normalize_rms(chb);

    dsp::Waveform w;
    w.channels = 2;
    w.sample_rate = sr;
    w.samples.resize(static_cast<std::size_t>(2 * L));
    for (std::int64_t i = 0; i < L; ++i) {
        w.samples[static_cast<std::size_t>(i)] = static_cast<float>(cha[static_cast<std::size_t>(i)]);
        w.samples[static_cast<std::size_t>(L + i)] = static_cast<float>(chb[static_cast<std::size_t>(i)]);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Count solvers.

std::vector<std::int64_t> solve_drone_counts(const GenSpec& spec) {
    if (spec.total_samples < 9 * 18)
        throw ConfigError("drone dataset needs at least " + std::to_string(9 * 18) + " samples");
    const double R = spec.target_main_ibr;
    // 8 fault classes at the small count m, normal at round(R*m).
    const auto m = static_cast<std::int64_t>(
        std::llround(static_cast<double>(spec.total_samples) / (8.0 + R)));
    const std::int64_t big = std::llround(R * static_cast<double>(m));
    std::array<std::int64_t, 9> fault_counts{};
    fault_counts[0] = big;
    for (int i = 1; i < 9; ++i) fault_counts[static_cast<std::size_t>(i)] = m;
    const double achieved = static_cast<double>(big) / static_cast<double>(m);
    if (std::fabs(achieved - R) / R > 0.05)
        throw ConfigError("cannot hit drone IBR " + std::to_string(R) + "; closest counts " +
                          std::to_string(big) + "/" + std::to_string(m) + " give " +
                          std::to_string(achieved));

    // Auxiliary marginals near the benchmark ratios 1.03 (type) and 1.06
    // (direction): largest-remainder apportionment within each fault class.
    const double tw[3] = {1.03, 1.0, 1.0};
    const double dw[6] = {1.06, 1.0, 1.0, 1.0, 1.0, 1.0};
    const double tsum = tw[0] + tw[1] + tw[2];
    double dsum = 0;
    for (double v : dw) dsum += v;

    std::vector<std::int64_t> cells(9 * 18, 0);
    for (int f = 0; f < 9; ++f) {
        const std::int64_t n = fault_counts[static_cast<std::size_t>(f)];
        std::array<double, 18> frac{};
        std::array<std::int64_t, 18> cnt{};
        std::int64_t assigned = 0;
        for (int ty = 0; ty < 3; ++ty)
            for (int d = 0; d < 6; ++d) {
                const double target = static_cast<double>(n) * (tw[ty] / tsum) * (dw[d] / dsum);
                const auto c = static_cast<std::int64_t>(target);
                cnt[static_cast<std::size_t>(ty * 6 + d)] = c;
                frac[static_cast<std::size_t>(ty * 6 + d)] = target - static_cast<double>(c);
                assigned += c;
            }
        std::array<int, 18> order{};
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&frac](int a, int b) { return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)]; });
        for (std::int64_t k = 0; k < n - assigned; ++k)
            ++cnt[static_cast<std::size_t>(order[static_cast<std::size_t>(k % 18)])];
        for (int c = 0; c < 18; ++c) cells[static_cast<std::size_t>(f * 18 + c)] = cnt[static_cast<std::size_t>(c)];
    }

    // Rounding in the per-class apportionment drifts the auxiliary marginals;
    // repair by moving samples between cells of the same fault class until
    // the type/direction marginals track their target proportions.
    const double total = static_cast<double>(big + 8 * m);
    auto cell = [&cells](int f, int ty, int d) -> std::int64_t& {
        return cells[static_cast<std::size_t>(f * 18 + ty * 6 + d)];
    };
    for (int pass = 0; pass < 400; ++pass) {
        std::array<std::int64_t, 3> type_cnt{};
        std::array<std::int64_t, 6> dir_cnt{};
        for (int f = 0; f < 9; ++f)
            for (int ty = 0; ty < 3; ++ty)
                for (int d = 0; d < 6; ++d) {
                    type_cnt[static_cast<std::size_t>(ty)] += cell(f, ty, d);
                    dir_cnt[static_cast<std::size_t>(d)] += cell(f, ty, d);
                }
        double worst = 0.0;
        int kind = -1, from = -1, to = -1;
        for (int ty = 0; ty < 3; ++ty)
            for (int ty2 = 0; ty2 < 3; ++ty2) {
                const double dev = (static_cast<double>(type_cnt[static_cast<std::size_t>(ty)]) -
                                    total * tw[ty] / tsum) -
                                   (static_cast<double>(type_cnt[static_cast<std::size_t>(ty2)]) -
                                    total * tw[ty2] / tsum);
                if (dev > worst) {
                    worst = dev;
                    kind = 0;
                    from = ty;
                    to = ty2;
                }
            }
        for (int d = 0; d < 6; ++d)
            for (int d2 = 0; d2 < 6; ++d2) {
                const double dev = (static_cast<double>(dir_cnt[static_cast<std::size_t>(d)]) -
                                    total * dw[d] / dsum) -
                                   (static_cast<double>(dir_cnt[static_cast<std::size_t>(d2)]) -
                                    total * dw[d2] / dsum);
                if (dev > worst) {
                    worst = dev;
                    kind = 1;
                    from = d;
                    to = d2;
                }
            }
        if (kind < 0 || worst <= 1.0) break;
        bool moved = false;
        for (int f = 0; f < 9 && !moved; ++f) {
            if (kind == 0) {
                for (int d = 0; d < 6 && !moved; ++d)
                    if (cell(f, from, d) > 1) {
                        --cell(f, from, d);
                        ++cell(f, to, d);
                        moved = true;
                    }
            } else {
                for (int ty = 0; ty < 3 && !moved; ++ty)
                    if (cell(f, ty, from) > 1) {
                        --cell(f, ty, from);
                        ++cell(f, ty, to);
                        moved = true;
                    }
            }
        }
        if (!moved) break;
    }
    return cells;
}

namespace {

struct MotorSolve {
    std::array<std::int64_t, 36> counts;
    double compound_ibr;
    std::array<double, 4> comp_ibrs;
};

// IPF against the component marginals with the healthy cell boosted by
// `boost`, rounded to integers totaling `total`.
MotorSolve motor_counts_for_boost(int total, double boost,
                                  const std::array<std::vector<double>, 4>& marg) {
    std::array<double, 36> cell{};
    for (int i = 0; i < 36; ++i) cell[static_cast<std::size_t>(i)] = 1.0;
    cell[0] = boost;

    for (int it = 0; it < 300; ++it) {
        for (int comp = 0; comp < 4; ++comp) {
            const auto& target = marg[static_cast<std::size_t>(comp)];
            std::vector<double> cur(target.size(), 0.0);
            for (int i = 0; i < 36; ++i)
                cur[static_cast<std::size_t>(metrics::decompose_compound(i)[static_cast<std::size_t>(comp)])] +=
                    cell[static_cast<std::size_t>(i)];
            for (int i = 0; i < 36; ++i) {
                const int lev = metrics::decompose_compound(i)[static_cast<std::size_t>(comp)];
                cell[static_cast<std::size_t>(i)] *=
                    target[static_cast<std::size_t>(lev)] / cur[static_cast<std::size_t>(lev)];
            }
        }
    }
    double sum = 0;
    for (double v : cell) sum += v;
    // largest-remainder rounding to the exact total
    std::array<std::int64_t, 36> counts{};
    std::array<double, 36> frac{};
    std::int64_t assigned = 0;
    for (int i = 0; i < 36; ++i) {
        const double scaled = cell[static_cast<std::size_t>(i)] * total / sum;
        counts[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(scaled);
        frac[static_cast<std::size_t>(i)] = scaled - static_cast<double>(counts[static_cast<std::size_t>(i)]);
        assigned += counts[static_cast<std::size_t>(i)];
    }
    std::array<int, 36> order{};
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&frac](int a, int b) {
        return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)];
    });
    for (std::int64_t k = 0; k < total - assigned; ++k)
        ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];

    // Stratified 60/20/20 needs a few samples per cell; lift tiny cells by
    // draining the largest non-healthy cell (tolerances absorb the drift).
    for (int guard = 0; guard < 200; ++guard) {
        int lo = 1;
        for (int i = 2; i < 36; ++i)
            if (counts[static_cast<std::size_t>(i)] < counts[static_cast<std::size_t>(lo)]) lo = i;
        if (counts[static_cast<std::size_t>(lo)] >= 5) break;
        int hi = 1;
        for (int i = 2; i < 36; ++i)
            if (counts[static_cast<std::size_t>(i)] > counts[static_cast<std::size_t>(hi)]) hi = i;
        if (counts[static_cast<std::size_t>(hi)] <= 5) break;
        --counts[static_cast<std::size_t>(hi)];
        ++counts[static_cast<std::size_t>(lo)];
    }

    MotorSolve out;
    out.counts = counts;
    std::int64_t lo = counts[0], hi = counts[0];
    for (auto c : counts) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    out.compound_ibr = lo > 0 ? static_cast<double>(hi) / static_cast<double>(lo) : 1e9;
    for (int comp = 0; comp < 4; ++comp) {
        std::vector<std::int64_t> m(marg[static_cast<std::size_t>(comp)].size(), 0);
        for (int i = 0; i < 36; ++i)
            m[static_cast<std::size_t>(metrics::decompose_compound(i)[static_cast<std::size_t>(comp)])] +=
                counts[static_cast<std::size_t>(i)];
        std::int64_t mlo = m[0], mhi = m[0];
        for (auto c : m) {
            mlo = std::min(mlo, c);
            mhi = std::max(mhi, c);
        }
        out.comp_ibrs[static_cast<std::size_t>(comp)] =
            static_cast<double>(mhi) / static_cast<double>(mlo);
    }
    return out;
}

}  // namespace

std::array<std::int64_t, 36> solve_motor_counts(const GenSpec& spec) {
    const int total = spec.total_samples;
    if (total < 36 * 5) throw ConfigError("motor dataset needs at least 180 samples");
    // Component IBR targets (largest class = healthy level 0).
    const std::array<std::vector<double>, 4> marg = {
        std::vector<double>{1.68, 1.0},
        std::vector<double>{1.68, 1.0},
        std::vector<double>{1.06, 1.03, 1.0},
        std::vector<double>{1.18, 1.09, 1.0},
    };
    const double target = spec.target_main_ibr;
    double lo = 1.0, hi = 400.0;
    MotorSolve best = motor_counts_for_boost(total, hi, marg);
    if (best.compound_ibr < target)
        throw ConfigError("compound IBR " + std::to_string(target) +
                          " unreachable at this dataset size; closest achievable " +
                          std::to_string(best.compound_ibr));
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        MotorSolve s = motor_counts_for_boost(total, mid, marg);
        if (s.compound_ibr < target) lo = mid;
        else hi = mid;
        best = s;
    }
    best = motor_counts_for_boost(total, hi, marg);

    const auto check = [&](double achieved, double want, const char* what) {
        if (std::fabs(achieved - want) / want > 0.05)
            throw ConfigError(std::string("cannot hit ") + what + " IBR " + std::to_string(want) +
                              "; closest " + std::to_string(achieved));
    };
    check(best.compound_ibr, target, "compound");
    check(best.comp_ibrs[0], 1.68, "irf");
    check(best.comp_ibrs[1], 1.68, "orf");
    check(best.comp_ibrs[2], 1.06, "misalignment");
    check(best.comp_ibrs[3], 1.18, "unbalance");
    for (auto c : best.counts)
        if (c < 5)
            throw ConfigError("motor cell count " + std::to_string(c) +
                              " too small for stratified splits; increase total_samples");
    return best.counts;
}

// ---------------------------------------------------------------------------
// Dataset assembly.

namespace {

void stratified_split(std::vector<data::ManifestRow>& rows,
                      const std::vector<std::vector<std::size_t>>& strata, std::uint64_t seed) {
    Pcg32 rng(mix_seed(seed, "split"));
    for (const auto& stratum : strata) {
        std::vector<std::size_t> order = stratum;
        rng.shuffle(order.begin(), order.end());
        const auto n = static_cast<std::int64_t>(order.size());
        auto n_train = static_cast<std::int64_t>(std::llround(0.6 * static_cast<double>(n)));
        auto n_val = static_cast<std::int64_t>(std::llround(0.2 * static_cast<double>(n)));
        n_train = std::max<std::int64_t>(1, n_train);
        n_val = std::max<std::int64_t>(1, std::min(n_val, n - n_train - 1));
        for (std::int64_t k = 0; k < n; ++k) {
            auto& row = rows[order[static_cast<std::size_t>(k)]];
            row.split = k < n_train ? data::Split::train
                                    : (k < n_train + n_val ? data::Split::val : data::Split::test);
        }
    }
}

}  // namespace

BuildReport build_dataset(const GenSpec& spec, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "signals");

    data::DatasetManifest manifest;
    manifest.root = out_dir;
    BuildReport report;

    if (spec.benchmark == Benchmark::drone) {
        manifest.tasks = {
            {"fault", {kDroneFaultNames.begin(), kDroneFaultNames.end()}, true},
            {"drone_type", {kDroneTypeNames.begin(), kDroneTypeNames.end()}, false},
            {"direction", {kDroneDirectionNames.begin(), kDroneDirectionNames.end()}, false},
        };
        const auto cells = solve_drone_counts(spec);
        std::int64_t index = 0;
        for (int f = 0; f < 9; ++f)
            for (int ty = 0; ty < 3; ++ty)
                for (int d = 0; d < 6; ++d)
                    for (std::int64_t k = 0; k < cells[static_cast<std::size_t>(f * 18 + ty * 6 + d)];
                         ++k) {
                        char id[32];
                        std::snprintf(id, sizeof(id), "drone-%06lld",
                                      static_cast<long long>(index));
                        DroneLabel label{f, ty, d};
                        write_sigf(out_dir / "signals" / (std::string(id) + ".sigf"),
                                   generate_drone(label, spec, index));
                        data::ManifestRow row;
                        row.id = id;
                        row.signal_path = "signals/" + std::string(id) + ".sigf";
                        row.labels = {f, ty, d};
                        manifest.rows.push_back(std::move(row));
                        ++index;
                    }
        // stratify on the evaluated (fault) labeling
        std::vector<std::vector<std::size_t>> strata(9);
        for (std::size_t i = 0; i < manifest.rows.size(); ++i)
            strata[static_cast<std::size_t>(manifest.rows[i].labels[0])].push_back(i);
        stratified_split(manifest.rows, strata, spec.seed);

        manifest.validate();
        report.main_ibr = metrics::imbalance_ratio(manifest.label_counts(0));
        report.aux_ibrs = {metrics::imbalance_ratio(manifest.label_counts(1)),
                           metrics::imbalance_ratio(manifest.label_counts(2))};
    } else {
        manifest.tasks = {
            {"irf", {kIrfClassNames.begin(), kIrfClassNames.end()}, true},
            {"orf", {kOrfClassNames.begin(), kOrfClassNames.end()}, true},
            {"misalignment", {kMisClassNames.begin(), kMisClassNames.end()}, true},
            {"unbalance", {kUnbClassNames.begin(), kUnbClassNames.end()}, true},
        };
        manifest.covariate_columns = {"rpm_profile"};
        const auto cells = solve_motor_counts(spec);
        std::int64_t index = 0;
        for (int cell = 0; cell < 36; ++cell) {
            const auto comp = metrics::decompose_compound(cell);
            for (std::int64_t k = 0; k < cells[static_cast<std::size_t>(cell)]; ++k) {
                char id[32];
                std::snprintf(id, sizeof(id), "motor-%06lld", static_cast<long long>(index));
                MotorLabel label;
                label.irf = comp[0];
                label.orf = comp[1];
                label.mis = comp[2];
                label.unb = comp[3];
                label.rpm = static_cast<RpmProfile>(k % 3);  // profiles cycle within each cell
                write_sigf(out_dir / "signals" / (std::string(id) + ".sigf"),
                           generate_motor(label, spec, index));
                data::ManifestRow row;
                row.id = id;
                row.signal_path = "signals/" + std::string(id) + ".sigf";
                row.labels = {comp[0], comp[1], comp[2], comp[3]};
                row.covariates = {kRpmProfileNames[static_cast<std::size_t>(label.rpm)]};
                manifest.rows.push_back(std::move(row));
                ++index;
            }
        }
        // stratify on the compound labeling
        std::vector<std::vector<std::size_t>> strata(36);
        for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
            const auto& l = manifest.rows[i].labels;
            strata[static_cast<std::size_t>(metrics::aggregate_compound(l[0], l[1], l[2], l[3]))]
                .push_back(i);
        }
        stratified_split(manifest.rows, strata, spec.seed);

        manifest.validate();
        std::vector<std::int64_t> compound_counts(36, 0);
        for (const auto& r : manifest.rows)
            ++compound_counts[static_cast<std::size_t>(
                metrics::aggregate_compound(r.labels[0], r.labels[1], r.labels[2], r.labels[3]))];
        report.main_ibr = metrics::imbalance_ratio(compound_counts);
        for (int t = 0; t < 4; ++t)
            report.aux_ibrs.push_back(metrics::imbalance_ratio(manifest.label_counts(t)));
    }

    report.total = static_cast<int>(manifest.rows.size());
    report.manifest_path = out_dir / "manifest.csv";
    manifest.save(report.manifest_path);
    return report;
}

// ---------------------------------------------------------------------------
// Signal container io.

void write_sigf(const std::filesystem::path& path, const dsp::Waveform& w) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write signal: " + path.string());
    const std::uint16_t version = 1;
    const auto channels = static_cast<std::uint16_t>(w.channels);
    const auto length = static_cast<std::uint32_t>(w.length());
    const double sr = w.sample_rate;
    bool ok = std::fwrite("SIG1", 1, 4, f) == 4 && std::fwrite(&version, 2, 1, f) == 1 &&
              std::fwrite(&channels, 2, 1, f) == 1 && std::fwrite(&length, 4, 1, f) == 1 &&
              std::fwrite(&sr, 8, 1, f) == 1;
    // interleaved frames
    std::vector<float> frame(static_cast<std::size_t>(w.channels));
    for (std::uint32_t i = 0; ok && i < length; ++i) {
        for (int c = 0; c < w.channels; ++c) frame[static_cast<std::size_t>(c)] = w.channel(c)[i];
        ok = std::fwrite(frame.data(), sizeof(float), frame.size(), f) == frame.size();
    }
    std::fclose(f);
    if (!ok) throw IoError("short write: " + path.string());
}

dsp::Waveform read_sigf(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot read signal: " + path.string());
    char magic[4];
    std::uint16_t version = 0, channels = 0;
    std::uint32_t length = 0;
    double sr = 0;
    const bool head_ok = std::fread(magic, 1, 4, f) == 4 && std::memcmp(magic, "SIG1", 4) == 0 &&
                         std::fread(&version, 2, 1, f) == 1 && version == 1 &&
                         std::fread(&channels, 2, 1, f) == 1 && channels >= 1 &&
                         std::fread(&length, 4, 1, f) == 1 && std::fread(&sr, 8, 1, f) == 1;
    if (!head_ok) {
        std::fclose(f);
        throw FormatError("not a SIG1 file: " + path.string());
    }
    std::vector<float> inter(static_cast<std::size_t>(channels) * length);
    const bool ok = std::fread(inter.data(), sizeof(float), inter.size(), f) == inter.size();
    std::fclose(f);
    if (!ok) throw FormatError("truncated SIG1 file: " + path.string());
    dsp::Waveform w;
    w.channels = channels;
    w.sample_rate = sr;
    w.samples.resize(inter.size());
    for (std::uint32_t i = 0; i < length; ++i)
        for (int c = 0; c < channels; ++c)
            w.channel(c)[i] = inter[static_cast<std::size_t>(i) * channels + static_cast<std::size_t>(c)];
    return w;
}

dsp::Waveform read_wav(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot read wav: " + path.string());
    auto fail = [&](const std::string& why) -> dsp::Waveform {
        std::fclose(f);
        throw FormatError(path.string() + ": " + why);
    };
    char tag[4];
    std::uint32_t riff_size = 0;
    if (std::fread(tag, 1, 4, f) != 4 || std::memcmp(tag, "RIFF", 4) != 0 ||
        std::fread(&riff_size, 4, 1, f) != 1 || std::fread(tag, 1, 4, f) != 4 ||
        std::memcmp(tag, "WAVE", 4) != 0)
        return fail("not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    std::vector<std::uint8_t> payload;
    while (std::fread(tag, 1, 4, f) == 4) {
        std::uint32_t size = 0;
        if (std::fread(&size, 4, 1, f) != 1) return fail("truncated chunk header");
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            std::uint8_t buf[16];
            if (size < 16 || std::fread(buf, 1, 16, f) != 16) return fail("bad fmt chunk");
            std::memcpy(&format, buf, 2);
            std::memcpy(&channels, buf + 2, 2);
            std::memcpy(&sample_rate, buf + 4, 4);
            std::memcpy(&bits, buf + 14, 2);
            if (size > 16) std::fseek(f, static_cast<long>(size - 16), SEEK_CUR);
        } else if (std::memcmp(tag, "data", 4) == 0) {
            payload.resize(size);
            if (std::fread(payload.data(), 1, size, f) != size) return fail("truncated data chunk");
        } else {
            std::fseek(f, static_cast<long>(size + (size & 1)), SEEK_CUR);
        }
    }
    std::fclose(f);
    if (channels == 0 || payload.empty()) throw FormatError(path.string() + ": no audio data");

    dsp::Waveform w;
    w.channels = channels;
    w.sample_rate = sample_rate;
    std::int64_t frames = 0;
    if (format == 1 && bits == 16) {
        frames = static_cast<std::int64_t>(payload.size()) / (2 * channels);
        w.samples.resize(static_cast<std::size_t>(frames * channels));
        const auto* src = reinterpret_cast<const std::int16_t*>(payload.data());
        for (std::int64_t i = 0; i < frames; ++i)
            for (int c = 0; c < channels; ++c)
                w.channel(c)[i] = static_cast<float>(src[i * channels + c]) / 32768.0f;
    } else if (format == 3 && bits == 32) {
        frames = static_cast<std::int64_t>(payload.size()) / (4 * channels);
        w.samples.resize(static_cast<std::size_t>(frames * channels));
        const auto* src = reinterpret_cast<const float*>(payload.data());
        for (std::int64_t i = 0; i < frames; ++i)
            for (int c = 0; c < channels; ++c) w.channel(c)[i] = src[i * channels + c];
    } else {
        throw FormatError(path.string() + ": unsupported wav encoding (need PCM16 or float32)");
    }
    return w;
}

}  // namespace ct::gen
