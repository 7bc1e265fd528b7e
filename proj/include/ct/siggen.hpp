#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ct/dsp.hpp"

// Synthetic physically coupled benchmark generators. Two benchmarks:
//
//  drone  - constant-RPM quadrotor sound: drone type sets the base rotor
//           frequency and harmonic envelope, maneuvering direction applies
//           small per-rotor frequency/amplitude tilts, dented-cap faults
//           amplitude-modulate the faulty rotor at its own rotation rate,
//           propeller cuts add a subharmonic, half-order sidebands and
//           broadband noise.
//  motor  - variable-RPM vibration with four simultaneously controllable
//           fault components (inner race, outer race, misalignment,
//           unbalance) whose signatures cross-modulate, plus two sensor
//           channels with distinct transfer paths.
//
// All physical constants are synthetic stand-ins collected in the two
// constants tables below. Per-sample RMS normalization keeps class identity
// out of trivial gain, which also couples every component's apparent level
// to whatever else is active.

namespace ct::gen {

enum class Benchmark { drone, motor };

inline const char* to_string(Benchmark b) { return b == Benchmark::drone ? "drone" : "motor"; }
Benchmark benchmark_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Labels.

inline const std::array<std::string, 9> kDroneFaultNames = {
    "normal",        "dent_cap_loc1", "dent_cap_loc2", "dent_cap_loc3", "dent_cap_loc4",
    "prop_cut_loc1", "prop_cut_loc2", "prop_cut_loc3", "prop_cut_loc4"};
inline const std::array<std::string, 3> kDroneTypeNames = {"type_a", "type_b", "type_c"};
inline const std::array<std::string, 6> kDroneDirectionNames = {"forward", "backward", "left",
                                                                "right",   "cw",       "ccw"};

struct DroneLabel {
    int fault = 0;      // index into kDroneFaultNames
    int type = 0;       // index into kDroneTypeNames
    int direction = 0;  // index into kDroneDirectionNames
};

enum class RpmProfile { constant, sinusoidal, triangular };
inline const std::array<std::string, 3> kRpmProfileNames = {"constant", "sinusoidal", "triangular"};

inline const std::array<std::string, 2> kIrfClassNames = {"irf_0mm", "irf_0p2mm"};
inline const std::array<std::string, 2> kOrfClassNames = {"orf_0mm", "orf_0p2mm"};
inline const std::array<std::string, 3> kMisClassNames = {"mis_0mm", "mis_0p15mm", "mis_0p3mm"};
inline const std::array<std::string, 3> kUnbClassNames = {"unb_0g", "unb_10g", "unb_18g"};

struct MotorLabel {
    int irf = 0;  // {0mm, 0.2mm}
    int orf = 0;  // {0mm, 0.2mm}
    int mis = 0;  // {0mm, 0.15mm, 0.3mm}
    int unb = 0;  // {0g, 10g, 18g}
    RpmProfile rpm = RpmProfile::constant;
};

// ---------------------------------------------------------------------------
// Constants tables (synthetic stand-ins; everything tunable in one place).

struct DroneConstants {
    std::array<double, 3> type_f0 = {95.0, 120.0, 145.0};  // base rotor Hz per type
    int harmonics = 8;
    std::array<double, 4> rotor_trim = {-0.012, -0.004, 0.004, 0.012};  // persistent offsets
    double direction_freq_tilt = 0.008;
    double direction_amp_tilt = 0.25;
    double rotor_color = 0.20;        // per-rotor spectral coloring strength
    std::array<double, 4> dent_depth = {0.32, 0.45, 0.58, 0.71};    // per location
    std::array<double, 4> dent_phase = {0.0, 1.5707963, 3.14159265, 4.71238898};
    double cut_sub_amp = 0.55;        // subharmonic at f0/2
    double cut_sideband_amp = 0.4;    // half-order sidebands
    double cut_noise_raise = 0.3;     // extra broadband noise
    double cut_fundamental_drop = 0.85;
};

struct MotorConstants {
    double shaft_hz = 30.0;
    double base_speed_jitter = 0.04;  // per-sample base speed spread
    double profile_dev = 0.20;        // sinusoidal/triangular swing
    double profile_rate_hz = 1.3;
    double bpfi_ratio = 5.4;
    double bpfo_ratio = 3.6;
    double res_irf_hz = 1900.0;
    double res_orf_hz = 1300.0;
    double res_shared_hz = 1650.0;    // common structural mode excited by all bursts
    double shared_mode_amp_irf = 0.5;  // inner race couples weakly into it
    double shared_mode_amp_orf = 1.2;  // outer race sits on the housing, couples strongly
    double burst_tau_s = 0.0035;
    // constant machine pedestal: label-independent whine tones plus a
    // low-passed broadband floor; dominates the per-sample RMS so severity
    // cannot be read off trivial gain
    std::array<double, 3> hum_hz = {500.0, 740.0, 1000.0};
    std::array<double, 3> hum_amp = {1.2, 0.9, 0.7};
    double floor_noise_rms = 1.3;
    double floor_noise_lp = 0.25;
    double shaft_1x = 0.2;
    double shaft_2x = 0.1;
    double unb_1x = 2.0;              // x unb_level x (r/shaft)^2
    double mis_2x = 1.3;
    double mis_1x = 0.18;
    double mis_unb_3x = 0.4;          // coupling tone
    double irf_burst = 0.85;
    double orf_burst = 0.85;
    double irf_shaft_am = 0.8;        // load-zone modulation of inner-race bursts
    double irf_unb_am = 0.55;         // coupling: unbalance deepens that modulation
    double orf_mis_am = 0.6;          // coupling: misalignment modulates outer-race bursts
    double irf_mis_unload = 0.4;      // coupling: misalignment unloads the inner race
    double orf_mis_load = 0.35;       // ... and loads the outer race
    double res_cross_shift = 0.03;    // coupling: other bearing fault shifts resonances
    double res_mis_shift = 0.02;      // misalignment lowers both resonances
    // sensor transfers
    double sensor_a_diff = 0.25;      // chA = mech + a*diff(mech)
    double sensor_b_lp = 0.35;        // chB one-pole low-pass coefficient
    double sensor_b_comb = 0.5;       // chB comb tap (2 samples)
};

// ---------------------------------------------------------------------------
// Generation.

struct GenSpec {
    Benchmark benchmark = Benchmark::motor;
    double sample_rate = 8000.0;   // drone default is 16 kHz
    double duration = 0.5;         // seconds per sample
    double snr_db_lo = 5.0;
    double snr_db_hi = 20.0;
    int total_samples = 2000;
    double target_main_ibr = 18.15;  // drone: 15.57 (fault); motor: 18.15 (compound)
    std::uint64_t seed = 0;
    DroneConstants drone;
    MotorConstants motor;

    static GenSpec defaults(Benchmark b);
};

// Waveforms are fully determined by (spec.seed, label, sample_index).
dsp::Waveform generate_drone(const DroneLabel& label, const GenSpec& spec,
                             std::int64_t sample_index);
dsp::Waveform generate_motor(const MotorLabel& label, const GenSpec& spec,
                             std::int64_t sample_index);

// ---------------------------------------------------------------------------
// Count solvers.

// Drone: per-(fault, type, direction) cell counts, 9*3*6 entries in
// fault-major order. Fault marginal hits the main IBR target, the auxiliary
// marginals stay near the Table-style 1.03/1.06 ratios.
std::vector<std::int64_t> solve_drone_counts(const GenSpec& spec);

// Motor: per-compound-cell counts (36 entries). Iterative proportional
// fitting against the four component marginals with a boosted healthy cell,
// bisected so the compound IBR lands on target.
std::array<std::int64_t, 36> solve_motor_counts(const GenSpec& spec);

struct BuildReport {
    std::filesystem::path manifest_path;
    int total = 0;
    double main_ibr = 0.0;             // fault IBR (drone) / compound IBR (motor)
    std::vector<double> aux_ibrs;      // drone: type, direction; motor: per component
};

// Emits signals/<id>.sigf plus manifest.csv with stratified 60/20/20 splits.
BuildReport build_dataset(const GenSpec& spec, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Signal container io. ".sigf": magic "SIG1", u16 version, u16 channels,
// u32 length, f64 sample_rate, f32 little-endian interleaved frames.

void write_sigf(const std::filesystem::path& path, const dsp::Waveform& w);
dsp::Waveform read_sigf(const std::filesystem::path& path);

// PCM WAV reader (16-bit and 32-bit float) for externally converted data.
dsp::Waveform read_wav(const std::filesystem::path& path);

}  // namespace ct::gen
