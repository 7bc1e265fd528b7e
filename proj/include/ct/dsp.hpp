#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ct/tensor.hpp"

// Waveform -> log-power spectrogram pipeline. STFT power is computed in
// double precision regardless of the requested tensor type; per-bin
// standardization statistics are fitted on the training split only.

namespace ct::dsp {

enum class WindowKind { hann, rectangular };

struct StftConfig {
    int window_len = 256;
    int hop = 128;
    WindowKind window = WindowKind::hann;
    double sample_rate = 16000.0;
    double log_floor = 1e-10;

    // Per-bin standardization, fitted on the training split.
    bool stats_fitted = false;
    std::vector<double> bin_mean;
    std::vector<double> bin_std;

    int freq_bins() const { return window_len / 2 + 1; }
    void validate() const;
    // Hash over the transform parameters (not the fitted stats); keys the
    // spectrogram cache directory.
    std::string cache_key() const;
};

struct Waveform {
    int channels = 1;
    double sample_rate = 0.0;
    std::vector<float> samples;  // [channels][length] row-major

    std::int64_t length() const {
        return channels > 0 ? static_cast<std::int64_t>(samples.size()) / channels : 0;
    }
    const float* channel(int c) const { return samples.data() + static_cast<std::int64_t>(c) * length(); }
    float* channel(int c) { return samples.data() + static_cast<std::int64_t>(c) * length(); }
};

// One-sided power spectrum of a real frame: power[k] = |X_k|^2, k in [0, n/2].
// Radix-2 FFT when n is a power of two, direct DFT otherwise.
void rfft_power(const double* frame, int n, double* power);

// -> [channels, F, frames] with frames = 1 + floor((L - N)/H).
template <typename T>
Tensor<T> stft_power(const Waveform& w, const StftConfig& cfg);

// out = (log(spec + eps) - mean_f) / std_f per frequency bin.
template <typename T>
Tensor<T> log_standardize(const Tensor<T>& spec, const StftConfig& cfg);

// Accumulates per-bin moments of log(power + eps) over training samples.
struct StandardizeAccumulator {
    std::int64_t count = 0;           // (channel, time) slots seen
    std::vector<double> sum, sumsq;   // per frequency bin

    void add(const Tensor<float>& power_spec, double log_floor);
    // Writes bin_mean/bin_std into cfg; std is floored at 1e-8.
    void finalize(StftConfig& cfg) const;
};

// Spectrogram cache entry: magic "SPG1", u32 channels, u32 F, u32 T, then
// f32 little-endian row-major values.
void write_spg(const std::filesystem::path& path, const Tensor<float>& spec);
Tensor<float> read_spg(const std::filesystem::path& path);

}  // namespace ct::dsp
