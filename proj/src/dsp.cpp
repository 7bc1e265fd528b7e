#include "ct/dsp.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "ct/rng.hpp"

namespace ct::dsp {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 complex FFT.
void fft_pow2(std::vector<double>& re, std::vector<double>& im) {
    const int n = static_cast<int>(re.size());
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -kTwoPi / len;
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (int i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (int j = 0; j < len / 2; ++j) {
                const double ur = re[i + j], ui = im[i + j];
                const double vr = re[i + j + len / 2] * cr - im[i + j + len / 2] * ci;
                const double vi = re[i + j + len / 2] * ci + im[i + j + len / 2] * cr;
                re[i + j] = ur + vr;
                im[i + j] = ui + vi;
                re[i + j + len / 2] = ur - vr;
                im[i + j + len / 2] = ui - vi;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

}  // namespace

void rfft_power(const double* frame, int n, double* power) {
    const int half = n / 2;
    if (is_pow2(n)) {
        std::vector<double> re(frame, frame + n), im(static_cast<std::size_t>(n), 0.0);
        fft_pow2(re, im);
        for (int k = 0; k <= half; ++k) power[k] = re[k] * re[k] + im[k] * im[k];
        return;
    }
    for (int k = 0; k <= half; ++k) {
        double sr = 0.0, si = 0.0;
        for (int t = 0; t < n; ++t) {
            const double a = -kTwoPi * k * t / n;
            sr += frame[t] * std::cos(a);
            si += frame[t] * std::sin(a);
        }
        power[k] = sr * sr + si * si;
    }
}

void StftConfig::validate() const {
    if (window_len <= 0) throw ConfigError("stft: window length must be positive");
    if (hop <= 0 || hop > window_len) throw ConfigError("stft: hop must satisfy 0 < H <= N");
    if (sample_rate <= 0) throw ConfigError("stft: sample rate must be positive");
    if (log_floor <= 0) throw ConfigError("stft: log floor must be positive");
}

std::string StftConfig::cache_key() const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "N%d:H%d:w%d:sr%.6g:fl%.6g", window_len, hop,
                  window == WindowKind::hann ? 1 : 0, sample_rate, log_floor);
    const std::uint64_t h = detail::fnv1a64(buf);
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

template <typename T>
Tensor<T> stft_power(const Waveform& w, const StftConfig& cfg) {
    cfg.validate();
    const int N = cfg.window_len;
    const int H = cfg.hop;
    const std::int64_t L = w.length();
    if (L < N)
        throw LengthError("stft: signal of " + std::to_string(L) + " samples is shorter than window " +
                          std::to_string(N));
    const int frames = static_cast<int>(1 + (L - N) / H);
    const int F = cfg.freq_bins();

    std::vector<double> window(static_cast<std::size_t>(N), 1.0);
    if (cfg.window == WindowKind::hann)
        for (int i = 0; i < N; ++i) window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * i / N);

    ct::Vec<T> out(static_cast<std::size_t>(w.channels) * F * frames);
    std::vector<double> frame(static_cast<std::size_t>(N));
    std::vector<double> power(static_cast<std::size_t>(F));
    for (int c = 0; c < w.channels; ++c) {
        const float* x = w.channel(c);
        for (int t = 0; t < frames; ++t) {
            const std::int64_t off = static_cast<std::int64_t>(t) * H;
            for (int i = 0; i < N; ++i)
                frame[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(i)] * x[off + i];
            rfft_power(frame.data(), N, power.data());
            for (int f = 0; f < F; ++f)
                out[(static_cast<std::int64_t>(c) * F + f) * frames + t] = static_cast<T>(power[static_cast<std::size_t>(f)]);
        }
    }
    return Tensor<T>(Shape{w.channels, F, frames}, std::move(out));
}

template Tensor<float> stft_power<float>(const Waveform&, const StftConfig&);
template Tensor<double> stft_power<double>(const Waveform&, const StftConfig&);

template <typename T>
Tensor<T> log_standardize(const Tensor<T>& spec, const StftConfig& cfg) {
    if (!cfg.stats_fitted)
        throw StateError("log_standardize: standardization statistics not fitted");
    if (spec.rank() != 3) throw ShapeError("log_standardize: expects [channels, F, T]");
    const int C = spec.dim(0), F = spec.dim(1), Tt = spec.dim(2);
    if (static_cast<int>(cfg.bin_mean.size()) != F || static_cast<int>(cfg.bin_std.size()) != F)
        throw ShapeError("log_standardize: statistics cover " + std::to_string(cfg.bin_mean.size()) +
                         " bins, spectrogram has " + std::to_string(F));
    ct::Vec<T> out(static_cast<std::size_t>(spec.size()));
    for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
            const double mean = cfg.bin_mean[static_cast<std::size_t>(f)];
            const double inv = 1.0 / cfg.bin_std[static_cast<std::size_t>(f)];
            const T* src = spec.data() + (static_cast<std::int64_t>(c) * F + f) * Tt;
            T* dst = out.data() + (static_cast<std::int64_t>(c) * F + f) * Tt;
            for (int t = 0; t < Tt; ++t)
                dst[t] = static_cast<T>((std::log(static_cast<double>(src[t]) + cfg.log_floor) - mean) * inv);
        }
    return Tensor<T>(spec.shape(), std::move(out));
}

template Tensor<float> log_standardize<float>(const Tensor<float>&, const StftConfig&);
template Tensor<double> log_standardize<double>(const Tensor<double>&, const StftConfig&);

void StandardizeAccumulator::add(const Tensor<float>& power_spec, double log_floor) {
    if (power_spec.rank() != 3) throw ShapeError("stats: expects [channels, F, T]");
    const int C = power_spec.dim(0), F = power_spec.dim(1), Tt = power_spec.dim(2);
    if (sum.empty()) {
        sum.assign(static_cast<std::size_t>(F), 0.0);
        sumsq.assign(static_cast<std::size_t>(F), 0.0);
    }
    if (static_cast<int>(sum.size()) != F) throw ShapeError("stats: frequency bin count changed");
    for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
            const float* src = power_spec.data() + (static_cast<std::int64_t>(c) * F + f) * Tt;
            for (int t = 0; t < Tt; ++t) {
                const double v = std::log(static_cast<double>(src[t]) + log_floor);
                sum[static_cast<std::size_t>(f)] += v;
                sumsq[static_cast<std::size_t>(f)] += v * v;
            }
        }
    count += static_cast<std::int64_t>(C) * Tt;
}

void StandardizeAccumulator::finalize(StftConfig& cfg) const {
    if (count == 0) throw StateError("stats: no samples accumulated");
    cfg.bin_mean.resize(sum.size());
    cfg.bin_std.resize(sum.size());
    for (std::size_t f = 0; f < sum.size(); ++f) {
        const double mean = sum[f] / static_cast<double>(count);
        double var = sumsq[f] / static_cast<double>(count) - mean * mean;
        if (var < 0) var = 0;
        cfg.bin_mean[f] = mean;
        cfg.bin_std[f] = std::max(std::sqrt(var), 1e-8);
    }
    cfg.stats_fitted = true;
}

void write_spg(const std::filesystem::path& path, const Tensor<float>& spec) {
    if (spec.rank() != 3) throw ShapeError("spg: expects [channels, F, T]");
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write spectrogram cache: " + path.string());
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(spec.dim(0)),
                                   static_cast<std::uint32_t>(spec.dim(1)),
                                   static_cast<std::uint32_t>(spec.dim(2))};
    bool ok = std::fwrite("SPG1", 1, 4, f) == 4 && std::fwrite(dims, 4, 3, f) == 3 &&
              std::fwrite(spec.data(), sizeof(float), static_cast<std::size_t>(spec.size()), f) ==
                  static_cast<std::size_t>(spec.size());
    std::fclose(f);
    if (!ok) throw IoError("short write: " + path.string());
}

Tensor<float> read_spg(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot read spectrogram cache: " + path.string());
    char magic[4];
    std::uint32_t dims[3];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "SPG1", 4) != 0 ||
        std::fread(dims, 4, 3, f) != 3) {
        std::fclose(f);
        throw FormatError("not an SPG1 file: " + path.string());
    }
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    ct::Vec<float> vals(n);
    const bool ok = std::fread(vals.data(), sizeof(float), n, f) == n;
    std::fclose(f);
    if (!ok) throw FormatError("truncated SPG1 file: " + path.string());
    return Tensor<float>(Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                               static_cast<int>(dims[2])},
                         std::move(vals));
}

}  // namespace ct::dsp
