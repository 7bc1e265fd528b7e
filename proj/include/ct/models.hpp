#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ct/nn.hpp"
#include "ct/rng.hpp"

// The seven compared architectures over one backbone description:
//   stl    - one stream, one task
//   tcdcn  - shared trunk, per-task heads
//   mtan   - shared trunk with a per-task attention mask before the heads
//   cs     - parallel streams, learnable mixing matrix between them
//   cc     - parallel streams, pairwise 1x1 conv + relu exchange
//   nddr   - parallel streams, concatenate channels and reduce back per task
//   rndr   - nddr plus an identity residual per stream
//
// Cross-talk kinds start as (near-)identities so task coupling is learned,
// not imposed: cs alpha = I + small noise, cc and rndr reductors zero, nddr
// selector-weighted toward each stream's own channels.

namespace ct::models {

enum class ArchKind { stl, tcdcn, mtan, cs, cc, nddr, rndr };

inline const char* to_string(ArchKind k) {
    switch (k) {
        case ArchKind::stl: return "stl";
        case ArchKind::tcdcn: return "tcdcn";
        case ArchKind::mtan: return "mtan";
        case ArchKind::cs: return "cs";
        case ArchKind::cc: return "cc";
        case ArchKind::nddr: return "nddr";
        case ArchKind::rndr: return "rndr";
    }
    return "?";
}

inline ArchKind arch_from_string(const std::string& s) {
    for (ArchKind k : {ArchKind::stl, ArchKind::tcdcn, ArchKind::mtan, ArchKind::cs, ArchKind::cc,
                       ArchKind::nddr, ArchKind::rndr})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown architecture '" + s + "'");
}

inline bool is_cross_talk(ArchKind k) {
    return k == ArchKind::cs || k == ArchKind::cc || k == ArchKind::nddr || k == ArchKind::rndr;
}

enum class TaskRole { main, auxiliary };

struct TaskSpec {
    std::string name;
    int num_classes = 0;
    TaskRole role = TaskRole::main;
};

struct ConvBlockSpec {
    int out_channels = 16;
    int kernel = 3;    // square kernel, same padding (kernel/2)
    int stride = 1;
    bool pool = false; // 2x2 max pool after activation
    bool fdy = false;  // frequency dynamic convolution instead of plain conv
    bool ctl_site = false;
};

struct BackboneSpec {
    int in_channels = 1;
    int freq_bins = 129;  // input F; fixes per-bin FLN parameter sizes
    std::vector<ConvBlockSpec> blocks;
    int fdy_basis = 4;
    double fdy_temperature = 31.0;

    // 4 blocks 16/32/64/64, 3x3 kernels, pool after blocks 1-3; FDY on the
    // last two blocks when requested (drone default).
    static BackboneSpec default_spec(int in_channels, int freq_bins, bool fdy_last_two) {
        BackboneSpec s;
        s.in_channels = in_channels;
        s.freq_bins = freq_bins;
        s.blocks = {
            {16, 3, 1, true, false, false},
            {32, 3, 1, true, false, false},
            {64, 3, 1, true, fdy_last_two, false},
            {64, 3, 1, false, fdy_last_two, false},
        };
        return s;
    }
};

template <typename T>
struct ConvBlock {
    ConvBlockSpec spec;
    nn::Conv2D<T> conv;  // when !spec.fdy
    nn::FDYConv<T> fdy;  // when spec.fdy
    nn::FLN<T> fln;
};

template <typename T>
struct CrossTalkLayer {
    ArchKind kind = ArchKind::rndr;
    int ntasks = 0;
    int channels = 0;
    Tensor<T> cs_alpha;                  // cs: [N,N]
    std::vector<nn::Conv2D<T>> cc;       // cc: N*N 1x1 convs, slot i*N+j for stream i <- j
    std::vector<nn::Conv2D<T>> reduce;   // nddr/rndr: per task, 1x1 conv N*C -> C
};

// out_i per the four exchange rules; all streams keep their shapes.
template <typename T>
std::vector<Tensor<T>> ctl_apply(Tape<T>* tape, const CrossTalkLayer<T>& layer,
                                 const std::vector<Tensor<T>>& features) {
    const int N = static_cast<int>(features.size());
    if (N != layer.ntasks) throw ShapeError("ctl_apply: stream count mismatch");
    for (int i = 1; i < N; ++i)
        if (features[static_cast<std::size_t>(i)].shape() != features[0].shape())
            throw ShapeError("ctl_apply: stream shapes disagree");
    if (features[0].dim(1) != layer.channels)
        throw ShapeError("ctl_apply: channel count mismatch");

    std::vector<Tensor<T>> out;
    out.reserve(static_cast<std::size_t>(N));
    switch (layer.kind) {
        case ArchKind::cs: {
            for (int i = 0; i < N; ++i) {
                Tensor<T> acc;
                for (int j = 0; j < N; ++j) {
                    auto aij = ops::reshape(
                        tape,
                        ops::slice(tape, ops::slice(tape, layer.cs_alpha, 0, i, 1), 1, j, 1),
                        Shape{1, 1, 1, 1});
                    auto term = ops::mul(tape, features[static_cast<std::size_t>(j)], aij);
                    acc = j == 0 ? term : ops::add(tape, acc, term);
                }
                out.push_back(acc);
            }
            break;
        }
        case ArchKind::cc: {
            for (int i = 0; i < N; ++i) {
                Tensor<T> acc = features[static_cast<std::size_t>(i)];
                for (int j = 0; j < N; ++j) {
                    if (j == i) continue;
                    auto t = ops::relu(
                        tape, nn::conv2d_forward(tape, layer.cc[static_cast<std::size_t>(i * N + j)],
                                                 features[static_cast<std::size_t>(j)]));
                    acc = ops::add(tape, acc, t);
                }
                out.push_back(acc);
            }
            break;
        }
        case ArchKind::nddr:
        case ArchKind::rndr: {
            auto cat = ops::concat(tape, features, 1);  // [B, N*C, F, T]
            for (int i = 0; i < N; ++i) {
                auto red = nn::conv2d_forward(tape, layer.reduce[static_cast<std::size_t>(i)], cat);
                out.push_back(layer.kind == ArchKind::rndr
                                  ? ops::add(tape, features[static_cast<std::size_t>(i)], red)
                                  : red);
            }
            break;
        }
        default: throw ConfigError("ctl_apply: not a cross-talk layer");
    }
    return out;
}

// MTAN task branch: sigmoid mask from a pointwise transform of the shared
// features, applied elementwise.
template <typename T>
Tensor<T> attention_apply(Tape<T>* tape, const nn::Conv2D<T>& block, const Tensor<T>& shared) {
    auto mask = ops::sigmoid(tape, nn::conv2d_forward(tape, block, shared));
    return ops::mul(tape, shared, mask);
}

template <typename T>
class MultiTaskModel {
public:
    ArchKind kind = ArchKind::stl;
    BackboneSpec backbone;
    std::vector<TaskSpec> tasks;

    std::vector<std::vector<ConvBlock<T>>> streams;  // [n_streams][n_blocks]
    std::vector<CrossTalkLayer<T>> ctls;             // in ctl-site order
    std::vector<nn::Conv2D<T>> attention;            // mtan: one per task
    std::vector<nn::Dense<T>> heads;                 // one per task

    int n_streams() const { return static_cast<int>(streams.size()); }

    std::vector<Tensor<T>> forward(Tape<T>* tape, const Tensor<T>& x) const {
        if (x.rank() != 4) throw ShapeError("forward: expects [batch, ch, F, T] input");
        if (x.dim(1) != backbone.in_channels)
            throw ShapeError("forward: input has " + std::to_string(x.dim(1)) +
                             " channels, model expects " + std::to_string(backbone.in_channels));
        if (x.dim(2) != backbone.freq_bins)
            throw ShapeError("forward: input F=" + std::to_string(x.dim(2)) + ", model built for F=" +
                             std::to_string(backbone.freq_bins));
        std::vector<Tensor<T>> logits;
        if (!is_cross_talk(kind)) {
            Tensor<T> h = run_stream(tape, 0, x);
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                Tensor<T> ht = kind == ArchKind::mtan ? attention_apply(tape, attention[t], h) : h;
                logits.push_back(nn::dense_forward(tape, heads[t], nn::global_avg_pool(tape, ht)));
            }
        } else {
            const int N = static_cast<int>(tasks.size());
            std::vector<Tensor<T>> feats(static_cast<std::size_t>(N), x);
            std::size_t site = 0;
            for (std::size_t b = 0; b < backbone.blocks.size(); ++b) {
                for (int i = 0; i < N; ++i)
                    feats[static_cast<std::size_t>(i)] =
                        run_block(tape, streams[static_cast<std::size_t>(i)][b],
                                  feats[static_cast<std::size_t>(i)]);
                if (backbone.blocks[b].ctl_site)
                    feats = ctl_apply(tape, ctls[site++], feats);
            }
            for (int t = 0; t < N; ++t)
                logits.push_back(nn::dense_forward(
                    tape, heads[static_cast<std::size_t>(t)],
                    nn::global_avg_pool(tape, feats[static_cast<std::size_t>(t)])));
        }
        return logits;
    }

    void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        for (std::size_t s = 0; s < streams.size(); ++s)
            for (std::size_t b = 0; b < streams[s].size(); ++b) {
                std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
                auto& blk = streams[s][b];
                if (blk.spec.fdy) {
                    for (std::size_t k = 0; k < blk.fdy.basis.size(); ++k) {
                        fn(p + "fdy.k" + std::to_string(k) + ".weight", blk.fdy.basis[k].weight);
                        fn(p + "fdy.k" + std::to_string(k) + ".bias", blk.fdy.basis[k].bias);
                    }
                    fn(p + "fdy.attn.weight", blk.fdy.attn_weight);
                    fn(p + "fdy.attn.bias", blk.fdy.attn_bias);
                } else {
                    fn(p + "conv.weight", blk.conv.weight);
                    fn(p + "conv.bias", blk.conv.bias);
                }
                fn(p + "fln.gamma", blk.fln.gamma);
                fn(p + "fln.beta", blk.fln.beta);
            }
        for (std::size_t c = 0; c < ctls.size(); ++c) {
            std::string p = "ctl" + std::to_string(c) + ".";
            auto& ctl = ctls[c];
            if (ctl.kind == ArchKind::cs) {
                fn(p + "alpha", ctl.cs_alpha);
            } else if (ctl.kind == ArchKind::cc) {
                for (int i = 0; i < ctl.ntasks; ++i)
                    for (int j = 0; j < ctl.ntasks; ++j) {
                        if (i == j) continue;
                        auto& conv = ctl.cc[static_cast<std::size_t>(i * ctl.ntasks + j)];
                        std::string q = p + "cc" + std::to_string(i) + "_" + std::to_string(j);
                        fn(q + ".weight", conv.weight);
                        fn(q + ".bias", conv.bias);
                    }
            } else {
                for (std::size_t i = 0; i < ctl.reduce.size(); ++i) {
                    fn(p + "reduce" + std::to_string(i) + ".weight", ctl.reduce[i].weight);
                    fn(p + "reduce" + std::to_string(i) + ".bias", ctl.reduce[i].bias);
                }
            }
        }
        for (std::size_t t = 0; t < attention.size(); ++t) {
            fn("attn" + std::to_string(t) + ".weight", attention[t].weight);
            fn("attn" + std::to_string(t) + ".bias", attention[t].bias);
        }
        for (std::size_t t = 0; t < heads.size(); ++t) {
            fn("head" + std::to_string(t) + ".weight", heads[t].weight);
            fn("head" + std::to_string(t) + ".bias", heads[t].bias);
        }
    }

    std::vector<nn::ParamRef<T>> param_refs() {
        std::vector<nn::ParamRef<T>> out;
        visit_params([&out](const std::string& name, Tensor<T>& t) {
            out.push_back(nn::ParamRef<T>{name, &t});
        });
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        const_cast<MultiTaskModel*>(this)->visit_params(
            [&n](const std::string&, Tensor<T>& t) { n += t.size(); });
        return n;
    }

    // Registers every parameter as a tracked leaf for one training step.
    void bind(Tape<T>& tape) {
        visit_params([&tape](const std::string&, Tensor<T>& t) { t = tape.leaf(t); });
    }

    void unbind() {
        visit_params([](const std::string&, Tensor<T>& t) { t.node = -1; });
    }

private:
    Tensor<T> run_block(Tape<T>* tape, const ConvBlock<T>& blk, const Tensor<T>& x) const {
        Tensor<T> h = blk.spec.fdy ? nn::fdy_forward(tape, blk.fdy, x)
                                   : nn::conv2d_forward(tape, blk.conv, x);
        h = nn::fln_forward(tape, blk.fln, h);
        h = ops::relu(tape, h);
        if (blk.spec.pool) h = nn::maxpool2d(tape, h, 2, 2);
        return h;
    }

    Tensor<T> run_stream(Tape<T>* tape, int s, const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& blk : streams[static_cast<std::size_t>(s)]) h = run_block(tape, blk, h);
        return h;
    }
};

// ---------------------------------------------------------------------------
// Deterministic initialization.

// Per-stream sub-seed; stream i of a cross-talk model is initialized exactly
// like a single-task model built with override seed stream_seed(seed, i).
inline std::uint64_t stream_seed(std::uint64_t seed, int stream_index) {
    return mix_seed(seed, "stream", static_cast<std::uint64_t>(stream_index));
}

namespace detail {

template <typename T>
Tensor<T> he_normal(Pcg32& rng, Shape shape, std::int64_t fan_in) {
    Vec<T> vals(static_cast<std::size_t>(shape_size(shape)));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : vals) v = static_cast<T>(rng.normal() * std);
    return Tensor<T>(std::move(shape), std::move(vals));
}

template <typename T>
nn::Conv2D<T> make_conv(Pcg32& rng, int oc, int ic, int k, int stride, bool zero_init = false) {
    nn::Conv2D<T> conv;
    Shape wshape{oc, ic, k, k};
    conv.weight = zero_init ? Tensor<T>::zeros(wshape)
                            : he_normal<T>(rng, wshape, static_cast<std::int64_t>(ic) * k * k);
    conv.bias = Tensor<T>::zeros({oc});
    conv.stride_h = conv.stride_w = stride;
    conv.pad_h = conv.pad_w = k / 2;
    return conv;
}

inline int conv_out_dim(int in, int k, int stride) { return (in + 2 * (k / 2) - k) / stride + 1; }

template <typename T>
std::vector<ConvBlock<T>> init_stream(Pcg32& rng, const BackboneSpec& spec) {
    std::vector<ConvBlock<T>> blocks;
    int ch = spec.in_channels;
    int freq = spec.freq_bins;
    for (const auto& bs : spec.blocks) {
        ConvBlock<T> blk;
        blk.spec = bs;
        if (bs.fdy) {
            if (bs.stride != 1 || bs.kernel % 2 == 0)
                throw ConfigError("fdy blocks require stride 1 and an odd kernel");
            blk.fdy.temperature = static_cast<T>(spec.fdy_temperature);
            for (int k = 0; k < spec.fdy_basis; ++k)
                blk.fdy.basis.push_back(make_conv<T>(rng, bs.out_channels, ch, bs.kernel, 1));
            // Zero attention -> uniform mixture at init.
            blk.fdy.attn_weight = Tensor<T>::zeros({spec.fdy_basis, ch, 1, 1});
            blk.fdy.attn_bias = Tensor<T>::zeros({spec.fdy_basis});
        } else {
            blk.conv = make_conv<T>(rng, bs.out_channels, ch, bs.kernel, bs.stride);
        }
        freq = conv_out_dim(freq, bs.kernel, bs.stride);
        if (freq <= 0) throw ConfigError("backbone reduces the frequency axis to nothing");
        blk.fln.gamma = Tensor<T>::ones({freq});
        blk.fln.beta = Tensor<T>::zeros({freq});
        if (bs.pool) freq /= 2;
        if (freq <= 0) throw ConfigError("backbone pools the frequency axis to nothing");
        ch = bs.out_channels;
        blocks.push_back(std::move(blk));
    }
    return blocks;
}

template <typename T>
nn::Dense<T> init_head(Pcg32& rng, int in_dim, int classes) {
    nn::Dense<T> d;
    d.weight = he_normal<T>(rng, {in_dim, classes}, in_dim);
    d.bias = Tensor<T>::zeros({classes});
    return d;
}

}  // namespace detail

struct BuildOptions {
    // When set, stream i uses stream_seed_override[i] instead of
    // stream_seed(seed, i); used to reproduce cross-talk streams as
    // stand-alone single-task models.
    std::vector<std::uint64_t> stream_seed_override;
};

template <typename T>
MultiTaskModel<T> build_model(ArchKind kind, BackboneSpec backbone,
                              const std::vector<TaskSpec>& tasks, std::uint64_t seed,
                              const BuildOptions& opts = {}) {
    if (backbone.blocks.empty()) throw ConfigError("backbone needs at least one block");
    if (tasks.empty()) throw ConfigError("at least one task required");
    if (kind == ArchKind::stl && tasks.size() != 1)
        throw ConfigError("stl carries exactly one task per model instance");
    bool any_main = false;
    for (const auto& t : tasks) {
        if (t.num_classes < 2)
            throw ConfigError("task '" + t.name + "' needs >= 2 classes");
        any_main = any_main || t.role == TaskRole::main;
    }
    if (!any_main) throw ConfigError("at least one main task required");

    const int nb = static_cast<int>(backbone.blocks.size());
    for (int b = 0; b < nb; ++b)
        if (backbone.blocks[static_cast<std::size_t>(b)].fdy && b < nb - 2)
            throw ConfigError("fdy flags are restricted to the last two conv blocks");

    bool any_site = false;
    for (const auto& b : backbone.blocks) any_site = any_site || b.ctl_site;
    if (!is_cross_talk(kind)) {
        if (any_site) throw ConfigError("ctl sites are only valid for cross-talk architectures");
    } else if (!any_site) {
        // Default placement: after every conv block except the first.
        for (std::size_t b = 1; b < backbone.blocks.size(); ++b) backbone.blocks[b].ctl_site = true;
    }

    MultiTaskModel<T> model;
    model.kind = kind;
    model.backbone = backbone;
    model.tasks = tasks;

    const int N = static_cast<int>(tasks.size());
    const int n_streams = is_cross_talk(kind) ? N : 1;
    auto seed_for = [&](int s) {
        if (s < static_cast<int>(opts.stream_seed_override.size()))
            return opts.stream_seed_override[static_cast<std::size_t>(s)];
        return stream_seed(seed, s);
    };

    int head_in = backbone.blocks.back().out_channels;
    for (int s = 0; s < n_streams; ++s) {
        Pcg32 rng(seed_for(s));
        model.streams.push_back(detail::init_stream<T>(rng, backbone));
        if (is_cross_talk(kind)) {
            // The per-stream head comes from the same rng, so stream i plus
            // head i replays a stand-alone stl init exactly.
            model.heads.push_back(
                detail::init_head<T>(rng, head_in, tasks[static_cast<std::size_t>(s)].num_classes));
        } else {
            for (const auto& t : tasks) model.heads.push_back(detail::init_head<T>(rng, head_in, t.num_classes));
        }
    }

    if (kind == ArchKind::mtan) {
        const int C = head_in;
        for (int t = 0; t < N; ++t) {
            nn::Conv2D<T> a;
            a.weight = Tensor<T>::zeros({C, C, 1, 1});
            a.bias = Tensor<T>::zeros({C});
            model.attention.push_back(std::move(a));
        }
    }

    if (is_cross_talk(kind)) {
        Pcg32 ctl_rng(mix_seed(seed, "ctl"));
        int ch = backbone.in_channels;
        for (const auto& bs : backbone.blocks) {
            ch = bs.out_channels;
            if (!bs.ctl_site) continue;
            CrossTalkLayer<T> ctl;
            ctl.kind = kind;
            ctl.ntasks = N;
            ctl.channels = ch;
            switch (kind) {
                case ArchKind::cs: {
                    Vec<T> alpha(static_cast<std::size_t>(N) * N);
                    for (int i = 0; i < N; ++i)
                        for (int j = 0; j < N; ++j)
                            alpha[static_cast<std::size_t>(i * N + j)] =
                                static_cast<T>((i == j ? 1.0 : 0.0) + ctl_rng.uniform(-0.05, 0.05));
                    ctl.cs_alpha = Tensor<T>({N, N}, std::move(alpha));
                    break;
                }
                case ArchKind::cc: {
                    for (int i = 0; i < N * N; ++i)
                        ctl.cc.push_back(detail::make_conv<T>(ctl_rng, ch, ch, 1, 1, true));
                    break;
                }
                case ArchKind::nddr:
                case ArchKind::rndr: {
                    for (int i = 0; i < N; ++i) {
                        nn::Conv2D<T> red;
                        if (kind == ArchKind::rndr) {
                            // All-zero reductor: training starts from exact
                            // task independence.
                            red.weight = Tensor<T>::zeros({ch, N * ch, 1, 1});
                        } else {
                            // Selector init from the nddr lineage: own-task
                            // channel weight 0.9, other tasks share 0.1.
                            Vec<T> w(static_cast<std::size_t>(ch) * N * ch, T(0));
                            const T other = N > 1 ? static_cast<T>(0.1 / (N - 1)) : T(0);
                            for (int o = 0; o < ch; ++o)
                                for (int j = 0; j < N; ++j)
                                    w[static_cast<std::size_t>(o) * (N * ch) + j * ch + o] =
                                        j == i ? T(0.9) : other;
                            red.weight = Tensor<T>({ch, N * ch, 1, 1}, std::move(w));
                        }
                        red.bias = Tensor<T>::zeros({ch});
                        ctl.reduce.push_back(std::move(red));
                    }
                    break;
                }
                default: break;
            }
            model.ctls.push_back(std::move(ctl));
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Architecture descriptor: a small key-value text file saved beside each
// checkpoint so evaluation can rebuild the exact graph.

struct ModelDescriptor {
    ArchKind kind;
    BackboneSpec backbone;
    std::vector<TaskSpec> tasks;
};

inline void save_descriptor(const std::filesystem::path& path, const ModelDescriptor& d) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write descriptor: " + path.string());
    f << "kind = " << to_string(d.kind) << "\n";
    f << "in_channels = " << d.backbone.in_channels << "\n";
    f << "freq_bins = " << d.backbone.freq_bins << "\n";
    f << "fdy_basis = " << d.backbone.fdy_basis << "\n";
    f << "fdy_temperature = " << d.backbone.fdy_temperature << "\n";
    for (std::size_t b = 0; b < d.backbone.blocks.size(); ++b) {
        const auto& s = d.backbone.blocks[b];
        f << "block." << b << " = ch:" << s.out_channels << " k:" << s.kernel << " s:" << s.stride
          << " pool:" << (s.pool ? 1 : 0) << " fdy:" << (s.fdy ? 1 : 0)
          << " ctl:" << (s.ctl_site ? 1 : 0) << "\n";
    }
    for (std::size_t t = 0; t < d.tasks.size(); ++t) {
        const auto& ts = d.tasks[t];
        f << "task." << t << " = name:" << ts.name << " classes:" << ts.num_classes
          << " role:" << (ts.role == TaskRole::main ? "main" : "auxiliary") << "\n";
    }
}

inline ModelDescriptor load_descriptor(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read descriptor: " + path.string());
    ModelDescriptor d;
    d.kind = ArchKind::stl;
    std::string line;
    auto field = [](const std::string& tok, const std::string& key) -> std::string {
        if (tok.rfind(key + ":", 0) != 0) throw FormatError("descriptor: expected '" + key + ":'");
        return tok.substr(key.size() + 1);
    };
    while (std::getline(f, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
            while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
        };
        trim(key);
        trim(val);
        if (key == "kind") d.kind = arch_from_string(val);
        else if (key == "in_channels") d.backbone.in_channels = std::stoi(val);
        else if (key == "freq_bins") d.backbone.freq_bins = std::stoi(val);
        else if (key == "fdy_basis") d.backbone.fdy_basis = std::stoi(val);
        else if (key == "fdy_temperature") d.backbone.fdy_temperature = std::stod(val);
        else if (key.rfind("block.", 0) == 0) {
            std::istringstream ss(val);
            std::string tok;
            ConvBlockSpec bs;
            ss >> tok; bs.out_channels = std::stoi(field(tok, "ch"));
            ss >> tok; bs.kernel = std::stoi(field(tok, "k"));
            ss >> tok; bs.stride = std::stoi(field(tok, "s"));
            ss >> tok; bs.pool = std::stoi(field(tok, "pool")) != 0;
            ss >> tok; bs.fdy = std::stoi(field(tok, "fdy")) != 0;
            ss >> tok; bs.ctl_site = std::stoi(field(tok, "ctl")) != 0;
            d.backbone.blocks.push_back(bs);
        } else if (key.rfind("task.", 0) == 0) {
            std::istringstream ss(val);
            std::string tok;
            TaskSpec ts;
            ss >> tok; ts.name = field(tok, "name");
            ss >> tok; ts.num_classes = std::stoi(field(tok, "classes"));
            ss >> tok; ts.role = field(tok, "role") == "main" ? TaskRole::main : TaskRole::auxiliary;
            d.tasks.push_back(std::move(ts));
        }
    }
    if (d.backbone.blocks.empty()) throw FormatError("descriptor has no blocks: " + path.string());
    return d;
}

// ---------------------------------------------------------------------------
// Full-architecture gradient check: total loss (sum of per-task CE) through a
// small double-precision model, every parameter and the input checked against
// central differences.

inline GradCheckReport grad_check_model(ArchKind kind, const BackboneSpec& backbone,
                                        const std::vector<TaskSpec>& tasks, std::uint64_t seed,
                                        int batch, int time_frames, double step = 1e-5) {
    auto model = build_model<double>(kind, backbone, tasks, seed);
    Pcg32 rng(mix_seed(seed, "gradcheck-data"));
    Vec<double> xv(static_cast<std::size_t>(batch) * backbone.in_channels *
                   backbone.freq_bins * time_frames);
    for (auto& v : xv) v = rng.normal();
    Tensor<double> x(Shape{batch, backbone.in_channels, backbone.freq_bins, time_frames},
                     std::move(xv));
    std::vector<std::vector<int>> labels;
    for (const auto& t : tasks) {
        std::vector<int> l(static_cast<std::size_t>(batch));
        for (auto& v : l) v = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(t.num_classes)));
        labels.push_back(std::move(l));
    }

    auto refs = model.param_refs();
    std::vector<Tensor<double>> leaves;
    for (auto& r : refs) leaves.push_back(*r.value);
    leaves.push_back(x);

    auto f = [&model, &refs, &labels](Tape<double>* tp,
                                      const std::vector<Tensor<double>>& xs) -> Tensor<double> {
        for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = xs[i];
        auto logits = model.forward(tp, xs.back());
        Tensor<double> total;
        for (std::size_t t = 0; t < logits.size(); ++t) {
            auto ce = nn::softmax_cross_entropy(tp, logits[t], labels[t]);
            total = t == 0 ? ce : ops::add(tp, total, ce);
        }
        return total;
    };
    return grad_check_multi(f, leaves, step);
}

}  // namespace ct::models
