#include "hnll/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"
#include "hnll/rng.hpp"

namespace hnll {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Raw value that maps to `sigma` under the configured transform.
double inverse_diag(DiagTransform t, double sigma) {
    if (t == DiagTransform::Clamp) return sigma;
    return std::log(std::expm1(sigma));
}

using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMap weights(const ModelParams& p, const LayerShape& l) {
    return ConstMap(p.values.data() + l.offset, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
}

ConstVecMap bias(const ModelParams& p, const LayerShape& l) {
    return ConstVecMap(p.values.data() + l.bias_offset(), static_cast<Eigen::Index>(l.out));
}

RowMatrix affine(const RowMatrix& x, const ModelParams& p, const LayerShape& l) {
    RowMatrix z = x * weights(p, l).transpose();
    z.rowwise() += bias(p, l);
    return z;
}

void check_input(const ModelConfig& cfg, const ModelParams& params, const Spectrogram& noisy) {
    if (noisy.bins != cfg.bins) throw ShapeError("model: spectrogram has " + std::to_string(noisy.bins) +
                                                 " bins, model expects " + std::to_string(cfg.bins));
    if (noisy.frames == 0) throw ShapeError("model: empty spectrogram");
    if (params.layers.size() != cfg.hidden_sizes.size() + 2 || params.values.size() != make_layout(cfg).size())
        throw ShapeError("model: parameter vector does not match config");
}

RowMatrix run_trunk(const ModelParams& params, const ModelConfig& cfg, const Spectrogram& noisy,
                    ForwardCache* cache) {
    RowMatrix h = frame_features(cfg, noisy);
    if (cache) cache->input = h;
    for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
        h = affine(h, params, params.layers[i]).array().tanh().matrix();
        if (cache) cache->activations.push_back(h);
    }
    return h;
}

Spectrogram mean_from_head(const RowMatrix& out, const Spectrogram& noisy, bool residual) {
    Spectrogram mu = residual ? noisy : Spectrogram::zeros_like(noisy);
    const std::size_t F = noisy.bins;
    for (std::size_t t = 0; t < noisy.frames; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
            mu.re_at(t, f) += out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f));
            mu.im_at(t, f) += out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(F + f));
        }
    }
    return mu;
}

}  // namespace

void ModelConfig::validate() const {
    if (hidden_sizes.empty()) throw ConfigError("model: hidden_sizes must be nonempty");
    for (auto h : hidden_sizes)
        if (h == 0) throw ConfigError("model: hidden sizes must be positive");
    if (bins < 2) throw ConfigError("model: bins must be >= 2");
    if (!(feature_norm > 0.0) || !std::isfinite(feature_norm)) throw ConfigError("model: feature_norm must be > 0");
    if (!(delta > 0.0)) throw ConfigError("model: delta must be > 0");
    if (!(chol_head_gain > 0.0) || !std::isfinite(chol_head_gain))
        throw ConfigError("model: chol_head_gain must be > 0");
}

ModelParams make_layout(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    std::size_t offset = 0;
    std::size_t in = cfg.input_size();
    auto add = [&](std::string name, std::size_t fan_in, std::size_t out) {
        LayerShape l{std::move(name), fan_in, out, offset};
        offset += l.size();
        p.layers.push_back(l);
    };
    for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
        add("trunk" + std::to_string(i), in, cfg.hidden_sizes[i]);
        in = cfg.hidden_sizes[i];
    }
    add("mean_head", in, cfg.mean_outputs());
    p.head_boundary = offset;
    add("chol_head", in, cfg.chol_outputs());
    p.values.assign(offset, 0.0);
    return p;
}

ModelParams init_params(const ModelConfig& cfg) {
    ModelParams p = make_layout(cfg);
    Rng rng(derive_seed(cfg.seed, 0x1a7e5));
    for (const auto& l : p.layers) {
        double a = 1.0 / std::sqrt(static_cast<double>(l.in));
        if (&l == &p.chol_head()) a *= cfg.chol_head_gain;
        for (std::size_t i = 0; i < l.out * l.in; ++i) p.values[l.offset + i] = rng.uniform(-a, a);
    }
    // A residual mean starts as the exact identity.
    if (cfg.residual_mean) {
        const auto& mh = p.mean_head();
        std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(mh.offset), mh.out * mh.in, 0.0);
    }
    // Diagonal Cholesky units start near sigma = 0.1.
    const auto& head = p.chol_head();
    const double b = inverse_diag(cfg.diag_transform, 0.1);
    const std::size_t planes = CholeskyField::planes_for(cfg.layout);
    for (std::size_t plane = 0; plane < planes; ++plane) {
        if (cfg.layout == CovLayout::Block2 && plane == 1) continue;
        for (std::size_t f = 0; f < cfg.bins; ++f) p.values[head.bias_offset() + plane * cfg.bins + f] = b;
    }
    return p;
}

RowMatrix frame_features(const ModelConfig& cfg, const Spectrogram& noisy) {
    const std::size_t T = noisy.frames;
    const std::size_t F = noisy.bins;
    const std::size_t c = cfg.context_frames;
    RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(cfg.input_size()));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < 2 * c + 1; ++j) {
            const auto src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(c);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            const auto s = static_cast<std::size_t>(src);
            const std::size_t base = j * 2 * F;
            for (std::size_t f = 0; f < F; ++f) {
                x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(base + f)) =
                    noisy.re_at(s, f) * cfg.feature_norm;
                x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(base + F + f)) =
                    noisy.im_at(s, f) * cfg.feature_norm;
            }
        }
    }
    return x;
}

ModelOutput forward(const ModelParams& params, const ModelConfig& cfg, const Spectrogram& noisy, bool with_cov) {
    check_input(cfg, params, noisy);
    ModelOutput out;
    const RowMatrix h = run_trunk(params, cfg, noisy, &out.cache);
    out.pred.mean = mean_from_head(affine(h, params, params.mean_head()), noisy, cfg.residual_mean);
    if (!with_cov) return out;

    out.cache.chol_raw = affine(h, params, params.chol_head());
    const std::size_t T = noisy.frames;
    const std::size_t F = noisy.bins;
    const std::size_t planes = CholeskyField::planes_for(cfg.layout);
    std::vector<double> raw(planes * T * F);
    for (std::size_t p = 0; p < planes; ++p) {
        const bool diag = cfg.layout == CovLayout::Diagonal || p != 1;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t f = 0; f < F; ++f) {
                const double v = out.cache.chol_raw(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p * F + f));
                raw[p * T * F + t * F + f] =
                    (diag && cfg.diag_transform == DiagTransform::SoftplusClamp) ? softplus(v) : v;
            }
        }
    }
    out.pred.chol = CholeskyField::from_raw(cfg.layout, T, F, std::move(raw), cfg.delta);
    return out;
}

Spectrogram enhance(const ModelParams& params, const ModelConfig& cfg, const Spectrogram& noisy) {
    check_input(cfg, params, noisy);
    const RowMatrix h = run_trunk(params, cfg, noisy, nullptr);
    return mean_from_head(affine(h, params, params.mean_head()), noisy, cfg.residual_mean);
}

std::vector<double> backward(const ModelParams& params, const ModelConfig& cfg, const ForwardCache& cache,
                             const LossReport& upstream, bool drop_cov_head) {
    if (cache.empty() || cache.activations.size() != cfg.hidden_sizes.size())
        throw RuntimeError("backward: missing activation cache");
    const auto T = cache.input.rows();
    const std::size_t F = cfg.bins;
    const auto& gm = upstream.grad_mean;
    if (gm.frames != static_cast<std::size_t>(T) || gm.bins != F) throw ShapeError("backward: grad_mean shape mismatch");

    std::vector<double> grad(params.size(), 0.0);
    auto accumulate = [&](const LayerShape& l, const RowMatrix& dz, const RowMatrix& x) {
        Map gw(grad.data() + l.offset, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
        gw.noalias() += dz.transpose() * x;
        Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + l.bias_offset(), static_cast<Eigen::Index>(l.out));
        // Summed into owned storage first: evaluated in place, the reduction
        // order follows the alignment of grad.data().
        const Eigen::RowVectorXd bsum = dz.colwise().sum();
        gb += bsum;
    };

    const RowMatrix& h_last = cache.activations.back();

    RowMatrix d_mean(T, static_cast<Eigen::Index>(2 * F));
    for (Eigen::Index t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
            d_mean(t, static_cast<Eigen::Index>(f)) = gm.re_at(static_cast<std::size_t>(t), f);
            d_mean(t, static_cast<Eigen::Index>(F + f)) = gm.im_at(static_cast<std::size_t>(t), f);
        }
    }
    accumulate(params.mean_head(), d_mean, h_last);
    RowMatrix dh = d_mean * weights(params, params.mean_head());

    const std::size_t planes = CholeskyField::planes_for(cfg.layout);
    if (!upstream.grad_chol.empty()) {
        const std::size_t cells = static_cast<std::size_t>(T) * F;
        if (upstream.grad_chol.size() != planes * cells) throw ShapeError("backward: grad_chol shape mismatch");
        RowMatrix d_chol(T, static_cast<Eigen::Index>(planes * F));
        for (std::size_t p = 0; p < planes; ++p) {
            const bool diag = cfg.layout == CovLayout::Diagonal || p != 1;
            for (Eigen::Index t = 0; t < T; ++t) {
                for (std::size_t f = 0; f < F; ++f) {
                    const auto col = static_cast<Eigen::Index>(p * F + f);
                    double g = upstream.grad_chol[p * cells + static_cast<std::size_t>(t) * F + f];
                    if (diag) {
                        const double raw = cache.chol_raw(t, col);
                        if (cfg.diag_transform == DiagTransform::SoftplusClamp) {
                            g = softplus(raw) < cfg.delta ? 0.0 : g * sigmoid(raw);
                        } else if (raw < cfg.delta) {
                            g = 0.0;
                        }
                    }
                    d_chol(t, col) = g;
                }
            }
        }
        accumulate(params.chol_head(), d_chol, h_last);
        dh.noalias() += d_chol * weights(params, params.chol_head());
    }

    for (std::size_t i = cfg.hidden_sizes.size(); i-- > 0;) {
        const RowMatrix& h = cache.activations[i];
        const RowMatrix dz = (dh.array() * (1.0 - h.array().square())).matrix();
        const RowMatrix& x = i == 0 ? cache.input : cache.activations[i - 1];
        accumulate(params.layers[i], dz, x);
        if (i > 0) dh = dz * weights(params, params.layers[i]);
    }

    if (drop_cov_head) std::fill(grad.begin() + static_cast<std::ptrdiff_t>(params.head_boundary), grad.end(), 0.0);
    return grad;
}

std::string to_string(CovLayout layout) { return layout == CovLayout::Diagonal ? "diagonal" : "block2"; }

CovLayout parse_layout(const std::string& s) {
    if (s == "diagonal") return CovLayout::Diagonal;
    if (s == "block2") return CovLayout::Block2;
    throw ConfigError("unknown covariance layout '" + s + "'");
}

std::string to_string(DiagTransform t) { return t == DiagTransform::Clamp ? "clamp" : "softplus-clamp"; }

DiagTransform parse_diag_transform(const std::string& s) {
    if (s == "clamp") return DiagTransform::Clamp;
    if (s == "softplus-clamp") return DiagTransform::SoftplusClamp;
    throw ConfigError("unknown diagonal transform '" + s + "'");
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"context_frames", cfg.context_frames},
                          {"hidden_sizes", cfg.hidden_sizes},
                          {"layout", to_string(cfg.layout)},
                          {"bins", cfg.bins},
                          {"feature_norm", cfg.feature_norm},
                          {"delta", cfg.delta},
                          {"diag_transform", to_string(cfg.diag_transform)},
                          {"chol_head_gain", cfg.chol_head_gain},
                          {"residual_mean", cfg.residual_mean},
                          {"activation", "tanh"},
                          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig cfg;
        cfg.context_frames = j.value("context_frames", cfg.context_frames);
        cfg.hidden_sizes = j.value("hidden_sizes", cfg.hidden_sizes);
        if (j.contains("layout")) cfg.layout = parse_layout(j.at("layout").get<std::string>());
        cfg.bins = j.value("bins", cfg.bins);
        cfg.feature_norm = j.value("feature_norm", cfg.feature_norm);
        cfg.delta = j.value("delta", cfg.delta);
        if (j.contains("diag_transform"))
            cfg.diag_transform = parse_diag_transform(j.at("diag_transform").get<std::string>());
        cfg.chol_head_gain = j.value("chol_head_gain", cfg.chol_head_gain);
        cfg.residual_mean = j.value("residual_mean", cfg.residual_mean);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json meta = ckpt.meta;
    meta["config"] = to_json(ckpt.config);
    meta["param_count"] = ckpt.params.size();
    const std::string doc = meta.dump();

    std::string bytes;
    bytes.reserve(12 + doc.size() + 8 * ckpt.params.size());
    bytes += "HNLL";
    put_le(bytes, kCheckpointVersion);
    put_le(bytes, static_cast<std::uint32_t>(doc.size()));
    bytes += doc;
    for (double v : ckpt.params.values) put_le(bytes, std::bit_cast<std::uint64_t>(v));
    write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "HNLL") != 0)
        throw RuntimeError("checkpoint " + path.string() + ": bad magic");
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw RuntimeError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    const auto meta_len = get_le<std::uint32_t>(bytes, pos);
    if (bytes.size() < pos + meta_len) throw RuntimeError("checkpoint " + path.string() + ": truncated metadata");
    Checkpoint ckpt;
    try {
        ckpt.meta = nlohmann::json::parse(bytes.substr(pos, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw RuntimeError("checkpoint " + path.string() + ": bad metadata: " + e.what());
    }
    pos += meta_len;
    ckpt.config = model_config_from_json(ckpt.meta.at("config"));
    ckpt.params = make_layout(ckpt.config);
    const std::size_t n = ckpt.params.size();
    if (ckpt.meta.value("param_count", n) != n || bytes.size() != pos + 8 * n)
        throw RuntimeError("checkpoint " + path.string() + ": parameter block size mismatch");
    for (std::size_t i = 0; i < n; ++i) ckpt.params.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
    return ckpt;
}

}  // namespace hnll
