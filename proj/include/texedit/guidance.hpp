#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace texedit {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Cumulative signal coefficients alpha_bar[t] of a discrete diffusion process.
class DiffusionSchedule {
public:
    /// Linear beta schedule: beta_t evenly spaced in [beta_start, beta_end].
    static DiffusionSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
        if (steps < 2) throw ConfigError("diffusion schedule needs at least two steps");
        std::vector<double> ab(static_cast<std::size_t>(steps));
        double prod = 1.0;
        for (int t = 0; t < steps; ++t) {
            const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
            prod *= 1.0 - beta;
            ab[static_cast<std::size_t>(t)] = prod;
        }
        return DiffusionSchedule(std::move(ab));
    }

    explicit DiffusionSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
        if (alpha_bar_.empty()) throw ConfigError("empty diffusion schedule");
        for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
            const double a = alpha_bar_[i];
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha_bar must lie in (0, 1)");
            if (i > 0 && !(a < alpha_bar_[i - 1])) throw ConfigError("alpha_bar must be strictly decreasing");
        }
    }

    int steps() const { return static_cast<int>(alpha_bar_.size()); }
    double alpha_bar(int t) const {
        if (t < 0 || t >= steps()) throw std::out_of_range("timestep outside schedule");
        return alpha_bar_[static_cast<std::size_t>(t)];
    }
    double signal(int t) const { return std::sqrt(alpha_bar(t)); }
    double noise(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

private:
    std::vector<double> alpha_bar_;
};

enum class WeightMode { constant, one_minus_alpha_bar };

inline const char* to_string(WeightMode m) {
    return m == WeightMode::constant ? "constant" : "one_minus_alpha_bar";
}

inline WeightMode weight_mode_from_string(std::string_view s) {
    if (s == "constant") return WeightMode::constant;
    if (s == "one_minus_alpha_bar") return WeightMode::one_minus_alpha_bar;
    throw ConfigError("unknown weight mode: " + std::string(s));
}

struct GuidanceConfig {
    double omega = 30.0;
    WeightMode weight = WeightMode::constant;
    double t_min = 0.02;
    double t_max = 0.98;
    std::string source_prompt;
    std::string target_prompt;
    int adjust_period = 50;
    bool adjust = true;
    bool use_sds = false;  // ablation: plain score distillation on the target prompt

    void validate() const {
        if (!(t_min >= 0.0 && t_min < t_max && t_max <= 1.0)) throw ConfigError("timestep range must satisfy 0 <= t_min < t_max <= 1");
        if (adjust_period < 1) throw ConfigError("adjustment period must be >= 1");
        if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("guidance weight must be finite and non-negative");
    }
};

inline double timestep_weight(const GuidanceConfig& cfg, const DiffusionSchedule& sched, int t) {
    return cfg.weight == WeightMode::constant ? 1.0 : 1.0 - sched.alpha_bar(t);
}

/// Uniform integer timestep in [t_min T, t_max T], clipped to the schedule.
template <class Rng>
int sample_timestep(Rng& rng, const GuidanceConfig& cfg, const DiffusionSchedule& sched) {
    const int T = sched.steps();
    const int lo = std::clamp(static_cast<int>(std::ceil(cfg.t_min * T)), 0, T - 1);
    const int hi = std::clamp(static_cast<int>(std::floor(cfg.t_max * T)), lo, T - 1);
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Standard-normal tensor of the given shape.
template <class Rng>
Tensor sample_noise(Rng& rng, const std::vector<std::size_t>& shape) {
    Tensor eps(shape);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : eps.data) v = normal(rng);
    return eps;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// z_t = sqrt(alpha_bar) latent + sqrt(1 - alpha_bar) eps
inline Tensor add_noise(const Tensor& latent, double alpha_bar, const Tensor& eps) {
    check_same_shape(latent, eps, "add_noise");
    const double s = std::sqrt(alpha_bar), n = std::sqrt(1.0 - alpha_bar);
    Tensor z(latent.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] = s * latent.data[i] + n * eps.data[i];
    return z;
}

inline Tensor add_noise(const Tensor& latent, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    return add_noise(latent, sched.alpha_bar(t), eps);
}

// ---------------------------------------------------------------------------
// Model interfaces
// ---------------------------------------------------------------------------

/// One noise-prediction query. alpha_bar and eps are side information for in-process mocks;
/// remote backends use only latent, prompt, t and omega.
struct NoiseQuery {
    const Tensor& latent;
    const std::string& prompt;
    int t;
    double omega;
    double alpha_bar;
    const Tensor* eps = nullptr;
};

class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual std::string name() const = 0;
    virtual Tensor encode(const Image& image) = 0;
    virtual Tensor predict_noise(const NoiseQuery& q) = 0;
    /// Adjoint of encode at `image`: latent cotangent to image cotangent.
    virtual Image latent_grad_to_image(const Tensor& grad, const Image& image) = 0;
    virtual std::vector<std::size_t> latent_shape(const Image& image) { return encode(image).shape; }
};

class Captioner {
public:
    virtual ~Captioner() = default;
    virtual std::string caption(const Image& image) = 0;
};

// ---------------------------------------------------------------------------
// Guidance gradients
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor checked_prediction(NoisePredictor& pred, const NoiseQuery& q) {
    Tensor out;
    try {
        out = pred.predict_noise(q);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(pred.name() + ": predict_noise failed for prompt '" + q.prompt + "' at t=" +
                           std::to_string(q.t) + ": " + e.what());
    }
    if (out.shape != q.latent.shape)
        throw BackendError(pred.name() + ": predicted noise shape differs from latent shape");
    return out;
}

}  // namespace detail

/// Image-space cotangent w(t) (eps_hat(z_t; y) - eps), mapped through the encoder adjoint.
inline Image sds_gradient(NoisePredictor& pred, const Image& x, const std::string& y, int t, const Tensor& eps,
                          const GuidanceConfig& cfg, const DiffusionSchedule& sched) {
    const Tensor latent = pred.encode(x);
    check_same_shape(latent, eps, "sds_gradient");
    const double ab = sched.alpha_bar(t);
    const Tensor z = add_noise(latent, ab, eps);
    const Tensor e = detail::checked_prediction(pred, {z, y, t, cfg.omega, ab, &eps});
    const double w = timestep_weight(cfg, sched, t);
    Tensor g(latent.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = w * (e.data[i] - eps.data[i]);
    return pred.latent_grad_to_image(g, x);
}

/// Image-space cotangent w(t) (eps_hat(z_t; y_tgt) - eps_hat(z_t; y_src)) for one shared z_t.
inline Image rdl_gradient(NoisePredictor& pred, const Image& x, const std::string& y_tgt, const std::string& y_src, int t,
                          const Tensor& eps, const GuidanceConfig& cfg, const DiffusionSchedule& sched) {
    const Tensor latent = pred.encode(x);
    check_same_shape(latent, eps, "rdl_gradient");
    const double ab = sched.alpha_bar(t);
    const Tensor z = add_noise(latent, ab, eps);
    const Tensor et = detail::checked_prediction(pred, {z, y_tgt, t, cfg.omega, ab, &eps});
    const Tensor es = detail::checked_prediction(pred, {z, y_src, t, cfg.omega, ab, &eps});
    const double w = timestep_weight(cfg, sched, t);
    Tensor g(latent.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = w * (et.data[i] - es.data[i]);
    return pred.latent_grad_to_image(g, x);
}

// ---------------------------------------------------------------------------
// Direction adjustment
// ---------------------------------------------------------------------------

struct AdjustmentEvent {
    int iteration = 0;
    std::string from;
    std::string to;
};

struct AdjustResult {
    std::string prompt;
    bool adjusted = false;  // an adjustment event fired at this iteration
    std::string warning;    // non-empty when the captioner failed and the prompt was kept
};

/// Every `adjust_period` iterations the source prompt is replaced by a caption of the current render.
inline AdjustResult adjust_source_prompt(Captioner& captioner, const Image& current_render, int iteration,
                                         const GuidanceConfig& cfg, const std::string& current) {
    AdjustResult r{current, false, {}};
    if (!cfg.adjust || iteration < 1 || iteration % cfg.adjust_period != 0) return r;
    try {
        std::string c = captioner.caption(current_render);
        if (c.empty()) throw BackendError("captioner returned empty text");
        r.prompt = std::move(c);
        r.adjusted = true;
    } catch (const std::exception& e) {
        r.warning = std::string("captioner failed, keeping source prompt: ") + e.what();
    }
    return r;
}

// ---------------------------------------------------------------------------
// In-process mocks
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Identity encoder shared by the mocks: the latent is the (H, W, C) image itself.
class IdentityEncoder : public NoisePredictor {
public:
    Tensor encode(const Image& image) override { return to_tensor(image); }
    Image latent_grad_to_image(const Tensor& grad, const Image& image) override {
        Image g = to_image(grad);
        if (!g.same_shape(image)) throw std::invalid_argument("latent gradient does not match image");
        return g;
    }
    std::vector<std::size_t> latent_shape(const Image& image) override {
        return {static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width),
                static_cast<std::size_t>(image.channels)};
    }
};

/// Predicts exactly the noise that was added.
class NullPredictor final : public IdentityEncoder {
public:
    std::string name() const override { return "mock:null"; }
    Tensor predict_noise(const NoiseQuery& q) override {
        if (!q.eps) throw BackendError("mock:null needs the sampled noise");
        return *q.eps;
    }
};

/// Predicts the noise that would turn a registered per-prompt image into z_t.
/// Unregistered prompts describe the input perfectly, so their prediction is the added noise.
class TargetImagePredictor final : public IdentityEncoder {
public:
    std::string name() const override { return "mock:target"; }

    void register_prompt(const std::string& prompt, Image image) { targets_[prompt] = std::move(image); }
    bool has(const std::string& prompt) const { return targets_.count(prompt) != 0; }
    const Image& target(const std::string& prompt) const { return targets_.at(prompt); }

    Tensor predict_noise(const NoiseQuery& q) override {
        auto it = targets_.find(q.prompt);
        if (it == targets_.end()) {
            if (!q.eps) throw BackendError("mock:target: prompt '" + q.prompt + "' is not registered");
            return *q.eps;
        }
        const Tensor target = to_tensor(it->second);
        if (target.shape != q.latent.shape) throw BackendError("mock:target: registered image does not match latent shape");
        const double s = std::sqrt(q.alpha_bar), n = std::sqrt(1.0 - q.alpha_bar);
        Tensor e(q.latent.shape);
        for (std::size_t i = 0; i < e.data.size(); ++i) e.data[i] = (q.latent.data[i] - s * target.data[i]) / n;
        return e;
    }

private:
    std::map<std::string, Image> targets_;
};

/// eps_hat = M z + b with a fixed pseudo-random (M, b) per prompt, blended with the empty-prompt
/// pair by classifier-free guidance: (M, b)_u + omega ((M, b)_y - (M, b)_u).
class RandomLinearPredictor final : public IdentityEncoder {
public:
    explicit RandomLinearPredictor(std::uint64_t seed = 0) : seed_(seed) {}
    std::string name() const override { return "mock:linear"; }

    Tensor predict_noise(const NoiseQuery& q) override {
        const std::size_t n = q.latent.size();
        if (n > kMaxLatent) throw BackendError("mock:linear supports latents of at most 4096 values");
        const Affine& c = affine(q.prompt, n);
        const Affine& u = affine("", n);
        const Tensor ec = apply(c, q.latent), eu = apply(u, q.latent);
        Tensor e(q.latent.shape);
        for (std::size_t i = 0; i < n; ++i) e.data[i] = eu.data[i] + q.omega * (ec.data[i] - eu.data[i]);
        return e;
    }

private:
    static constexpr std::size_t kMaxLatent = 4096;
    struct Affine {
        std::vector<double> m, b;
    };

    const Affine& affine(const std::string& prompt, std::size_t n) {
        auto key = std::make_pair(prompt, n);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        std::mt19937_64 rng(fnv1a(prompt, 0xcbf29ce484222325ull ^ seed_) ^ n);
        std::normal_distribution<double> normal(0.0, 1.0);
        Affine a;
        a.m.resize(n * n);
        a.b.resize(n);
        const double scale = 1.0 / std::sqrt(static_cast<double>(n));
        for (double& v : a.m) v = normal(rng) * scale;
        for (double& v : a.b) v = normal(rng);
        return cache_.emplace(key, std::move(a)).first->second;
    }

    static Tensor apply(const Affine& a, const Tensor& z) {
        const std::size_t n = z.size();
        Tensor r(z.shape);
        for (std::size_t i = 0; i < n; ++i) {
            double s = a.b[i];
            for (std::size_t j = 0; j < n; ++j) s += a.m[i * n + j] * z.data[j];
            r.data[i] = s;
        }
        return r;
    }

    std::uint64_t seed_;
    std::map<std::pair<std::string, std::size_t>, Affine> cache_;
};

/// Always returns the same caption.
class FixedCaptioner final : public Captioner {
public:
    explicit FixedCaptioner(std::string text) : text_(std::move(text)) {}
    std::string caption(const Image&) override { return text_; }

private:
    std::string text_;
};

/// Returns the k-th scripted caption on the k-th call, then repeats the last one.
class ScriptedCaptioner final : public Captioner {
public:
    explicit ScriptedCaptioner(std::vector<std::string> script) : script_(std::move(script)) {
        if (script_.empty()) throw ConfigError("scripted captioner needs at least one caption");
    }
    std::string caption(const Image&) override {
        const std::size_t i = std::min(calls_++, script_.size() - 1);
        return script_[i];
    }
    std::size_t calls() const { return calls_; }

private:
    std::vector<std::string> script_;
    std::size_t calls_ = 0;
};

}  // namespace texedit
