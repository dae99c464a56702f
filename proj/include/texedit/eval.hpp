#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "guidance.hpp"
#include "image.hpp"

namespace texedit {

using Embedding = std::vector<double>;

/// Maps text and images into a shared space of unit vectors.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    virtual Embedding embed_text(const std::string& text) = 0;
    virtual Embedding embed_image(const Image& image) = 0;
};

struct DegenerateDirectionError : Error {
    explicit DegenerateDirectionError(const std::string& w) : Error(ErrorKind::config, w) {}
};

inline double norm(const Embedding& v) { return l2_norm(v); }

inline Embedding normalized(Embedding v) {
    const double n = norm(v);
    if (!(n > 0) || !std::isfinite(n)) throw std::invalid_argument("cannot normalise a zero or non-finite vector");
    for (double& x : v) x /= n;
    return v;
}

/// Cosine similarity; both inputs are normalised first.
inline double cosine(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw std::invalid_argument("embedding dimensions differ");
    const Embedding na = normalized(a), nb = normalized(b);
    double d = 0;
    for (std::size_t i = 0; i < na.size(); ++i) d += na[i] * nb[i];
    return std::clamp(d, -1.0, 1.0);
}

inline double global_score(const Embedding& image, const Embedding& text) { return cosine(image, text); }

inline double global_score(Embedder& emb, const Image& image, const std::string& text) {
    return global_score(emb.embed_image(image), emb.embed_text(text));
}

/// cos(I_tgt - I_src, T_tgt - T_src).
inline double directional_score(const Embedding& img_src, const Embedding& img_tgt, const Embedding& text_src,
                                const Embedding& text_tgt, double tolerance = 1e-9) {
    if (img_src.size() != img_tgt.size() || text_src.size() != text_tgt.size() || img_src.size() != text_src.size())
        throw std::invalid_argument("embedding dimensions differ");
    Embedding di(img_src.size()), dt(text_src.size());
    for (std::size_t i = 0; i < di.size(); ++i) {
        di[i] = img_tgt[i] - img_src[i];
        dt[i] = text_tgt[i] - text_src[i];
    }
    if (norm(dt) <= tolerance) throw DegenerateDirectionError("degenerate direction: source and target text embeddings coincide");
    if (norm(di) <= tolerance) throw DegenerateDirectionError("degenerate direction: source and target image embeddings coincide");
    return cosine(di, dt);
}

inline double directional_score(Embedder& emb, const Image& img_src, const Image& img_tgt, const std::string& text_src,
                                const std::string& text_tgt) {
    return directional_score(emb.embed_image(img_src), emb.embed_image(img_tgt), emb.embed_text(text_src),
                             emb.embed_text(text_tgt));
}

struct ViewScore {
    double global = 0;
    double directional = 0;
};

struct ScoreReport {
    double global = 0;
    double directional = 0;
    std::vector<ViewScore> views;
    std::string source_prompt;
    std::string target_prompt;
    std::size_t view_count() const { return views.size(); }
};

/// Per-view scores over paired before/after renders, averaged.
inline ScoreReport score_views(Embedder& emb, const std::vector<Image>& before, const std::vector<Image>& after,
                               const std::string& text_src, const std::string& text_tgt) {
    if (before.size() != after.size() || before.empty()) throw std::invalid_argument("score_views: need matching non-empty view sets");
    ScoreReport rep;
    rep.source_prompt = text_src;
    rep.target_prompt = text_tgt;
    const Embedding ts = emb.embed_text(text_src), tt = emb.embed_text(text_tgt);
    for (std::size_t i = 0; i < before.size(); ++i) {
        const Embedding is = emb.embed_image(before[i]), it = emb.embed_image(after[i]);
        ViewScore v{global_score(it, tt), directional_score(is, it, ts, tt)};
        rep.global += v.global;
        rep.directional += v.directional;
        rep.views.push_back(v);
    }
    rep.global /= static_cast<double>(before.size());
    rep.directional /= static_cast<double>(before.size());
    return rep;
}

// ---------------------------------------------------------------------------
// Mock embedders
// ---------------------------------------------------------------------------

/// Embeddings looked up by key; images are keyed through a caller-supplied function.
class TableEmbedder final : public Embedder {
public:
    using ImageKey = std::function<std::string(const Image&)>;

    TableEmbedder(std::size_t dim, ImageKey key) : dim_(dim), key_(std::move(key)) {}

    void set(const std::string& key, Embedding v) {
        if (v.size() != dim_) throw std::invalid_argument("embedding has wrong dimension");
        table_[key] = normalized(std::move(v));
    }

    std::size_t dimension() const override { return dim_; }
    Embedding embed_text(const std::string& text) override { return lookup(text); }
    Embedding embed_image(const Image& image) override { return lookup(key_(image)); }

private:
    Embedding lookup(const std::string& k) const {
        auto it = table_.find(k);
        if (it == table_.end()) throw BackendError("no mock embedding for '" + k + "'");
        return it->second;
    }

    std::size_t dim_;
    ImageKey key_;
    std::map<std::string, Embedding> table_;
};

/// Deterministic embedder: texts map to seeded Gaussian directions, images to a fixed random
/// projection of an 8x8 area-averaged thumbnail.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = 64, std::uint64_t seed = 7) : dim_(dim), seed_(seed) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::normal_distribution<double> normal(0.0, 1.0);
        proj_.resize(dim_ * kThumb);
        for (double& v : proj_) v = normal(rng);
    }

    std::size_t dimension() const override { return dim_; }

    Embedding embed_text(const std::string& text) override {
        std::mt19937_64 rng(fnv1a(text) ^ seed_);
        std::normal_distribution<double> normal(0.0, 1.0);
        Embedding v(dim_);
        for (double& x : v) x = normal(rng);
        return normalized(std::move(v));
    }

    Embedding embed_image(const Image& image) override {
        if (image.empty() || image.channels < 3) throw std::invalid_argument("embed_image: RGB image required");
        std::vector<double> thumb(kThumb, 0.0);
        std::vector<double> count(kSide * kSide, 0.0);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const int tx = x * kSide / image.width, ty = y * kSide / image.height;
                const std::size_t cell = static_cast<std::size_t>(ty * kSide + tx);
                for (int c = 0; c < 3; ++c) thumb[cell * 3 + static_cast<std::size_t>(c)] += image.at(x, y, c);
                count[cell] += 1.0;
            }
        for (std::size_t i = 0; i < thumb.size(); ++i) thumb[i] = count[i / 3] > 0 ? thumb[i] / count[i / 3] - 0.5 : 0.0;
        Embedding v(dim_, 0.0);
        for (std::size_t k = 0; k < dim_; ++k)
            for (std::size_t i = 0; i < kThumb; ++i) v[k] += proj_[k * kThumb + i] * thumb[i];
        if (norm(v) == 0) v[0] = 1.0;
        return normalized(std::move(v));
    }

private:
    static constexpr int kSide = 8;
    static constexpr std::size_t kThumb = kSide * kSide * 3;
    std::size_t dim_;
    std::uint64_t seed_;
    std::vector<double> proj_;
};

}  // namespace texedit
