#pragma once

#include <png.h>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cubemap.hpp"
#include "error.hpp"
#include "image.hpp"

namespace texedit::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw AssetError("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
inline void write_file(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw AssetError("cannot write " + p.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw AssetError("short write to " + p.string());
    }
    fs::rename(tmp, p);
}

// ---------------------------------------------------------------------------
// Hashing and base64
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md);
    std::ostringstream ss;
    for (unsigned char c : md) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
    return ss.str();
}

inline std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length must be a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw std::invalid_argument("invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

// ---------------------------------------------------------------------------
// Little-endian scalar packing
// ---------------------------------------------------------------------------

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw AssetError("truncated binary data");
    unsigned char b[sizeof(T)];
    std::memcpy(b, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

/// float32 little-endian payload, base64 encoded (wire tensor format).
inline std::string pack_f32_b64(const std::vector<double>& v) {
    std::string raw;
    raw.reserve(v.size() * 4);
    for (double x : v) put_le(raw, static_cast<float>(x));
    return base64_encode(raw);
}

inline std::vector<double> unpack_f32_b64(std::string_view b64, std::size_t expected) {
    const std::string raw = base64_decode(b64);
    if (raw.size() != expected * 4) throw std::invalid_argument("tensor payload size does not match its shape");
    std::vector<double> v(expected);
    std::size_t pos = 0;
    for (double& x : v) x = get_le<float>(raw, pos);
    return v;
}

// ---------------------------------------------------------------------------
// PNG (8-bit)
// ---------------------------------------------------------------------------

enum class Encoding { linear, srgb };

inline double srgb_encode(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}
inline double srgb_decode(double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
}

/// Reads an 8- or 16-bit PNG as RGB in [0, 1]; sRGB encoding is decoded to linear.
inline Image read_png(const fs::path& path, Encoding enc) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw AssetError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw AssetError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double v = buf[i] / 255.0;
        out.data[i] = enc == Encoding::srgb ? srgb_decode(v) : v;
    }
    return out;
}

inline std::vector<unsigned char> quantize(const Image& img, Encoding enc) {
    if (img.channels != 3) throw std::invalid_argument("PNG output requires RGB");
    std::vector<unsigned char> buf(img.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const double v = enc == Encoding::srgb ? srgb_encode(img.data[i]) : std::clamp(img.data[i], 0.0, 1.0);
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    return buf;
}

inline void write_png(const fs::path& path, const Image& img, Encoding enc) {
    auto buf = quantize(img, enc);
    png_image p;
    std::memset(&p, 0, sizeof p);
    p.version = PNG_IMAGE_VERSION;
    p.width = static_cast<png_uint_32>(img.width);
    p.height = static_cast<png_uint_32>(img.height);
    p.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&p, nullptr, &size, 0, buf.data(), 0, nullptr))
        throw AssetError(std::string("PNG encode failed: ") + p.message);
    std::string mem(size, '\0');
    if (!png_image_write_to_memory(&p, mem.data(), &size, 0, buf.data(), 0, nullptr))
        throw AssetError(std::string("PNG encode failed: ") + p.message);
    mem.resize(size);
    write_file(path, mem);
}

// ---------------------------------------------------------------------------
// PFM (float HDR)
// ---------------------------------------------------------------------------

/// Little-endian colour PFM. Rows are stored bottom-up as the format requires.
inline std::string encode_pfm(const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("PFM output requires RGB");
    std::string out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) put_le(out, static_cast<float>(img.at(x, y, c)));
    return out;
}

inline void write_pfm(const fs::path& path, const Image& img) { write_file(path, encode_pfm(img)); }

inline Image decode_pfm(std::string_view bytes, const std::string& what = "PFM") {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t s = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (s == pos) throw AssetError(what + ": truncated header");
        return std::string(bytes.substr(s, pos - s));
    };
    const std::string magic = token();
    int channels = 0;
    if (magic == "PF") channels = 3;
    else if (magic == "Pf") channels = 1;
    else throw AssetError(what + ": not a PFM file");
    int w = 0, h = 0;
    double scale = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
    } catch (const std::logic_error&) {
        throw AssetError(what + ": malformed header");
    }
    if (w <= 0 || h <= 0 || scale == 0) throw AssetError(what + ": invalid dimensions");
    ++pos;  // single whitespace byte before the raster
    const bool little = scale < 0;
    if (bytes.size() - pos < static_cast<std::size_t>(w) * h * channels * 4) throw AssetError(what + ": truncated raster");
    Image img(w, h, 3);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                unsigned char b[4];
                std::memcpy(b, bytes.data() + pos, 4);
                pos += 4;
                if (little != (std::endian::native == std::endian::little)) std::reverse(b, b + 4);
                float f;
                std::memcpy(&f, b, 4);
                if (channels == 1)
                    for (int k = 0; k < 3; ++k) img.at(x, y, k) = f;
                else
                    img.at(x, y, c) = f;
            }
    return img;
}

inline Image read_pfm(const fs::path& path) { return decode_pfm(read_file(path), path.string()); }

/// HDR image by extension: .pfm as float, .png as sRGB 8-bit.
inline Image read_hdr(const fs::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".png") return read_png(path, Encoding::srgb);
    throw AssetError("unsupported environment image format: " + path.string());
}

/// Cubemap faces stacked vertically (+X, -X, +Y, -Y, +Z, -Z) as one image.
inline Image cube_to_strip(const CubeImage& c) {
    Image img(c.res, 6 * c.res, 3);
    for (int f = 0; f < 6; ++f)
        for (int y = 0; y < c.res; ++y)
            for (int x = 0; x < c.res; ++x) img.set_rgb(x, f * c.res + y, c.get(static_cast<std::size_t>((f * c.res + y) * c.res + x)));
    return img;
}

inline CubeImage strip_to_cube(const Image& img) {
    if (img.height != 6 * img.width) throw AssetError("cube strip must be W x 6W");
    CubeImage c(img.width);
    for (int f = 0; f < 6; ++f)
        for (int y = 0; y < c.res; ++y)
            for (int x = 0; x < c.res; ++x) c.set(static_cast<std::size_t>((f * c.res + y) * c.res + x), img.rgb(x, f * c.res + y));
    return c;
}

// ---------------------------------------------------------------------------
// Named-record container (checkpoints and cached tables)
// ---------------------------------------------------------------------------

/// Versioned binary container of named float64 tensors and strings.
/// Layout: "TXCK", u32 version, u32 count, then per record
/// u8 kind, u32 name length, name, payload (tensor: u32 rank, u64 dims, f64 values; string: u64 length, bytes).
class Container {
public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
    void put(const std::string& name, const Image& img) { tensors_[name] = to_tensor(img); }
    void put_string(const std::string& name, std::string s) { strings_[name] = std::move(s); }

    bool has_tensor(const std::string& name) const { return tensors_.count(name) != 0; }
    bool has_string(const std::string& name) const { return strings_.count(name) != 0; }

    const Tensor& tensor(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw AssetError("container has no tensor '" + name + "'");
        return it->second;
    }
    Image image(const std::string& name) const { return to_image(tensor(name)); }
    const std::string& string(const std::string& name) const {
        auto it = strings_.find(name);
        if (it == strings_.end()) throw AssetError("container has no string '" + name + "'");
        return it->second;
    }

    std::string serialize() const {
        std::string out = "TXCK";
        put_le<std::uint32_t>(out, kVersion);
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size() + strings_.size()));
        auto name = [&](const std::string& n) {
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n.size()));
            out += n;
        };
        for (const auto& [n, t] : tensors_) {
            put_le<std::uint8_t>(out, 0);
            name(n);
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
            for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
            for (double v : t.data) put_le(out, v);
        }
        for (const auto& [n, s] : strings_) {
            put_le<std::uint8_t>(out, 1);
            name(n);
            put_le<std::uint64_t>(out, s.size());
            out += s;
        }
        return out;
    }

    static Container parse(std::string_view in) {
        if (in.substr(0, 4) != "TXCK") throw AssetError("not a texedit container");
        std::size_t pos = 4;
        const auto version = get_le<std::uint32_t>(in, pos);
        if (version != kVersion) throw AssetError("unsupported container version " + std::to_string(version));
        const auto count = get_le<std::uint32_t>(in, pos);
        Container c;
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto kind = get_le<std::uint8_t>(in, pos);
            const auto len = get_le<std::uint32_t>(in, pos);
            if (pos + len > in.size()) throw AssetError("truncated container");
            std::string n(in.substr(pos, len));
            pos += len;
            if (kind == 0) {
                Tensor t;
                const auto rank = get_le<std::uint32_t>(in, pos);
                for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(get_le<std::uint64_t>(in, pos));
                const std::size_t numel = Tensor::numel(t.shape);
                if ((in.size() - pos) / 8 < numel) throw AssetError("truncated container");
                t.data.resize(numel);
                for (double& v : t.data) v = get_le<double>(in, pos);
                c.tensors_[n] = std::move(t);
            } else if (kind == 1) {
                const auto slen = get_le<std::uint64_t>(in, pos);
                if (pos + slen > in.size()) throw AssetError("truncated container");
                c.strings_[n] = std::string(in.substr(pos, slen));
                pos += slen;
            } else {
                throw AssetError("unknown container record kind");
            }
        }
        return c;
    }

    void save(const fs::path& p) const { write_file(p, serialize()); }
    static Container load(const fs::path& p) { return parse(read_file(p)); }

private:
    std::map<std::string, Tensor> tensors_;
    std::map<std::string, std::string> strings_;
};

}  // namespace texedit::io
