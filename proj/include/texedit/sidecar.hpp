#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "eval.hpp"
#include "guidance.hpp"
#include "image.hpp"
#include "io.hpp"

namespace texedit::sidecar {

using nlohmann::json;

inline constexpr int kProtocolVersion = 1;

inline json encode_tensor(const Tensor& t) { return {{"shape", t.shape}, {"b64", io::pack_f32_b64(t.data)}}; }

inline Tensor decode_tensor(const json& j) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("b64")) throw BackendError("malformed tensor payload");
    Tensor t;
    try {
        t.shape = j.at("shape").get<std::vector<std::size_t>>();
        t.data = io::unpack_f32_b64(j.at("b64").get<std::string>(), Tensor::numel(t.shape));
    } catch (const json::exception& e) {
        throw BackendError(std::string("malformed tensor payload: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw BackendError(std::string("malformed tensor payload: ") + e.what());
    }
    return t;
}

/// Owned socket descriptor speaking newline-delimited records.
class LineChannel {
public:
    LineChannel() = default;
    explicit LineChannel(int fd) : fd_(fd) {}
    LineChannel(const LineChannel&) = delete;
    LineChannel& operator=(const LineChannel&) = delete;
    LineChannel(LineChannel&& o) noexcept : fd_(std::exchange(o.fd_, -1)), buf_(std::move(o.buf_)) {}
    LineChannel& operator=(LineChannel&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
            buf_ = std::move(o.buf_);
        }
        return *this;
    }
    ~LineChannel() { close(); }

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    bool open() const { return fd_ >= 0; }

    void write_line(std::string_view line) {
        std::string data(line);
        data.push_back('\n');
        std::size_t off = 0;
        while (off < data.size()) {
            const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("sidecar write failed: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    /// Blocks until a full line arrives or `timeout_ms` elapses (negative waits forever).
    std::string read_line(int timeout_ms) {
        for (;;) {
            const auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return line;
            }
            pollfd p{fd_, POLLIN, 0};
            const int r = ::poll(&p, 1, timeout_ms);
            if (r < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("sidecar poll failed: ") + std::strerror(errno));
            }
            if (r == 0) throw BackendError("sidecar timed out after " + std::to_string(timeout_ms) + " ms");
            char chunk[65536];
            const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("sidecar read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw BackendError("sidecar closed the connection");
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_ = -1;
    std::string buf_;
};

/// Connects to "unix:<path>" or "tcp:<host>:<port>".
inline LineChannel connect_endpoint(const std::string& endpoint) {
    if (endpoint.rfind("unix:", 0) == 0) {
        const std::string path = endpoint.substr(5);
        sockaddr_un addr{};
        if (path.empty() || path.size() >= sizeof(addr.sun_path)) throw ConfigError("invalid unix socket path: " + path);
        addr.sun_family = AF_UNIX;
        std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
        const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd < 0) throw BackendError(std::string("socket: ") + std::strerror(errno));
        LineChannel ch(fd);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw BackendError("cannot connect to " + endpoint + ": " + std::strerror(errno));
        return ch;
    }
    if (endpoint.rfind("tcp:", 0) == 0) {
        const std::string rest = endpoint.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) throw ConfigError("tcp endpoint must be tcp:<host>:<port>");
        const std::string host = rest.substr(0, colon), port = rest.substr(colon + 1);
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
            throw BackendError("cannot resolve " + endpoint);
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        for (addrinfo* a = res; a; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
            if (fd < 0) continue;
            LineChannel ch(fd);
            if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) return ch;
        }
        throw BackendError("cannot connect to " + endpoint);
    }
    throw ConfigError("unknown sidecar endpoint scheme: " + endpoint);
}

struct LatentGeometry {
    std::size_t channels = 4;
    std::size_t downscale = 8;
};

/// Synchronous request/response client. Ids increase from 1; each response must echo its request id.
class Client {
public:
    explicit Client(LineChannel ch, int timeout_ms = 120000) : ch_(std::move(ch)), timeout_ms_(timeout_ms) {}

    /// Protocol handshake; returns the server's latent geometry.
    LatentGeometry hello() {
        const json r = call("hello", {{"protocol_version", kProtocolVersion}});
        try {
            const int v = r.at("protocol_version").get<int>();
            if (v != kProtocolVersion)
                throw BackendError("sidecar speaks protocol " + std::to_string(v) + ", expected " + std::to_string(kProtocolVersion));
            geometry_.channels = r.at("latent").at("channels").get<std::size_t>();
            geometry_.downscale = r.at("latent").at("downscale").get<std::size_t>();
        } catch (const json::exception& e) {
            throw BackendError(std::string("malformed hello response: ") + e.what());
        }
        if (geometry_.channels == 0 || geometry_.downscale == 0) throw BackendError("sidecar reported empty latent geometry");
        return geometry_;
    }

    void ping() { call("ping", json::object()); }

    /// Sends one request and returns the response payload. Error responses become BackendError.
    json call(const std::string& kind, const json& payload) {
        const std::uint64_t id = next_id_++;
        ch_.write_line(json{{"id", id}, {"kind", kind}, {"payload", payload}}.dump());
        json resp;
        try {
            resp = json::parse(ch_.read_line(timeout_ms_));
        } catch (const json::parse_error& e) {
            throw BackendError(std::string("sidecar sent malformed JSON: ") + e.what());
        }
        if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_unsigned() || resp["id"].get<std::uint64_t>() != id)
            throw BackendError("sidecar response id does not match request " + std::to_string(id));
        if (resp.contains("error") && !resp["error"].is_null()) {
            const json& e = resp["error"];
            throw BackendError("sidecar " + kind + " failed [" + e.value("code", std::string("unknown")) + "]: " +
                               e.value("message", std::string()));
        }
        if (!resp.contains("payload")) throw BackendError("sidecar response lacks a payload");
        return resp["payload"];
    }

    const LatentGeometry& geometry() const { return geometry_; }
    std::uint64_t requests_sent() const { return next_id_ - 1; }

private:
    LineChannel ch_;
    int timeout_ms_;
    std::uint64_t next_id_ = 1;
    LatentGeometry geometry_;
};

namespace detail {
inline json field(const json& payload, const char* key) {
    if (!payload.is_object() || !payload.contains(key)) throw BackendError(std::string("sidecar response lacks '") + key + "'");
    return payload.at(key);
}
}  // namespace detail

class Predictor final : public NoisePredictor {
public:
    explicit Predictor(std::shared_ptr<Client> c) : c_(std::move(c)) {}
    std::string name() const override { return "sidecar"; }

    Tensor encode(const Image& image) override {
        return decode_tensor(detail::field(c_->call("encode", {{"image", encode_tensor(to_tensor(image))}}), "latent"));
    }
    Tensor predict_noise(const NoiseQuery& q) override {
        const json p = {{"latent", encode_tensor(q.latent)}, {"text", q.prompt}, {"t", q.t}, {"omega", q.omega}};
        return decode_tensor(detail::field(c_->call("predict_noise", p), "noise"));
    }
    Image latent_grad_to_image(const Tensor& grad, const Image& image) override {
        const json p = {{"grad", encode_tensor(grad)}, {"image", encode_tensor(to_tensor(image))}};
        Image g = to_image(decode_tensor(detail::field(c_->call("latent_grad_to_image", p), "image_grad")));
        if (!g.same_shape(image)) throw BackendError("sidecar image gradient does not match the image");
        return g;
    }
    std::vector<std::size_t> latent_shape(const Image& image) override {
        const auto& g = c_->geometry();
        return {g.channels, static_cast<std::size_t>(image.height) / g.downscale, static_cast<std::size_t>(image.width) / g.downscale};
    }

private:
    std::shared_ptr<Client> c_;
};

class RemoteCaptioner final : public Captioner {
public:
    explicit RemoteCaptioner(std::shared_ptr<Client> c) : c_(std::move(c)) {}
    std::string caption(const Image& image) override {
        const json t = detail::field(c_->call("caption", {{"image", encode_tensor(to_tensor(image))}}), "text");
        if (!t.is_string()) throw BackendError("caption must be a string");
        return t.get<std::string>();
    }

private:
    std::shared_ptr<Client> c_;
};

class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(std::shared_ptr<Client> c) : c_(std::move(c)) {}
    std::size_t dimension() const override { return dim_; }
    Embedding embed_text(const std::string& text) override { return unit(c_->call("embed_text", {{"text", text}})); }
    Embedding embed_image(const Image& image) override {
        return unit(c_->call("embed_image", {{"image", encode_tensor(to_tensor(image))}}));
    }

private:
    Embedding unit(const json& payload) {
        Tensor t = decode_tensor(detail::field(payload, "embedding"));
        if (t.shape.size() != 1 || t.data.empty()) throw BackendError("embedding must be a non-empty vector");
        if (dim_ == 0) dim_ = t.data.size();
        if (t.data.size() != dim_) throw BackendError("embedding dimension changed between calls");
        return normalized(std::move(t.data));
    }

    std::shared_ptr<Client> c_;
    std::size_t dim_ = 0;
};

}  // namespace texedit::sidecar
