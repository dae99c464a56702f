#include <gtest/gtest.h>

#include <sys/socket.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <thread>
#include <utility>

#include <texedit/optimize.hpp>
#include <texedit/sidecar.hpp>

#include "support.hpp"

using namespace texedit;
using nlohmann::json;

namespace {

using Handler = std::function<json(const json& request)>;

/// In-process server on one end of a socket pair; answers each request with handler(request).
class FakeServer {
public:
    explicit FakeServer(Handler h) {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw std::runtime_error("socketpair");
        client_fd_ = fds[0];
        server_ = sidecar::LineChannel(fds[1]);
        thread_ = std::thread([this, h = std::move(h)] {
            try {
                for (;;) {
                    const json req = json::parse(server_.read_line(-1));
                    ids.push_back(req.at("id").get<std::uint64_t>());
                    const json resp = h(req);
                    if (!resp.is_null()) server_.write_line(resp.dump());
                }
            } catch (...) {
            }
        });
    }
    // The client end must be closed (its owner destroyed) before the server can finish.
    ~FakeServer() {
        if (client_fd_ >= 0) ::close(client_fd_);
        thread_.join();
    }

    sidecar::LineChannel take_client() { return sidecar::LineChannel(std::exchange(client_fd_, -1)); }
    std::vector<std::uint64_t> ids;

private:
    int client_fd_ = -1;
    sidecar::LineChannel server_;
    std::thread thread_;
};

json reply(const json& req, json payload) { return {{"id", req["id"]}, {"payload", std::move(payload)}}; }

json hello_payload(int version = 1) { return {{"protocol_version", version}, {"latent", {{"channels", 3}, {"downscale", 2}}}}; }

/// Reference service: 2x2 average-pool encoder laid out (C, H/2, W/2), noise = latent * (0.05 * prompt length).
json model(const json& req) {
    const std::string kind = req["kind"];
    const json& p = req["payload"];
    if (kind == "hello") return reply(req, hello_payload());
    if (kind == "ping") return reply(req, json::object());
    if (kind == "encode") {
        const Tensor img = sidecar::decode_tensor(p["image"]);
        const std::size_t h = img.shape[0], w = img.shape[1];
        Tensor lat({3, h / 2, w / 2});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h / 2; ++y)
                for (std::size_t x = 0; x < w / 2; ++x) {
                    double s = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) s += img.data[((2 * y + dy) * w + 2 * x + dx) * 3 + c];
                    lat.data[(c * (h / 2) + y) * (w / 2) + x] = s / 4;
                }
        return reply(req, {{"latent", sidecar::encode_tensor(lat)}});
    }
    if (kind == "predict_noise") {
        Tensor z = sidecar::decode_tensor(p["latent"]);
        const double k = 0.05 * p["text"].get<std::string>().size();
        for (double& v : z.data) v *= k;
        return reply(req, {{"noise", sidecar::encode_tensor(z)}});
    }
    if (kind == "latent_grad_to_image") {
        const Tensor g = sidecar::decode_tensor(p["grad"]);
        const Tensor img = sidecar::decode_tensor(p["image"]);
        const std::size_t h = img.shape[0], w = img.shape[1];
        Tensor out(img.shape);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.data[(y * w + x) * 3 + c] = g.data[(c * (h / 2) + y / 2) * (w / 2) + x / 2] / 4;
        return reply(req, {{"image_grad", sidecar::encode_tensor(out)}});
    }
    if (kind == "caption") return reply(req, {{"text", "a shiny ball"}});
    if (kind == "embed_text" || kind == "embed_image") {
        Tensor e({3});
        e.data = {3, 0, 4};
        return reply(req, {{"embedding", sidecar::encode_tensor(e)}});
    }
    return {{"id", req["id"]}, {"error", {{"code", "bad_request"}, {"message", "unknown kind " + kind}}}};
}

}  // namespace

TEST(Tensor, WireRoundTrip) {
    Tensor t({2, 2});
    t.data = {0.5, -1, 2, 4};
    const json j = sidecar::encode_tensor(t);
    EXPECT_EQ(j["shape"], json({2, 2}));
    EXPECT_EQ(sidecar::decode_tensor(j).data, t.data);
    EXPECT_THROW(sidecar::decode_tensor({{"shape", {3}}, {"b64", j["b64"]}}), BackendError);
    EXPECT_THROW(sidecar::decode_tensor({{"b64", j["b64"]}}), BackendError);
}

TEST(Client, HelloReadsLatentGeometry) {
    FakeServer s(model);
    sidecar::Client c(s.take_client(), 2000);
    const auto g = c.hello();
    EXPECT_EQ(g.channels, 3u);
    EXPECT_EQ(g.downscale, 2u);
}

TEST(Client, ProtocolMismatchRejected) {
    FakeServer s([](const json& r) { return reply(r, hello_payload(2)); });
    sidecar::Client c(s.take_client(), 2000);
    EXPECT_THROW(c.hello(), BackendError);
}

TEST(Client, ErrorResponseBecomesBackendError) {
    FakeServer s(model);
    sidecar::Client c(s.take_client(), 2000);
    try {
        c.call("frobnicate", json::object());
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("bad_request"), std::string::npos);
        EXPECT_EQ(e.kind(), ErrorKind::backend);
    }
    EXPECT_NO_THROW(c.ping());
}

TEST(Client, MismatchedIdRejected) {
    FakeServer s([](const json& r) { return json{{"id", r["id"].get<int>() + 1}, {"payload", json::object()}}; });
    sidecar::Client c(s.take_client(), 2000);
    EXPECT_THROW(c.ping(), BackendError);
}

TEST(Client, MalformedJsonRejected) {
    int fds[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
    sidecar::LineChannel server(fds[1]);
    server.write_line("{not json");
    sidecar::Client c(sidecar::LineChannel(fds[0]), 2000);
    EXPECT_THROW(c.ping(), BackendError);
}

TEST(Client, TimeoutWhenServerIsSilent) {
    FakeServer s([](const json&) { return json(); });
    sidecar::Client c(s.take_client(), 100);
    try {
        c.ping();
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos);
    }
}

TEST(Client, IdsIncreaseFromOneAcrossManyRequests) {
    FakeServer s(model);
    sidecar::Client c(s.take_client(), 2000);
    for (int i = 0; i < 1000; ++i) c.ping();
    EXPECT_EQ(c.requests_sent(), 1000u);
    ASSERT_EQ(s.ids.size(), 1000u);
    for (std::size_t i = 0; i < s.ids.size(); ++i) EXPECT_EQ(s.ids[i], i + 1);
}

TEST(Predictor, ShapesFollowServerGeometry) {
    FakeServer s(model);
    auto c = std::make_shared<sidecar::Client>(s.take_client(), 2000);
    c->hello();
    sidecar::Predictor p(c);
    std::mt19937_64 rng(1);
    const Image img = test::random_image(8, 6, rng);
    const Tensor lat = p.encode(img);
    EXPECT_EQ(lat.shape, (std::vector<std::size_t>{3, 3, 4}));
    EXPECT_EQ(p.latent_shape(img), lat.shape);
    const std::string y = "abcd";
    const Tensor e = p.predict_noise({lat, y, 10, 7.5, 0.5, nullptr});
    EXPECT_EQ(e.shape, lat.shape);
    EXPECT_NEAR(e.data[0], static_cast<float>(lat.data[0]) * 0.2, 1e-6);
    EXPECT_TRUE(p.latent_grad_to_image(lat, img).same_shape(img));
}

TEST(Predictor, WrongGradientShapeRejected) {
    FakeServer s([](const json& r) {
        Tensor t({1, 1, 3});
        return reply(r, {{"image_grad", sidecar::encode_tensor(t)}});
    });
    auto c = std::make_shared<sidecar::Client>(s.take_client(), 2000);
    sidecar::Predictor p(c);
    EXPECT_THROW(p.latent_grad_to_image(Tensor({3, 1, 1}), Image(2, 2, 3)), BackendError);
}

TEST(RemoteEmbedder, NormalisesAndChecksDimension) {
    int n = 0;
    FakeServer s([&n](const json& r) {
        Tensor e({static_cast<std::size_t>(++n == 1 ? 3 : 4)}, 2.0);
        return reply(r, {{"embedding", sidecar::encode_tensor(e)}});
    });
    auto c = std::make_shared<sidecar::Client>(s.take_client(), 2000);
    sidecar::RemoteEmbedder e(c);
    const Embedding v = e.embed_text("a chair");
    EXPECT_NEAR(norm(v), 1.0, 1e-12);
    EXPECT_EQ(e.dimension(), 3u);
    EXPECT_THROW(e.embed_text("a table"), BackendError);
}

TEST(RemoteCaptioner, ReturnsText) {
    FakeServer s(model);
    auto c = std::make_shared<sidecar::Client>(s.take_client(), 2000);
    sidecar::RemoteCaptioner cap(c);
    EXPECT_EQ(cap.caption(Image(2, 2, 3)), "a shiny ball");
}

TEST(Endpoint, UnknownSchemeIsConfigError) {
    EXPECT_THROW(sidecar::connect_endpoint("http://x"), ConfigError);
    EXPECT_THROW(sidecar::connect_endpoint("tcp:nohost"), ConfigError);
}

TEST(Endpoint, MissingUnixSocketIsBackendError) {
    EXPECT_THROW(sidecar::connect_endpoint("unix:/nonexistent/texedit.sock"), BackendError);
}

TEST(Endpoint, UnixSocketConnects) {
    const std::string path = (std::filesystem::temp_directory_path() / "texedit_test.sock").string();
    ::unlink(path.c_str());
    const int lfd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    ASSERT_EQ(::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    ASSERT_EQ(::listen(lfd, 1), 0);
    std::thread server([lfd] {
        sidecar::LineChannel ch(::accept(lfd, nullptr, nullptr));
        const json req = json::parse(ch.read_line(2000));
        ch.write_line(model(req).dump());
    });
    sidecar::Client c(sidecar::connect_endpoint("unix:" + path), 2000);
    EXPECT_EQ(c.hello().channels, 3u);
    server.join();
    ::close(lfd);
    ::unlink(path.c_str());
}

TEST(EndToEnd, OptimiseAgainstFakeService) {
    FakeServer s(model);
    auto c = std::make_shared<sidecar::Client>(s.take_client(), 5000);
    c->hello();
    sidecar::Predictor pred(c);
    sidecar::RemoteCaptioner cap(c);
    Scene scene;
    std::mt19937_64 rng(1);
    scene.mesh = make_uv_sphere(12, 6);
    scene.params.materials = test::random_materials(4, rng);
    scene.params.env = EnvironmentMap(test::sky_cube(8));
    OptimizeConfig cfg;
    cfg.iterations = 4;
    cfg.resolution = 16;
    cfg.prefilter.specular_samples = 32;
    GuidanceConfig g;
    g.source_prompt = "a ball";
    g.target_prompt = "a shiny golden ball";
    g.adjust_period = 2;
    const OptimizeResult r = edit(scene, cfg, g, pred, &cap);
    EXPECT_EQ(r.log.records.size(), 4u);
    EXPECT_EQ(r.log.adjustments.size(), 2u);
    EXPECT_EQ(r.source_prompt, "a shiny ball");
    // hello + 4 x (encode, two predictions, adjoint) + 2 captions
    EXPECT_EQ(c->requests_sent(), 1u + 16u + 2u);
    EXPECT_FALSE(test::bit_equal(r.params.materials.kd.data, scene.params.materials.kd.data));
}
