#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <texedit/config.hpp>
#include <texedit/io.hpp>

#include "support.hpp"

using namespace texedit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("texedit_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Hash, KnownSha256) {
    EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Base64, KnownVectorsAndRoundTrip) {
    EXPECT_EQ(io::base64_encode("f"), "Zg==");
    EXPECT_EQ(io::base64_encode("fo"), "Zm8=");
    EXPECT_EQ(io::base64_encode("foo"), "Zm9v");
    EXPECT_EQ(io::base64_decode("Zm9vYg=="), "foob");
    EXPECT_EQ(io::base64_decode(""), "");
    std::string bin;
    for (int i = 0; i < 256; ++i) bin.push_back(static_cast<char>(i));
    EXPECT_EQ(io::base64_decode(io::base64_encode(bin)), bin);
    EXPECT_THROW(io::base64_decode("abc"), std::invalid_argument);
}

TEST(Base64, FloatPacking) {
    const std::vector<double> v{1.0, -2.5, 0.125, 3e-3};
    const auto back = io::unpack_f32_b64(io::pack_f32_b64(v), 4);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(v[i])));
    EXPECT_EQ(io::pack_f32_b64({1.0}), "AACAPw==");
    EXPECT_THROW(io::unpack_f32_b64(io::pack_f32_b64(v), 3), std::invalid_argument);
}

TEST(Png, LinearRoundTripWithinQuantisation) {
    const fs::path d = scratch("png");
    std::mt19937_64 rng(1);
    const Image img = test::random_image(7, 5, rng);
    io::write_png(d / "a.png", img, io::Encoding::linear);
    const Image back = io::read_png(d / "a.png", io::Encoding::linear);
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-12);
}

TEST(Png, SrgbRoundTripWithinQuantisation) {
    const fs::path d = scratch("srgb");
    std::mt19937_64 rng(2);
    const Image img = test::random_image(4, 4, rng, 0.05, 1.0);
    io::write_png(d / "a.png", img, io::Encoding::srgb);
    const Image back = io::read_png(d / "a.png", io::Encoding::srgb);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        EXPECT_NEAR(io::srgb_encode(back.data[i]), io::srgb_encode(img.data[i]), 0.5 / 255 + 1e-9);
}

TEST(Png, MissingFileIsAssetError) { EXPECT_THROW(io::read_png("/nonexistent.png", io::Encoding::linear), AssetError); }

TEST(Pfm, RoundTripIsExactForFloats) {
    std::mt19937_64 rng(3);
    Image img = test::random_image(6, 3, rng, 0, 50);
    for (double& v : img.data) v = static_cast<float>(v);
    const Image back = io::decode_pfm(io::encode_pfm(img));
    EXPECT_EQ(back.data, img.data);
    EXPECT_THROW(io::decode_pfm("P6\n1 1\n255\n"), AssetError);
}

TEST(Strip, CubeRoundTrip) {
    const CubeImage c = test::sky_cube(4);
    const Image strip = io::cube_to_strip(c);
    EXPECT_EQ(strip.width, 4);
    EXPECT_EQ(strip.height, 24);
    EXPECT_EQ(io::strip_to_cube(strip).data, c.data);
    EXPECT_THROW(io::strip_to_cube(Image(4, 20, 3)), AssetError);
}

TEST(Container, RoundTrip) {
    io::Container c;
    Tensor t({2, 3});
    for (std::size_t i = 0; i < 6; ++i) t.data[i] = i * 0.1 - 0.2;
    c.put("weights", t);
    c.put_string("note", "hello\nworld");
    const io::Container back = io::Container::parse(c.serialize());
    EXPECT_EQ(back.tensor("weights").shape, t.shape);
    EXPECT_EQ(back.tensor("weights").data, t.data);
    EXPECT_EQ(back.string("note"), "hello\nworld");
    EXPECT_THROW(back.tensor("missing"), AssetError);
    EXPECT_EQ(c.serialize(), back.serialize());
}

TEST(Container, RejectsCorruptInput) {
    io::Container c;
    c.put("x", Tensor({4}, 1.0));
    std::string s = c.serialize();
    EXPECT_THROW(io::Container::parse(s.substr(0, s.size() - 3)), AssetError);
    s[0] = 'X';
    EXPECT_THROW(io::Container::parse(s), AssetError);
}

TEST(WriteFile, CreatesParentsAtomically) {
    const fs::path d = scratch("write");
    io::write_file(d / "a" / "b" / "c.txt", "data");
    EXPECT_EQ(io::read_file(d / "a" / "b" / "c.txt"), "data");
    EXPECT_FALSE(fs::exists(d / "a" / "b" / "c.txt.tmp"));
}

TEST(Config, DefaultsAndOverrides) {
    const auto j = nlohmann::json::parse(R"({
        "scene": {"mesh": "m.obj", "env_res": 32},
        "prompts": {"source": "a chair", "target": "a wooden chair"},
        "guidance": {"omega": 7.5, "weight": "one_minus_alpha_bar", "adjust_period": 25},
        "optimize": {"iterations": 10, "seed": 3, "background": [0.1, 0.2, 0.3]},
        "render": {"views": 4},
        "backend": "mock:linear"
    })");
    const ProjectConfig c = parse_config(j, "/base");
    EXPECT_EQ(c.scene.mesh, "/base/m.obj");
    EXPECT_EQ(c.scene.env_res, 32);
    EXPECT_EQ(c.guidance.source_prompt, "a chair");
    EXPECT_EQ(c.guidance.omega, 7.5);
    EXPECT_EQ(c.guidance.weight, WeightMode::one_minus_alpha_bar);
    EXPECT_EQ(c.guidance.adjust_period, 25);
    EXPECT_EQ(c.optimize.iterations, 10);
    EXPECT_EQ(c.optimize.lr_texture, 0.01);
    EXPECT_EQ(c.optimize.background.y, 0.2);
    EXPECT_EQ(c.render.views, 4);
    EXPECT_EQ(c.backend, "mock:linear");
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"sceen": {}})")), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"optimize": {"iters": 3}})")), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"optimize": {"iterations": "many"}})")), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"guidance": {"weight": "sqrt"}})")), ConfigError);
}

TEST(Config, ValidationCatchesBadValues) {
    ProjectConfig c;
    c.scene.env_res = 48;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.optimize.resolution = 8;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.guidance.t_min = 0.9;
    c.guidance.t_max = 0.1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LoadFromFile) {
    const fs::path d = scratch("cfg");
    io::write_file(d / "p.json", R"({"scene": {"mesh": "quad.obj"}})");
    EXPECT_EQ(load_config(d / "p.json").scene.mesh, (d / "quad.obj").string());
    io::write_file(d / "bad.json", "{ not json");
    EXPECT_THROW(load_config(d / "bad.json"), ConfigError);
    EXPECT_THROW(load_config(d / "missing.json"), ConfigError);
}
