#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <vector>

#include "segkit/data.hpp"

using namespace segkit;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

bool maps_equal(const LabelMap& a, const LabelMap& b) {
    return a.h == b.h && a.w == b.w && a.v == b.v;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("segkit_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("synthetic generation is deterministic in the seed") {
    SyntheticSpec spec;
    spec.seed = 42;
    spec.n_images = 4;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].name == b[i].name);
        REQUIRE(bitwise_equal(a[i].image, b[i].image));
        REQUIRE(maps_equal(a[i].mask, b[i].mask));
    }

    spec.seed = 43;
    auto c = generate_synthetic(spec);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!maps_equal(a[i].mask, c[i].mask)) any_diff = true;
    REQUIRE(any_diff);
}

TEST_CASE("synthetic masks stay in label range and cover every class") {
    SyntheticSpec spec;
    spec.seed = 7;
    spec.n_images = 8;
    spec.n_cls = 5;
    auto data = generate_synthetic(spec);
    std::set<int32_t> seen;
    for (const auto& s : data) {
        REQUIRE(s.image.shape() == std::vector<int64_t>{3, 64, 64});
        REQUIRE(s.mask.h == 64);
        REQUIRE(s.mask.w == 64);
        for (int32_t v : s.mask.v) {
            REQUIRE(v >= 0);
            REQUIRE(v < 5);
            seen.insert(v);
        }
    }
    REQUIRE(seen.size() == 5);  // background plus all four foreground classes

    // more classes than images still covers everything
    SyntheticSpec dense;
    dense.seed = 3;
    dense.n_images = 2;
    dense.n_cls = 9;
    std::set<int32_t> seen_dense;
    for (const auto& s : generate_synthetic(dense))
        for (int32_t v : s.mask.v) seen_dense.insert(v);
    REQUIRE(seen_dense.size() == 9);
}

TEST_CASE("synthetic pixel values are exact 8-bit fractions in unit range") {
    SyntheticSpec spec;
    spec.seed = 1;
    spec.n_images = 2;
    auto data = generate_synthetic(spec);
    for (const auto& s : data)
        for (int64_t i = 0; i < s.image.numel(); ++i) {
            const float v = s.image.data()[i];
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
            const long q = std::lround(static_cast<double>(v) * 255.0);
            REQUIRE(static_cast<float>(q) / 255.0f == v);
        }
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.n_cls = 1;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ValueError);
    spec.n_cls = 3;
    spec.height = 30;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ValueError);
    spec.height = 64;
    spec.n_images = 0;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ValueError);
    spec.n_images = 1;
    spec.n_cls = 11;  // ten foreground classes exceed one image's repair slots
    REQUIRE_THROWS_AS(generate_synthetic(spec), ValueError);
}

TEST_CASE("folder round trip preserves samples exactly") {
    TempDir tmp("roundtrip");
    SyntheticSpec spec;
    spec.seed = 99;
    spec.n_images = 3;
    spec.n_cls = 4;
    auto data = generate_synthetic(spec);

    save_folder(data, tmp.sub("img"), tmp.sub("msk"), spec.n_cls);
    REQUIRE(fs::exists(fs::path(tmp.sub("img")) / "manifest.json"));

    auto loaded = load_folder(tmp.sub("img"), tmp.sub("msk"));
    REQUIRE(loaded.size() == data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        REQUIRE(loaded[i].name == data[i].name);
        REQUIRE(bitwise_equal(loaded[i].image, data[i].image));
        REQUIRE(maps_equal(loaded[i].mask, data[i].mask));
    }
}

TEST_CASE("loading maps raw 255 to the requested ignore index") {
    TempDir tmp("ignore");
    SegmentationSample s;
    s.image = Tensor<float>::zeros({3, 32, 32});
    s.mask = LabelMap(32, 32, 1);
    s.mask.at(0, 0) = 255;
    s.mask.at(5, 9) = 255;
    s.name = "one";
    save_folder({s}, tmp.sub("img"), tmp.sub("msk"));

    auto kept = load_folder(tmp.sub("img"), tmp.sub("msk"));
    REQUIRE(kept[0].mask.at(0, 0) == 255);

    auto mapped = load_folder(tmp.sub("img"), tmp.sub("msk"), 7);
    REQUIRE(mapped[0].mask.at(0, 0) == 7);
    REQUIRE(mapped[0].mask.at(5, 9) == 7);
    REQUIRE(mapped[0].mask.at(1, 1) == 1);
}

TEST_CASE("folder loader reports missing pieces") {
    TempDir tmp("missing");
    SyntheticSpec spec;
    spec.n_images = 2;
    auto data = generate_synthetic(spec);
    save_folder(data, tmp.sub("img"), tmp.sub("msk"));
    fs::remove(fs::path(tmp.sub("msk")) / "synth_1.png");
    try {
        load_folder(tmp.sub("img"), tmp.sub("msk"));
        FAIL("expected missing-mask error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("synth_1") != std::string::npos);
    }

    REQUIRE_THROWS_AS(load_folder(tmp.sub("nowhere"), tmp.sub("msk")), Error);

    fs::create_directories(tmp.sub("empty_img"));
    fs::create_directories(tmp.sub("empty_msk"));
    auto empty = load_folder(tmp.sub("empty_img"), tmp.sub("empty_msk"));
    REQUIRE(empty.empty());
}

TEST_CASE("mask writer validates the 8-bit range") {
    TempDir tmp("maskrange");
    LabelMap bad(2, 2, 0);
    bad.at(1, 1) = 256;
    REQUIRE_THROWS_AS(write_png_mask(tmp.sub("bad.png"), bad), Error);
    bad.at(1, 1) = -1;
    REQUIRE_THROWS_AS(write_png_mask(tmp.sub("bad.png"), bad), Error);
}

TEST_CASE("horizontal flip is an exact involution") {
    SyntheticSpec spec;
    spec.seed = 17;
    spec.n_images = 1;
    auto s = generate_synthetic(spec)[0];
    auto f = hflip_sample(s);
    REQUIRE(f.name == s.name);
    for (int64_t y = 0; y < s.mask.h; ++y)
        for (int64_t x = 0; x < s.mask.w; ++x) {
            REQUIRE(f.mask.at(y, x) == s.mask.at(y, s.mask.w - 1 - x));
            REQUIRE(f.image(0, y, x) == s.image(0, y, s.mask.w - 1 - x));
        }
    auto ff = hflip_sample(f);
    REQUIRE(bitwise_equal(ff.image, s.image));
    REQUIRE(maps_equal(ff.mask, s.mask));
}

TEST_CASE("random flip draws both outcomes deterministically") {
    SyntheticSpec spec;
    spec.seed = 23;
    spec.n_images = 1;
    auto s = generate_synthetic(spec)[0];

    Rng a(5), b(5);
    int flipped = 0;
    for (int i = 0; i < 64; ++i) {
        auto ra = random_flip(s, a);
        auto rb = random_flip(s, b);
        REQUIRE(maps_equal(ra.mask, rb.mask));  // same stream, same choice
        if (!maps_equal(ra.mask, s.mask)) ++flipped;
    }
    REQUIRE(flipped > 10);
    REQUIRE(flipped < 54);
}

TEST_CASE("full-size crop is the identity") {
    SyntheticSpec spec;
    spec.seed = 29;
    spec.n_images = 1;
    auto s = generate_synthetic(spec)[0];
    Rng rng(1);
    auto c = random_crop(s, 64, 64, rng);
    REQUIRE(bitwise_equal(c.image, s.image));
    REQUIRE(maps_equal(c.mask, s.mask));
}

TEST_CASE("crop windows come from the source, aligned across image and mask") {
    const int64_t h = 64, w = 64;
    SegmentationSample s;
    s.name = "coded";
    s.image = Tensor<float>::zeros({3, h, w});
    s.mask = LabelMap(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            s.image(0, y, x) = static_cast<float>(y * w + x);
            s.image(1, y, x) = static_cast<float>(y);
            s.image(2, y, x) = static_cast<float>(x);
            s.mask.at(y, x) = static_cast<int32_t>((y * w + x) % 200);
        }
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto c = random_crop(s, 16, 24, rng);
        REQUIRE(c.image.shape() == std::vector<int64_t>{3, 16, 24});
        const auto oy = static_cast<int64_t>(c.image(1, 0, 0));
        const auto ox = static_cast<int64_t>(c.image(2, 0, 0));
        REQUIRE(oy >= 0);
        REQUIRE(oy <= h - 16);
        REQUIRE(ox >= 0);
        REQUIRE(ox <= w - 24);
        for (int64_t y = 0; y < 16; ++y)
            for (int64_t x = 0; x < 24; ++x) {
                REQUIRE(c.image(0, y, x) == s.image(0, oy + y, ox + x));
                REQUIRE(c.mask.at(y, x) == s.mask.at(oy + y, ox + x));
            }
    }
}

TEST_CASE("short inputs are padded with channel means and ignore labels") {
    SegmentationSample s;
    s.name = "small";
    s.image = Tensor<float>::zeros({3, 8, 8});
    s.mask = LabelMap(8, 8, 2);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x)
                s.image(c, y, x) = static_cast<float>(c + 1) * 0.1f * static_cast<float>(y % 2);

    Rng rng(37);
    auto c = random_crop(s, 16, 16, rng, 255);
    REQUIRE(c.image.shape() == std::vector<int64_t>{3, 16, 16});
    // padded size equals crop size, so the window offset is forced to zero
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x) {
            REQUIRE(c.mask.at(y, x) == 2);
            REQUIRE(c.image(1, y, x) == s.image(1, y, x));
        }
    float mean[3];
    for (int64_t ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x) acc += s.image(ch, y, x);
        mean[ch] = static_cast<float>(acc / 64.0);
    }
    for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 16; ++x) {
            if (y < 8 && x < 8) continue;
            REQUIRE(c.mask.at(y, x) == 255);
            for (int64_t ch = 0; ch < 3; ++ch) REQUIRE(c.image(ch, y, x) == mean[ch]);
        }

    // custom ignore index flows through
    Rng rng2(38);
    auto c9 = random_crop(s, 10, 10, rng2, 9);
    REQUIRE(c9.mask.at(9, 9) == 9);

    Rng rng3(39);
    REQUIRE_THROWS_AS(random_crop(s, 0, 4, rng3), ValueError);
}
