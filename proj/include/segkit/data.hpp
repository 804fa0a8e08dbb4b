#pragma once

// Synthetic dataset generation, PNG folder ingestion, and the two
// augmentations used in training: horizontal flip and random crop.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/png_io.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

struct SegmentationSample {
    Tensor<float> image;  // [3,H,W] in [0,1]
    LabelMap mask;
    std::string name;
};

struct SyntheticSpec {
    uint64_t seed = 0;
    int n_images = 8;
    int64_t height = 64;
    int64_t width = 64;
    int64_t n_cls = 5;
    int32_t ignore_index = 255;

    void validate() const {
        if (n_cls < 2) throw ValueError("synthetic spec needs n_cls >= 2");
        if (n_images < 1) throw ValueError("synthetic spec needs at least one image");
        if (height % 32 != 0 || width % 32 != 0 || height < 32 || width < 32)
            throw ValueError("synthetic image size " + std::to_string(height) + "x" +
                             std::to_string(width) + " must be a positive multiple of 32");
        if (n_cls - 1 > n_images * 9)
            throw ValueError("too many classes to guarantee coverage at this image count");
    }
};

namespace detail {

inline void class_color(int32_t cls, int& r, int& g, int& b) {
    static const int palette[12][3] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25},
                                       {0, 130, 200},  {245, 130, 48},  {145, 30, 180},
                                       {70, 240, 240}, {240, 50, 230},  {210, 245, 60},
                                       {0, 128, 128},  {250, 190, 190}, {230, 190, 255}};
    const int* p = palette[(cls - 1) % 12];
    r = p[0];
    g = p[1];
    b = p[2];
}

inline void paint_shape(SegmentationSample& s, int32_t cls, bool ellipse, int64_t cy, int64_t cx,
                        int64_t ry, int64_t rx) {
    int r, g, b;
    class_color(cls, r, g, b);
    const int64_t h = s.mask.h, w = s.mask.w;
    for (int64_t y = std::max<int64_t>(0, cy - ry); y <= std::min(h - 1, cy + ry); ++y)
        for (int64_t x = std::max<int64_t>(0, cx - rx); x <= std::min(w - 1, cx + rx); ++x) {
            if (ellipse) {
                const int64_t dy = y - cy, dx = x - cx;
                if (dy * dy * rx * rx + dx * dx * ry * ry > rx * rx * ry * ry) continue;
            }
            const int dither = static_cast<int>((x + y) & 3) * 4;
            s.image(0, y, x) = static_cast<float>(std::min(255, r + dither)) / 255.0f;
            s.image(1, y, x) = static_cast<float>(std::min(255, g + dither)) / 255.0f;
            s.image(2, y, x) = static_cast<float>(std::min(255, b + dither)) / 255.0f;
            s.mask.at(y, x) = cls;
        }
}

}  // namespace detail

// Colored rectangles and ellipses over a textured background (class 0). All
// geometry comes from integer draws so a seed pins the dataset bit-for-bit.
// Every class is guaranteed to appear somewhere in the set.
inline std::vector<SegmentationSample> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int64_t h = spec.height, w = spec.width;

    std::vector<std::vector<int32_t>> forced(static_cast<size_t>(spec.n_images));
    for (int32_t c = 1; c < spec.n_cls; ++c)
        forced[static_cast<size_t>((c - 1) % spec.n_images)].push_back(c);

    std::vector<SegmentationSample> out;
    for (int i = 0; i < spec.n_images; ++i) {
        SegmentationSample s;
        s.image = Tensor<float>::zeros({3, h, w});
        s.mask = LabelMap(h, w, 0);
        s.name = "synth_" + std::to_string(i);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t v = 96 + (x * 7 + y * 13 + int64_t(i) * 31) % 48;
                s.image(0, y, x) = static_cast<float>(v) / 255.0f;
                s.image(1, y, x) = static_cast<float>(v + 6) / 255.0f;
                s.image(2, y, x) = static_cast<float>(v - 6) / 255.0f;
            }

        auto random_shape = [&](int32_t cls) {
            const bool ellipse = rng.next_bool();
            const int64_t cy = rng.next_range(h / 8, h - 1 - h / 8);
            const int64_t cx = rng.next_range(w / 8, w - 1 - w / 8);
            const int64_t ry = rng.next_range(h / 12 + 2, h / 4);
            const int64_t rx = rng.next_range(w / 12 + 2, w / 4);
            detail::paint_shape(s, cls, ellipse, cy, cx, ry, rx);
        };
        const int extras = 1 + static_cast<int>(rng.next_below(2));
        for (int e = 0; e < extras; ++e)
            random_shape(1 + static_cast<int32_t>(rng.next_below(
                                 static_cast<uint64_t>(spec.n_cls - 1))));
        for (int32_t c : forced[static_cast<size_t>(i)]) random_shape(c);

        // repair pass: overlap may have buried a guaranteed class
        for (size_t k = 0; k < forced[static_cast<size_t>(i)].size(); ++k) {
            const int32_t c = forced[static_cast<size_t>(i)][k];
            bool found = false;
            for (int32_t m : s.mask.v)
                if (m == c) found = true;
            if (!found) {
                const int64_t base = 2 + 6 * static_cast<int64_t>(k);
                detail::paint_shape(s, c, false, base + 2, base + 2, 2, 2);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Folder layout: images_dir/<name>.png, masks_dir/<name>.png. Raw mask value
// 255 maps to ignore_index.
inline std::vector<SegmentationSample> load_folder(const std::string& images_dir,
                                                   const std::string& masks_dir,
                                                   int32_t ignore_index = 255) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(images_dir)) throw Error(images_dir + " is not a directory");
    if (!fs::is_directory(masks_dir)) throw Error(masks_dir + " is not a directory");
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty())
        std::cerr << "warning: no png images found in " << images_dir << "\n";

    std::vector<SegmentationSample> out;
    for (const auto& stem : stems) {
        const std::string ip = (fs::path(images_dir) / (stem + ".png")).string();
        const std::string mp = (fs::path(masks_dir) / (stem + ".png")).string();
        if (!fs::exists(mp)) throw Error("mask missing for image '" + stem + "': " + mp);
        SegmentationSample s;
        s.image = read_png_rgb(ip);
        s.mask = read_png_mask(mp);
        s.name = stem;
        if (s.mask.h != s.image.dim(1) || s.mask.w != s.image.dim(2))
            throw Error("size mismatch for '" + stem + "': image " +
                        std::to_string(s.image.dim(1)) + "x" + std::to_string(s.image.dim(2)) +
                        " vs mask " + std::to_string(s.mask.h) + "x" + std::to_string(s.mask.w));
        if (ignore_index != 255)
            for (auto& v : s.mask.v)
                if (v == 255) v = ignore_index;
        out.push_back(std::move(s));
    }
    return out;
}

inline void save_folder(const std::vector<SegmentationSample>& samples,
                        const std::string& images_dir, const std::string& masks_dir,
                        int64_t n_cls = 0, int32_t ignore_index = 255) {
    namespace fs = std::filesystem;
    fs::create_directories(images_dir);
    fs::create_directories(masks_dir);
    nlohmann::json manifest;
    manifest["ignore_index"] = ignore_index;
    if (n_cls > 0) manifest["n_cls"] = n_cls;
    auto& pairs = manifest["pairs"] = nlohmann::json::array();
    for (const auto& s : samples) {
        write_png_rgb((fs::path(images_dir) / (s.name + ".png")).string(), s.image);
        write_png_mask((fs::path(masks_dir) / (s.name + ".png")).string(), s.mask);
        pairs.push_back(s.name);
    }
    std::ofstream mf(fs::path(images_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline SegmentationSample hflip_sample(const SegmentationSample& s) {
    SegmentationSample out;
    out.image = flip(s.image, 2);
    out.mask = LabelMap(s.mask.h, s.mask.w);
    for (int64_t y = 0; y < s.mask.h; ++y)
        for (int64_t x = 0; x < s.mask.w; ++x) out.mask.at(y, x) = s.mask.at(y, s.mask.w - 1 - x);
    out.name = s.name;
    return out;
}

inline SegmentationSample random_flip(const SegmentationSample& s, Rng& rng) {
    return rng.next_bool() ? hflip_sample(s) : s;
}

// Uniform-window crop; inputs smaller than the window are padded first with
// the image's channel means and ignore_index on the mask.
inline SegmentationSample random_crop(const SegmentationSample& s, int64_t crop_h, int64_t crop_w,
                                      Rng& rng, int32_t ignore_index = 255) {
    if (crop_h < 1 || crop_w < 1)
        throw ValueError("crop size must be positive, got " + std::to_string(crop_h) + "x" +
                         std::to_string(crop_w));
    const int64_t h = s.mask.h, w = s.mask.w;
    const int64_t ph = std::max(h, crop_h), pw = std::max(w, crop_w);

    SegmentationSample src = s;
    if (ph != h || pw != w) {
        SegmentationSample padded;
        padded.name = s.name;
        padded.image = Tensor<float>::zeros({3, ph, pw});
        padded.mask = LabelMap(ph, pw, ignore_index);
        float mean[3] = {0, 0, 0};
        for (int64_t c = 0; c < 3; ++c) {
            double acc = 0;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) acc += s.image(c, y, x);
            mean[c] = static_cast<float>(acc / static_cast<double>(h * w));
        }
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < ph; ++y)
                for (int64_t x = 0; x < pw; ++x)
                    padded.image(c, y, x) = (y < h && x < w) ? s.image(c, y, x) : mean[c];
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) padded.mask.at(y, x) = s.mask.at(y, x);
        src = std::move(padded);
    }

    const int64_t oy = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(ph - crop_h + 1)));
    const int64_t ox = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(pw - crop_w + 1)));
    SegmentationSample out;
    out.name = s.name;
    out.image = slice(slice(src.image, 1, oy, crop_h), 2, ox, crop_w);
    out.mask = LabelMap(crop_h, crop_w);
    for (int64_t y = 0; y < crop_h; ++y)
        for (int64_t x = 0; x < crop_w; ++x) out.mask.at(y, x) = src.mask.at(oy + y, ox + x);
    return out;
}

// Per-channel (x - mean) / std; mean 0 / std 1 leaves the image untouched.
inline Tensor<float> normalize_image(const Tensor<float>& img, const std::array<double, 3>& mean,
                                     const std::array<double, 3>& std_dev) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        throw ShapeError("normalize_image expects a 3xHxW image, got " + shape_str(img.shape()));
    for (double s : std_dev)
        if (s == 0.0) throw ValueError("normalize_image std entries must be nonzero");
    bool identity = true;
    for (int i = 0; i < 3; ++i)
        if (mean[i] != 0.0 || std_dev[i] != 1.0) identity = false;
    if (identity) return img;
    Tensor<float> out = img.clone();
    const int64_t hw = img.shape()[1] * img.shape()[2];
    for (int64_t c = 0; c < 3; ++c) {
        float* p = out.data() + c * hw;
        const float m = static_cast<float>(mean[c]);
        const float inv = static_cast<float>(1.0 / std_dev[c]);
        for (int64_t i = 0; i < hw; ++i) p[i] = (p[i] - m) * inv;
    }
    return out;
}

}  // namespace segkit
