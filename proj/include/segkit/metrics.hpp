#pragma once

// Confusion-matrix scoring (per-class IoU, mIoU, pixel accuracy) and the
// single-scale / multi-scale inference protocols.

#include <cstdint>
#include <vector>

#include "segkit/model.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

class ConfusionMatrix {
public:
    ConfusionMatrix(int64_t n_cls, int32_t ignore_index = 255)
        : k_(n_cls), ignore_(ignore_index), counts_(static_cast<size_t>(n_cls * n_cls), 0) {
        if (n_cls < 1) throw ValueError("confusion matrix needs at least one class");
    }

    int64_t n_cls() const { return k_; }
    int32_t ignore_index() const { return ignore_; }
    int64_t at(int64_t gt, int64_t pred) const {
        return counts_[static_cast<size_t>(gt * k_ + pred)];
    }
    int64_t total() const {
        int64_t t = 0;
        for (int64_t c : counts_) t += c;
        return t;
    }

    void update(const LabelMap& pred, const LabelMap& gt) {
        if (pred.h != gt.h || pred.w != gt.w)
            throw ShapeError("confusion update shape mismatch: pred " + std::to_string(pred.h) +
                             "x" + std::to_string(pred.w) + " vs gt " + std::to_string(gt.h) +
                             "x" + std::to_string(gt.w));
        for (size_t i = 0; i < gt.v.size(); ++i) {
            const int32_t g = gt.v[i];
            if (g == ignore_) continue;
            const int32_t p = pred.v[i];
            if (g < 0 || g >= k_)
                throw ValueError("ground-truth label " + std::to_string(g) + " out of range [0," +
                                 std::to_string(k_) + ")");
            if (p < 0 || p >= k_)
                throw ValueError("predicted label " + std::to_string(p) + " out of range [0," +
                                 std::to_string(k_) + ")");
            ++counts_[static_cast<size_t>(int64_t(g) * k_ + p)];
        }
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_ || other.ignore_ != ignore_)
            throw ValueError("cannot merge confusion matrices with different class counts");
        for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

private:
    int64_t k_;
    int32_t ignore_;
    std::vector<int64_t> counts_;
};

struct ClassIou {
    double iou = 0.0;
    bool present = false;  // false when the class has zero union
};

inline std::vector<ClassIou> per_class_iou(const ConfusionMatrix& cm) {
    const int64_t k = cm.n_cls();
    std::vector<ClassIou> out(static_cast<size_t>(k));
    for (int64_t c = 0; c < k; ++c) {
        int64_t row = 0, col = 0;
        for (int64_t j = 0; j < k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const int64_t diag = cm.at(c, c);
        const int64_t uni = row + col - diag;
        if (uni > 0) {
            out[static_cast<size_t>(c)].present = true;
            out[static_cast<size_t>(c)].iou =
                static_cast<double>(diag) / static_cast<double>(uni);
        }
    }
    return out;
}

struct Scored {
    double value = 0.0;
    bool defined = false;
};

inline Scored mean_iou(const ConfusionMatrix& cm) {
    Scored s;
    double total = 0.0;
    int64_t present = 0;
    for (const auto& c : per_class_iou(cm)) {
        if (!c.present) continue;
        total += c.iou;
        ++present;
    }
    if (present > 0) {
        s.defined = true;
        s.value = total / static_cast<double>(present);
    }
    return s;
}

inline Scored pixel_accuracy(const ConfusionMatrix& cm) {
    Scored s;
    const int64_t tot = cm.total();
    if (tot == 0) return s;
    int64_t diag = 0;
    for (int64_t c = 0; c < cm.n_cls(); ++c) diag += cm.at(c, c);
    s.defined = true;
    s.value = static_cast<double>(diag) / static_cast<double>(tot);
    return s;
}

// Mirror padding (edge-exclusive) on the bottom/right up to multiples of 32.
template <typename T>
Tensor<T> pad_reflect_to_32(const Tensor<T>& image) {
    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int64_t ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
    if (ph == h && pw == w) return image;
    auto src_idx = [](int64_t i, int64_t n) {
        if (i < n) return i;
        if (n == 1) return int64_t(0);
        int64_t j = 2 * n - 2 - i;
        if (j < 0) j = (-j) % (2 * n - 2);  // very short inputs wrap
        return j < n ? j : 2 * n - 2 - j;
    };
    Tensor<T> out = Tensor<T>::zeros({c, ph, pw});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < ph; ++y) {
            const int64_t sy = src_idx(y, h);
            for (int64_t x = 0; x < pw; ++x)
                out(ci, y, x) = image(ci, sy, src_idx(x, w));
        }
    return out;
}

// Class probabilities at the image's own resolution: pad, forward, crop the
// padding away, softmax over classes. Both inference protocols share this.
template <typename T>
Tensor<T> infer_probs(const SegModel<T>& model, const Tensor<T>& image) {
    const int64_t h = image.dim(1), w = image.dim(2);
    Tensor<T> logits = model.forward(pad_reflect_to_32(image));
    if (logits.dim(1) != h || logits.dim(2) != w)
        logits = slice(slice(logits, 1, 0, h), 2, 0, w);
    return softmax(logits, 0);
}

template <typename T>
LabelMap single_scale_infer(const SegModel<T>& model, const Tensor<T>& image) {
    return argmax_channels(infer_probs(model, image));
}

template <typename T>
Tensor<T> flip_w(const Tensor<T>& image) {
    return flip(image, 2);
}

template <typename T>
LabelMap multi_scale_infer(const SegModel<T>& model, const Tensor<T>& image,
                           const std::vector<double>& scales, bool flip) {
    if (scales.empty()) throw ValueError("multi-scale inference needs at least one scale");
    const int64_t h = image.dim(1), w = image.dim(2);
    Tensor<T> acc = Tensor<T>::zeros({model.cfg.decoder.n_cls, h, w});
    T count = 0;
    for (double s : scales) {
        if (s <= 0.0) throw ValueError("scale factors must be positive");
        const int64_t sh = std::max<int64_t>(1, llround(static_cast<double>(h) * s));
        const int64_t sw = std::max<int64_t>(1, llround(static_cast<double>(w) * s));
        Tensor<T> scaled = bilinear_resize(image, sh, sw);
        Tensor<T> probs = bilinear_resize(infer_probs(model, scaled), h, w);
        acc = add(acc, probs);
        count += 1;
        if (flip) {
            Tensor<T> probs_f = bilinear_resize(infer_probs(model, flip_w(scaled)), h, w);
            acc = add(acc, flip_w(probs_f));
            count += 1;
        }
    }
    return argmax_channels(scale(acc, T(1) / count));
}

}  // namespace segkit
