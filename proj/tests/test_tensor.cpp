#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "segkit/gradcheck.hpp"
#include "segkit/serialize.hpp"
#include "segkit/tensor.hpp"

using namespace segkit;
using Catch::Approx;

namespace {

TensorD randn_d(std::vector<int64_t> shape, uint64_t seed, double sd = 0.5) {
    Rng rng(seed);
    return TensorD::randn(std::move(shape), rng, sd);
}

// Scalar probe: sum(out * W) with a fixed weight tensor so every output
// element contributes a distinct gradient.
TensorD probe(const TensorD& out, uint64_t seed) {
    Rng rng(seed);
    TensorD w = TensorD::randn(out.shape(), rng);
    return sum(mul(out, w));
}

}  // namespace

TEST_CASE("construction and validation") {
    auto t = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.numel() == 6);
    REQUIRE(t(1, 2) == 6.0);
    REQUIRE_THROWS_AS(TensorD::from_data({2, 2}, {1, 2, 3}), ShapeError);
    REQUIRE_THROWS_AS(TensorD::from_data({1}, {std::nan("")}), ValueError);
    REQUIRE_THROWS_AS(TensorD::from_data({1}, {INFINITY}), ValueError);
    auto s = TensorD::scalar(3.5);
    REQUIRE(s.item() == 3.5);
    REQUIRE_THROWS_AS(t.item(), ShapeError);

    auto bad = TensorD::zeros({2});
    bad.data()[1] = INFINITY;
    REQUIRE_THROWS_AS(validate_finite(bad), ValueError);
}

TEST_CASE("matmul matches hand result") {
    auto a = TensorD::from_data({2, 2}, {1, 2, 3, 4});
    auto b = TensorD::from_data({2, 1}, {1, 1});
    auto c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int64_t>{2, 1});
    REQUIRE(c(0, 0) == 3.0);
    REQUIRE(c(1, 0) == 7.0);
    REQUIRE_THROWS_AS(matmul(a, TensorD::zeros({3, 2})), ShapeError);
}

TEST_CASE("matmul broadcasts batch dims") {
    auto a = randn_d({2, 3, 4}, 11);
    auto b = randn_d({4, 5}, 12);
    auto c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int64_t>{2, 3, 5});
    for (int64_t i = 0; i < 2; ++i) {
        auto ai = slice(a, 0, i, 1);
        auto ci = matmul(reshape(ai, {3, 4}), b);
        for (int64_t j = 0; j < 15; ++j)
            REQUIRE(c.data()[i * 15 + j] == ci.data()[j]);
    }
}

TEST_CASE("matmul associativity within fp tolerance") {
    auto a = randn_d({4, 6}, 21);
    auto b = randn_d({6, 5}, 22);
    auto c = randn_d({5, 3}, 23);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    REQUIRE(max_abs_diff(left, right) < 1e-12);
}

TEST_CASE("broadcast add and incompatibility error") {
    auto a = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = TensorD::from_data({3}, {10, 20, 30});
    auto c = add(a, b);
    REQUIRE(c(1, 0) == 14.0);
    REQUIRE(c(0, 2) == 33.0);
    auto s = TensorD::scalar(1.0);
    REQUIRE(add(a, s)(1, 2) == 7.0);
    REQUIRE_THROWS_AS(add(a, TensorD::zeros({2, 2})), ShapeError);
}

TEST_CASE("softmax frozen values and row sums") {
    auto x = TensorD::from_data({1, 2}, {0.0, std::log(3.0)});
    auto y = softmax(x, 1);
    REQUIRE(y(0, 0) == Approx(0.25).epsilon(1e-12));
    REQUIRE(y(0, 1) == Approx(0.75).epsilon(1e-12));

    auto r = randn_d({3, 7}, 31, 2.0);
    auto sm = softmax(r, 1);
    for (int64_t i = 0; i < 3; ++i) {
        double s = 0;
        for (int64_t j = 0; j < 7; ++j) s += sm(i, j);
        REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
    // large logits stay finite thanks to the max shift
    auto big = TensorD::from_data({1, 2}, {1000.0, 1000.0});
    auto bs = softmax(big, 1);
    REQUIRE(bs(0, 0) == Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cross entropy frozen values") {
    auto logits = TensorD::from_data({2, 1, 1}, {0.0, 0.0});
    LabelMap t(1, 1, 0);
    int64_t n_valid = -1;
    auto loss = cross_entropy(logits, t, 255, &n_valid);
    REQUIRE(n_valid == 1);
    REQUIRE(loss.item() == Approx(std::log(2.0)).epsilon(1e-12));

    // uniform logits over K classes -> ln K
    auto lk = TensorD::zeros({5, 2, 2});
    LabelMap t2(2, 2, 3);
    auto l2 = cross_entropy(lk, t2, 255, &n_valid);
    REQUIRE(n_valid == 4);
    REQUIRE(l2.item() == Approx(std::log(5.0)).epsilon(1e-12));

    // all ignored -> zero loss, zero valid
    LabelMap t3(2, 2, 255);
    auto l3 = cross_entropy(lk, t3, 255, &n_valid);
    REQUIRE(n_valid == 0);
    REQUIRE(l3.item() == 0.0);

    // out-of-range labels name the offending pixel
    LabelMap t4(2, 2, 0);
    t4.at(1, 0) = 9;
    try {
        cross_entropy(lk, t4, 255);
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        REQUIRE(std::string(e.what()).find("y=1") != std::string::npos);
        REQUIRE(std::string(e.what()).find("x=0") != std::string::npos);
    }
}

TEST_CASE("argmax ties take the lowest class") {
    auto logits = TensorD::from_data({3, 1, 2}, {1.0, 0.0, 1.0, 2.0, 0.5, 2.0});
    auto lm = argmax_channels(logits);
    REQUIRE(lm.at(0, 0) == 0);  // classes 0 and 1 tie at 1.0
    REQUIRE(lm.at(0, 1) == 1);  // classes 1 and 2 tie at 2.0
}

TEST_CASE("pointwise conv hand example") {
    auto x = TensorD::from_data({2, 1, 1}, {2, 3});
    auto w = TensorD::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
    auto b = TensorD::zeros({3});
    auto y = pointwise_conv(x, w, b);
    REQUIRE(y.shape() == std::vector<int64_t>{3, 1, 1});
    REQUIRE(y(0, 0, 0) == 2.0);
    REQUIRE(y(1, 0, 0) == 3.0);
    REQUIRE(y(2, 0, 0) == 5.0);
}

TEST_CASE("space_to_depth layout") {
    auto x = TensorD::from_data({1, 2, 2}, {1, 2, 3, 4});
    auto y = space_to_depth(x, 2);
    REQUIRE(y.shape() == std::vector<int64_t>{4, 1, 1});
    REQUIRE(y(0, 0, 0) == 1.0);
    REQUIRE(y(1, 0, 0) == 2.0);
    REQUIRE(y(2, 0, 0) == 3.0);
    REQUIRE(y(3, 0, 0) == 4.0);
    REQUIRE_THROWS_AS(space_to_depth(TensorD::zeros({1, 3, 4}), 2), ShapeError);
}

TEST_CASE("bilinear resize identity and constants") {
    auto x = randn_d({2, 5, 7}, 41);
    auto same = bilinear_resize(x, 5, 7);
    REQUIRE(std::memcmp(same.data(), x.data(), sizeof(double) * x.numel()) == 0);

    auto c = TensorD::full({1, 4, 4}, 3.25);
    auto up = bilinear_resize(c, 9, 13);
    for (int64_t i = 0; i < up.numel(); ++i) REQUIRE(up.data()[i] == 3.25);
    auto down = bilinear_resize(c, 2, 3);
    for (int64_t i = 0; i < down.numel(); ++i) REQUIRE(down.data()[i] == 3.25);
}

TEST_CASE("rotation composed with its inverse is the identity") {
    auto x = randn_d({6, 8}, 51);
    std::vector<double> theta{0.3, 0.07, 1.1, 0.002};
    auto y = apply_rotation(x, theta, +1);
    auto back = apply_rotation(y, theta, -1);
    REQUIRE(max_abs_diff(back, x) < 1e-12);
}

TEST_CASE("structural ops round trip") {
    auto x = randn_d({2, 3, 4}, 61);
    auto p = permute(x, {2, 0, 1});
    REQUIRE(p.shape() == std::vector<int64_t>{4, 2, 3});
    auto p2 = permute(p, {1, 2, 0});
    REQUIRE(max_abs_diff(p2, x) == 0.0);

    auto tr = transpose(x);
    REQUIRE(tr.shape() == std::vector<int64_t>{2, 4, 3});
    REQUIRE(tr(1, 3, 2) == x(1, 2, 3));

    auto f = flip(flip(x, 1), 1);
    REQUIRE(max_abs_diff(f, x) == 0.0);

    auto sl = slice(x, 1, 1, 2);
    REQUIRE(sl.shape() == std::vector<int64_t>{2, 2, 4});
    REQUIRE(sl(0, 0, 0) == x(0, 1, 0));
    auto cc = concat({slice(x, 1, 0, 1), slice(x, 1, 1, 2)}, 1);
    REQUIRE(max_abs_diff(cc, x) == 0.0);

    REQUIRE_THROWS_AS(reshape(x, {5, 5}), ShapeError);
    REQUIRE_THROWS_AS(slice(x, 1, 2, 2), ShapeError);
}

TEST_CASE("tape misuse is rejected") {
    auto x = TensorD::from_data({2}, {1, 2}, true);
    REQUIRE_THROWS_AS(backward(sum(x)), Error);  // no active tape
    {
        Tape<double> tape;
        auto y = add(x, x);
        REQUIRE_THROWS_AS(backward(y), ShapeError);  // non-scalar
        auto loss = sum(y);
        backward(loss);
        REQUIRE(x.grad_vec()[0] == 2.0);
        REQUIRE(x.grad_vec()[1] == 2.0);
        REQUIRE_THROWS_AS(backward(loss), Error);  // tape already replayed
    }
    {
        Tape<double> tape;
        auto z = TensorD::from_data({2}, {1, 2});  // not a parameter
        auto loss = sum(z);
        REQUIRE_THROWS_AS(backward(loss), Error);  // loss not on tape
    }
}

TEST_CASE("gradients accumulate across shared uses") {
    auto x = TensorD::from_data({2, 2}, {1, -1, 2, 0.5}, true);
    Tape<double> tape;
    auto y = mul(x, x);
    auto loss = sum(add(y, x));
    backward(loss);
    for (int64_t i = 0; i < 4; ++i)
        REQUIRE(x.grad_vec()[i] == Approx(2 * x.data()[i] + 1).epsilon(1e-12));
}

TEST_CASE("finite differences validate every op backward") {
    auto ck = [](const GradCheckReport<double>& r) {
        INFO(describe(r));
        CHECK(r.passed);
    };

    ck(check_gradients<double>("add_bcast", {randn_d({2, 3}, 101), randn_d({3}, 102)},
                               [](std::vector<TensorD>& in) {
                                   return probe(add(in[0], in[1]), 7);
                               }));
    ck(check_gradients<double>("sub", {randn_d({2, 3}, 103), randn_d({2, 3}, 104)},
                               [](std::vector<TensorD>& in) {
                                   return probe(sub(in[0], in[1]), 7);
                               }));
    ck(check_gradients<double>("mul_bcast", {randn_d({2, 1, 3}, 105), randn_d({2, 1}, 106)},
                               [](std::vector<TensorD>& in) {
                                   return probe(mul(in[0], in[1]), 8);
                               }));
    ck(check_gradients<double>("scale", {randn_d({5}, 107)}, [](std::vector<TensorD>& in) {
        return probe(scale(in[0], -1.7), 9);
    }));
    ck(check_gradients<double>("mean", {randn_d({3, 4}, 108)}, [](std::vector<TensorD>& in) {
        return mean(mul(in[0], in[0]));
    }));
    ck(check_gradients<double>("matmul", {randn_d({2, 3, 4}, 109), randn_d({4, 2}, 110)},
                               [](std::vector<TensorD>& in) {
                                   return probe(matmul(in[0], in[1]), 10);
                               }));
    ck(check_gradients<double>("reshape_permute",
                               {randn_d({2, 3, 4}, 111)}, [](std::vector<TensorD>& in) {
                                   auto r = reshape(permute(in[0], {1, 0, 2}), {6, 4});
                                   return probe(r, 11);
                               }));
    ck(check_gradients<double>("transpose", {randn_d({3, 5}, 112)},
                               [](std::vector<TensorD>& in) {
                                   return probe(transpose(in[0]), 12);
                               }));
    ck(check_gradients<double>("slice_concat", {randn_d({2, 4}, 113)},
                               [](std::vector<TensorD>& in) {
                                   auto a = slice(in[0], 1, 0, 1);
                                   auto b = slice(in[0], 1, 1, 3);
                                   return probe(concat({b, a}, 1), 13);
                               }));
    ck(check_gradients<double>("flip", {randn_d({2, 3}, 114)}, [](std::vector<TensorD>& in) {
        return probe(flip(in[0], 1), 14);
    }));
    ck(check_gradients<double>("softmax", {randn_d({3, 5}, 115, 1.5)},
                               [](std::vector<TensorD>& in) {
                                   return probe(softmax(in[0], 1), 15);
                               }));
    ck(check_gradients<double>("gelu", {randn_d({7}, 116, 1.5)}, [](std::vector<TensorD>& in) {
        return probe(gelu(in[0]), 16);
    }));
    ck(check_gradients<double>("layer_norm",
                               {randn_d({3, 4}, 117), randn_d({4}, 118), randn_d({4}, 119)},
                               [](std::vector<TensorD>& in) {
                                   return probe(layer_norm(in[0], in[1], in[2]), 17);
                               }));
    ck(check_gradients<double>("rotate_pairs", {randn_d({3, 4}, 120)},
                               [](std::vector<TensorD>& in) {
                                   std::vector<double> theta{0.4, 0.09};
                                   return probe(apply_rotation(in[0], theta, +1), 18);
                               }));
    ck(check_gradients<double>("space_to_depth", {randn_d({2, 4, 4}, 121)},
                               [](std::vector<TensorD>& in) {
                                   return probe(space_to_depth(in[0], 2), 19);
                               }));
    ck(check_gradients<double>("pointwise_conv",
                               {randn_d({3, 2, 2}, 122), randn_d({4, 3}, 123), randn_d({4}, 124)},
                               [](std::vector<TensorD>& in) {
                                   return probe(pointwise_conv(in[0], in[1], in[2]), 20);
                               }));
    ck(check_gradients<double>("bilinear_up", {randn_d({2, 3, 3}, 125)},
                               [](std::vector<TensorD>& in) {
                                   return probe(bilinear_resize(in[0], 5, 7), 21);
                               }));
    ck(check_gradients<double>("bilinear_down", {randn_d({2, 6, 5}, 126)},
                               [](std::vector<TensorD>& in) {
                                   return probe(bilinear_resize(in[0], 3, 2), 22);
                               }));
    LabelMap t(2, 3, 0);
    t.at(0, 1) = 2;
    t.at(1, 0) = 255;
    t.at(1, 2) = 1;
    ck(check_gradients<double>("cross_entropy", {randn_d({3, 2, 3}, 127)},
                               [t](std::vector<TensorD>& in) {
                                   return cross_entropy(in[0], t, 255);
                               }));
}

TEST_CASE("tensor serialization round trips bitwise") {
    Rng rng(777);
    auto t = TensorF::randn({3, 4, 5}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    auto back = read_tensor<float>(ss);
    REQUIRE(back.shape() == t.shape());
    REQUIRE(std::memcmp(back.data(), t.data(), sizeof(float) * t.numel()) == 0);

    auto td = TensorD::randn({7}, rng);
    std::stringstream sd;
    write_tensor(sd, td);
    auto backd = read_tensor<double>(sd);
    REQUIRE(std::memcmp(backd.data(), td.data(), sizeof(double) * td.numel()) == 0);

    std::stringstream sm;
    write_tensor(sm, t);
    try {
        read_tensor<double>(sm);
        FAIL("expected dtype mismatch");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("mismatch") != std::string::npos);
    }
}

TEST_CASE("rng is deterministic and its state round trips") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    // odd number of normal draws leaves a Box-Muller spare in flight
    for (int i = 0; i < 7; ++i) a.next_normal();
    const std::string s = a.state_string();
    Rng c(0);
    c.restore_state(s);
    for (int i = 0; i < 20; ++i) {
        REQUIRE(a.next_normal() == c.next_normal());
        REQUIRE(a.next_below(1000) == c.next_below(1000));
    }
    // loose distribution sanity
    Rng d(9);
    double m = 0, m2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = d.next_normal();
        m += v;
        m2 += v * v;
    }
    m /= n;
    m2 /= n;
    REQUIRE(std::abs(m) < 0.05);
    REQUIRE(std::abs(std::sqrt(m2 - m * m) - 1.0) < 0.05);
}

TEST_CASE("parallel_for covers every index once") {
    set_thread_cap(4);
    std::vector<int> hits(2000, 0);
    parallel_for(2000, [&](int64_t i) { hits[static_cast<size_t>(i)] += 1; });
    set_thread_cap(1);
    for (int h : hits) REQUIRE(h == 1);
}

TEST_CASE("debug validation flags non-finite op output") {
    set_debug_validate(true);
    auto a = TensorD::from_data({1}, {1e308});
    auto b = TensorD::from_data({1}, {1e308});
    REQUIRE_THROWS_AS(add(a, b), ValueError);
    set_debug_validate(false);
    REQUIRE_NOTHROW(add(a, b));
}
