#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "segkit/bench.hpp"

using namespace segkit;

namespace {

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) out.push_back(line);
    return out;
}

BenchOptions quick_options() {
    BenchOptions opt;
    opt.trials = 5;
    opt.warmup = 1;
    return opt;
}

}  // namespace

TEST_CASE("flop models match hand counts") {
    CHECK(flops_full_attention(16, 4, 4) == 4096.0);
    CHECK(flops_full_attention(1, 1, 1) == 4.0);
    CHECK(flops_decomposed_attention(2, 3, 4, 4) == 480.0);
    CHECK(flops_retention_parallel(16, 4, 4) == flops_full_attention(16, 4, 4));
    CHECK(flops_retention_recurrent(8, 4, 4) == 512.0);
    // chunkwise: intra-chunk scores plus the carried state updates
    CHECK(flops_retention_chunkwise(16, 4, 4, 4) == 2.0 * 16 * 4 * 8 + 4.0 * 5 * 16 * 4);
}

TEST_CASE("analytic full vs decomposed ratio is H/2 on square grids") {
    for (int64_t hh : {16, 32, 64}) {
        const double ratio = flops_full_attention(hh * hh, 4, 4) /
                             flops_decomposed_attention(hh, hh, 4, 4);
        CHECK(ratio == Catch::Approx(static_cast<double>(hh) / 2.0));
    }
}

TEST_CASE("attention sweep populates one record pair per size") {
    const auto opt = quick_options();
    const auto recs = run_attention_sweep({{4, 4}, {2, 8}}, opt);
    REQUIRE(recs.size() == 4);
    for (size_t i = 0; i < recs.size(); i += 2) {
        CHECK(recs[i].kernel == "masa_full");
        CHECK(recs[i + 1].kernel == "resa_decomposed");
        CHECK(recs[i].n == recs[i].h * recs[i].w);
        CHECK(recs[i].d_k == opt.d_k);
        CHECK(recs[i].ns_median > 0);
        CHECK(recs[i + 1].ns_median > 0);
        CHECK(recs[i].flops_est ==
              flops_full_attention(recs[i].n, opt.d_k, opt.d_v));
        CHECK(recs[i + 1].flops_est ==
              flops_decomposed_attention(recs[i].h, recs[i].w, opt.d_k, opt.d_v));
    }
    CHECK(recs[0].h == 4);
    CHECK(recs[2].h == 2);
    CHECK(recs[2].w == 8);
}

TEST_CASE("oversized grids are skipped with a note") {
    auto opt = quick_options();
    opt.budget_elems = 40000;  // 4x4 fits (16^2), 16x16 does not (256^2)
    std::vector<std::string> notes;
    const auto recs = run_attention_sweep({{4, 4}, {16, 16}}, opt, &notes);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].n == 16);
    REQUIRE(notes.size() == 1);
    CHECK(notes[0].find("16x16") != std::string::npos);
    CHECK(notes[0].find("budget") != std::string::npos);
}

TEST_CASE("fewer than five trials is rejected") {
    auto opt = quick_options();
    opt.trials = 4;
    CHECK_THROWS_AS(run_paradigm_sweep({8}, opt), ValueError);
    CHECK_THROWS_AS(run_attention_sweep({{2, 2}}, opt), ValueError);
}

TEST_CASE("paradigm sweep records all three kernels per length") {
    const auto opt = quick_options();
    const auto recs = run_paradigm_sweep({32, 64}, opt);
    REQUIRE(recs.size() == 6);
    for (size_t i = 0; i < recs.size(); i += 3) {
        CHECK(recs[i].kernel == "retention_parallel");
        CHECK(recs[i + 1].kernel == "retention_recurrent");
        CHECK(recs[i + 2].kernel == "retention_chunkwise");
        for (size_t j = i; j < i + 3; ++j) {
            CHECK(recs[j].ns_median > 0);
            CHECK(recs[j].flops_est > 0.0);
        }
    }
    CHECK(recs[3].n == 64);
    // recurrent is linear in N, parallel quadratic
    CHECK(recs[4].flops_est < recs[3].flops_est);
}

TEST_CASE("csv writer emits the documented header and one row per record") {
    const auto opt = quick_options();
    const auto recs = run_paradigm_sweep({16}, opt);
    std::ostringstream os;
    write_bench_csv(os, recs);
    const auto lines = split_lines(os.str());
    REQUIRE(lines.size() == recs.size() + 1);
    CHECK(lines[0] == "kernel,H,W,N,d,heads,ns_median,flops_est");
    CHECK(lines[1].rfind("retention_parallel,0,0,16,4,1,", 0) == 0);
}

TEST_CASE("measured attention ratio tracks the analytic model at H=32") {
    auto opt = quick_options();
    opt.trials = 5;
    const auto recs = run_attention_sweep({{32, 32}}, opt);
    REQUIRE(recs.size() == 2);
    const double measured = static_cast<double>(recs[0].ns_median) /
                            static_cast<double>(recs[1].ns_median);
    CHECK(measured > 16.0 * 0.7);
    CHECK(measured < 16.0 * 1.3);
}

TEST_CASE("recurrent retention runtime is roughly linear in sequence length") {
    auto opt = quick_options();
    const auto recs = run_paradigm_sweep({256, 1024}, opt);
    REQUIRE(recs.size() == 6);
    REQUIRE(recs[1].kernel == "retention_recurrent");
    REQUIRE(recs[4].kernel == "retention_recurrent");
    const double ratio = static_cast<double>(recs[4].ns_median) /
                         static_cast<double>(recs[1].ns_median);
    CHECK(ratio > 4.0 * 0.7);
    CHECK(ratio < 4.0 * 1.3);
}
