#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>

#include "longtrack/proposer.hpp"
#include "oracles.hpp"

using namespace longtrack;

namespace {

AccumulatorImage acc_from(int w, int h, const std::vector<std::uint32_t>& v) {
    AccumulatorImage a(w, h);
    a.counts = v;
    return a;
}

// Integer image whose histogram is two Gaussians at 20 and 200, sigma 10.
AccumulatorImage two_gaussians() {
    std::vector<std::uint32_t> values;
    for (int v = 0; v <= 255; ++v) {
        const double g = 1000.0 * (std::exp(-0.5 * std::pow((v - 20) / 10.0, 2)) +
                                   std::exp(-0.5 * std::pow((v - 200) / 10.0, 2)));
        for (long n = 0; n < std::lround(g); ++n) values.push_back(static_cast<std::uint32_t>(v));
    }
    AccumulatorImage a(static_cast<int>(values.size()), 1);
    a.counts = values;
    return a;
}

}  // namespace

TEST_CASE("accumulate examples") {
    CHECK(accumulate({}, 20, 10).max() == 0);

    std::vector<BBox> same(12, BBox{5, 5, 10, 10});
    const auto a = accumulate(same, 30, 30);
    for (int r = 0; r < 30; ++r)
        for (int c = 0; c < 30; ++c) {
            const bool inside = r >= 5 && r < 15 && c >= 5 && c < 15;
            CHECK(a.at(r, c) == (inside ? 12u : 0u));
        }

    const auto b = accumulate({{0, 0, 10, 10}, {5, 0, 10, 10}}, 20, 20);
    CHECK(b.at(0, 7) == 2);
    CHECK(b.at(0, 2) == 1);
    CHECK(b.at(0, 12) == 1);
    CHECK(b.at(0, 16) == 0);
}

TEST_CASE("accumulate is additive over disjoint detection sets") {
    Rng rng(5);
    for (int round = 0; round < 20; ++round) {
        std::vector<BBox> first, second;
        for (int i = 0; i < 10; ++i) {
            BBox box{rng.uniform(-10, 60), rng.uniform(-10, 40), rng.uniform(1, 30), rng.uniform(1, 30)};
            (i % 2 ? first : second).push_back(box);
        }
        std::vector<BBox> both = first;
        both.insert(both.end(), second.begin(), second.end());
        const auto sum = accumulate(both, 64, 48);
        const auto a = accumulate(first, 64, 48);
        const auto b = accumulate(second, 64, 48);
        for (std::size_t i = 0; i < sum.counts.size(); ++i) CHECK(sum.counts[i] == a.counts[i] + b.counts[i]);
    }
}

TEST_CASE("histogram bins agree with their upper edges") {
    Rng rng(8);
    for (double mx : {1.0, 12.0, 200.0, 255.0, 4321.0}) {
        Histogram h;
        h.max_value = mx;
        for (int i = 0; i < 2000; ++i) {
            const double v = (i % 3 == 0) ? std::floor(rng.uniform(0, mx + 1)) : rng.uniform(0, mx);
            if (v > mx) continue;
            const int k = h.bin_of(v);
            if (k > 0) CHECK(v > h.upper_edge(k - 1));
            if (k < Histogram::kBins - 1) CHECK_FALSE(v > h.upper_edge(k));
        }
    }
}

TEST_CASE("isodata on the two-delta histogram {0, 200} is 100") {
    std::vector<std::uint32_t> v(200, 0);
    std::fill(v.begin() + 100, v.end(), 200);
    const auto r = threshold(acc_from(200, 1, v), ThresholdMethod::isodata, true);
    CHECK(r.value == 100.0);
    CHECK(r.mask.popcount() == 100);
    // Zeros dropped leaves a single value, so they come back in.
    const auto fallback = threshold(acc_from(200, 1, v), ThresholdMethod::isodata);
    CHECK(fallback.zeros_included);
    CHECK(fallback.value == 100.0);
}

TEST_CASE("constant input: mean returns the constant, other methods are degenerate") {
    const FrameGray f(8, 8, 7);
    const auto r = threshold(f, ThresholdMethod::mean);
    CHECK(r.value == 7.0);
    CHECK(r.mask.popcount() == 0);
    for (auto m : all_threshold_methods()) {
        if (m == ThresholdMethod::mean) continue;
        CAPTURE(std::string(to_string(m)));
        CHECK_THROWS_AS(threshold(f, m), DegenerateInput);
    }
}

TEST_CASE("two Gaussians at 20 and 200: thresholds match scikit-image within one bin") {
    // scikit-image threshold_* on the same values as a float image.
    const std::pair<ThresholdMethod, double> reference[] = {
        {ThresholdMethod::isodata, 110.16796875}, {ThresholdMethod::li, 78.79417356560481},
        {ThresholdMethod::mean, 111.15711090062675}, {ThresholdMethod::minimum, 70.19140625},
        {ThresholdMethod::otsu, 58.10546875}, {ThresholdMethod::triangle, 26.49609375},
        {ThresholdMethod::yen, 176.17578125}};
    const auto a = two_gaussians();
    const double bin = a.max() / 256.0;
    for (const auto& [m, expected] : reference) {
        CAPTURE(std::string(to_string(m)));
        const double t = threshold(a, m, true).value;
        CHECK(std::abs(t - expected) <= bin);
        // Triangle and yen land on the shoulders of the modes rather than in the valley.
        if (m == ThresholdMethod::triangle) {
            CHECK(t < 50.0);
        } else if (m == ThresholdMethod::yen) {
            CHECK(t > 170.0);
        } else {
            CHECK(t > 50.0);
            CHECK(t < 170.0);
        }
    }
}

TEST_CASE("otsu and yen equal the exhaustive oracle") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto c = oracle::random_counts(seed);
        const Histogram h = oracle::histogram_from_counts(c, 255.0);
        CHECK(threshold_bin(h, ThresholdMethod::otsu) == oracle::otsu_split(c));
        CHECK(threshold_bin(h, ThresholdMethod::yen) == oracle::yen_split(c));
    }
}

TEST_CASE("isodata satisfies its fixed point within one bin") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const Histogram h = oracle::histogram_from_counts(oracle::random_counts(seed), 255.0);
        const int k = threshold_bin(h, ThresholdMethod::isodata);
        const double t = h.upper_edge(k);
        const auto [m0, m1] = oracle::class_center_means(h, k);
        CHECK(std::abs(t - 0.5 * (m0 + m1)) <= h.bin_width());
    }
}

TEST_CASE("thresholds stay in range and masks are monotone") {
    Rng rng(12);
    for (int round = 0; round < 30; ++round) {
        std::vector<BBox> boxes;
        for (int i = 0; i < 15; ++i) boxes.push_back({rng.uniform(0, 50), rng.uniform(0, 30), rng.uniform(3, 20), rng.uniform(3, 20)});
        const auto acc = accumulate(boxes, 64, 48);
        std::vector<std::pair<double, std::size_t>> results;
        for (auto m : all_threshold_methods()) {
            CAPTURE(std::string(to_string(m)));
            ThresholdResult r;
            try {
                r = threshold(acc, m);
            } catch (const DegenerateInput&) {
                CHECK(m == ThresholdMethod::minimum);
                continue;
            }
            CHECK(r.value >= 0.0);
            CHECK(r.value <= static_cast<double>(acc.max()));
            results.emplace_back(r.value, r.mask.popcount());
        }
        for (const auto& [ta, na] : results)
            for (const auto& [tb, nb] : results)
                if (ta < tb) CHECK(na >= nb);
    }
}

TEST_CASE("method names round-trip") {
    for (auto m : all_threshold_methods()) CHECK(threshold_method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(threshold_method_from_string("kmeans"), InvalidInput);
}

TEST_CASE("components examples") {
    CHECK(components(BinaryMask(10, 10)).empty());

    BinaryMask diag(4, 4);
    diag.bits[1 * 4 + 1] = 1;
    diag.bits[2 * 4 + 2] = 1;
    CHECK(components(diag).size() == 1);

    BinaryMask sq(30, 30);
    for (int r = 10; r < 15; ++r)
        for (int c = 10; c < 15; ++c) sq.bits[r * 30 + c] = 1;
    const auto comps = components(sq);
    REQUIRE(comps.size() == 1);
    CHECK(comps[0].area == 25);
    CHECK(comps[0].centroid_row == 12.0);
    CHECK(comps[0].centroid_col == 12.0);
}

TEST_CASE("components partition the mask in raster order") {
    Rng rng(31);
    for (int round = 0; round < 20; ++round) {
        BinaryMask m(40, 30);
        for (auto& b : m.bits) b = rng.bernoulli(0.3);
        const auto comps = components(m);
        std::vector<int> owner(m.bits.size(), -1);
        std::size_t total = 0;
        Pixel prev_first{-1, -1};
        for (std::size_t i = 0; i < comps.size(); ++i) {
            total += comps[i].area;
            Pixel first = comps[i].pixels[0];
            for (const auto& p : comps[i].pixels) {
                first = std::min(first, p);
                auto& o = owner[static_cast<std::size_t>(p.row) * 40 + p.col];
                CHECK(o == -1);
                o = static_cast<int>(i);
            }
            CHECK(prev_first < first);
            prev_first = first;
        }
        CHECK(total == m.popcount());
        // No 8-neighbours in different components.
        for (int r = 0; r < 30; ++r)
            for (int c = 0; c < 40; ++c)
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = r + dr, nc = c + dc;
                        if (nr < 0 || nc < 0 || nr >= 30 || nc >= 40) continue;
                        const int a = owner[r * 40 + c], b = owner[nr * 40 + nc];
                        if (a >= 0 && b >= 0) CHECK(a == b);
                    }
    }
}

TEST_CASE("propose on an all-zero accumulator is empty and degenerate") {
    const auto p = propose(AccumulatorImage(50, 40), {100, 50, 30}, ThresholdMethod::isodata);
    CHECK(p.boxes.empty());
    CHECK(p.degenerate);
}

TEST_CASE("one persistent detection gives one median-size proposal on its centroid") {
    std::vector<BBox> boxes(12, BBox{100, 80, 40, 40});
    const auto acc = accumulate(boxes, 320, 240);
    const auto p = propose(acc, {100, 50, 30}, ThresholdMethod::isodata);
    CHECK_FALSE(p.degenerate);
    CHECK(p.components_before == 1);
    REQUIRE(p.boxes.size() == 1);
    CHECK(p.boxes[0] == BBox{95, 85, 50, 30});
    CHECK(p.scores[0] == 1.0);
}

TEST_CASE("a box seen for one second of twelve is suppressed") {
    std::vector<BBox> boxes(12, BBox{100, 80, 40, 40});
    boxes.push_back({220, 150, 40, 40});
    const auto acc = accumulate(boxes, 320, 240);
    for (auto m : {ThresholdMethod::isodata, ThresholdMethod::otsu, ThresholdMethod::mean}) {
        CAPTURE(std::string(to_string(m)));
        const auto p = propose(acc, {100, 50, 30}, m);
        CHECK(p.threshold >= 1.0);
        CHECK(p.threshold < 12.0);
        REQUIRE(p.boxes.size() == 1);
        CHECK(p.boxes[0].cx() == 120.0);
    }
}

TEST_CASE("components below the minimum area are dropped") {
    std::vector<BBox> boxes(12, BBox{100, 80, 40, 40});
    for (int i = 0; i < 12; ++i) boxes.push_back({10, 10, 5, 5});
    const auto p = propose(accumulate(boxes, 320, 240), {100, 50, 30}, ThresholdMethod::isodata);
    CHECK(p.components_before == 2);
    CHECK(p.components_after == 1);
    CHECK(p.boxes.size() == 1);
}

TEST_CASE("ground-truth size statistics") {
    const auto s = GtSizeStats::from_boxes({{0, 0, 10, 20}, {0, 0, 30, 10}, {0, 0, 20, 40}});
    CHECK(s.min_area == 200.0);
    CHECK(s.median_width == 20.0);
    CHECK(s.median_height == 20.0);
    const auto d = GtSizeStats::defaults(858, 480);
    CHECK(d.min_area == 900.0);
    CHECK(d.median_width == 120.0);
    const auto d2 = GtSizeStats::defaults(1716, 960);
    CHECK(d2.min_area == doctest::Approx(3600.0));
    CHECK(d2.median_height == doctest::Approx(180.0));
    CHECK_THROWS_AS(GtSizeStats::from_boxes({}), InvalidInput);
}

TEST_CASE("video driver samples one frame per second and windows every twelve seconds") {
    DetectionMap m;
    for (int s = 0; s < 30; ++s) {
        const std::int64_t f = s * 30;
        m[f].push_back({{100, 80, 40, 40}, 0.9, "hand", f});
        m[f + 1].push_back({{200, 80, 40, 40}, 0.9, "hand", f + 1});  // off-sample frame
    }
    ProposerConfig cfg;
    const auto run = propose_video(m, 900, 30.0, 320, 240, {100, 50, 30}, cfg);
    CHECK(run.accumulators.size() == 3);
    CHECK(run.naive_count == 30);
    CHECK(run.accumulators[0].max() == 12);
    CHECK(run.accumulators[2].max() == 6);
    const auto per_second = proposals_per_second(run, 900, 30.0, cfg.window_seconds);
    CHECK(per_second.size() == 30);
    CHECK(per_second.at(30)[0].box == BBox{95, 85, 50, 30});

    cfg.every_frame = true;
    CHECK(propose_video(m, 900, 30.0, 320, 240, {100, 50, 30}, cfg).naive_count == 60);
    CHECK_THROWS_AS(propose_video(m, 100, 30.0, 320, 240, {100, 50, 30}, cfg), InvalidInput);
}

TEST_CASE("accumulator dumps as 16-bit PGM") {
    const auto path = std::filesystem::temp_directory_path() / "longtrack_test_acc.pgm";
    const auto acc = accumulate(std::vector<BBox>(300, BBox{1, 1, 2, 2}), 5, 4);
    save_accumulator_pgm(path, acc);
    const cv::Mat back = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    REQUIRE(back.type() == CV_16UC1);
    CHECK(back.at<std::uint16_t>(1, 1) == 300);
    CHECK(back.at<std::uint16_t>(0, 0) == 0);
}
