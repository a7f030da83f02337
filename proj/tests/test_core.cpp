#include <doctest.h>

#include <algorithm>
#include <set>

#include "longtrack/core.hpp"
#include "longtrack/rng.hpp"

using namespace longtrack;

namespace {

// Brute-force IoU over unit pixels, independent of the analytic formula.
double raster_iou(const BBox& a, const BBox& b, int w, int h) {
    const auto pa = rasterize(a, w, h);
    const auto pb = rasterize(b, w, h);
    std::set<Pixel> sa(pa.begin(), pa.end());
    std::size_t inter = 0;
    for (const auto& p : pb) inter += sa.count(p);
    const std::size_t uni = pa.size() + pb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("iou examples") {
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
    CHECK(iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
    // 50 px overlap, 150 px union
    CHECK(iou({0, 0, 10, 10}, {5, 0, 10, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(raster_iou({0, 0, 10, 10}, {5, 0, 10, 10}, 20, 20) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("iou touching edges is zero") {
    CHECK(iou({0, 0, 10, 10}, {10, 0, 10, 10}) == 0.0);
}

TEST_CASE("iou symmetric, self-identity and raster agreement on integer boxes") {
    Rng rng(11);
    for (int i = 0; i < 300; ++i) {
        auto rnd = [&] {
            const double x = std::floor(rng.uniform(0, 40));
            const double y = std::floor(rng.uniform(0, 40));
            return BBox{x, y, 1 + std::floor(rng.uniform(0, 20)), 1 + std::floor(rng.uniform(0, 20))};
        };
        const BBox a = rnd();
        const BBox b = rnd();
        CHECK(iou(a, b) == iou(b, a));
        CHECK(iou(a, a) == 1.0);
        CHECK(iou(a, b) == raster_iou(a, b, 64, 64));
    }
}

TEST_CASE("clip") {
    CHECK(clip({2, 2, 4, 4}, 100, 100).value() == BBox{2, 2, 4, 4});
    CHECK(clip({-5, -5, 10, 10}, 100, 100).value() == BBox{0, 0, 5, 5});
    CHECK_FALSE(clip({200, 200, 10, 10}, 100, 100).has_value());
    CHECK_FALSE(clip({-10, 0, 10, 10}, 100, 100).has_value());

    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const BBox b{rng.uniform(-50, 120), rng.uniform(-50, 120), rng.uniform(1, 80), rng.uniform(1, 80)};
        const auto once = clip(b, 100, 80);
        if (!once) continue;
        CHECK(once->x >= 0.0);
        CHECK(once->right() <= 100.0);
        CHECK(once->bottom() <= 80.0);
        CHECK(clip(*once, 100, 80).value() == *once);
    }
}

TEST_CASE("rasterize uses the pixel-centre rule") {
    const auto a = rasterize({0, 0, 2, 2}, 10, 10);
    CHECK(a == std::vector<Pixel>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});

    const auto b = rasterize({0.6, 0, 1, 1}, 10, 10);
    CHECK(b == std::vector<Pixel>{{0, 1}});

    CHECK(rasterize({0, 0, 10, 10}, 4, 4).size() == 16);
    CHECK(rasterize({20, 20, 3, 3}, 10, 10).empty());
}

TEST_CASE("FrameGray validates its buffer") {
    CHECK_THROWS_AS(FrameGray(3, 3, std::vector<std::uint8_t>(8)), InvalidInput);
    CHECK_THROWS_AS(FrameGray(0, 3), InvalidInput);
    FrameGray f(4, 3, 9);
    f.at(2, 3) = 1;
    CHECK(f.view().at<std::uint8_t>(2, 3) == 1);
    CHECK(FrameGray::from_mat(f.view()) == f);
}

TEST_CASE("InMemorySeq rejects mixed dimensions") {
    std::vector<FrameGray> frames{FrameGray(4, 4), FrameGray(4, 5)};
    CHECK_THROWS_AS(InMemorySeq(frames, 30.0), InvalidInput);
    CHECK_THROWS_AS(InMemorySeq({}, 0.0), InvalidInput);
    InMemorySeq ok({FrameGray(4, 4), FrameGray(4, 4)}, 30.0);
    CHECK(ok.size() == 2);
    CHECK(ok.duration_seconds() == doctest::Approx(2.0 / 30.0));
}

TEST_CASE("timeline detections skip absent frames") {
    BoxTimeline tl(3, 30.0);
    tl.set(1, {1, 2, 3, 4}, BoxSource::tracked, 0.5);
    const auto d = tl.to_detections("kb");
    REQUIRE(d.size() == 1);
    CHECK(d[0].frame == 1);
    CHECK(d[0].label == "kb");
    CHECK(box_source_from_string(to_string(BoxSource::held)) == BoxSource::held);
}
