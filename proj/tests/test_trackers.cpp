#include <doctest.h>

#include <cmath>
#include <cstring>

#include "longtrack/rng.hpp"
#include "longtrack/trackers.hpp"
#include "scenes.hpp"

using namespace longtrack;

namespace {

bool same_bytes(const cv::Mat& a, const cv::Mat& b) {
    if (a.empty() && b.empty()) return true;
    if (a.size() != b.size() || a.type() != b.type()) return false;
    return std::memcmp(a.data, b.data, a.total() * a.elemSize()) == 0;
}

bool same_model(const TrackerState& a, const TrackerState& b) {
    return same_bytes(a.numerator_f, b.numerator_f) && same_bytes(a.denominator_f, b.denominator_f) &&
           same_bytes(a.alpha_f, b.alpha_f) && same_bytes(a.template_f, b.template_f) && a.box == b.box;
}

cv::Mat random_patch(cv::Size size, std::uint64_t seed) {
    Rng rng(seed);
    cv::Mat m(size, CV_32F);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) m.at<float>(r, c) = static_cast<float>(rng.uniform(-0.5, 0.5));
    return m;
}

cv::Mat circshift(const cv::Mat& m, int dx, int dy) {
    cv::Mat out(m.size(), m.type());
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            out.at<float>((r + dy + m.rows) % m.rows, (c + dx + m.cols) % m.cols) = m.at<float>(r, c);
    return out;
}

const TrackerKind kKinds[] = {TrackerKind::mosse, TrackerKind::kcf};

}  // namespace

TEST_CASE("config defaults and validation") {
    CHECK(TrackerConfig::defaults(TrackerKind::kcf).learning_rate == 0.02);
    CHECK(TrackerConfig::defaults(TrackerKind::mosse).learning_rate == 0.125);
    TrackerConfig c;
    c.lambda = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    c = {};
    c.learning_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    CHECK(tracker_kind_from_string("mosse") == TrackerKind::mosse);
    CHECK_THROWS_AS(tracker_kind_from_string("csrt"), InvalidInput);
}

TEST_CASE("init on a white square then update on the same frame keeps the box") {
    const BBox box{40, 40, 20, 20};
    const FrameGray frame = test::square_frame(100, 100, box);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        TrackerState s = tracker_init(frame, box, TrackerConfig::defaults(kind));
        CHECK(s.box == box);
        CHECK(s.frames_since_init == 0);
        const TrackStep step = tracker_update(s, frame);
        CHECK(step.status == TrackStatus::ok);
        CHECK(step.box == box);
    }
}

TEST_CASE("init rejects tiny boxes and mismatched frames") {
    const FrameGray frame(100, 100, 0);
    CHECK_THROWS_AS(tracker_init(frame, {0, 0, 2, 2}, {}), InvalidInput);
    TrackerState s = tracker_init(test::square_frame(100, 100, {40, 40, 20, 20}), {40, 40, 20, 20}, {});
    CHECK_THROWS_AS(tracker_update(s, FrameGray(90, 100)), InvalidInput);
}

TEST_CASE("response map matches the padded window and its peak is at zero on the training patch") {
    const auto scene = generate(test::single_target(1.0, {200, 150, 40, 32}), 1);
    const FrameGray f0 = scene.frames->frame(0);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        TrackerState s = tracker_init(f0, {200, 150, 40, 32}, TrackerConfig::defaults(kind));
        CHECK(s.window == cv::Size(100, 80));
        cv::Mat patch = cf::extract_patch(f0, s.box.cx(), s.box.cy(), s.window);
        cv::multiply(patch, s.hann, patch);
        const cv::Mat resp = cf::response(s, patch);
        CHECK(resp.size() == s.window);
        const cv::Point peak = cf::response_peak(resp);
        CHECK(peak == cv::Point(0, 0));
        CHECK(std::isfinite(cf::peak_to_sidelobe(resp, peak)));
    }
}

TEST_CASE("gaussian kernel autocorrelation peaks at zero shift") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const cv::Mat x = random_patch({24, 18}, seed);
        cv::Mat x_f;
        cv::dft(x, x_f, cv::DFT_COMPLEX_OUTPUT);
        const double sq = cv::norm(x, cv::NORM_L2SQR);
        const cv::Mat k = cf::gaussian_correlation(x_f, x_f, sq, sq, 0.5);
        double max_v = 0.0;
        cv::Point max_at;
        cv::minMaxLoc(k, nullptr, &max_v, nullptr, &max_at);
        CHECK(max_at == cv::Point(0, 0));
        CHECK(k.at<float>(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("circular shift of the search patch shifts the response argmax exactly") {
    const auto scene = generate(test::single_target(1.0, {200, 150, 40, 32}), 2);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        const TrackerState s = tracker_init(scene.frames->frame(0), {200, 150, 40, 32}, TrackerConfig::defaults(kind));
        const cv::Mat z = random_patch(s.window, 99);
        const cv::Point base = cf::response_peak(cf::response(s, z));
        const int shifts[][2] = {{3, 0}, {0, 5}, {-7, 4}, {11, -9}, {49, 39}};
        for (const auto& d : shifts) {
            const cv::Point moved = cf::response_peak(cf::response(s, circshift(z, d[0], d[1])));
            CHECK(moved.x == (base.x + d[0] + s.window.width) % s.window.width);
            CHECK(moved.y == (base.y + d[1] + s.window.height) % s.window.height);
        }
    }
}

TEST_CASE("argmax ties prefer the smallest displacement") {
    cv::Mat resp = cv::Mat::zeros(10, 10, CV_32F);
    resp.at<float>(0, 9) = 1.0f;  // displacement (-1, 0)
    resp.at<float>(3, 3) = 1.0f;
    resp.at<float>(0, 2) = 1.0f;
    CHECK(cf::response_peak(resp) == cv::Point(9, 0));
    CHECK(cf::displacement({9, 0}, {10, 10}) == cv::Point(-1, 0));
}

TEST_CASE("static target is held exactly for 50 frames") {
    const BBox box{300, 200, 40, 40};
    const auto scene = generate(test::single_target(50.0 / 30.0, box), 4);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        TrackerState s = tracker_init(scene.frames->frame(0), box, TrackerConfig::defaults(kind));
        for (std::size_t f = 1; f < scene.frames->size(); ++f) {
            const TrackStep step = tracker_update(s, scene.frames->frame(f));
            CHECK(step.status == TrackStatus::ok);
            CHECK(iou(step.box, *scene.truth[0][f].box) == 1.0);
        }
    }
}

TEST_CASE("constant velocity of 2 px/frame is followed over 300 frames") {
    const BBox box{100, 200, 40, 40};
    const auto scene = generate(test::single_target(10.0, box, 2.0, 0.0), 5);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        TrackerState s = tracker_init(scene.frames->frame(0), box, TrackerConfig::defaults(kind));
        double sum = 1.0;
        for (std::size_t f = 1; f < 300; ++f) {
            sum += iou(tracker_update(s, scene.frames->frame(f)).box, *scene.truth[0][f].box);
        }
        CHECK(sum / 300.0 >= 0.8);
    }
}

TEST_CASE("teleported target is reported failed within 3 frames and the model is frozen") {
    const BBox box{100, 200, 40, 40};
    Scenario sc = test::single_target(2.0, box);
    sc.targets[0].events.push_back({ScriptEvent::Kind::teleport, 1.0, 0.0, 600.0, 60.0});
    const auto scene = generate(sc, 6);
    for (auto kind : kKinds) {
        CAPTURE(to_string(kind));
        TrackerState s = tracker_init(scene.frames->frame(0), box, TrackerConfig::defaults(kind));
        for (std::size_t f = 1; f < 30; ++f) REQUIRE(tracker_update(s, scene.frames->frame(f)).status == TrackStatus::ok);
        bool failed = false;
        for (std::size_t f = 30; f < 33 && !failed; ++f) {
            const TrackerState before = s;
            const TrackStep step = tracker_update(s, scene.frames->frame(f));
            if (step.status == TrackStatus::failed) {
                failed = true;
                CHECK(step.psr < s.config.psr_threshold);
                CHECK(same_model(before, s));
            }
        }
        CHECK(failed);
    }
}

TEST_CASE("measure_fps") {
    const auto one = generate(test::single_target(1.0 / 30.0, {100, 100, 40, 40}), 7);
    const double fps = measure_fps({}, *one.frames, {100, 100, 40, 40});
    CHECK(std::isfinite(fps));
    CHECK(fps > 0.0);
    CHECK_THROWS_AS(measure_fps({}, InMemorySeq({}, 30.0), {100, 100, 40, 40}), InvalidInput);
}
