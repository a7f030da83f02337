#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "longtrack/detect.hpp"
#include "longtrack/rng.hpp"
#include "scenes.hpp"

using namespace longtrack;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("longtrack_test_detect_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

DetectionMap parse(const std::string& text) {
    std::istringstream in(text);
    return parse_detections(in);
}

const char* kEchoDetector = R"(import sys, json
for line in sys.stdin:
    req = json.loads(line)
    f = req["frame"]
    print(json.dumps({"frame": f, "detections": [{"label": "kb", "score": 0.9, "box": [f, 2, 10, 10]}]}), flush=True)
)";

const char* kOneShotDetector = R"(import sys, json
line = sys.stdin.readline()
f = json.loads(line)["frame"]
print(json.dumps({"frame": f, "detections": []}), flush=True)
)";

const char* kSleepyDetector = R"(import sys, time
sys.stdin.readline()
time.sleep(5)
)";

const char* kGarbageDetector = R"(import sys
for line in sys.stdin:
    print("not json", flush=True)
)";

}  // namespace

TEST_CASE("header-only file parses to an empty map") {
    CHECK(parse("frame,label,score,x,y,w,h\n").empty());
}

TEST_CASE("rows for one frame keep file order") {
    const auto m = parse(
        "frame,label,score,x,y,w,h\n"
        "30,hand,0.5,1,2,3,4\n"
        "30,hand,0.9,5,6,7,8\n");
    REQUIRE(m.size() == 1);
    REQUIRE(m.at(30).size() == 2);
    CHECK(m.at(30)[0].score == 0.5);
    CHECK(m.at(30)[1].box == BBox{5, 6, 7, 8});
    CHECK(m.at(30)[1].frame == 30);
}

TEST_CASE("parse errors carry the line number") {
    try {
        parse("frame,label,score,x,y,w,h\n1,kb,0.5,0,0,4,4\n2,kb,1.3,0,0,4,4\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse("frame,label,score,x,y,w,h\n1,kb,0.5,0,0,4\n"), ParseError);
    CHECK_THROWS_AS(parse("frame,label,score,x,y,w,h\n-1,kb,0.5,0,0,4,4\n"), ParseError);
    CHECK_THROWS_AS(parse("frame,label,score,x,y,w,h\n1,kb,0.5,0,0,0,4\n"), ParseError);
    CHECK_THROWS_AS(parse("frame,label,score,x,y,w,h\n1,kb,abc,0,0,4,4\n"), ParseError);
    CHECK_THROWS_AS(parse("x,y\n"), ParseError);
    CHECK_THROWS_AS(parse(""), ParseError);
}

TEST_CASE("labels are opaque") {
    const auto m = parse("frame,label,score,x,y,w,h\n0,some weird label!,1,0,0,4,4\n");
    CHECK(m.at(0)[0].label == "some weird label!");
}

TEST_CASE("save then load is the identity on six-decimal values") {
    Rng rng(21);
    auto q = [](double v) { return std::round(v * 1e6) / 1e6; };
    for (int round = 0; round < 20; ++round) {
        DetectionMap m;
        for (int i = 0; i < 30; ++i) {
            Detection d;
            d.frame = static_cast<std::int64_t>(rng.next() % 50);
            d.label = (rng.next() % 2) ? "hand" : "keyboard";
            d.score = q(rng.unit());
            d.box = {q(rng.uniform(0, 800)), q(rng.uniform(0, 400)), q(rng.uniform(1, 100)), q(rng.uniform(1, 100))};
            m[d.frame].push_back(d);
        }
        std::stringstream ss;
        write_detections(ss, m);
        const auto back = parse_detections(ss);
        CHECK(back == m);
    }
}

TEST_CASE("timeline export carries the source column and loads back") {
    BoxTimeline tl(4, 30.0);
    tl.set(0, {1, 1, 10, 10}, BoxSource::detected, 0.75);
    tl.set(1, {2, 1, 10, 10}, BoxSource::tracked, 0.75);
    tl.set(3, {3, 1, 10, 10}, BoxSource::held, 0.75);
    const fs::path dir = temp_dir("timeline");
    save_timeline(dir / "t.csv", tl, "kb");
    std::ifstream in(dir / "t.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "frame,label,score,x,y,w,h,source");

    const BoxTimeline back = load_timeline(dir / "t.csv", 4, 30.0);
    CHECK(back[1].source == BoxSource::tracked);
    CHECK(back[1].box.value() == BBox{2, 1, 10, 10});
    CHECK_FALSE(back[2].box.has_value());
    CHECK(back[3].source == BoxSource::held);
}

TEST_CASE("timeline from detections keeps the best score per frame") {
    DetectionMap m;
    m[0] = {{{0, 0, 5, 5}, 0.4, "kb", 0}, {{1, 1, 5, 5}, 0.8, "kb", 0}, {{2, 2, 5, 5}, 0.9, "book", 0}};
    const auto tl = timeline_from_detections(m, 2, 30.0, "kb");
    CHECK(tl[0].box.value() == BBox{1, 1, 5, 5});
    CHECK_FALSE(tl[1].box.has_value());
}

TEST_CASE("COCO annotations load with optional scores") {
    const fs::path dir = temp_dir("coco");
    write_file(dir / "gt.json", R"({"images": [{"id": 3, "file_name": "a.png", "width": 64, "height": 48}],
        "annotations": [{"image_id": 3, "bbox": [1, 2, 3, 4], "category_id": 1},
                        {"image_id": 3, "bbox": [5, 6, 7, 8], "category_id": "hand", "score": 0.25}]})");
    const CocoSet set = load_coco(dir / "gt.json");
    REQUIRE(set.images.size() == 1);
    CHECK(set.images[0].width == 64);
    const auto& a = set.annotations.at(3);
    REQUIRE(a.size() == 2);
    CHECK(a[0].label == "1");
    CHECK(a[0].score == 1.0);
    CHECK(a[1].label == "hand");
    CHECK(a[1].score == 0.25);

    write_file(dir / "bad.json", R"({"annotations": [{"image_id": 1, "bbox": [1, 2, 3], "category_id": 1}]})");
    CHECK_THROWS_AS(load_coco(dir / "bad.json"), InvalidInput);
}

TEST_CASE("file detector returns stored rows or nothing") {
    DetectionMap m;
    m[5] = {{{0, 0, 5, 5}, 0.4, "kb", 5}};
    FileDetector det(m);
    CHECK(det.detect_at(4).empty());
    CHECK(det.detect_at(5) == m[5]);
}

TEST_CASE("synthetic detector with zero noise returns the exact truth") {
    const auto scene = generate(test::single_target(1.0, {100, 100, 40, 30}, 1.0, 0.0), 3);
    SyntheticDetector det(scene.truth, {"target"}, NoiseModel{}, 9, 858, 480);
    for (std::int64_t f = 0; f < 30; ++f) {
        const auto d = det.detect_at(f);
        REQUIRE(d.size() == 1);
        CHECK(d[0].box == *scene.truth[0][static_cast<std::size_t>(f)].box);
        CHECK(d[0].score == 1.0);
        CHECK(d[0].frame == f);
    }
    CHECK_THROWS_AS(det.detect_at(30), InvalidInput);
}

TEST_CASE("synthetic detector noise is seeded per frame") {
    const auto scene = generate(test::single_target(1.0, {100, 100, 40, 30}), 3);
    NoiseModel noise{3.0, 0.2, 1.5};
    SyntheticDetector a(scene.truth, {"target"}, noise, 17, 858, 480);
    SyntheticDetector b(scene.truth, {"target"}, noise, 17, 858, 480);
    for (std::int64_t f = 29; f >= 0; --f) CHECK(a.detect_at(f) == b.detect_at(f));
    CHECK(a.detect_at(3) == a.detect_at(3));
    for (std::int64_t f = 0; f < 30; ++f) {
        for (const auto& d : a.detect_at(f)) {
            CHECK(d.score >= 0.0);
            CHECK(d.score <= 1.0);
        }
    }
}

TEST_CASE("subprocess detector round trip") {
    const fs::path dir = temp_dir("subprocess");
    const auto script = write_file(dir / "echo.py", kEchoDetector);
    SubprocessDetector det({"python3", script.string()}, [](std::int64_t f) { return "frame_" + std::to_string(f) + ".pgm"; });
    for (std::int64_t f : {0, 7, 12}) {
        const auto d = det.detect_at(f);
        REQUIRE(d.size() == 1);
        CHECK(d[0].frame == f);
        CHECK(d[0].box == BBox{static_cast<double>(f), 2, 10, 10});
        CHECK(d[0].label == "kb");
    }
}

TEST_CASE("subprocess detector failures surface as detector-unavailable") {
    const fs::path dir = temp_dir("subprocess_fail");
    auto path = [](std::int64_t) { return std::string("x.pgm"); };

    SubprocessDetector one_shot({"python3", write_file(dir / "one.py", kOneShotDetector).string()}, path);
    CHECK(one_shot.detect_at(0).empty());
    CHECK_THROWS_AS(one_shot.detect_at(1), DetectorUnavailable);
    CHECK_THROWS_AS(one_shot.detect_at(2), DetectorUnavailable);

    SubprocessDetector sleepy({"python3", write_file(dir / "sleepy.py", kSleepyDetector).string()}, path,
                              std::chrono::milliseconds(300));
    CHECK_THROWS_AS(sleepy.detect_at(0), DetectorUnavailable);

    SubprocessDetector garbage({"python3", write_file(dir / "garbage.py", kGarbageDetector).string()}, path);
    CHECK_THROWS_AS(garbage.detect_at(0), DetectorUnavailable);

    SubprocessDetector missing({"/nonexistent/detector"}, path);
    CHECK_THROWS_AS(missing.detect_at(0), DetectorUnavailable);
}
