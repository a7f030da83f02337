// detect.hpp: the per-frame detector contract and its implementations, plus
// the detection CSV and COCO-style JSON formats.
//
// Detection CSV (UTF-8, LF):
//
//   frame,label,score,x,y,w,h
//   30,keyboard,0.912000,120.000000,200.500000,310.000000,96.000000
//
// Reals are printed with six decimals. Timeline exports append a `source`
// column (detected | held | tracked | absent).
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "longtrack/core.hpp"

namespace longtrack {

using DetectionMap = std::map<std::int64_t, std::vector<Detection>>;

DetectionMap parse_detections(std::istream& in);
DetectionMap load_detections(const std::filesystem::path& path);

void write_detections(std::ostream& out, const DetectionMap& dets);
void save_detections(const std::filesystem::path& path, const DetectionMap& dets);

DetectionMap group_by_frame(const std::vector<Detection>& dets);
std::vector<Detection> flatten(const DetectionMap& dets);

/// Timeline as detection CSV plus a `source` column. Absent frames are omitted.
void write_timeline(std::ostream& out, const BoxTimeline& timeline, const std::string& label);
void save_timeline(const std::filesystem::path& path, const BoxTimeline& timeline, const std::string& label);

/// Builds a timeline of `frames` entries from detection rows (with or without
/// a source column). When a frame has several rows the highest score wins.
BoxTimeline load_timeline(const std::filesystem::path& path, std::size_t frames, double fps,
                          const std::string& label = {});
BoxTimeline timeline_from_detections(const DetectionMap& dets, std::size_t frames, double fps,
                                     const std::string& label = {});

// --- COCO-style JSON ---------------------------------------------------------

struct CocoImage {
    std::int64_t id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
};

/// Annotations keyed by image id; category ids become labels verbatim and a
/// missing score reads as 1.
struct CocoSet {
    std::vector<CocoImage> images;
    DetectionMap annotations;
};

CocoSet load_coco(const std::filesystem::path& path);

// --- Detector contract ---------------------------------------------------------

class Detector {
public:
    virtual ~Detector() = default;

    /// Detections for one frame; every result carries `frame`.
    /// Throws DetectorUnavailable when the backend cannot answer.
    virtual std::vector<Detection> detect_at(std::int64_t frame) = 0;

    /// Declared cost of one invocation, used for throughput accounting.
    double latency_seconds() const { return latency_; }
    void set_latency_seconds(double s) { latency_ = s; }

private:
    double latency_ = 0.0;
};

class FileDetector final : public Detector {
public:
    explicit FileDetector(DetectionMap dets) : dets_(std::move(dets)) {}
    std::vector<Detection> detect_at(std::int64_t frame) override;

private:
    DetectionMap dets_;
};

/// Perturbation applied by the synthetic detector.
struct NoiseModel {
    double jitter = 0.0;         // uniform +-jitter px on x and y
    double miss_prob = 0.0;      // per true box
    double spurious_rate = 0.0;  // expected false boxes per frame
};

/// Ground-truth timelines turned into detections under a seeded noise model.
/// The draw for a frame depends only on (seed, frame), so calls commute.
class SyntheticDetector final : public Detector {
public:
    SyntheticDetector(std::vector<BoxTimeline> truth, std::vector<std::string> labels, NoiseModel noise,
                      std::uint64_t seed, int width, int height);
    std::vector<Detection> detect_at(std::int64_t frame) override;

    std::size_t frame_count() const { return truth_.empty() ? 0 : truth_.front().size(); }

private:
    std::vector<BoxTimeline> truth_;
    std::vector<std::string> labels_;
    NoiseModel noise_;
    std::uint64_t seed_;
    int width_;
    int height_;
};

/// External detector process speaking newline-delimited JSON on stdin/stdout.
///
///   request: {"frame": n, "image_path": "..."}
///   reply:   {"frame": n, "detections": [{"label": ..., "score": ..., "box": [x,y,w,h]}]}
///
/// One request is in flight at a time. A timeout, a malformed reply or a dead
/// child raises DetectorUnavailable and leaves the detector unusable.
class SubprocessDetector final : public Detector {
public:
    using PathFn = std::function<std::string(std::int64_t)>;

    SubprocessDetector(std::vector<std::string> argv, PathFn image_path,
                       std::chrono::milliseconds timeout = std::chrono::seconds(30));
    ~SubprocessDetector() override;

    SubprocessDetector(const SubprocessDetector&) = delete;
    SubprocessDetector& operator=(const SubprocessDetector&) = delete;

    std::vector<Detection> detect_at(std::int64_t frame) override;

private:
    void shutdown();
    std::string read_line();

    PathFn image_path_;
    std::chrono::milliseconds timeout_;
    int fd_ = -1;
    int pid_ = -1;
    std::string buffer_;
    std::mutex mutex_;
};

}  // namespace longtrack
