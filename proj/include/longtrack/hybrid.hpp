// hybrid.hpp: detect-then-track scheduling.
//
// The detector runs at t = 0 and every `redetect_interval` seconds; in
// between, a correlation-filter tracker initialised from the best detection
// fills the timeline. Wall-clock accounting adds each detector call's
// declared latency to the measured compute time, so a cheap stand-in detector
// can model an expensive one.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "longtrack/core.hpp"
#include "longtrack/detect.hpp"
#include "longtrack/trackers.hpp"

namespace longtrack {

enum class FailurePolicy { redetect_now, coast };

const char* to_string(FailurePolicy p);
FailurePolicy failure_policy_from_string(const std::string& s);

struct SchedulerConfig {
    double redetect_interval = 5.0;  // seconds
    int detection_cadence = 0;       // frames between detector calls without a track; 0 = one second
    FailurePolicy failure_policy = FailurePolicy::redetect_now;
    TrackerConfig tracker;
    std::string target_label;  // empty accepts any label

    void validate() const;
};

struct RunEvent {
    enum class Kind { detect, init, track_failure, detector_error };
    std::size_t frame = 0;
    Kind kind = Kind::detect;
    std::size_t detections = 0;  // detect events only
};

const char* to_string(RunEvent::Kind k);

struct RunReport {
    BoxTimeline timeline;
    double compute_seconds = 0.0;
    double simulated_latency_seconds = 0.0;
    double wall_seconds = 0.0;  // compute + simulated latency
    double video_seconds = 0.0;
    double real_time_factor = 0.0;
    std::size_t detect_calls = 0;
    std::size_t detect_hits = 0;  // calls returning a usable detection
    std::size_t track_steps = 0;
    std::size_t failures = 0;  // tracker failures
    std::size_t detector_errors = 0;
    std::vector<RunEvent> events;
};

/// Scheduled boundary frames: k * interval for k = 0..floor(duration/interval),
/// mapped to the nearest frame and clamped to the last one.
std::vector<std::size_t> boundary_frames(std::size_t frame_count, double fps, double interval);

/// Highest-scoring detection of `label` (any label when empty); ties go to the
/// smaller area deviation from `previous`, then to input order.
const Detection* best_detection(const std::vector<Detection>& dets, const std::string& label,
                                const std::optional<BBox>& previous);

/// Detector every `cadence` frames; frames in between repeat the latest box
/// as `held`. Frame pixels are never decoded.
RunReport run_detection_only(const FrameSeq& seq, Detector& detector, int cadence, const std::string& label = {});

RunReport run_hybrid(const FrameSeq& seq, Detector& detector, const SchedulerConfig& cfg);

/// Report as JSON. Measured wall-clock figures sit under "timing"; every other
/// member is a pure function of the inputs.
std::string report_to_json(const RunReport& report);

}  // namespace longtrack
