#include "longtrack/hybrid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace longtrack {

const char* to_string(FailurePolicy p) { return p == FailurePolicy::coast ? "coast" : "redetect-now"; }

FailurePolicy failure_policy_from_string(const std::string& s) {
    if (s == "redetect-now") return FailurePolicy::redetect_now;
    if (s == "coast") return FailurePolicy::coast;
    throw InvalidInput("unknown failure policy '" + s + "' (expected redetect-now or coast)");
}

const char* to_string(RunEvent::Kind k) {
    switch (k) {
        case RunEvent::Kind::detect: return "detect";
        case RunEvent::Kind::init: return "init";
        case RunEvent::Kind::track_failure: return "track_failure";
        case RunEvent::Kind::detector_error: return "detector_error";
    }
    return "detect";
}

void SchedulerConfig::validate() const {
    if (!(redetect_interval > 0.0)) throw InvalidInput("redetect interval must be > 0");
    if (detection_cadence < 0) throw InvalidInput("detection cadence must be >= 0");
    tracker.validate();
}

std::vector<std::size_t> boundary_frames(std::size_t frame_count, double fps, double interval) {
    std::vector<std::size_t> out;
    if (frame_count == 0) return out;
    const double duration = static_cast<double>(frame_count) / fps;
    const auto k_max = static_cast<std::size_t>(std::floor(duration / interval + 1e-9));
    for (std::size_t k = 0; k <= k_max; ++k) {
        const auto f = static_cast<std::size_t>(std::llround(static_cast<double>(k) * interval * fps));
        out.push_back(std::min(f, frame_count - 1));
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

const Detection* best_detection(const std::vector<Detection>& dets, const std::string& label,
                                const std::optional<BBox>& previous) {
    const Detection* best = nullptr;
    auto deviation = [&](const Detection& d) { return previous ? std::abs(d.box.area() - previous->area()) : 0.0; };
    for (const auto& d : dets) {
        if (!label.empty() && d.label != label) continue;
        if (!best || d.score > best->score || (d.score == best->score && deviation(d) < deviation(*best))) {
            best = &d;
        }
    }
    return best;
}

namespace {

using clock_type = std::chrono::steady_clock;

int resolve_cadence(int cadence, double fps) {
    return cadence > 0 ? cadence : std::max(1, static_cast<int>(std::lround(fps)));
}

void finish(RunReport& r, const Detector& det, clock_type::time_point start, double video_seconds) {
    r.compute_seconds = std::chrono::duration<double>(clock_type::now() - start).count();
    r.simulated_latency_seconds = static_cast<double>(r.detect_calls) * det.latency_seconds();
    r.wall_seconds = r.compute_seconds + r.simulated_latency_seconds;
    r.video_seconds = video_seconds;
    r.real_time_factor = video_seconds / std::max(r.wall_seconds, 1e-12);
}

class Scheduler {
public:
    Scheduler(const FrameSeq& seq, Detector& det, const SchedulerConfig& cfg)
        : seq_(seq), det_(det), cfg_(cfg), cadence_(resolve_cadence(cfg.detection_cadence, seq.fps())) {
        report_.timeline = BoxTimeline(seq.size(), seq.fps());
        const auto b = boundary_frames(seq.size(), seq.fps(), cfg.redetect_interval);
        boundaries_.insert(b.begin(), b.end());
    }

    RunReport run() {
        const auto start = clock_type::now();
        for (std::size_t f = 0; f < seq_.size(); ++f) step(f);
        finish(report_, det_, start, seq_.duration_seconds());
        return std::move(report_);
    }

private:
    // Calls the detector and, on a usable detection, re-initialises the tracker.
    bool detect_and_init(std::size_t f) {
        std::vector<Detection> dets;
        ++report_.detect_calls;
        try {
            dets = det_.detect_at(static_cast<std::int64_t>(f));
        } catch (const DetectorUnavailable& e) {
            if (f == 0) {
                throw DetectorUnavailable("frame " + std::to_string(f) + ": " + e.what());
            }
            ++report_.detector_errors;
            report_.events.push_back({f, RunEvent::Kind::detector_error, 0});
        }
        report_.events.push_back({f, RunEvent::Kind::detect, dets.size()});
        const Detection* best = best_detection(dets, cfg_.target_label, last_box_);
        if (!best) return false;
        const auto box = clip(best->box, seq_.width(), seq_.height());
        if (!box) return false;
        ++report_.detect_hits;
        last_box_ = *box;
        last_score_ = best->score;
        holding_ = false;
        report_.timeline.set(f, *box, BoxSource::detected, best->score);
        try {
            tracker_ = tracker_init(frame(f), *box, cfg_.tracker);
            report_.events.push_back({f, RunEvent::Kind::init, 0});
        } catch (const InvalidInput&) {
            tracker_.reset();  // too small to track; keep the detection only
            next_retry_ = f + static_cast<std::size_t>(cadence_);
        }
        return true;
    }

    void step(std::size_t f) {
        const bool boundary = boundaries_.count(f) > 0;
        if (boundary) holding_ = false;
        if (boundary || (!tracker_ && f >= next_retry_)) {
            if (detect_and_init(f)) return;
            next_retry_ = f + static_cast<std::size_t>(cadence_);
        }
        if (tracker_ && !holding_) {
            const TrackStep s = tracker_update(*tracker_, frame(f));
            ++report_.track_steps;
            if (s.status == TrackStatus::ok) {
                last_box_ = s.box;
                report_.timeline.set(f, s.box, BoxSource::tracked, last_score_);
                return;
            }
            ++report_.failures;
            report_.events.push_back({f, RunEvent::Kind::track_failure, 0});
            if (cfg_.failure_policy == FailurePolicy::redetect_now) {
                if (f >= next_recovery_) {
                    if (detect_and_init(f)) return;
                    next_recovery_ = f + static_cast<std::size_t>(cadence_);
                }
            } else {
                holding_ = true;
            }
        }
        if (last_box_) {
            report_.timeline.set(f, *last_box_, BoxSource::held, last_score_);
        } else {
            report_.timeline.set_absent(f);
        }
    }

    const FrameGray& frame(std::size_t f) {
        if (cached_index_ != f || cached_.empty()) {
            cached_ = seq_.frame(f);
            cached_index_ = f;
        }
        return cached_;
    }

    const FrameSeq& seq_;
    Detector& det_;
    const SchedulerConfig& cfg_;
    int cadence_;
    std::unordered_set<std::size_t> boundaries_;
    RunReport report_;

    std::optional<TrackerState> tracker_;
    std::optional<BBox> last_box_;
    double last_score_ = 0.0;
    bool holding_ = false;
    std::size_t next_retry_ = 0;
    std::size_t next_recovery_ = 0;
    FrameGray cached_;
    std::size_t cached_index_ = 0;
};

}  // namespace

RunReport run_detection_only(const FrameSeq& seq, Detector& detector, int cadence, const std::string& label) {
    if (cadence < 0) throw InvalidInput("detection cadence must be >= 0");
    const int step = resolve_cadence(cadence, seq.fps());
    RunReport r;
    r.timeline = BoxTimeline(seq.size(), seq.fps());
    std::optional<BBox> last;
    double last_score = 0.0;
    const auto start = clock_type::now();
    for (std::size_t f = 0; f < seq.size(); ++f) {
        if (f % static_cast<std::size_t>(step) == 0) {
            std::vector<Detection> dets;
            ++r.detect_calls;
            try {
                dets = detector.detect_at(static_cast<std::int64_t>(f));
            } catch (const DetectorUnavailable& e) {
                throw DetectorUnavailable("frame " + std::to_string(f) + ": " + e.what());
            }
            r.events.push_back({f, RunEvent::Kind::detect, dets.size()});
            const Detection* best = best_detection(dets, label, last);
            const auto box = best ? clip(best->box, seq.width(), seq.height()) : std::nullopt;
            if (box) {
                ++r.detect_hits;
                last = *box;
                last_score = best->score;
                r.timeline.set(f, *box, BoxSource::detected, best->score);
                continue;
            }
        }
        if (last) r.timeline.set(f, *last, BoxSource::held, last_score);
    }
    finish(r, detector, start, seq.duration_seconds());
    return r;
}

RunReport run_hybrid(const FrameSeq& seq, Detector& detector, const SchedulerConfig& cfg) {
    cfg.validate();
    return Scheduler(seq, detector, cfg).run();
}

std::string report_to_json(const RunReport& r) {
    nlohmann::json j;
    j["video_seconds"] = r.video_seconds;
    j["frames"] = r.timeline.size();
    j["fps"] = r.timeline.fps();
    j["detect_calls"] = r.detect_calls;
    j["detect_hits"] = r.detect_hits;
    j["track_steps"] = r.track_steps;
    j["failures"] = r.failures;
    j["detector_errors"] = r.detector_errors;
    j["simulated_latency_seconds"] = r.simulated_latency_seconds;
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& e : r.timeline) ++counts[static_cast<int>(e.source)];
    j["sources"] = {{"detected", counts[0]}, {"held", counts[1]}, {"tracked", counts[2]}, {"absent", counts[3]}};
    j["events"] = nlohmann::json::array();
    for (const auto& e : r.events) {
        nlohmann::json je{{"frame", e.frame}, {"kind", to_string(e.kind)}};
        if (e.kind == RunEvent::Kind::detect) je["detections"] = e.detections;
        j["events"].push_back(std::move(je));
    }
    j["timing"] = {{"compute_seconds", r.compute_seconds},
                   {"wall_seconds", r.wall_seconds},
                   {"real_time_factor", r.real_time_factor}};
    return j.dump(2) + "\n";
}

}  // namespace longtrack
