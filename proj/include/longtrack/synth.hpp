// synth.hpp: scripted synthetic scenes with exact ground truth.
//
// Scenario JSON:
//
//   {
//     "duration": 60, "fps": 30, "width": 858, "height": 480, "background": 40,
//     "noise": {"jitter": 2.0, "miss_prob": 0.0, "spurious_rate": 0.0},
//     "targets": [{
//       "label": "keyboard", "box": [100, 200, 48, 32], "velocity": [1, 0],
//       "texture": "noise", "intensity": 220, "texture_seed": 7,
//       "events": [{"type": "teleport", "t": 7.0, "to": [500, 120]},
//                  {"type": "occlude", "t1": 2.0, "t2": 3.0}]
//     }]
//   }
//
// Motion reflects at the frame borders. A target is hidden (ground truth
// absent) for frames with t1 <= t < t2 of an occlude or disappear event; an
// occluded target is covered by a flat grey block, a disappeared one is not
// drawn at all.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "longtrack/core.hpp"
#include "longtrack/detect.hpp"

namespace longtrack {

enum class Texture { solid, checker, noise };

struct ScriptEvent {
    enum class Kind { teleport, occlude, disappear };
    Kind kind = Kind::teleport;
    double t1 = 0.0;  // teleport time, or interval start
    double t2 = 0.0;  // interval end
    double to_x = 0.0;
    double to_y = 0.0;
};

struct TargetScript {
    std::string label = "target";
    BBox box;
    double vx = 0.0;  // px/frame
    double vy = 0.0;
    Texture texture = Texture::solid;
    std::uint8_t intensity = 255;
    std::uint64_t texture_seed = 0;
    std::vector<ScriptEvent> events;
};

struct Scenario {
    double duration = 10.0;  // seconds
    double fps = 30.0;
    int width = 858;
    int height = 480;
    std::uint8_t background = 0;
    NoiseModel noise;
    std::vector<TargetScript> targets;

    std::size_t frame_count() const;

    /// Throws InvalidInput on any script violation.
    void validate() const;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& s);

struct SynthResult {
    std::shared_ptr<const FrameSeq> frames;
    std::vector<BoxTimeline> truth;  // one per target
    DetectionMap detections;         // truth under the scenario's noise model
};

SynthResult generate(const Scenario& scenario, std::uint64_t seed);

/// Detector replaying the scenario's noise model, identical to the emitted file.
SyntheticDetector make_detector(const Scenario& scenario, const SynthResult& result, std::uint64_t seed);

}  // namespace longtrack
