// Shared synthetic fixtures for the test suites.
#pragma once

#include "longtrack/synth.hpp"

namespace longtrack::test {

inline Scenario single_target(double duration, BBox box, double vx = 0.0, double vy = 0.0,
                              Texture texture = Texture::noise, int width = 858, int height = 480) {
    Scenario s;
    s.duration = duration;
    s.fps = 30.0;
    s.width = width;
    s.height = height;
    s.background = 30;
    TargetScript t;
    t.label = "target";
    t.box = box;
    t.vx = vx;
    t.vy = vy;
    t.texture = texture;
    t.intensity = 230;
    t.texture_seed = 3;
    s.targets.push_back(t);
    return s;
}

/// White square on black, as a bare frame.
inline FrameGray square_frame(int width, int height, const BBox& b) {
    FrameGray f(width, height, 0);
    for (const auto& p : rasterize(b, width, height)) f.at(p.row, p.col) = 255;
    return f;
}

}  // namespace longtrack::test
