#include "longtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "longtrack/rng.hpp"

namespace longtrack {

namespace {

constexpr std::uint64_t kDetectionStream = 0xD37EC7ULL;
constexpr std::uint8_t kOccluderGrey = 128;
constexpr int kCheckerCell = 4;

using nlohmann::json;

const char* texture_name(Texture t) {
    switch (t) {
        case Texture::solid: return "solid";
        case Texture::checker: return "checker";
        case Texture::noise: return "noise";
    }
    return "solid";
}

Texture texture_from(const std::string& s) {
    if (s == "solid") return Texture::solid;
    if (s == "checker") return Texture::checker;
    if (s == "noise") return Texture::noise;
    throw InvalidInput("unknown texture '" + s + "'");
}

BBox box_from(const json& j) {
    if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be [x, y, w, h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::uint8_t byte_from(const json& j, const char* key, std::uint8_t fallback) {
    const int v = j.value(key, static_cast<int>(fallback));
    if (v < 0 || v > 255) throw InvalidInput(std::string(key) + " must be in [0,255]");
    return static_cast<std::uint8_t>(v);
}

// Per-target precomputed placement.
struct Track {
    std::vector<BBox> boxes;     // one per frame
    std::vector<std::uint8_t> visible;
    std::vector<std::uint8_t> occluded;
    int tex_w = 0;
    int tex_h = 0;
    std::vector<std::uint8_t> texture;  // tex_w x tex_h
};

class SynthSeq final : public FrameSeq {
public:
    SynthSeq(const Scenario& s, std::vector<Track> tracks)
        : count_(s.frame_count()), fps_(s.fps), width_(s.width), height_(s.height), background_(s.background),
          tracks_(std::move(tracks)) {}

    std::size_t size() const override { return count_; }
    double fps() const override { return fps_; }
    int width() const override { return width_; }
    int height() const override { return height_; }

    FrameGray frame(std::size_t index) const override {
        if (index >= count_) throw InvalidInput("frame index " + std::to_string(index) + " out of range");
        FrameGray f(width_, height_, background_);
        for (const auto& t : tracks_) {
            if (!t.visible[index] && !t.occluded[index]) continue;
            const BBox& b = t.boxes[index];
            const int x0 = static_cast<int>(std::lround(b.x));
            const int y0 = static_cast<int>(std::lround(b.y));
            for (int r = 0; r < t.tex_h; ++r) {
                const int y = y0 + r;
                if (y < 0 || y >= height_) continue;
                for (int c = 0; c < t.tex_w; ++c) {
                    const int x = x0 + c;
                    if (x < 0 || x >= width_) continue;
                    f.at(y, x) = t.occluded[index] ? kOccluderGrey
                                                   : t.texture[static_cast<std::size_t>(r) * t.tex_w + c];
                }
            }
        }
        return f;
    }

private:
    std::size_t count_;
    double fps_;
    int width_;
    int height_;
    std::uint8_t background_;
    std::vector<Track> tracks_;
};

std::vector<std::uint8_t> make_texture(const TargetScript& t, int w, int h, std::uint64_t seed) {
    std::vector<std::uint8_t> tex(static_cast<std::size_t>(w) * h, t.intensity);
    if (t.texture == Texture::checker) {
        const auto dark = static_cast<std::uint8_t>(t.intensity / 3);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (((r / kCheckerCell) + (c / kCheckerCell)) % 2) tex[static_cast<std::size_t>(r) * w + c] = dark;
    } else if (t.texture == Texture::noise) {
        Rng rng(derive_seed(seed, t.texture_seed));
        for (auto& px : tex) px = static_cast<std::uint8_t>(rng.next() % (static_cast<std::uint64_t>(t.intensity) + 1));
    }
    return tex;
}

Track place(const Scenario& s, const TargetScript& t, std::uint64_t seed) {
    const std::size_t n = s.frame_count();
    Track tr;
    tr.boxes.resize(n);
    tr.visible.assign(n, 1);
    tr.occluded.assign(n, 0);
    tr.tex_w = static_cast<int>(std::lround(t.box.w));
    tr.tex_h = static_cast<int>(std::lround(t.box.h));
    tr.texture = make_texture(t, tr.tex_w, tr.tex_h, seed);

    double x = t.box.x, y = t.box.y, vx = t.vx, vy = t.vy;
    const double max_x = s.width - t.box.w;
    const double max_y = s.height - t.box.h;
    auto reflect = [](double& p, double& v, double hi) {
        if (p < 0.0) {
            p = -p;
            v = -v;
        } else if (p > hi) {
            p = 2.0 * hi - p;
            v = -v;
        }
        p = std::clamp(p, 0.0, hi);
    };
    for (std::size_t f = 0; f < n; ++f) {
        if (f > 0) {
            x += vx;
            y += vy;
            reflect(x, vx, max_x);
            reflect(y, vy, max_y);
        }
        for (const auto& e : t.events) {
            if (e.kind == ScriptEvent::Kind::teleport &&
                f == static_cast<std::size_t>(std::llround(e.t1 * s.fps))) {
                x = e.to_x;
                y = e.to_y;
            }
        }
        tr.boxes[f] = {x, y, t.box.w, t.box.h};
        const double time = static_cast<double>(f) / s.fps;
        for (const auto& e : t.events) {
            if (e.kind == ScriptEvent::Kind::teleport || time < e.t1 || time >= e.t2) continue;
            tr.visible[f] = 0;
            if (e.kind == ScriptEvent::Kind::occlude) tr.occluded[f] = 1;
        }
    }
    return tr;
}

}  // namespace

std::size_t Scenario::frame_count() const { return static_cast<std::size_t>(std::llround(duration * fps)); }

void Scenario::validate() const {
    if (!(duration > 0.0)) throw InvalidInput("scenario duration must be positive");
    if (!(fps > 0.0)) throw InvalidInput("scenario fps must be positive");
    if (width < 1 || height < 1) throw InvalidInput("scenario frame dimensions must be positive");
    if (noise.jitter < 0.0 || noise.miss_prob < 0.0 || noise.miss_prob > 1.0 || noise.spurious_rate < 0.0) {
        throw InvalidInput("scenario noise parameters out of range");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& t = targets[i];
        const std::string who = "target " + std::to_string(i);
        if (t.box.w < 8.0 || t.box.h < 8.0) throw InvalidInput(who + ": box must be at least 8x8 px");
        if (t.box.x < 0.0 || t.box.y < 0.0 || t.box.right() > width || t.box.bottom() > height) {
            throw InvalidInput(who + ": initial box must lie inside the frame");
        }
        if (std::abs(t.vx) >= width - t.box.w + 1.0 || std::abs(t.vy) >= height - t.box.h + 1.0) {
            throw InvalidInput(who + ": velocity exceeds the free travel range");
        }
        double last = -1.0;
        for (const auto& e : t.events) {
            if (e.t1 < last) throw InvalidInput(who + ": events must be time-ordered");
            last = e.t1;
            if (e.kind == ScriptEvent::Kind::teleport) {
                if (e.to_x < 0.0 || e.to_y < 0.0 || e.to_x + t.box.w > width || e.to_y + t.box.h > height) {
                    throw InvalidInput(who + ": teleport destination outside the frame");
                }
            } else if (!(e.t2 > e.t1)) {
                throw InvalidInput(who + ": event interval must have t2 > t1");
            }
        }
    }
}

Scenario parse_scenario(const std::string& text) {
    Scenario s;
    try {
        const json j = json::parse(text);
        s.duration = j.value("duration", s.duration);
        s.fps = j.value("fps", s.fps);
        s.width = j.value("width", s.width);
        s.height = j.value("height", s.height);
        s.background = byte_from(j, "background", s.background);
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            s.noise.jitter = n.value("jitter", 0.0);
            s.noise.miss_prob = n.value("miss_prob", 0.0);
            s.noise.spurious_rate = n.value("spurious_rate", 0.0);
        }
        for (const auto& jt : j.value("targets", json::array())) {
            TargetScript t;
            t.label = jt.value("label", t.label);
            t.box = box_from(jt.at("box"));
            if (jt.contains("velocity")) {
                const auto& v = jt.at("velocity");
                if (!v.is_array() || v.size() != 2) throw InvalidInput("velocity must be [vx, vy]");
                t.vx = v[0].get<double>();
                t.vy = v[1].get<double>();
            }
            t.texture = texture_from(jt.value("texture", std::string("solid")));
            t.intensity = byte_from(jt, "intensity", t.intensity);
            t.texture_seed = jt.value("texture_seed", std::uint64_t{0});
            for (const auto& je : jt.value("events", json::array())) {
                ScriptEvent e;
                const auto type = je.at("type").get<std::string>();
                if (type == "teleport") {
                    e.kind = ScriptEvent::Kind::teleport;
                    e.t1 = je.at("t").get<double>();
                    const auto& to = je.at("to");
                    if (!to.is_array() || to.size() != 2) throw InvalidInput("teleport 'to' must be [x, y]");
                    e.to_x = to[0].get<double>();
                    e.to_y = to[1].get<double>();
                } else if (type == "occlude" || type == "disappear") {
                    e.kind = type == "occlude" ? ScriptEvent::Kind::occlude : ScriptEvent::Kind::disappear;
                    e.t1 = je.at("t1").get<double>();
                    e.t2 = je.at("t2").get<double>();
                } else {
                    throw InvalidInput("unknown event type '" + type + "'");
                }
                t.events.push_back(e);
            }
            s.targets.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("scenario: ") + e.what());
    }
    s.validate();
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open scenario '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

std::string scenario_to_json(const Scenario& s) {
    json j;
    j["duration"] = s.duration;
    j["fps"] = s.fps;
    j["width"] = s.width;
    j["height"] = s.height;
    j["background"] = s.background;
    j["noise"] = {{"jitter", s.noise.jitter}, {"miss_prob", s.noise.miss_prob}, {"spurious_rate", s.noise.spurious_rate}};
    j["targets"] = json::array();
    for (const auto& t : s.targets) {
        json jt{{"label", t.label},
                {"box", {t.box.x, t.box.y, t.box.w, t.box.h}},
                {"velocity", {t.vx, t.vy}},
                {"texture", texture_name(t.texture)},
                {"intensity", t.intensity},
                {"texture_seed", t.texture_seed},
                {"events", json::array()}};
        for (const auto& e : t.events) {
            if (e.kind == ScriptEvent::Kind::teleport) {
                jt["events"].push_back({{"type", "teleport"}, {"t", e.t1}, {"to", {e.to_x, e.to_y}}});
            } else {
                jt["events"].push_back({{"type", e.kind == ScriptEvent::Kind::occlude ? "occlude" : "disappear"},
                                        {"t1", e.t1},
                                        {"t2", e.t2}});
            }
        }
        j["targets"].push_back(std::move(jt));
    }
    return j.dump(2);
}

SynthResult generate(const Scenario& scenario, std::uint64_t seed) {
    scenario.validate();
    const std::size_t n = scenario.frame_count();
    std::vector<Track> tracks;
    SynthResult out;
    for (const auto& t : scenario.targets) {
        Track tr = place(scenario, t, seed);
        BoxTimeline tl(n, scenario.fps);
        for (std::size_t f = 0; f < n; ++f) {
            if (tr.visible[f]) tl.set(f, tr.boxes[f], BoxSource::detected, 1.0);
        }
        out.truth.push_back(std::move(tl));
        tracks.push_back(std::move(tr));
    }
    out.frames = std::make_shared<SynthSeq>(scenario, std::move(tracks));
    auto det = make_detector(scenario, out, seed);
    for (std::size_t f = 0; f < n; ++f) {
        auto list = det.detect_at(static_cast<std::int64_t>(f));
        if (!list.empty()) out.detections[static_cast<std::int64_t>(f)] = std::move(list);
    }
    return out;
}

SyntheticDetector make_detector(const Scenario& scenario, const SynthResult& result, std::uint64_t seed) {
    std::vector<std::string> labels;
    for (const auto& t : scenario.targets) labels.push_back(t.label);
    return SyntheticDetector(result.truth, labels, scenario.noise, derive_seed(seed, kDetectionStream), scenario.width,
                             scenario.height);
}

}  // namespace longtrack
