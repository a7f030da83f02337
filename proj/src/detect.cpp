#include "longtrack/detect.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "longtrack/rng.hpp"

namespace longtrack {

namespace {

constexpr const char* kHeader = "frame,label,score,x,y,w,h";
constexpr const char* kTimelineHeader = "frame,label,score,x,y,w,h,source";

struct Row {
    Detection det;
    std::optional<BoxSource> source;
};

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

double parse_real(std::string_view s, std::size_t line, const char* field) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw ParseError(line, std::string("bad ") + field + " '" + std::string(s) + "'");
    }
    return v;
}

std::int64_t parse_int(std::string_view s, std::size_t line, const char* field) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line, std::string("bad ") + field + " '" + std::string(s) + "'");
    }
    return v;
}

std::vector<Row> parse_rows(std::istream& in) {
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    bool with_source = false;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header_seen) {
            if (line == kHeader) {
                with_source = false;
            } else if (line == kTimelineHeader) {
                with_source = true;
            } else {
                throw ParseError(lineno, std::string("expected header '") + kHeader + "'");
            }
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto f = split(line, ',');
        const std::size_t want = with_source ? 8 : 7;
        if (f.size() != want) {
            throw ParseError(lineno, "expected " + std::to_string(want) + " fields, got " + std::to_string(f.size()));
        }
        Row row;
        row.det.frame = parse_int(f[0], lineno, "frame");
        if (row.det.frame < 0) throw ParseError(lineno, "negative frame index");
        row.det.label = std::string(f[1]);
        row.det.score = parse_real(f[2], lineno, "score");
        if (row.det.score < 0.0 || row.det.score > 1.0) throw ParseError(lineno, "score outside [0,1]");
        row.det.box = {parse_real(f[3], lineno, "x"), parse_real(f[4], lineno, "y"), parse_real(f[5], lineno, "w"),
                       parse_real(f[6], lineno, "h")};
        if (!row.det.box.valid()) throw ParseError(lineno, "box width and height must be positive");
        if (with_source) {
            try {
                row.source = box_source_from_string(std::string(f[7]));
            } catch (const InvalidInput& e) {
                throw ParseError(lineno, e.what());
            }
        }
        rows.push_back(std::move(row));
    }
    if (!header_seen) {
        throw ParseError(1, "empty file, missing header");
    }
    return rows;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
    return out;
}

void write_row(std::ostream& out, const Detection& d, const char* source) {
    if (d.label.find_first_of(",\n\r") != std::string::npos) {
        throw InvalidInput("label '" + d.label + "' contains a separator");
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%s,%.6f,%.6f,%.6f,%.6f,%.6f", static_cast<long long>(d.frame),
                  d.label.c_str(), d.score, d.box.x, d.box.y, d.box.w, d.box.h);
    out << buf;
    if (source) out << ',' << source;
    out << '\n';
}

std::string json_label(const nlohmann::json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }

}  // namespace

DetectionMap parse_detections(std::istream& in) {
    DetectionMap out;
    for (auto& row : parse_rows(in)) {
        out[row.det.frame].push_back(std::move(row.det));
    }
    return out;
}

DetectionMap load_detections(const std::filesystem::path& path) {
    auto in = open_in(path);
    return parse_detections(in);
}

void write_detections(std::ostream& out, const DetectionMap& dets) {
    out << kHeader << '\n';
    for (const auto& [frame, list] : dets) {
        for (const auto& d : list) write_row(out, d, nullptr);
    }
}

void save_detections(const std::filesystem::path& path, const DetectionMap& dets) {
    auto out = open_out(path);
    write_detections(out, dets);
}

DetectionMap group_by_frame(const std::vector<Detection>& dets) {
    DetectionMap out;
    for (const auto& d : dets) out[d.frame].push_back(d);
    return out;
}

std::vector<Detection> flatten(const DetectionMap& dets) {
    std::vector<Detection> out;
    for (const auto& [frame, list] : dets) out.insert(out.end(), list.begin(), list.end());
    return out;
}

void write_timeline(std::ostream& out, const BoxTimeline& timeline, const std::string& label) {
    out << kTimelineHeader << '\n';
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        const auto& e = timeline[i];
        if (!e.box) continue;
        write_row(out, Detection{*e.box, e.score, label, static_cast<std::int64_t>(i)}, to_string(e.source));
    }
}

void save_timeline(const std::filesystem::path& path, const BoxTimeline& timeline, const std::string& label) {
    auto out = open_out(path);
    write_timeline(out, timeline, label);
}

BoxTimeline timeline_from_detections(const DetectionMap& dets, std::size_t frames, double fps,
                                     const std::string& label) {
    BoxTimeline tl(frames, fps);
    for (const auto& [frame, list] : dets) {
        if (frame < 0 || static_cast<std::size_t>(frame) >= frames) continue;
        const Detection* best = nullptr;
        for (const auto& d : list) {
            if (!label.empty() && d.label != label) continue;
            if (!best || d.score > best->score) best = &d;
        }
        if (best) tl.set(static_cast<std::size_t>(frame), best->box, BoxSource::detected, best->score);
    }
    return tl;
}

BoxTimeline load_timeline(const std::filesystem::path& path, std::size_t frames, double fps, const std::string& label) {
    auto in = open_in(path);
    BoxTimeline tl(frames, fps);
    for (const auto& row : parse_rows(in)) {
        const auto& d = row.det;
        if (static_cast<std::size_t>(d.frame) >= frames) continue;
        if (!label.empty() && d.label != label) continue;
        const auto& cur = tl[static_cast<std::size_t>(d.frame)];
        if (cur.box && cur.score >= d.score) continue;
        tl.set(static_cast<std::size_t>(d.frame), d.box, row.source.value_or(BoxSource::detected), d.score);
    }
    return tl;
}

CocoSet load_coco(const std::filesystem::path& path) {
    auto in = open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("'" + path.string() + "': " + e.what());
    }
    CocoSet set;
    try {
        for (const auto& im : j.value("images", nlohmann::json::array())) {
            set.images.push_back({im.at("id").get<std::int64_t>(), im.value("file_name", std::string{}),
                                  im.value("width", 0), im.value("height", 0)});
        }
        for (const auto& a : j.value("annotations", nlohmann::json::array())) {
            const auto& bb = a.at("bbox");
            if (!bb.is_array() || bb.size() != 4) throw InvalidInput("annotation bbox must have 4 numbers");
            Detection d;
            d.frame = a.at("image_id").get<std::int64_t>();
            d.box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
            d.label = json_label(a.at("category_id"));
            d.score = a.value("score", 1.0);
            if (!d.box.valid()) throw InvalidInput("annotation bbox must have positive size");
            if (d.score < 0.0 || d.score > 1.0) throw InvalidInput("annotation score outside [0,1]");
            set.annotations[d.frame].push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("'" + path.string() + "': " + e.what());
    }
    return set;
}

// --- detectors ---------------------------------------------------------------

std::vector<Detection> FileDetector::detect_at(std::int64_t frame) {
    const auto it = dets_.find(frame);
    return it == dets_.end() ? std::vector<Detection>{} : it->second;
}

SyntheticDetector::SyntheticDetector(std::vector<BoxTimeline> truth, std::vector<std::string> labels,
                                     NoiseModel noise, std::uint64_t seed, int width, int height)
    : truth_(std::move(truth)), labels_(std::move(labels)), noise_(noise), seed_(seed), width_(width), height_(height) {
    if (truth_.size() != labels_.size()) {
        throw InvalidInput("one label per ground-truth track is required");
    }
    for (const auto& t : truth_) {
        if (t.size() != frame_count()) throw InvalidInput("ground-truth tracks differ in length");
    }
    if (noise_.jitter < 0.0 || noise_.miss_prob < 0.0 || noise_.miss_prob > 1.0 || noise_.spurious_rate < 0.0) {
        throw InvalidInput("noise parameters out of range");
    }
}

std::vector<Detection> SyntheticDetector::detect_at(std::int64_t frame) {
    if (frame < 0 || static_cast<std::size_t>(frame) >= frame_count()) {
        throw InvalidInput("frame " + std::to_string(frame) + " outside the synthetic sequence");
    }
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(frame)));
    std::vector<Detection> out;
    std::optional<BBox> size_hint;
    for (std::size_t t = 0; t < truth_.size(); ++t) {
        const auto& e = truth_[t][static_cast<std::size_t>(frame)];
        // Fixed draw count per track keeps the stream aligned across configs.
        const bool missed = rng.bernoulli(noise_.miss_prob);
        const double dx = rng.uniform(-noise_.jitter, noise_.jitter);
        const double dy = rng.uniform(-noise_.jitter, noise_.jitter);
        if (!e.box) continue;
        if (!size_hint) size_hint = e.box;
        if (missed) continue;
        BBox b = *e.box;
        b.x += dx;
        b.y += dy;
        const auto c = clip(b, width_, height_);
        if (!c) continue;
        const double score = noise_.jitter > 0.0 ? 1.0 - 0.25 * (std::abs(dx) + std::abs(dy)) / (2.0 * noise_.jitter) : 1.0;
        out.push_back({*c, score, labels_[t], frame});
    }
    if (noise_.spurious_rate > 0.0 && !labels_.empty()) {
        const double whole = std::floor(noise_.spurious_rate);
        const int n = static_cast<int>(whole) + (rng.bernoulli(noise_.spurious_rate - whole) ? 1 : 0);
        const double w = size_hint ? size_hint->w : 0.1 * width_;
        const double h = size_hint ? size_hint->h : 0.1 * height_;
        for (int k = 0; k < n; ++k) {
            const BBox b{rng.uniform(0.0, std::max(0.0, width_ - w)), rng.uniform(0.0, std::max(0.0, height_ - h)), w, h};
            const double score = rng.uniform(0.3, 0.7);
            if (const auto c = clip(b, width_, height_)) out.push_back({*c, score, labels_.front(), frame});
        }
    }
    return out;
}

SubprocessDetector::SubprocessDetector(std::vector<std::string> argv, PathFn image_path,
                                       std::chrono::milliseconds timeout)
    : image_path_(std::move(image_path)), timeout_(timeout) {
    if (argv.empty()) throw InvalidInput("detector command is empty");
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
        throw DetectorUnavailable(std::string("socketpair: ") + std::strerror(errno));
    }
    std::vector<char*> cargv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(sv[0]);
        ::close(sv[1]);
        throw DetectorUnavailable(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::dup2(sv[1], STDIN_FILENO);
        ::dup2(sv[1], STDOUT_FILENO);
        ::execvp(cargv[0], cargv.data());
        ::_exit(127);
    }
    ::close(sv[1]);
    fd_ = sv[0];
    pid_ = pid;
}

SubprocessDetector::~SubprocessDetector() { shutdown(); }

void SubprocessDetector::shutdown() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
    if (pid_ > 0) {
        ::kill(pid_, SIGTERM);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

std::string SubprocessDetector::read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + timeout_;
    while (true) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
        if (left.count() <= 0) throw DetectorUnavailable("detector timed out");
        pollfd p{fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) throw DetectorUnavailable(std::string("poll: ") + std::strerror(errno));
        if (rc == 0) throw DetectorUnavailable("detector timed out");
        char buf[4096];
        const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw DetectorUnavailable("detector closed its output");
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

std::vector<Detection> SubprocessDetector::detect_at(std::int64_t frame) {
    std::lock_guard lock(mutex_);
    if (fd_ < 0) throw DetectorUnavailable("detector process is not running");
    try {
        const std::string req = nlohmann::json{{"frame", frame}, {"image_path", image_path_(frame)}}.dump() + "\n";
        std::size_t sent = 0;
        while (sent < req.size()) {
            const ssize_t n = ::send(fd_, req.data() + sent, req.size() - sent, MSG_NOSIGNAL);
            if (n < 0 && errno == EINTR) continue;
            if (n < 0) throw DetectorUnavailable(std::string("detector write failed: ") + std::strerror(errno));
            sent += static_cast<std::size_t>(n);
        }
        const std::string line = read_line();
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(line);
            if (reply.at("frame").get<std::int64_t>() != frame) {
                throw DetectorUnavailable("detector replied for the wrong frame");
            }
            std::vector<Detection> out;
            for (const auto& d : reply.at("detections")) {
                const auto& bb = d.at("box");
                if (!bb.is_array() || bb.size() != 4) throw DetectorUnavailable("detector box must have 4 numbers");
                Detection det{{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()},
                              d.at("score").get<double>(), json_label(d.at("label")), frame};
                if (det.score < 0.0 || det.score > 1.0 || !det.box.valid()) {
                    throw DetectorUnavailable("detector reply out of range");
                }
                out.push_back(std::move(det));
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw DetectorUnavailable(std::string("malformed detector reply: ") + e.what());
        }
    } catch (const DetectorUnavailable&) {
        shutdown();
        throw;
    }
}

}  // namespace longtrack
