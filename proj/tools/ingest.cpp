#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>

#include "longtrack/cli.hpp"

namespace longtrack {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& text, const fs::path& path, std::size_t line) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw InvalidInput(path.string() + ":" + std::to_string(line) + ": bad number '" + text + "'");
    }
    return v;
}

struct Dims {
    int width = 0;
    int height = 0;
};

Dims pgm_dims(std::ifstream& in, const fs::path& path) {
    auto token = [&] {
        std::string t;
        char c = 0;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(c);
        }
        return t;
    };
    if (token() != "P5") throw InvalidInput(path.string() + ": not a binary PGM");
    const std::string w = token(), h = token();
    int wi = 0, hi = 0;
    std::from_chars(w.data(), w.data() + w.size(), wi);
    std::from_chars(h.data(), h.data() + h.size(), hi);
    return {wi, hi};
}

Dims png_dims(std::ifstream& in, const fs::path& path) {
    std::array<unsigned char, 24> b{};
    in.read(reinterpret_cast<char*>(b.data()), b.size());
    static constexpr std::array<unsigned char, 8> sig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (in.gcount() != 24 || !std::equal(sig.begin(), sig.end(), b.begin()) || std::string(&b[12], &b[16]) != "IHDR") {
        throw InvalidInput(path.string() + ": not a PNG");
    }
    auto be32 = [&](int o) {
        return static_cast<int>((static_cast<unsigned>(b[o]) << 24) | (static_cast<unsigned>(b[o + 1]) << 16) |
                                (static_cast<unsigned>(b[o + 2]) << 8) | b[o + 3]);
    };
    return {be32(16), be32(20)};
}

Dims image_dims(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    return path.extension() == ".png" ? png_dims(in, path) : pgm_dims(in, path);
}

class DirectorySource final : public FrameSource {
public:
    DirectorySource(std::vector<fs::path> files, const FrameMeta& meta) : files_(std::move(files)), meta_(meta) {
        for (std::size_t i = 0; i < files_.size(); ++i) {
            const Dims d = image_dims(files_[i]);
            if (d.width != meta_.width || d.height != meta_.height) {
                throw InvalidInput("frame " + std::to_string(i) + " (" + files_[i].filename().string() + ") is " +
                                   std::to_string(d.width) + "x" + std::to_string(d.height) + ", expected " +
                                   std::to_string(meta_.width) + "x" + std::to_string(meta_.height));
            }
        }
    }

    std::size_t size() const override { return files_.size(); }
    double fps() const override { return meta_.fps; }
    int width() const override { return meta_.width; }
    int height() const override { return meta_.height; }
    fs::path frame_path(std::size_t index) const override { return files_.at(index); }

    FrameGray frame(std::size_t index) const override {
        const cv::Mat m = cv::imread(files_.at(index).string(), cv::IMREAD_GRAYSCALE);
        if (m.empty()) throw InvalidInput("cannot decode frame " + std::to_string(index));
        if (m.cols != meta_.width || m.rows != meta_.height) {
            throw InvalidInput("frame " + std::to_string(index) + " has unexpected dimensions");
        }
        return FrameGray::from_mat(m);
    }

private:
    std::vector<fs::path> files_;
    FrameMeta meta_;
};

class RawSource final : public FrameSource {
public:
    RawSource(fs::path path, const FrameMeta& meta) : path_(std::move(path)), meta_(meta) {
        const auto bytes = fs::file_size(path_);
        const auto per = static_cast<std::uintmax_t>(meta_.width) * static_cast<std::uintmax_t>(meta_.height);
        if (meta_.frames) {
            if (bytes != *meta_.frames * per) {
                throw InvalidInput(path_.string() + ": " + std::to_string(bytes) + " bytes, expected " +
                                   std::to_string(*meta_.frames) + " x " + std::to_string(meta_.width) + " x " +
                                   std::to_string(meta_.height));
            }
            count_ = *meta_.frames;
        } else {
            if (bytes % per != 0) {
                throw InvalidInput(path_.string() + ": byte length is not a multiple of the frame size");
            }
            count_ = static_cast<std::size_t>(bytes / per);
        }
    }

    std::size_t size() const override { return count_; }
    double fps() const override { return meta_.fps; }
    int width() const override { return meta_.width; }
    int height() const override { return meta_.height; }
    fs::path frame_path(std::size_t) const override { return {}; }

    FrameGray frame(std::size_t index) const override {
        if (index >= count_) throw InvalidInput("frame index out of range");
        const auto per = static_cast<std::size_t>(meta_.width) * static_cast<std::size_t>(meta_.height);
        std::vector<std::uint8_t> data(per);
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(index * per));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(per));
        if (in.gcount() != static_cast<std::streamsize>(per)) throw InvalidInput("short read in " + path_.string());
        return FrameGray(meta_.width, meta_.height, std::move(data));
    }

private:
    fs::path path_;
    FrameMeta meta_;
    std::size_t count_ = 0;
};

}  // namespace

FrameMeta load_meta(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("missing meta file " + path.string());
    FrameMeta m;
    bool fps = false, width = false, height = false;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidInput(path.string() + ":" + std::to_string(n) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "fps") {
            m.fps = parse_number<double>(value, path, n);
            fps = true;
        } else if (key == "width") {
            m.width = parse_number<int>(value, path, n);
            width = true;
        } else if (key == "height") {
            m.height = parse_number<int>(value, path, n);
            height = true;
        } else if (key == "frames") {
            m.frames = parse_number<std::size_t>(value, path, n);
        } else {
            throw InvalidInput(path.string() + ":" + std::to_string(n) + ": unknown key '" + key + "'");
        }
    }
    if (!fps || !width || !height) throw InvalidInput(path.string() + ": fps, width and height are required");
    if (!std::isfinite(m.fps) || m.fps <= 0.0 || m.width <= 0 || m.height <= 0) {
        throw InvalidInput(path.string() + ": fps, width and height must be positive");
    }
    return m;
}

void save_meta(const fs::path& path, const FrameMeta& meta) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    char fps[64];
    const auto res = std::to_chars(fps, fps + sizeof fps, meta.fps);
    out << "fps=" << std::string(fps, res.ptr) << "\nwidth=" << meta.width << "\nheight=" << meta.height << '\n';
    if (meta.frames) out << "frames=" << *meta.frames << '\n';
}

std::shared_ptr<const FrameSource> ingest_frames(const fs::path& path, const std::optional<fs::path>& meta_path) {
    if (!fs::exists(path)) throw UsageError("no such frame source " + path.string());
    if (fs::is_directory(path)) {
        const FrameMeta meta = load_meta(meta_path.value_or(path / "meta.txt"));
        std::map<unsigned long long, fs::path> numbered;
        for (const auto& entry : fs::directory_iterator(path)) {
            const auto& p = entry.path();
            const std::string ext = p.extension().string();
            const std::string stem = p.stem().string();
            if ((ext != ".pgm" && ext != ".png") || stem.empty() ||
                !std::all_of(stem.begin(), stem.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
                continue;
            }
            const auto idx = std::stoull(stem);
            if (!numbered.emplace(idx, p).second) throw InvalidInput("duplicate frame number " + stem);
        }
        if (numbered.empty()) throw InvalidInput(path.string() + " holds no numbered PGM/PNG frames");
        std::vector<fs::path> files;
        for (auto& [idx, p] : numbered) files.push_back(p);
        if (meta.frames && *meta.frames != files.size()) {
            throw InvalidInput("meta says " + std::to_string(*meta.frames) + " frames, directory has " +
                               std::to_string(files.size()));
        }
        return std::make_shared<DirectorySource>(std::move(files), meta);
    }
    const FrameMeta meta = load_meta(meta_path.value_or(fs::path(path.string() + ".meta")));
    return std::make_shared<RawSource>(path, meta);
}

void write_frames(const FrameSeq& seq, const fs::path& dir, const std::string& ext) {
    if (ext != "pgm" && ext != "png") throw UsageError("frame format must be pgm or png");
    fs::create_directories(dir);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.%s", i, ext.c_str());
        const FrameGray f = seq.frame(i);
        if (!cv::imwrite((dir / name).string(), f.view())) throw InvalidInput("cannot write " + (dir / name).string());
    }
    save_meta(dir / "meta.txt", {seq.fps(), seq.width(), seq.height(), seq.size()});
}

}  // namespace longtrack
