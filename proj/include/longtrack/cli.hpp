// cli.hpp: frame ingestion and the command-line entry point.
//
// A frame directory holds zero-padded numbered frames (000000.pgm, ...) in
// PGM or PNG plus a meta file; a raw-luma file holds frames back to back,
// one byte per pixel, row-major. The meta file is flat key=value text:
//
//   fps=30
//   width=858
//   height=480
//   frames=1800      (optional for directories)
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "longtrack/core.hpp"

namespace longtrack {

struct FrameMeta {
    double fps = 30.0;
    int width = 0;
    int height = 0;
    std::optional<std::size_t> frames;
};

/// Throws UsageError when the file is missing, InvalidInput when malformed.
FrameMeta load_meta(const std::filesystem::path& path);
void save_meta(const std::filesystem::path& path, const FrameMeta& meta);

/// Lazily decoded frames. Every frame's header is checked at open; a size
/// mismatch raises InvalidInput naming the frame index.
class FrameSource : public FrameSeq {
public:
    /// Image file of frame i, or empty for raw-luma input.
    virtual std::filesystem::path frame_path(std::size_t index) const = 0;
};

/// `path` is a frame directory or a raw-luma file. The meta file defaults to
/// `<dir>/meta.txt` for directories and `<file>.meta` for raw files.
std::shared_ptr<const FrameSource> ingest_frames(const std::filesystem::path& path,
                                                 const std::optional<std::filesystem::path>& meta = std::nullopt);

/// Writes `000000.<ext>`... plus meta.txt; `ext` is "pgm" or "png".
void write_frames(const FrameSeq& seq, const std::filesystem::path& dir, const std::string& ext = "pgm");

/// Runs one subcommand. Exit status: 0 success, 1 domain error, 2 usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace longtrack
