#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

/// Ordered frames, each [C,H,W] with values in [0,1].
struct VideoSequence {
  std::vector<Tensor> frames;
  double frame_rate = 25.0;
  /// Per-frame noise standard deviation when known.
  std::optional<std::vector<double>> noise_level;

  std::size_t size() const { return frames.size(); }
  std::size_t channels() const { return frames.at(0).dim(0); }
  std::size_t height() const { return frames.at(0).dim(1); }
  std::size_t width() const { return frames.at(0).dim(2); }
};

/// Parses binary Netpbm P5 (gray) / P6 (RGB). Maxval up to 65535; samples
/// above 8 bits are big-endian. Malformed input throws ParseError carrying the
/// byte offset.
Tensor decode_netpbm(const std::vector<std::uint8_t>& bytes);

/// Encodes [C,H,W] (C = 1 or 3) as 16-bit P5/P6. Values are clamped to [0,1]
/// and quantized to round(v * 65535).
std::vector<std::uint8_t> encode_netpbm(const Tensor& frame);

Tensor read_frame(const std::filesystem::path& path);
void write_frame(const std::filesystem::path& path, const Tensor& frame);

/// A manifest is a text file with one frame path per line, relative paths
/// resolved against the manifest's directory. Blank lines and lines starting
/// with '#' are ignored. Problems throw ParseError whose offset is the 1-based
/// line number and whose message names that line.
std::vector<std::filesystem::path> read_manifest(
    const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::filesystem::path>& frames);

VideoSequence read_sequence(const std::filesystem::path& manifest);

/// Writes `prefix_0000.pgm` ... into `dir` plus `dir/manifest.txt`.
std::filesystem::path write_sequence(const std::filesystem::path& dir,
                                     const VideoSequence& seq,
                                     const std::string& prefix = "frame");

}  // namespace cascade
