#include "cascade/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace cascade {

namespace {

// Netpbm header tokens are whitespace separated; '#' starts a comment that
// runs to the end of the line.
class HeaderScanner {
 public:
  explicit HeaderScanner(const std::vector<std::uint8_t>& b) : b_(b) {}

  void skip_space() {
    while (pos < b_.size()) {
      if (b_[pos] == '#') {
        while (pos < b_.size() && b_[pos] != '\n') ++pos;
      } else if (std::isspace(b_[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < b_.size() && std::isdigit(b_[pos])) {
      v = v * 10 + (b_[pos] - '0');
      if (v > 1u << 30) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) {
      throw ParseError(std::string("expected ") + what, start);
    }
    return v;
  }

  std::size_t pos = 0;

 private:
  const std::vector<std::uint8_t>& b_;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("not a binary PGM/PPM (expected magic P5 or P6)", 0);
  }
  const std::size_t C = bytes[1] == '5' ? 1 : 3;
  HeaderScanner s(bytes);
  s.pos = 2;
  const std::size_t W = s.number("width");
  const std::size_t H = s.number("height");
  const std::size_t maxval_at = s.pos;
  const std::size_t maxval = s.number("maxval");
  if (W == 0 || H == 0) throw ParseError("zero image extent", maxval_at);
  if (maxval == 0 || maxval > 65535) {
    throw ParseError("maxval must be in [1, 65535]", maxval_at);
  }
  if (s.pos >= bytes.size() || !std::isspace(bytes[s.pos])) {
    throw ParseError("missing whitespace after maxval", s.pos);
  }
  const std::size_t data_at = s.pos + 1;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = C * H * W * bps;
  if (bytes.size() < data_at + need) {
    throw ParseError("truncated pixel data: need " + std::to_string(need) +
                         " bytes, have " + std::to_string(bytes.size() - data_at),
                     bytes.size());
  }
  Tensor frame({C, H, W});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t at = data_at + ((y * W + x) * C + c) * bps;
        std::size_t v = bytes[at];
        if (bps == 2) v = (v << 8) | bytes[at + 1];
        if (v > maxval) throw ParseError("sample exceeds maxval", at);
        frame[(c * H + y) * W + x] = static_cast<double>(v) * scale;
      }
    }
  }
  return frame;
}

std::vector<std::uint8_t> encode_netpbm(const Tensor& frame) {
  if (frame.rank() != 3 || (frame.dim(0) != 1 && frame.dim(0) != 3)) {
    throw DimensionError("encode_netpbm: frame must be [1|3,H,W], got " +
                         shape_str(frame.shape()));
  }
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  std::string header = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " +
                       std::to_string(H) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + C * H * W * 2);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp(frame[(c * H + y) * W + x], 0.0, 1.0);
        const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
      }
    }
  }
  return out;
}

Tensor read_frame(const std::filesystem::path& path) {
  return decode_netpbm(slurp(path));
}

void write_frame(const std::filesystem::path& path, const Tensor& frame) {
  const auto bytes = encode_netpbm(frame);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::filesystem::path> read_manifest(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<std::filesystem::path> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t");
    const std::string entry = line.substr(first, last - first + 1);
    const auto where = path.string() + ":" + std::to_string(lineno) + ": '" +
                       entry + "'";
    for (unsigned char ch : entry) {
      if (std::iscntrl(ch)) {
        throw ParseError(where + ": control character in frame path", lineno);
      }
    }
    std::filesystem::path p(entry);
    const auto ext = p.extension().string();
    if (ext != ".pgm" && ext != ".ppm") {
      throw ParseError(where + ": frame path must end in .pgm or .ppm", lineno);
    }
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::is_regular_file(p)) {
      throw ParseError(where + ": frame file not found", lineno);
    }
    frames.push_back(p);
  }
  return frames;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::filesystem::path>& frames) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& p : frames) f << p.generic_string() << '\n';
}

VideoSequence read_sequence(const std::filesystem::path& manifest) {
  VideoSequence seq;
  for (const auto& p : read_manifest(manifest)) {
    Tensor frame = read_frame(p);
    if (!seq.frames.empty() && frame.shape() != seq.frames[0].shape()) {
      throw DimensionError("frame " + p.string() + " has shape " +
                           shape_str(frame.shape()) + ", expected " +
                           shape_str(seq.frames[0].shape()));
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

std::filesystem::path write_sequence(const std::filesystem::path& dir,
                                     const VideoSequence& seq,
                                     const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> names;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04zu", i);
    const std::string ext = seq.frames[i].dim(0) == 1 ? ".pgm" : ".ppm";
    std::filesystem::path name = prefix + buf + ext;
    write_frame(dir / name, seq.frames[i]);
    names.push_back(name);
  }
  const auto manifest = dir / "manifest.txt";
  write_manifest(manifest, names);
  return manifest;
}

}  // namespace cascade
