#include "cascade/param_set.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cascade/ops.hpp"

namespace cascade {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'C', 'P', 'R', 'M', '\0'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t bits;
  if constexpr (sizeof(T) == 8) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw ParseError("parameter file truncated: need " + std::to_string(n) +
                           " bytes",
                       pos_);
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Var& ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) {
    throw ParameterError("duplicate parameter name '" + name + "'");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, Var::leaf(std::move(init)));
  return entries_.back().second;
}

bool ParamSet::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

Var& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

std::vector<std::uint8_t> ParamSet::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, entries_.size());
  for (const auto& [name, v] : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.shape().size()));
    for (std::size_t e : v.shape()) put_le<std::uint64_t>(out, e);
    for (double d : v.value().data()) put_le<double>(out, d);
  }
  return out;
}

ParamSet ParamSet::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ParseError("bad parameter file magic", 0);
  }
  const std::size_t version_at = r.pos();
  const auto version = r.get_le<std::uint32_t>();
  if (version != kFormatVersion) {
    throw ParseError("unsupported parameter file version " +
                         std::to_string(version),
                     version_at);
  }
  const auto count = r.get_le<std::uint64_t>();
  ParamSet params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint32_t>();
    std::string name = r.get_string(name_len);
    const auto rank = r.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get_le<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (double& d : data) d = r.get_le<double>();
    params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw ParseError("trailing bytes after parameters", r.pos());
  return params;
}

void ParamSet::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

ParamSet ParamSet::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ConvLayer ConvLayer::bind(ParamSet& params, const std::string& name,
                          std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::mt19937_64& rng,
                          std::size_t stride) {
  const Shape wshape{out_channels, in_channels, kernel, kernel};
  const Shape bshape{out_channels};
  const std::size_t fan_in = in_channels * kernel * kernel;
  ConvLayer layer;
  const std::string wname = name + ".w", bname = name + ".b";
  if (params.contains(wname)) {
    layer.weight = params.get(wname);
    layer.bias = params.get(bname);
    if (layer.weight.shape() != wshape || layer.bias.shape() != bshape) {
      throw DimensionError("parameter '" + name + "' has shape " +
                           shape_str(layer.weight.shape()) + ", expected " +
                           shape_str(wshape));
    }
  } else {
    layer.weight = params.add(wname, uniform_init(wshape, fan_in, rng));
    layer.bias = params.add(bname, uniform_init(bshape, fan_in, rng));
  }
  layer.stride = stride;
  layer.padding = kernel / 2;
  return layer;
}

Var ConvLayer::operator()(const Var& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

}  // namespace cascade
