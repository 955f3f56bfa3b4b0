#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

/// Named trainable tensors in insertion order.
///
/// Binary layout (all integers and floats little-endian):
///   "CASCPRM\0"  u32 version  u64 count
///   per parameter: u32 name_len, name bytes, u32 rank, u64 extents[rank],
///                  f64 data[numel]
class ParamSet {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  /// Registers a new parameter; duplicate names throw ParameterError.
  Var& add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const;
  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

  std::vector<std::uint8_t> serialize() const;
  static ParamSet deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static ParamSet load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform in +-sqrt(1/fan_in).
Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// A convolution's weight and bias bound to a ParamSet.
struct ConvLayer {
  Var weight;
  Var bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Binds `name.w` / `name.b`, creating them from `rng` when absent. An
  /// existing parameter with a different shape throws DimensionError.
  static ConvLayer bind(ParamSet& params, const std::string& name,
                        std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel, std::mt19937_64& rng,
                        std::size_t stride = 1);

  Var operator()(const Var& x) const;
};

}  // namespace cascade
