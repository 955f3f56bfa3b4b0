#include "cascade/dataset.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace cascade {

std::vector<Texture> parse_textures(const std::string& list) {
  std::vector<Texture> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out.push_back(parse_texture(item));
  }
  if (out.empty()) throw ParameterError("empty texture list");
  return out;
}

DataSpec DataSpec::from(const KeyValueConfig& kv) {
  DataSpec d;
  d.channels = kv.get_size("model_channels", d.channels);
  d.patch = kv.get_size("data_patch", d.patch);
  d.margin = kv.get_size("data_margin", d.margin);
  d.sigmas = kv.get_doubles("data_sigmas", d.sigmas);
  d.max_motion = kv.get_double("data_max_motion", d.max_motion);
  d.integer_motion = kv.get_bool("data_integer_motion", d.integer_motion);
  d.search_radius = kv.get_size("data_search_radius", d.search_radius);
  if (kv.has("data_textures")) d.textures = parse_textures(kv.get_string("data_textures", ""));
  return d;
}

const std::set<std::string>& DataSpec::keys() {
  static const std::set<std::string> k{"data_patch",      "data_margin",
                                       "data_sigmas",     "data_max_motion",
                                       "data_integer_motion", "data_search_radius",
                                       "data_textures"};
  return k;
}

Sample make_sample(const DataSpec& spec, std::uint64_t seed) {
  if (spec.sigmas.empty() || spec.textures.empty()) {
    throw ParameterError("DataSpec: no noise levels or textures");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-spec.max_motion, spec.max_motion);
  Sample s;
  for (double& m : s.motion) {
    m = uni(rng);
    if (spec.integer_motion) m = std::round(m);
  }
  s.texture = spec.textures[rng() % spec.textures.size()];
  s.sigma = spec.sigmas[rng() % spec.sigmas.size()];
  SynthSpec synth;
  synth.seed = rng();
  synth.height = synth.width = spec.frame_size();
  synth.channels = spec.channels;
  synth.motion = s.motion;
  synth.texture = s.texture;
  s.clean = synth_sequence(synth);
  s.noisy = add_noise(s.clean, GaussianNoise{s.sigma}, rng());
  return s;
}

Tensor clean_patch(const Sample& sample, const DataSpec& spec, PixelPos origin) {
  const Tensor& f = sample.clean.frames[1];
  const std::size_t C = f.dim(0), H = f.dim(1), W = f.dim(2), p = spec.patch;
  Tensor out({1, C, p, p});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x)
        out[(c * p + y) * p + x] = f[(c * H + origin.y + y) * W + origin.x + x];
  return out;
}

}  // namespace cascade
