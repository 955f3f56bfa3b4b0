#include <cmath>
#include <filesystem>
#include <fstream>

#include "cascade/image_io.hpp"
#include "cascade/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("cascade_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("netpbm round trip within quantization") {
  Tensor gray = cascade::testing::random_tensor({1, 5, 7}, 1, 0.0, 1.0);
  Tensor back = decode_netpbm(encode_netpbm(gray));
  REQUIRE(back.shape() == gray.shape());
  for (std::size_t i = 0; i < gray.numel(); ++i)
    CHECK(std::abs(back[i] - gray[i]) <= 0.5 / 65535.0 + 1e-15);

  Tensor rgb = cascade::testing::random_tensor({3, 2, 3}, 2, 0.0, 1.0);
  CHECK(decode_netpbm(encode_netpbm(rgb)).shape() == rgb.shape());

  Tensor one({1, 1, 1}, 40000.0 / 65535.0);
  CHECK(decode_netpbm(encode_netpbm(one))[0] == one[0]);
}

TEST_CASE("netpbm 8-bit files decode") {
  const std::string txt = "P5\n# comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(txt.begin(), txt.end());
  bytes.push_back(0);
  bytes.push_back(255);
  Tensor t = decode_netpbm(bytes);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == 1.0);
}

TEST_CASE("malformed netpbm reports byte offsets") {
  std::vector<std::uint8_t> bad{'P', '7', '\n'};
  CHECK_THROWS_AS(decode_netpbm(bad), ParseError);

  Tensor gray({1, 4, 4}, 0.5);
  auto bytes = encode_netpbm(gray);
  bytes.resize(bytes.size() - 3);
  try {
    decode_netpbm(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() > 0);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("sequence and manifest round trip") {
  const fs::path dir = scratch("seq");
  SynthSpec spec;
  spec.seed = 3;
  spec.height = 8;
  spec.width = 8;
  VideoSequence seq = synth_sequence(spec);
  const fs::path manifest = write_sequence(dir, seq);
  VideoSequence back = read_sequence(manifest);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 64; ++i)
      CHECK(std::abs(back.frames[k][i] - seq.frames[k][i]) <= 1.0 / 65535.0);
}

TEST_CASE("malformed manifest names the offending line") {
  const fs::path dir = scratch("manifest");
  write_frame(dir / "a.pgm", Tensor({1, 2, 2}, 0.1));
  {
    std::ofstream f(dir / "bad.txt");
    f << "# frames\na.pgm\nmissing.pgm\n";
  }
  try {
    read_manifest(dir / "bad.txt");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 3);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  {
    std::ofstream f(dir / "ext.txt");
    f << "a.pgm\nnotes.doc\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "ext.txt"), ParseError);
}

TEST_CASE("synth_sequence: static, shift oracle, determinism, errors") {
  SynthSpec spec;
  spec.seed = 11;
  VideoSequence still = synth_sequence(spec);
  CHECK(still.frames[0].vec() == still.frames[2].vec());

  spec.texture = Texture::Gradient;
  spec.motion = {1.0, 0.0};
  VideoSequence moving = synth_sequence(spec);
  const Tensor& f0 = moving.frames[0];
  const Tensor& f1 = moving.frames[1];
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 1; x < 32; ++x)
      CHECK(f1[y * 32 + x] == doctest::Approx(f0[y * 32 + x - 1]).epsilon(1e-12));

  CHECK(synth_sequence(spec).frames[2].vec() == moving.frames[2].vec());

  spec.motion = {32.0, 0.0};
  CHECK_THROWS_AS(synth_sequence(spec), ParameterError);
  spec.motion = {0.0, 0.0};
  spec.n_frames = 2;
  CHECK_THROWS_AS(synth_sequence(spec), ParameterError);
  CHECK(parse_texture("checker") == Texture::Checker);
  CHECK_THROWS_AS(parse_texture("plaid"), ParameterError);
}

TEST_CASE("add_noise statistics") {
  VideoSequence flat;
  flat.frames.push_back(Tensor({1, 128, 128}, 0.5));
  CHECK(add_noise(flat, GaussianNoise{0.0}, 1).frames[0].vec() == flat.frames[0].vec());

  VideoSequence noisy = add_noise(flat, GaussianNoise{0.1}, 2);
  double mean = 0.0, var = 0.0;
  const Tensor& f = noisy.frames[0];
  for (double v : f.data()) mean += v - 0.5;
  mean /= f.numel();
  for (double v : f.data()) var += (v - 0.5 - mean) * (v - 0.5 - mean);
  const double sd = std::sqrt(var / (f.numel() - 1));
  CHECK(std::abs(sd - 0.1) < 0.01);
  CHECK(std::abs(mean) < 3.0 * 0.1 / 128.0);
  CHECK(add_noise(flat, GaussianNoise{0.1}, 2).frames[0].vec() == f.vec());
  REQUIRE(noisy.noise_level.has_value());
  CHECK((*noisy.noise_level)[0] == 0.1);

  VideoSequence pg = add_noise(flat, PoissonGaussianNoise{0.01, 0.0001}, 3);
  for (double v : pg.frames[0].data()) CHECK((v >= 0.0 && v <= 1.0));

  Tensor map({128, 128}, 0.0);
  for (std::size_t i = 0; i < 64 * 128; ++i) map[i] = 0.2;
  VideoSequence mixed = add_noise(flat, SigmaMapNoise{map}, 4);
  CHECK(mixed.frames[0][64 * 128 + 5] == 0.5);
  CHECK(mixed.frames[0][5] != 0.5);
  CHECK_THROWS_AS(add_noise(flat, GaussianNoise{-1.0}, 0), ParameterError);
}
