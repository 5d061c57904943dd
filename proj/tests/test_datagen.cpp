#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fondue/datagen.hpp"
#include "fondue/errors.hpp"
#include "fondue/ide.hpp"

using namespace fondue;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << bytes;
}

fs::path scratch_dir() {
  const auto d = fs::temp_directory_path() / "fondue_test_datagen";
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("noiseless hyperplane has exact rank d") {
  for (int d : {1, 3, 7}) {
    Rng rng(static_cast<std::uint64_t>(d));
    const auto ds = gen_hyperplane(500, d, 12, 0.0, rng);
    CHECK(ds.data.rows() == 500);
    CHECK(ds.data.cols() == 12);
    CHECK(ds.meta.true_id == d);
    Eigen::JacobiSVD<Matrix> svd(ds.data);
    const auto& s = svd.singularValues();
    CHECK(s(d) < 1e-8 * s(0));
    CHECK(s(d - 1) > 1e-3 * s(0));
  }
  Rng rng(0);
  const auto full = gen_hyperplane(200, 6, 6, 0.0, rng);
  Eigen::JacobiSVD<Matrix> svd(full.data);
  CHECK(svd.singularValues()(5) > 1e-3 * svd.singularValues()(0));
}

TEST_CASE("noisy hyperplane has no true id") {
  Rng rng(1);
  const auto ds = gen_hyperplane(100, 2, 5, 0.1, rng);
  CHECK_FALSE(ds.meta.true_id.has_value());
}

TEST_CASE("generators are deterministic and finite") {
  for (std::uint64_t seed : {0u, 7u}) {
    Rng a(seed), b(seed);
    CHECK(gen_hyperplane(300, 4, 9, 0.05, a).data == gen_hyperplane(300, 4, 9, 0.05, b).data);
    CHECK(gen_nonlinear_manifold(300, 2, 12, a).data == gen_nonlinear_manifold(300, 2, 12, b).data);
    CHECK(gen_gaussian(300, 3, 10, a).data == gen_gaussian(300, 3, 10, b).data);
  }
  Rng a(0), b(1);
  CHECK(gen_gaussian(50, 3, 10, a).data != gen_gaussian(50, 3, 10, b).data);
  Rng c(2);
  CHECK(all_finite(gen_nonlinear_manifold(500, 3, 9, c).data));
}

TEST_CASE("generator preconditions") {
  Rng rng(0);
  CHECK_THROWS_AS(gen_hyperplane(100, 11, 10, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(gen_hyperplane(5, 1, 10, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(gen_nonlinear_manifold(100, 0, 10, rng), ConfigError);
  CHECK_THROWS_AS(gen_nonlinear_manifold(100, 6, 11, rng), ConfigError);
  CHECK_THROWS_AS(gen_gaussian(100, 0, 10, rng), ConfigError);
}

TEST_CASE("estimators recover generator dimensions") {
  Rng rng(0);
  const auto line = gen_hyperplane(4000, 1, 10, 0.0, rng);
  const double l = mle_dataset_estimate(line.data, 20, MleConfig{}, Rng(0)).mean;
  CHECK(l >= 0.85);
  CHECK(l <= 1.15);

  Rng rng2(0);
  const auto m = gen_nonlinear_manifold(4000, 2, 12, rng2);
  const double md = mle_dataset_estimate(m.data, 20, MleConfig{}, Rng(0)).mean;
  CHECK(md >= 1.6);
  CHECK(md <= 2.6);
}

TEST_CASE("mini-sprites") {
  const auto ds = gen_mini_sprites();
  CHECK(ds.data.rows() == 512);
  CHECK(ds.data.cols() == 256);
  CHECK(ds.meta.factor_names == std::vector<std::string>{"shape", "x", "y", "scale"});
  CHECK(ds.meta.factors.size() == 512);
  CHECK(ds.data.minCoeff() == 0.0);
  CHECK(ds.data.maxCoeff() == 1.0);
  for (Eigen::Index i = 0; i < ds.data.rows(); ++i) {
    CHECK(ds.data.row(i).sum() >= 1.0);
    for (Eigen::Index j = 0; j < ds.data.cols(); ++j) CHECK((ds.data(i, j) == 0.0 || ds.data(i, j) == 1.0));
  }

  // Pixel quantisation can merge neighbouring square scales, but shape and
  // position are always recoverable from the image.
  std::map<std::vector<double>, std::vector<double>> owner;
  std::set<std::vector<double>> tuples;
  for (Eigen::Index i = 0; i < ds.data.rows(); ++i) {
    const auto& f = ds.meta.factors[static_cast<std::size_t>(i)];
    tuples.insert(f);
    const std::vector<double> img(ds.data.row(i).data(), ds.data.row(i).data() + ds.data.cols());
    const std::vector<double> key{f[0], f[1], f[2]};
    const auto [it, fresh] = owner.emplace(img, key);
    if (!fresh) CHECK(it->second == key);
  }
  CHECK(tuples.size() == 512);
  CHECK(owner.size() > 480);

  CHECK(gen_mini_sprites().data == ds.data);
}

TEST_CASE("mini-sprites preconditions") {
  MiniSpritesConfig cfg;
  cfg.n_x = 1;
  CHECK_THROWS_AS(gen_mini_sprites(cfg), ConfigError);
  cfg = {};
  cfg.max_half = 9;
  CHECK_THROWS_AS(gen_mini_sprites(cfg), ConfigError);
  cfg = {};
  cfg.pos_lo = 1.0;
  cfg.pos_hi = 12.0;
  CHECK_THROWS_AS(gen_mini_sprites(cfg), ConfigError);
  cfg = {};
  cfg.shapes.clear();
  CHECK_THROWS_AS(gen_mini_sprites(cfg), ConfigError);
}

TEST_CASE("FNDS round-trip") {
  const auto dir = scratch_dir();
  Rng rng(3);
  auto ds = gen_hyperplane(123, 3, 7, 0.0, rng);
  const auto path = dir / "plane.fnds";
  write_dataset(path, ds.data, ds.meta);
  CHECK(fs::exists(meta_sidecar_path(path)));
  CHECK(meta_sidecar_path(path).filename() == "plane.meta.json");

  const auto back = read_dataset(path);
  CHECK(back.data == quantize_to_float(ds.data));
  CHECK(to_json(back.meta) == to_json(ds.meta));

  // Rewriting what was read gives identical bytes.
  const auto bytes = slurp(path);
  const auto again = dir / "again.fnds";
  write_dataset(again, back.data, back.meta);
  CHECK(slurp(again) == bytes);
  CHECK(bytes.size() == 24 + 123 * 7 * 4);
  CHECK(bytes.substr(0, 4) == "FNDS");

  const auto sprites = gen_mini_sprites();
  const auto sp = dir / "sprites.fnds";
  write_dataset(sp, sprites.data, sprites.meta);
  const auto sback = read_dataset(sp);
  CHECK(sback.data == sprites.data);
  CHECK(sback.meta.factors == sprites.meta.factors);

  // Without a sidecar the name falls back to the file stem.
  fs::remove(meta_sidecar_path(again));
  CHECK(read_dataset(again).meta.name == "again");
}

TEST_CASE("FNDS corruption is reported with an offset") {
  const auto dir = scratch_dir();
  Rng rng(4);
  const auto ds = gen_gaussian(20, 2, 4, rng);
  const auto path = dir / "bad.fnds";
  write_dataset(path, ds.data, ds.meta);
  fs::remove(meta_sidecar_path(path));
  const auto bytes = slurp(path);

  spit(path, "FNDX" + bytes.substr(4));
  try {
    read_dataset(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  auto wrong_version = bytes;
  wrong_version[4] = 9;
  spit(path, wrong_version);
  CHECK_THROWS_AS(read_dataset(path), FormatError);

  spit(path, bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_dataset(path), FormatError);
  spit(path, bytes.substr(0, 10));
  CHECK_THROWS_AS(read_dataset(path), FormatError);
  spit(path, bytes + "xx");
  CHECK_THROWS_AS(read_dataset(path), FormatError);
}

TEST_CASE("writing rejects empty or non-finite data") {
  const auto dir = scratch_dir();
  CHECK_THROWS_AS(write_dataset(dir / "empty.fnds", Matrix(0, 3), DatasetMeta{}), ConfigError);
  Matrix bad = Matrix::Ones(3, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(write_dataset(dir / "nan.fnds", bad, DatasetMeta{}), ConfigError);
  CHECK_THROWS_AS(read_dataset(dir / "does_not_exist.fnds"), ConfigError);
}

TEST_CASE("meta validation") {
  DatasetMeta m;
  m.extrinsic_dim = 3;
  m.true_id = 4;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m.true_id = 2;
  m.seed = 17;
  m.params = {{"x", 1}};
  m.name = "demo";
  const auto back = meta_from_json(to_json(m));
  CHECK(back.true_id == 2);
  CHECK(back.seed == 17);
  CHECK(back.params == m.params);
}
