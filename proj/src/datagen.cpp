#include "fondue/datagen.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "fondue/errors.hpp"

namespace fondue {

void DatasetMeta::validate() const {
  if (true_id && *true_id > static_cast<double>(extrinsic_dim))
    throw ConfigError("dataset meta: true_id exceeds extrinsic_dim");
  if (!factors.empty() && factors.size() != n_points)
    throw ConfigError("dataset meta: factor rows do not match n_points");
}

nlohmann::json to_json(const DatasetMeta& meta) {
  nlohmann::json j;
  j["name"] = meta.name;
  j["n_points"] = meta.n_points;
  j["extrinsic_dim"] = meta.extrinsic_dim;
  j["true_id"] = meta.true_id ? nlohmann::json(*meta.true_id) : nlohmann::json(nullptr);
  j["params"] = meta.params;
  j["seed"] = meta.seed ? nlohmann::json(*meta.seed) : nlohmann::json(nullptr);
  if (!meta.factor_names.empty()) {
    j["factor_names"] = meta.factor_names;
    j["factors"] = meta.factors;
  }
  return j;
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta meta;
  meta.name = j.value("name", std::string{});
  meta.n_points = j.at("n_points").get<std::size_t>();
  meta.extrinsic_dim = j.at("extrinsic_dim").get<std::size_t>();
  if (j.contains("true_id") && !j["true_id"].is_null()) meta.true_id = j["true_id"].get<double>();
  if (j.contains("params")) meta.params = j["params"];
  if (j.contains("seed") && !j["seed"].is_null()) meta.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("factor_names")) {
    meta.factor_names = j["factor_names"].get<std::vector<std::string>>();
    meta.factors = j.at("factors").get<std::vector<std::vector<double>>>();
  }
  return meta;
}

Matrix random_orthonormal(int rows, int cols, Rng& rng) {
  const Matrix g = gaussian_sample(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q;
}

namespace {

Matrix uniform_cube(std::size_t n, int d, Rng& rng) {
  Matrix u(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) u(i, j) = rng.uniform();
  return u;
}

}  // namespace

Dataset gen_hyperplane(std::size_t n, int d, int ambient, double noise_sd, Rng& rng) {
  if (d < 1) throw ConfigError("hyperplane: d must be >= 1");
  if (d > ambient) throw ConfigError("hyperplane: d must not exceed ambient");
  if (n < 10) throw ConfigError("hyperplane: n must be >= 10");
  if (noise_sd < 0.0) throw ConfigError("hyperplane: noise_sd must be >= 0");

  Rng frame_rng = rng.split(0), point_rng = rng.split(1), noise_rng = rng.split(2);
  const Matrix frame = random_orthonormal(ambient, d, frame_rng);
  Dataset out;
  out.data = uniform_cube(n, d, point_rng) * frame.transpose();
  if (noise_sd > 0.0) out.data += noise_sd * gaussian_sample(out.data.rows(), ambient, noise_rng);

  out.meta.name = "hyperplane";
  out.meta.n_points = n;
  out.meta.extrinsic_dim = static_cast<std::size_t>(ambient);
  if (noise_sd == 0.0) out.meta.true_id = d;
  out.meta.params = {{"generator", "hyperplane"}, {"d", d}, {"ambient", ambient},
                     {"n", n}, {"noise_sd", noise_sd}};
  out.meta.seed = rng.seed();
  return out;
}

Dataset gen_nonlinear_manifold(std::size_t n, int d, int ambient, Rng& rng) {
  if (d < 1) throw ConfigError("manifold: d must be >= 1");
  if (2 * d > ambient) throw ConfigError("manifold: 2*d must not exceed ambient");
  if (n < 10) throw ConfigError("manifold: n must be >= 10");

  Rng freq_rng = rng.split(0), point_rng = rng.split(1), rot_rng = rng.split(2);
  const int extra = ambient - d;
  const int n_sin = (extra + 1) / 2;
  const int n_cos = extra - n_sin;
  Matrix a(n_sin, d), b(n_cos, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = freq_rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = freq_rng.uniform(-0.5, 0.5);

  const Matrix u = uniform_cube(n, d, point_rng);
  const double two_pi = 2.0 * std::numbers::pi;
  Matrix features(u.rows(), ambient);
  features.leftCols(d) = u;
  features.middleCols(d, n_sin) = (two_pi * u * a.transpose()).array().sin().matrix();
  if (n_cos > 0) features.rightCols(n_cos) = (two_pi * u * b.transpose()).array().cos().matrix();

  const Matrix rotation = random_orthonormal(ambient, ambient, rot_rng);
  Dataset out;
  out.data = features * rotation.transpose();
  out.meta.name = "manifold";
  out.meta.n_points = n;
  out.meta.extrinsic_dim = static_cast<std::size_t>(ambient);
  out.meta.true_id = d;
  out.meta.params = {{"generator", "manifold"}, {"d", d}, {"ambient", ambient}, {"n", n}};
  out.meta.seed = rng.seed();
  return out;
}

Dataset gen_gaussian(std::size_t n, int d, int ambient, Rng& rng) {
  if (d < 1 || d > ambient) throw ConfigError("gaussian: need 1 <= d <= ambient");
  if (n < 10) throw ConfigError("gaussian: n must be >= 10");
  Rng frame_rng = rng.split(0), point_rng = rng.split(1);
  const Matrix frame = random_orthonormal(ambient, d, frame_rng);
  Dataset out;
  out.data = gaussian_sample(static_cast<Eigen::Index>(n), d, point_rng) * frame.transpose();
  out.meta.name = "gaussian";
  out.meta.n_points = n;
  out.meta.extrinsic_dim = static_cast<std::size_t>(ambient);
  out.meta.true_id = d;
  out.meta.params = {{"generator", "gaussian"}, {"d", d}, {"ambient", ambient}, {"n", n}};
  out.meta.seed = rng.seed();
  return out;
}

namespace {

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    v[static_cast<std::size_t>(i)] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  return v;
}

}  // namespace

Dataset gen_mini_sprites(const MiniSpritesConfig& cfg) {
  if (cfg.side < 2) throw ConfigError("sprites: side must be >= 2");
  if (cfg.shapes.empty()) throw ConfigError("sprites: need at least one shape");
  if (cfg.n_x < 2 || cfg.n_y < 2 || cfg.n_scale < 2)
    throw ConfigError("sprites: n_x, n_y and n_scale must be >= 2");
  if (!(cfg.min_half > 0.0 && cfg.min_half <= cfg.max_half))
    throw ConfigError("sprites: need 0 < min_half <= max_half");

  const double side = cfg.side;
  const double lo = cfg.pos_lo.value_or(cfg.max_half);
  const double hi = cfg.pos_hi.value_or(side - cfg.max_half);
  if (lo > hi) throw ConfigError("sprites: position range is empty");
  if (lo - cfg.max_half < 0.0 || hi + cfg.max_half > side)
    throw ConfigError("sprites: sprite out of bounds at the largest scale");

  const auto xs = linspace(lo, hi, cfg.n_x);
  const auto ys = linspace(lo, hi, cfg.n_y);
  const auto scales = linspace(cfg.min_half, cfg.max_half, cfg.n_scale);
  const std::size_t n = cfg.shapes.size() * xs.size() * ys.size() * scales.size();
  const int pixels = cfg.side * cfg.side;

  Dataset out;
  out.data = Matrix::Zero(static_cast<Eigen::Index>(n), pixels);
  out.meta.factors.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
    for (double cx : xs) {
      for (double cy : ys) {
        for (double h : scales) {
          int lit = 0;
          for (int r = 0; r < cfg.side; ++r) {
            for (int c = 0; c < cfg.side; ++c) {
              const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
              const bool on = cfg.shapes[s] == SpriteShape::square
                                  ? std::abs(dx) <= h && std::abs(dy) <= h
                                  : dx * dx + dy * dy <= h * h;
              if (on) {
                out.data(row, r * cfg.side + c) = 1.0;
                ++lit;
              }
            }
          }
          if (lit == 0) throw ConfigError("sprites: a factor combination renders no pixels");
          out.meta.factors.push_back({static_cast<double>(s), cx, cy, h});
          ++row;
        }
      }
    }
  }

  nlohmann::json shapes = nlohmann::json::array();
  for (auto sh : cfg.shapes) shapes.push_back(sh == SpriteShape::square ? "square" : "disc");
  out.meta.name = "mini_sprites";
  out.meta.n_points = n;
  out.meta.extrinsic_dim = static_cast<std::size_t>(pixels);
  out.meta.factor_names = {"shape", "x", "y", "scale"};
  out.meta.params = {{"generator", "mini_sprites"}, {"side", cfg.side},  {"shapes", shapes},
                     {"n_x", cfg.n_x},              {"n_y", cfg.n_y},    {"n_scale", cfg.n_scale},
                     {"min_half", cfg.min_half},    {"max_half", cfg.max_half},
                     {"pos_lo", lo},                {"pos_hi", hi},      {"n_factors", 4}};
  return out;
}

Matrix quantize_to_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

std::filesystem::path meta_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".meta.json");
  return p;
}

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

template <typename U>
void put_le(std::string& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

template <typename U>
U get_le(const std::string& buf, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(buf[offset + i])) << (8 * i);
  return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Matrix& data, const DatasetMeta& meta) {
  if (data.rows() == 0 || data.cols() == 0) throw ConfigError("write_dataset: matrix is empty");
  if (!data.allFinite()) throw ConfigError("write_dataset: matrix has non-finite entries");
  DatasetMeta m = meta;
  m.n_points = static_cast<std::size_t>(data.rows());
  m.extrinsic_dim = static_cast<std::size_t>(data.cols());
  m.validate();

  std::string buf;
  buf.reserve(kHeaderBytes + static_cast<std::size_t>(data.size()) * 4);
  buf.append("FNDS");
  put_le<std::uint32_t>(buf, kFndsVersion);
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(data.rows()));
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(data.cols()));
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(data(i, j))));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("write_dataset: cannot open " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  std::ofstream side(meta_sidecar_path(path), std::ios::trunc);
  side << to_json(m).dump(2) << '\n';
  if (!f || !side) throw ConfigError("write_dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("read_dataset: cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 4) throw FormatError("truncated header", buf.size());
  if (buf.compare(0, 4, "FNDS") != 0) throw FormatError("bad magic (expected FNDS)", 0);
  if (buf.size() < kHeaderBytes) throw FormatError("truncated header", buf.size());
  const auto version = get_le<std::uint32_t>(buf, 4);
  if (version != kFndsVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
  const auto rows = get_le<std::uint64_t>(buf, 8);
  const auto cols = get_le<std::uint64_t>(buf, 16);
  if (rows == 0 || cols == 0) throw FormatError("empty shape", 8);
  if (cols > (std::uint64_t{1} << 32) || rows > (std::uint64_t{1} << 40) / cols)
    throw FormatError("implausible shape", 8);
  const std::uint64_t expected = kHeaderBytes + rows * cols * 4;
  if (buf.size() < expected) throw FormatError("truncated data section", buf.size());
  if (buf.size() > expected) throw FormatError("trailing bytes after data section", expected);

  Dataset out;
  out.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::size_t off = kHeaderBytes;
  for (Eigen::Index i = 0; i < out.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.data.cols(); ++j, off += 4) {
      const float v = std::bit_cast<float>(get_le<std::uint32_t>(buf, off));
      if (!std::isfinite(v)) throw FormatError("non-finite value", off);
      out.data(i, j) = v;
    }
  }

  const auto side_path = meta_sidecar_path(path);
  if (std::filesystem::exists(side_path)) {
    std::ifstream side(side_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(side);
      out.meta = meta_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad metadata sidecar: ") + e.what(), 0);
    }
    if (out.meta.n_points != rows || out.meta.extrinsic_dim != cols)
      throw FormatError("metadata sidecar shape disagrees with header", 8);
  } else {
    out.meta.name = path.stem().string();
    out.meta.n_points = rows;
    out.meta.extrinsic_dim = cols;
  }
  return out;
}

}  // namespace fondue
