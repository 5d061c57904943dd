#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fondue/core_math.hpp"

namespace fondue {

struct DatasetMeta {
  std::string name;
  std::size_t n_points = 0;
  std::size_t extrinsic_dim = 0;
  std::optional<double> true_id;
  nlohmann::json params = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  // Generative factor values per row (mini-sprites only).
  std::vector<std::string> factor_names;
  std::vector<std::vector<double>> factors;

  void validate() const;
};

nlohmann::json to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

struct Dataset {
  Matrix data;
  DatasetMeta meta;
};

/// n points uniform on [0,1]^d mapped into R^ambient by a random orthonormal
/// ambient×d frame, plus isotropic Gaussian noise of sd noise_sd.
Dataset gen_hyperplane(std::size_t n, int d, int ambient, double noise_sd, Rng& rng);

/// Latent u ~ U[0,1]^d lifted to (u, sin(2π A u), cos(2π B u)) with fixed
/// random frequency matrices A and B, then rotated into R^ambient.
Dataset gen_nonlinear_manifold(std::size_t n, int d, int ambient, Rng& rng);

/// Isotropic Gaussian in R^d embedded in R^ambient by a random orthonormal frame.
Dataset gen_gaussian(std::size_t n, int d, int ambient, Rng& rng);

enum class SpriteShape { square, disc };

struct MiniSpritesConfig {
  int side = 16;
  std::vector<SpriteShape> shapes{SpriteShape::square, SpriteShape::disc};
  int n_x = 8;
  int n_y = 8;
  int n_scale = 4;
  // Sprite half-extent in pixels, swept linearly over n_scale values.
  double min_half = 2.0;
  double max_half = 4.0;
  // Sprite centres sweep [pos_lo, pos_hi] on each axis; unset means
  // [max_half, side - max_half].
  std::optional<double> pos_lo;
  std::optional<double> pos_hi;
};

/// Full Cartesian product shape × x × y × scale, rendered as binary images
/// flattened row-major. Deterministic; no RNG.
Dataset gen_mini_sprites(const MiniSpritesConfig& cfg = {});

/// FNDS: "FNDS", u32 version, u64 rows, u64 cols (little-endian), then
/// rows×cols little-endian float32 row-major. Metadata goes to the
/// `<stem>.meta.json` sidecar next to the file.
inline constexpr std::uint32_t kFndsVersion = 1;
void write_dataset(const std::filesystem::path& path, const Matrix& data, const DatasetMeta& meta);
Dataset read_dataset(const std::filesystem::path& path);
std::filesystem::path meta_sidecar_path(const std::filesystem::path& path);

/// Rounds every entry to float32, the precision stored on disk.
Matrix quantize_to_float(const Matrix& m);

/// Random orthonormal rows×cols frame (rows >= cols) from QR of a Gaussian matrix.
Matrix random_orthonormal(int rows, int cols, Rng& rng);

}  // namespace fondue
