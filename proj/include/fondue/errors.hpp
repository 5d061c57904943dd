#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fondue {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes (2 config/input, 3 search outcome, 4 numerical failure).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateData : public Error {
 public:
  using Error::Error;
};

class DegenerateNeighborhood : public Error {
 public:
  using Error::Error;
};

class EstimationFailed : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class SearchCapped : public Error {
 public:
  explicit SearchCapped(int max_dim)
      : Error("search reached max_dim=" + std::to_string(max_dim) +
              " without finding a dimension above the threshold"),
        max_dim_(max_dim) {}
  int max_dim() const noexcept { return max_dim_; }

 private:
  int max_dim_;
};

class NoFeasibleDimension : public Error {
 public:
  NoFeasibleDimension()
      : Error("no latent dimension satisfies IDE_z - IDE_mu <= threshold") {}
};

class Unstable : public Error {
 public:
  explicit Unstable(std::vector<int> predictions)
      : Error(describe(predictions)), predictions_(std::move(predictions)) {}
  const std::vector<int>& predictions() const noexcept { return predictions_; }

 private:
  static std::string describe(const std::vector<int>& preds) {
    std::string s = "predictions never repeated across the epoch schedule:";
    for (int p : preds) s += " " + std::to_string(p);
    return s;
  }
  std::vector<int> predictions_;
};

}  // namespace fondue
