#pragma once

#include <string>
#include <vector>

#include "fondue/core_math.hpp"

namespace fondue {

enum class VariableType { active, mixed, passive };

std::string to_string(VariableType t);

struct VariableTypeReport {
  std::vector<VariableType> labels;
  int active = 0;
  int mixed = 0;
  int passive = 0;
  std::vector<double> passive_fraction;
  double tau = 0.1;
  double delta = 0.05;
};

/// Entry (i, j) is the KL of dimension j of example i's posterior from the
/// standard normal prior.
Matrix per_example_dim_kl(const Matrix& mu, const Matrix& log_var);

/// A dimension is passive for an example when its KL is below tau. Over all
/// examples, a passive fraction >= 1 - delta labels it passive, <= delta
/// active, anything between mixed.
VariableTypeReport classify_variables(const Matrix& kl, double tau = 0.1, double delta = 0.05);

}  // namespace fondue
