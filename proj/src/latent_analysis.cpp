#include "fondue/latent_analysis.hpp"

#include "fondue/errors.hpp"
#include "fondue/vae.hpp"

namespace fondue {

std::string to_string(VariableType t) {
  switch (t) {
    case VariableType::active: return "active";
    case VariableType::mixed: return "mixed";
    case VariableType::passive: return "passive";
  }
  return "unknown";
}

Matrix per_example_dim_kl(const Matrix& mu, const Matrix& log_var) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols())
    throw ConfigError("per_example_dim_kl: shape mismatch");
  Matrix kl(mu.rows(), mu.cols());
  for (Eigen::Index i = 0; i < mu.size(); ++i) kl.data()[i] = gaussian_kl(mu.data()[i], log_var.data()[i]);
  return kl;
}

VariableTypeReport classify_variables(const Matrix& kl, double tau, double delta) {
  if (!(tau > 0.0)) throw ConfigError("classify_variables: tau must be > 0");
  if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("classify_variables: delta must lie in (0, 0.5)");
  if (kl.rows() < 1) throw ConfigError("classify_variables: need at least one example");

  VariableTypeReport rep;
  rep.tau = tau;
  rep.delta = delta;
  const auto n = static_cast<double>(kl.rows());
  for (Eigen::Index j = 0; j < kl.cols(); ++j) {
    Eigen::Index below = 0;
    for (Eigen::Index i = 0; i < kl.rows(); ++i)
      if (kl(i, j) < tau) ++below;
    const double frac = static_cast<double>(below) / n;
    rep.passive_fraction.push_back(frac);
    if (frac >= 1.0 - delta) {
      rep.labels.push_back(VariableType::passive);
      ++rep.passive;
    } else if (frac <= delta) {
      rep.labels.push_back(VariableType::active);
      ++rep.active;
    } else {
      rep.labels.push_back(VariableType::mixed);
      ++rep.mixed;
    }
  }
  return rep;
}

}  // namespace fondue
