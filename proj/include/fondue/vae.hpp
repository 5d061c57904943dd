#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fondue/core_math.hpp"
#include "fondue/errors.hpp"

namespace fondue {

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct VaeConfig {
  int input_dim = 256;
  std::vector<int> encoder_widths{256, 256};
  int latent_dim = 10;
  std::vector<int> decoder_widths{256, 256};
  Activation encoder_activation = Activation::relu;
  Activation decoder_activation = Activation::relu;
  double beta = 1.0;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const VaeConfig& cfg);
VaeConfig vae_config_from_json(const nlohmann::json& j);

/// Affine layer y = x W + b with W stored in×out.
template <typename Scalar>
struct Dense {
  MatrixT<Scalar> weight;
  RowVectorT<Scalar> bias;
};

template <typename Scalar>
struct VaeParams {
  std::vector<Dense<Scalar>> encoder;
  Dense<Scalar> mean_head;
  Dense<Scalar> log_var_head;
  std::vector<Dense<Scalar>> decoder;
  Dense<Scalar> output_head;

  /// Zero-filled parameters shaped for cfg.
  static VaeParams zeros(const VaeConfig& cfg);
  /// Glorot-uniform weights, zero biases.
  static VaeParams glorot(const VaeConfig& cfg, Rng& rng);

  /// Layers in a fixed order: encoder trunk, mean head, log-var head,
  /// decoder trunk, output head.
  std::vector<Dense<Scalar>*> layers();
  std::vector<const Dense<Scalar>*> layers() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename Other>
  VaeParams<Other> cast() const;
};

extern template struct VaeParams<float>;
extern template struct VaeParams<double>;

struct LossBreakdown {
  double recon = 0.0;  // Bernoulli NLL, nats, summed over pixels, batch mean
  double kl = 0.0;     // nats, summed over latent dims, batch mean
  double total = 0.0;  // recon + beta * kl
};

template <typename Scalar>
struct EncoderOutput {
  MatrixT<Scalar> mu;
  MatrixT<Scalar> log_var;
  std::vector<MatrixT<Scalar>> activations;  // trunk outputs, input→output
};

template <typename Scalar>
struct DecoderOutput {
  MatrixT<Scalar> logits;
  std::vector<MatrixT<Scalar>> activations;  // trunk outputs, input→output
};

template <typename Scalar>
EncoderOutput<Scalar> encode(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                             const MatrixT<Scalar>& batch);

template <typename Scalar>
DecoderOutput<Scalar> decode(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                             const MatrixT<Scalar>& z);

/// z = mu + exp(0.5 * log_var) ⊙ eps.
template <typename Scalar>
MatrixT<Scalar> reparameterize(const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var,
                               const MatrixT<Scalar>& eps);

/// Draws eps ~ N(0, I) from rng, then reparameterizes. The draw is returned
/// through `eps_out` when non-null.
template <typename Scalar>
MatrixT<Scalar> reparameterize(const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var, Rng& rng,
                               MatrixT<Scalar>* eps_out = nullptr);

/// Numerically stable BCE-with-logits: max(l,0) - l*x + log1p(exp(-|l|)).
double bce_with_logits(double x, double logit);

/// 0.5 * (mu^2 + exp(log_var) - log_var - 1).
double gaussian_kl(double mu, double log_var);

template <typename Scalar>
LossBreakdown elbo_loss(const MatrixT<Scalar>& batch, const MatrixT<Scalar>& logits,
                        const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var, double beta);

template <typename Scalar>
struct ForwardPass {
  EncoderOutput<Scalar> enc;
  MatrixT<Scalar> eps;
  MatrixT<Scalar> z;
  DecoderOutput<Scalar> dec;
  LossBreakdown loss;
};

/// Full forward pass with a caller-supplied noise draw.
template <typename Scalar>
ForwardPass<Scalar> forward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                            const MatrixT<Scalar>& batch, const MatrixT<Scalar>& eps);

/// Reverse-mode gradient of the total loss for one fixed eps draw (taken
/// from rng), so the returned loss and gradient belong to the same sample.
template <typename Scalar>
struct Gradient {
  VaeParams<Scalar> grads;
  LossBreakdown loss;
};

template <typename Scalar>
Gradient<Scalar> backward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                          const MatrixT<Scalar>& batch, const MatrixT<Scalar>& eps);

template <typename Scalar>
Gradient<Scalar> backward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                          const MatrixT<Scalar>& batch, Rng& rng);

template <typename Scalar>
struct AdamState {
  VaeParams<Scalar> m;
  VaeParams<Scalar> v;
  std::int64_t step = 0;

  static AdamState fresh(const VaeConfig& cfg);
};

/// Adam with bias correction; updates params and state in place.
template <typename Scalar>
void adam_step(VaeParams<Scalar>& params, const VaeParams<Scalar>& grads, AdamState<Scalar>& state,
               const VaeConfig& cfg);

struct EpochLoss {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown held_out;
};

struct TrainResult {
  VaeParams<float> params;
  std::vector<EpochLoss> trace;
};

/// Raised when training hits a non-finite value; carries the parameters from
/// before the failing step and the completed epochs.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const NumericalError& cause, TrainResult last_good)
      : NumericalError(cause), last_good_(std::move(last_good)) {}
  const TrainResult& last_good() const noexcept { return last_good_; }

 private:
  TrainResult last_good_;
};

/// Mini-batch Adam on a seeded 90/10 split (cfg.train_fraction). Each epoch
/// reshuffles the training rows; the trace records the mean training loss
/// over the epoch's batches and the held-out loss after the epoch.
TrainResult train(const VaeConfig& cfg, const Matrix& dataset, int epochs);

struct Representations {
  Matrix mu;
  Matrix log_var;
  Matrix z;
  std::vector<Matrix> encoder_activations;
  std::vector<Matrix> decoder_activations;
  Matrix output;  // decoder output probabilities (sigmoid of logits)
  std::uint64_t seed = 0;
};

/// One forward pass over `probe` with a single z draw per example. Widened
/// to 64-bit for estimation.
Representations extract_representations(const VaeConfig& cfg, const VaeParams<float>& params,
                                        const Matrix& probe, const Rng& rng);

/// FNDV checkpoint: "FNDV", u32 version, u32 config length + JSON config,
/// u32 layer count, then per layer u64 rows, u64 cols, rows*cols float32
/// weights, u64 length, float32 biases. Everything little-endian.
inline constexpr std::uint32_t kFndvVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const VaeConfig& cfg, const VaeParams<float>& params);
std::pair<VaeConfig, VaeParams<float>> load_checkpoint(const std::filesystem::path& path);

}  // namespace fondue
