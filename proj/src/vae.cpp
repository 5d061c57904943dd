#include "fondue/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace fondue {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}

void VaeConfig::validate() const {
  if (input_dim < 1) throw ConfigError("vae: input_dim must be >= 1");
  if (latent_dim < 1) throw ConfigError("vae: latent_dim must be >= 1");
  for (int w : encoder_widths)
    if (w < 1) throw ConfigError("vae: encoder widths must be >= 1");
  for (int w : decoder_widths)
    if (w < 1) throw ConfigError("vae: decoder widths must be >= 1");
  if (!(beta >= 0.0)) throw ConfigError("vae: beta must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("vae: learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("vae: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("vae: adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("vae: batch_size must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("vae: train_fraction must lie in (0, 1]");
}

nlohmann::json to_json(const VaeConfig& cfg) {
  return {{"input_dim", cfg.input_dim},
          {"encoder_widths", cfg.encoder_widths},
          {"latent_dim", cfg.latent_dim},
          {"decoder_widths", cfg.decoder_widths},
          {"encoder_activation", to_string(cfg.encoder_activation)},
          {"decoder_activation", to_string(cfg.decoder_activation)},
          {"beta", cfg.beta},
          {"learning_rate", cfg.learning_rate},
          {"adam_beta1", cfg.adam_beta1},
          {"adam_beta2", cfg.adam_beta2},
          {"adam_eps", cfg.adam_eps},
          {"batch_size", cfg.batch_size},
          {"train_fraction", cfg.train_fraction},
          {"seed", cfg.seed}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.decoder_widths = j.value("decoder_widths", c.decoder_widths);
  c.encoder_activation = parse_activation(j.value("encoder_activation", to_string(c.encoder_activation)));
  c.decoder_activation = parse_activation(j.value("decoder_activation", to_string(c.decoder_activation)));
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename Scalar>
Dense<Scalar> zero_dense(int in, int out) {
  return {MatrixT<Scalar>::Zero(in, out), RowVectorT<Scalar>::Zero(out)};
}

template <typename Scalar, typename Fn>
VaeParams<Scalar> build(const VaeConfig& cfg, Fn make) {
  VaeParams<Scalar> p;
  int in = cfg.input_dim;
  for (int w : cfg.encoder_widths) {
    p.encoder.push_back(make(in, w));
    in = w;
  }
  p.mean_head = make(in, cfg.latent_dim);
  p.log_var_head = make(in, cfg.latent_dim);
  in = cfg.latent_dim;
  for (int w : cfg.decoder_widths) {
    p.decoder.push_back(make(in, w));
    in = w;
  }
  p.output_head = make(in, cfg.input_dim);
  return p;
}

}  // namespace

template <typename Scalar>
VaeParams<Scalar> VaeParams<Scalar>::zeros(const VaeConfig& cfg) {
  cfg.validate();
  return build<Scalar>(cfg, [](int in, int out) { return zero_dense<Scalar>(in, out); });
}

template <typename Scalar>
VaeParams<Scalar> VaeParams<Scalar>::glorot(const VaeConfig& cfg, Rng& rng) {
  cfg.validate();
  return build<Scalar>(cfg, [&rng](int in, int out) {
    Dense<Scalar> d = zero_dense<Scalar>(in, out);
    const double limit = std::sqrt(6.0 / (in + out));
    for (Eigen::Index i = 0; i < d.weight.size(); ++i)
      d.weight.data()[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
    return d;
  });
}

template <typename Scalar>
std::vector<Dense<Scalar>*> VaeParams<Scalar>::layers() {
  std::vector<Dense<Scalar>*> out;
  for (auto& l : encoder) out.push_back(&l);
  out.push_back(&mean_head);
  out.push_back(&log_var_head);
  for (auto& l : decoder) out.push_back(&l);
  out.push_back(&output_head);
  return out;
}

template <typename Scalar>
std::vector<const Dense<Scalar>*> VaeParams<Scalar>::layers() const {
  std::vector<const Dense<Scalar>*> out;
  for (const auto* l : const_cast<VaeParams*>(this)->layers()) out.push_back(l);
  return out;
}

template <typename Scalar>
std::size_t VaeParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
  return n;
}

template <typename Scalar>
bool VaeParams<Scalar>::all_finite() const {
  for (const auto* l : layers())
    if (!l->weight.allFinite() || !l->bias.allFinite()) return false;
  return true;
}

template <typename Scalar>
template <typename Other>
VaeParams<Other> VaeParams<Scalar>::cast() const {
  const auto conv = [](const Dense<Scalar>& d) {
    return Dense<Other>{d.weight.template cast<Other>(), d.bias.template cast<Other>()};
  };
  VaeParams<Other> out;
  for (const auto& l : encoder) out.encoder.push_back(conv(l));
  out.mean_head = conv(mean_head);
  out.log_var_head = conv(log_var_head);
  for (const auto& l : decoder) out.decoder.push_back(conv(l));
  out.output_head = conv(output_head);
  return out;
}

template struct VaeParams<float>;
template struct VaeParams<double>;
template VaeParams<double> VaeParams<float>::cast<double>() const;
template VaeParams<float> VaeParams<double>::cast<float>() const;

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Scalar>
MatrixT<Scalar> affine(const MatrixT<Scalar>& x, const Dense<Scalar>& d) {
  MatrixT<Scalar> y = x * d.weight;
  y.rowwise() += d.bias;
  return y;
}

template <typename Scalar>
void activate(MatrixT<Scalar>& m, Activation a) {
  if (a == Activation::relu)
    m = m.cwiseMax(Scalar(0));
  else
    m = m.array().tanh().matrix();
}

template <typename Scalar>
void require_finite(const MatrixT<Scalar>& m, const char* what, int layer) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite ") + what, layer);
}

template <typename Scalar>
MatrixT<Scalar> sigmoid(const MatrixT<Scalar>& logits) {
  return logits.unaryExpr([](Scalar l) {
    return l >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-l))
                          : std::exp(l) / (Scalar(1) + std::exp(l));
  });
}

}  // namespace

template <typename Scalar>
EncoderOutput<Scalar> encode(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                             const MatrixT<Scalar>& batch) {
  if (batch.cols() != cfg.input_dim)
    throw ConfigError("encode: batch has " + std::to_string(batch.cols()) + " columns, expected " +
                      std::to_string(cfg.input_dim));
  EncoderOutput<Scalar> out;
  const MatrixT<Scalar>* h = &batch;
  int layer = 0;
  for (const auto& d : params.encoder) {
    MatrixT<Scalar> a = affine(*h, d);
    activate(a, cfg.encoder_activation);
    require_finite(a, "encoder activation", layer++);
    out.activations.push_back(std::move(a));
    h = &out.activations.back();
  }
  out.mu = affine(*h, params.mean_head);
  require_finite(out.mu, "mean head", layer);
  out.log_var = affine(*h, params.log_var_head);
  require_finite(out.log_var, "log-variance head", layer + 1);
  return out;
}

template <typename Scalar>
DecoderOutput<Scalar> decode(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                             const MatrixT<Scalar>& z) {
  if (z.cols() != cfg.latent_dim)
    throw ConfigError("decode: z has " + std::to_string(z.cols()) + " columns, expected " +
                      std::to_string(cfg.latent_dim));
  DecoderOutput<Scalar> out;
  const MatrixT<Scalar>* h = &z;
  int layer = 0;
  for (const auto& d : params.decoder) {
    MatrixT<Scalar> a = affine(*h, d);
    activate(a, cfg.decoder_activation);
    require_finite(a, "decoder activation", layer++);
    out.activations.push_back(std::move(a));
    h = &out.activations.back();
  }
  out.logits = affine(*h, params.output_head);
  require_finite(out.logits, "output logits", layer);
  return out;
}

template <typename Scalar>
MatrixT<Scalar> reparameterize(const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var,
                               const MatrixT<Scalar>& eps) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols() || mu.rows() != eps.rows() ||
      mu.cols() != eps.cols())
    throw ConfigError("reparameterize: shape mismatch");
  return mu + (Scalar(0.5) * log_var.array()).exp().matrix().cwiseProduct(eps);
}

template <typename Scalar>
MatrixT<Scalar> reparameterize(const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var, Rng& rng,
                               MatrixT<Scalar>* eps_out) {
  MatrixT<Scalar> eps = gaussian_sample(mu.rows(), mu.cols(), rng).template cast<Scalar>();
  MatrixT<Scalar> z = reparameterize(mu, log_var, eps);
  if (eps_out) *eps_out = std::move(eps);
  return z;
}

double bce_with_logits(double x, double logit) {
  return std::max(logit, 0.0) - logit * x + std::log1p(std::exp(-std::abs(logit)));
}

double gaussian_kl(double mu, double log_var) {
  return 0.5 * (mu * mu + std::exp(log_var) - log_var - 1.0);
}

template <typename Scalar>
LossBreakdown elbo_loss(const MatrixT<Scalar>& batch, const MatrixT<Scalar>& logits,
                        const MatrixT<Scalar>& mu, const MatrixT<Scalar>& log_var, double beta) {
  if (batch.rows() != logits.rows() || batch.cols() != logits.cols() || mu.rows() != batch.rows() ||
      mu.rows() != log_var.rows() || mu.cols() != log_var.cols())
    throw ConfigError("elbo_loss: shape mismatch");
  const auto n = static_cast<double>(batch.rows());
  double recon = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    recon += bce_with_logits(static_cast<double>(batch.data()[i]), static_cast<double>(logits.data()[i]));
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    kl += gaussian_kl(static_cast<double>(mu.data()[i]), static_cast<double>(log_var.data()[i]));
  LossBreakdown out;
  out.recon = recon / n;
  out.kl = kl / n;
  out.total = beta == 0.0 ? out.recon : out.recon + beta * out.kl;
  return out;
}

template <typename Scalar>
ForwardPass<Scalar> forward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                            const MatrixT<Scalar>& batch, const MatrixT<Scalar>& eps) {
  ForwardPass<Scalar> f;
  f.enc = encode(cfg, params, batch);
  f.eps = eps;
  f.z = reparameterize(f.enc.mu, f.enc.log_var, eps);
  require_finite(f.z, "sampled z", static_cast<int>(params.encoder.size()) + 2);
  f.dec = decode(cfg, params, f.z);
  f.loss = elbo_loss(batch, f.dec.logits, f.enc.mu, f.enc.log_var, cfg.beta);
  return f;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

template <typename Scalar>
void dense_backward(const MatrixT<Scalar>& input, const MatrixT<Scalar>& grad_out, Dense<Scalar>& g) {
  g.weight.noalias() = input.transpose() * grad_out;
  g.bias = grad_out.colwise().sum();
}

template <typename Scalar>
void activation_backward(MatrixT<Scalar>& grad, const MatrixT<Scalar>& post, Activation a) {
  if (a == Activation::relu)
    grad = grad.cwiseProduct(post.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
  else
    grad = grad.cwiseProduct((Scalar(1) - post.array().square()).matrix());
}

}  // namespace

template <typename Scalar>
Gradient<Scalar> backward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                          const MatrixT<Scalar>& batch, const MatrixT<Scalar>& eps) {
  const ForwardPass<Scalar> f = forward(cfg, params, batch, eps);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.rows());
  const auto beta = static_cast<Scalar>(cfg.beta);

  Gradient<Scalar> out;
  out.loss = f.loss;
  out.grads = VaeParams<Scalar>::zeros(cfg);
  VaeParams<Scalar>& g = out.grads;

  // Decoder: d(loss)/d(logits) = (sigmoid(logits) - x) / n.
  MatrixT<Scalar> grad = (sigmoid(f.dec.logits) - batch) * inv_n;
  const int n_dec = static_cast<int>(params.decoder.size());
  const MatrixT<Scalar>& dec_top = n_dec ? f.dec.activations.back() : f.z;
  dense_backward(dec_top, grad, g.output_head);
  grad = grad * params.output_head.weight.transpose();
  for (int i = n_dec - 1; i >= 0; --i) {
    activation_backward(grad, f.dec.activations[static_cast<std::size_t>(i)], cfg.decoder_activation);
    const MatrixT<Scalar>& in = i ? f.dec.activations[static_cast<std::size_t>(i - 1)] : f.z;
    dense_backward(in, grad, g.decoder[static_cast<std::size_t>(i)]);
    grad = grad * params.decoder[static_cast<std::size_t>(i)].weight.transpose();
  }

  // Reparameterization plus the closed-form KL term.
  const MatrixT<Scalar> sigma = (Scalar(0.5) * f.enc.log_var.array()).exp().matrix();
  const MatrixT<Scalar> grad_mu = grad + (beta * inv_n) * f.enc.mu;
  const MatrixT<Scalar> grad_lv =
      (Scalar(0.5) * grad.array() * f.eps.array() * sigma.array() +
       (Scalar(0.5) * beta * inv_n) * (f.enc.log_var.array().exp() - Scalar(1)))
          .matrix();

  const int n_enc = static_cast<int>(params.encoder.size());
  const MatrixT<Scalar>& enc_top = n_enc ? f.enc.activations.back() : batch;
  dense_backward(enc_top, grad_mu, g.mean_head);
  dense_backward(enc_top, grad_lv, g.log_var_head);
  grad = grad_mu * params.mean_head.weight.transpose() + grad_lv * params.log_var_head.weight.transpose();
  for (int i = n_enc - 1; i >= 0; --i) {
    activation_backward(grad, f.enc.activations[static_cast<std::size_t>(i)], cfg.encoder_activation);
    const MatrixT<Scalar>& in = i ? f.enc.activations[static_cast<std::size_t>(i - 1)] : batch;
    dense_backward(in, grad, g.encoder[static_cast<std::size_t>(i)]);
    if (i > 0) grad = grad * params.encoder[static_cast<std::size_t>(i)].weight.transpose();
  }

  int layer = 0;
  for (const auto* l : g.layers()) {
    if (!l->weight.allFinite() || !l->bias.allFinite()) throw NumericalError("non-finite gradient", layer);
    ++layer;
  }
  return out;
}

template <typename Scalar>
Gradient<Scalar> backward(const VaeConfig& cfg, const VaeParams<Scalar>& params,
                          const MatrixT<Scalar>& batch, Rng& rng) {
  const MatrixT<Scalar> eps = gaussian_sample(batch.rows(), cfg.latent_dim, rng).template cast<Scalar>();
  return backward(cfg, params, batch, eps);
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
AdamState<Scalar> AdamState<Scalar>::fresh(const VaeConfig& cfg) {
  return {VaeParams<Scalar>::zeros(cfg), VaeParams<Scalar>::zeros(cfg), 0};
}

template <typename Scalar>
void adam_step(VaeParams<Scalar>& params, const VaeParams<Scalar>& grads, AdamState<Scalar>& state,
               const VaeConfig& cfg) {
  ++state.step;
  const auto b1 = static_cast<Scalar>(cfg.adam_beta1);
  const auto b2 = static_cast<Scalar>(cfg.adam_beta2);
  const auto lr = static_cast<Scalar>(cfg.learning_rate);
  const auto eps = static_cast<Scalar>(cfg.adam_eps);
  const auto t = static_cast<double>(state.step);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.adam_beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.adam_beta2, t));

  auto p = params.layers();
  auto g = grads.layers();
  auto m = state.m.layers();
  auto v = state.v.layers();
  const auto update = [&](auto& param, const auto& grad, auto& mom, auto& vel) {
    mom = b1 * mom + (Scalar(1) - b1) * grad;
    vel = b2 * vel + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    param.array() -= lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    update(p[i]->weight, g[i]->weight, m[i]->weight, v[i]->weight);
    update(p[i]->bias, g[i]->bias, m[i]->bias, v[i]->bias);
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

MatrixF gather(const MatrixF& data, std::span<const std::int64_t> ids) {
  MatrixF out(static_cast<Eigen::Index>(ids.size()), data.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(ids[i]);
  return out;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l, double weight) {
  acc.recon += weight * l.recon;
  acc.kl += weight * l.kl;
  acc.total += weight * l.total;
}

LossBreakdown evaluate(const VaeConfig& cfg, const VaeParams<float>& params, const MatrixF& data,
                       std::span<const std::int64_t> ids, Rng rng) {
  LossBreakdown acc;
  if (ids.empty()) return acc;
  constexpr std::size_t kChunk = 1024;
  for (std::size_t s = 0; s < ids.size(); s += kChunk) {
    const auto chunk = ids.subspan(s, std::min(kChunk, ids.size() - s));
    const MatrixF x = gather(data, chunk);
    const MatrixF eps = gaussian_sample(x.rows(), cfg.latent_dim, rng).cast<float>();
    const auto f = forward(cfg, params, x, eps);
    accumulate(acc, f.loss, static_cast<double>(chunk.size()));
  }
  const auto n = static_cast<double>(ids.size());
  return {acc.recon / n, acc.kl / n, acc.total / n};
}

}  // namespace

TrainResult train(const VaeConfig& cfg, const Matrix& dataset, int epochs) {
  cfg.validate();
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (dataset.cols() != cfg.input_dim)
    throw ConfigError("train: dataset has " + std::to_string(dataset.cols()) + " columns, config expects " +
                      std::to_string(cfg.input_dim));
  if (dataset.rows() < cfg.batch_size)
    throw ConfigError("train: dataset has fewer rows than batch_size");

  const Rng root(cfg.seed);
  Rng init_rng = root.split(0), split_rng = root.split(1), shuffle_rng = root.split(2),
      noise_rng = root.split(3);
  const Rng eval_root = root.split(4);

  std::vector<std::int64_t> order(static_cast<std::size_t>(dataset.rows()));
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, split_rng);
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(order.size()))));
  std::vector<std::int64_t> train_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::int64_t> held_ids(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const MatrixF data = dataset.cast<float>();
  TrainResult result;
  result.params = VaeParams<float>::glorot(cfg, init_rng);
  AdamState<float> state = AdamState<float>::fresh(cfg);

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    shuffle(train_ids, shuffle_rng);
    LossBreakdown acc;
    for (std::size_t s = 0; s < train_ids.size(); s += bs) {
      const auto ids = std::span<const std::int64_t>(train_ids).subspan(s, std::min(bs, train_ids.size() - s));
      const MatrixF x = gather(data, ids);
      try {
        const Gradient<float> g = backward(cfg, result.params, x, noise_rng);
        VaeParams<float> next = result.params;
        adam_step(next, g.grads, state, cfg);
        if (!next.all_finite()) throw NumericalError("non-finite parameters after Adam step", -1);
        result.params = std::move(next);
        accumulate(acc, g.loss, static_cast<double>(ids.size()));
      } catch (const NumericalError& e) {
        throw TrainingAborted(e, std::move(result));
      }
    }
    const auto n = static_cast<double>(train_ids.size());
    EpochLoss rec;
    rec.epoch = epoch;
    rec.train = {acc.recon / n, acc.kl / n, acc.total / n};
    try {
      rec.held_out = evaluate(cfg, result.params, data, held_ids, eval_root.split(static_cast<std::uint64_t>(epoch)));
    } catch (const NumericalError& e) {
      throw TrainingAborted(e, std::move(result));
    }
    result.trace.push_back(rec);
  }
  return result;
}

Representations extract_representations(const VaeConfig& cfg, const VaeParams<float>& params,
                                        const Matrix& probe, const Rng& rng) {
  if (probe.rows() < 2) throw ConfigError("extract_representations: probe needs at least 2 rows");
  const MatrixF x = probe.cast<float>();
  Rng draw = rng;
  auto enc = encode(cfg, params, x);
  MatrixF eps;
  const MatrixF z = reparameterize(enc.mu, enc.log_var, draw, &eps);
  auto dec = decode(cfg, params, z);

  Representations r;
  r.mu = enc.mu.cast<double>();
  r.log_var = enc.log_var.cast<double>();
  r.z = z.cast<double>();
  for (const auto& a : enc.activations) r.encoder_activations.push_back(a.cast<double>());
  for (const auto& a : dec.activations) r.decoder_activations.push_back(a.cast<double>());
  r.output = sigmoid(dec.logits).cast<double>();
  r.seed = rng.seed();
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename U>
void put_le(std::string& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[off_ + i])) << (8 * i);
    off_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(off_, n);
    off_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - off_ < n) throw FormatError(std::string("truncated ") + what, buf_.size());
  }
  std::size_t offset() const { return off_; }
  bool done() const { return off_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t off_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VaeConfig& cfg, const VaeParams<float>& params) {
  std::string buf = "FNDV";
  put_le<std::uint32_t>(buf, kFndvVersion);
  const std::string config = to_json(cfg).dump();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(config.size()));
  buf += config;
  const auto layers = params.layers();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(layers.size()));
  for (const auto* l : layers) {
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(l->weight.rows()));
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(l->weight.cols()));
    for (Eigen::Index i = 0; i < l->weight.size(); ++i)
      put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(l->weight.data()[i]));
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(l->bias.size()));
    for (Eigen::Index i = 0; i < l->bias.size(); ++i)
      put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(l->bias.data()[i]));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("save_checkpoint: cannot open " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw ConfigError("save_checkpoint: write failed for " + path.string());
}

std::pair<VaeConfig, VaeParams<float>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("load_checkpoint: cannot open " + path.string());
  Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));

  if (r.bytes(4, "magic") != "FNDV") throw FormatError("bad magic (expected FNDV)", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFndvVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
  const auto config_len = r.get<std::uint32_t>("config length");
  const std::size_t config_at = r.offset();
  VaeConfig cfg;
  try {
    cfg = vae_config_from_json(nlohmann::json::parse(r.bytes(config_len, "config")));
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config: ") + e.what(), config_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad config: ") + e.what(), config_at);
  }

  VaeParams<float> params = VaeParams<float>::zeros(cfg);
  auto layers = params.layers();
  const std::size_t count_at = r.offset();
  if (r.get<std::uint32_t>("layer count") != layers.size())
    throw FormatError("layer count disagrees with config", count_at);
  for (auto* l : layers) {
    const std::size_t at = r.offset();
    const auto rows = r.get<std::uint64_t>("weight rows");
    const auto cols = r.get<std::uint64_t>("weight cols");
    if (rows != static_cast<std::uint64_t>(l->weight.rows()) || cols != static_cast<std::uint64_t>(l->weight.cols()))
      throw FormatError("weight shape disagrees with config", at);
    for (Eigen::Index i = 0; i < l->weight.size(); ++i)
      l->weight.data()[i] = std::bit_cast<float>(r.get<std::uint32_t>("weights"));
    const std::size_t bias_at = r.offset();
    if (r.get<std::uint64_t>("bias length") != static_cast<std::uint64_t>(l->bias.size()))
      throw FormatError("bias length disagrees with config", bias_at);
    for (Eigen::Index i = 0; i < l->bias.size(); ++i)
      l->bias.data()[i] = std::bit_cast<float>(r.get<std::uint32_t>("biases"));
  }
  if (!r.done()) throw FormatError("trailing bytes after last layer", r.offset());
  if (!params.all_finite()) throw FormatError("non-finite parameter", count_at);
  return {cfg, std::move(params)};
}

// ---------------------------------------------------------------------------
// Instantiations

#define FONDUE_INSTANTIATE(S)                                                                          \
  template EncoderOutput<S> encode(const VaeConfig&, const VaeParams<S>&, const MatrixT<S>&);          \
  template DecoderOutput<S> decode(const VaeConfig&, const VaeParams<S>&, const MatrixT<S>&);          \
  template MatrixT<S> reparameterize(const MatrixT<S>&, const MatrixT<S>&, const MatrixT<S>&);         \
  template MatrixT<S> reparameterize(const MatrixT<S>&, const MatrixT<S>&, Rng&, MatrixT<S>*);         \
  template LossBreakdown elbo_loss(const MatrixT<S>&, const MatrixT<S>&, const MatrixT<S>&,            \
                                   const MatrixT<S>&, double);                                          \
  template ForwardPass<S> forward(const VaeConfig&, const VaeParams<S>&, const MatrixT<S>&,            \
                                  const MatrixT<S>&);                                                   \
  template Gradient<S> backward(const VaeConfig&, const VaeParams<S>&, const MatrixT<S>&,              \
                                const MatrixT<S>&);                                                     \
  template Gradient<S> backward(const VaeConfig&, const VaeParams<S>&, const MatrixT<S>&, Rng&);       \
  template struct AdamState<S>;                                                                         \
  template void adam_step(VaeParams<S>&, const VaeParams<S>&, AdamState<S>&, const VaeConfig&);

FONDUE_INSTANTIATE(float)
FONDUE_INSTANTIATE(double)
#undef FONDUE_INSTANTIATE

}  // namespace fondue
