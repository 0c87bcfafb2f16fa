#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dvae/data_io.hpp"
#include "dvae/mlp.hpp"
#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"
#include "dvae/var_dynamics.hpp"

namespace dvae {

// Variational autoencoder over consecutive-frame pairs whose decoder embeds
// the linear dynamic layer [[I,0],[A,B]]: latent noise x = [x1;x2] decodes to
// [C(x1); C(A x1 + B x2)] with one shared subnetwork C. A and B are ordinary
// trainable weights; the loss adds lambda * ||A A^T + B B^T - I||_F^2.
struct DvaeModel {
  std::size_t n = 0;  // latent state dimension
  std::size_t d = 0;  // frame dimension
  Var1Model dyn;      // A, B (n x n each)
  Mlp decoder;        // n -> d
  Mlp encoder;        // 2d -> 4n (mean 2n, then log-variance 2n)
  double sigma_y2 = 1.0;
  double lambda = 100.0;
};

// Second-order variant: triples of frames, the 3x3-block dynamic layer, and
// the three-term regularizer.
struct Dvae2Model {
  std::size_t n = 0;
  std::size_t d = 0;
  DynamicLayerF layer;  // order 2, blocks F1..F5
  Mlp decoder;          // n -> d
  Mlp encoder;          // 3d -> 6n
  double sigma_y2 = 1.0;
  double lambda1 = 100.0, lambda2 = 100.0, lambda3 = 100.0;
};

struct DvaeArch {
  std::size_t n = 10;
  std::size_t d = 0;
  std::vector<std::size_t> decoder_hidden;
  std::vector<std::size_t> encoder_hidden;
  Activation hidden_act = Activation::Tanh;
  Activation decoder_out_act = Activation::Sigmoid;
  double sigma_y2 = 1.0;
  double lambda = 100.0;
};

// Fresh model: Glorot nets, A = 0.9 I, B = cholesky(I - A A^T) so the
// stationarity constraint holds exactly at step 0.
DvaeModel make_dvae(const DvaeArch& arch, Prng& rng);
Dvae2Model make_dvae2(const DvaeArch& arch, Prng& rng);

// Decoder side of Eq.-style pair generation: y1 = C(x1), y2 = C(A x1 + B x2).
// x is batch x 2n; outputs are batch x d each.
struct DecodedPair {
  Tensor y1_hat;
  Tensor y2_hat;
};
DecodedPair decoder_f_theta(const DvaeModel& model, const Tensor& x);

// Posterior encoding of a frame pair. Rows of y1/y2 are frames; masked
// variants zero-fill hidden pixels before encoding. logvar is clamped to
// [-10, 10]. x = mu + exp(logvar/2) .* eps with eps drawn from rng.
struct Encoded {
  Tensor mu;      // batch x 2n
  Tensor logvar;  // batch x 2n (clamped)
  Tensor x;       // batch x 2n
  Tensor eps;     // batch x 2n
};
Encoded encode(const DvaeModel& model, const Tensor& y1, const Tensor& y2, Prng& rng);

struct DvaeGrads {
  Tensor A, B;
  MlpGrads decoder, encoder;

  static DvaeGrads zeros_like(const DvaeModel& model);
  DvaeGrads& operator+=(const DvaeGrads& other);
  DvaeGrads& operator*=(double s);
  double global_norm() const;
};

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;           // mean over batch, observed pixels only
  double kl = 0.0;              // mean over batch
  double stationarity = 0.0;    // raw residual (before lambda)
  double kink_margin = 0.0;     // for finite-difference checks
};

// Full training objective on a batch of frame pairs:
//   mean_b [ sum_observed (y_hat - y)^2 / (2 sigma_y2) + KL(q || N(0,I)) ]
//   + lambda * stationarity_residual(A, B).
// m1/m2 are 0/1 masks (empty tensors = fully observed). eps is the
// pre-drawn reparameterization noise (batch x 2n) so the loss is a
// deterministic function of the parameters. Pass grads=nullptr to skip the
// backward pass.
LossBreakdown dvae_loss(const DvaeModel& model, const Tensor& y1, const Tensor& y2,
                        const Tensor& m1, const Tensor& m2, const Tensor& eps,
                        DvaeGrads* grads);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double lambda = 100.0;
  double sigma_y2 = 1.0;
  std::size_t latent_n = 10;
  double grad_clip = 5.0;            // global norm; 0 disables
  double validation_fraction = 0.0;  // tail fraction of pairs held out
};

struct EpochRecord {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double stationarity = 0.0;
  double val_loss = 0.0;  // NaN-free; 0 when no validation split
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

// Invoked after each epoch with the 0-based epoch index; lets callers stream
// progress without waiting for the full report.
using EpochCallback = std::function<void(std::size_t, const EpochRecord&)>;

// Minibatch Adam on dvae_loss. Deterministic given config.seed (one PRNG
// stream drives shuffling and reparameterization noise). lambda and sigma_y2
// from the config are written into the model before training. Throws
// TrainingDivergedError naming the epoch on a non-finite loss.
TrainReport train(DvaeModel& model, const PairBatch& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// First n entries of the posterior mean for the pair (y1, y2); consumes no
// randomness.
Tensor estimate_initial_state(const DvaeModel& model, const Tensor& y1, const Tensor& y2);

// Latent rollout through sample_var1 decoded frame by frame. When add_noise
// is set, N(0, sigma_y2) is added per pixel (off by default: synthesized
// frames are the decoder means).
Tensor synthesize(const DvaeModel& model, const Tensor& h0, std::size_t steps, Prng& rng,
                  bool add_noise = false);

// ---- order-2 counterparts --------------------------------------------------

struct Dvae2Grads {
  Order2Grads layer;
  MlpGrads decoder, encoder;

  static Dvae2Grads zeros_like(const Dvae2Model& model);
  Dvae2Grads& operator*=(double s);
  double global_norm() const;
};

LossBreakdown dvae2_loss(const Dvae2Model& model, const Tensor& y1, const Tensor& y2,
                         const Tensor& y3, const Tensor& m1, const Tensor& m2,
                         const Tensor& m3, const Tensor& eps, Dvae2Grads* grads);

TrainReport train2(Dvae2Model& model, const TripleBatch& data, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

// First n / second n entries of the posterior mean for the triple
// (y1, y2, y3); consumes no randomness.
struct InitialState2 {
  Tensor h0, h1;
};
InitialState2 estimate_initial_state2(const Dvae2Model& model, const Tensor& y1,
                                      const Tensor& y2, const Tensor& y3);

// Recover (A0, A1, B) from the learned blocks and roll the second-order
// process forward; h0/h1 seed the recursion.
Tensor synthesize2(const Dvae2Model& model, const Tensor& h0, const Tensor& h1,
                   std::size_t steps, Prng& rng);

}  // namespace dvae
