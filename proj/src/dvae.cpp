#include "dvae/dvae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

#include "dvae/adam.hpp"
#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"

namespace dvae {

namespace {

constexpr double kLogvarClamp = 10.0;

Tensor hcat(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
    throw ShapeError("hcat: row mismatch");
  Tensor out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

void check_frames(const Tensor& y, std::size_t d, const char* name) {
  if (y.ndim() != 2 || y.cols() != d)
    throw ShapeError(std::string(name) + ": expected batch x " + std::to_string(d));
}

void check_mask(const Tensor& m, const Tensor& y, const char* name) {
  if (m.numel() == 0) return;
  if (!m.same_shape(y)) throw ShapeError(std::string(name) + ": mask shape != frame shape");
}

Tensor masked(const Tensor& y, const Tensor& m) {
  if (m.numel() == 0) return y;
  return hadamard(y, m);
}

}  // namespace

DvaeModel make_dvae(const DvaeArch& arch, Prng& rng) {
  if (arch.n == 0 || arch.d == 0) throw UsageError("make_dvae: n and d must be positive");
  if (arch.sigma_y2 <= 0.0) throw UsageError("make_dvae: sigma_y2 must be positive");
  if (arch.lambda < 0.0) throw UsageError("make_dvae: lambda must be non-negative");
  DvaeModel m;
  m.n = arch.n;
  m.d = arch.d;
  m.sigma_y2 = arch.sigma_y2;
  m.lambda = arch.lambda;

  std::vector<std::size_t> dec_dims{arch.n};
  dec_dims.insert(dec_dims.end(), arch.decoder_hidden.begin(), arch.decoder_hidden.end());
  dec_dims.push_back(arch.d);
  std::vector<Activation> dec_acts(dec_dims.size() - 1, arch.hidden_act);
  dec_acts.back() = arch.decoder_out_act;
  m.decoder = Mlp::make(dec_dims, dec_acts, rng);

  std::vector<std::size_t> enc_dims{2 * arch.d};
  enc_dims.insert(enc_dims.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
  enc_dims.push_back(4 * arch.n);
  std::vector<Activation> enc_acts(enc_dims.size() - 1, arch.hidden_act);
  enc_acts.back() = Activation::Identity;
  m.encoder = Mlp::make(enc_dims, enc_acts, rng);

  m.dyn.A = Tensor::identity(arch.n);
  m.dyn.A *= 0.9;
  Tensor gram = Tensor::identity(arch.n);
  gram -= mat_mul(m.dyn.A, transpose(m.dyn.A));
  m.dyn.B = cholesky(gram);
  return m;
}

Dvae2Model make_dvae2(const DvaeArch& arch, Prng& rng) {
  if (arch.n == 0 || arch.d == 0) throw UsageError("make_dvae2: n and d must be positive");
  if (arch.sigma_y2 <= 0.0) throw UsageError("make_dvae2: sigma_y2 must be positive");
  Dvae2Model m;
  m.n = arch.n;
  m.d = arch.d;
  m.sigma_y2 = arch.sigma_y2;
  m.lambda1 = m.lambda2 = m.lambda3 = arch.lambda;

  std::vector<std::size_t> dec_dims{arch.n};
  dec_dims.insert(dec_dims.end(), arch.decoder_hidden.begin(), arch.decoder_hidden.end());
  dec_dims.push_back(arch.d);
  std::vector<Activation> dec_acts(dec_dims.size() - 1, arch.hidden_act);
  dec_acts.back() = arch.decoder_out_act;
  m.decoder = Mlp::make(dec_dims, dec_acts, rng);

  std::vector<std::size_t> enc_dims{3 * arch.d};
  enc_dims.insert(enc_dims.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
  enc_dims.push_back(6 * arch.n);
  std::vector<Activation> enc_acts(enc_dims.size() - 1, arch.hidden_act);
  enc_acts.back() = Activation::Identity;
  m.encoder = Mlp::make(enc_dims, enc_acts, rng);

  // AR(1)-style feasible start: all three regularizer terms vanish exactly.
  const std::size_t n = arch.n;
  Tensor f1 = Tensor::identity(n);
  f1 *= 0.9;
  Tensor gram = Tensor::identity(n);
  gram -= mat_mul(f1, transpose(f1));
  Tensor f2 = cholesky(gram);
  Tensor f3 = mat_mul(f1, f1);
  Tensor f4 = mat_mul(f1, f2);
  m.layer = DynamicLayerF::order2(f1, f2, f3, f4, f2);
  return m;
}

DecodedPair decoder_f_theta(const DvaeModel& model, const Tensor& x) {
  if (x.ndim() != 2 || x.cols() != 2 * model.n)
    throw ShapeError("decoder_f_theta: expected batch x 2n input");
  const DynamicLayerF layer = DynamicLayerF::order1(model.dyn.A, model.dyn.B);
  const StatePair states = dynamic_layer_forward(x, layer);
  DecodedPair out;
  out.y1_hat = mlp_forward(model.decoder, states.h1);
  out.y2_hat = mlp_forward(model.decoder, states.h2);
  return out;
}

Encoded encode(const DvaeModel& model, const Tensor& y1, const Tensor& y2, Prng& rng) {
  check_frames(y1, model.d, "encode y1");
  check_frames(y2, model.d, "encode y2");
  if (y1.rows() != y2.rows()) throw ShapeError("encode: batch size mismatch");
  const std::size_t b = y1.rows(), two_n = 2 * model.n;
  const Tensor out = mlp_forward(model.encoder, hcat(y1, y2));
  Encoded e;
  e.mu = out.cols_slice(0, two_n);
  e.logvar = out.cols_slice(two_n, 2 * two_n);
  for (std::size_t i = 0; i < e.logvar.numel(); ++i)
    e.logvar[i] = std::clamp(e.logvar[i], -kLogvarClamp, kLogvarClamp);
  e.eps = rng.gaussian_tensor({b, two_n});
  e.x = e.mu;
  for (std::size_t i = 0; i < e.x.numel(); ++i)
    e.x[i] += std::exp(0.5 * e.logvar[i]) * e.eps[i];
  return e;
}

DvaeGrads DvaeGrads::zeros_like(const DvaeModel& model) {
  DvaeGrads g;
  g.A = Tensor(model.n, model.n);
  g.B = Tensor(model.n, model.n);
  g.decoder = MlpGrads::zeros_like(model.decoder);
  g.encoder = MlpGrads::zeros_like(model.encoder);
  return g;
}

DvaeGrads& DvaeGrads::operator+=(const DvaeGrads& other) {
  A += other.A;
  B += other.B;
  decoder += other.decoder;
  encoder += other.encoder;
  return *this;
}

DvaeGrads& DvaeGrads::operator*=(double s) {
  A *= s;
  B *= s;
  decoder *= s;
  encoder *= s;
  return *this;
}

namespace {

double sq_norm_of(const MlpGrads& g) {
  double acc = 0.0;
  for (const auto& l : g.layers) {
    const double w = l.weight.frobenius_norm();
    const double b = l.bias.frobenius_norm();
    acc += w * w + b * b;
  }
  return acc;
}

}  // namespace

double DvaeGrads::global_norm() const {
  const double a = A.frobenius_norm(), b = B.frobenius_norm();
  return std::sqrt(a * a + b * b + sq_norm_of(decoder) + sq_norm_of(encoder));
}

LossBreakdown dvae_loss(const DvaeModel& model, const Tensor& y1, const Tensor& y2,
                        const Tensor& m1, const Tensor& m2, const Tensor& eps,
                        DvaeGrads* grads) {
  check_frames(y1, model.d, "dvae_loss y1");
  check_frames(y2, model.d, "dvae_loss y2");
  if (y1.rows() != y2.rows()) throw ShapeError("dvae_loss: batch size mismatch");
  check_mask(m1, y1, "dvae_loss m1");
  check_mask(m2, y2, "dvae_loss m2");
  const std::size_t b = y1.rows();
  if (b == 0) throw UsageError("dvae_loss: empty batch");
  const std::size_t n = model.n, two_n = 2 * n;
  if (eps.ndim() != 2 || eps.rows() != b || eps.cols() != two_n)
    throw ShapeError("dvae_loss: eps must be batch x 2n");

  // ---- forward ----
  const Tensor enc_in = hcat(masked(y1, m1), masked(y2, m2));
  const MlpCache enc_cache = mlp_forward_cached(model.encoder, enc_in);
  Tensor mu = enc_cache.output.cols_slice(0, two_n);
  const Tensor raw_lv = enc_cache.output.cols_slice(two_n, 2 * two_n);
  Tensor lv = raw_lv;
  double clamp_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lv.numel(); ++i) {
    clamp_margin = std::min(clamp_margin, std::fabs(kLogvarClamp - std::fabs(lv[i])));
    lv[i] = std::clamp(lv[i], -kLogvarClamp, kLogvarClamp);
  }
  Tensor std_dev = lv;
  for (std::size_t i = 0; i < std_dev.numel(); ++i) std_dev[i] = std::exp(0.5 * std_dev[i]);
  Tensor x = mu;
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += std_dev[i] * eps[i];

  const Tensor x1 = x.cols_slice(0, n);
  const Tensor x2 = x.cols_slice(n, two_n);
  Tensor xa = mat_mul(x1, transpose(model.dyn.A));
  xa += mat_mul(x2, transpose(model.dyn.B));

  const MlpCache dec_cache1 = mlp_forward_cached(model.decoder, x1);
  const MlpCache dec_cache2 = mlp_forward_cached(model.decoder, xa);

  Tensor r1 = dec_cache1.output - y1;
  Tensor r2 = dec_cache2.output - y2;
  if (m1.numel() != 0) r1.hadamard_inplace(m1);
  if (m2.numel() != 0) r2.hadamard_inplace(m2);

  const double inv_var = 1.0 / model.sigma_y2;
  double recon_sum = 0.0;
  for (std::size_t i = 0; i < r1.numel(); ++i) recon_sum += r1[i] * r1[i];
  for (std::size_t i = 0; i < r2.numel(); ++i) recon_sum += r2[i] * r2[i];
  recon_sum *= 0.5 * inv_var;

  double kl_sum = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i)
    kl_sum += 0.5 * (std::exp(lv[i]) + mu[i] * mu[i] - 1.0 - lv[i]);

  const double stat = stationarity_residual(model.dyn.A, model.dyn.B);
  const double inv_b = 1.0 / static_cast<double>(b);

  LossBreakdown out;
  out.recon = recon_sum * inv_b;
  out.kl = kl_sum * inv_b;
  out.stationarity = stat;
  out.total = out.recon + out.kl + model.lambda * stat;
  out.kink_margin = std::min({enc_cache.kink_margin, dec_cache1.kink_margin,
                              dec_cache2.kink_margin, clamp_margin});
  if (!grads) return out;

  // ---- backward ----
  Tensor g1 = std::move(r1);
  g1 *= inv_var * inv_b;
  Tensor g2 = std::move(r2);
  g2 *= inv_var * inv_b;

  Tensor dx1 = mlp_backward(model.decoder, dec_cache1, g1, grads->decoder);
  const Tensor dxa = mlp_backward(model.decoder, dec_cache2, g2, grads->decoder);

  grads->A += mat_mul(transpose(dxa), x1);
  grads->B += mat_mul(transpose(dxa), x2);
  dx1 += mat_mul(dxa, model.dyn.A);
  const Tensor dx2 = mat_mul(dxa, model.dyn.B);

  // Reparameterization and KL, into the encoder heads.
  Tensor dmu = hcat(dx1, dx2);  // = dL/dx
  Tensor dlv(b, two_n);
  for (std::size_t i = 0; i < dmu.numel(); ++i) {
    dlv[i] = dmu[i] * eps[i] * 0.5 * std_dev[i];
    dmu[i] += mu[i] * inv_b;
    dlv[i] += 0.5 * (std::exp(lv[i]) - 1.0) * inv_b;
    if (std::fabs(raw_lv[i]) > kLogvarClamp) dlv[i] = 0.0;  // clamped: no gradient
  }
  const Tensor enc_up = hcat(dmu, dlv);
  mlp_backward(model.encoder, enc_cache, enc_up, grads->encoder);

  stationarity_residual_grad(model.dyn.A, model.dyn.B, grads->A, grads->B, model.lambda);
  return out;
}

namespace {

struct ParamSet {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
};

ParamSet bind_params(DvaeModel& m, DvaeGrads& g) {
  ParamSet s;
  s.params = {&m.dyn.A, &m.dyn.B};
  s.grads = {&g.A, &g.B};
  for (std::size_t i = 0; i < m.decoder.layers.size(); ++i) {
    s.params.push_back(&m.decoder.layers[i].weight);
    s.params.push_back(&m.decoder.layers[i].bias);
    s.grads.push_back(&g.decoder.layers[i].weight);
    s.grads.push_back(&g.decoder.layers[i].bias);
  }
  for (std::size_t i = 0; i < m.encoder.layers.size(); ++i) {
    s.params.push_back(&m.encoder.layers[i].weight);
    s.params.push_back(&m.encoder.layers[i].bias);
    s.grads.push_back(&g.encoder.layers[i].weight);
    s.grads.push_back(&g.encoder.layers[i].bias);
  }
  return s;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& perm, std::size_t begin,
                   std::size_t end) {
  if (src.numel() == 0) return Tensor();
  Tensor out(end - begin, src.cols());
  for (std::size_t i = begin; i < end; ++i) out.set_row(i - begin, src.row(perm[i]));
  return out;
}

}  // namespace

TrainReport train(DvaeModel& model, const PairBatch& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (data.y1.ndim() != 2 || data.y1.rows() == 0)
    throw UsageError("train: need at least one frame pair");
  if (!data.y1.same_shape(data.y2)) throw ShapeError("train: y1/y2 shape mismatch");
  if (config.batch_size == 0) throw UsageError("train: batch_size must be >= 1");
  if (config.lr <= 0.0) throw UsageError("train: learning rate must be positive");
  if (config.sigma_y2 <= 0.0) throw UsageError("train: sigma_y2 must be positive");
  if (config.lambda < 0.0) throw UsageError("train: lambda must be non-negative");
  if (config.latent_n != model.n)
    throw UsageError("train: config latent_n " + std::to_string(config.latent_n) +
                     " != model n " + std::to_string(model.n));
  if (data.y1.cols() != model.d) throw ShapeError("train: frame dim != model d");
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0))
    throw UsageError("train: validation_fraction must be in [0,1)");
  model.lambda = config.lambda;
  model.sigma_y2 = config.sigma_y2;

  const std::size_t P = data.y1.rows();
  std::size_t val_count = static_cast<std::size_t>(config.validation_fraction * double(P));
  if (val_count >= P) val_count = P - 1;
  const std::size_t train_count = P - val_count;

  Prng rng(config.seed);
  Adam opt(AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  {
    DvaeGrads g = DvaeGrads::zeros_like(model);
    for (Tensor* p : bind_params(model, g).params) opt.add_param(*p);
  }

  TrainReport report;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> perm = rng.permutation(train_count);
    EpochRecord rec;
    double weight = 0.0;
    for (std::size_t start = 0; start < train_count; start += config.batch_size) {
      const std::size_t end = std::min(train_count, start + config.batch_size);
      const Tensor by1 = gather_rows(data.y1, perm, start, end);
      const Tensor by2 = gather_rows(data.y2, perm, start, end);
      const Tensor bm1 = gather_rows(data.m1, perm, start, end);
      const Tensor bm2 = gather_rows(data.m2, perm, start, end);
      const Tensor eps = rng.gaussian_tensor({end - start, 2 * model.n});

      DvaeGrads grads = DvaeGrads::zeros_like(model);
      const LossBreakdown loss = dvae_loss(model, by1, by2, bm1, bm2, eps, &grads);
      if (!std::isfinite(loss.total))
        throw TrainingDivergedError("train: non-finite loss in epoch " +
                                    std::to_string(epoch + 1));
      if (config.grad_clip > 0.0) {
        const double norm = grads.global_norm();
        if (norm > config.grad_clip) grads *= config.grad_clip / norm;
      }
      ParamSet set = bind_params(model, grads);
      opt.step(set.params, set.grads);

      const double w = static_cast<double>(end - start);
      rec.loss += loss.total * w;
      rec.recon += loss.recon * w;
      rec.kl += loss.kl * w;
      rec.stationarity += loss.stationarity * w;
      weight += w;
    }
    rec.loss /= weight;
    rec.recon /= weight;
    rec.kl /= weight;
    rec.stationarity /= weight;

    if (val_count > 0) {
      // Deterministic validation: posterior mean (eps = 0).
      const Tensor vy1 = data.y1.rows_slice(train_count, P);
      const Tensor vy2 = data.y2.rows_slice(train_count, P);
      const Tensor vm1 =
          data.m1.numel() == 0 ? Tensor() : data.m1.rows_slice(train_count, P);
      const Tensor vm2 =
          data.m2.numel() == 0 ? Tensor() : data.m2.rows_slice(train_count, P);
      const Tensor veps(val_count, 2 * model.n);
      rec.val_loss = dvae_loss(model, vy1, vy2, vm1, vm2, veps, nullptr).total;
    }

    const auto t1 = std::chrono::steady_clock::now();
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec);
  }
  return report;
}

Tensor estimate_initial_state(const DvaeModel& model, const Tensor& y1, const Tensor& y2) {
  Tensor a = y1.ndim() == 1 ? y1.reshaped({1, y1.numel()}) : y1;
  Tensor b = y2.ndim() == 1 ? y2.reshaped({1, y2.numel()}) : y2;
  check_frames(a, model.d, "estimate_initial_state y1");
  check_frames(b, model.d, "estimate_initial_state y2");
  const Tensor out = mlp_forward(model.encoder, hcat(a, b));
  Tensor h0(std::vector<std::size_t>{model.n});
  for (std::size_t j = 0; j < model.n; ++j) h0[j] = out.at(0, j);
  return h0;
}

Tensor synthesize(const DvaeModel& model, const Tensor& h0, std::size_t steps, Prng& rng,
                  bool add_noise) {
  if (h0.numel() != model.n) throw ShapeError("synthesize: h0 length != n");
  if (steps == 0) return Tensor(0, model.d);
  const Tensor states = sample_var1(model.dyn, h0, steps, rng);
  Tensor frames = mlp_forward(model.decoder, states);
  if (add_noise) {
    const double sd = std::sqrt(model.sigma_y2);
    for (std::size_t i = 0; i < frames.numel(); ++i) frames[i] += sd * rng.gaussian();
  }
  return frames;
}

// ---- order 2 ----------------------------------------------------------------

Dvae2Grads Dvae2Grads::zeros_like(const Dvae2Model& model) {
  Dvae2Grads g;
  g.layer.F1 = Tensor(model.n, model.n);
  g.layer.F2 = Tensor(model.n, model.n);
  g.layer.F3 = Tensor(model.n, model.n);
  g.layer.F4 = Tensor(model.n, model.n);
  g.layer.F5 = Tensor(model.n, model.n);
  g.decoder = MlpGrads::zeros_like(model.decoder);
  g.encoder = MlpGrads::zeros_like(model.encoder);
  return g;
}

Dvae2Grads& Dvae2Grads::operator*=(double s) {
  layer.F1 *= s;
  layer.F2 *= s;
  layer.F3 *= s;
  layer.F4 *= s;
  layer.F5 *= s;
  decoder *= s;
  encoder *= s;
  return *this;
}

double Dvae2Grads::global_norm() const {
  double acc = sq_norm_of(decoder) + sq_norm_of(encoder);
  for (const Tensor* t : {&layer.F1, &layer.F2, &layer.F3, &layer.F4, &layer.F5}) {
    const double f = t->frobenius_norm();
    acc += f * f;
  }
  return std::sqrt(acc);
}

LossBreakdown dvae2_loss(const Dvae2Model& model, const Tensor& y1, const Tensor& y2,
                         const Tensor& y3, const Tensor& m1, const Tensor& m2,
                         const Tensor& m3, const Tensor& eps, Dvae2Grads* grads) {
  check_frames(y1, model.d, "dvae2_loss y1");
  check_frames(y2, model.d, "dvae2_loss y2");
  check_frames(y3, model.d, "dvae2_loss y3");
  if (y1.rows() != y2.rows() || y1.rows() != y3.rows())
    throw ShapeError("dvae2_loss: batch size mismatch");
  check_mask(m1, y1, "dvae2_loss m1");
  check_mask(m2, y2, "dvae2_loss m2");
  check_mask(m3, y3, "dvae2_loss m3");
  const std::size_t b = y1.rows();
  if (b == 0) throw UsageError("dvae2_loss: empty batch");
  const std::size_t n = model.n, three_n = 3 * n;
  if (eps.ndim() != 2 || eps.rows() != b || eps.cols() != three_n)
    throw ShapeError("dvae2_loss: eps must be batch x 3n");

  const Tensor enc_in = hcat(hcat(masked(y1, m1), masked(y2, m2)), masked(y3, m3));
  const MlpCache enc_cache = mlp_forward_cached(model.encoder, enc_in);
  Tensor mu = enc_cache.output.cols_slice(0, three_n);
  const Tensor raw_lv = enc_cache.output.cols_slice(three_n, 2 * three_n);
  Tensor lv = raw_lv;
  double clamp_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lv.numel(); ++i) {
    clamp_margin = std::min(clamp_margin, std::fabs(kLogvarClamp - std::fabs(lv[i])));
    lv[i] = std::clamp(lv[i], -kLogvarClamp, kLogvarClamp);
  }
  Tensor std_dev = lv;
  for (std::size_t i = 0; i < std_dev.numel(); ++i) std_dev[i] = std::exp(0.5 * std_dev[i]);
  Tensor x = mu;
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += std_dev[i] * eps[i];

  const Tensor x1 = x.cols_slice(0, n);
  const Tensor x2 = x.cols_slice(n, 2 * n);
  const Tensor x3 = x.cols_slice(2 * n, three_n);
  Tensor xb = mat_mul(x1, transpose(model.layer.F1));
  xb += mat_mul(x2, transpose(model.layer.F2));
  Tensor xc = mat_mul(x1, transpose(model.layer.F3));
  xc += mat_mul(x2, transpose(model.layer.F4));
  xc += mat_mul(x3, transpose(model.layer.F5));

  const MlpCache dec1 = mlp_forward_cached(model.decoder, x1);
  const MlpCache dec2 = mlp_forward_cached(model.decoder, xb);
  const MlpCache dec3 = mlp_forward_cached(model.decoder, xc);

  Tensor r1 = dec1.output - y1;
  Tensor r2 = dec2.output - y2;
  Tensor r3 = dec3.output - y3;
  if (m1.numel() != 0) r1.hadamard_inplace(m1);
  if (m2.numel() != 0) r2.hadamard_inplace(m2);
  if (m3.numel() != 0) r3.hadamard_inplace(m3);

  const double inv_var = 1.0 / model.sigma_y2;
  double recon_sum = 0.0;
  for (std::size_t i = 0; i < r1.numel(); ++i)
    recon_sum += r1[i] * r1[i] + r2[i] * r2[i] + r3[i] * r3[i];
  recon_sum *= 0.5 * inv_var;

  double kl_sum = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i)
    kl_sum += 0.5 * (std::exp(lv[i]) + mu[i] * mu[i] - 1.0 - lv[i]);

  const double reg =
      order2_regularizer(model.layer, model.lambda1, model.lambda2, model.lambda3);
  const double inv_b = 1.0 / static_cast<double>(b);

  LossBreakdown out;
  out.recon = recon_sum * inv_b;
  out.kl = kl_sum * inv_b;
  out.stationarity = reg;  // already weighted by the lambdas
  out.total = out.recon + out.kl + reg;
  out.kink_margin = std::min({enc_cache.kink_margin, dec1.kink_margin, dec2.kink_margin,
                              dec3.kink_margin, clamp_margin});
  if (!grads) return out;

  Tensor g1 = std::move(r1);
  g1 *= inv_var * inv_b;
  Tensor g2 = std::move(r2);
  g2 *= inv_var * inv_b;
  Tensor g3 = std::move(r3);
  g3 *= inv_var * inv_b;

  Tensor dx1 = mlp_backward(model.decoder, dec1, g1, grads->decoder);
  const Tensor dxb = mlp_backward(model.decoder, dec2, g2, grads->decoder);
  const Tensor dxc = mlp_backward(model.decoder, dec3, g3, grads->decoder);

  grads->layer.F1 += mat_mul(transpose(dxb), x1);
  grads->layer.F2 += mat_mul(transpose(dxb), x2);
  grads->layer.F3 += mat_mul(transpose(dxc), x1);
  grads->layer.F4 += mat_mul(transpose(dxc), x2);
  grads->layer.F5 += mat_mul(transpose(dxc), x3);

  dx1 += mat_mul(dxb, model.layer.F1);
  dx1 += mat_mul(dxc, model.layer.F3);
  Tensor dx2 = mat_mul(dxb, model.layer.F2);
  dx2 += mat_mul(dxc, model.layer.F4);
  const Tensor dx3 = mat_mul(dxc, model.layer.F5);

  Tensor dmu = hcat(hcat(dx1, dx2), dx3);
  Tensor dlv(b, three_n);
  for (std::size_t i = 0; i < dmu.numel(); ++i) {
    dlv[i] = dmu[i] * eps[i] * 0.5 * std_dev[i];
    dmu[i] += mu[i] * inv_b;
    dlv[i] += 0.5 * (std::exp(lv[i]) - 1.0) * inv_b;
    if (std::fabs(raw_lv[i]) > kLogvarClamp) dlv[i] = 0.0;
  }
  mlp_backward(model.encoder, enc_cache, hcat(dmu, dlv), grads->encoder);

  const Order2Grads rg =
      order2_regularizer_grad(model.layer, model.lambda1, model.lambda2, model.lambda3);
  grads->layer.F1 += rg.F1;
  grads->layer.F2 += rg.F2;
  grads->layer.F3 += rg.F3;
  grads->layer.F4 += rg.F4;
  grads->layer.F5 += rg.F5;
  return out;
}

namespace {

ParamSet bind_params2(Dvae2Model& m, Dvae2Grads& g) {
  ParamSet s;
  s.params = {&m.layer.F1, &m.layer.F2, &m.layer.F3, &m.layer.F4, &m.layer.F5};
  s.grads = {&g.layer.F1, &g.layer.F2, &g.layer.F3, &g.layer.F4, &g.layer.F5};
  for (std::size_t i = 0; i < m.decoder.layers.size(); ++i) {
    s.params.push_back(&m.decoder.layers[i].weight);
    s.params.push_back(&m.decoder.layers[i].bias);
    s.grads.push_back(&g.decoder.layers[i].weight);
    s.grads.push_back(&g.decoder.layers[i].bias);
  }
  for (std::size_t i = 0; i < m.encoder.layers.size(); ++i) {
    s.params.push_back(&m.encoder.layers[i].weight);
    s.params.push_back(&m.encoder.layers[i].bias);
    s.grads.push_back(&g.encoder.layers[i].weight);
    s.grads.push_back(&g.encoder.layers[i].bias);
  }
  return s;
}

}  // namespace

TrainReport train2(Dvae2Model& model, const TripleBatch& data, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  if (data.y1.ndim() != 2 || data.y1.rows() == 0)
    throw UsageError("train2: need at least one frame triple");
  if (config.batch_size == 0) throw UsageError("train2: batch_size must be >= 1");
  if (config.latent_n != model.n) throw UsageError("train2: config latent_n != model n");
  if (data.y1.cols() != model.d) throw ShapeError("train2: frame dim != model d");
  model.sigma_y2 = config.sigma_y2;
  model.lambda1 = model.lambda2 = model.lambda3 = config.lambda;

  const std::size_t P = data.y1.rows();
  Prng rng(config.seed);
  Adam opt(AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  {
    Dvae2Grads g = Dvae2Grads::zeros_like(model);
    for (Tensor* p : bind_params2(model, g).params) opt.add_param(*p);
  }

  TrainReport report;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> perm = rng.permutation(P);
    EpochRecord rec;
    double weight = 0.0;
    for (std::size_t start = 0; start < P; start += config.batch_size) {
      const std::size_t end = std::min(P, start + config.batch_size);
      const Tensor by1 = gather_rows(data.y1, perm, start, end);
      const Tensor by2 = gather_rows(data.y2, perm, start, end);
      const Tensor by3 = gather_rows(data.y3, perm, start, end);
      const Tensor bm1 = gather_rows(data.m1, perm, start, end);
      const Tensor bm2 = gather_rows(data.m2, perm, start, end);
      const Tensor bm3 = gather_rows(data.m3, perm, start, end);
      const Tensor eps = rng.gaussian_tensor({end - start, 3 * model.n});

      Dvae2Grads grads = Dvae2Grads::zeros_like(model);
      const LossBreakdown loss = dvae2_loss(model, by1, by2, by3, bm1, bm2, bm3, eps, &grads);
      if (!std::isfinite(loss.total))
        throw TrainingDivergedError("train2: non-finite loss in epoch " +
                                    std::to_string(epoch + 1));
      if (config.grad_clip > 0.0) {
        const double norm = grads.global_norm();
        if (norm > config.grad_clip) grads *= config.grad_clip / norm;
      }
      ParamSet set = bind_params2(model, grads);
      opt.step(set.params, set.grads);

      const double w = static_cast<double>(end - start);
      rec.loss += loss.total * w;
      rec.recon += loss.recon * w;
      rec.kl += loss.kl * w;
      rec.stationarity += loss.stationarity * w;
      weight += w;
    }
    rec.loss /= weight;
    rec.recon /= weight;
    rec.kl /= weight;
    rec.stationarity /= weight;
    const auto t1 = std::chrono::steady_clock::now();
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec);
  }
  return report;
}

Tensor synthesize2(const Dvae2Model& model, const Tensor& h0, const Tensor& h1,
                   std::size_t steps, Prng& rng) {
  if (h0.numel() != model.n || h1.numel() != model.n)
    throw ShapeError("synthesize2: h0/h1 length != n");
  if (steps == 0) return Tensor(0, model.d);
  const Var2Model dyn = solve_order2(model.layer.F1, model.layer.F3);
  const Tensor states = sample_var2(dyn, h0, h1, steps, rng);
  return mlp_forward(model.decoder, states);
}

InitialState2 estimate_initial_state2(const Dvae2Model& model, const Tensor& y1,
                                      const Tensor& y2, const Tensor& y3) {
  Tensor a = y1.ndim() == 1 ? y1.reshaped({1, y1.numel()}) : y1;
  Tensor b = y2.ndim() == 1 ? y2.reshaped({1, y2.numel()}) : y2;
  Tensor c = y3.ndim() == 1 ? y3.reshaped({1, y3.numel()}) : y3;
  check_frames(a, model.d, "estimate_initial_state2 y1");
  check_frames(b, model.d, "estimate_initial_state2 y2");
  check_frames(c, model.d, "estimate_initial_state2 y3");
  const Tensor out = mlp_forward(model.encoder, hcat(hcat(a, b), c));
  InitialState2 st{Tensor(std::vector<std::size_t>{model.n}),
                   Tensor(std::vector<std::size_t>{model.n})};
  for (std::size_t j = 0; j < model.n; ++j) {
    st.h0[j] = out.at(0, j);
    st.h1[j] = out.at(0, model.n + j);
  }
  return st;
}

}  // namespace dvae
