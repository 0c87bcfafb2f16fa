// Command-line front end: synthetic data generation, training, synthesis,
// LDS baseline fitting, evaluation, and a gradient self-check.
//
// Exit codes: 0 ok, 2 config/usage error, 3 IO/format error, 4 numeric
// failure (divergence, failed gradient check, ...).

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dvae/checkpoint.hpp"
#include "dvae/data_io.hpp"
#include "dvae/dvae.hpp"
#include "dvae/errors.hpp"
#include "dvae/eval.hpp"
#include "dvae/gradcheck.hpp"
#include "dvae/lds.hpp"
#include "dvae/linalg.hpp"
#include "dvae/synthetic.hpp"
#include "dvae/tensor.hpp"

namespace {

using json = nlohmann::json;
using namespace dvae;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
  return j;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw UsageError(where + ": unknown key \"" + it.key() + "\"");
  }
}

double get_double(const json& j, const char* key, double dflt, const std::string& where) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number()) throw UsageError(where + "." + key + ": expected a number");
  return v.get<double>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t dflt,
                      const std::string& where) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
    throw UsageError(where + "." + key + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::size_t get_size(const json& j, const char* key, std::size_t dflt, const std::string& where) {
  return static_cast<std::size_t>(get_u64(j, key, dflt, where));
}

std::string get_string(const json& j, const char* key, const std::string& dflt,
                       const std::string& where) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_string()) throw UsageError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

std::vector<std::size_t> get_size_array(const json& j, const char* key,
                                        std::vector<std::size_t> dflt, const std::string& where) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_array()) throw UsageError(where + "." + key + ": expected an array of layer widths");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 1)
      throw UsageError(where + "." + key + ": layer widths must be positive integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

void clamp01(Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::min(1.0, std::max(0.0, t[i]));
}

// Fails fast on unwritable output locations so long jobs do not discover
// them at save time. Leaves pre-existing files untouched.
void ensure_writable(const std::string& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const bool existed = fs::exists(path, ec);
  std::ofstream probe(path, std::ios::binary | std::ios::app);
  if (!probe) throw IoError(path + ": cannot open for writing");
  probe.close();
  if (!existed) fs::remove(path, ec);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text << "\n";
  if (!out) throw IoError(path + ": write failed");
}

// ---- gen-synthetic ----------------------------------------------------------

SyntheticSpec spec_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"kind", "resolution", "length", "seed", "angular_velocity", "noise_scale",
                       "cycle_period", "latent_dim"},
                      where);
  if (!j.contains("kind")) throw UsageError(where + ".kind: required");
  SyntheticSpec s;
  s.kind = get_string(j, "kind", "", where);
  s.resolution = get_size(j, "resolution", s.resolution, where);
  s.length = get_size(j, "length", s.length, where);
  s.seed = get_u64(j, "seed", s.seed, where);
  s.angular_velocity = get_double(j, "angular_velocity", s.angular_velocity, where);
  s.noise_scale = get_double(j, "noise_scale", s.noise_scale, where);
  s.cycle_period = get_size(j, "cycle_period", s.cycle_period, where);
  s.latent_dim = get_size(j, "latent_dim", s.latent_dim, where);
  return s;
}

void cmd_gen_synthetic(const std::string& spec_path, const std::string& out_path) {
  const json j = load_json_file(spec_path);
  const SyntheticSpec spec = spec_from_json(j, spec_path);
  const SyntheticResult res = gen_synthetic(spec);
  save_seq(res.seq, out_path);
  std::printf("wrote %zu frames (%zux%zux%zu) to %s\n", res.seq.num_frames(), res.seq.height,
              res.seq.width, res.seq.channels, out_path.c_str());
  if (res.true_A.numel() > 0)
    std::printf("generating process: spectral radius %.4f\n", spectral_radius(res.true_A));
}

// ---- train ------------------------------------------------------------------

struct TrainSetup {
  TrainConfig cfg;
  std::vector<std::size_t> decoder_hidden{64};
  std::vector<std::size_t> encoder_hidden{64};
  Activation hidden_act = Activation::Tanh;
  Activation out_act = Activation::Sigmoid;
  int order = 1;
};

TrainSetup parse_train_config(const json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "learning_rate", "seed", "lambda", "sigma_y2",
                       "latent_n", "grad_clip", "validation_fraction", "decoder_hidden",
                       "encoder_hidden", "hidden_activation", "decoder_output_activation",
                       "order"},
                      where);
  TrainSetup s;
  s.cfg.epochs = get_size(j, "epochs", s.cfg.epochs, where);
  s.cfg.batch_size = get_size(j, "batch_size", s.cfg.batch_size, where);
  s.cfg.lr = get_double(j, "learning_rate", s.cfg.lr, where);
  s.cfg.seed = get_u64(j, "seed", s.cfg.seed, where);
  s.cfg.lambda = get_double(j, "lambda", s.cfg.lambda, where);
  s.cfg.sigma_y2 = get_double(j, "sigma_y2", s.cfg.sigma_y2, where);
  s.cfg.latent_n = get_size(j, "latent_n", s.cfg.latent_n, where);
  s.cfg.grad_clip = get_double(j, "grad_clip", s.cfg.grad_clip, where);
  s.cfg.validation_fraction =
      get_double(j, "validation_fraction", s.cfg.validation_fraction, where);
  s.decoder_hidden = get_size_array(j, "decoder_hidden", s.decoder_hidden, where);
  s.encoder_hidden = get_size_array(j, "encoder_hidden", s.encoder_hidden, where);
  s.hidden_act = activation_from_name(
      get_string(j, "hidden_activation", activation_name(s.hidden_act), where));
  s.out_act = activation_from_name(
      get_string(j, "decoder_output_activation", activation_name(s.out_act), where));
  s.order = static_cast<int>(get_size(j, "order", 1, where));
  if (s.order != 1 && s.order != 2) throw UsageError(where + ".order: must be 1 or 2");
  return s;
}

void cmd_train(const std::string& config_path, const std::string& data_path,
               const std::string& mask_path, const std::string& out_path) {
  const json j = load_json_file(config_path);
  const TrainSetup setup = parse_train_config(j, config_path);
  ensure_writable(out_path);

  SequenceData seq = load_seq(data_path);
  if (!mask_path.empty()) seq.mask = load_mask(mask_path, seq);
  std::printf("loaded %zu frames (%zux%zux%zu)%s from %s\n", seq.num_frames(), seq.height,
              seq.width, seq.channels, seq.has_mask() ? " with mask" : "", data_path.c_str());

  DvaeArch arch;
  arch.n = setup.cfg.latent_n;
  arch.d = seq.frame_dim();
  arch.decoder_hidden = setup.decoder_hidden;
  arch.encoder_hidden = setup.encoder_hidden;
  arch.hidden_act = setup.hidden_act;
  arch.decoder_out_act = setup.out_act;
  arch.sigma_y2 = setup.cfg.sigma_y2;
  arch.lambda = setup.cfg.lambda;

  // Distinct stream for initialization; training reseeds from cfg.seed.
  Prng init_rng(setup.cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const bool has_val = setup.cfg.validation_fraction > 0.0;
  const std::size_t total = setup.cfg.epochs;
  auto printer = [has_val, total](std::size_t epoch, const EpochRecord& r) {
    std::printf("epoch %4zu/%zu  loss=%.6f  recon=%.6f  kl=%.6f  stat=%.3e", epoch + 1, total,
                r.loss, r.recon, r.kl, r.stationarity);
    if (has_val) std::printf("  val=%.6f", r.val_loss);
    std::printf("  %.2fs\n", r.seconds);
    std::fflush(stdout);
  };

  CheckpointMeta meta;
  meta.seed = setup.cfg.seed;
  meta.height = seq.height;
  meta.width = seq.width;
  meta.channels = seq.channels;

  if (setup.order == 1) {
    DvaeModel model = make_dvae(arch, init_rng);
    const PairBatch pairs = make_pairs(seq);
    const TrainReport rep = train(model, pairs, setup.cfg, printer);
    meta.epochs = rep.epochs.size();
    meta.final_loss = rep.epochs.empty() ? 0.0 : rep.epochs.back().loss;
    save_checkpoint(model, meta, out_path);
  } else {
    Dvae2Model model = make_dvae2(arch, init_rng);
    const TripleBatch triples = make_triples(seq);
    const TrainReport rep = train2(model, triples, setup.cfg, printer);
    meta.epochs = rep.epochs.size();
    meta.final_loss = rep.epochs.empty() ? 0.0 : rep.epochs.back().loss;
    save_checkpoint2(model, meta, out_path);
  }
  std::printf("wrote checkpoint to %s\n", out_path.c_str());
}

// ---- synth ------------------------------------------------------------------

void cmd_synth(const std::string& model_path, std::size_t frames, std::uint64_t seed,
               const std::string& init_from, const std::string& out_path, bool add_noise) {
  const LoadedCheckpoint lc = load_checkpoint(model_path);
  Prng rng(seed);
  std::size_t height = lc.meta.height, width = lc.meta.width, channels = lc.meta.channels;
  const std::size_t d = lc.order == 1 ? lc.model.d : lc.model2.d;

  Tensor out_frames;
  if (lc.order == 1) {
    const DvaeModel& m = lc.model;
    Tensor h0 = Tensor::zeros({m.n});
    if (!init_from.empty()) {
      const SequenceData s = load_seq(init_from);
      if (s.frame_dim() != m.d)
        throw UsageError("--init-from: frame dimension " + std::to_string(s.frame_dim()) +
                         " does not match the model (" + std::to_string(m.d) + ")");
      if (s.num_frames() < 2) throw UsageError("--init-from: need at least 2 frames");
      h0 = estimate_initial_state(m, s.frames.row(0), s.frames.row(1));
      if (height * width * channels == 0) {
        height = s.height;
        width = s.width;
        channels = s.channels;
      }
    }
    out_frames = synthesize(m, h0, frames, rng, add_noise);
  } else {
    const Dvae2Model& m = lc.model2;
    Tensor h0 = Tensor::zeros({m.n});
    Tensor h1 = Tensor::zeros({m.n});
    if (!init_from.empty()) {
      const SequenceData s = load_seq(init_from);
      if (s.frame_dim() != m.d)
        throw UsageError("--init-from: frame dimension " + std::to_string(s.frame_dim()) +
                         " does not match the model (" + std::to_string(m.d) + ")");
      if (s.num_frames() < 3)
        throw UsageError("--init-from: need at least 3 frames for an order-2 model");
      const InitialState2 st =
          estimate_initial_state2(m, s.frames.row(0), s.frames.row(1), s.frames.row(2));
      h0 = st.h0;
      h1 = st.h1;
      if (height * width * channels == 0) {
        height = s.height;
        width = s.width;
        channels = s.channels;
      }
    }
    out_frames = synthesize2(m, h0, h1, frames, rng);
    if (add_noise) {
      const double sd = std::sqrt(m.sigma_y2);
      for (std::size_t i = 0; i < out_frames.numel(); ++i) out_frames[i] += sd * rng.gaussian();
    }
  }

  if (height * width * channels == 0)
    throw UsageError("checkpoint stores no frame geometry; pass --init-from <seq>");
  if (height * width * channels != d)
    throw UsageError("frame geometry " + std::to_string(height) + "x" + std::to_string(width) +
                     "x" + std::to_string(channels) + " does not match the model dimension " +
                     std::to_string(d));

  clamp01(out_frames);
  SequenceData out;
  out.frames = out_frames;
  out.height = height;
  out.width = width;
  out.channels = channels;
  save_seq(out, out_path);
  std::printf("wrote %zu frames to %s\n", frames, out_path.c_str());
}

// ---- lds-fit ----------------------------------------------------------------

void cmd_lds_fit(const std::string& data_path, std::size_t n, std::size_t frames,
                 std::uint64_t seed, const std::string& out_path,
                 const std::string& report_path) {
  const SequenceData seq = load_seq(data_path);
  const LdsModel model = fit_lds(seq.frames, n);

  const Tensor recon = reconstruct_lds(seq.frames, model);
  Tensor diff = recon;
  diff -= seq.frames;
  Tensor centered = seq.frames;
  for (std::size_t i = 0; i < centered.rows(); ++i)
    for (std::size_t k = 0; k < centered.cols(); ++k) centered.at(i, k) -= model.y_bar[k];
  const double rel_err = diff.frobenius_norm() / std::max(centered.frobenius_norm(), 1e-300);
  const double radius = spectral_radius(model.A);

  std::printf("fit: %zu frames, d=%zu, n=%zu\n", seq.num_frames(), seq.frame_dim(), n);
  std::printf("relative reconstruction error: %.6e\n", rel_err);
  std::printf("spectral radius of A: %.6f\n", radius);

  if (!report_path.empty()) {
    json rep;
    rep["schema_version"] = 1;
    rep["latent_n"] = n;
    rep["num_frames"] = seq.num_frames();
    rep["frame_dim"] = seq.frame_dim();
    rep["relative_recon_error"] = rel_err;
    rep["spectral_radius"] = radius;
    json eigs = json::array();
    for (const auto& ev : eigenvalues(model.A)) eigs.push_back({ev.real(), ev.imag()});
    rep["eigenvalues"] = eigs;
    write_text_file(report_path, rep.dump(2));
  }

  if (frames > 0) {
    if (out_path.empty()) throw UsageError("--frames requires --out");
    Prng rng(seed);
    Tensor dev(std::vector<std::size_t>{seq.frame_dim()});
    for (std::size_t k = 0; k < seq.frame_dim(); ++k) dev[k] = seq.frames.at(0, k) - model.y_bar[k];
    const Tensor h0 = mat_vec(transpose(model.C), dev);
    Tensor syn = synthesize_lds(model, h0, frames, rng);
    clamp01(syn);
    SequenceData out;
    out.frames = syn;
    out.height = seq.height;
    out.width = seq.width;
    out.channels = seq.channels;
    save_seq(out, out_path);
    std::printf("wrote %zu synthesized frames to %s\n", frames, out_path.c_str());
  }
}

// ---- eval -------------------------------------------------------------------

void cmd_eval(const std::string& ref_path, const std::string& gen_path, std::size_t lags,
              const std::string& out_path) {
  const SequenceData ref = load_seq(ref_path);
  const SequenceData gen = load_seq(gen_path);
  EvalOptions opt;
  opt.lags = lags;
  const EvalReport rep = evaluate(ref, gen, opt);
  const std::string text = eval_report_json(rep);
  std::cout << text << "\n";
  if (!out_path.empty()) write_text_file(out_path, text);
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed) {
  DvaeArch arch;
  arch.n = 1;
  arch.d = 4;
  arch.decoder_hidden = {6};
  arch.encoder_hidden = {6};
  arch.sigma_y2 = 0.7;
  arch.lambda = 100.0;
  Prng rng(seed);
  DvaeModel model = make_dvae(arch, rng);
  const Tensor y1 = rng.uniform_tensor({3, 4}, 0.05, 0.95);
  const Tensor y2 = rng.uniform_tensor({3, 4}, 0.05, 0.95);
  const Tensor eps = rng.gaussian_tensor({3, 2});

  GradcheckProblem prob;
  prob.params = {&model.dyn.A, &model.dyn.B};
  for (auto& layer : model.decoder.layers) {
    prob.params.push_back(&layer.weight);
    prob.params.push_back(&layer.bias);
  }
  for (auto& layer : model.encoder.layers) {
    prob.params.push_back(&layer.weight);
    prob.params.push_back(&layer.bias);
  }
  prob.loss = [&](double* kink) {
    const LossBreakdown lb = dvae_loss(model, y1, y2, Tensor(), Tensor(), eps, nullptr);
    if (kink) *kink = lb.kink_margin;
    return lb.total;
  };
  prob.grads = [&]() {
    DvaeGrads g = DvaeGrads::zeros_like(model);
    dvae_loss(model, y1, y2, Tensor(), Tensor(), eps, &g);
    std::vector<Tensor> out{g.A, g.B};
    for (auto& lg : g.decoder.layers) {
      out.push_back(lg.weight);
      out.push_back(lg.bias);
    }
    for (auto& lg : g.encoder.layers) {
      out.push_back(lg.weight);
      out.push_back(lg.bias);
    }
    return out;
  };

  GradcheckOptions opts;
  opts.seed = seed + 0x517cc1b727220a95ULL;
  const GradcheckReport rep = gradcheck(prob, opts);
  std::printf("checked %zu coordinates (%zu skipped near kinks)\n", rep.checked, rep.skipped);
  std::printf("max relative error: %.3e (param %zu, index %zu: analytic %.9e vs numeric %.9e)\n",
              rep.max_rel_err, rep.worst_param, rep.worst_index, rep.worst_analytic,
              rep.worst_numeric);
  if (!(rep.max_rel_err <= 1e-4)) {
    std::fprintf(stderr, "error: gradient check failed (threshold 1e-4)\n");
    return kExitNumeric;
  }
  std::printf("gradient check passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvae: variational autoencoder with an embedded linear dynamic layer"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  auto* gen = app.add_subcommand("gen-synthetic", "generate a toy sequence from a JSON spec");
  gen->add_option("--spec", spec_path, "JSON spec file")->required();
  gen->add_option("--out", out_path, "output sequence path")->required();

  std::string train_config, train_data, train_mask, train_out;
  auto* tr = app.add_subcommand("train", "train a model on a sequence file");
  tr->add_option("--config", train_config, "JSON training config")->required();
  tr->add_option("--data", train_data, "input sequence")->required();
  tr->add_option("--mask", train_mask, "observation mask");
  tr->add_option("--out", train_out, "output checkpoint path")->required();

  std::string synth_model, synth_init, synth_out;
  std::size_t synth_frames = 0;
  std::uint64_t synth_seed = 0;
  bool synth_noise = false;
  auto* sy = app.add_subcommand("synth", "synthesize frames from a trained checkpoint");
  sy->add_option("--model", synth_model, "checkpoint path")->required();
  sy->add_option("--frames", synth_frames, "number of frames")->required();
  sy->add_option("--seed", synth_seed, "sampling seed")->required();
  sy->add_option("--init-from", synth_init, "sequence whose first frames set the initial state");
  sy->add_option("--out", synth_out, "output sequence path")->required();
  sy->add_flag("--add-noise", synth_noise, "add observation noise to the decoded frames");

  std::string lds_data, lds_out, lds_report;
  std::size_t lds_n = 10, lds_frames = 0;
  std::uint64_t lds_seed = 0;
  auto* lf = app.add_subcommand("lds-fit", "fit the linear baseline and optionally synthesize");
  lf->add_option("--data", lds_data, "input sequence")->required();
  lf->add_option("--latent", lds_n, "state dimension");
  lf->add_option("--frames", lds_frames, "synthesized frame count");
  lf->add_option("--seed", lds_seed, "sampling seed");
  lf->add_option("--out", lds_out, "output sequence path (with --frames)");
  lf->add_option("--report", lds_report, "write a JSON fit report here");

  std::string eval_ref, eval_gen, eval_out;
  std::size_t eval_lags = 5;
  auto* ev = app.add_subcommand("eval", "compare a generated sequence against a reference");
  ev->add_option("--ref", eval_ref, "reference sequence")->required();
  ev->add_option("--gen", eval_gen, "generated sequence")->required();
  ev->add_option("--lags", eval_lags, "autocorrelation lags");
  ev->add_option("--out", eval_out, "also write the JSON report here");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training gradients");
  gc->add_option("--seed", gc_seed, "model/data seed");

  int rc = 0;
  gen->callback([&] { cmd_gen_synthetic(spec_path, out_path); });
  tr->callback([&] { cmd_train(train_config, train_data, train_mask, train_out); });
  sy->callback([&] {
    cmd_synth(synth_model, synth_frames, synth_seed, synth_init, synth_out, synth_noise);
  });
  lf->callback([&] { cmd_lds_fit(lds_data, lds_n, lds_frames, lds_seed, lds_out, lds_report); });
  ev->callback([&] { cmd_eval(eval_ref, eval_gen, eval_lags, eval_out); });
  gc->callback([&] { rc = cmd_gradcheck(gc_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {  // UsageError, ShapeError, anything else domain-level
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return rc;
}
