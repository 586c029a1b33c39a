#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "disret/checkpoint.hpp"
#include "disret/dataset.hpp"
#include "disret/errors.hpp"
#include "disret/losses.hpp"
#include "disret/network.hpp"
#include "disret/tape.hpp"

namespace disret {

struct TrainConfig {
  double learning_rate = 1e-3;  // desk-scale default; 1e-5 suits large nets
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t iterations_per_epoch = 0;  // 0: ceil(#anchors / batch_size)
  std::size_t epochs_phase1 = 200;
  std::size_t epochs_phase2 = 100;
  std::size_t d_steps_per_g_step = 1;
  std::size_t unseen_samples_per_class_per_domain = 50;
  std::uint64_t seed = 0;
  bool transductive = true;
  UganWiring ugan_wiring = UganWiring::Corrected;
  LossConfig loss;

  void validate() const {
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be > 0");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (d_steps_per_g_step < 1)
      throw ArgumentError("d_steps_per_g_step must be >= 1");
    if (loss.eta <= 0.0) throw ArgumentError("eta must be > 0");
    if (loss.lambda_rec < 0.0) throw ArgumentError("lambda_rec must be >= 0");
  }
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  Matrix m, v;
};

// One Adam update for a single tensor; `t` is the post-increment timestep.
inline void adam_step(Matrix& param, const Matrix& grad, AdamSlot& state,
                      std::size_t t, const AdamParams& cfg,
                      const std::string& name = "param") {
  if (!param.same_shape(grad))
    throw DimensionError("adam_step: param " + param.shape_str() + " vs grad " +
                         grad.shape_str());
  if (state.m.size() == 0) {
    state.m = Matrix(param.rows, param.cols);
    state.v = Matrix(param.rows, param.cols);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad.v[k];
    if (!std::isfinite(g))
      throw TrainingError("non-finite gradient in tensor '" + name + "'");
    state.m.v[k] = cfg.beta1 * state.m.v[k] + (1.0 - cfg.beta1) * g;
    state.v.v[k] = cfg.beta2 * state.v.v[k] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m.v[k] / bc1;
    const double vhat = state.v.v[k] / bc2;
    param.v[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Adam over a fixed set of networks. step() reads gradients from staged
// copies that must be passed in the same order the nets were attached.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const AdamParams& p) : p_(p) {}

  void attach(const std::string& name, Mlp* net) {
    for (std::size_t l = 0; l < net->layers.size(); ++l) {
      entries_.push_back({name + ".l" + std::to_string(l) + ".w",
                          &net->layers[l].w, AdamSlot{}});
      entries_.push_back({name + ".l" + std::to_string(l) + ".b",
                          &net->layers[l].b, AdamSlot{}});
    }
  }

  void step(const Tape& t, const std::vector<const TapedMlp*>& staged) {
    ++t_;
    std::size_t e = 0;
    for (const TapedMlp* tn : staged) {
      for (const auto& [wref, bref] : tn->params) {
        adam_step(*entries_[e].param, t.grad(wref), entries_[e].slot, t_, p_,
                  entries_[e].name);
        ++e;
        adam_step(*entries_[e].param, t.grad(bref), entries_[e].slot, t_, p_,
                  entries_[e].name);
        ++e;
      }
    }
    if (e != entries_.size())
      throw ContractError("optimizer step saw " + std::to_string(e) +
                          " tensors, expected " +
                          std::to_string(entries_.size()));
  }

  std::size_t timestep() const { return t_; }

 private:
  struct Entry {
    std::string name;
    Matrix* param;
    AdamSlot slot;
  };
  AdamParams p_;
  std::vector<Entry> entries_;
  std::size_t t_ = 0;
};

struct LossRow {
  double tri = 0, sem = 0, rec = 0, gan_d = 0, gan_g = 0;
  std::optional<double> ugan_d, ugan_g;
  double total = 0;
};

struct TrainResult {
  ModelBundle model;
  std::vector<LossRow> history;
};

// Unlabeled unseen features for the transductive branch; labels are never
// carried here, so phase 1 cannot read them.
struct UnlabeledFeatures {
  std::vector<std::vector<double>> shapes_a;
  std::vector<std::vector<double>> sketches_b;
  bool empty() const { return shapes_a.empty() || sketches_b.empty(); }
};

namespace detail {

inline Matrix stack_features(const std::vector<const FeatureRecord*>& recs) {
  Matrix m(recs.size(), recs.front()->feature.size());
  for (std::size_t i = 0; i < recs.size(); ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      m.at(i, j) = recs[i]->feature[j];
  return m;
}

inline Matrix stack_rows(const std::vector<const std::vector<double>*>& rows) {
  Matrix m(rows.size(), rows.front()->size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = (*rows[i])[j];
  return m;
}

struct Batch {
  Matrix f_a, f_b, f_c;  // positive / anchor / negative features
  Matrix w_a, w_c;       // word embeddings for anchor and negative labels
  Matrix w_u;            // unseen embeddings (transductive)
  Matrix u_a, u_b;       // unlabeled unseen features (transductive)
};

// All staged nets for a generator-side step, attach order fixed.
struct StagedModel {
  TapedMlp ei_a, ei_b, es_a, es_b, phi, gen, d_a, d_b;
};

inline StagedModel stage_all(Tape& t, const ModelBundle& m) {
  return {stage(t, m.ei_a), stage(t, m.ei_b), stage(t, m.es_a),
          stage(t, m.es_b), stage(t, m.phi),  stage(t, m.gen),
          stage(t, m.d_a),  stage(t, m.d_b)};
}

// Epoch loop shared by both phases. Transductive data may be null.
inline std::vector<LossRow> run_training(
    ModelBundle& model, const Dataset& data, const ZeroShotSplit& split,
    const WordEmbeddingTable& emb, const UnlabeledFeatures* unlabeled,
    const std::set<std::string>* unseen_for_gen, std::size_t epochs,
    const TrainConfig& cfg, std::uint64_t seed_salt) {
  cfg.validate();
  const bool transductive = unlabeled != nullptr;
  if (transductive && unlabeled->empty())
    throw ContractError("transductive training requires unlabeled features");

  TripletSampler sampler(data, split, cfg.seed * 0x9e3779b9ULL + seed_salt);
  Rng rng(cfg.seed * 0x85ebca6bULL + seed_salt + 1);

  std::vector<std::string> unseen_labels;
  if (transductive) {
    for (const auto& l : *unseen_for_gen) {
      emb.lookup(l);  // fail fast on missing embeddings
      unseen_labels.push_back(l);
    }
    if (unseen_labels.empty())
      throw ContractError("transductive training requires unseen labels");
  }

  AdamParams ap{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps};
  AdamOptimizer opt_g(ap), opt_d(ap);
  opt_g.attach("ei_a", &model.ei_a);
  opt_g.attach("ei_b", &model.ei_b);
  opt_g.attach("es_a", &model.es_a);
  opt_g.attach("es_b", &model.es_b);
  opt_g.attach("phi", &model.phi);
  opt_g.attach("gen", &model.gen);
  opt_d.attach("d_a", &model.d_a);
  opt_d.attach("d_b", &model.d_b);

  std::size_t anchors = 0;
  for (const auto& l : sampler.labels())
    anchors += data.of(l, Domain::SketchB).size();
  const std::size_t iters =
      cfg.iterations_per_epoch > 0
          ? cfg.iterations_per_epoch
          : (anchors + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<LossRow> history;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    LossRow acc;
    if (transductive) {
      acc.ugan_d = 0.0;
      acc.ugan_g = 0.0;
    }
    for (std::size_t it = 0; it < iters; ++it) {
      Batch b;
      {
        std::vector<const FeatureRecord*> pa, pb, pc;
        std::vector<const std::vector<double>*> wa, wc;
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
          Triplet tr = sampler.next();
          pb.push_back(tr.anchor);
          pa.push_back(tr.positive);
          pc.push_back(tr.negative);
          wa.push_back(&emb.lookup(tr.anchor->label));
          wc.push_back(&emb.lookup(tr.negative->label));
        }
        b.f_a = stack_features(pa);
        b.f_b = stack_features(pb);
        b.f_c = stack_features(pc);
        b.w_a = stack_rows(wa);
        b.w_c = stack_rows(wc);
      }
      if (transductive) {
        std::vector<const std::vector<double>*> wu, ua, ub;
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
          wu.push_back(
              &emb.lookup(unseen_labels[rng.uniform_index(unseen_labels.size())]));
          ua.push_back(&unlabeled->shapes_a[rng.uniform_index(
              unlabeled->shapes_a.size())]);
          ub.push_back(&unlabeled->sketches_b[rng.uniform_index(
              unlabeled->sketches_b.size())]);
        }
        b.w_u = stack_rows(wu);
        b.u_a = stack_rows(ua);
        b.u_b = stack_rows(ub);
      }

      // --- discriminator step(s): fakes detached via plain forward eval ---
      const bool adversarial = cfg.loss.use_gan;
      Matrix sem_a, sem_b, spec_a, spec_b;
      Matrix fake_a, fake_b, fake_ua, fake_ub;
      if (adversarial) {
        Matrix inv_a = model.ei_a.eval(b.f_a);
        Matrix inv_b = model.ei_b.eval(b.f_b);
        sem_a = model.phi.eval(inv_a);
        sem_b = model.phi.eval(inv_b);
        spec_a = model.es_a.eval(b.f_a);
        spec_b = model.es_b.eval(b.f_b);
        fake_a = model.gen.eval(combine(sem_b, spec_a));
        fake_b = model.gen.eval(combine(sem_a, spec_b));
        if (transductive) {
          fake_ua = model.gen.eval(combine(b.w_u, spec_a));
          fake_ub = model.gen.eval(combine(b.w_u, spec_b));
        }
      }
      double last_d = 0.0, last_ud = 0.0;
      for (std::size_t ds = 0; adversarial && ds < cfg.d_steps_per_g_step;
           ++ds) {
        Tape t;
        TapedMlp td_a = stage(t, model.d_a), td_b = stage(t, model.d_b);
        Ref loss_d =
            gan_loss_d(t, td_a, td_b, t.constant(b.f_a), t.constant(b.f_b),
                       t.constant(fake_a), t.constant(fake_b));
        last_d = t.scalar(loss_d);
        if (transductive) {
          Ref uloss_d = ugan_loss_d(t, td_a, td_b, t.constant(b.u_a),
                                    t.constant(b.u_b), t.constant(fake_ua),
                                    t.constant(fake_ub), cfg.ugan_wiring);
          last_ud = t.scalar(uloss_d);
          loss_d = t.add(loss_d, uloss_d);
        }
        if (!std::isfinite(t.scalar(loss_d)))
          throw TrainingError("non-finite discriminator loss at epoch " +
                              std::to_string(epoch) + " iteration " +
                              std::to_string(it));
        t.backward(loss_d);
        opt_d.step(t, {&td_a, &td_b});
      }
      acc.gan_d += last_d;
      if (transductive) *acc.ugan_d += last_ud;

      // --- generator-side step: everything except the discriminators ---
      Tape t;
      StagedModel s = stage_all(t, model);
      Ref f_a = t.constant(b.f_a), f_b = t.constant(b.f_b),
          f_c = t.constant(b.f_c);
      Ref inv_a = s.ei_a.forward(t, f_a);
      Ref inv_b = s.ei_b.forward(t, f_b);
      Ref inv_c = s.ei_a.forward(t, f_c);  // negative is a shape (domain A)
      Ref spc_a = s.es_a.forward(t, f_a);
      Ref spc_b = s.es_b.forward(t, f_b);
      Ref spc_c = s.es_a.forward(t, f_c);
      const bool need_phi = cfg.loss.use_semantic || cfg.loss.use_gan ||
                            cfg.loss.use_reconstruction;
      Ref e_a{}, e_b{}, e_c{};
      if (need_phi) {
        e_a = s.phi.forward(t, inv_a);
        e_b = s.phi.forward(t, inv_b);
        e_c = s.phi.forward(t, inv_c);
      }

      LossParts parts;
      parts.tri = triplet_loss(t, inv_b, inv_a, inv_c, cfg.loss.eta);
      if (cfg.loss.use_semantic)
        parts.sem = semantic_loss(t, e_a, e_b, e_c, t.constant(b.w_a),
                                  t.constant(b.w_c));
      if (cfg.loss.use_reconstruction) {
        Ref r_a = s.gen.forward(t, t.concat_cols(e_a, spc_a));
        Ref r_b = s.gen.forward(t, t.concat_cols(e_b, spc_b));
        Ref r_c = s.gen.forward(t, t.concat_cols(e_c, spc_c));
        parts.rec = reconstruction_loss(t, r_a, f_a, r_b, f_b, r_c, f_c);
      }
      if (cfg.loss.use_gan) {
        Ref g_a = s.gen.forward(t, t.concat_cols(e_b, spc_a));
        Ref g_b = s.gen.forward(t, t.concat_cols(e_a, spc_b));
        parts.gan = gan_loss_g(t, s.d_a, s.d_b, g_a, g_b);
      }
      if (transductive && cfg.loss.use_gan) {
        Ref w_u = t.constant(b.w_u);
        Ref gu_a = s.gen.forward(t, t.concat_cols(w_u, spc_a));
        Ref gu_b = s.gen.forward(t, t.concat_cols(w_u, spc_b));
        parts.ugan = ugan_loss_g(t, s.d_a, s.d_b, gu_a, gu_b);
      }
      Ref total = total_loss(t, parts, cfg.loss);
      const double total_v = t.scalar(total);
      if (!std::isfinite(total_v))
        throw TrainingError("non-finite total loss at epoch " +
                            std::to_string(epoch) + " iteration " +
                            std::to_string(it));
      t.backward(total);
      opt_g.step(t, {&s.ei_a, &s.ei_b, &s.es_a, &s.es_b, &s.phi, &s.gen});

      acc.tri += t.scalar(parts.tri);
      if (parts.sem) acc.sem += t.scalar(*parts.sem);
      if (parts.rec) acc.rec += t.scalar(*parts.rec);
      if (parts.gan) acc.gan_g += t.scalar(*parts.gan);
      if (transductive && parts.ugan) *acc.ugan_g += t.scalar(*parts.ugan);
      acc.total += total_v;
    }
    const double inv = 1.0 / static_cast<double>(iters);
    acc.tri *= inv;
    acc.sem *= inv;
    acc.rec *= inv;
    acc.gan_d *= inv;
    acc.gan_g *= inv;
    acc.total *= inv;
    if (transductive) {
      *acc.ugan_d *= inv;
      *acc.ugan_g *= inv;
    }
    history.push_back(acc);
  }
  return history;
}

}  // namespace detail

// Phase 1: full objective; the transductive branch (when enabled) sees only
// bare unlabeled feature vectors.
inline TrainResult train_phase1(ModelBundle model, const Dataset& seen,
                                const ZeroShotSplit& split,
                                const WordEmbeddingTable& emb,
                                const UnlabeledFeatures& unlabeled,
                                const TrainConfig& cfg) {
  TrainResult out{std::move(model), {}};
  out.history = detail::run_training(
      out.model, seen, split, emb, cfg.transductive ? &unlabeled : nullptr,
      cfg.transductive ? &split.unseen_labels : nullptr, cfg.epochs_phase1,
      cfg, /*seed_salt=*/1);
  return out;
}

// Unseen-class synthesis: unseen word embedding + specific feature of a
// uniformly drawn seen sample of the matching domain.
inline std::vector<FeatureRecord> synthesize_unseen(
    const ModelBundle& model, const WordEmbeddingTable& emb,
    const ZeroShotSplit& split, const Dataset& seen, const TrainConfig& cfg,
    Rng& rng) {
  std::vector<std::size_t> pool_a, pool_b;
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!split.is_seen(seen[k].label)) continue;
    (seen[k].domain == Domain::ShapeA ? pool_a : pool_b).push_back(k);
  }
  std::vector<FeatureRecord> out;
  for (const auto& label : split.unseen_labels) {
    const std::vector<double>& w_u = emb.lookup(label);
    for (Domain d : {Domain::ShapeA, Domain::SketchB}) {
      const auto& pool = d == Domain::ShapeA ? pool_a : pool_b;
      if (pool.empty() && cfg.unseen_samples_per_class_per_domain > 0)
        throw SamplingError("no seen samples in domain " +
                            std::string(1, domain_tag(d)));
      for (std::size_t k = 0; k < cfg.unseen_samples_per_class_per_domain;
           ++k) {
        const FeatureRecord& src = seen[pool[rng.uniform_index(pool.size())]];
        Matrix spec = model.specific_encoder(d).eval(
            Matrix::from_vector(src.feature));
        Matrix g = generate_unseen(model, w_u, spec);
        FeatureRecord r;
        r.id = "gen_" + label + "_" + domain_tag(d) + std::to_string(k);
        r.domain = d;
        r.label = label;
        r.feature = g.v;
        r.generated = true;
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

// Phase 2: retrain on real seen + generated unseen, unseen branch removed.
// Continues from the given weights.
inline TrainResult train_phase2_retrain(ModelBundle model, const Dataset& seen,
                                        const std::vector<FeatureRecord>& synthetic_unseen,
                                        const WordEmbeddingTable& emb,
                                        const TrainConfig& cfg) {
  if (cfg.epochs_phase2 == 0) return {std::move(model), {}};
  if (synthetic_unseen.empty())
    throw ArgumentError("phase 2 requires a nonempty synthetic unseen set");
  std::vector<FeatureRecord> all = seen.records();
  for (const auto& r : synthetic_unseen) all.push_back(r);
  Dataset uni(std::move(all));
  ZeroShotSplit all_seen;
  all_seen.seen_labels = uni.labels();
  TrainResult out{std::move(model), {}};
  out.history = detail::run_training(out.model, uni, all_seen, emb,
                                     /*unlabeled=*/nullptr,
                                     /*unseen_for_gen=*/nullptr,
                                     cfg.epochs_phase2, cfg, /*seed_salt=*/2);
  return out;
}

// Loss-history CSV. The uGAN columns are present only for transductive runs.
inline void write_loss_history(const std::string& path,
                               const std::vector<LossRow>& history,
                               bool transductive) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss history: " + path);
  out << "epoch,L_tri,L_sem,L_rec,L_GAN_D,L_GAN_G";
  if (transductive) out << ",L_uGAN_D,L_uGAN_G";
  out << ",total\n";
  char buf[64];
  auto cell = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.10g", x);
    out << ',' << buf;
  };
  for (std::size_t e = 0; e < history.size(); ++e) {
    const LossRow& r = history[e];
    out << (e + 1);
    cell(r.tri);
    cell(r.sem);
    cell(r.rec);
    cell(r.gan_d);
    cell(r.gan_g);
    if (transductive) {
      cell(r.ugan_d.value_or(0.0));
      cell(r.ugan_g.value_or(0.0));
    }
    cell(r.total);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace disret
