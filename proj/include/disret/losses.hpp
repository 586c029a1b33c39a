#pragma once

#include <optional>

#include "disret/errors.hpp"
#include "disret/network.hpp"
#include "disret/tape.hpp"

namespace disret {

enum class UganWiring { Corrected, Literal };

struct LossConfig {
  double eta = 20.0;        // triplet margin
  double lambda_rec = 10.0; // reconstruction weight
  // ablation switches; the triplet term is always active
  bool use_semantic = true;
  bool use_reconstruction = true;
  bool use_gan = true;
};

// Batched: all loss functions accept n-row matrices and average over rows,
// so a single 1-row triplet reproduces the per-sample value exactly.

// mean over rows of max{ ||anchor-pos|| - ||anchor-neg|| + eta, 0 }
inline Ref triplet_loss(Tape& t, Ref anchor, Ref pos, Ref neg, double eta) {
  Ref dp = t.l2_distance(anchor, pos);
  Ref dn = t.l2_distance(anchor, neg);
  return t.mean(t.relu(t.add_const(t.sub(dp, dn), eta)));
}

// sim(x,y) = 1 - cos(x,y); returns mean over rows of
// sim(E_A,w_A) + sim(E_B,w_A) + sim(E_C,w_C).
inline Ref semantic_loss(Tape& t, Ref e_a, Ref e_b, Ref e_c, Ref w_a,
                         Ref w_c) {
  Ref sims = t.add(t.add(t.cosine_similarity(e_a, w_a),
                         t.cosine_similarity(e_b, w_a)),
                   t.cosine_similarity(e_c, w_c));
  return t.add_const(t.scale(t.mean(sims), -1.0), 3.0);
}

// mean over rows of ||R_B-F_B||_1 + ||R_A-F_A||_1 + ||R_C-F_C||_1
inline Ref reconstruction_loss(Tape& t, Ref r_a, Ref f_a, Ref r_b, Ref f_b,
                               Ref r_c, Ref f_c) {
  Ref s = t.add(t.add(t.l1_distance(r_b, f_b), t.l1_distance(r_a, f_a)),
                t.l1_distance(r_c, f_c));
  return t.mean(s);
}

// Discriminator objective (minimized):
// -mean[ log D_A(F_A) + log(1-D_A(G_A)) + log D_B(F_B) + log(1-D_B(G_B)) ]
// Callers pass pre-sigmoid scores; log-sigmoid is fused for stability.
inline Ref gan_loss_d_from_scores(Tape& t, Ref real_a, Ref fake_a, Ref real_b,
                                  Ref fake_b) {
  Ref s = t.add(t.add(t.log_sigmoid(real_a), t.log_one_minus_sigmoid(fake_a)),
                t.add(t.log_sigmoid(real_b), t.log_one_minus_sigmoid(fake_b)));
  return t.scale(t.mean(s), -1.0);
}

// Non-saturating generator objective: -mean[ log D_A(G_A) + log D_B(G_B) ]
inline Ref gan_loss_g_from_scores(Tape& t, Ref fake_a, Ref fake_b) {
  return t.scale(t.mean(t.add(t.log_sigmoid(fake_a), t.log_sigmoid(fake_b))),
                 -1.0);
}

inline Ref gan_loss_d(Tape& t, const TapedMlp& d_a, const TapedMlp& d_b,
                      Ref f_a, Ref f_b, Ref g_a, Ref g_b) {
  return gan_loss_d_from_scores(t, d_a.forward(t, f_a), d_a.forward(t, g_a),
                                d_b.forward(t, f_b), d_b.forward(t, g_b));
}

inline Ref gan_loss_g(Tape& t, const TapedMlp& d_a, const TapedMlp& d_b,
                      Ref g_a, Ref g_b) {
  return gan_loss_g_from_scores(t, d_a.forward(t, g_a), d_b.forward(t, g_b));
}

// Unseen-branch adversarial loss (transductive only). Corrected wiring pairs
// each discriminator with its own domain's unlabeled features; literal keeps
// the printed cross pairing.
inline Ref ugan_loss_d(Tape& t, const TapedMlp& d_a, const TapedMlp& d_b,
                       Ref u_a, Ref u_b, Ref gu_a, Ref gu_b,
                       UganWiring wiring) {
  Ref real_for_da = wiring == UganWiring::Corrected ? u_a : u_b;
  Ref real_for_db = wiring == UganWiring::Corrected ? u_b : u_a;
  return gan_loss_d_from_scores(
      t, d_a.forward(t, real_for_da), d_a.forward(t, gu_a),
      d_b.forward(t, real_for_db), d_b.forward(t, gu_b));
}

inline Ref ugan_loss_g(Tape& t, const TapedMlp& d_a, const TapedMlp& d_b,
                       Ref gu_a, Ref gu_b) {
  return gan_loss_g_from_scores(t, d_a.forward(t, gu_a),
                                d_b.forward(t, gu_b));
}

struct LossParts {
  Ref tri;
  std::optional<Ref> sem, rec, gan, ugan;
};

// L_tri + L_sem + lambda_rec * L_rec + L_GAN (+ L_uGAN in transductive mode);
// absent parts are simply dropped (ablation variants)
inline Ref total_loss(Tape& t, const LossParts& parts,
                      const LossConfig& cfg) {
  Ref total = parts.tri;
  if (parts.sem) total = t.add(total, *parts.sem);
  if (parts.rec) total = t.add(total, t.scale(*parts.rec, cfg.lambda_rec));
  if (parts.gan) total = t.add(total, *parts.gan);
  if (parts.ugan) total = t.add(total, *parts.ugan);
  return total;
}

}  // namespace disret
