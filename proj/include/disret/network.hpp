#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "disret/dataset.hpp"
#include "disret/errors.hpp"
#include "disret/matrix.hpp"
#include "disret/tape.hpp"

namespace disret {

// Fully-connected stack with LeakyReLU between layers and no activation on
// the final layer.
struct Mlp {
  struct Layer {
    Matrix w;  // in x out
    Matrix b;  // 1 x out
  };
  std::vector<Layer> layers;
  double slope = 0.2;

  static Mlp create(std::size_t in, const std::vector<std::size_t>& hidden,
                    std::size_t out, double slope, Rng& rng) {
    Mlp net;
    net.slope = slope;
    std::vector<std::size_t> widths;
    widths.push_back(in);
    for (auto h : hidden) widths.push_back(h);
    widths.push_back(out);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer;
      const std::size_t fi = widths[l], fo = widths[l + 1];
      const double bound = std::sqrt(6.0 / static_cast<double>(fi + fo));
      layer.w = Matrix(fi, fo);
      for (double& x : layer.w.v) x = rng.uniform(-bound, bound);
      layer.b = Matrix(1, fo);
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  std::size_t in_width() const { return layers.front().w.rows; }
  std::size_t out_width() const { return layers.back().w.cols; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  // Tape-free forward for inference.
  Matrix eval(const Matrix& x) const {
    if (x.cols != in_width())
      throw DimensionError("mlp eval: input " + x.shape_str() + ", expected " +
                           std::to_string(x.rows) + "x" +
                           std::to_string(in_width()));
    Matrix cur = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Layer& ly = layers[l];
      Matrix next(cur.rows, ly.w.cols);
      for (std::size_t i = 0; i < cur.rows; ++i) {
        double* orow = &next.v[i * next.cols];
        for (std::size_t j = 0; j < next.cols; ++j) orow[j] = ly.b.v[j];
        const double* xrow = &cur.v[i * cur.cols];
        for (std::size_t k = 0; k < cur.cols; ++k) {
          const double xik = xrow[k];
          const double* wrow = &ly.w.v[k * ly.w.cols];
          for (std::size_t j = 0; j < next.cols; ++j) orow[j] += xik * wrow[j];
        }
      }
      if (l + 1 < layers.size())
        for (double& e : next.v)
          if (e < 0.0) e *= slope;
      cur = std::move(next);
    }
    return cur;
  }
};

// Parameters of one Mlp staged as leaves on a tape for a training step.
struct TapedMlp {
  const Mlp* net = nullptr;
  std::vector<std::pair<Ref, Ref>> params;  // (w, b) per layer

  Ref forward(Tape& t, Ref x) const {
    Ref cur = x;
    for (std::size_t l = 0; l < params.size(); ++l) {
      cur = t.linear(cur, params[l].first, params[l].second);
      if (l + 1 < params.size()) cur = t.leaky_relu(cur, net->slope);
    }
    return cur;
  }
};

inline TapedMlp stage(Tape& t, const Mlp& net) {
  TapedMlp tn;
  tn.net = &net;
  for (const auto& l : net.layers)
    tn.params.push_back({t.leaf(l.w), t.leaf(l.b)});
  return tn;
}

struct NetConfig {
  std::size_t feature_dim = 2048;
  std::size_t latent_dim = 300;  // invariant/specific width
  std::size_t embed_dim = 300;
  std::vector<std::size_t> enc_hidden{1024, 512};
  std::vector<std::size_t> mapper_hidden{300, 300};
  std::vector<std::size_t> gen_hidden{512, 1024};
  std::vector<std::size_t> disc_hidden{512, 256};
  double slope = 0.2;
};

// All trainable sub-networks. Encoders are per-domain (not shared); the
// mapper and generator are shared; reconstruction and cross-generation use
// the same generator.
struct ModelBundle {
  NetConfig cfg;
  Mlp ei_a, ei_b;  // invariant encoders, feature_dim -> latent_dim
  Mlp es_a, es_b;  // specific encoders, feature_dim -> latent_dim
  Mlp phi;         // mapper, latent_dim -> embed_dim
  Mlp gen;         // generator, embed_dim + latent_dim -> feature_dim
  Mlp d_a, d_b;    // discriminators, feature_dim -> 1

  static ModelBundle init(const NetConfig& cfg, std::uint64_t seed) {
    ModelBundle m;
    m.cfg = cfg;
    Rng rng(seed);
    m.ei_a = Mlp::create(cfg.feature_dim, cfg.enc_hidden, cfg.latent_dim,
                         cfg.slope, rng);
    m.ei_b = Mlp::create(cfg.feature_dim, cfg.enc_hidden, cfg.latent_dim,
                         cfg.slope, rng);
    m.es_a = Mlp::create(cfg.feature_dim, cfg.enc_hidden, cfg.latent_dim,
                         cfg.slope, rng);
    m.es_b = Mlp::create(cfg.feature_dim, cfg.enc_hidden, cfg.latent_dim,
                         cfg.slope, rng);
    m.phi = Mlp::create(cfg.latent_dim, cfg.mapper_hidden, cfg.embed_dim,
                        cfg.slope, rng);
    m.gen = Mlp::create(cfg.embed_dim + cfg.latent_dim, cfg.gen_hidden,
                        cfg.feature_dim, cfg.slope, rng);
    m.d_a = Mlp::create(cfg.feature_dim, cfg.disc_hidden, 1, cfg.slope, rng);
    m.d_b = Mlp::create(cfg.feature_dim, cfg.disc_hidden, 1, cfg.slope, rng);
    return m;
  }

  const Mlp& invariant_encoder(Domain d) const {
    return d == Domain::ShapeA ? ei_a : ei_b;
  }
  const Mlp& specific_encoder(Domain d) const {
    return d == Domain::ShapeA ? es_a : es_b;
  }
  const Mlp& discriminator(Domain d) const {
    return d == Domain::ShapeA ? d_a : d_b;
  }

  std::size_t parameter_count() const {
    return ei_a.parameter_count() + ei_b.parameter_count() +
           es_a.parameter_count() + es_b.parameter_count() +
           phi.parameter_count() + gen.parameter_count() +
           d_a.parameter_count() + d_b.parameter_count();
  }

  template <typename F>
  void for_each_net(F fn) {
    fn("ei_a", ei_a);
    fn("ei_b", ei_b);
    fn("es_a", es_a);
    fn("es_b", es_b);
    fn("phi", phi);
    fn("gen", gen);
    fn("d_a", d_a);
    fn("d_b", d_b);
  }
  template <typename F>
  void for_each_net(F fn) const {
    const_cast<ModelBundle*>(this)->for_each_net(
        [&](const char* n, Mlp& m) { fn(n, const_cast<const Mlp&>(m)); });
  }
};

struct DisentangledPair {
  Matrix invariant;  // 1 x latent_dim
  Matrix specific;   // 1 x latent_dim
  Matrix semantic;   // 1 x embed_dim, phi(invariant)
};

inline void check_feature_width(const ModelBundle& m, std::size_t got) {
  if (got != m.cfg.feature_dim)
    throw DimensionError("feature width " + std::to_string(got) +
                         ", model expects " +
                         std::to_string(m.cfg.feature_dim));
}

inline DisentangledPair disentangle(const ModelBundle& m,
                                    const FeatureRecord& rec) {
  check_feature_width(m, rec.feature.size());
  Matrix f = Matrix::from_vector(rec.feature);
  DisentangledPair out;
  out.invariant = m.invariant_encoder(rec.domain).eval(f);
  out.specific = m.specific_encoder(rec.domain).eval(f);
  out.semantic = m.phi.eval(out.invariant);
  return out;
}

inline Matrix combine(const Matrix& semantic, const Matrix& specific) {
  if (semantic.rows != specific.rows)
    throw DimensionError("combine: row mismatch " + semantic.shape_str() +
                         " vs " + specific.shape_str());
  Matrix cat(semantic.rows, semantic.cols + specific.cols);
  for (std::size_t i = 0; i < cat.rows; ++i) {
    for (std::size_t j = 0; j < semantic.cols; ++j)
      cat.at(i, j) = semantic.at(i, j);
    for (std::size_t j = 0; j < specific.cols; ++j)
      cat.at(i, semantic.cols + j) = specific.at(i, j);
  }
  return cat;
}

inline Matrix reconstruct(const ModelBundle& m, const Matrix& semantic,
                          const Matrix& specific) {
  if (semantic.cols != m.cfg.embed_dim || specific.cols != m.cfg.latent_dim)
    throw DimensionError("reconstruct: semantic " + semantic.shape_str() +
                         ", specific " + specific.shape_str());
  return m.gen.eval(combine(semantic, specific));
}

// Same wiring as reconstruct; callers pass the other domain's semantic part.
inline Matrix cross_generate(const ModelBundle& m, const Matrix& semantic_other,
                             const Matrix& specific_self) {
  return reconstruct(m, semantic_other, specific_self);
}

inline Matrix generate_unseen(const ModelBundle& m,
                              const std::vector<double>& unseen_embedding,
                              const Matrix& specific_seen) {
  if (unseen_embedding.size() != m.cfg.embed_dim)
    throw DimensionError("generate_unseen: embedding dim " +
                         std::to_string(unseen_embedding.size()) +
                         ", expected " + std::to_string(m.cfg.embed_dim));
  return reconstruct(m, Matrix::from_vector(unseen_embedding), specific_seen);
}

inline double discriminate(const ModelBundle& m, Domain d,
                           const Matrix& feature) {
  check_feature_width(m, feature.cols);
  if (feature.rows != 1)
    throw DimensionError("discriminate: expected a single row, got " +
                         feature.shape_str());
  const double score = m.discriminator(d).eval(feature).v[0];
  return Tape::clamp_prob(Tape::sigmoid1(score));
}

}  // namespace disret
