#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <string>

#include "disret/errors.hpp"
#include "disret/network.hpp"

namespace disret {

// Text checkpoint, bit-exact round trip (doubles stored as hexfloats).
//
//   disret-checkpoint 1
//   config <feature_dim> <latent_dim> <embed_dim> <slope> | enc h... |
//          mapper h... | gen h... | disc h...
//   tensor <name> <rows> <cols>
//   <rows*cols hexfloats, whitespace separated>
//   ...

inline void save_model(const std::string& path, const ModelBundle& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << "disret-checkpoint 1\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", m.cfg.slope);
  out << "config " << m.cfg.feature_dim << ' ' << m.cfg.latent_dim << ' '
      << m.cfg.embed_dim << ' ' << buf;
  auto widths = [&](const std::vector<std::size_t>& h) {
    out << " |";
    for (auto w : h) out << ' ' << w;
  };
  widths(m.cfg.enc_hidden);
  widths(m.cfg.mapper_hidden);
  widths(m.cfg.gen_hidden);
  widths(m.cfg.disc_hidden);
  out << '\n';
  m.for_each_net([&](const char* name, const Mlp& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (const char* part : {"w", "b"}) {
        const Matrix& t =
            part[0] == 'w' ? net.layers[l].w : net.layers[l].b;
        out << "tensor " << name << ".l" << l << '.' << part << ' ' << t.rows
            << ' ' << t.cols << '\n';
        for (std::size_t k = 0; k < t.size(); ++k) {
          std::snprintf(buf, sizeof buf, "%a", t.v[k]);
          out << buf << (k + 1 == t.size() ? '\n' : ' ');
        }
      }
    }
  });
  if (!out) throw IoError("write failed: " + path);
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "disret-checkpoint" || version != 1)
    throw ParseError(path + ": not a disret checkpoint");
  std::string kw;
  in >> kw;
  if (kw != "config") throw ParseError(path + ": missing config line");
  NetConfig cfg;
  in >> cfg.feature_dim >> cfg.latent_dim >> cfg.embed_dim >> cfg.slope;
  {
    std::string tok;
    in >> tok;
    if (tok != "|") throw ParseError(path + ": malformed config line");
    std::vector<std::vector<std::size_t>*> lists = {
        &cfg.enc_hidden, &cfg.mapper_hidden, &cfg.gen_hidden,
        &cfg.disc_hidden};
    for (auto* l : lists) l->clear();
    std::size_t li = 0;
    while (in >> tok) {
      if (tok == "|") {
        ++li;
        if (li >= lists.size())
          throw ParseError(path + ": too many width lists");
        continue;
      }
      if (tok == "tensor") break;
      lists[li]->push_back(std::stoul(tok));
    }
    if (tok != "tensor") throw ParseError(path + ": no tensors found");
  }

  ModelBundle m = ModelBundle::init(cfg, 0);
  // overwrite every tensor from the file
  std::map<std::string, Matrix*> slots;
  m.for_each_net([&](const char* name, Mlp& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      slots[std::string(name) + ".l" + std::to_string(l) + ".w"] =
          &net.layers[l].w;
      slots[std::string(name) + ".l" + std::to_string(l) + ".b"] =
          &net.layers[l].b;
    }
  });
  std::size_t loaded = 0;
  while (true) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) break;
    auto it = slots.find(name);
    if (it == slots.end())
      throw ParseError(path + ": unknown tensor '" + name + "'");
    Matrix* t = it->second;
    if (t->rows != rows || t->cols != cols)
      throw DimensionError(path + ": tensor '" + name + "' is " +
                           std::to_string(rows) + "x" + std::to_string(cols) +
                           ", expected " + t->shape_str());
    for (std::size_t k = 0; k < t->size(); ++k) {
      std::string tok;
      if (!(in >> tok))
        throw ParseError(path + ": truncated tensor '" + name + "'");
      t->v[k] = std::strtod(tok.c_str(), nullptr);
    }
    ++loaded;
    std::string kw2;
    if (!(in >> kw2)) break;
    if (kw2 != "tensor") throw ParseError(path + ": expected 'tensor'");
  }
  if (loaded != slots.size())
    throw ParseError(path + ": checkpoint has " + std::to_string(loaded) +
                     " tensors, model needs " + std::to_string(slots.size()));
  return m;
}

}  // namespace disret
