#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "disret/errors.hpp"
#include "disret/matrix.hpp"

namespace disret {

enum class Domain { ShapeA, SketchB };

inline char domain_tag(Domain d) { return d == Domain::ShapeA ? 'A' : 'B'; }

inline Domain parse_domain(const std::string& s) {
  if (s == "A") return Domain::ShapeA;
  if (s == "B") return Domain::SketchB;
  throw ParseError("unknown domain tag '" + s + "' (expected A or B)");
}

struct FeatureRecord {
  std::string id;
  Domain domain = Domain::ShapeA;
  std::string label;
  std::vector<double> feature;
  bool generated = false;
};

struct ZeroShotSplit {
  std::set<std::string> seen_labels;
  std::set<std::string> unseen_labels;

  bool is_seen(const std::string& l) const { return seen_labels.count(l) > 0; }
};

struct Triplet {
  const FeatureRecord* anchor = nullptr;    // sketch (B)
  const FeatureRecord* positive = nullptr;  // shape (A), same label
  const FeatureRecord* negative = nullptr;  // shape (A), other label
};

class WordEmbeddingTable {
 public:
  WordEmbeddingTable() = default;
  explicit WordEmbeddingTable(std::size_t dim) : dim_(dim) {}

  void insert(const std::string& label, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_)
      throw DimensionError("embedding for '" + label + "' has dim " +
                           std::to_string(vec.size()) + ", expected " +
                           std::to_string(dim_));
    if (l2_norm(vec.data(), vec.size()) < 1e-12)
      throw DegenerateInputError("embedding for '" + label +
                                 "' is the zero vector");
    table_[label] = std::move(vec);
  }

  const std::vector<double>& lookup(const std::string& label) const {
    auto it = table_.find(label);
    if (it == table_.end())
      throw LookupError("no embedding for label: " + label);
    return it->second;
  }
  bool contains(const std::string& label) const {
    return table_.count(label) > 0;
  }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  const std::map<std::string, std::vector<double>>& entries() const {
    return table_;
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

// Immutable after construction; shareable across threads.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<FeatureRecord> records)
      : records_(std::move(records)) {
    std::set<std::string> ids;
    for (std::size_t k = 0; k < records_.size(); ++k) {
      const auto& r = records_[k];
      if (!ids.insert(r.id).second)
        throw ArgumentError("duplicate record id: " + r.id);
      auto& slot = index_[r.label];
      (r.domain == Domain::ShapeA ? slot.first : slot.second).push_back(k);
    }
  }

  const std::vector<FeatureRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const FeatureRecord& operator[](std::size_t k) const { return records_[k]; }

  std::set<std::string> labels() const {
    std::set<std::string> out;
    for (const auto& [l, v] : index_) out.insert(l);
    return out;
  }

  const std::vector<std::size_t>& of(const std::string& label,
                                     Domain d) const {
    static const std::vector<std::size_t> empty;
    auto it = index_.find(label);
    if (it == index_.end()) return empty;
    return d == Domain::ShapeA ? it->second.first : it->second.second;
  }

 private:
  std::vector<FeatureRecord> records_;
  // label -> (shape indices, sketch indices)
  std::map<std::string,
           std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
      index_;
};

// Feature file: CSV `id,domain,label,v1,...,vD`; '#' lines are comments.
inline std::vector<FeatureRecord> load_features(const std::string& path,
                                                std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file: " + path);
  std::vector<FeatureRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected id,domain,label,values");
    FeatureRecord r;
    r.id = cells[0];
    try {
      r.domain = parse_domain(cells[1]);
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    r.label = cells[2];
    for (std::size_t k = 3; k < cells.size(); ++k) {
      try {
        std::size_t used = 0;
        r.feature.push_back(std::stod(cells[k], &used));
        if (used != cells[k].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": bad float '" + cells[k] + "'");
      }
    }
    if (r.feature.size() != expected_dim)
      throw DimensionError(path + ":" + std::to_string(lineno) + ": row has " +
                           std::to_string(r.feature.size()) +
                           " values, expected " +
                           std::to_string(expected_dim));
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_features(const std::string& path,
                          const std::vector<FeatureRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file: " + path);
  char buf[64];
  for (const auto& r : records) {
    out << r.id << ',' << domain_tag(r.domain) << ',' << r.label;
    for (double x : r.feature) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<std::string> split_tokens(const std::string& label) {
  std::vector<std::string> toks;
  std::string cur;
  for (char c : label) {
    if (c == '_' || c == ' ') {
      if (!cur.empty()) toks.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

// Embedding file: one line per token, `token v1 v2 ... vd`. Multiword labels
// (underscore/space separated) resolve to the mean of their token vectors.
inline WordEmbeddingTable load_embeddings(const std::string& path,
                                          const std::set<std::string>& labels,
                                          std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::set<std::string> wanted_tokens;
  for (const auto& l : labels)
    for (const auto& t : split_tokens(l)) wanted_tokens.insert(t);

  std::map<std::string, std::vector<double>> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    ss >> tok;
    if (!wanted_tokens.count(tok)) continue;
    std::vector<double> vec;
    double x;
    while (ss >> x) vec.push_back(x);
    if (vec.size() != dim)
      throw DimensionError(path + ":" + std::to_string(lineno) + ": token '" +
                           tok + "' has dim " + std::to_string(vec.size()) +
                           ", expected " + std::to_string(dim));
    tokens[tok] = std::move(vec);
  }

  WordEmbeddingTable table(dim);
  std::vector<std::string> missing;
  for (const auto& l : labels) {
    auto toks = split_tokens(l);
    std::vector<double> acc(dim, 0.0);
    bool ok = !toks.empty();
    for (const auto& t : toks) {
      auto it = tokens.find(t);
      if (it == tokens.end()) {
        ok = false;
        break;
      }
      for (std::size_t k = 0; k < dim; ++k) acc[k] += it->second[k];
    }
    if (!ok) {
      missing.push_back(l);
      continue;
    }
    for (double& x : acc) x /= static_cast<double>(toks.size());
    table.insert(l, std::move(acc));
  }
  if (!missing.empty()) {
    std::string msg = "missing embeddings for labels:";
    for (const auto& m : missing) msg += " " + m;
    throw LookupError(msg);
  }
  return table;
}

inline void save_embeddings(const std::string& path,
                            const WordEmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file: " + path);
  char buf[64];
  for (const auto& [label, vec] : table.entries()) {
    out << label;
    for (double x : vec) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

struct SynthData {
  std::vector<FeatureRecord> features;
  WordEmbeddingTable embeddings;
  std::map<std::string, std::vector<double>> class_means;
};

// Class mean mu_c ~ N(0,I); each sample is mu_c + delta_X + eps with delta_X
// a fixed per-domain offset of the requested norm and eps ~ N(0, noise^2 I).
// Embeddings are a fixed seeded linear projection of mu_c to embed_dim.
inline SynthData synth_dataset(std::size_t n_classes,
                               std::size_t per_class_per_domain,
                               std::size_t dim, double domain_offset_scale,
                               double noise_scale, std::uint64_t seed,
                               std::size_t embed_dim = 300) {
  if (n_classes == 0 || per_class_per_domain == 0 || dim == 0)
    throw ArgumentError("synth_dataset: counts must be positive");
  Rng rng(seed);

  // projection for embeddings
  std::vector<double> proj(embed_dim * dim);
  const double pscale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& p : proj) p = rng.normal() * pscale;

  // per-domain offsets, fixed norm
  auto unit = [&](std::size_t n) {
    std::vector<double> u(n);
    double nrm = 0.0;
    do {
      for (double& x : u) x = rng.normal();
      nrm = l2_norm(u.data(), n);
    } while (nrm < 1e-9);
    for (double& x : u) x /= nrm;
    return u;
  };
  std::vector<double> off_a = unit(dim), off_b = unit(dim);
  for (double& x : off_a) x *= domain_offset_scale;
  for (double& x : off_b) x *= domain_offset_scale;

  SynthData out;
  out.embeddings = WordEmbeddingTable(embed_dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "c%03zu", c);
    const std::string label(name);
    std::vector<double> mu(dim);
    for (double& x : mu) x = rng.normal();

    std::vector<double> emb(embed_dim, 0.0);
    for (std::size_t i = 0; i < embed_dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) emb[i] += proj[i * dim + j] * mu[j];
    out.embeddings.insert(label, emb);

    for (Domain d : {Domain::ShapeA, Domain::SketchB}) {
      const auto& off = d == Domain::ShapeA ? off_a : off_b;
      for (std::size_t k = 0; k < per_class_per_domain; ++k) {
        FeatureRecord r;
        r.domain = d;
        r.label = label;
        r.id = label + "_" + domain_tag(d) + std::to_string(k);
        r.feature.resize(dim);
        for (std::size_t j = 0; j < dim; ++j)
          r.feature[j] = mu[j] + off[j] + noise_scale * rng.normal();
        out.features.push_back(std::move(r));
      }
    }
    out.class_means[label] = std::move(mu);
  }
  return out;
}

inline ZeroShotSplit make_split(const std::set<std::string>& labels,
                                std::size_t n_unseen, std::uint64_t seed) {
  if (n_unseen >= labels.size())
    throw ArgumentError("make_split: n_unseen (" + std::to_string(n_unseen) +
                        ") must be < number of labels (" +
                        std::to_string(labels.size()) + ")");
  std::vector<std::string> all(labels.begin(), labels.end());
  std::sort(all.begin(), all.end());
  Rng rng(seed);
  for (std::size_t i = all.size(); i > 1; --i)
    std::swap(all[i - 1], all[rng.uniform_index(i)]);
  ZeroShotSplit split;
  for (std::size_t k = 0; k < all.size(); ++k)
    (k < n_unseen ? split.unseen_labels : split.seen_labels).insert(all[k]);
  return split;
}

// Anchor: uniform over seen sketches; positive: uniform same-label shape;
// negative: uniform shape of another seen label.
class TripletSampler {
 public:
  TripletSampler(const Dataset& data, const ZeroShotSplit& split,
                 std::uint64_t seed)
      : data_(data), rng_(seed) {
    for (const auto& l : split.seen_labels) {
      if (!data.of(l, Domain::ShapeA).empty() &&
          !data.of(l, Domain::SketchB).empty())
        labels_.push_back(l);
    }
    std::sort(labels_.begin(), labels_.end());
    for (const auto& l : labels_)
      for (std::size_t k : data.of(l, Domain::SketchB)) anchors_.push_back(k);
    if (labels_.size() < 2)
      throw SamplingError(
          "triplet sampling needs >= 2 seen labels with both domains, have " +
          std::to_string(labels_.size()));
  }

  Triplet next() {
    Triplet t;
    const auto& a = data_[anchors_[rng_.uniform_index(anchors_.size())]];
    t.anchor = &a;
    const auto& pos_pool = data_.of(a.label, Domain::ShapeA);
    t.positive = &data_[pos_pool[rng_.uniform_index(pos_pool.size())]];
    std::size_t li = rng_.uniform_index(labels_.size() - 1);
    std::size_t self = static_cast<std::size_t>(
        std::lower_bound(labels_.begin(), labels_.end(), a.label) -
        labels_.begin());
    if (li >= self) ++li;
    const auto& neg_pool = data_.of(labels_[li], Domain::ShapeA);
    t.negative = &data_[neg_pool[rng_.uniform_index(neg_pool.size())]];
    return t;
  }

  const std::vector<std::string>& labels() const { return labels_; }

 private:
  const Dataset& data_;
  Rng rng_;
  std::vector<std::string> labels_;
  std::vector<std::size_t> anchors_;
};

}  // namespace disret
