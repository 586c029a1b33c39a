#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "disret/dataset.hpp"
#include "disret/errors.hpp"
#include "disret/network.hpp"

namespace disret {

enum class RankDistance { Euclidean, Cosine };

struct RankedList {
  std::string query_id;
  std::string query_label;
  std::vector<std::string> gallery_ids;  // best first
  std::vector<int> relevance;            // aligned with gallery_ids
};

struct MetricsReport {
  double nn = 0, ft = 0, st = 0, e = 0, dcg = 0, map = 0;
  std::vector<std::pair<double, double>> pr_curve;  // (recall, precision)
  struct PerQuery {
    std::string query_id;
    double nn, ft, st, e, dcg, ap;
  };
  std::vector<PerQuery> per_query;
};

// Gallery sorted by ascending distance between the query sketch's invariant
// feature and each gallery shape's invariant feature; ties broken by id.
inline RankedList rank(const ModelBundle& model, const FeatureRecord& query,
                       const std::vector<FeatureRecord>& gallery,
                       RankDistance dist = RankDistance::Euclidean) {
  if (gallery.empty()) throw ArgumentError("rank: empty gallery");
  if (query.domain != Domain::SketchB)
    throw ArgumentError("rank: query must be a sketch (domain B)");
  Matrix qi = model.ei_b.eval(Matrix::from_vector(query.feature));

  struct Scored {
    double d;
    std::size_t k;
  };
  std::vector<Scored> scored(gallery.size());
  for (std::size_t k = 0; k < gallery.size(); ++k) {
    if (gallery[k].domain != Domain::ShapeA)
      throw ArgumentError("rank: gallery must contain shapes (domain A)");
    Matrix gi = model.ei_a.eval(Matrix::from_vector(gallery[k].feature));
    double d = 0.0;
    if (dist == RankDistance::Euclidean) {
      for (std::size_t j = 0; j < qi.cols; ++j) {
        const double diff = qi.v[j] - gi.v[j];
        d += diff * diff;
      }
    } else {
      const double nq = l2_norm(qi.v.data(), qi.cols);
      const double ng = l2_norm(gi.v.data(), gi.cols);
      double dotv = 0.0;
      for (std::size_t j = 0; j < qi.cols; ++j) dotv += qi.v[j] * gi.v[j];
      d = 1.0 - dotv / std::max(nq * ng, 1e-12);
    }
    scored[k] = {d, k};
  }
  std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.d != b.d) return a.d < b.d;
    return gallery[a.k].id < gallery[b.k].id;
  });
  RankedList out;
  out.query_id = query.id;
  out.query_label = query.label;
  for (const auto& s : scored) {
    out.gallery_ids.push_back(gallery[s.k].id);
    out.relevance.push_back(gallery[s.k].label == query.label ? 1 : 0);
  }
  return out;
}

namespace metric_detail {

// Per-query metrics from a binary relevance sequence and the number of
// relevant gallery items |R| (shape-retrieval benchmark conventions: FT/ST normalized by |R|,
// E-measure at cutoff min(32, n), DCG normalized by the ideal ranking).
struct QueryMetrics {
  double nn, ft, st, e, dcg, ap;
};

inline QueryMetrics from_relevance(const std::vector<int>& rel,
                                   std::size_t n_relevant) {
  QueryMetrics q{0, 0, 0, 0, 0, 0};
  const std::size_t n = rel.size();
  if (n == 0 || n_relevant == 0) return q;
  q.nn = rel[0] ? 1.0 : 0.0;

  std::size_t hits = 0;
  double ap = 0.0, dcg = 0.0;
  std::size_t ft_hits = 0, st_hits = 0, cut_hits = 0;
  const std::size_t cutoff = std::min<std::size_t>(32, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rel[i]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(i + 1);
      dcg += i == 0 ? 1.0 : 1.0 / std::log2(static_cast<double>(i + 1));
      if (i < n_relevant) ++ft_hits;
      if (i < 2 * n_relevant) ++st_hits;
      if (i < cutoff) ++cut_hits;
    }
  }
  q.ap = ap / static_cast<double>(n_relevant);
  q.ft = static_cast<double>(ft_hits) / static_cast<double>(n_relevant);
  q.st = static_cast<double>(st_hits) / static_cast<double>(n_relevant);

  double ideal = 0.0;
  for (std::size_t i = 0; i < n_relevant && i < n; ++i)
    ideal += i == 0 ? 1.0 : 1.0 / std::log2(static_cast<double>(i + 1));
  q.dcg = ideal > 0.0 ? dcg / ideal : 0.0;

  const double p32 =
      static_cast<double>(cut_hits) / static_cast<double>(cutoff);
  const double r32 =
      static_cast<double>(cut_hits) / static_cast<double>(n_relevant);
  q.e = (p32 > 0.0 && r32 > 0.0) ? 2.0 / (1.0 / p32 + 1.0 / r32) : 0.0;
  return q;
}

// 11-point interpolated precision at recall levels 0.0 .. 1.0.
inline std::vector<double> interpolated_precision(const std::vector<int>& rel,
                                                  std::size_t n_relevant) {
  std::vector<double> prec11(11, 0.0);
  if (n_relevant == 0) return prec11;
  std::vector<double> precision_at_recall;  // precision at each hit
  std::size_t hits = 0;
  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel[i]) {
      ++hits;
      pts.push_back({static_cast<double>(hits) / n_relevant,
                     static_cast<double>(hits) / (i + 1)});
    }
  }
  for (int lvl = 0; lvl <= 10; ++lvl) {
    const double r = lvl / 10.0;
    double best = 0.0;
    for (const auto& [rc, pc] : pts)
      if (rc >= r - 1e-12 && pc > best) best = pc;
    prec11[lvl] = best;
  }
  return prec11;
}

}  // namespace metric_detail

inline MetricsReport metrics(
    const std::vector<RankedList>& ranked,
    const std::map<std::string, std::size_t>& class_sizes) {
  if (ranked.empty()) throw ArgumentError("metrics: no queries");
  MetricsReport rep;
  std::vector<double> prec11(11, 0.0);
  for (const auto& rl : ranked) {
    auto it = class_sizes.find(rl.query_label);
    if (it == class_sizes.end())
      throw LookupError("metrics: no gallery count for label '" +
                        rl.query_label + "'");
    if (it->second == 0)
      throw ArgumentError("metrics: label '" + rl.query_label +
                          "' has zero gallery items");
    const auto q = metric_detail::from_relevance(rl.relevance, it->second);
    rep.nn += q.nn;
    rep.ft += q.ft;
    rep.st += q.st;
    rep.e += q.e;
    rep.dcg += q.dcg;
    rep.map += q.ap;
    rep.per_query.push_back(
        {rl.query_id, q.nn, q.ft, q.st, q.e, q.dcg, q.ap});
    auto p = metric_detail::interpolated_precision(rl.relevance, it->second);
    for (int k = 0; k <= 10; ++k) prec11[k] += p[k];
  }
  const double inv = 1.0 / static_cast<double>(ranked.size());
  rep.nn *= inv;
  rep.ft *= inv;
  rep.st *= inv;
  rep.e *= inv;
  rep.dcg *= inv;
  rep.map *= inv;
  for (int k = 0; k <= 10; ++k)
    rep.pr_curve.push_back({k / 10.0, prec11[k] * inv});
  return rep;
}

// Convenience end-to-end evaluation: every sketch is a query against the
// full shape gallery.
inline MetricsReport evaluate_retrieval(
    const ModelBundle& model, const std::vector<FeatureRecord>& queries,
    const std::vector<FeatureRecord>& gallery,
    RankDistance dist = RankDistance::Euclidean) {
  if (queries.empty()) throw ArgumentError("evaluate: no queries");
  std::map<std::string, std::size_t> class_sizes;
  for (const auto& g : gallery) ++class_sizes[g.label];
  std::vector<RankedList> ranked;
  ranked.reserve(queries.size());
  for (const auto& q : queries) ranked.push_back(rank(model, q, gallery, dist));
  return metrics(ranked, class_sizes);
}

// CSV of id, domain, label, 300-D invariant, 300-D specific.
inline void export_embeddings(const ModelBundle& model, const Dataset& data,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings export: " + path);
  out << "id,domain,label";
  for (std::size_t j = 0; j < model.cfg.latent_dim; ++j) out << ",i" << j;
  for (std::size_t j = 0; j < model.cfg.latent_dim; ++j) out << ",s" << j;
  out << '\n';
  char buf[64];
  for (const auto& r : data.records()) {
    DisentangledPair p = disentangle(model, r);
    out << r.id << ',' << domain_tag(r.domain) << ',' << r.label;
    for (double x : p.invariant.v) {
      std::snprintf(buf, sizeof buf, "%.10g", x);
      out << ',' << buf;
    }
    for (double x : p.specific.v) {
      std::snprintf(buf, sizeof buf, "%.10g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline void write_metrics_csv(const std::string& path,
                              const MetricsReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics CSV: " + path);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", rep.nn,
                rep.ft, rep.st, rep.e, rep.dcg, rep.map);
  out << "NN,FT,ST,E,DCG,mAP\n" << buf << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline void write_metrics_json(const std::string& path,
                               const MetricsReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics JSON: " + path);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\n  \"NN\": %.10g,\n  \"FT\": %.10g,\n  \"ST\": %.10g,\n"
                "  \"E\": %.10g,\n  \"DCG\": %.10g,\n  \"mAP\": %.10g,\n",
                rep.nn, rep.ft, rep.st, rep.e, rep.dcg, rep.map);
  out << buf << "  \"pr_curve\": [";
  for (std::size_t k = 0; k < rep.pr_curve.size(); ++k) {
    std::snprintf(buf, sizeof buf, "[%.1f, %.10g]", rep.pr_curve[k].first,
                  rep.pr_curve[k].second);
    out << (k ? ", " : "") << buf;
  }
  out << "]\n}\n";
  if (!out) throw IoError("write failed: " + path);
}

inline void write_pr_curve_csv(const std::string& path,
                               const MetricsReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write PR curve CSV: " + path);
  out << "recall,precision\n";
  char buf[64];
  for (const auto& [r, p] : rep.pr_curve) {
    std::snprintf(buf, sizeof buf, "%.1f,%.6f", r, p);
    out << buf << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace disret
