// disret: zero-shot sketch-to-shape retrieval via domain-disentangled
// adversarial feature generation. Single binary, one subcommand per stage.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "disret/checkpoint.hpp"
#include "disret/dataset.hpp"
#include "disret/network.hpp"
#include "disret/retrieval.hpp"
#include "disret/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace disret;

namespace {

constexpr const char* kVersion = "disret 0.1.0";

// Exit codes: 0 ok, 2 usage/validation, 3 numerical failure, 4 I/O.
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize k = 0; k < in.gcount(); ++k) {
      h ^= static_cast<unsigned char>(buf[k]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const std::string& path, const std::string& command,
                    const json& inputs, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["inputs"] = inputs;
  m["seed"] = seed;
  json outs = json::object();
  for (const auto& o : outputs) outs[o] = hash_hex(fnv1a_file(o));
  m["outputs"] = outs;
  m["timestamp"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << m.dump(2) << '\n';
}

// Everything a run can configure; precedence defaults < config file < flags.
struct RunConfig {
  TrainConfig train;
  NetConfig net;
  std::string features, embeddings, split, out_dir = ".";
  std::string mode = "transductive";  // or "inductive"

  void apply_json(const json& j) {
    static const std::set<std::string> known = {
        "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
        "batch_size", "iterations_per_epoch", "epochs_phase1",
        "epochs_phase2", "d_steps_per_g_step",
        "unseen_samples_per_class_per_domain", "seed", "mode", "ugan_wiring",
        "eta", "lambda_rec", "feature_dim", "latent_dim", "embed_dim",
        "enc_hidden", "mapper_hidden", "gen_hidden", "disc_hidden",
        "leaky_slope", "features", "embeddings", "split", "out_dir"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key()))
        throw ArgumentError("unknown config key: " + it.key());

    auto num = [&](const char* k, auto& dst) {
      if (j.contains(k)) dst = j[k].template get<std::decay_t<decltype(dst)>>();
    };
    num("learning_rate", train.learning_rate);
    num("adam_beta1", train.adam_beta1);
    num("adam_beta2", train.adam_beta2);
    num("adam_eps", train.adam_eps);
    num("batch_size", train.batch_size);
    num("iterations_per_epoch", train.iterations_per_epoch);
    num("epochs_phase1", train.epochs_phase1);
    num("epochs_phase2", train.epochs_phase2);
    num("d_steps_per_g_step", train.d_steps_per_g_step);
    num("unseen_samples_per_class_per_domain",
        train.unseen_samples_per_class_per_domain);
    num("seed", train.seed);
    num("eta", train.loss.eta);
    num("lambda_rec", train.loss.lambda_rec);
    num("feature_dim", net.feature_dim);
    num("latent_dim", net.latent_dim);
    num("embed_dim", net.embed_dim);
    num("leaky_slope", net.slope);
    num("features", features);
    num("embeddings", embeddings);
    num("split", split);
    num("out_dir", out_dir);
    if (j.contains("mode")) mode = j["mode"].get<std::string>();
    if (j.contains("ugan_wiring")) {
      const std::string w = j["ugan_wiring"].get<std::string>();
      if (w == "corrected")
        train.ugan_wiring = UganWiring::Corrected;
      else if (w == "literal")
        train.ugan_wiring = UganWiring::Literal;
      else
        throw ArgumentError("ugan_wiring must be corrected|literal, got " + w);
    }
    auto widths = [&](const char* k, std::vector<std::size_t>& dst) {
      if (j.contains(k)) dst = j[k].get<std::vector<std::size_t>>();
    };
    widths("enc_hidden", net.enc_hidden);
    widths("mapper_hidden", net.mapper_hidden);
    widths("gen_hidden", net.gen_hidden);
    widths("disc_hidden", net.disc_hidden);
  }

  void finalize() {
    if (mode == "transductive")
      train.transductive = true;
    else if (mode == "inductive")
      train.transductive = false;
    else
      throw ArgumentError("mode must be transductive|inductive, got " + mode);
    train.validate();
  }
};

ZeroShotSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  ZeroShotSplit s;
  for (const auto& l : j.at("seen")) s.seen_labels.insert(l.get<std::string>());
  for (const auto& l : j.at("unseen"))
    s.unseen_labels.insert(l.get<std::string>());
  for (const auto& l : s.seen_labels)
    if (s.unseen_labels.count(l))
      throw ParseError(path + ": label '" + l + "' in both seen and unseen");
  return s;
}

void save_split(const std::string& path, const ZeroShotSplit& s) {
  json j;
  j["seen"] = s.seen_labels;
  j["unseen"] = s.unseen_labels;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file: " + path);
  out << j.dump(2) << '\n';
}

struct LoadedData {
  Dataset all;
  Dataset seen;
  UnlabeledFeatures unlabeled;
};

LoadedData load_and_partition(const RunConfig& cfg,
                              const ZeroShotSplit& split) {
  LoadedData d;
  auto records = load_features(cfg.features, cfg.net.feature_dim);
  std::vector<FeatureRecord> seen_recs;
  for (auto& r : records) {
    if (split.is_seen(r.label)) {
      seen_recs.push_back(r);
    } else if (split.unseen_labels.count(r.label)) {
      // transductive branch receives bare features only
      (r.domain == Domain::ShapeA ? d.unlabeled.shapes_a
                                  : d.unlabeled.sketches_b)
          .push_back(r.feature);
    } else {
      throw ArgumentError("record '" + r.id + "' has label '" + r.label +
                          "' not present in the split");
    }
  }
  d.seen = Dataset(std::move(seen_recs));
  d.all = Dataset(std::move(records));
  return d;
}

WordEmbeddingTable load_table(const RunConfig& cfg,
                              const std::set<std::string>& labels) {
  return load_embeddings(cfg.embeddings, labels, cfg.net.embed_dim);
}

void print_metrics(const MetricsReport& rep) {
  std::printf("NN    FT    ST    E     DCG   mAP\n");
  std::printf("%.3f %.3f %.3f %.3f %.3f %.3f\n", rep.nn, rep.ft, rep.st,
              rep.e, rep.dcg, rep.map);
}

int dispatch(int argc, char** argv) {
  CLI::App app{"zero-shot sketch-to-3D-shape retrieval pipeline"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "synthesize a feature dataset");
  struct {
    std::size_t classes = 12, per_class = 20, dim = 64, unseen = 3,
                embed_dim = 300;
    double offset = 1.0, noise = 0.1;
    std::uint64_t seed = 0;
    std::string out = ".";
  } g;
  gen->add_option("--classes", g.classes);
  gen->add_option("--per-class", g.per_class);
  gen->add_option("--dim", g.dim);
  gen->add_option("--embed-dim", g.embed_dim);
  gen->add_option("--unseen", g.unseen);
  gen->add_option("--offset", g.offset)
      ->description("per-domain offset norm");
  gen->add_option("--noise", g.noise);
  gen->add_option("--seed", g.seed);
  gen->add_option("--out", g.out);

  // ---- shared config options for train/retrain ----
  RunConfig rc;
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--features", rc.features);
    cmd->add_option("--embeddings", rc.embeddings);
    cmd->add_option("--split", rc.split);
    cmd->add_option("--out", rc.out_dir);
    cmd->add_option("--seed", rc.train.seed);
    cmd->add_option("--lr", rc.train.learning_rate);
    cmd->add_option("--batch", rc.train.batch_size);
    cmd->add_option("--iters-per-epoch", rc.train.iterations_per_epoch);
    cmd->add_option("--dim", rc.net.feature_dim);
    cmd->add_option("--latent-dim", rc.net.latent_dim);
    cmd->add_option("--embed-dim", rc.net.embed_dim);
    cmd->add_option("--mode", rc.mode, "transductive|inductive");
    cmd->add_option("--eta", rc.train.loss.eta);
    cmd->add_option("--lambda-rec", rc.train.loss.lambda_rec);
    cmd->add_option("--enc-hidden", rc.net.enc_hidden);
    cmd->add_option("--mapper-hidden", rc.net.mapper_hidden);
    cmd->add_option("--gen-hidden", rc.net.gen_hidden);
    cmd->add_option("--disc-hidden", rc.net.disc_hidden);
  };

  auto* train = app.add_subcommand("train", "phase-1 training");
  add_common(train);
  train->add_option("--epochs", rc.train.epochs_phase1);

  auto* synth = app.add_subcommand("synthesize-unseen",
                                   "generate unseen-category samples");
  std::string ckpt_path, synth_out;
  synth->add_option("--checkpoint", ckpt_path)->required();
  synth->add_option("--features", rc.features)->required();
  synth->add_option("--embeddings", rc.embeddings)->required();
  synth->add_option("--split", rc.split)->required();
  synth->add_option("--per-class", rc.train.unseen_samples_per_class_per_domain);
  synth->add_option("--seed", rc.train.seed);
  synth->add_option("--out", rc.out_dir);

  auto* retrain = app.add_subcommand("retrain", "phase-2 retraining");
  add_common(retrain);
  std::string synthetic_path;
  bool reinit = false;
  retrain->add_option("--checkpoint", ckpt_path)->required();
  retrain->add_option("--synthetic", synthetic_path)->required();
  retrain->add_option("--epochs", rc.train.epochs_phase2);
  retrain->add_flag("--reinit", reinit,
                    "reinitialize instead of continuing from the checkpoint");

  auto* eval = app.add_subcommand("evaluate", "retrieval metrics");
  std::string query_path, gallery_path, distance = "euclidean";
  bool unseen_only = false;
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--queries", query_path)->required();
  eval->add_option("--gallery", gallery_path)->required();
  eval->add_option("--split", rc.split);
  eval->add_flag("--unseen-only", unseen_only);
  eval->add_option("--distance", distance, "euclidean|cosine");
  eval->add_option("--out", rc.out_dir);

  auto* expemb = app.add_subcommand("export-embeddings",
                                    "dump invariant/specific features");
  std::string export_path = "embeddings_export.csv";
  expemb->add_option("--checkpoint", ckpt_path)->required();
  expemb->add_option("--features", rc.features)->required();
  expemb->add_option("--out", export_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (gen->parsed()) {
    if (g.classes == 0 || g.per_class == 0 || g.dim == 0)
      throw ArgumentError("gen-data: counts must be positive");
    if (g.unseen >= g.classes)
      throw ArgumentError("gen-data: --unseen must be < --classes");
    SynthData data = synth_dataset(g.classes, g.per_class, g.dim, g.offset,
                                   g.noise, g.seed, g.embed_dim);
    fs::create_directories(g.out);
    const std::string fpath = g.out + "/features.csv";
    const std::string epath = g.out + "/embeddings.txt";
    const std::string spath = g.out + "/split.json";
    save_features(fpath, data.features);
    save_embeddings(epath, data.embeddings);
    std::set<std::string> labels;
    for (const auto& [l, m] : data.class_means) labels.insert(l);
    save_split(spath, make_split(labels, g.unseen, g.seed));
    write_manifest(g.out + "/manifest_gen-data.json", "gen-data",
                   json{{"classes", g.classes},
                        {"per_class", g.per_class},
                        {"dim", g.dim},
                        {"offset", g.offset},
                        {"noise", g.noise}},
                   g.seed, {fpath, epath, spath});
    std::cout << "wrote " << data.features.size() << " feature rows, "
              << data.embeddings.size() << " embeddings, split "
              << (g.classes - g.unseen) << " seen / " << g.unseen
              << " unseen\n";
    return 0;
  }

  // load config file first, then re-apply any flags the user passed
  auto finalize_config = [&](CLI::App* cmd) {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config: " + config_path);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ParseError(config_path + std::string(": ") + e.what());
      }
      RunConfig from_file;
      from_file.apply_json(j);
      // flags the user did not pass fall back to the file's values
      RunConfig merged = from_file;
      auto keep = [&](const char* flag, auto& dst, auto& src) {
        if (cmd->count(flag)) dst = src;
      };
      keep("--features", merged.features, rc.features);
      keep("--embeddings", merged.embeddings, rc.embeddings);
      keep("--split", merged.split, rc.split);
      keep("--out", merged.out_dir, rc.out_dir);
      keep("--seed", merged.train.seed, rc.train.seed);
      keep("--lr", merged.train.learning_rate, rc.train.learning_rate);
      keep("--batch", merged.train.batch_size, rc.train.batch_size);
      keep("--iters-per-epoch", merged.train.iterations_per_epoch,
           rc.train.iterations_per_epoch);
      keep("--dim", merged.net.feature_dim, rc.net.feature_dim);
      keep("--latent-dim", merged.net.latent_dim, rc.net.latent_dim);
      keep("--embed-dim", merged.net.embed_dim, rc.net.embed_dim);
      keep("--mode", merged.mode, rc.mode);
      keep("--eta", merged.train.loss.eta, rc.train.loss.eta);
      keep("--lambda-rec", merged.train.loss.lambda_rec,
           rc.train.loss.lambda_rec);
      keep("--enc-hidden", merged.net.enc_hidden, rc.net.enc_hidden);
      keep("--mapper-hidden", merged.net.mapper_hidden, rc.net.mapper_hidden);
      keep("--gen-hidden", merged.net.gen_hidden, rc.net.gen_hidden);
      keep("--disc-hidden", merged.net.disc_hidden, rc.net.disc_hidden);
      if (cmd->count("--epochs")) {
        merged.train.epochs_phase1 = rc.train.epochs_phase1;
        merged.train.epochs_phase2 = rc.train.epochs_phase2;
      }
      rc = merged;
    }
    rc.finalize();
    if (rc.features.empty() || rc.embeddings.empty() || rc.split.empty())
      throw ArgumentError("--features, --embeddings and --split are required");
    for (const std::string& p : {rc.features, rc.embeddings, rc.split})
      if (!fs::exists(p)) throw IoError("input file not found: " + p);
  };

  if (train->parsed()) {
    finalize_config(train);
    ZeroShotSplit split = load_split(rc.split);
    LoadedData data = load_and_partition(rc, split);
    std::set<std::string> emb_labels = split.seen_labels;
    if (rc.train.transductive)
      for (const auto& l : split.unseen_labels) emb_labels.insert(l);
    WordEmbeddingTable emb = load_table(rc, emb_labels);

    ModelBundle model = ModelBundle::init(rc.net, rc.train.seed);
    TrainResult res = train_phase1(std::move(model), data.seen, split, emb,
                                   data.unlabeled, rc.train);
    fs::create_directories(rc.out_dir);
    const std::string ckpt = rc.out_dir + "/phase1.ckpt";
    const std::string losses = rc.out_dir + "/loss_history_phase1.csv";
    save_model(ckpt, res.model);
    write_loss_history(losses, res.history, rc.train.transductive);
    write_manifest(rc.out_dir + "/manifest_train.json", "train",
                   json{{"features", rc.features},
                        {"embeddings", rc.embeddings},
                        {"split", rc.split},
                        {"mode", rc.mode},
                        {"epochs", rc.train.epochs_phase1}},
                   rc.train.seed, {ckpt, losses});
    std::cerr << "phase-1 done: " << res.history.size() << " epochs, final "
              << "L_rec=" << (res.history.empty() ? 0.0 : res.history.back().rec)
              << "\n";
    return 0;
  }

  if (synth->parsed()) {
    ZeroShotSplit split = load_split(rc.split);
    ModelBundle model = load_model(ckpt_path);
    rc.net = model.cfg;
    LoadedData data = load_and_partition(rc, split);
    std::set<std::string> emb_labels = split.seen_labels;
    for (const auto& l : split.unseen_labels) emb_labels.insert(l);
    WordEmbeddingTable emb = load_table(rc, emb_labels);
    Rng rng(rc.train.seed * 0xc2b2ae35ULL + 7);
    auto synth_set =
        synthesize_unseen(model, emb, split, data.seen, rc.train, rng);
    fs::create_directories(rc.out_dir);
    const std::string spath = rc.out_dir + "/synthetic_unseen.csv";
    save_features(spath, synth_set);
    write_manifest(rc.out_dir + "/manifest_synthesize-unseen.json",
                   "synthesize-unseen",
                   json{{"checkpoint", ckpt_path},
                        {"features", rc.features},
                        {"per_class",
                         rc.train.unseen_samples_per_class_per_domain}},
                   rc.train.seed, {spath});
    std::cout << "wrote " << synth_set.size() << " generated rows\n";
    return 0;
  }

  if (retrain->parsed()) {
    finalize_config(retrain);
    if (!fs::exists(ckpt_path))
      throw IoError("checkpoint not found: " + ckpt_path);
    if (!fs::exists(synthetic_path))
      throw IoError("synthetic feature file not found: " + synthetic_path);
    ZeroShotSplit split = load_split(rc.split);
    ModelBundle model = load_model(ckpt_path);
    rc.net = model.cfg;
    if (reinit) model = ModelBundle::init(model.cfg, rc.train.seed);
    LoadedData data = load_and_partition(rc, split);
    auto synthetic = load_features(synthetic_path, rc.net.feature_dim);
    std::set<std::string> emb_labels = split.seen_labels;
    for (const auto& l : split.unseen_labels) emb_labels.insert(l);
    WordEmbeddingTable emb = load_table(rc, emb_labels);

    fs::create_directories(rc.out_dir);
    const std::string ckpt = rc.out_dir + "/final.ckpt";
    const std::string losses = rc.out_dir + "/loss_history_phase2.csv";
    if (rc.train.epochs_phase2 == 0) {
      save_model(ckpt, model);
      write_loss_history(losses, {}, false);
    } else {
      TrainResult res = train_phase2_retrain(std::move(model), data.seen,
                                             synthetic, emb, rc.train);
      save_model(ckpt, res.model);
      write_loss_history(losses, res.history, false);
    }
    write_manifest(rc.out_dir + "/manifest_retrain.json", "retrain",
                   json{{"checkpoint", ckpt_path},
                        {"synthetic", synthetic_path},
                        {"epochs", rc.train.epochs_phase2}},
                   rc.train.seed, {ckpt, losses});
    return 0;
  }

  if (eval->parsed()) {
    ModelBundle model = load_model(ckpt_path);
    auto queries = load_features(query_path, model.cfg.feature_dim);
    auto gallery = load_features(gallery_path, model.cfg.feature_dim);
    if (unseen_only) {
      if (rc.split.empty())
        throw ArgumentError("--unseen-only requires --split");
      ZeroShotSplit split = load_split(rc.split);
      if (split.unseen_labels.empty())
        throw ArgumentError("--unseen-only: the split has no unseen labels");
      auto filt = [&](std::vector<FeatureRecord>& v) {
        std::erase_if(v, [&](const FeatureRecord& r) {
          return !split.unseen_labels.count(r.label);
        });
      };
      filt(queries);
      filt(gallery);
    }
    std::erase_if(queries, [](const FeatureRecord& r) {
      return r.domain != Domain::SketchB;
    });
    std::erase_if(gallery, [](const FeatureRecord& r) {
      return r.domain != Domain::ShapeA;
    });
    if (queries.empty())
      throw ArgumentError("evaluate: no sketch queries after filtering");
    if (gallery.empty())
      throw ArgumentError("evaluate: no shape gallery after filtering");
    RankDistance dist;
    if (distance == "euclidean")
      dist = RankDistance::Euclidean;
    else if (distance == "cosine")
      dist = RankDistance::Cosine;
    else
      throw ArgumentError("--distance must be euclidean|cosine");
    MetricsReport rep = evaluate_retrieval(model, queries, gallery, dist);
    fs::create_directories(rc.out_dir);
    const std::string jpath = rc.out_dir + "/metrics.json";
    const std::string cpath = rc.out_dir + "/metrics.csv";
    const std::string ppath = rc.out_dir + "/pr_curve.csv";
    write_metrics_json(jpath, rep);
    write_metrics_csv(cpath, rep);
    write_pr_curve_csv(ppath, rep);
    write_manifest(rc.out_dir + "/manifest_evaluate.json", "evaluate",
                   json{{"checkpoint", ckpt_path},
                        {"queries", query_path},
                        {"gallery", gallery_path},
                        {"unseen_only", unseen_only},
                        {"distance", distance}},
                   0, {jpath, cpath, ppath});
    print_metrics(rep);
    return 0;
  }

  if (expemb->parsed()) {
    ModelBundle model = load_model(ckpt_path);
    Dataset data(load_features(rc.features, model.cfg.feature_dim));
    export_embeddings(model, data, export_path);
    std::cout << "wrote " << data.size() << " rows to " << export_path
              << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const TrainingError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
