#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "ccrl/augment.hpp"
#include "ccrl/cluster.hpp"
#include "ccrl/config.hpp"
#include "ccrl/data.hpp"
#include "ccrl/errors.hpp"
#include "ccrl/image.hpp"
#include "ccrl/kernels.hpp"
#include "ccrl/rng.hpp"
#include "ccrl/train.hpp"

namespace fs = std::filesystem;

namespace ccrl::cli {

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::string profile;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "override one config key (key=value), repeatable");
  cmd->add_option("--profile", a.profile, "desk or paper defaults")->check(CLI::IsMember({"desk", "paper"}));
}

/// Defaults < profile < file < --set < dedicated flags (applied by the caller).
RunConfig resolve(const ConfigArgs& a, const fs::path& fallback_file = {}) {
  std::vector<std::pair<std::string, std::string>> kv;
  if (!a.file.empty())
    kv = read_key_value_file(a.file);
  else if (!fallback_file.empty() && fs::exists(fallback_file))
    kv = read_key_value_file(fallback_file);
  if (!a.profile.empty()) kv.insert(kv.begin(), {"profile", a.profile});
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  RunConfig cfg;
  apply_settings(cfg, kv);
  return cfg;
}

void echo(std::ostream& out, const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  out << "# " << command << "\n";
  for (const auto& [k, v] : kv) out << "#   " << k << " = " << v << "\n";
}

void echo_config(std::ostream& out, const RunConfig& cfg) {
  std::istringstream in(to_key_values(cfg));
  std::string line;
  while (std::getline(in, line)) out << "#   " << line << "\n";
}

fs::path manifest_root(const fs::path& manifest) { return manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path(); }

void refuse_existing(const fs::path& out, bool force) {
  if (fs::exists(out / "manifest.csv") && !force)
    throw IoError(out.string() + " already holds a dataset; pass --force to overwrite");
  if (force) {
    fs::remove(out / "manifest.csv");
    fs::remove_all(out / "crops");
  }
}

void write_ids(const fs::path& path, const CropDataset& d) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,crop_path,tile_id,instance_id\n";
  for (std::size_t i = 0; i < d.rows.size(); ++i)
    out << i << "," << d.rows[i].crop_path << "," << d.rows[i].tile_id << "," << d.rows[i].instance_id << "\n";
}

std::size_t count_classes(const std::vector<int>& labels) { return std::set<int>(labels.begin(), labels.end()).size(); }

Tensor<double> load_embeddings(const std::string& path) {
  auto e = load_tensor<double>(path);
  if (e.rank() != 2) throw FormatError(path + ": embeddings must be an N×D matrix");
  return e;
}

std::vector<int> read_partition(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "index,cluster") throw FormatError(path.string() + ": expected header index,cluster");
  std::vector<int> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t idx = 0;
    int c = 0;
    if (std::sscanf(line.c_str(), "%zu,%d", &idx, &c) != 2 || idx != out.size())
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    out.push_back(c);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive cell representation learning: prepare, train, embed, cluster, evaluate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ccrl 1.0");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Extracts cell-centered crops from tiles and instance masks");
  std::string tiles, masks, prep_out;
  double window_factor = 2.0;
  bool force = false;
  prepare->add_option("--tiles", tiles, "directory of RGB PNG tiles")->required();
  prepare->add_option("--masks", masks, "directory of instance masks <stem>.png and labels <stem>.csv")->required();
  prepare->add_option("--window-factor", window_factor, "window size relative to the cell bounding box")
      ->check(CLI::PositiveNumber);
  prepare->add_option("--out", prep_out, "output dataset directory")->required();
  prepare->add_flag("--force", force, "overwrite an existing dataset");

  // synth
  auto* synth = app.add_subcommand("synth", "Writes a labeled synthetic dataset (or tiles with masks)");
  SynthConfig sc;
  std::string synth_out;
  std::size_t synth_tiles = 0;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n-per-class", sc.n_per_class, "crops per class")->check(CLI::PositiveNumber);
  synth->add_option("--classes", sc.n_classes, "number of classes")->check(CLI::Range(2, 64));
  synth->add_option("--seed", sc.seed, "random seed");
  synth->add_option("--tiles", synth_tiles, "write this many tiles with masks instead of crops");
  synth->add_flag("--force", synth_force, "overwrite an existing dataset");

  // train
  auto* train = app.add_subcommand("train", "Trains query and momentum encoders on a manifest");
  ConfigArgs train_cfg;
  std::string manifest, run_dir, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch;
  std::uint64_t stop_after = 0;
  bool no_lg = false, no_ens = false, no_pred = false, quiet = false;
  add_config_options(train, train_cfg);
  train->add_option("--manifest", manifest, "dataset manifest.csv")->required()->check(CLI::ExistingFile);
  train->add_option("--run", run_dir, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "master seed");
  train->add_option("--epochs", epochs, "number of epochs");
  train->add_option("--batch-size", batch, "batch size");
  train->add_option("--stop-after", stop_after, "stop after this many total steps (checkpointed)");
  train->add_flag("--no-local-global", no_lg, "both views use the cropping pipeline");
  train->add_flag("--no-ensembling", no_ens, "embed with the query encoder");
  train->add_flag("--no-prediction-head", no_pred, "drop the query prediction head");
  train->add_flag("--quiet", quiet, "no per-epoch progress");

  // embed
  auto* embed = app.add_subcommand("embed", "Computes inference embeddings for a manifest");
  ConfigArgs embed_cfg;
  std::string ckpt, embed_manifest, embed_out;
  bool embed_no_ens = false, projected = false;
  add_config_options(embed, embed_cfg);
  embed->add_option("--checkpoint", ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  embed->add_option("--manifest", embed_manifest, "dataset manifest.csv")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "embedding tensor file")->required();
  embed->add_flag("--no-ensembling", embed_no_ens, "use the query encoder instead of the momentum encoder");
  embed->add_flag("--projected", projected, "use projected 64-d features instead of backbone features");

  // cluster
  auto* cluster = app.add_subcommand("cluster", "K-means over an embedding file");
  std::string cl_emb, cl_out;
  std::size_t cl_k = 0, cl_restarts = 10;
  std::uint64_t cl_seed = 0;
  cluster->add_option("--embeddings", cl_emb, "embedding tensor file")->required()->check(CLI::ExistingFile);
  cluster->add_option("--k", cl_k, "number of clusters")->required()->check(CLI::PositiveNumber);
  cluster->add_option("--restarts", cl_restarts, "k-means restarts")->check(CLI::PositiveNumber);
  cluster->add_option("--seed", cl_seed, "k-means seed");
  cluster->add_option("--out", cl_out, "partition CSV")->required();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Scores a clustering against manifest labels");
  std::string ev_emb, ev_part, ev_manifest, ev_out;
  std::size_t ev_k = 0, ev_restarts = 10;
  std::uint64_t ev_seed = 0;
  auto* emb_opt = evaluate_cmd->add_option("--embeddings", ev_emb, "embedding tensor file (k-means is run)")
                      ->check(CLI::ExistingFile);
  auto* part_opt = evaluate_cmd->add_option("--partition", ev_part, "partition CSV from cluster")->check(CLI::ExistingFile);
  emb_opt->excludes(part_opt);
  evaluate_cmd->add_option("--manifest", ev_manifest, "labeled manifest.csv")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--k", ev_k, "number of clusters (default: number of labels)");
  evaluate_cmd->add_option("--restarts", ev_restarts, "k-means restarts")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--seed", ev_seed, "k-means seed");
  evaluate_cmd->add_option("--out", ev_out, "metrics CSV");

  // preview
  auto* preview = app.add_subcommand("preview", "Writes augmented view pairs as PNG files");
  ConfigArgs preview_cfg;
  std::string pv_manifest, pv_out;
  std::size_t pv_count = 8;
  std::uint64_t pv_seed = 0;
  bool pv_no_lg = false;
  add_config_options(preview, preview_cfg);
  preview->add_option("--manifest", pv_manifest, "dataset manifest.csv")->required()->check(CLI::ExistingFile);
  preview->add_option("--out", pv_out, "output directory")->required();
  preview->add_option("--count", pv_count, "number of crops")->check(CLI::PositiveNumber);
  preview->add_option("--seed", pv_seed, "augmentation seed");
  preview->add_flag("--no-local-global", pv_no_lg, "both views use the cropping pipeline");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "ccrl 1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun 'ccrl --help' for usage\n";
    return 1;
  }

  try {
    kernels::configure_threads_from_env();

    if (*prepare) {
      echo(out, "prepare", {{"tiles", tiles}, {"masks", masks}, {"window_factor", std::to_string(window_factor)}, {"out", prep_out}});
      refuse_existing(prep_out, force);
      const auto s = prepare_dataset(tiles, masks, window_factor, prep_out);
      for (const auto& w : s.warnings) err << "warning: " << w << "\n";
      out << "Type Count: " << s.type_count << "\nCell Count: " << s.cell_count << "\nTile Count: " << s.tile_count << "\n";
      return 0;
    }

    if (*synth) {
      echo(out, "synth", {{"out", synth_out}, {"n_per_class", std::to_string(sc.n_per_class)},
                          {"classes", std::to_string(sc.n_classes)}, {"seed", std::to_string(sc.seed)},
                          {"tiles", std::to_string(synth_tiles)}});
      if (synth_tiles > 0) {
        fs::create_directories(fs::path(synth_out) / "tiles");
        fs::create_directories(fs::path(synth_out) / "masks");
        std::size_t cells = 0;
        for (std::size_t i = 0; i < synth_tiles; ++i) {
          const auto t = synth_tile("tile" + std::to_string(i), 256, 256, 40, sc.n_classes, derive_seed(sc.seed, "tiles", i));
          write_png((fs::path(synth_out) / "tiles" / (t.id + ".png")).string(), t.image);
          write_label_png((fs::path(synth_out) / "masks" / (t.id + ".png")).string(), t.mask);
          std::ofstream side(fs::path(synth_out) / "masks" / (t.id + ".csv"));
          side << "instance_id,class_id\n";
          for (const auto& [id, cls] : t.labels) side << id << "," << cls << "\n";
          cells += t.labels.size();
        }
        out << "wrote " << synth_tiles << " tiles with " << cells << " cells\n";
        return 0;
      }
      refuse_existing(synth_out, synth_force);
      const auto crops = synth_dataset(sc);
      save_crops(synth_out, crops,
                 {{"source", "synth"}, {"seed", std::to_string(sc.seed)}, {"n_per_class", std::to_string(sc.n_per_class)},
                  {"classes", std::to_string(sc.n_classes)}});
      std::ofstream s(fs::path(synth_out) / "summary.txt");
      s << "Type Count: " << sc.n_classes << "\nCell Count: " << crops.size() << "\nTile Count: 0\n";
      out << "wrote " << crops.size() << " crops to " << synth_out << "\n";
      return 0;
    }

    if (*train) {
      RunConfig cfg = resolve(train_cfg);
      if (seed) cfg.train.seed = *seed;
      if (epochs) cfg.train.epochs = *epochs;
      if (batch) cfg.train.batch_size = *batch;
      if (no_lg) cfg.train.local_global = false;
      if (no_ens) cfg.train.ensembling = false;
      if (no_pred) cfg.train.prediction_head = false;
      cfg.validate();
      out << "# train\n#   manifest = " << manifest << "\n#   run = " << run_dir << "\n";
      echo_config(out, cfg);
      const auto d = read_manifest(manifest);
      const auto images = split_images(load_images(d, manifest_root(manifest)));
      fs::create_directories(run_dir);
      { std::ofstream(fs::path(run_dir) / "manifest_path.txt") << fs::absolute(manifest).string() << "\n"; }
      const auto rep = run_training(cfg, images, run_dir, resume, stop_after, quiet ? nullptr : &out);
      const auto losses = epoch_losses(rep.log);
      out << "steps " << rep.log.size() << "  first epoch loss " << losses.front() << "  last epoch loss " << losses.back()
          << "\ncheckpoint " << rep.final_checkpoint.string() << "\n";
      return 0;
    }

    if (*embed) {
      // The run's own config sits two levels above checkpoints/<file>.
      const auto run_config = fs::path(ckpt).parent_path().parent_path() / "config.txt";
      RunConfig cfg = resolve(embed_cfg, run_config);
      if (embed_no_ens) cfg.train.ensembling = false;
      if (projected) cfg.eval.projected = true;
      echo(out, "embed", {{"checkpoint", ckpt}, {"manifest", embed_manifest}, {"out", embed_out},
                          {"ensembling", cfg.train.ensembling ? "true" : "false"},
                          {"projected", cfg.eval.projected ? "true" : "false"}});
      const auto model = model_from_checkpoint(Checkpoint::load(ckpt));
      const auto d = read_manifest(embed_manifest);
      const auto e = embed_images(*model, load_images(d, manifest_root(embed_manifest)), cfg.train.ensembling, cfg.eval.projected);
      save_tensor(embed_out, e);
      write_ids(embed_out + ".ids.csv", d);
      out << "wrote " << e.dim(0) << "x" << e.dim(1) << " embeddings to " << embed_out << "\n";
      return 0;
    }

    if (*cluster) {
      echo(out, "cluster", {{"embeddings", cl_emb}, {"k", std::to_string(cl_k)}, {"restarts", std::to_string(cl_restarts)},
                            {"seed", std::to_string(cl_seed)}, {"out", cl_out}});
      const auto km = kmeans(load_embeddings(cl_emb), {cl_k, cl_restarts, 300, derive_seed(cl_seed, "kmeans")});
      std::ofstream o(cl_out);
      if (!o) throw IoError("cannot write " + cl_out);
      o << "index,cluster\n";
      for (std::size_t i = 0; i < km.assignment.size(); ++i) o << i << "," << km.assignment[i] << "\n";
      out << "inertia " << km.inertia << "  rows " << km.assignment.size() << "\n";
      return 0;
    }

    if (*evaluate_cmd) {
      if (ev_emb.empty() && ev_part.empty()) throw ConfigError("evaluate needs --embeddings or --partition");
      const auto d = read_manifest(ev_manifest);
      const auto labels = d.labels();
      const std::size_t k = ev_k ? ev_k : count_classes(labels);
      echo(out, "evaluate", {{"embeddings", ev_emb}, {"partition", ev_part}, {"manifest", ev_manifest},
                             {"k", std::to_string(k)}, {"restarts", std::to_string(ev_restarts)},
                             {"seed", std::to_string(ev_seed)}});
      MetricsReport r;
      if (!ev_emb.empty()) {
        const auto e = load_embeddings(ev_emb);
        if (e.dim(0) != labels.size())
          throw ShapeError("embeddings have " + std::to_string(e.dim(0)) + " rows, manifest has " + std::to_string(labels.size()));
        r = evaluate(e, labels, {k, ev_restarts, 300, derive_seed(ev_seed, "kmeans")});
      } else {
        const auto pred = read_partition(ev_part);
        if (pred.size() != labels.size())
          throw ShapeError("partition has " + std::to_string(pred.size()) + " rows, manifest has " + std::to_string(labels.size()));
        r = score(labels, pred, k, 0);
      }
      out << report_table(r);
      if (!ev_out.empty()) {
        std::ofstream o(ev_out);
        if (!o) throw IoError("cannot write " + ev_out);
        o << report_csv(r);
      }
      return 0;
    }

    if (*preview) {
      RunConfig cfg = resolve(preview_cfg);
      echo(out, "preview", {{"manifest", pv_manifest}, {"out", pv_out}, {"count", std::to_string(pv_count)},
                            {"seed", std::to_string(pv_seed)}, {"local_global", pv_no_lg ? "false" : "true"}});
      const auto d = read_manifest(pv_manifest);
      fs::create_directories(pv_out);
      const std::size_t n = std::min(pv_count, d.rows.size());
      for (std::size_t i = 0; i < n; ++i) {
        const auto img = read_png((manifest_root(pv_manifest) / d.rows[i].crop_path).string());
        const auto pair = make_view_pair(img, cfg.augment, derive_seed(pv_seed, "augment", 0, i), !pv_no_lg);
        char name[48];
        std::snprintf(name, sizeof name, "pair_%04zu_", i);
        write_png((fs::path(pv_out) / (std::string(name) + "source.png")).string(), img);
        write_png((fs::path(pv_out) / (std::string(name) + "query.png")).string(), pair.query.image);
        write_png((fs::path(pv_out) / (std::string(name) + "key.png")).string(), pair.key.image);
      }
      out << "wrote " << n << " view pairs to " << pv_out << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace ccrl::cli
