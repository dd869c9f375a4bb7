// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Arguments select criteria by number (default: all).
// Scratch files go to $CCRL_ACCEPTANCE_DIR (default: a temp directory).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ccrl/augment.hpp"
#include "ccrl/checkpoint.hpp"
#include "ccrl/cluster.hpp"
#include "ccrl/config.hpp"
#include "ccrl/data.hpp"
#include "ccrl/loss.hpp"
#include "ccrl/model.hpp"
#include "ccrl/train.hpp"
#include "cli.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "op_gradients.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace ccrl;
using namespace ccrl::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Collects failed expectations; the first few are reported.
class Checks {
 public:
  bool expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 3) failures_.push_back(what);
    if (!ok) ++failed_;
    return ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_ == 0; }
  std::string detail() const {
    std::string out;
    auto add = [&](const std::string& s) { out += (out.empty() ? "" : "; ") + s; };
    for (const auto& n : notes_) add(n);
    if (failed_) add(std::to_string(failed_) + " failed");
    for (const auto& f : failures_) add(f);
    return out;
  }

 private:
  std::vector<std::string> notes_, failures_;
  std::size_t failed_ = 0;
};

fs::path work_dir() {
  const char* env = std::getenv("CCRL_ACCEPTANCE_DIR");
  const fs::path d = env && *env ? fs::path(env) : fs::temp_directory_path() / "ccrl_acceptance";
  fs::create_directories(d);
  return d;
}

Tensor<double> unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  auto t = random_tensor(rng, {n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(s);
  }
  return t;
}

Tensor<float> stack(const std::vector<Image>& images) {
  const auto& f = images.front();
  Tensor<float> out({images.size(), f.channels, f.height, f.width});
  for (std::size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].data.begin(), images[i].data.end(), out.data() + i * f.data.size());
  return out;
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences.

Checks gradients() {
  Checks c;
  std::size_t cases = 0, coords = 0, refined = 0;
  for (int trial = 0; trial < 100; ++trial)
    for (const auto& [name, r] : op_gradient_trial(trial)) {
      ++cases;
      coords += r.checked;
      c.expect(r.ok(), name + " trial " + std::to_string(trial) + ": " + r.first_failure);
    }
  for (int trial = 0; trial < 4; ++trial) {
    HeadConfig head;
    head.prediction_head = trial % 2 == 0;
    CcrlModel<double> m(BackboneConfig{}, head, 16, 100 + trial);
    Rng rng(200 + trial);
    const std::size_t n = 2 + trial % 2;
    const auto x = random_tensor(rng, {n, 3, 32, 32}, 0.0, 1.0);
    const auto keys = unit_rows(rng, n, 64), queue = unit_rows(rng, 4, 64);
    auto loss = [&](Tape<double>& tape) { return info_nce(m.forward_query(tape, tape.constant(x)), keys, queue, 0.07); };
    const auto r = gradcheck_parameters(loss, m.query_parameters(), 2, trial);
    ++cases;
    coords += r.checked;
    refined += r.refined;
    c.expect(r.ok(), "query path + loss trial " + std::to_string(trial) + ": " + r.first_failure);
  }
  c.note(fmt("%zu cases, %zu coordinates, rel tol 1e-4, %zu kink retries", cases, coords, refined));
  c.expect(cases >= 100, "fewer than 100 cases");
  return c;
}

// ---------------------------------------------------------------------------
// 2. EMA update.

Checks momentum() {
  Checks c;
  using M = CcrlModel<double>;
  auto randomized = [](std::uint64_t seed) {
    M m(BackboneConfig{}, HeadConfig{}, 8, seed);
    Rng rng(seed + 1);
    for (auto* p : m.query_parameters())
      for (auto& v : p->value.storage()) v += rng.uniform(-0.5, 0.5);
    return m;
  };
  auto snapshot = [](M& m) {
    std::vector<std::vector<double>> out;
    for (auto* p : m.key_parameters()) out.push_back(p->value.storage());
    return out;
  };
  // Query backbone + projector, aligned with key parameters by name.
  auto sources = [](M& m) {
    std::map<std::string, const Parameter<double>*> by_name;
    for (auto* p : m.query_parameters()) by_name[p->name] = p;
    std::vector<const Parameter<double>*> out;
    for (auto* k : m.key_parameters()) out.push_back(by_name.at("query." + k->name.substr(4)));
    return out;
  };

  const double eps = std::numeric_limits<double>::epsilon();
  Rng rng(9);
  double worst = 0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 5; ++trial) {
    M m = randomized(trial);
    for (auto* k : m.key_parameters())
      for (auto& v : k->value.storage()) v += rng.uniform(-0.5, 0.5);
    const double mm = rng.uniform(0.0, 1.0);
    const auto before = snapshot(m);
    m.momentum_update(mm);
    const auto src = sources(m);
    const auto keys = m.key_parameters();
    for (std::size_t i = 0; i < keys.size(); ++i)
      for (std::size_t j = 0; j < keys[i]->value.size(); ++j) {
        const long double want = static_cast<long double>(mm) * before[i][j] + (1.0L - mm) * src[i]->value[j];
        const double scale = std::abs(mm * before[i][j]) + std::abs((1 - mm) * src[i]->value[j]);
        const double err = std::abs(static_cast<double>(keys[i]->value[j] - want));
        worst = std::max(worst, err / std::max(scale, 1e-300));
        c.expect(err <= 4 * eps * scale, "blend off at " + keys[i]->name);
        ++checked;
      }
  }
  {
    M m = randomized(20);
    const auto before = snapshot(m);
    m.momentum_update(1.0);
    c.expect(snapshot(m) == before, "m=1 changed the key network");
    m.momentum_update(0.0);
    const auto src = sources(m);
    const auto keys = m.key_parameters();
    for (std::size_t i = 0; i < keys.size(); ++i)
      c.expect(keys[i]->value.storage() == src[i]->value.storage(), "m=0 did not copy " + keys[i]->name);
  }
  for (double mm : {0.9, 0.99, 0.999}) {
    M m = randomized(30);
    const auto src = sources(m);
    auto deviation = [&] {
      double d = 0;
      const auto keys = m.key_parameters();
      for (std::size_t i = 0; i < keys.size(); ++i)
        for (std::size_t j = 0; j < keys[i]->value.size(); ++j)
          d = std::max(d, std::abs(keys[i]->value[j] - src[i]->value[j]));
      return d;
    };
    const double d0 = deviation();
    for (int s = 1; s <= 50; ++s) {
      m.momentum_update(mm);
      c.expect(std::abs(deviation() - d0 * std::pow(mm, s)) <= 1e-6 * std::max(1.0, d0),
               fmt("decay off at m=%g s=%d", mm, s));
    }
  }
  c.note(fmt("%zu blended values, worst rel err %.2g", checked, worst));
  return c;
}

// ---------------------------------------------------------------------------
// 3. InfoNCE against a long-double oracle.

double loss_value(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& queue, double tau,
                  NegativeSet set = NegativeSet::batch_and_queue) {
  Tape<double> t(false);
  return info_nce(t.constant(q), k, queue, tau, set).value().item();
}

Checks contrastive_loss() {
  Checks c;
  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + rng.below(8), nq = rng.below(33), d = 2 + rng.below(16);
    const double tau = rng.uniform(0.05, 1.0);
    const auto set = trial % 2 ? NegativeSet::queue_only : NegativeSet::batch_and_queue;
    const auto q = random_tensor(rng, {n, d}), k = random_tensor(rng, {n, d});
    const auto queue = nq ? unit_rows(rng, nq, d) : Tensor<double>{};
    const double err = std::abs(loss_value(q, k, queue, tau, set) - info_nce_oracle(q, k, queue, tau, set));
    worst = std::max(worst, err);
    c.expect(err <= 1e-6, fmt("trial %d off by %.3g", trial, err));
  }
  {
    const Tensor<double> q({1, 3}, std::vector<double>{1, 0, 0});
    const Tensor<double> queue({2, 3}, std::vector<double>{0, 1, 0, 0, 0, 1});
    const double v = loss_value(q, q, queue, 0.07);
    c.expect(std::abs(v - 1.25e-6) <= 0.01e-6, fmt("aligned positive gave %.6g", v));
  }
  {
    const std::size_t n = 4, nq = 6, d = 5;
    auto row = random_tensor(rng, {1, d});
    Tensor<double> q({n, d}), queue({nq, d});
    for (std::size_t r = 0; r < n; ++r) std::copy_n(row.data(), d, q.data() + r * d);
    const auto unit = normalize_rows(row);
    for (std::size_t r = 0; r < nq; ++r) std::copy_n(unit.data(), d, queue.data() + r * d);
    const double v = loss_value(q, q, queue, 0.07);
    c.expect(std::abs(v - std::log(10.0)) <= 1e-9, fmt("uniform case gave %.9g", v));
  }
  {
    const auto q = random_tensor(rng, {1, 8}), k = random_tensor(rng, {1, 8});
    c.expect(loss_value(q, k, Tensor<double>{}, 0.07) == 0.0, "empty queue N=1 not zero");
  }
  c.note(fmt("400 random batches, worst abs err %.2g", worst));
  return c;
}

// ---------------------------------------------------------------------------
// 4. Clustering metrics against brute force.

Checks metrics() {
  Checks c;
  c.expect(std::abs(ari(P{0, 0, 1, 1}, P{0, 1, 0, 1}) + 0.5) < 1e-15, "ARI fixture");
  c.expect(std::abs(purity(P{0, 0, 1, 1, 1}, P{0, 0, 0, 1, 1}) - 0.8) < 1e-15, "purity fixture");
  for (const P& p : {P{0, 0, 1, 1}, P{0, 1, 2, 0, 1, 2}, P{3, 3, 1, 2}})
    c.expect(ami(p, p) == 1.0 && ari(p, p) == 1.0 && purity(p, p) == 1.0, "identical partitions");
  std::size_t pairs = 0;
  double worst = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    const auto ps = partitions(n, 3);
    for (const auto& t : ps)
      for (const auto& p : ps) {
        const double dp = std::abs(purity(t, p) - brute_purity(t, p));
        const double da = std::abs(ami(t, p) - brute_ami(t, p));
        const double dr = n >= 2 ? std::abs(ari(t, p) - brute_ari(t, p)) : 0.0;
        worst = std::max({worst, dp, da, dr});
        c.expect(dp <= 1e-12 && da <= 1e-9 && dr <= 1e-12, fmt("mismatch at n=%zu", n));
        ++pairs;
      }
  }
  c.note(fmt("%zu partition pairs, worst diff %.2g", pairs, worst));
  return c;
}

// ---------------------------------------------------------------------------
// 5. Negative queue discipline.

Checks queue_discipline() {
  Checks c;
  Rng rng(41);
  std::size_t pushes = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cap = 1 + rng.below(40), d = 2 + rng.below(10);
    NegativeQueue<double> q(cap, d);
    std::deque<std::vector<double>> model;
    for (int step = 0; step < 60; ++step) {
      const std::size_t n = rng.below(cap + 5) + (step % 7 == 0 ? 2 * cap : 0);
      if (n == 0) continue;
      // Each row is a marker: a random unit vector remembered by the model.
      const auto rows = unit_rows(rng, n, d);
      q.push(rows);
      ++pushes;
      for (std::size_t r = 0; r < n; ++r) {
        model.emplace_back(rows.data() + r * d, rows.data() + (r + 1) * d);
        if (model.size() > cap) model.pop_front();
      }
      c.expect(q.count() <= cap, "count above capacity");
      c.expect(q.count() == model.size(), "count differs from FIFO model");
      const auto got = q.contents();
      for (std::size_t r = 0; r < model.size(); ++r) {
        c.expect(std::equal(model[r].begin(), model[r].end(), got.data() + r * d), "FIFO order broken");
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += got.at(r, j) * got.at(r, j);
        c.expect(std::abs(std::sqrt(s) - 1.0) <= 1e-5, "entry not unit norm");
      }
    }
  }
  c.note(fmt("%zu randomized pushes", pushes));
  return c;
}

// ---------------------------------------------------------------------------
// 6. Augmentation identities and golden views.

Checks augmentation() {
  Checks c;
  AugmentConfig zero = AugmentConfig::identity();
  zero.p_jitter = 1.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image img = test_cell(32 + s, 40, s);
    Rng rng(s);
    c.expect(color_jitter(img, zero, rng) == img, "zero-strength jitter");
    c.expect(rotate(img, 0.0) == img, "zero rotation");
    c.expect(hflip(hflip(img)) == img && vflip(vflip(img)) == img, "double flip");
    const Image g = to_grayscale(img);
    c.expect(to_grayscale(g) == g, "grayscale idempotence");
    const float level = static_cast<float>(s) / 19.0f;
    const Image flat(24, 24, 3, level);
    const Image blurred = gaussian_blur(flat, 0.1 + 0.1 * s);
    float dev = 0;
    for (float v : blurred.data) dev = std::max(dev, std::abs(v - level));
    c.expect(dev <= 1e-6f, "blur changed a constant image");
  }
  AugmentConfig cfg;
  std::size_t views = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Image img = test_cell(20 + s % 60, 24 + s % 37, s);
    for (bool lg : {true, false}) {
      const auto pair = make_view_pair(img, cfg, s, lg);
      for (const Image* v : {&pair.query.image, &pair.key.image}) {
        ++views;
        c.expect(v->width == 32 && v->height == 32 && v->channels == 3, "view not 32x32x3");
        for (float x : v->data) {
          if (!(x >= 0.0f && x <= 1.0f)) {
            c.expect(false, "view value outside [0, 1]");
            break;
          }
        }
      }
    }
  }
  const Image cell = test_cell(48, 48, 99);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = make_view_pair(cell, cfg, seed, true), b = make_view_pair(cell, cfg, seed, true);
    c.expect(a.query.image == b.query.image && a.key.image == b.key.image, "views differ between runs");
    for (const auto& [view, tag] : {std::pair{&a.query.image, "query"}, std::pair{&a.key.image, "key"}}) {
      const auto path = fixture_dir() / "golden" / ("view_" + std::to_string(seed) + "_" + tag + ".png");
      c.expect(read_png(path.string()) == quantize(*view), "golden mismatch " + path.filename().string());
    }
  }
  c.note(fmt("%zu views checked, 6 golden images", views));
  return c;
}

// ---------------------------------------------------------------------------
// Shared desk-profile experiment on the synthetic dataset.

struct SynthData {
  std::vector<Image> images;
  std::vector<int> labels;
  Tensor<float> batch;
};

const SynthData& synth_data() {
  static const SynthData data = [] {
    SynthData d;
    for (auto& crop : synth_dataset(SynthConfig{500, 3, 32, 7})) {
      d.images.push_back(std::move(crop.pixels));
      d.labels.push_back(*crop.label);
    }
    d.batch = stack(d.images);
    return d;
  }();
  return data;
}

struct DeskRun {
  fs::path dir;
  std::vector<LogEntry> log;
  MetricsReport report;
  double seconds = 0;
};

const KMeansConfig kEvalKMeans{3, 10, 300, 0};

MetricsReport evaluate_model(const Model& model, const RunConfig& cfg) {
  const auto& d = synth_data();
  return evaluate(embed_images(model, d.batch, cfg.train.ensembling, cfg.eval.projected), d.labels, kEvalKMeans);
}

DeskRun desk_run(const std::string& name) {
  DeskRun r;
  r.dir = work_dir() / name;
  fs::remove_all(r.dir);
  const auto cfg = RunConfig::desk();
  const auto t0 = Clock::now();
  const auto rep = run_training(cfg, synth_data().images, r.dir);
  r.log = rep.log;
  r.report = evaluate_model(*model_from_checkpoint(Checkpoint::load(rep.final_checkpoint)), cfg);
  r.seconds = seconds_since(t0);
  return r;
}

const DeskRun& first_run() {
  static const DeskRun r = desk_run("desk_a");
  return r;
}

// ---------------------------------------------------------------------------
// 7. End-to-end synthetic experiment.

Checks synthetic_experiment() {
  Checks c;
  const auto cfg = RunConfig::desk();
  const Trainer fresh(cfg, synth_data().images);
  const auto untrained = evaluate_model(fresh.model(), cfg);
  const auto& run = first_run();
  const auto losses = epoch_losses(run.log);
  c.expect(losses.back() < losses.front(), fmt("smoothed loss %.4f -> %.4f", losses.front(), losses.back()));
  c.expect(run.report.ami >= untrained.ami + 0.15, "AMI gain below 0.15");
  c.expect(run.report.ami >= 0.5, "AMI below 0.5");
  c.expect(run.seconds <= 15 * 60, "slower than 15 min");
  c.note(fmt("epoch-mean loss %.4f -> %.4f, AMI %.3f (untrained %.3f), ARI %.3f, purity %.3f, %.0f s", losses.front(),
             losses.back(), run.report.ami, untrained.ami, run.report.ari, run.report.purity, run.seconds));
  return c;
}

// ---------------------------------------------------------------------------
// 8. Ablation toggles through the command line.

int cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

Checks ablations() {
  Checks c;
  const fs::path root = work_dir() / "ablations";
  fs::remove_all(root);
  const std::string ds = (root / "synth").string(), manifest = ds + "/manifest.csv";
  c.expect(cli({"synth", "--out", ds, "--n-per-class", "500", "--classes", "3", "--seed", "7"}) == 0, "synth failed");
  const std::vector<std::pair<std::string, std::string>> variants{
      {"no_local_global", "--no-local-global"}, {"no_ensembling", "--no-ensembling"},
      {"no_prediction_head", "--no-prediction-head"}};
  std::string summary;
  for (const auto& [name, flag] : variants) {
    const std::string run = (root / name).string(), ckpt = run + "/checkpoints/final.ckpt";
    const std::string emb = run + "/embeddings.bin", metrics = run + "/metrics.csv";
    std::string err;
    const bool trained = cli({"train", "--manifest", manifest, "--run", run, flag, "--epochs", "3", "--set",
                              "warmup_epochs=1", "--quiet"},
                             &err) == 0;
    if (!c.expect(trained, name + " train: " + err)) continue;
    c.expect(cli({"embed", "--checkpoint", ckpt, "--manifest", manifest, "--out", emb}, &err) == 0, name + " embed: " + err);
    c.expect(cli({"evaluate", "--embeddings", emb, "--manifest", manifest, "--k", "3", "--out", metrics}, &err) == 0,
             name + " evaluate: " + err);
    std::ifstream in(metrics);
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    try {
      const auto r = parse_report_csv(text);
      c.expect(r.n == 1500 && r.k == 3, name + " report has wrong size");
      summary += fmt("%s%s AMI %.3f", summary.empty() ? "" : ", ", name.c_str(), r.ami);
    } catch (const Error& e) {
      c.expect(false, name + " report: " + e.what());
    }
    if (name == "no_prediction_head") {
      const auto ck = Checkpoint::load(ckpt);
      for (const auto& n : ck.names()) c.expect(n.find("predictor") == std::string::npos, "predictor tensor " + n);
    }
    if (name == "no_ensembling") {
      // The run's config turns ensembling off; --no-ensembling must match it.
      const std::string q = run + "/query.bin";
      c.expect(cli({"embed", "--checkpoint", ckpt, "--manifest", manifest, "--out", q, "--no-ensembling"}) == 0,
               "query embed failed");
      c.expect(load_tensor<double>(q) == load_tensor<double>(emb), "--no-ensembling differs from run config");
      const std::string k = run + "/key.bin";
      c.expect(cli({"embed", "--checkpoint", ckpt, "--manifest", manifest, "--out", k, "--set", "ensembling=true"}) == 0,
               "key embed failed");
      c.expect(!(load_tensor<double>(k) == load_tensor<double>(q)), "trained key and query embeddings coincide");
    }
  }
  // Key and query embeddings coincide before training and split at the first update.
  auto cfg = RunConfig::desk();
  cfg.train.batch_size = 16;
  std::vector<Image> few(synth_data().images.begin(), synth_data().images.begin() + 48);
  Trainer t(cfg, few);
  const auto x = stack(few);
  c.expect(embed_images(t.model(), x, true, false) == embed_images(t.model(), x, false, false), "differ at step 0");
  std::size_t steps = 0;
  while (t.step().lr == 0.0) ++steps;
  ++steps;
  c.expect(!(embed_images(t.model(), x, true, false) == embed_images(t.model(), x, false, false)),
           "identical after a training step");
  c.note(summary + fmt("; split after %zu step(s), the first at lr 0", steps));
  return c;
}

// ---------------------------------------------------------------------------
// 9. Reproducibility.

Checks reproducibility() {
  Checks c;
  const auto& a = first_run();
  const auto b = desk_run("desk_b");
  c.expect(a.log == b.log, "loss logs differ");
  c.expect(a.report == b.report, "metrics reports differ");
  const auto cfg = RunConfig::desk();
  Trainer resumed(cfg, synth_data().images, Checkpoint::load(a.dir / "checkpoints" / "epoch_010.ckpt"));
  const auto next = resumed.step();
  const auto& want = a.log.at(next.step);
  c.expect(next == want, fmt("resumed step %llu loss %.17g, uninterrupted %.17g", (unsigned long long)next.step,
                             next.loss, want.loss));
  c.note(fmt("%zu log rows equal, AMI %.6f both runs, resume at step %llu exact", a.log.size(), a.report.ami,
             (unsigned long long)next.step));
  return c;
}

// ---------------------------------------------------------------------------
// 10. Data preparation.

Checks data_preparation() {
  Checks c;
  c.expect(scale_window({10, 10, 20, 20}, 2.0) == Window{5, 5, 25, 25}, "factor-2 centering");
  c.expect(scale_window({3, 7, 18, 12}, 1.0) == Window{3, 7, 18, 12}, "factor-1 identity");
  c.expect(crop_window({0, 0, 6, 8}, 2.0, 40, 30) == Window{0, 0, 9, 12}, "top-left clamp");
  c.expect(crop_window({34, 24, 40, 30}, 2.0, 40, 30) == Window{31, 21, 40, 30}, "bottom-right clamp");
  std::size_t instances = 0;
  std::vector<CellCrop> all;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto tile = synth_tile("t" + std::to_string(s), 160, 120, 12, 3, s);
    const auto boxes = instance_boxes(tile.mask);
    auto crops = extract_crops(tile, 2.0);
    instances += boxes.size();
    c.expect(crops.size() == boxes.size(), "crop count differs from instance count");
    std::set<std::uint32_t> ids;
    for (const auto& cr : crops) ids.insert(cr.instance_id);
    c.expect(ids.size() == crops.size(), "duplicate instance crops");
    for (auto& cr : crops) all.push_back(std::move(cr));
  }
  const fs::path dir = work_dir() / "prepare";
  fs::remove_all(dir);
  const auto written = save_crops(dir, all, {{"window_factor", "2"}, {"source", "acceptance"}});
  const auto back = read_manifest(dir / "manifest.csv");
  c.expect(back.rows == written.rows && back.metadata == written.metadata, "manifest round trip");
  write_manifest(dir / "again.csv", back);
  std::ifstream f1(dir / "manifest.csv"), f2(dir / "again.csv");
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  c.expect(s1 == s2, "manifest bytes changed on rewrite");
  c.note(fmt("%zu instances, %zu manifest rows", instances, back.rows.size()));
  return c;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Checks()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient correctness", gradients},
      {2, "momentum update exactness", momentum},
      {3, "contrastive loss oracle", contrastive_loss},
      {4, "clustering metric oracle", metrics},
      {5, "negative queue discipline", queue_discipline},
      {6, "augmentation identities", augmentation},
      {7, "synthetic end-to-end experiment", synthetic_experiment},
      {8, "ablation toggles", ablations},
      {9, "reproducibility", reproducibility},
      {10, "data preparation", data_preparation},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& cr : all) {
    if (!selected.empty() && !selected.contains(cr.id)) continue;
    const auto t0 = Clock::now();
    Checks result;
    try {
      result = cr.run();
    } catch (const std::exception& e) {
      result.expect(false, std::string("exception: ") + e.what());
    }
    failed += !result.ok();
    std::printf("%s %2d %s (%.1f s): %s\n", result.ok() ? "PASS" : "FAIL", cr.id, cr.name, seconds_since(t0),
                result.detail().c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
