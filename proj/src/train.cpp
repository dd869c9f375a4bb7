#include "ccrl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ccrl/augment.hpp"
#include "ccrl/errors.hpp"
#include "ccrl/loss.hpp"

namespace fs = std::filesystem;

namespace ccrl {

std::vector<Image> split_images(const Tensor<float>& batch) {
  if (batch.rank() != 4) throw ShapeError("expected N×C×H×W images, got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::vector<Image> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = Image(w, h, c);
    std::copy_n(batch.data() + i * c * h * w, c * h * w, out[i].data.data());
  }
  return out;
}

namespace {

constexpr double kArchVersion = 1;

Tensor<float> stack(const std::vector<const Image*>& images) {
  const Image& first = *images[0];
  const std::size_t per = first.data.size();
  Tensor<float> out({images.size(), first.channels, first.height, first.width});
  for (std::size_t i = 0; i < images.size(); ++i) std::copy_n(images[i]->data.data(), per, out.data() + i * per);
  return out;
}

}  // namespace

Tensor<double> architecture_record(const Model& model) {
  const auto& b = model.backbone_config();
  const auto& h = model.head_config();
  std::vector<double> v{kArchVersion,
                        double(b.input_size),
                        double(b.in_channels),
                        double(b.stem_channels),
                        double(b.stem_stride),
                        double(b.feature_dim),
                        double(b.groups),
                        double(h.projector_in),
                        double(h.projector_hidden),
                        double(h.projector_out),
                        double(h.predictor_hidden),
                        double(model.has_predictor()),
                        double(model.queue().capacity()),
                        double(b.stages.size())};
  for (const auto& s : b.stages) {
    v.push_back(double(s.channels));
    v.push_back(double(s.blocks));
  }
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
  const auto a = ck.get<double>("arch");
  if (a.size() < 14 || a[0] != kArchVersion) throw FormatError("checkpoint architecture record is malformed");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(a[i]); };
  BackboneConfig b;
  b.input_size = u(1);
  b.in_channels = u(2);
  b.stem_channels = u(3);
  b.stem_stride = u(4);
  b.feature_dim = u(5);
  b.groups = u(6);
  HeadConfig h;
  h.projector_in = u(7);
  h.projector_hidden = u(8);
  h.projector_out = u(9);
  h.predictor_hidden = u(10);
  h.prediction_head = a[11] != 0;
  const std::size_t queue = u(12), stages = u(13);
  if (a.size() != 14 + 2 * stages) throw FormatError("checkpoint architecture record is malformed");
  b.stages.clear();
  for (std::size_t s = 0; s < stages; ++s) b.stages.push_back({u(14 + 2 * s), u(15 + 2 * s)});
  auto model = std::make_unique<Model>(b, h, queue, 0);
  restore_model(*model, ck);
  return model;
}

Checkpoint model_checkpoint(const Model& model) {
  Checkpoint ck;
  ck.put("arch", architecture_record(model));
  for (const auto* p : const_cast<Model&>(model).all_parameters()) ck.put(p->name, p->value);
  if (model.queue().count() > 0) ck.put("queue", model.queue().contents());
  ck.put_scalar("step", static_cast<double>(model.step()));
  return ck;
}

void restore_model(Model& model, const Checkpoint& ck) {
  const auto arch = ck.get<double>("arch");
  if (!(arch == architecture_record(model)))
    throw FormatError("checkpoint architecture does not match the configured model");
  std::size_t params = 0;
  for (auto* p : model.all_parameters()) {
    if (!ck.has(p->name)) throw FormatError("checkpoint lacks parameter " + p->name);
    auto t = ck.get<float>(p->name);
    if (t.shape() != p->value.shape())
      throw FormatError("checkpoint shape " + shape_str(t.shape()) + " for " + p->name + " does not match " +
                        shape_str(p->value.shape()));
    p->value = std::move(t);
    ++params;
  }
  const auto all = model.all_parameters();
  for (const auto& name : ck.names())
    if ((name.rfind("query.", 0) == 0 || name.rfind("key.", 0) == 0) &&
        std::none_of(all.begin(), all.end(), [&](const auto* p) { return p->name == name; }))
      throw FormatError("checkpoint has parameter " + name + " unknown to the model");
  if (ck.has("queue"))
    model.queue().restore(ck.get<float>("queue"));
  else
    model.queue().restore(Tensor<float>{});
  model.set_step(static_cast<std::uint64_t>(ck.get_scalar("step")));
}

Trainer::Trainer(const RunConfig& cfg, std::vector<Image> images) : cfg_(cfg), images_(std::move(images)) {
  init_common();
  HeadConfig head = cfg_.head;
  head.prediction_head = cfg_.train.prediction_head;
  model_ = std::make_unique<Model>(cfg_.backbone, head, cfg_.train.queue_capacity, cfg_.train.seed);
  adam_ = AdamState<float>::zeros_like(model_->query_parameters());
}

Trainer::Trainer(const RunConfig& cfg, std::vector<Image> images, const Checkpoint& resume)
    : Trainer(cfg, std::move(images)) {
  if (resume.has("rng.seed_hi")) {
    const auto seed = (static_cast<std::uint64_t>(resume.get_scalar("rng.seed_hi")) << 32) |
                      static_cast<std::uint64_t>(resume.get_scalar("rng.seed_lo"));
    if (seed != cfg_.train.seed)
      throw ConfigError("checkpoint was trained with seed " + std::to_string(seed) + ", config says " +
                        std::to_string(cfg_.train.seed));
  }
  restore_model(*model_, resume);
  auto params = model_->query_parameters();
  adam_.step = static_cast<std::uint64_t>(resume.get_scalar("adam.step"));
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_.m[i] = resume.get<float>("adam.m." + params[i]->name);
    adam_.v[i] = resume.get<float>("adam.v." + params[i]->name);
    if (adam_.m[i].shape() != params[i]->value.shape() || adam_.v[i].shape() != params[i]->value.shape())
      throw FormatError("optimizer state shape mismatch for " + params[i]->name);
  }
}

void Trainer::init_common() {
  cfg_.validate();
  if (images_.empty()) throw ConfigError("training dataset is empty");
  for (const auto& img : images_)
    if (img.channels != 3) throw ShapeError("training images must be RGB");
  if (cfg_.train.batch_size > images_.size())
    throw ConfigError("batch_size " + std::to_string(cfg_.train.batch_size) + " exceeds dataset size " +
                      std::to_string(images_.size()) + " (partial batches are dropped)");
  steps_per_epoch_ = images_.size() / cfg_.train.batch_size;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::size_t epoch = step / steps_per_epoch_, pos = step % steps_per_epoch_;
  if (epoch != cached_epoch_) {
    order_.resize(images_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(cfg_.train.seed, "shuffle", epoch));
    rng.shuffle(std::span<std::size_t>(order_));
    cached_epoch_ = epoch;
  }
  const std::size_t b = cfg_.train.batch_size;
  return {order_.begin() + static_cast<std::ptrdiff_t>(pos * b), order_.begin() + static_cast<std::ptrdiff_t>((pos + 1) * b)};
}

LogEntry Trainer::step() {
  const auto& tc = cfg_.train;
  const std::uint64_t s = model_->step();
  const auto idx = batch_indices(s);
  const std::size_t n = idx.size();
  std::vector<ViewPair> pairs(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t b = 0; b < n; ++b)
    pairs[b] = make_view_pair(images_[idx[b]], cfg_.augment, derive_seed(tc.seed, "augment", s, b), tc.local_global);
  std::vector<const Image*> qv(n), kv(n);
  for (std::size_t b = 0; b < n; ++b) {
    qv[b] = &pairs[b].query.image;
    kv[b] = &pairs[b].key.image;
  }
  const Tensor<float> qx = stack(qv), kx = stack(kv);

  LogEntry entry{s, static_cast<std::size_t>(s / steps_per_epoch_), 0.0, 0.0};
  entry.lr = lr_at(s, {tc.base_lr, tc.epochs, tc.warmup_epochs}, steps_per_epoch_);
  try {
    Tape<float> tape;
    const auto q = model_->forward_query(tape, tape.constant(qx));
    const Tensor<float> k = model_->forward_key(kx);
    const auto loss = info_nce(q, k, model_->queue().contents(), tc.temperature, tc.negatives);
    entry.loss = loss.value().item();
    tape.backward(loss);
    auto params = model_->query_parameters();
    std::vector<Tensor<float>> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(tape.grad_of(*p));
    AdamConfig ac;
    ac.weight_decay = tc.weight_decay;
    ac.decoupled = tc.decoupled_weight_decay;
    adam_step<float>(params, grads, adam_, entry.lr, ac);
    model_->momentum_update(tc.momentum);
    model_->queue().push(normalize_rows(k));
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("step " + std::to_string(s) + " (epoch " + std::to_string(entry.epoch) + ", lr " +
                         std::to_string(entry.lr) + "): " + e.what());
  }
  model_->set_step(s + 1);
  return entry;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck = model_checkpoint(*model_);
  auto params = const_cast<Model&>(*model_).query_parameters();
  ck.put_scalar("adam.step", static_cast<double>(adam_.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.put("adam.m." + params[i]->name, adam_.m[i]);
    ck.put("adam.v." + params[i]->name, adam_.v[i]);
  }
  ck.put_scalar("rng.seed_hi", static_cast<double>(cfg_.train.seed >> 32));
  ck.put_scalar("rng.seed_lo", static_cast<double>(cfg_.train.seed & 0xFFFFFFFFu));
  return ck;
}

namespace {

void write_log(const fs::path& path, const std::vector<LogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,epoch,lr,loss\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g,%.17g\n", static_cast<unsigned long long>(e.step), e.epoch, e.lr, e.loss);
    out << buf;
  }
}

}  // namespace

std::vector<LogEntry> read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,epoch,lr,loss") throw FormatError(path.string() + ": unexpected log header");
  std::vector<LogEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogEntry e;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%zu,%lf,%lf", &step, &e.epoch, &e.lr, &e.loss) != 4)
      throw FormatError(path.string() + ": malformed log row '" + line + "'");
    e.step = step;
    out.push_back(e);
  }
  return out;
}

std::vector<double> epoch_losses(const std::vector<LogEntry>& log) {
  std::vector<double> sums, counts;
  for (const auto& e : log) {
    if (e.epoch >= sums.size()) sums.resize(e.epoch + 1, 0.0), counts.resize(e.epoch + 1, 0.0);
    sums[e.epoch] += e.loss;
    counts[e.epoch] += 1;
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : NAN;
  return sums;
}

TrainReport run_training(const RunConfig& cfg, const std::vector<Image>& images, const fs::path& run_dir,
                         const fs::path& resume, std::uint64_t stop_after, std::ostream* progress) {
  fs::create_directories(run_dir / "checkpoints");
  std::unique_ptr<Trainer> trainer;
  TrainReport report;
  if (resume.empty()) {
    trainer = std::make_unique<Trainer>(cfg, images);
  } else {
    trainer = std::make_unique<Trainer>(cfg, images, Checkpoint::load(resume));
    if (fs::exists(run_dir / "log.csv")) {
      for (const auto& e : read_log(run_dir / "log.csv"))
        if (e.step < trainer->model().step()) report.log.push_back(e);
    }
    if (report.log.size() != trainer->model().step())
      throw FormatError("log.csv in " + run_dir.string() + " does not cover the resumed checkpoint's steps");
  }
  {
    std::ofstream conf(run_dir / "config.txt");
    conf << to_key_values(cfg);
  }
  const std::size_t spe = trainer->steps_per_epoch();
  const std::uint64_t limit = stop_after ? std::min<std::uint64_t>(stop_after, trainer->total_steps()) : trainer->total_steps();
  auto save = [&](const std::string& name) {
    const auto path = run_dir / "checkpoints" / name;
    trainer->checkpoint().save(path);
    return path;
  };
  try {
    while (trainer->model().step() < limit) {
      report.log.push_back(trainer->step());
      const std::uint64_t done = trainer->model().step();
      if (done % spe == 0) {
        const std::size_t epoch = done / spe;
        if (progress) {
          const auto losses = epoch_losses(report.log);
          *progress << "epoch " << epoch << "/" << cfg.train.epochs << "  loss " << losses[epoch - 1] << "  lr "
                    << report.log.back().lr << std::endl;
        }
        if (epoch % cfg.train.checkpoint_every == 0 && done < trainer->total_steps()) {
          char name[32];
          std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
          save(name);
        }
      }
    }
  } catch (const NonFiniteError& e) {
    write_log(run_dir / "log.csv", report.log);
    std::ofstream diag(run_dir / "diagnostics.txt");
    diag << "training aborted: " << e.what() << "\n";
    for (std::size_t i = report.log.size() > 10 ? report.log.size() - 10 : 0; i < report.log.size(); ++i)
      diag << "step " << report.log[i].step << " lr " << report.log[i].lr << " loss " << report.log[i].loss << "\n";
    throw;
  }
  write_log(run_dir / "log.csv", report.log);
  if (trainer->done()) {
    report.final_checkpoint = save("final.ckpt");
  } else {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06llu.ckpt", static_cast<unsigned long long>(trainer->model().step()));
    report.final_checkpoint = save(name);
  }
  return report;
}

Tensor<double> embed_images(const Model& model, const Tensor<float>& images, bool ensembling, bool projected) {
  return model.embed(images, ensembling, projected).cast<double>();
}

}  // namespace ccrl
