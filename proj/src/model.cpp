#include "ccrl/model.hpp"

#include <cmath>

namespace ccrl {

BackboneConfig BackboneConfig::resnet18() {
  BackboneConfig c;
  c.stem_channels = 64;
  c.stem_stride = 1;
  c.stages = {{64, 2}, {128, 2}, {256, 2}, {512, 2}};
  c.feature_dim = 512;
  return c;
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (input_size < 4 || in_channels == 0 || stem_channels == 0 || stem_stride == 0 || feature_dim == 0 || groups == 0)
    throw ConfigError("backbone dimensions must be positive");
  auto check_groups = [&](std::size_t ch) {
    if (ch % groups != 0)
      throw ConfigError(std::to_string(ch) + " channels not divisible into " + std::to_string(groups) + " groups");
  };
  check_groups(stem_channels);
  std::size_t size = (input_size + 2 - 3) / stem_stride + 1;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].channels == 0 || stages[s].blocks == 0) throw ConfigError("stage channels/blocks must be positive");
    check_groups(stages[s].channels);
    if (s > 0) size = (size + 2 - 3) / 2 + 1;
  }
  if (size < 1) throw ConfigError("input too small for the number of stages");
}

void HeadConfig::validate(const BackboneConfig& backbone) const {
  if (projector_in != backbone.feature_dim)
    throw ConfigError("projector input " + std::to_string(projector_in) + " != backbone feature_dim " +
                      std::to_string(backbone.feature_dim));
  if (projector_hidden == 0 || projector_out == 0 || predictor_hidden == 0)
    throw ConfigError("head dimensions must be positive");
}

namespace {

// Fan-in scaled uniform: U(-b, b), b = sqrt(6 / fan_in).
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <class T>
Conv2d<T>::Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  std::size_t pad, Rng& rng)
    : weight_{name + ".weight", fan_in_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)},
      stride_(stride),
      pad_(pad) {}

template <class T>
Var<T> Conv2d<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return ad::conv2d(x, tape.param(weight_), nullptr, stride_, pad_);
}

template <class T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight_{name + ".weight", fan_in_uniform<T>({in, out}, in, rng)}, bias_{name + ".bias", Tensor<T>({out})} {}

template <class T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return ad::add(ad::matmul(x, tape.param(weight_)), tape.param(bias_));
}

template <class T>
GroupNorm<T>::GroupNorm(const std::string& name, std::size_t channels, std::size_t groups)
    : gamma_{name + ".gamma", Tensor<T>({channels}, T{1})}, beta_{name + ".beta", Tensor<T>({channels})},
      groups_(groups) {}

template <class T>
Var<T> GroupNorm<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return ad::group_norm(x, tape.param(gamma_), tape.param(beta_), groups_);
}

template <class T>
PreActBlock<T>::PreActBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                            std::size_t groups, Rng& rng)
    : norm1_(name + ".norm1", in, groups),
      conv1_(name + ".conv1", in, out, 3, stride, 1, rng),
      norm2_(name + ".norm2", out, groups),
      conv2_(name + ".conv2", out, out, 3, 1, 1, rng) {
  if (stride != 1 || in != out) shortcut_.emplace(name + ".shortcut", in, out, 1, stride, 0, rng);
}

template <class T>
Var<T> PreActBlock<T>::operator()(Tape<T>& tape, Var<T> x) const {
  auto h = ad::relu(norm1_(tape, x));
  auto skip = shortcut_ ? (*shortcut_)(tape, h) : x;
  h = conv1_(tape, h);
  h = conv2_(tape, ad::relu(norm2_(tape, h)));
  return ad::add(h, skip);
}

template <class T>
template <class Refs>
void PreActBlock<T>::collect(Refs& out) {
  norm1_.collect(out);
  conv1_.collect(out);
  norm2_.collect(out);
  conv2_.collect(out);
  if (shortcut_) shortcut_->collect(out);
}

template <class T>
template <class Refs>
void PreActBlock<T>::collect(Refs& out) const {
  norm1_.collect(out);
  conv1_.collect(out);
  norm2_.collect(out);
  conv2_.collect(out);
  if (shortcut_) shortcut_->collect(out);
}

template <class T>
Backbone<T>::Backbone(const std::string& name, const BackboneConfig& cfg, Rng& rng)
    : stem_(name + ".stem", cfg.in_channels, cfg.stem_channels, 3, cfg.stem_stride, 1, rng),
      final_norm_(name + ".final_norm", cfg.stages.back().channels, cfg.groups),
      fc_(name + ".fc", cfg.stages.back().channels, cfg.feature_dim, rng) {
  std::size_t in = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s)
    for (std::size_t b = 0; b < cfg.stages[s].blocks; ++b) {
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      blocks_.emplace_back(name + ".stage" + std::to_string(s) + ".block" + std::to_string(b), in,
                           cfg.stages[s].channels, stride, cfg.groups, rng);
      in = cfg.stages[s].channels;
    }
}

template <class T>
Var<T> Backbone<T>::operator()(Tape<T>& tape, Var<T> x) const {
  auto h = stem_(tape, x);
  for (const auto& block : blocks_) h = block(tape, h);
  h = ad::global_avg_pool(ad::relu(final_norm_(tape, h)));
  return fc_(tape, h);
}

template <class T>
template <class Refs>
void Backbone<T>::collect(Refs& out) {
  stem_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
  fc_.collect(out);
}

template <class T>
template <class Refs>
void Backbone<T>::collect(Refs& out) const {
  stem_.collect(out);
  for (const auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
  fc_.collect(out);
}

template <class T>
Mlp<T>::Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : fc1_(name + ".fc1", in, hidden, rng), fc2_(name + ".fc2", hidden, out, rng) {}

template <class T>
Var<T> Mlp<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return fc2_(tape, ad::relu(fc1_(tape, x)));
}

// ---------------------------------------------------------------------------

template <class T>
NegativeQueue<T>::NegativeQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), ring_(capacity * dim) {
  if (capacity == 0 || dim == 0) throw ConfigError("queue capacity and width must be positive");
}

template <class T>
void NegativeQueue<T>::push(const Tensor<T>& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_)
    throw ShapeError("queue push expects N×" + std::to_string(dim_) + ", got " + shape_str(keys.shape()));
  const std::size_t n = keys.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0;
    for (std::size_t j = 0; j < dim_; ++j) sq += double(keys[r * dim_ + j]) * double(keys[r * dim_ + j]);
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
      throw ShapeError("queue push: row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(sq)));
  }
  // Only the last `capacity` rows can survive.
  const std::size_t first = n > capacity_ ? n - capacity_ : 0;
  for (std::size_t r = first; r < n; ++r) {
    std::size_t slot;
    if (count_ < capacity_) {
      slot = (head_ + count_) % capacity_;
      ++count_;
    } else {
      slot = head_;
      head_ = (head_ + 1) % capacity_;
    }
    std::copy_n(keys.data() + r * dim_, dim_, ring_.data() + slot * dim_);
  }
}

template <class T>
Tensor<T> NegativeQueue<T>::contents() const {
  if (count_ == 0) return {};
  Tensor<T> out({count_, dim_});
  for (std::size_t i = 0; i < count_; ++i)
    std::copy_n(ring_.data() + ((head_ + i) % capacity_) * dim_, dim_, out.data() + i * dim_);
  return out;
}

template <class T>
void NegativeQueue<T>::restore(const Tensor<T>& entries) {
  head_ = 0;
  count_ = 0;
  if (entries.empty()) return;
  if (entries.rank() != 2 || entries.dim(1) != dim_ || entries.dim(0) > capacity_)
    throw FormatError("queue contents " + shape_str(entries.shape()) + " do not fit capacity " +
                      std::to_string(capacity_) + "×" + std::to_string(dim_));
  push(entries);
}

// ---------------------------------------------------------------------------

namespace {

BackboneConfig validated(const BackboneConfig& b, const HeadConfig& h) {
  b.validate();
  h.validate(b);
  return b;
}

}  // namespace

template <class T>
CcrlModel<T>::CcrlModel(const BackboneConfig& backbone, const HeadConfig& head, std::size_t queue_capacity,
                        std::uint64_t seed)
    : CcrlModel(validated(backbone, head), head, queue_capacity, Rng(derive_seed(seed, "init")), Rng(0)) {}

template <class T>
CcrlModel<T>::CcrlModel(const BackboneConfig& backbone, const HeadConfig& head, std::size_t queue_capacity, Rng init,
                        Rng scratch)
    : backbone_cfg_(backbone),
      head_cfg_(head),
      query_backbone_("query.backbone", backbone, init),
      query_projector_("query.projector", head.projector_in, head.projector_hidden, head.projector_out, init),
      predictor_(head.prediction_head ? std::optional<Mlp<T>>(std::in_place, "query.predictor", head.projector_out,
                                                               head.predictor_hidden, head.projector_out, init)
                                      : std::nullopt),
      key_backbone_("key.backbone", backbone, scratch),
      key_projector_("key.projector", head.projector_in, head.projector_hidden, head.projector_out, scratch),
      queue_(queue_capacity, head.projector_out) {
  sync_key_from_query();
}

template <class T>
void CcrlModel<T>::check_input(const Shape& s) const {
  const auto& c = backbone_cfg_;
  if (s.size() != 4 || s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size)
    throw ShapeError("model input must be N×" + std::to_string(c.in_channels) + "×" + std::to_string(c.input_size) +
                     "×" + std::to_string(c.input_size) + ", got " + shape_str(s));
}

template <class T>
Var<T> CcrlModel<T>::query_backbone_features(Tape<T>& tape, Var<T> x) const {
  check_input(x.shape());
  return query_backbone_(tape, x);
}

template <class T>
Var<T> CcrlModel<T>::forward_query(Tape<T>& tape, Var<T> x) const {
  auto z = query_projector_(tape, query_backbone_features(tape, x));
  return predictor_ ? (*predictor_)(tape, z) : z;
}

template <class T>
Tensor<T> CcrlModel<T>::forward_key(const Tensor<T>& x) const {
  check_input(x.shape());
  Tape<T> tape(false);
  return key_projector_(tape, key_backbone_(tape, tape.constant_view(x))).value();
}

template <class T>
Tensor<T> CcrlModel<T>::embed(const Tensor<T>& x, bool use_ensemble, bool use_projected, std::size_t chunk) const {
  check_input(x.shape());
  const std::size_t n = x.dim(0), per = x.size() / n;
  const std::size_t width = use_projected ? head_cfg_.projector_out : backbone_cfg_.feature_dim;
  Tensor<T> out({n, width});
  const auto& backbone = use_ensemble ? key_backbone_ : query_backbone_;
  const auto& projector = use_ensemble ? key_projector_ : query_projector_;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Shape shape = x.shape();
    shape[0] = m;
    Tensor<T> part(shape, std::vector<T>(x.data() + start * per, x.data() + (start + m) * per));
    Tape<T> tape(false);
    auto h = backbone(tape, tape.constant(std::move(part)));
    if (use_projected) h = projector(tape, h);
    std::copy_n(h.value().data(), m * width, out.data() + start * width);
  }
  return out;
}

template <class T>
void CcrlModel<T>::momentum_update(double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum must lie in [0, 1], got " + std::to_string(m));
  auto keys = key_parameters();
  auto queries = query_ema_sources();
  if (keys.size() != queries.size()) throw InvariantError("key/query parameter sets are misaligned");
  const T keep = static_cast<T>(m), take = static_cast<T>(1.0 - m);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto& k = keys[i]->value;
    const auto& q = queries[i]->value;
    if (k.shape() != q.shape()) throw InvariantError("EMA shape mismatch at " + keys[i]->name);
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = keep * k[j] + take * q[j];
  }
}

template <class T>
void CcrlModel<T>::sync_key_from_query() {
  auto keys = key_parameters();
  auto queries = query_ema_sources();
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i]->value = queries[i]->value;
}

template <class T>
ParamRefs<T> CcrlModel<T>::query_parameters() {
  ParamRefs<T> out;
  query_backbone_.collect(out);
  query_projector_.collect(out);
  if (predictor_) predictor_->collect(out);
  return out;
}

template <class T>
ConstParamRefs<T> CcrlModel<T>::query_parameters() const {
  ConstParamRefs<T> out;
  query_backbone_.collect(out);
  query_projector_.collect(out);
  if (predictor_) predictor_->collect(out);
  return out;
}

template <class T>
ParamRefs<T> CcrlModel<T>::key_parameters() {
  ParamRefs<T> out;
  key_backbone_.collect(out);
  key_projector_.collect(out);
  return out;
}

template <class T>
ConstParamRefs<T> CcrlModel<T>::key_parameters() const {
  ConstParamRefs<T> out;
  key_backbone_.collect(out);
  key_projector_.collect(out);
  return out;
}

template <class T>
ConstParamRefs<T> CcrlModel<T>::query_ema_sources() const {
  ConstParamRefs<T> out;
  query_backbone_.collect(out);
  query_projector_.collect(out);
  return out;
}

template <class T>
ParamRefs<T> CcrlModel<T>::all_parameters() {
  auto out = query_parameters();
  auto keys = key_parameters();
  out.insert(out.end(), keys.begin(), keys.end());
  return out;
}

template class NegativeQueue<float>;
template class NegativeQueue<double>;
template class CcrlModel<float>;
template class CcrlModel<double>;

}  // namespace ccrl
