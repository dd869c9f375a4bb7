#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccrl/autodiff.hpp"
#include "ccrl/rng.hpp"

namespace ccrl {

struct StageSpec {
  std::size_t channels = 16;
  std::size_t blocks = 1;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Pre-activation residual network: stem conv, stages of residual blocks
/// (stage 0 at stride 1, later stages downsample by 2), final norm+relu,
/// global average pooling, linear projection to feature_dim.
struct BackboneConfig {
  std::size_t input_size = 32;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  std::vector<StageSpec> stages{{16, 1}, {32, 1}, {64, 1}};
  std::size_t feature_dim = 512;
  std::size_t groups = 8;

  static BackboneConfig desk() { return {}; }
  /// Pre-activated ResNet18 layout (CIFAR-style stem).
  static BackboneConfig resnet18();
  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct HeadConfig {
  std::size_t projector_in = 512;
  std::size_t projector_hidden = 128;
  std::size_t projector_out = 64;
  std::size_t predictor_hidden = 32;
  bool prediction_head = true;

  void validate(const BackboneConfig& backbone) const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;
template <class T>
using ConstParamRefs = std::vector<const Parameter<T>*>;

template <class T>
class Conv2d {
 public:
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
         std::size_t pad, Rng& rng);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  void collect(ParamRefs<T>& out) { out.push_back(&weight_); }
  void collect(ConstParamRefs<T>& out) const { out.push_back(&weight_); }

 private:
  Parameter<T> weight_;
  std::size_t stride_, pad_;
};

template <class T>
class Linear {
 public:
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  void collect(ParamRefs<T>& out) { out.insert(out.end(), {&weight_, &bias_}); }
  void collect(ConstParamRefs<T>& out) const { out.insert(out.end(), {&weight_, &bias_}); }

 private:
  Parameter<T> weight_;  // in×out
  Parameter<T> bias_;
};

template <class T>
class GroupNorm {
 public:
  GroupNorm(const std::string& name, std::size_t channels, std::size_t groups);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  void collect(ParamRefs<T>& out) { out.insert(out.end(), {&gamma_, &beta_}); }
  void collect(ConstParamRefs<T>& out) const { out.insert(out.end(), {&gamma_, &beta_}); }

 private:
  Parameter<T> gamma_, beta_;
  std::size_t groups_;
};

template <class T>
class PreActBlock {
 public:
  PreActBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride, std::size_t groups,
              Rng& rng);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  template <class Refs>
  void collect(Refs& out);
  template <class Refs>
  void collect(Refs& out) const;

 private:
  GroupNorm<T> norm1_;
  Conv2d<T> conv1_;
  GroupNorm<T> norm2_;
  Conv2d<T> conv2_;
  std::optional<Conv2d<T>> shortcut_;
};

template <class T>
class Backbone {
 public:
  Backbone(const std::string& name, const BackboneConfig& cfg, Rng& rng);
  /// N×C×S×S -> N×feature_dim
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  template <class Refs>
  void collect(Refs& out);
  template <class Refs>
  void collect(Refs& out) const;

 private:
  Conv2d<T> stem_;
  std::vector<PreActBlock<T>> blocks_;
  GroupNorm<T> final_norm_;
  Linear<T> fc_;
};

/// Two linear layers with a rectifier in between.
template <class T>
class Mlp {
 public:
  Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  template <class Refs>
  void collect(Refs& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }
  template <class Refs>
  void collect(Refs& out) const {
    fc1_.collect(out);
    fc2_.collect(out);
  }

 private:
  Linear<T> fc1_, fc2_;
};

/// FIFO memory of unit-norm key embeddings.
template <class T>
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim);

  /// Appends rows in order, evicting the oldest beyond capacity. Rows must
  /// have norm 1 ± 1e-4; a bad row rejects the whole batch.
  void push(const Tensor<T>& keys);
  /// Entries oldest first; an empty tensor when nothing is stored.
  Tensor<T> contents() const;
  void restore(const Tensor<T>& entries);

  std::size_t count() const noexcept { return count_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t capacity_, dim_;
  std::size_t head_ = 0, count_ = 0;
  std::vector<T> ring_;
};

/// Query network (backbone, projector, optional predictor), the momentum
/// key network (backbone, projector), the negative queue and the step.
template <class T>
class CcrlModel {
 public:
  CcrlModel(const BackboneConfig& backbone, const HeadConfig& head, std::size_t queue_capacity, std::uint64_t seed);

  /// Recorded on `tape`; gradients reach query parameters only.
  Var<T> forward_query(Tape<T>& tape, Var<T> x) const;
  Var<T> query_backbone_features(Tape<T>& tape, Var<T> x) const;
  /// Evaluated without recording.
  Tensor<T> forward_key(const Tensor<T>& x) const;
  /// Backbone features (or projected when use_projected) of the key network
  /// when use_ensemble, else of the query network. Processes x in chunks.
  Tensor<T> embed(const Tensor<T>& x, bool use_ensemble, bool use_projected, std::size_t chunk = 256) const;

  /// θ_k ← m·θ_k + (1−m)·θ_q over key backbone and key projector.
  void momentum_update(double m);
  /// Copies the query backbone/projector onto the key network.
  void sync_key_from_query();

  ParamRefs<T> query_parameters();
  ConstParamRefs<T> query_parameters() const;
  ParamRefs<T> key_parameters();
  ConstParamRefs<T> key_parameters() const;
  /// Query backbone+projector parameters, aligned with key_parameters().
  ConstParamRefs<T> query_ema_sources() const;
  /// Every tensor of the model by name: query, key.
  ParamRefs<T> all_parameters();

  NegativeQueue<T>& queue() noexcept { return queue_; }
  const NegativeQueue<T>& queue() const noexcept { return queue_; }
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }
  bool has_predictor() const noexcept { return predictor_.has_value(); }
  const BackboneConfig& backbone_config() const noexcept { return backbone_cfg_; }
  const HeadConfig& head_config() const noexcept { return head_cfg_; }

 private:
  CcrlModel(const BackboneConfig& backbone, const HeadConfig& head, std::size_t queue_capacity, Rng init, Rng scratch);
  void check_input(const Shape& s) const;

  BackboneConfig backbone_cfg_;
  HeadConfig head_cfg_;
  Backbone<T> query_backbone_;
  Mlp<T> query_projector_;
  std::optional<Mlp<T>> predictor_;
  Backbone<T> key_backbone_;
  Mlp<T> key_projector_;
  NegativeQueue<T> queue_;
  std::uint64_t step_ = 0;
};

extern template class CcrlModel<float>;
extern template class CcrlModel<double>;
extern template class NegativeQueue<float>;
extern template class NegativeQueue<double>;

}  // namespace ccrl
