#include "ccrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ccrl/kernels.hpp"

namespace ccrl {

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::constant_view(const Tensor<T>& value) {
  Node n;
  n.view = &value;
  n.leaf = true;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.leaf = true;
  n.requires_grad = record_;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Node n;
  n.view = &p.value;
  n.leaf = true;
  n.requires_grad = record_;
  auto v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <class T>
const Tensor<T>& Tape<T>::value(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  return n.view ? *n.view : n.owned;
}

template <class T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
}

template <class T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  if (consumed_) throw InvariantError(std::string(op) + ": tape already consumed by backward()");
  if (!value.all_finite()) throw NonFiniteError(std::string(op) + " produced non-finite values");
  Node n;
  n.owned = std::move(value);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw InvariantError(std::string(op) + ": inputs from a different tape");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

template <class T>
Tensor<T>& Tape<T>::accum(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw InvariantError("backward: loss is not on this tape");
  if (!record_) throw InvariantError("backward: tape was built without gradient recording");
  if (consumed_) throw InvariantError("backward: tape already consumed; record the forward pass again");
  if (value(loss.id()).size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  accum(loss.id()).fill(T{1});
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
    // Interior gradients are dead once propagated.
    n.grad = Tensor<T>();
    n.backward = nullptr;
  }
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.leaf || !n.requires_grad) throw InvariantError("grad: node is not a differentiable leaf");
  if (n.grad.empty()) throw InvariantError("grad: no gradient reached this node");
  return n.grad;
}

template <class T>
Tensor<T> Tape<T>::grad_of(const Parameter<T>& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) return Tensor<T>(p.value.shape());
  return nodes_[it->second].grad;
}

template class Tape<float>;
template class Tape<double>;

namespace ad {

namespace {

template <class T>
void add_into(Tensor<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <class T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// True when b's shape equals the trailing axes of a's shape.
bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

template <class T>
void require_rank(const char* op, Var<T> a, std::size_t rank) {
  if (a.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

template <class T, class F>
Tensor<T> unary(Var<T> a, F f) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  kernels::gemm<T>(kernels::Trans::no, kernels::Trans::no, m, n, k, a.value().span(), b.value().span(), out.span());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib, m, n, k](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) {
      std::vector<T> tmp(m * k);
      kernels::gemm<T>(kernels::Trans::no, kernels::Trans::yes, m, k, n, g.span(), t.value(ib).span(), tmp);
      add_into<T>(t.accum(ia), tmp);
    }
    if (t.requires_grad(ib)) {
      std::vector<T> tmp(k * n);
      kernels::gemm<T>(kernels::Trans::yes, kernels::Trans::no, k, n, m, t.value(ia).span(), g.span(), tmp);
      add_into<T>(t.accum(ib), tmp);
    }
  });
}

namespace {

template <class T>
Var<T> add_sub(const char* op, Var<T> a, Var<T> b, T sign) {
  const auto& x = a.value();
  const auto& y = b.value();
  if (!is_suffix(x.shape(), y.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  const std::size_t inner = y.size();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign * y[i % inner];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [ia, ib, inner, sign](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) add_into<T>(t.accum(ia), g.span());
    if (t.requires_grad(ib)) {
      auto& gb = t.accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += sign * g[i];
    }
  });
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return add_sub("add", a, b, T{1});
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add_sub("sub", a, b, T{-1});
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.accum(ia);
      const auto& y = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.accum(ib);
      const auto& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape("div", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("div", std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / y[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
    }
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  const auto ia = a.id();
  return a.tape().record("add_scalar", unary(a, [s](T v) { return v + s; }), {a},
                         [ia](Tape<T>& t, std::uint32_t self) { add_into<T>(t.accum(ia), t.out_grad(self).span()); });
}

template <class T>
Var<T> mul_scalar(Var<T> a, T s) {
  const auto ia = a.id();
  return a.tape().record("mul_scalar", unary(a, [s](T v) { return v * s; }), {a},
                         [ia, s](Tape<T>& t, std::uint32_t self) {
                           const auto& g = t.out_grad(self);
                           auto& ga = t.accum(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                         });
}

template <class T>
Var<T> relu(Var<T> a) {
  const auto ia = a.id();
  return a.tape().record("relu", unary(a, [](T v) { return v > T{0} ? v : T{0}; }), {a},
                         [ia](Tape<T>& t, std::uint32_t self) {
                           const auto& g = t.out_grad(self);
                           const auto& x = t.value(ia);
                           auto& ga = t.accum(ia);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (x[i] > T{0}) ga[i] += g[i];
                         });
}

template <class T>
Var<T> exp(Var<T> a) {
  const auto ia = a.id();
  return a.tape().record("exp", unary(a, [](T v) { return std::exp(v); }), {a}, [ia](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    const auto& y = t.value(self);
    auto& ga = t.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

template <class T>
Var<T> log(Var<T> a) {
  const auto ia = a.id();
  return a.tape().record("log", unary(a, [](T v) { return std::log(v); }), {a}, [ia](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    const auto& x = t.value(ia);
    auto& ga = t.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value();
  out.reshape(std::move(shape));
  const auto ia = a.id();
  return a.tape().record("reshape", std::move(out), {a},
                         [ia](Tape<T>& t, std::uint32_t self) { add_into<T>(t.accum(ia), t.out_grad(self).span()); });
}

template <class T>
Var<T> flatten(Var<T> a) {
  if (a.shape().empty()) throw ShapeError("flatten: scalar input");
  const std::size_t n = a.shape()[0];
  return reshape(a, Shape{n, a.value().size() / n});
}

template <class T>
Var<T> transpose(Var<T> a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& x = a.value();
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const auto ia = a.id();
  return a.tape().record("transpose", std::move(out), {a}, [ia, r, c](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    auto& ga = t.accum(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  const auto& x = a.value();
  T s{0};
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const auto ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(s), {a}, [ia](Tape<T>& t, std::uint32_t self) {
    const T g = t.out_grad(self)[0];
    auto& ga = t.accum(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return mul_scalar(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <class T>
Var<T> sum_last(Var<T> a) {
  if (a.shape().empty()) throw ShapeError("sum_last: scalar input");
  const std::size_t inner = a.shape().back(), outer = a.value().size() / inner;
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  const auto& x = a.value();
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < outer; ++r) {
    T s{0};
    for (std::size_t j = 0; j < inner; ++j) s += x[r * inner + j];
    out[r] = s;
  }
  const auto ia = a.id();
  return a.tape().record("sum_last", std::move(out), {a}, [ia, inner, outer](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    auto& ga = t.accum(ia);
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t j = 0; j < inner; ++j) ga[r * inner + j] += g[r];
  });
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != ref[d])
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  Tensor<T> out(shape);
  const std::size_t row = total * inner;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record("concat", std::move(out), parts,
                                [ids, widths, outer, row](Tape<T>& t, std::uint32_t self) {
                                  const auto& g = t.out_grad(self);
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.requires_grad(ids[k])) {
                                      auto& gk = t.accum(ids[k]);
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gk[o * widths[k] + j] += g[o * row + off + j];
                                    }
                                    off += widths[k];
                                  }
                                });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::type_identity_t<const Var<T>*> bias, std::size_t stride, std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != xs[1])
    throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) + " vs weight " + shape_str(ws));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3]) throw ShapeError("conv2d: kernel larger than input");
  const kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad};
  const std::size_t outc = ws[0], oh = g.out_h(), ow = g.out_w(), plane = oh * ow, L = g.locations(), P = g.patch();
  if (bias && bias->shape() != Shape{outc}) throw ShapeError("conv2d: bias must have shape [out_channels]");

  auto col = std::make_shared<std::vector<T>>(P * L);
  kernels::im2col<T>(g, x.value().span(), *col);
  std::vector<T> y(outc * L);
  kernels::gemm<T>(kernels::Trans::no, kernels::Trans::no, outc, L, P, weight.value().span(), *col, y);

  Tensor<T> out({xs[0], outc, oh, ow});
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t o = 0; o < outc; ++o) {
      const T b = bias ? bias->value()[o] : T{0};
      const T* src = y.data() + o * L + n * plane;
      T* dst = out.data() + (n * outc + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }

  const auto ix = x.id(), iw = weight.id();
  const std::int64_t ibias = bias ? static_cast<std::int64_t>(bias->id()) : -1;
  auto fn = [g, col, ix, iw, ibias, outc, plane, L, P](Tape<T>& t, std::uint32_t self) {
    const auto& gout = t.out_grad(self);
    std::vector<T> gy(outc * L);
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t o = 0; o < outc; ++o)
        std::copy_n(gout.data() + (n * outc + o) * plane, plane, gy.data() + o * L + n * plane);
    if (t.requires_grad(iw)) {
      std::vector<T> gw(outc * P);
      kernels::gemm<T>(kernels::Trans::no, kernels::Trans::yes, outc, P, L, gy, *col, gw);
      add_into<T>(t.accum(iw), gw);
    }
    if (ibias >= 0 && t.requires_grad(static_cast<std::uint32_t>(ibias))) {
      auto& gb = t.accum(static_cast<std::uint32_t>(ibias));
      for (std::size_t o = 0; o < outc; ++o) {
        T s{0};
        for (std::size_t l = 0; l < L; ++l) s += gy[o * L + l];
        gb[o] += s;
      }
    }
    if (t.requires_grad(ix)) {
      std::vector<T> gcol(P * L);
      kernels::gemm<T>(kernels::Trans::yes, kernels::Trans::no, P, L, outc, t.value(iw).span(), gy, gcol);
      std::vector<T> gx(g.batch * g.channels * g.height * g.width);
      kernels::col2im<T>(g, gcol, gx);
      add_into<T>(t.accum(ix), gx);
    }
  };
  if (bias) return x.tape().record("conv2d", std::move(out), {x, weight, *bias}, std::move(fn));
  return x.tape().record("conv2d", std::move(out), {x, weight}, std::move(fn));
}

template <class T>
Var<T> avg_pool2d(Var<T> x, std::size_t kernel, std::size_t stride) {
  require_rank("avg_pool2d", x, 4);
  const Shape& s = x.shape();
  if (kernel == 0 || stride == 0 || kernel > s[2] || kernel > s[3]) throw ShapeError("avg_pool2d: bad window");
  const std::size_t oh = (s[2] - kernel) / stride + 1, ow = (s[3] - kernel) / stride + 1;
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  const auto& in = x.value();
  Tensor<T> out({s[0], s[1], oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) acc += in[(p * H + oy * stride + ky) * W + ox * stride + kx];
        out[(p * oh + oy) * ow + ox] = acc * inv;
      }
  const auto ix = x.id();
  return x.tape().record("avg_pool2d", std::move(out), {x},
                         [ix, planes, H, W, oh, ow, kernel, stride, inv](Tape<T>& t, std::uint32_t self) {
                           const auto& g = t.out_grad(self);
                           auto& gx = t.accum(ix);
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t oy = 0; oy < oh; ++oy)
                               for (std::size_t ox = 0; ox < ow; ++ox) {
                                 const T v = g[(p * oh + oy) * ow + ox] * inv;
                                 for (std::size_t ky = 0; ky < kernel; ++ky)
                                   for (std::size_t kx = 0; kx < kernel; ++kx)
                                     gx[(p * H + oy * stride + ky) * W + ox * stride + kx] += v;
                               }
                         });
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  require_rank("global_avg_pool", x, 4);
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], hw = s[2] * s[3];
  const T inv = T{1} / static_cast<T>(hw);
  const auto& in = x.value();
  Tensor<T> out({s[0], s[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc{0};
    for (std::size_t i = 0; i < hw; ++i) acc += in[p * hw + i];
    out[p] = acc * inv;
  }
  const auto ix = x.id();
  return x.tape().record("global_avg_pool", std::move(out), {x}, [ix, planes, hw, inv](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.out_grad(self);
    auto& gx = t.accum(ix);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
  });
}

template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t groups, T eps) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("group_norm: expected N×C×...");
  const std::size_t C = s[1];
  if (groups == 0 || C % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) throw ShapeError("group_norm: gamma/beta must be [C]");
  const kernels::GroupNormShape gs{s[0], C, x.value().size() / (s[0] * C), groups};
  Tensor<T> out(s);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto rstd = std::make_shared<std::vector<T>>(s[0] * groups);
  kernels::group_norm_forward<T>(gs, x.value().span(), gamma.value().span(), beta.value().span(), eps, out.span(),
                                 *xhat, *rstd);
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record("group_norm", std::move(out), {x, gamma, beta},
                         [gs, xhat, rstd, ix, ig, ib](Tape<T>& t, std::uint32_t self) {
                           const auto& g = t.out_grad(self);
                           std::vector<T> dx(g.size()), dgamma(gs.channels), dbeta(gs.channels);
                           kernels::group_norm_backward<T>(gs, g.span(), *xhat, t.value(ig).span(), *rstd, dx, dgamma,
                                                           dbeta);
                           if (t.requires_grad(ix)) add_into<T>(t.accum(ix), dx);
                           if (t.requires_grad(ig)) add_into<T>(t.accum(ig), dgamma);
                           if (t.requires_grad(ib)) add_into<T>(t.accum(ib), dbeta);
                         });
}

template <class T>
Var<T> l2normalize(Var<T> a) {
  if (a.shape().empty()) throw ShapeError("l2normalize: scalar input");
  const std::size_t d = a.shape().back(), rows = a.value().size() / d;
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t j = 0; j < d; ++j) sq += x[r * d + j] * x[r * d + j];
    const T n = std::sqrt(sq);
    if (!(n > T{0})) throw NonFiniteError("l2normalize: zero-norm row " + std::to_string(r));
    norms[r] = n;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / n;
  }
  const auto ia = a.id();
  return a.tape().record("l2normalize", std::move(out), {a},
                         [ia, d, rows, norms = std::move(norms)](Tape<T>& t, std::uint32_t self) {
                           const auto& g = t.out_grad(self);
                           const auto& y = t.value(self);
                           auto& ga = t.accum(ia);
                           for (std::size_t r = 0; r < rows; ++r) {
                             T dot{0};
                             for (std::size_t j = 0; j < d; ++j) dot += y[r * d + j] * g[r * d + j];
                             for (std::size_t j = 0; j < d; ++j)
                               ga[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / norms[r];
                           }
                         });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::size_t> targets) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (targets.size() != n) throw ShapeError("softmax_cross_entropy: target count differs from rows");
  const auto& z = logits.value();
  auto probs = std::make_shared<std::vector<T>>(n * c);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] >= c) throw ShapeError("softmax_cross_entropy: target out of range");
    const T* row = z.data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T se{0};
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
    total += lse - row[tgt[r]];
  }
  const auto il = logits.id();
  return logits.tape().record("softmax_cross_entropy", Tensor<T>::scalar(total / static_cast<T>(n)), {logits},
                              [il, n, c, probs, tgt = std::move(tgt)](Tape<T>& t, std::uint32_t self) {
                                const T g = t.out_grad(self)[0] / static_cast<T>(n);
                                auto& gl = t.accum(il);
                                for (std::size_t r = 0; r < n; ++r)
                                  for (std::size_t j = 0; j < c; ++j)
                                    gl[r * c + j] += g * ((*probs)[r * c + j] - (j == tgt[r] ? T{1} : T{0}));
                              });
}

#define CCRL_INSTANTIATE(T)                                                                          \
  template Var<T> matmul(Var<T>, Var<T>);                                                            \
  template Var<T> add(Var<T>, Var<T>);                                                               \
  template Var<T> sub(Var<T>, Var<T>);                                                               \
  template Var<T> mul(Var<T>, Var<T>);                                                               \
  template Var<T> div(Var<T>, Var<T>);                                                               \
  template Var<T> add_scalar(Var<T>, T);                                                             \
  template Var<T> mul_scalar(Var<T>, T);                                                             \
  template Var<T> relu(Var<T>);                                                                      \
  template Var<T> exp(Var<T>);                                                                       \
  template Var<T> log(Var<T>);                                                                       \
  template Var<T> reshape(Var<T>, Shape);                                                            \
  template Var<T> flatten(Var<T>);                                                                   \
  template Var<T> transpose(Var<T>);                                                                 \
  template Var<T> sum(Var<T>);                                                                       \
  template Var<T> mean(Var<T>);                                                                      \
  template Var<T> sum_last(Var<T>);                                                                  \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                                     \
  template Var<T> conv2d(Var<T>, Var<T>, const Var<T>*, std::size_t, std::size_t);                   \
  template Var<T> avg_pool2d(Var<T>, std::size_t, std::size_t);                                      \
  template Var<T> global_avg_pool(Var<T>);                                                           \
  template Var<T> group_norm(Var<T>, Var<T>, Var<T>, std::size_t, T);                                \
  template Var<T> l2normalize(Var<T>);                                                               \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const std::size_t>);
CCRL_INSTANTIATE(float)
CCRL_INSTANTIATE(double)
#undef CCRL_INSTANTIATE

}  // namespace ad
}  // namespace ccrl
