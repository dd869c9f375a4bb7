#include "ccrl/loss.hpp"

#include <cmath>
#include <numeric>

namespace ccrl {

template <class T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("normalize_rows expects a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    T sq{0};
    for (std::size_t j = 0; j < d; ++j) sq += x[r * d + j] * x[r * d + j];
    const T norm = std::sqrt(sq);
    if (!(norm > T{0})) throw NonFiniteError("zero-norm key row " + std::to_string(r));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / norm;
  }
  return out;
}

template <class T>
Var<T> info_nce(Var<T> q, const Tensor<T>& keys, const Tensor<T>& queue, double temperature, NegativeSet negatives) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (q.shape().size() != 2 || keys.shape() != q.shape())
    throw ShapeError("info_nce: q " + shape_str(q.shape()) + " and keys " + shape_str(keys.shape()) + " differ");
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  if (!queue.empty() && (queue.rank() != 2 || queue.dim(1) != d))
    throw ShapeError("info_nce: queue width mismatch " + shape_str(queue.shape()));
  Tape<T>& tape = q.tape();
  const T inv_tau = static_cast<T>(1.0 / temperature);
  auto qn = ad::l2normalize(q);
  auto kn = normalize_rows(keys);
  std::vector<std::size_t> targets(n);

  if (negatives == NegativeSet::batch_and_queue) {
    // Candidates: [k_1..k_N ; queue], the positive of row i sits at column i.
    const std::size_t qc = queue.empty() ? 0 : queue.dim(0);
    Tensor<T> cand_t({d, n + qc});
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) cand_t[c * (n + qc) + j] = kn[j * d + c];
    for (std::size_t j = 0; j < qc; ++j)
      for (std::size_t c = 0; c < d; ++c) cand_t[c * (n + qc) + n + j] = queue[j * d + c];
    std::iota(targets.begin(), targets.end(), std::size_t{0});
    auto logits = ad::mul_scalar(ad::matmul(qn, tape.constant(std::move(cand_t))), inv_tau);
    return ad::softmax_cross_entropy(logits, std::span<const std::size_t>(targets));
  }

  auto pos = ad::reshape(ad::sum_last(ad::mul(qn, tape.constant(std::move(kn)))), Shape{n, 1});
  if (queue.empty()) return ad::softmax_cross_entropy(ad::mul_scalar(pos, inv_tau), std::span<const std::size_t>(targets));
  const std::size_t qc = queue.dim(0);
  Tensor<T> queue_t({d, qc});
  for (std::size_t j = 0; j < qc; ++j)
    for (std::size_t c = 0; c < d; ++c) queue_t[c * qc + j] = queue[j * d + c];
  auto neg = ad::matmul(qn, tape.constant(std::move(queue_t)));
  std::vector<Var<T>> parts{pos, neg};
  auto logits = ad::mul_scalar(ad::concat<T>(parts, 1), inv_tau);
  return ad::softmax_cross_entropy(logits, std::span<const std::size_t>(targets));
}

template Tensor<float> normalize_rows(const Tensor<float>&);
template Tensor<double> normalize_rows(const Tensor<double>&);
template Var<float> info_nce(Var<float>, const Tensor<float>&, const Tensor<float>&, double, NegativeSet);
template Var<double> info_nce(Var<double>, const Tensor<double>&, const Tensor<double>&, double, NegativeSet);

}  // namespace ccrl
