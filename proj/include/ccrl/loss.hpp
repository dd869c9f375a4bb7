#pragma once

#include "ccrl/autodiff.hpp"

namespace ccrl {

/// Which keys compete with the positive.
enum class NegativeSet {
  batch_and_queue,  // every in-batch key plus every queue entry
  queue_only,       // own key plus queue entries
};

/// Row-wise unit normalization without a tape. Zero rows are an error.
template <class T>
Tensor<T> normalize_rows(const Tensor<T>& x);

/// InfoNCE over cosine similarities scaled by 1/temperature, averaged over
/// the batch. q is N×D and carries gradient; keys (N×D, raw) and queue
/// (Q×D unit rows, may be empty) are constants.
template <class T>
Var<T> info_nce(Var<T> q, const Tensor<T>& keys, const Tensor<T>& queue, double temperature,
                NegativeSet negatives = NegativeSet::batch_and_queue);

}  // namespace ccrl
