#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aldmn/common.hpp"

namespace aldmn {

// Dense row-major tensor of 64-bit scalars with reverse-mode gradients.
// A Tensor is a cheap handle; copies share storage. Operations on tensors
// that require gradients record a backward closure on the active tape.
// backward(loss) replays the tape in reverse insertion order exactly once
// and then clears it, so one tape generation serves one backward pass.
class Tensor {
 public:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int size() const { return static_cast<int>(impl_->value.size()); }
  int extent(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }

  std::vector<double>& values() { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void zero_grad();

  double item() const;                 // value of a one-element tensor
  double at(int i) const { return impl_->value[static_cast<size_t>(i)]; }
  double at(int i, int j) const;       // rank-2 accessor

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  friend Tensor make_op_output(std::vector<int> shape, bool track);
};

// The single active tape. Nodes are replayed in reverse insertion order by
// backward(), which clears the tape afterwards; parameter gradients live in
// the leaves and survive the clear, so two backward passes in one training
// step (clean + adversarial) accumulate.
class Tape {
 public:
  static Tape& active();
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
  friend void backward(const Tensor& loss);
};

bool grad_enabled();

// RAII guard that disables gradient tracking (evaluation, finite differences).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Elementwise ops. b may be rank-1 and broadcast over a's last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);

// Standard matrix product of rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

// x:[B x din] * w:[dout x din]^T (+ b:[dout] if defined) -> [B x dout].
// Weight rows hold one output unit each, matching the parameter layout.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);

// exp(x - max) / sum along `axis`, any rank.
Tensor softmax(const Tensor& x, int axis);

// Rank-2 softmax per row over the columns where mask != 0; masked columns get
// exactly zero. mask is row-major [rows x cols]. Throws DataError on a row
// with no unmasked column.
Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask);

Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor sum(const Tensor& x);  // rank-0 result

// x:[B x d] scaled per row by s (shape [B] or [B x 1]).
Tensor rowwise_scale(const Tensor& x, const Tensor& s);

// Column j of a rank-2 tensor as [B x 1].
Tensor column(const Tensor& x, int j);

// row:[1 x d] or [d] repeated n times -> [n x d]; backward sums over rows.
Tensor broadcast_rows(const Tensor& row, int n);

// table:[V x d] gathered by ids -> [len(ids) x d]. The output participates in
// gradients whenever tracking is on, so input gradients are available even
// when the table itself is frozen.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// -sum_i log(probs[i, labels[i]]). probs rank-2, labels valid row indices.
Tensor nll_loss(const Tensor& probs, const std::vector<int>& labels);

// Inverted dropout: each kept entry scaled by 1/(1-rate). rate in [0, 1).
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Populate gradients of everything reachable from a rank-0 loss, then clear
// the tape. Gradients accumulate additively across fan-out and across calls.
void backward(const Tensor& loss);

std::string shape_str(const std::vector<int>& shape);

}  // namespace aldmn
