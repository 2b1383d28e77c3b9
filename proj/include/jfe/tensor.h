// Copyright (c) 2026 JFE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Dense float64 tensors with reverse-mode differentiation on a recorded
// tape. Values are immutable after construction; only gradient slots are
// written to, and only during an explicit flush. A tape is single-owner:
// it must not be shared across threads, but independent tapes may run
// concurrently as long as gradient flushes are serialized by the caller.

#ifndef JFE_TENSOR_H_
#define JFE_TENSOR_H_

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace jfe {

class Tape;

struct TensorImpl {
  std::vector<size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;      // empty until a flush touches this leaf
  const Tape* producer = nullptr;  // tape that recorded this as an output
};

// Value-semantics handle to an immutable dense array. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor Full(std::vector<size_t> shape, double fill,
                     bool requires_grad = false);
  static Tensor FromValues(std::vector<size_t> shape,
                           std::vector<double> values,
                           bool requires_grad = false);
  static Tensor ScalarOf(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t rank() const { return impl_->shape.size(); }
  size_t numel() const { return impl_->values.size(); }
  size_t rows() const;  // rank-2 only
  size_t cols() const;  // rank-2 only
  const std::vector<double>& values() const { return impl_->values; }
  double value() const;             // numel() == 1
  double at(size_t i) const { return impl_->values[i]; }
  double at(size_t r, size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  // Clears the gradient slot; a handle mutation is not a value mutation.
  void ZeroGrad() const;

  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Recorded sequence of primitive applications, replayed in reverse to
// accumulate gradients. Gradients are first accumulated into a tape-local
// map ("local" gradients); FlushLeafGradients then adds leaf entries into
// the tensors' own grad slots. Backward() does both in one call.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // root must be a scalar produced on this tape.
  void Backward(const Tensor& root);
  void BackwardLocal(const Tensor& root);

  // Seeds the given nodes with externally supplied gradients instead of a
  // scalar root. Used to chain tapes (a batch-level tape backpropagates
  // into per-utterance tapes through their pooled outputs).
  void BackwardLocalSeeded(
      const std::vector<std::pair<Tensor, std::vector<double>>>& seeds);

  // Adds every local gradient belonging to a leaf (requires_grad, produced
  // by no tape) into the tensor's grad slot. Callers serialize flushes when
  // tapes ran concurrently.
  void FlushLeafGradients();

  const std::vector<double>* LocalGradOf(const Tensor& t) const;

  // Recording interface, used by the primitives below and by custom nodes
  // (the gradient-reversal layer records through this directly).
  void RecordOp(const char* op_id, const Tensor& output, BackwardFn fn);

  // Gradient buffer accessors for backward functions.
  std::vector<double>& GradBuffer(TensorImpl* t);
  std::vector<double>* FindGradBuffer(TensorImpl* t);

  size_t size() const { return records_.size(); }

 private:
  void RunBackward();

  struct Record {
    const char* op;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Record> records_;
  std::unordered_map<TensorImpl*, std::vector<double>> grads_;
};

// Thread-local active tape. Primitives record onto it when set and any
// operand requires a gradient; with no active tape they are pure functions.
Tape* ActiveTape();

class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// ---- Primitives ----
//
// Shape rules are checked on entry; violations raise ContractViolation
// naming the primitive and the offending shapes. Domain violations (log of
// a negative number, division by zero, sqrt of a negative number) raise
// NumericDomainError.

Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Div(const Tensor& a, const Tensor& b);
Tensor Exp(const Tensor& x);
// log(max(x, 1e-12)); x < 0 is a domain error. The floor keeps entropy
// terms p*log(p) finite at p = 0 (0*log(0) evaluates to 0).
Tensor Log(const Tensor& x);
Tensor Tanh(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor Relu(const Tensor& x);
Tensor LeakyRelu(const Tensor& x, double slope = 0.01);
// Softmax over the last axis, computed with max subtraction.
Tensor Softmax(const Tensor& x);
Tensor Sum(const Tensor& x);    // scalar
Tensor Mean(const Tensor& x);   // scalar
Tensor ColumnSum(const Tensor& x);  // (r x c) -> (c)
Tensor Concat(const std::vector<Tensor>& parts);     // rank-1 pieces -> rank-1
Tensor StackRows(const std::vector<Tensor>& rows);   // k vectors (n) -> (k x n)
Tensor Slice(const Tensor& x, size_t begin, size_t end);  // rank-1 [begin,end)
Tensor GatherRows(const Tensor& x, const std::vector<size_t>& row_indices);
Tensor Transpose(const Tensor& x);
Tensor Abs(const Tensor& x);
Tensor Sqrt(const Tensor& x);
Tensor Scale(const Tensor& x, double c);

// Applies a primitive by name; entry point for the gradient-check table.
// Covers every primitive whose only inputs are tensors (slice/gather take
// index arguments and are exercised through their typed functions).
Tensor ApplyPrimitive(const std::string& op_id,
                      const std::vector<Tensor>& operands);
std::vector<std::string> PrimitiveNames();

// ---- Gradient checking ----

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  size_t count = 0;
};

// Compares the tape gradient of a scalar-valued f against central finite
// differences (f(x+d) - f(x-d)) / 2d per element. Relative error uses
// |a - n| / max(1, |a| + |n|). Non-finite evaluations of f raise
// NumericDomainError.
GradCheckReport GradCheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double step = 1e-5);

// Same check against every element of every listed parameter; f is
// evaluated with the parameters as they are (they must require grad).
GradCheckReport GradCheckParams(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params,
                                double step = 1e-5);

}  // namespace jfe

#endif  // JFE_TENSOR_H_
