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

#include "jfe/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jfe/error.h"

namespace jfe {

namespace {

constexpr double kLogFloor = 1e-12;

std::string ShapeString(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

[[noreturn]] void ShapeError(const char* op, const Tensor& a) {
  throw ContractViolation(std::string(op) + ": unsupported shape " +
                          ShapeString(a.shape()));
}

[[noreturn]] void ShapeError(const char* op, const Tensor& a,
                             const Tensor& b) {
  throw ContractViolation(std::string(op) + ": shape mismatch " +
                          ShapeString(a.shape()) + " vs " +
                          ShapeString(b.shape()));
}

size_t NumelOf(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

bool IsScalarLike(const Tensor& t) { return t.numel() == 1; }

thread_local Tape* g_active_tape = nullptr;

bool ShouldRecord(bool any_requires_grad) {
  return any_requires_grad && g_active_tape != nullptr;
}

// Builds the result tensor and, when recording, registers the backward fn.
Tensor MakeResult(const char* op, std::vector<size_t> shape,
                  std::vector<double> values, bool any_requires_grad,
                  const std::function<Tape::BackwardFn(const Tensor&)>&
                      make_backward) {
  bool rec = ShouldRecord(any_requires_grad);
  Tensor out = Tensor::FromValues(std::move(shape), std::move(values), rec);
  if (rec) g_active_tape->RecordOp(op, out, make_backward(out));
  return out;
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::Zeros(std::vector<size_t> shape, bool requires_grad) {
  return FromValues(shape, std::vector<double>(NumelOf(shape), 0.0),
                    requires_grad);
}

Tensor Tensor::Full(std::vector<size_t> shape, double fill,
                    bool requires_grad) {
  return FromValues(shape, std::vector<double>(NumelOf(shape), fill),
                    requires_grad);
}

Tensor Tensor::FromValues(std::vector<size_t> shape,
                          std::vector<double> values, bool requires_grad) {
  if (NumelOf(shape) != values.size()) {
    throw ContractViolation("tensor: shape " + ShapeString(shape) +
                            " does not match value count " +
                            std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::ScalarOf(double v, bool requires_grad) {
  return FromValues({1}, {v}, requires_grad);
}

size_t Tensor::rows() const {
  if (rank() != 2) ShapeError("rows", *this);
  return impl_->shape[0];
}

size_t Tensor::cols() const {
  if (rank() != 2) ShapeError("cols", *this);
  return impl_->shape[1];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractViolation("value: tensor is not scalar, shape " +
                            ShapeString(shape()));
  }
  return impl_->values[0];
}

double Tensor::at(size_t r, size_t c) const {
  return impl_->values[r * cols() + c];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw ContractViolation("grad: no gradient has been accumulated");
  }
  return impl_->grad;
}

void Tensor::ZeroGrad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// ---- Tape ----

Tape* ActiveTape() { return g_active_tape; }

TapeScope::TapeScope(Tape* tape) : previous_(g_active_tape) {
  g_active_tape = tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::RecordOp(const char* op_id, const Tensor& output, BackwardFn fn) {
  output.impl()->producer = this;
  records_.push_back(Record{op_id, output, std::move(fn)});
}

std::vector<double>& Tape::GradBuffer(TensorImpl* t) {
  auto it = grads_.find(t);
  if (it == grads_.end()) {
    it = grads_.emplace(t, std::vector<double>(t->values.size(), 0.0)).first;
  }
  return it->second;
}

std::vector<double>* Tape::FindGradBuffer(TensorImpl* t) {
  auto it = grads_.find(t);
  return it == grads_.end() ? nullptr : &it->second;
}

const std::vector<double>* Tape::LocalGradOf(const Tensor& t) const {
  auto it = grads_.find(t.impl());
  return it == grads_.end() ? nullptr : &it->second;
}

void Tape::RunBackward() {
  // Reverse sweep; each record is visited exactly once.
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->fn(*this);
  }
}

void Tape::BackwardLocal(const Tensor& root) {
  if (root.numel() != 1) {
    throw ContractViolation("backward: root is not scalar, shape " +
                            ShapeString(root.shape()));
  }
  if (root.impl()->producer != this) {
    throw ContractViolation("backward: root was not produced on this tape");
  }
  GradBuffer(root.impl())[0] += 1.0;
  RunBackward();
}

void Tape::BackwardLocalSeeded(
    const std::vector<std::pair<Tensor, std::vector<double>>>& seeds) {
  for (const auto& [t, g] : seeds) {
    if (g.size() != t.numel()) {
      throw ContractViolation("backward: seed gradient size mismatch for " +
                              ShapeString(t.shape()));
    }
    auto& buf = GradBuffer(t.impl());
    for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
  RunBackward();
}

void Tape::FlushLeafGradients() {
  for (auto& [impl, local] : grads_) {
    if (!impl->requires_grad || impl->producer != nullptr) continue;
    if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
    for (size_t i = 0; i < local.size(); ++i) impl->grad[i] += local[i];
  }
}

void Tape::Backward(const Tensor& root) {
  BackwardLocal(root);
  FlushLeafGradients();
}

// ---- Primitive helpers ----

namespace {

// Pulls the output gradient; null means no downstream path used this node.
const std::vector<double>* OutGrad(Tape& t, const Tensor& out) {
  return t.FindGradBuffer(out.impl());
}

void Axpy(std::vector<double>& acc, const std::vector<double>& g,
          const std::vector<double>& factor) {
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * factor[i];
}

}  // namespace

// ---- Primitives ----

Tensor MatMul(const Tensor& a, const Tensor& b) {
  const bool rg = a.requires_grad() || b.requires_grad();
  // (m x n)@(n x k) -> (m x k)
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.cols() != b.rows()) ShapeError("matmul", a, b);
    const size_t m = a.rows(), n = a.cols(), k = b.cols();
    std::vector<double> out(m * k, 0.0);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (size_t i = 0; i < m; ++i) {
      for (size_t l = 0; l < n; ++l) {
        const double av = pa[i * n + l];
        if (av == 0.0) continue;
        double* po = out.data() + i * k;
        const double* pbl = pb + l * k;
        for (size_t j = 0; j < k; ++j) po[j] += av * pbl[j];
      }
    }
    return MakeResult("matmul", {m, k}, std::move(out), rg,
                      [a, b, m, n, k](const Tensor& y) {
      return [a, b, y, m, n, k](Tape& t) {
        const auto* gy = OutGrad(t, y);
        if (!gy) return;
        if (a.requires_grad()) {
          auto& ga = t.GradBuffer(a.impl());
          const double* pb = b.values().data();
          for (size_t i = 0; i < m; ++i)
            for (size_t l = 0; l < n; ++l) {
              double s = 0.0;
              const double* pgy = gy->data() + i * k;
              const double* pbl = pb + l * k;
              for (size_t j = 0; j < k; ++j) s += pgy[j] * pbl[j];
              ga[i * n + l] += s;
            }
        }
        if (b.requires_grad()) {
          auto& gb = t.GradBuffer(b.impl());
          const double* pa = a.values().data();
          for (size_t i = 0; i < m; ++i)
            for (size_t l = 0; l < n; ++l) {
              const double av = pa[i * n + l];
              if (av == 0.0) continue;
              double* pgb = gb.data() + l * k;
              const double* pgy = gy->data() + i * k;
              for (size_t j = 0; j < k; ++j) pgb[j] += av * pgy[j];
            }
        }
      };
    });
  }
  // (m x n)@(n) -> (m)
  if (a.rank() == 2 && b.rank() == 1) {
    if (a.cols() != b.numel()) ShapeError("matmul", a, b);
    const size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    const double* pa = a.values().data();
    const double* pv = b.values().data();
    for (size_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = pa + i * n;
      for (size_t l = 0; l < n; ++l) s += row[l] * pv[l];
      out[i] = s;
    }
    return MakeResult("matmul", {m}, std::move(out), rg,
                      [a, b, m, n](const Tensor& y) {
      return [a, b, y, m, n](Tape& t) {
        const auto* gy = OutGrad(t, y);
        if (!gy) return;
        if (a.requires_grad()) {
          auto& ga = t.GradBuffer(a.impl());
          const double* pv = b.values().data();
          for (size_t i = 0; i < m; ++i) {
            const double g = (*gy)[i];
            if (g == 0.0) continue;
            double* row = ga.data() + i * n;
            for (size_t l = 0; l < n; ++l) row[l] += g * pv[l];
          }
        }
        if (b.requires_grad()) {
          auto& gb = t.GradBuffer(b.impl());
          const double* pa = a.values().data();
          for (size_t i = 0; i < m; ++i) {
            const double g = (*gy)[i];
            if (g == 0.0) continue;
            const double* row = pa + i * n;
            for (size_t l = 0; l < n; ++l) gb[l] += g * row[l];
          }
        }
      };
    });
  }
  // (m)@(m x n) -> (n)
  if (a.rank() == 1 && b.rank() == 2) {
    if (a.numel() != b.rows()) ShapeError("matmul", a, b);
    const size_t m = b.rows(), n = b.cols();
    std::vector<double> out(n, 0.0);
    const double* pu = a.values().data();
    const double* pb = b.values().data();
    for (size_t l = 0; l < m; ++l) {
      const double u = pu[l];
      if (u == 0.0) continue;
      const double* row = pb + l * n;
      for (size_t j = 0; j < n; ++j) out[j] += u * row[j];
    }
    return MakeResult("matmul", {n}, std::move(out), rg,
                      [a, b, m, n](const Tensor& y) {
      return [a, b, y, m, n](Tape& t) {
        const auto* gy = OutGrad(t, y);
        if (!gy) return;
        if (a.requires_grad()) {
          auto& ga = t.GradBuffer(a.impl());
          const double* pb = b.values().data();
          for (size_t l = 0; l < m; ++l) {
            double s = 0.0;
            const double* row = pb + l * n;
            for (size_t j = 0; j < n; ++j) s += row[j] * (*gy)[j];
            ga[l] += s;
          }
        }
        if (b.requires_grad()) {
          auto& gb = t.GradBuffer(b.impl());
          const double* pu = a.values().data();
          for (size_t l = 0; l < m; ++l) {
            const double u = pu[l];
            if (u == 0.0) continue;
            double* row = gb.data() + l * n;
            for (size_t j = 0; j < n; ++j) row[j] += u * (*gy)[j];
          }
        }
      };
    });
  }
  // (n)@(n) -> scalar dot product
  if (a.rank() == 1 && b.rank() == 1) {
    if (a.numel() != b.numel()) ShapeError("matmul", a, b);
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
    return MakeResult("matmul", {1}, {s}, rg, [a, b](const Tensor& y) {
      return [a, b, y](Tape& t) {
        const auto* gy = OutGrad(t, y);
        if (!gy) return;
        const double g = (*gy)[0];
        if (a.requires_grad()) {
          auto& ga = t.GradBuffer(a.impl());
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * b.at(i);
        }
        if (b.requires_grad()) {
          auto& gb = t.GradBuffer(b.impl());
          for (size_t i = 0; i < gb.size(); ++i) gb[i] += g * a.at(i);
        }
      };
    });
  }
  ShapeError("matmul", a, b);
}

namespace {

enum class BroadcastKind { kSame, kRowVector, kScalarRight, kScalarLeft };

BroadcastKind ClassifyAddSub(const char* op, const Tensor& a,
                             const Tensor& b) {
  if (a.shape() == b.shape()) return BroadcastKind::kSame;
  if (IsScalarLike(b)) return BroadcastKind::kScalarRight;
  if (IsScalarLike(a)) return BroadcastKind::kScalarLeft;
  if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.numel()) {
    return BroadcastKind::kRowVector;
  }
  ShapeError(op, a, b);
}

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) {
  const bool rg = a.requires_grad() || b.requires_grad();
  const BroadcastKind kind = ClassifyAddSub("add", a, b);
  std::vector<double> out;
  std::vector<size_t> shape;
  switch (kind) {
    case BroadcastKind::kSame: {
      shape = a.shape();
      out = a.values();
      for (size_t i = 0; i < out.size(); ++i) out[i] += b.at(i);
      break;
    }
    case BroadcastKind::kScalarRight: {
      shape = a.shape();
      out = a.values();
      const double s = b.value();
      for (double& v : out) v += s;
      break;
    }
    case BroadcastKind::kScalarLeft: {
      shape = b.shape();
      out = b.values();
      const double s = a.value();
      for (double& v : out) v += s;
      break;
    }
    case BroadcastKind::kRowVector: {
      shape = a.shape();
      out = a.values();
      const size_t r = a.rows(), c = a.cols();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] += b.at(j);
      break;
    }
  }
  return MakeResult("add", std::move(shape), std::move(out), rg,
                    [a, b, kind](const Tensor& y) {
    return [a, b, y, kind](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      auto accumulate = [&](const Tensor& side, bool reduced) {
        if (!side.requires_grad()) return;
        auto& g = t.GradBuffer(side.impl());
        if (!reduced) {
          for (size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
        } else if (side.numel() == 1) {
          double s = 0.0;
          for (double v : *gy) s += v;
          g[0] += s;
        } else {  // row vector under a rank-2 output
          const size_t c = side.numel();
          const size_t r = gy->size() / c;
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) g[j] += (*gy)[i * c + j];
        }
      };
      switch (kind) {
        case BroadcastKind::kSame:
          accumulate(a, false);
          accumulate(b, false);
          break;
        case BroadcastKind::kScalarRight:
          accumulate(a, false);
          accumulate(b, true);
          break;
        case BroadcastKind::kScalarLeft:
          accumulate(b, false);
          accumulate(a, true);
          break;
        case BroadcastKind::kRowVector:
          accumulate(a, false);
          accumulate(b, true);
          break;
      }
    };
  });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  const bool rg = a.requires_grad() || b.requires_grad();
  const BroadcastKind kind = ClassifyAddSub("sub", a, b);
  std::vector<double> out;
  std::vector<size_t> shape;
  switch (kind) {
    case BroadcastKind::kSame: {
      shape = a.shape();
      out = a.values();
      for (size_t i = 0; i < out.size(); ++i) out[i] -= b.at(i);
      break;
    }
    case BroadcastKind::kScalarRight: {
      shape = a.shape();
      out = a.values();
      const double s = b.value();
      for (double& v : out) v -= s;
      break;
    }
    case BroadcastKind::kScalarLeft: {
      shape = b.shape();
      out.assign(b.numel(), 0.0);
      const double s = a.value();
      for (size_t i = 0; i < out.size(); ++i) out[i] = s - b.at(i);
      break;
    }
    case BroadcastKind::kRowVector: {
      shape = a.shape();
      out = a.values();
      const size_t r = a.rows(), c = a.cols();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] -= b.at(j);
      break;
    }
  }
  return MakeResult("sub", std::move(shape), std::move(out), rg,
                    [a, b, kind](const Tensor& y) {
    return [a, b, y, kind](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      auto accumulate = [&](const Tensor& side, double sign, bool reduced) {
        if (!side.requires_grad()) return;
        auto& g = t.GradBuffer(side.impl());
        if (!reduced) {
          for (size_t i = 0; i < g.size(); ++i) g[i] += sign * (*gy)[i];
        } else if (side.numel() == 1) {
          double s = 0.0;
          for (double v : *gy) s += v;
          g[0] += sign * s;
        } else {
          const size_t c = side.numel();
          const size_t r = gy->size() / c;
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) g[j] += sign * (*gy)[i * c + j];
        }
      };
      switch (kind) {
        case BroadcastKind::kSame:
          accumulate(a, 1.0, false);
          accumulate(b, -1.0, false);
          break;
        case BroadcastKind::kScalarRight:
          accumulate(a, 1.0, false);
          accumulate(b, -1.0, true);
          break;
        case BroadcastKind::kScalarLeft:
          accumulate(a, 1.0, true);
          accumulate(b, -1.0, false);
          break;
        case BroadcastKind::kRowVector:
          accumulate(a, 1.0, false);
          accumulate(b, -1.0, true);
          break;
      }
    };
  });
}

namespace {

enum class MulKind { kSame, kScalarA, kScalarB };

MulKind ClassifyMulDiv(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return MulKind::kSame;
  if (IsScalarLike(a)) return MulKind::kScalarA;
  if (IsScalarLike(b)) return MulKind::kScalarB;
  ShapeError(op, a, b);
}

}  // namespace

Tensor Mul(const Tensor& a, const Tensor& b) {
  const bool rg = a.requires_grad() || b.requires_grad();
  const MulKind kind = ClassifyMulDiv("mul", a, b);
  const Tensor& big = (kind == MulKind::kScalarA) ? b : a;
  std::vector<double> out(big.numel());
  if (kind == MulKind::kSame) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  } else {
    const double s = (kind == MulKind::kScalarA) ? a.value() : b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = big.at(i) * s;
  }
  return MakeResult("mul", big.shape(), std::move(out), rg,
                    [a, b, kind](const Tensor& y) {
    return [a, b, y, kind](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      auto accum_elementwise = [&](const Tensor& target, const Tensor& other) {
        if (!target.requires_grad()) return;
        Axpy(t.GradBuffer(target.impl()), *gy, other.values());
      };
      auto accum_scaled = [&](const Tensor& target, double s) {
        if (!target.requires_grad()) return;
        auto& g = t.GradBuffer(target.impl());
        for (size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * s;
      };
      auto accum_dot = [&](const Tensor& scalar, const Tensor& big) {
        if (!scalar.requires_grad()) return;
        double s = 0.0;
        for (size_t i = 0; i < gy->size(); ++i) s += (*gy)[i] * big.at(i);
        t.GradBuffer(scalar.impl())[0] += s;
      };
      switch (kind) {
        case MulKind::kSame:
          accum_elementwise(a, b);
          accum_elementwise(b, a);
          break;
        case MulKind::kScalarA:
          accum_dot(a, b);
          accum_scaled(b, a.value());
          break;
        case MulKind::kScalarB:
          accum_scaled(a, b.value());
          accum_dot(b, a);
          break;
      }
    };
  });
}

Tensor Div(const Tensor& a, const Tensor& b) {
  const bool rg = a.requires_grad() || b.requires_grad();
  const MulKind kind = ClassifyMulDiv("div", a, b);
  for (double v : b.values()) {
    if (v == 0.0) throw NumericDomainError("div: zero divisor");
  }
  std::vector<double> out;
  std::vector<size_t> shape;
  if (kind == MulKind::kScalarA) {
    shape = b.shape();
    out.resize(b.numel());
    const double s = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = s / b.at(i);
  } else {
    shape = a.shape();
    out.resize(a.numel());
    if (kind == MulKind::kSame) {
      for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / b.at(i);
    } else {
      const double s = b.value();
      for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / s;
    }
  }
  return MakeResult("div", std::move(shape), std::move(out), rg,
                    [a, b, kind](const Tensor& y) {
    return [a, b, y, kind](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      switch (kind) {
        case MulKind::kSame: {
          if (a.requires_grad()) {
            auto& ga = t.GradBuffer(a.impl());
            for (size_t i = 0; i < ga.size(); ++i)
              ga[i] += (*gy)[i] / b.at(i);
          }
          if (b.requires_grad()) {
            auto& gb = t.GradBuffer(b.impl());
            for (size_t i = 0; i < gb.size(); ++i)
              gb[i] -= (*gy)[i] * a.at(i) / (b.at(i) * b.at(i));
          }
          break;
        }
        case MulKind::kScalarB: {
          const double s = b.value();
          if (a.requires_grad()) {
            auto& ga = t.GradBuffer(a.impl());
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*gy)[i] / s;
          }
          if (b.requires_grad()) {
            double acc = 0.0;
            for (size_t i = 0; i < gy->size(); ++i)
              acc -= (*gy)[i] * a.at(i) / (s * s);
            t.GradBuffer(b.impl())[0] += acc;
          }
          break;
        }
        case MulKind::kScalarA: {
          const double s = a.value();
          if (a.requires_grad()) {
            double acc = 0.0;
            for (size_t i = 0; i < gy->size(); ++i)
              acc += (*gy)[i] / b.at(i);
            t.GradBuffer(a.impl())[0] += acc;
          }
          if (b.requires_grad()) {
            auto& gb = t.GradBuffer(b.impl());
            for (size_t i = 0; i < gb.size(); ++i)
              gb[i] -= (*gy)[i] * s / (b.at(i) * b.at(i));
          }
          break;
        }
      }
    };
  });
}

namespace {

// Shared scaffolding for elementwise unary primitives whose derivative can
// be expressed from input and output values.
Tensor UnaryOp(const char* op, const Tensor& x,
               const std::function<double(double)>& fwd,
               const std::function<double(double, double)>& dfdx_from_x_y) {
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.at(i));
  return MakeResult(op, x.shape(), std::move(out), x.requires_grad(),
                    [x, dfdx_from_x_y](const Tensor& y) {
    return [x, y, dfdx_from_x_y](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < gx.size(); ++i)
        gx[i] += (*gy)[i] * dfdx_from_x_y(x.at(i), y.at(i));
    };
  });
}

}  // namespace

Tensor Exp(const Tensor& x) {
  return UnaryOp("exp", x, [](double v) { return std::exp(v); },
                 [](double, double y) { return y; });
}

Tensor Log(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw NumericDomainError("log: negative argument");
  }
  return UnaryOp("log", x,
                 [](double v) { return std::log(std::max(v, kLogFloor)); },
                 [](double v, double) {
                   return v > kLogFloor ? 1.0 / v : 0.0;
                 });
}

Tensor Tanh(const Tensor& x) {
  return UnaryOp("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor Sigmoid(const Tensor& x) {
  return UnaryOp("sigmoid", x,
                 [](double v) {
                   if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                   const double e = std::exp(v);
                   return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor Relu(const Tensor& x) {
  return UnaryOp("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor LeakyRelu(const Tensor& x, double slope) {
  return UnaryOp("leaky_relu", x,
                 [slope](double v) { return v > 0.0 ? v : slope * v; },
                 [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor Abs(const Tensor& x) {
  return UnaryOp("abs", x, [](double v) { return std::fabs(v); },
                 [](double v, double) {
                   return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                 });
}

Tensor Sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw NumericDomainError("sqrt: negative argument");
  }
  // Guarded derivative keeps 0 * (1/sqrt(0)) from producing NaN.
  return UnaryOp("sqrt", x, [](double v) { return std::sqrt(v); },
                 [](double, double y) {
                   return 1.0 / (2.0 * std::max(y, 1e-12));
                 });
}

Tensor Scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.at(i);
  return MakeResult("scale", x.shape(), std::move(out), x.requires_grad(),
                    [x, c](const Tensor& y) {
    return [x, y, c](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += c * (*gy)[i];
    };
  });
}

Tensor Softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) ShapeError("softmax", x);
  const size_t c = (x.rank() == 2) ? x.cols() : x.numel();
  const size_t r = x.numel() / c;
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    double* orow = out.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < c; ++j) sum += orow[j] = std::exp(row[j] - mx);
    for (size_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  return MakeResult("softmax", x.shape(), std::move(out), x.requires_grad(),
                    [x, r, c](const Tensor& y) {
    return [x, y, r, c](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < r; ++i) {
        const double* p = y.values().data() + i * c;
        const double* g = gy->data() + i * c;
        double dot = 0.0;
        for (size_t j = 0; j < c; ++j) dot += p[j] * g[j];
        double* gr = gx.data() + i * c;
        for (size_t j = 0; j < c; ++j) gr[j] += p[j] * (g[j] - dot);
      }
    };
  });
}

Tensor Sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return MakeResult("sum", {1}, {s}, x.requires_grad(), [x](const Tensor& y) {
    return [x, y](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      const double g = (*gy)[0];
      for (double& v : gx) v += g;
    };
  });
}

Tensor Mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.values()) s += v;
  return MakeResult("mean", {1}, {s * inv}, x.requires_grad(),
                    [x, inv](const Tensor& y) {
    return [x, y, inv](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      const double g = (*gy)[0] * inv;
      for (double& v : gx) v += g;
    };
  });
}

Tensor ColumnSum(const Tensor& x) {
  if (x.rank() != 2) ShapeError("column_sum", x);
  const size_t r = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j] += x.at(i, j);
  return MakeResult("column_sum", {c}, std::move(out), x.requires_grad(),
                    [x, r, c](const Tensor& y) {
    return [x, y, r, c](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) gx[i * c + j] += (*gy)[j];
    };
  });
}

Tensor Concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat: no operands");
  bool rg = false;
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1) ShapeError("concat", p);
    rg = rg || p.requires_grad();
    total += p.numel();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return MakeResult("concat", {total}, std::move(out), rg,
                    [parts](const Tensor& y) {
    return [parts, y](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      size_t offset = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = t.GradBuffer(p.impl());
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += (*gy)[offset + i];
        }
        offset += p.numel();
      }
    };
  });
}

Tensor StackRows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractViolation("stack_rows: no operands");
  const size_t n = rows[0].numel();
  bool rg = false;
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != n) ShapeError("stack_rows", rows[0], r);
    rg = rg || r.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) {
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return MakeResult("stack_rows", {rows.size(), n}, std::move(out), rg,
                    [rows, n](const Tensor& y) {
    return [rows, y, n](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy) return;
      for (size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].requires_grad()) continue;
        auto& gr = t.GradBuffer(rows[i].impl());
        for (size_t j = 0; j < n; ++j) gr[j] += (*gy)[i * n + j];
      }
    };
  });
}

Tensor Slice(const Tensor& x, size_t begin, size_t end) {
  if (x.rank() != 1) ShapeError("slice", x);
  if (begin >= end || end > x.numel()) {
    throw ContractViolation("slice: range [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") out of bounds for " +
                            ShapeString(x.shape()));
  }
  std::vector<double> out(x.values().begin() + begin,
                          x.values().begin() + end);
  return MakeResult("slice", {end - begin}, std::move(out), x.requires_grad(),
                    [x, begin](const Tensor& y) {
    return [x, y, begin](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < gy->size(); ++i) gx[begin + i] += (*gy)[i];
    };
  });
}

Tensor GatherRows(const Tensor& x, const std::vector<size_t>& row_indices) {
  if (x.rank() != 2) ShapeError("gather_rows", x);
  const size_t c = x.cols();
  for (size_t r : row_indices) {
    if (r >= x.rows()) {
      throw ContractViolation("gather_rows: row " + std::to_string(r) +
                              " out of bounds for " + ShapeString(x.shape()));
    }
  }
  std::vector<double> out;
  out.reserve(row_indices.size() * c);
  for (size_t r : row_indices) {
    const double* row = x.values().data() + r * c;
    out.insert(out.end(), row, row + c);
  }
  return MakeResult("gather_rows", {row_indices.size(), c}, std::move(out),
                    x.requires_grad(), [x, row_indices, c](const Tensor& y) {
    return [x, y, row_indices, c](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < row_indices.size(); ++i) {
        double* dst = gx.data() + row_indices[i] * c;
        const double* src = gy->data() + i * c;
        for (size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    };
  });
}

Tensor Transpose(const Tensor& x) {
  if (x.rank() != 2) ShapeError("transpose", x);
  const size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j * r + i] = x.at(i, j);
  return MakeResult("transpose", {c, r}, std::move(out), x.requires_grad(),
                    [x, r, c](const Tensor& y) {
    return [x, y, r, c](Tape& t) {
      const auto* gy = OutGrad(t, y);
      if (!gy || !x.requires_grad()) return;
      auto& gx = t.GradBuffer(x.impl());
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) gx[i * c + j] += (*gy)[j * r + i];
    };
  });
}

// ---- Primitive registry ----

namespace {

struct RegistryEntry {
  const char* name;
  size_t arity;  // 0 = variadic
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

const std::vector<RegistryEntry>& Registry() {
  static const std::vector<RegistryEntry> entries = {
      {"matmul", 2, [](const auto& v) { return MatMul(v[0], v[1]); }},
      {"add", 2, [](const auto& v) { return Add(v[0], v[1]); }},
      {"sub", 2, [](const auto& v) { return Sub(v[0], v[1]); }},
      {"mul", 2, [](const auto& v) { return Mul(v[0], v[1]); }},
      {"div", 2, [](const auto& v) { return Div(v[0], v[1]); }},
      {"exp", 1, [](const auto& v) { return Exp(v[0]); }},
      {"log", 1, [](const auto& v) { return Log(v[0]); }},
      {"tanh", 1, [](const auto& v) { return Tanh(v[0]); }},
      {"sigmoid", 1, [](const auto& v) { return Sigmoid(v[0]); }},
      {"relu", 1, [](const auto& v) { return Relu(v[0]); }},
      {"leaky_relu", 1, [](const auto& v) { return LeakyRelu(v[0]); }},
      {"softmax", 1, [](const auto& v) { return Softmax(v[0]); }},
      {"sum", 1, [](const auto& v) { return Sum(v[0]); }},
      {"mean", 1, [](const auto& v) { return Mean(v[0]); }},
      {"column_sum", 1, [](const auto& v) { return ColumnSum(v[0]); }},
      {"concat", 0, [](const auto& v) { return Concat(v); }},
      {"stack_rows", 0, [](const auto& v) { return StackRows(v); }},
      {"transpose", 1, [](const auto& v) { return Transpose(v[0]); }},
      {"abs", 1, [](const auto& v) { return Abs(v[0]); }},
      {"sqrt", 1, [](const auto& v) { return Sqrt(v[0]); }},
  };
  return entries;
}

}  // namespace

Tensor ApplyPrimitive(const std::string& op_id,
                      const std::vector<Tensor>& operands) {
  for (const auto& e : Registry()) {
    if (op_id == e.name) {
      if (e.arity != 0 && operands.size() != e.arity) {
        throw ContractViolation("apply_primitive: " + op_id + " expects " +
                                std::to_string(e.arity) + " operands, got " +
                                std::to_string(operands.size()));
      }
      if (e.arity == 0 && operands.empty()) {
        throw ContractViolation("apply_primitive: " + op_id +
                                " expects at least one operand");
      }
      return e.apply(operands);
    }
  }
  throw ContractViolation("apply_primitive: unknown primitive '" + op_id +
                          "'");
}

std::vector<std::string> PrimitiveNames() {
  std::vector<std::string> names;
  for (const auto& e : Registry()) names.emplace_back(e.name);
  return names;
}

// ---- Gradient checking ----

namespace {

double EvaluateScalar(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x) {
  TapeScope no_tape(nullptr);
  const double v = f(x).value();
  if (!std::isfinite(v)) {
    throw NumericDomainError("grad_check: non-finite function evaluation");
  }
  return v;
}

double RelError(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max(1.0, std::fabs(analytic) + std::fabs(numeric));
}

}  // namespace

GradCheckReport GradCheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double step) {
  Tensor xg = Tensor::FromValues(x.shape(), x.values(), true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = f(xg);
  }
  if (y.numel() != 1) {
    throw ContractViolation("grad_check: f must return a scalar");
  }
  tape.Backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (xg.has_grad()) analytic = xg.grad();

  GradCheckReport report;
  report.count = x.numel();
  double total = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    std::vector<double> vp = x.values();
    std::vector<double> vm = x.values();
    vp[i] += step;
    vm[i] -= step;
    const double fp =
        EvaluateScalar(f, Tensor::FromValues(x.shape(), std::move(vp)));
    const double fm =
        EvaluateScalar(f, Tensor::FromValues(x.shape(), std::move(vm)));
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = RelError(analytic[i], numeric);
    report.max_rel_error = std::max(report.max_rel_error, err);
    total += err;
  }
  report.mean_rel_error = report.count ? total / report.count : 0.0;
  return report;
}

GradCheckReport GradCheckParams(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params,
                                double step) {
  for (const auto& p : params) {
    if (!p.requires_grad()) {
      throw ContractViolation("grad_check: parameter does not require grad");
    }
    if (p.has_grad()) p.ZeroGrad();
  }
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = f();
  }
  if (y.numel() != 1) {
    throw ContractViolation("grad_check: f must return a scalar");
  }
  tape.Backward(y);

  auto eval = [&]() {
    TapeScope no_tape(nullptr);
    const double v = f().value();
    if (!std::isfinite(v)) {
      throw NumericDomainError("grad_check: non-finite function evaluation");
    }
    return v;
  };

  GradCheckReport report;
  double total = 0.0;
  for (const auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) analytic = p.grad();
    // Perturbs the parameter in place for the finite-difference probes and
    // restores it; callers must not run this concurrently with training.
    auto& vals = p.impl()->values;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double fp = eval();
      vals[i] = saved - step;
      const double fm = eval();
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = RelError(analytic[i], numeric);
      report.max_rel_error = std::max(report.max_rel_error, err);
      total += err;
      ++report.count;
    }
    p.impl()->grad.clear();
  }
  report.mean_rel_error = report.count ? total / report.count : 0.0;
  return report;
}

}  // namespace jfe
