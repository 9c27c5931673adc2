// Copyright 2026 The Memlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "memlab/tensor.h"

#include <malloc.h>

#include <atomic>
#include <mutex>
#include <utility>

#include <fmt/format.h>

#include "memlab/error.h"

namespace memlab {
namespace {

std::atomic<uint64_t> g_next_serial{1};

}  // namespace

std::string ShapeToString(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

int64_t ShapeNumel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

namespace {

void CheckShape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d < 0) {
      throw Error(ErrorCode::kShape,
                  "negative dimension in shape " + ShapeToString(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape) {
  CheckShape(shape);
  impl_ = std::make_shared<Impl>();
  impl_->data.assign(ShapeNumel(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->serial = g_next_serial.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::Uninitialized(Shape shape) {
  CheckShape(shape);
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.resize(ShapeNumel(shape));
  t.impl_->shape = std::move(shape);
  t.impl_->serial = g_next_serial.fetch_add(1, std::memory_order_relaxed);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  CheckShape(shape);
  if (ShapeNumel(shape) != static_cast<int64_t>(values.size())) {
    throw Error(ErrorCode::kShape,
                fmt::format("shape {} needs {} values, got {}",
                            ShapeToString(shape), ShapeNumel(shape),
                            values.size()));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
  impl_->serial = g_next_serial.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::Scalar(double value) { return Tensor({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::dim(int64_t axis) const {
  const int64_t r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw Error(ErrorCode::kDimension,
                fmt::format("axis {} out of range for shape {}", axis,
                            ShapeToString(shape())));
  }
  return impl_->shape[axis];
}

int64_t Tensor::numel() const {
  return static_cast<int64_t>(impl_->data.size());
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw Error(ErrorCode::kShape,
                "item() on non-scalar tensor " + ShapeToString(shape()));
  }
  return impl_->data[0];
}

bool Tensor::tracked() const { return impl_->tracked; }
void Tensor::set_tracked(bool tracked) { impl_->tracked = tracked; }

bool Tensor::has_grad() const { return !impl_->grad.empty() || numel() == 0; }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.size() != impl_->data.size()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return impl_->grad;
}

void Tensor::ZeroGrad() {
  if (!impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

Tensor Tensor::Clone() const {
  Tensor t = Uninitialized(impl_->shape);
  t.impl_->data = impl_->data;
  return t;
}

uint64_t Tensor::serial() const { return impl_->serial; }

void Tape::Record(const Tensor& output, std::vector<Tensor> inputs,
                  BackwardFn backward) {
  for (const Tensor& in : inputs) {
    if (in.serial() >= output.serial()) {
      throw Error(ErrorCode::kShape,
                  "tape order violated: input created after output");
    }
  }
  entries_.push_back({output, std::move(inputs), std::move(backward)});
}

void Tape::Backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw Error(ErrorCode::kShape,
                "backward needs a scalar loss, got shape " +
                    ShapeToString(loss.shape()));
  }
  if (!loss.tracked()) return;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not reachable from loss
    it->backward();
  }
}

void Backward(Tape& tape, const Tensor& loss) { tape.Backward(loss); }

void TuneAllocator() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
  });
}

}  // namespace memlab
