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

#ifndef MEMLAB_TENSOR_H_
#define MEMLAB_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace memlab {

using Shape = std::vector<int64_t>;

// Cache-line aligned allocator whose resize() leaves doubles uninitialised.
// Alignment makes vectorised kernels take the same code path for a given
// shape regardless of where the heap placed the buffer, which keeps results
// bit-identical across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string ShapeToString(const Shape& shape);
int64_t ShapeNumel(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// A Tensor is a shared handle: copies alias the same storage, which is what
// lets the tape refer back to the tensors it recorded. Use Clone() for an
// independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor Scalar(double value);
  // Contents are unspecified; for op outputs that are fully overwritten.
  static Tensor Uninitialized(Shape shape);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  // Negative indices count from the back.
  int64_t dim(int64_t axis) const;
  int64_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool tracked() const;
  void set_tracked(bool tracked);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use. Const because gradients are
  // accumulated through any handle, including those held by the tape.
  std::span<double> mutable_grad() const;
  void ZeroGrad();

  // Deep copy of the data; the copy is untracked and has no gradient.
  Tensor Clone() const;

  // Creation order, used to check that the tape is topologically sorted.
  uint64_t serial() const;
  bool SameAs(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool tracked = false;
    uint64_t serial = 0;
  };
  std::shared_ptr<Impl> impl_;
};

// Records differentiable operations in creation order. Only ops with at least
// one tracked input are recorded; their outputs become tracked.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void Record(const Tensor& output, std::vector<Tensor> inputs,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every reachable backward rule in
  // reverse order. Gradients accumulate into existing buffers.
  void Backward(const Tensor& loss);

  void Clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

// Free-function form of Tape::Backward.
void Backward(Tape& tape, const Tensor& loss);

// Raises glibc's mmap and trim thresholds so the large, short-lived
// activation buffers of a training step are recycled instead of being
// returned to the kernel and faulted back in. Safe to call repeatedly.
void TuneAllocator();

}  // namespace memlab

#endif  // MEMLAB_TENSOR_H_
