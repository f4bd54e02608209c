#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmsr {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Fixed 64-byte alignment. Vectorized reductions peel a prefix that depends
// on the address, so unaligned storage would make rounding vary run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Use clone() for
/// an independent deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  /// A leaf that accumulates gradients during backward().
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const;
  std::int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad_mut() const;
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  bool defined() const { return impl_ != nullptr; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    AlignedBuffer data;
    AlignedBuffer grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Define-by-run tape of recorded operations.
///
/// Nodes are appended in execution order, so insertion order is a valid
/// topological order; backward() replays them once in reverse. A Graph and
/// the tensors it references belong to one thread.
class Graph {
 public:
  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  /// Appends a node when `output` requires a gradient. `backward` reads the
  /// output's grad and accumulates into the inputs' grads.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Rejects non-scalar losses and a
  /// second call before reset().
  void backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  bool backward_done() const { return backward_done_; }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Fault injection for the selftest negative control. When set to an op name
/// ("conv2d" is the one wired up), that op's backward is deliberately wrong.
namespace fault_injection {
void set(std::string op);
void clear();
bool active(std::string_view op);
}  // namespace fault_injection

namespace ops {

/// Cross-correlation of input[N,C,H,W] with kernel[K,C,kh,kw] plus bias[K].
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

Tensor leaky_relu(Graph& g, const Tensor& x, double slope);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
Tensor upsample2x(Graph& g, const Tensor& x);

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
Tensor slice_channels(Graph& g, const Tensor& x, std::int64_t begin, std::int64_t end);

/// out(p) = bilinear(image, p + flow(p)); flow channel 0 is dx, channel 1 is dy,
/// in pixels. Sample coordinates are clamped to the image border.
Tensor grid_sample_bilinear(Graph& g, const Tensor& image, const Tensor& flow);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);
Tensor sum(Graph& g, const Tensor& x);

}  // namespace ops

/// Bilinear sample of a single h*w plane at (x, y) with border clamping.
/// Shared by the differentiable sampler and the non-differentiable warps.
double sample_bilinear(std::span<const double> plane, std::int64_t height, std::int64_t width,
                       double x, double y);

}  // namespace nmsr
