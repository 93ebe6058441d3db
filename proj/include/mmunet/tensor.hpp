#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmunet {

#ifdef MMU_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;
using Int3 = std::array<std::size_t, 3>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded operation. Children own their inputs, never the reverse, so
// dropping the last handle to a loss releases the whole graph.
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad();
};

}  // namespace detail

/// N-dimensional row-major real array with optional reverse-mode gradient.
///
/// Copies share storage (handle semantics). Values of non-leaf tensors are
/// written once by the op that creates them; leaves (parameters) may be
/// mutated in place by optimizers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor scalar(Real v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  /// Runs reverse-mode accumulation from this scalar.
  void backward() const;

  /// Value copy without graph history or gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

using BackwardFn = std::function<void(detail::Node&)>;

/// Wraps a freshly computed value as an op output. The backward closure is
/// only recorded when gradient mode is on and some input tracks gradients.
Tensor make_result(Shape shape, std::vector<Real> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace mmunet
