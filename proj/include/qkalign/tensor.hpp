#pragma once

// Dense double-precision tensors with tape-style reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node. Every op that sees a
// requires_grad input (while recording is enabled on the calling thread)
// records its inputs and a backward rule; backward() replays the reachable
// nodes in reverse creation order. Op inputs are never mutated, so backward
// rules read forward values straight from their parents.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qkalign {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Rank-1 tensors read as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct writes are meant for leaves (optimizer updates, checkpoint loads)
  // and must not happen while a graph that reads this tensor is alive.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Empty span when no gradient has been materialized.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Value copy with no graph history.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  // Creation order on the recording thread; used to order backward.
  std::uint64_t sequence() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Recording switch, per thread.
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

// Accumulates d(root)/d(leaf) into every reachable requires_grad tensor.
// root must hold exactly one element.
void backward(const Tensor& root);

// --- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[N×D] + b[D] (or b[1×D]) on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
// Domain error on any non-positive entry.
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [N×D] -> [1×D] column means.
Tensor mean_rows(const Tensor& x);
// Euclidean norm of all entries; subgradient 0 at the origin.
Tensor l2_norm(const Tensor& a);
// a / ‖a‖; domain error for a zero tensor.
Tensor normalize(const Tensor& a);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor select_row(const Tensor& x, std::size_t row);
Tensor reshape(const Tensor& x, Shape shape);
// Single element (flat row-major index) as a scalar.
Tensor pick(const Tensor& x, std::size_t index);

}  // namespace qkalign
