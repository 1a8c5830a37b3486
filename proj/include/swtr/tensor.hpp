#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "swtr/error.hpp"

namespace swtr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->data.assign(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    require(numel(shape) == data.size(), ErrorCode::kDimension,
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  T item() const {
    require(size() == 1, ErrorCode::kContract, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  // Copy of the values with no tape history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. The tape edge is only recorded when grad mode is on and
// at least one input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs)
        if (t.defined() && t.requires_grad()) n->parents.push_back(t.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(n));
}

// Topologically ordered list of the nodes reachable from a root, parents before
// children. Each node appears once.
template <typename T>
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor<T>& root) {
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<Node<T>*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<Node<T>*> order_;
};

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
// intermediate grads are released once propagated.
template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.size() == 1, ErrorCode::kContract,
          "backward() needs a scalar loss, got shape " +
              (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  require(loss.requires_grad(), ErrorCode::kContract,
          "backward() on a tensor with no recorded tape");
  ComputationTape<T> tape(loss);
  Node<T>* root = loss.node();
  root->ensure_grad();
  root->grad[0] += T(1);
  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || !n->backward_fn) continue;
    if (n->grad.size() != n->data.size()) continue;
    for (auto& p : n->parents) p->ensure_grad();
    n->backward_fn(*n);
    if (n != root) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Dense kernels. Every reduction runs in a fixed sequential order.

namespace kernel {

// C[M,N] (+)= A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  constexpr std::size_t kBlockK = 256;
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + (i + 0) * n;
      T* __restrict c1 = c + (i + 1) * n;
      T* __restrict c2 = c + (i + 2) * n;
      T* __restrict c3 = c + (i + 3) * n;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        const T a0 = a[(i + 0) * k + kk];
        const T a1 = a[(i + 1) * k + kk];
        const T a2 = a[(i + 2) * k + kk];
        const T a3 = a[(i + 3) * k + kk];
        const T* __restrict br = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) {
          const T bv = br[j];
          c0[j] = std::fma(a0, bv, c0[j]);
          c1[j] = std::fma(a1, bv, c1[j]);
          c2[j] = std::fma(a2, bv, c2[j]);
          c3[j] = std::fma(a3, bv, c3[j]);
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict ci = c + i * n;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        const T av = a[i * k + kk];
        const T* __restrict br = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = std::fma(av, br[j], ci[j]);
      }
    }
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::size_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kTile); ++c) dst[c * rows + r] = src[r * cols + c];
}

// General form: op(A) is M×K, op(B) is K×N. Transposed operands are
// materialized so the inner loop always streams contiguous rows.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  std::vector<T> ta, tb;
  if (trans_a) {
    ta.resize(m * k);
    transpose(k, m, a, ta.data());
    a = ta.data();
  }
  if (trans_b) {
    tb.resize(k * n);
    transpose(n, k, b, tb.data());
    b = tb.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

}  // namespace kernel
}  // namespace swtr
