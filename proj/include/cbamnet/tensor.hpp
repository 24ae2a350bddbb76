#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbamnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Runtime switch for the debug-only checks: NaN/Inf scans of op outputs
/// and division by exact zero. Defaults to on in builds without NDEBUG.
void set_debug_checks(bool enabled);
bool debug_checks();

/// Seeded generator with distribution transforms written out by hand, so a
/// given seed yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes several integers into one well-spread seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

enum class Distribution { uniform, normal };

/// uniform: U[-scale, scale]; normal: N(0, scale^2).
struct RandomFill {
  Distribution dist = Distribution::uniform;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until populated
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Shared handle to a dense row-major tensor. Copies alias the same node;
/// use clone() for an independent value.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static Tensor ones(const Shape& shape) { return full(shape, T(1)); }
  static Tensor full(const Shape& shape, T value);
  static Tensor from(const Shape& shape, std::vector<T> values);
  static Tensor random(const Shape& shape, const RandomFill& fill);
  static Tensor random(const Shape& shape, Rng& rng, Distribution dist, double scale);
  static Tensor scalar(T value) { return full({1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node().is_leaf; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<T> grad() { return node().grad; }
  std::span<const T> grad() const { return node().grad; }
  void zero_grad();
  void clear_grad() { node().grad.clear(); }

  /// Independent copy of the values; never tracked.
  Tensor clone() const;
  /// Same values, fresh untracked leaf.
  Tensor detach() const { return clone(); }

  Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Throws when any value is NaN or infinite and debug checks are enabled.
template <class T>
void check_finite(const Tensor<T>& t, const char* where);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cbamnet
