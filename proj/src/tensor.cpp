#include "cbamnet/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "cbamnet/trace.hpp"

namespace cbamnet {

namespace {

#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
}

}  // namespace

template <class T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  validate_shape(shape);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), value);
  return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("buffer length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::random(const Shape& shape, const RandomFill& fill) {
  Rng rng(fill.seed);
  return random(shape, rng, fill.dist, fill.scale);
}

template <class T>
Tensor<T> Tensor<T>::random(const Shape& shape, Rng& rng, Distribution dist, double scale) {
  Tensor t = zeros(shape);
  for (T& v : t.data()) {
    v = static_cast<T>(dist == Distribution::uniform ? rng.uniform(-scale, scale)
                                                     : scale * rng.normal());
  }
  return t;
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range");
  return node().shape[axis];
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

template <class T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node().shape[axis]) throw ShapeError("index out of range");
    off = off * node().shape[axis] + i;
    ++axis;
  }
  return node().data[off];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node().requires_grad = on;
  return *this;
}

template <class T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  if (g.empty()) {
    g.assign(numel(), T(0));
  } else {
    std::fill(g.begin(), g.end(), T(0));
  }
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  return from(shape(), node().data);
}

template <class T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (!debug_checks()) return;
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("non-finite value produced by ") + where);
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, const char*);
template void check_finite(const Tensor<double>&, const char*);

// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Trace<T>*& active_trace() {
  thread_local Trace<T>* current = nullptr;
  return current;
}

template Trace<float>*& active_trace<float>();
template Trace<double>*& active_trace<double>();

}  // namespace detail

template <class T>
Trace<T>::Trace() : previous_(detail::active_trace<T>()) {
  detail::active_trace<T>() = this;
}

template <class T>
Trace<T>::~Trace() {
  if (detail::active_trace<T>() == this) detail::active_trace<T>() = previous_;
}

template <class T>
Trace<T>* Trace<T>::active() {
  return detail::active_trace<T>();
}

template <class T>
void Trace<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw std::logic_error("backward called twice on one trace without reset");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::logic_error("loss was not produced from a traced op");
  consumed_ = true;
  auto& node = loss.node();
  node.ensure_grad();
  node.grad[0] += T(1);
  // Recording stops while rules run so they cannot append to this trace.
  Trace<T>* saved = detail::active_trace<T>();
  detail::active_trace<T>() = nullptr;
  try {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  } catch (...) {
    detail::active_trace<T>() = saved;
    throw;
  }
  detail::active_trace<T>() = saved;
  entries_.clear();
}

template <class T>
void Trace<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template <class T>
NoTrace<T>::NoTrace() : saved_(detail::active_trace<T>()) {
  detail::active_trace<T>() = nullptr;
}

template <class T>
NoTrace<T>::~NoTrace() {
  detail::active_trace<T>() = saved_;
}

template class Trace<float>;
template class Trace<double>;
template class NoTrace<float>;
template class NoTrace<double>;

}  // namespace cbamnet
