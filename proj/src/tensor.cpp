#include "baar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace baar {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_grad_enabled = true;

void round_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void maybe_round(std::vector<double>& v, Precision p) {
  if (p == Precision::f32) round_f32(v);
}

Precision merge_precision(const Tensor& a, const Tensor& b) {
  if (a.precision() != b.precision()) {
    throw std::invalid_argument("mixed tensor precisions in one op");
  }
  return a.precision();
}

bool track(const Tensor& t) { return g_grad_enabled && t.requires_grad(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void check_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
  }
}

// c[m×n] += a[m×k] · b[k×n]; j-inner so the compiler can vectorize.
void matmul_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ga[m×k] += g[m×n] · bᵀ[n×k]
void matmul_acc_gbt(const double* g, const double* b, double* ga, std::int64_t m, std::int64_t k,
                    std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* garow = ga + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      garow[p] += acc;
    }
  }
}

// gb[k×n] += aᵀ[k×m] · g[m×n]
void matmul_acc_atg(const double* a, const double* g, double* gb, std::int64_t m, std::int64_t k,
                    std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* gbrow = gb + p * n;
      for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_fwd(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_bwd(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// ---- Tensor ----

Tensor Tensor::make(Shape shape, std::vector<double> values, bool requires_grad, Precision p) {
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("shape " + shape_str(shape) + " does not match buffer of " +
                                std::to_string(values.size()) + " values");
  }
  auto pl = std::make_shared<Payload>();
  pl->shape = std::move(shape);
  pl->data = std::move(values);
  pl->requires_grad = requires_grad;
  pl->prec = p;
  return Tensor(std::move(pl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad, Precision p) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  return make(std::move(shape), std::move(v), requires_grad, p);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad, Precision p) {
  if (p == Precision::f32) value = static_cast<double>(static_cast<float>(value));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)), value);
  return make(std::move(shape), std::move(v), requires_grad, p);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad, Precision p) {
  maybe_round(values, p);
  return make(std::move(shape), std::move(values), requires_grad, p);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad, Precision p) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = dist(rng);
  maybe_round(v, p);
  return make(std::move(shape), std::move(v), requires_grad, p);
}

Tensor Tensor::eye(std::int64_t n, Precision p) {
  Tensor t = zeros({n, n}, false, p);
  for (std::int64_t i = 0; i < n; ++i) t.mutable_data()[static_cast<std::size_t>(i * n + i)] = 1.0;
  return t;
}

const Shape& Tensor::shape() const {
  if (!payload_) throw std::runtime_error("use of undefined tensor");
  return payload_->shape;
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

std::int64_t Tensor::dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

Precision Tensor::precision() const {
  if (!payload_) throw std::runtime_error("use of undefined tensor");
  return payload_->prec;
}

bool Tensor::requires_grad() const { return payload_ && payload_->requires_grad; }

const std::vector<double>& Tensor::data() const {
  if (!payload_) throw std::runtime_error("use of undefined tensor");
  return payload_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!payload_) throw std::runtime_error("use of undefined tensor");
  return payload_->data;
}

bool Tensor::has_grad() const { return payload_ && !payload_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("tensor has no gradient");
  return payload_->grad;
}

std::vector<double>& Tensor::ensure_grad() {
  if (!payload_) throw std::runtime_error("use of undefined tensor");
  if (payload_->grad.empty()) payload_->grad.assign(payload_->data.size(), 0.0);
  return payload_->grad;
}

void Tensor::zero_grad() {
  if (payload_ && !payload_->grad.empty()) {
    std::fill(payload_->grad.begin(), payload_->grad.end(), 0.0);
  }
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item(): tensor " + shape_str(shape()) + " is not scalar");
  return data()[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  check_2d(*this, "at");
  if (r < 0 || r >= dim(0) || c < 0 || c >= dim(1)) throw std::out_of_range("Tensor::at index");
  return data()[static_cast<std::size_t>(r * dim(1) + c)];
}

Tensor Tensor::detach() const {
  return make(shape(), data(), false, precision());
}

// ---- Tape ----

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> step) {
  if (consumed_) throw std::runtime_error("recording onto a consumed tape");
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("backward called twice on the same graph");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (steps_.empty()) throw std::runtime_error("backward: no recorded graph");
  if (!loss.requires_grad()) throw std::runtime_error("backward: loss is not attached to the graph");
  consumed_ = true;
  Tensor seed = loss;
  seed.ensure_grad()[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();  // frees the graph
  steps_.shrink_to_fit();
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw std::runtime_error("backward: no active tape");
  t->backward(loss);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- op helpers ----

namespace {

bool tape_on() { return g_grad_enabled && g_active_tape != nullptr; }

void record_step(std::function<void()> fn) { g_active_tape->record(std::move(fn)); }

Tensor result_like(Shape shape, std::vector<double> values, bool needs_grad, Precision p) {
  return Tensor::from_data(std::move(shape), std::move(values), needs_grad && tape_on(), p);
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const Precision p = merge_precision(a, b);
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Tensor r = result_like(a.shape(), std::move(out), track(a) || track(b), p);
  if (r.requires_grad()) {
    Tensor ac = a, bc = b, rc = r;
    record_step([ac, bc, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const Precision p = merge_precision(a, b);
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Tensor r = result_like(a.shape(), std::move(out), track(a) || track(b), p);
  if (r.requires_grad()) {
    Tensor ac = a, bc = b, rc = r;
    record_step([ac, bc, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const Precision p = merge_precision(a, b);
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Tensor r = result_like(a.shape(), std::move(out), track(a) || track(b), p);
  if (r.requires_grad()) {
    Tensor ac = a, bc = b, rc = r;
    record_step([ac, bc, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.ensure_grad();
        const auto& bd2 = bc.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd2[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.ensure_grad();
        const auto& ad2 = ac.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad2[i];
      }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& x : out) x *= c;
  Tensor r = result_like(a.shape(), std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc, c]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      auto& ga = ac.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return r;
}

Tensor exp_t(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) x = std::exp(x);
  Tensor r = result_like(a.shape(), std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& y = rc.data();
      auto& ga = ac.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  }
  return r;
}

Tensor log_t(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) {
    if (x <= 0.0) throw std::domain_error("log: non-positive input");
    x = std::log(x);
  }
  Tensor r = result_like(a.shape(), std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& x = ac.data();
      auto& ga = ac.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
  }
  return r;
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) x = gelu_fwd(x);
  Tensor r = result_like(a.shape(), std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& x = ac.data();
      auto& ga = ac.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_bwd(x[i]);
    });
  }
  return r;
}

// ---- matmul / layout ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const Precision p = merge_precision(a, b);
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  matmul_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor r = result_like({m, n}, std::move(out), track(a) || track(b), p);
  if (r.requires_grad()) {
    Tensor ac = a, bc = b, rc = r;
    record_step([ac, bc, rc, m, k, n]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      if (ac.requires_grad()) {
        matmul_acc_gbt(g.data(), bc.data().data(), ac.ensure_grad().data(), m, k, n);
      }
      if (bc.requires_grad()) {
        matmul_acc_atg(ac.data().data(), g.data(), bc.ensure_grad().data(), m, k, n);
      }
    });
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto& x = a.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(j * m + i)] = x[static_cast<std::size_t>(i * n + j)];
  Tensor r = result_like({n, m}, std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc, m, n]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      auto& ga = ac.ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i * n + j)] += g[static_cast<std::size_t>(j * m + i)];
    });
  }
  return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor r = result_like(shape, a.data(), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      auto& ga = ac.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (const auto& t : parts) check_2d(t, "concat");
  const std::int64_t fixed = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  std::int64_t total = 0;
  bool needs = false;
  const Precision p = parts[0].precision();
  for (const auto& t : parts) {
    const std::int64_t f = axis == 0 ? t.dim(1) : t.dim(0);
    if (f != fixed) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(t.shape()));
    }
    merge_precision(parts[0], t);
    total += axis == 0 ? t.dim(0) : t.dim(1);
    needs = needs || track(t);
  }
  const std::int64_t rows = axis == 0 ? total : fixed;
  const std::int64_t cols = axis == 0 ? fixed : total;
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  std::int64_t off = 0;
  for (const auto& t : parts) {
    const auto& x = t.data();
    if (axis == 0) {
      std::copy(x.begin(), x.end(), out.begin() + off * cols);
      off += t.dim(0);
    } else {
      for (std::int64_t i = 0; i < rows; ++i)
        std::copy(x.begin() + i * t.dim(1), x.begin() + (i + 1) * t.dim(1), out.begin() + i * cols + off);
      off += t.dim(1);
    }
  }
  Tensor r = result_like({rows, cols}, std::move(out), needs, p);
  if (r.requires_grad()) {
    std::vector<Tensor> pc = parts;
    Tensor rc = r;
    record_step([pc, rc, axis, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      std::int64_t off2 = 0;
      for (auto& t : pc) {
        const std::int64_t span = axis == 0 ? t.dim(0) : t.dim(1);
        if (t.requires_grad()) {
          auto& gt = t.ensure_grad();
          if (axis == 0) {
            for (std::int64_t i = 0; i < span * cols; ++i) gt[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(off2 * cols + i)];
          } else {
            for (std::int64_t i = 0; i < rows; ++i)
              for (std::int64_t j = 0; j < span; ++j)
                gt[static_cast<std::size_t>(i * span + j)] += g[static_cast<std::size_t>(i * cols + off2 + j)];
          }
        }
        off2 += span;
      }
    });
  }
  return r;
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
  check_2d(a, "slice");
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  const std::int64_t extent = a.dim(axis);
  if (start < 0 || len < 0 || start + len > extent) {
    throw std::out_of_range("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                            ") outside extent " + std::to_string(extent));
  }
  const std::int64_t rows = axis == 0 ? len : a.dim(0);
  const std::int64_t cols = axis == 0 ? a.dim(1) : len;
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  const auto& x = a.data();
  const std::int64_t n = a.dim(1);
  for (std::int64_t i = 0; i < rows; ++i) {
    const std::int64_t src_row = axis == 0 ? start + i : i;
    const std::int64_t src_col = axis == 0 ? 0 : start;
    std::copy(x.begin() + src_row * n + src_col, x.begin() + src_row * n + src_col + cols,
              out.begin() + i * cols);
  }
  Tensor r = result_like({rows, cols}, std::move(out), track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc, axis, start, rows, cols, n]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      auto& ga = ac.ensure_grad();
      for (std::int64_t i = 0; i < rows; ++i) {
        const std::int64_t dst_row = axis == 0 ? start + i : i;
        const std::int64_t dst_col = axis == 0 ? 0 : start;
        for (std::int64_t j = 0; j < cols; ++j)
          ga[static_cast<std::size_t>(dst_row * n + dst_col + j)] += g[static_cast<std::size_t>(i * cols + j)];
      }
    });
  }
  return r;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_2d(x, "add_rowvec");
  if (v.ndim() != 1 || v.dim(0) != x.dim(1)) {
    throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) + " does not match " +
                                shape_str(x.shape()));
  }
  const Precision p = merge_precision(x, v);
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.data());
  const auto& vd = v.data();
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[static_cast<std::size_t>(i * cols + j)] += vd[static_cast<std::size_t>(j)];
  Tensor r = result_like(x.shape(), std::move(out), track(x) || track(v), p);
  if (r.requires_grad()) {
    Tensor xc = x, vc = v, rc = r;
    record_step([xc, vc, rc, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      if (xc.requires_grad()) {
        auto& gx = xc.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (vc.requires_grad()) {
        auto& gv = vc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j) gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)];
      }
    });
  }
  return r;
}

Tensor scale_rows(const Tensor& x, const Tensor& v) {
  check_2d(x, "scale_rows");
  if (v.ndim() != 1 || v.dim(0) != x.dim(0)) {
    throw std::invalid_argument("scale_rows: vector " + shape_str(v.shape()) + " does not match " +
                                shape_str(x.shape()));
  }
  const Precision p = merge_precision(x, v);
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.data());
  const auto& vd = v.data();
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[static_cast<std::size_t>(i * cols + j)] *= vd[static_cast<std::size_t>(i)];
  Tensor r = result_like(x.shape(), std::move(out), track(x) || track(v), p);
  if (r.requires_grad()) {
    Tensor xc = x, vc = v, rc = r;
    record_step([xc, vc, rc, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& vd2 = vc.data();
      const auto& xd2 = xc.data();
      if (xc.requires_grad()) {
        auto& gx = xc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            gx[static_cast<std::size_t>(i * cols + j)] += g[static_cast<std::size_t>(i * cols + j)] * vd2[static_cast<std::size_t>(i)];
      }
      if (vc.requires_grad()) {
        auto& gv = vc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < cols; ++j)
            acc += g[static_cast<std::size_t>(i * cols + j)] * xd2[static_cast<std::size_t>(i * cols + j)];
          gv[static_cast<std::size_t>(i)] += acc;
        }
      }
    });
  }
  return r;
}

// ---- rowwise nonlinear ----

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax_rows");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (cols == 0) throw std::invalid_argument("softmax_rows: empty rows");
  std::vector<double> out(x.data());
  for (const double v : out) {
    if (std::isnan(v)) throw std::runtime_error("softmax_rows: non-finite input");
  }
  for (std::int64_t i = 0; i < rows; ++i) {
    double* row = out.data() + i * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) row[j] /= sum;
  }
  Tensor r = result_like(x.shape(), std::move(out), track(x), x.precision());
  if (r.requires_grad()) {
    Tensor xc = x, rc = r;
    record_step([xc, rc, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& y = rc.data();
      auto& gx = xc.ensure_grad();
      for (std::int64_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) dot += g[static_cast<std::size_t>(i * cols + j)] * y[static_cast<std::size_t>(i * cols + j)];
        for (std::int64_t j = 0; j < cols; ++j)
          gx[static_cast<std::size_t>(i * cols + j)] +=
              y[static_cast<std::size_t>(i * cols + j)] * (g[static_cast<std::size_t>(i * cols + j)] - dot);
      }
    });
  }
  return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_2d(x, "layer_norm");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 || bias.dim(0) != cols) {
    throw std::invalid_argument("layer_norm: gain/bias must be length-" + std::to_string(cols) + " vectors");
  }
  const Precision p = x.precision();
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  std::vector<double> xhat(static_cast<std::size_t>(rows * cols));
  std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = xd.data() + i * cols;
    double mu = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = inv;
    for (std::int64_t j = 0; j < cols; ++j) {
      const double xh = (row[j] - mu) * inv;
      xhat[static_cast<std::size_t>(i * cols + j)] = xh;
      out[static_cast<std::size_t>(i * cols + j)] = gd[static_cast<std::size_t>(j)] * xh + bd[static_cast<std::size_t>(j)];
    }
  }
  Tensor r = result_like(x.shape(), std::move(out), track(x) || track(gain) || track(bias), p);
  if (r.requires_grad()) {
    Tensor xc = x, gc = gain, bc = bias, rc = r;
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    record_step([xc, gc, bc, rc, xh, is, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& gd2 = gc.data();
      if (gc.requires_grad()) {
        auto& gg = gc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            gg[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)] * (*xh)[static_cast<std::size_t>(i * cols + j)];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)];
      }
      if (xc.requires_grad()) {
        auto& gx = xc.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          double mean_gy = 0.0, mean_gy_xh = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) {
            const double gy = g[static_cast<std::size_t>(i * cols + j)] * gd2[static_cast<std::size_t>(j)];
            mean_gy += gy;
            mean_gy_xh += gy * (*xh)[static_cast<std::size_t>(i * cols + j)];
          }
          mean_gy /= static_cast<double>(cols);
          mean_gy_xh /= static_cast<double>(cols);
          const double inv = (*is)[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < cols; ++j) {
            const double gy = g[static_cast<std::size_t>(i * cols + j)] * gd2[static_cast<std::size_t>(j)];
            gx[static_cast<std::size_t>(i * cols + j)] +=
                inv * (gy - mean_gy - (*xh)[static_cast<std::size_t>(i * cols + j)] * mean_gy_xh);
          }
        }
      }
    });
  }
  return r;
}

// ---- conv1d: kernel 3, stride 2, one zero on each side; out length ceil(T/2) ----

Tensor conv1d(const Tensor& x, const Tensor& kernel) {
  check_2d(x, "conv1d");
  if (kernel.ndim() != 3 || kernel.dim(2) != 3) {
    throw std::invalid_argument("conv1d: kernel must be O×V×3, got " + shape_str(kernel.shape()));
  }
  const std::int64_t T = x.dim(0), V = x.dim(1);
  if (T == 0) throw std::invalid_argument("conv1d: empty input");
  if (kernel.dim(1) != V) {
    throw std::invalid_argument("conv1d: kernel channels " + shape_str(kernel.shape()) +
                                " do not match input " + shape_str(x.shape()));
  }
  const Precision p = merge_precision(x, kernel);
  const std::int64_t O = kernel.dim(0);
  const std::int64_t To = (T + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(To * O), 0.0);
  const auto& xd = x.data();
  const auto& kd = kernel.data();
  for (std::int64_t t = 0; t < To; ++t) {
    for (std::int64_t o = 0; o < O; ++o) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < 3; ++j) {
        const std::int64_t src = 2 * t - 1 + j;
        if (src < 0 || src >= T) continue;
        for (std::int64_t v = 0; v < V; ++v)
          acc += xd[static_cast<std::size_t>(src * V + v)] * kd[static_cast<std::size_t>((o * V + v) * 3 + j)];
      }
      out[static_cast<std::size_t>(t * O + o)] = acc;
    }
  }
  Tensor r = result_like({To, O}, std::move(out), track(x) || track(kernel), p);
  if (r.requires_grad()) {
    Tensor xc = x, kc = kernel, rc = r;
    record_step([xc, kc, rc, T, V, O, To]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      const auto& xd2 = xc.data();
      const auto& kd2 = kc.data();
      if (xc.requires_grad()) {
        auto& gx = xc.ensure_grad();
        for (std::int64_t t = 0; t < To; ++t)
          for (std::int64_t o = 0; o < O; ++o) {
            const double gv = g[static_cast<std::size_t>(t * O + o)];
            if (gv == 0.0) continue;
            for (std::int64_t j = 0; j < 3; ++j) {
              const std::int64_t src = 2 * t - 1 + j;
              if (src < 0 || src >= T) continue;
              for (std::int64_t v = 0; v < V; ++v)
                gx[static_cast<std::size_t>(src * V + v)] += gv * kd2[static_cast<std::size_t>((o * V + v) * 3 + j)];
            }
          }
      }
      if (kc.requires_grad()) {
        auto& gk = kc.ensure_grad();
        for (std::int64_t t = 0; t < To; ++t)
          for (std::int64_t o = 0; o < O; ++o) {
            const double gv = g[static_cast<std::size_t>(t * O + o)];
            if (gv == 0.0) continue;
            for (std::int64_t j = 0; j < 3; ++j) {
              const std::int64_t src = 2 * t - 1 + j;
              if (src < 0 || src >= T) continue;
              for (std::int64_t v = 0; v < V; ++v)
                gk[static_cast<std::size_t>((o * V + v) * 3 + j)] += gv * xd2[static_cast<std::size_t>(src * V + v)];
            }
          }
      }
    });
  }
  return r;
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& codes) {
  check_2d(table, "embedding");
  const std::int64_t vocab = table.dim(0), d = table.dim(1);
  for (auto c : codes) {
    if (c < 0 || c >= vocab) {
      throw std::out_of_range("embedding: code " + std::to_string(c) + " outside vocab of " +
                              std::to_string(vocab));
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(codes.size());
  std::vector<double> out(static_cast<std::size_t>(n * d));
  const auto& td = table.data();
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(td.begin() + codes[static_cast<std::size_t>(i)] * d,
              td.begin() + (codes[static_cast<std::size_t>(i)] + 1) * d, out.begin() + i * d);
  Tensor r = result_like({n, d}, std::move(out), track(table), table.precision());
  if (r.requires_grad()) {
    Tensor tc = table, rc = r;
    auto cc = std::make_shared<std::vector<std::int64_t>>(codes);
    record_step([tc, rc, cc, d]() mutable {
      if (!rc.has_grad()) return;
      const auto& g = rc.grad();
      auto& gt = tc.ensure_grad();
      for (std::size_t i = 0; i < cc->size(); ++i)
        for (std::int64_t j = 0; j < d; ++j)
          gt[static_cast<std::size_t>((*cc)[i] * d + j)] += g[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
    });
  }
  return r;
}

// ---- losses ----

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets) {
  check_2d(logits, "cross_entropy");
  const std::int64_t rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(rows) + " rows");
  }
  if (rows == 0) throw std::invalid_argument("cross_entropy: empty batch");
  for (auto t : targets) {
    if (t < 0 || t >= cols) throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside vocab");
  }
  const auto& z = logits.data();
  for (const double v : z) {
    if (!std::isfinite(v)) throw std::runtime_error("cross_entropy: non-finite logits");
  }
  double loss = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = z.data() + i * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    loss += std::log(sum) + mx - row[targets[static_cast<std::size_t>(i)]];
  }
  loss /= static_cast<double>(rows);
  Tensor r = result_like({1}, {loss}, track(logits), logits.precision());
  if (r.requires_grad()) {
    Tensor lc = logits, rc = r;
    auto tg = std::make_shared<std::vector<std::int64_t>>(targets);
    record_step([lc, rc, tg, rows, cols]() mutable {
      if (!rc.has_grad()) return;
      const double g = rc.grad()[0];
      const auto& z2 = lc.data();
      auto& gz = lc.ensure_grad();
      for (std::int64_t i = 0; i < rows; ++i) {
        const double* row = z2.data() + i * cols;
        const double mx = *std::max_element(row, row + cols);
        double sum = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
        for (std::int64_t j = 0; j < cols; ++j) {
          double p = std::exp(row[j] - mx) / sum;
          if (j == (*tg)[static_cast<std::size_t>(i)]) p -= 1.0;
          gz[static_cast<std::size_t>(i * cols + j)] += g * p / static_cast<double>(rows);
        }
      }
    });
  }
  return r;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets01) {
  check_same_shape(logits, targets01, "bce_with_logits");
  const auto& z = logits.data();
  const auto& y = targets01.data();
  if (z.empty()) throw std::invalid_argument("bce_with_logits: empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // log(1+exp(-|z|)) + max(z,0) - z*y, stable form
    loss += std::log1p(std::exp(-std::abs(z[i]))) + std::max(z[i], 0.0) - z[i] * y[i];
  }
  loss /= static_cast<double>(z.size());
  Tensor r = result_like({1}, {loss}, track(logits), logits.precision());
  if (r.requires_grad()) {
    Tensor lc = logits, tc = targets01, rc = r;
    record_step([lc, tc, rc]() mutable {
      if (!rc.has_grad()) return;
      const double g = rc.grad()[0];
      const auto& z2 = lc.data();
      const auto& y2 = tc.data();
      auto& gz = lc.ensure_grad();
      const double inv = 1.0 / static_cast<double>(z2.size());
      for (std::size_t i = 0; i < z2.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-z2[i]));
        gz[i] += g * (s - y2[i]) * inv;
      }
    });
  }
  return r;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  const auto& a = pred.data();
  const auto& b = target.data();
  if (a.empty()) throw std::invalid_argument("mse: empty tensors");
  double loss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) loss += (a[i] - b[i]) * (a[i] - b[i]);
  loss /= static_cast<double>(a.size());
  Tensor r = result_like({1}, {loss}, track(pred) || track(target), pred.precision());
  if (r.requires_grad()) {
    Tensor pc = pred, tc = target, rc = r;
    record_step([pc, tc, rc]() mutable {
      if (!rc.has_grad()) return;
      const double g = rc.grad()[0];
      const auto& a2 = pc.data();
      const auto& b2 = tc.data();
      const double c = 2.0 * g / static_cast<double>(a2.size());
      if (pc.requires_grad()) {
        auto& gp = pc.ensure_grad();
        for (std::size_t i = 0; i < a2.size(); ++i) gp[i] += c * (a2[i] - b2[i]);
      }
      if (tc.requires_grad()) {
        auto& gt = tc.ensure_grad();
        for (std::size_t i = 0; i < a2.size(); ++i) gt[i] -= c * (a2[i] - b2[i]);
      }
    });
  }
  return r;
}

Tensor sum_all(const Tensor& a) {
  const auto& x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  Tensor r = result_like({1}, {s}, track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const double g = rc.grad()[0];
      auto& ga = ac.ensure_grad();
      for (double& v : ga) v += g;
    });
  }
  return r;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  const auto& x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  s /= static_cast<double>(x.size());
  Tensor r = result_like({1}, {s}, track(a), a.precision());
  if (r.requires_grad()) {
    Tensor ac = a, rc = r;
    record_step([ac, rc]() mutable {
      if (!rc.has_grad()) return;
      const double g = rc.grad()[0] / static_cast<double>(ac.numel());
      auto& ga = ac.ensure_grad();
      for (double& v : ga) v += g;
    });
  }
  return r;
}

}  // namespace baar
