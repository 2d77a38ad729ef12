#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace baar {

// Storage precision of tensor values. Values in f32 tensors are always
// exactly representable as IEEE floats; arithmetic runs in double and
// results are rounded back, so f32 checkpoints serialize losslessly.
enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense tensor handle with value semantics: copies share the underlying
// buffer, ops produce fresh tensors. Buffers are treated as immutable once
// an op has consumed them (the optimizer mutates leaf parameters between
// forward passes, which is fine because the tape is gone by then).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false, Precision p = Precision::f64);
  static Tensor full(Shape shape, double value, bool requires_grad = false, Precision p = Precision::f64);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false,
                          Precision p = Precision::f64);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false,
                      Precision p = Precision::f64);
  static Tensor eye(std::int64_t n, Precision p = Precision::f64);

  bool defined() const { return payload_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  std::int64_t dim(int i) const;
  std::int64_t numel() const;
  Precision precision() const;
  bool requires_grad() const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& ensure_grad();  // allocates zeros on first use
  void zero_grad();

  double item() const;                          // scalar tensors only
  double at(std::int64_t r, std::int64_t c) const;  // 2-D convenience

  // Detached copy: same values, no grad tracking.
  Tensor detach() const;

  bool same_payload(const Tensor& other) const { return payload_ == other.payload_; }

 private:
  struct Payload {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    Precision prec = Precision::f64;
  };
  std::shared_ptr<Payload> payload_;
  explicit Tensor(std::shared_ptr<Payload> p) : payload_(std::move(p)) {}
  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad, Precision p);
};

// Reverse-mode tape. Ops append one backward step per primitive while a
// tape is active; backward(loss) replays them in reverse creation order,
// then frees the recorded graph. A tape can be consumed exactly once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::function<void()> step);
  void backward(const Tensor& loss);
  std::size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// Disables grad tracking (and tape recording) for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- primitives (all differentiable unless noted) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor add_rowvec(const Tensor& x, const Tensor& v);    // x: N×M, v: M
Tensor scale_rows(const Tensor& x, const Tensor& v);    // x: N×M, v: N (row n scaled by v[n])
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor conv1d(const Tensor& x, const Tensor& kernel);   // x: T×V, kernel: O×V×3, stride 2, zero pad 1
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& codes);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets01);
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Runs backward on the innermost active tape. loss must be a scalar.
void backward(const Tensor& loss);

}  // namespace baar
