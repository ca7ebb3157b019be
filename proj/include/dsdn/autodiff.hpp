#ifndef DSDN_AUTODIFF_HPP
#define DSDN_AUTODIFF_HPP

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsdn {

using Mat = Eigen::MatrixXd;

// A named dense tensor with an accumulated gradient. Parameters live in a
// ParamStore and survive across tapes; gradients are cleared between steps.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Tensor(std::string n, Mat v, bool train = true)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())), trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

namespace ad {

struct Node;
using Var = Node*;

struct Node {
  Mat value;
  Mat grad;
  std::function<void(Node&)> backprop;  // adds into parents' grads
  class Tape* tape = nullptr;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

// Reverse-mode tape over dense matrices. Ops append nodes after their
// parents, so reverse allocation order is a valid backward schedule.
class Tape {
 public:
  explicit Tape(bool record_grads = true) : record_(record_grads) {
    nodes_.reserve(1 << 12);
  }

  bool recording() const { return record_; }

  Var alloc(Mat value) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->tape = this;
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
  }

  Var constant(Mat value) { return alloc(std::move(value)); }

  Var scalar(double v) { return alloc(Mat::Constant(1, 1, v)); }

  // Leaf reading a parameter; backward accumulates into the tensor's grad.
  Var param(Tensor& t) {
    Var n = alloc(t.value);
    if (record_ && t.trainable) {
      Tensor* tp = &t;
      n->backprop = [tp](Node& self) { tp->grad += self.grad; };
    }
    return n;
  }

  // root must be 1x1 (a scalar loss)
  void backward(Var root) {
    if (!record_)
      throw std::logic_error("backward() on a non-recording tape");
    if (root->rows() != 1 || root->cols() != 1)
      throw std::invalid_argument("backward root must be scalar");
    for (auto& n : nodes_)
      n->grad = Mat::Zero(n->rows(), n->cols());
    root->grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop(**it);
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  bool record_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

inline void check_same_shape(Var a, Var b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// ---- elementwise / linear algebra primitives -------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);                 // elementwise product
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var rows(Var a, Eigen::Index start, Eigen::Index n);
Var cols(Var a, Eigen::Index start, Eigen::Index n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var broadcast_row(Var a, Eigen::Index n);   // 1xd -> nxd
Var add_rowvec(Var a, Var v);               // a: nxd, v: 1xd
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);     // zero gradient outside [lo, hi]
Var cmax(Var a, Var b);                     // elementwise max, ties route to a
Var detach(Var a);
Var sum(Var a);                             // -> 1x1
Var mean(Var a);                            // -> 1x1
Var row_sums(Var a);                        // nxd -> nx1
Var select_cols(Var a, const std::vector<Eigen::Index>& idx);
Var logsumexp_row(Var a);                   // 1xn -> 1x1, max-shifted
Var softmax_rows(Var a);
// Softmax per row over key positions; masked columns get exactly zero weight.
Var softmax_rows_masked(Var a, const std::vector<std::uint8_t>& valid);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-9);
Var l2_normalize_rows(Var a, double tiny = 1e-12);
// Row lookup into an embedding table; backward scatter-adds.
Var embedding(Tape& tape, Tensor& table, const std::vector<int>& ids);

}  // namespace ad
}  // namespace dsdn

#endif  // DSDN_AUTODIFF_HPP
