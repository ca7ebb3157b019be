#include "dsdn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dsdn::ad {

namespace {

Var unary(Var a, Mat value, std::function<void(Node&, Node&)> back) {
  Var out = a->tape->alloc(std::move(value));
  if (a->tape->recording())
    out->backprop = [a, back](Node& self) { back(self, *a); };
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Var out = a->tape->alloc(a->value + b->value);
  if (a->tape->recording())
    out->backprop = [a, b](Node& self) {
      a->grad += self.grad;
      b->grad += self.grad;
    };
  return out;
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Var out = a->tape->alloc(a->value - b->value);
  if (a->tape->recording())
    out->backprop = [a, b](Node& self) {
      a->grad += self.grad;
      b->grad -= self.grad;
    };
  return out;
}

Var cmul(Var a, Var b) {
  check_same_shape(a, b, "cmul");
  Var out = a->tape->alloc(a->value.cwiseProduct(b->value));
  if (a->tape->recording())
    out->backprop = [a, b](Node& self) {
      a->grad += self.grad.cwiseProduct(b->value);
      b->grad += self.grad.cwiseProduct(a->value);
    };
  return out;
}

Var scale(Var a, double s) {
  return unary(a, a->value * s,
               [s](Node& self, Node& pa) { pa.grad += self.grad * s; });
}

Var matmul(Var a, Var b) {
  if (a->cols() != b->rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  Var out = a->tape->alloc(a->value * b->value);
  if (a->tape->recording())
    out->backprop = [a, b](Node& self) {
      a->grad.noalias() += self.grad * b->value.transpose();
      b->grad.noalias() += a->value.transpose() * self.grad;
    };
  return out;
}

Var transpose(Var a) {
  return unary(a, a->value.transpose(), [](Node& self, Node& pa) {
    pa.grad += self.grad.transpose();
  });
}

Var rows(Var a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a->rows())
    throw std::invalid_argument("rows: slice out of range");
  Var out = a->tape->alloc(a->value.middleRows(start, n));
  if (a->tape->recording())
    out->backprop = [a, start, n](Node& self) {
      a->grad.middleRows(start, n) += self.grad;
    };
  return out;
}

Var cols(Var a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a->cols())
    throw std::invalid_argument("cols: slice out of range");
  Var out = a->tape->alloc(a->value.middleCols(start, n));
  if (a->tape->recording())
    out->backprop = [a, start, n](Node& self) {
      a->grad.middleCols(start, n) += self.grad;
    };
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index total = 0;
  const Eigen::Index c = parts[0]->cols();
  for (Var p : parts) {
    if (p->cols() != c)
      throw std::invalid_argument("concat_rows: column mismatch");
    total += p->rows();
  }
  Mat v(total, c);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  Var out = parts[0]->tape->alloc(std::move(v));
  if (parts[0]->tape->recording()) {
    std::vector<Var> ps = parts;
    out->backprop = [ps](Node& self) {
      Eigen::Index at = 0;
      for (Var p : ps) {
        p->grad += self.grad.middleRows(at, p->rows());
        at += p->rows();
      }
    };
  }
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index total = 0;
  const Eigen::Index r = parts[0]->rows();
  for (Var p : parts) {
    if (p->rows() != r)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p->cols();
  }
  Mat v(r, total);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  Var out = parts[0]->tape->alloc(std::move(v));
  if (parts[0]->tape->recording()) {
    std::vector<Var> ps = parts;
    out->backprop = [ps](Node& self) {
      Eigen::Index at = 0;
      for (Var p : ps) {
        p->grad += self.grad.middleCols(at, p->cols());
        at += p->cols();
      }
    };
  }
  return out;
}

Var broadcast_row(Var a, Eigen::Index n) {
  if (a->rows() != 1) throw std::invalid_argument("broadcast_row: need 1xd");
  return unary(a, a->value.replicate(n, 1), [](Node& self, Node& pa) {
    pa.grad += self.grad.colwise().sum();
  });
}

Var add_rowvec(Var a, Var v) {
  if (v->rows() != 1 || v->cols() != a->cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Var out = a->tape->alloc(a->value.rowwise() + v->value.row(0));
  if (a->tape->recording())
    out->backprop = [a, v](Node& self) {
      a->grad += self.grad;
      v->grad += self.grad.colwise().sum();
    };
  return out;
}

Var tanh(Var a) {
  Var out = unary(a, a->value.array().tanh().matrix(),
                  [](Node& self, Node& pa) {
                    pa.grad.array() +=
                        self.grad.array() * (1.0 - self.value.array().square());
                  });
  return out;
}

Var relu(Var a) {
  return unary(a, a->value.cwiseMax(0.0), [](Node& self, Node& pa) {
    pa.grad.array() +=
        self.grad.array() * (pa.value.array() > 0.0).cast<double>();
  });
}

Var sigmoid(Var a) {
  Mat v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  return unary(a, std::move(v), [](Node& self, Node& pa) {
    pa.grad.array() += self.grad.array() * self.value.array() *
                       (1.0 - self.value.array());
  });
}

Var log(Var a) {
  return unary(a, a->value.array().log().matrix(), [](Node& self, Node& pa) {
    pa.grad.array() += self.grad.array() / pa.value.array();
  });
}

Var sqrt(Var a) {
  return unary(a, a->value.array().sqrt().matrix(), [](Node& self, Node& pa) {
    pa.grad.array() +=
        self.grad.array() / (2.0 * self.value.array().max(1e-30));
  });
}

Var square(Var a) {
  return unary(a, a->value.array().square().matrix(),
               [](Node& self, Node& pa) {
                 pa.grad.array() += self.grad.array() * 2.0 * pa.value.array();
               });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, a->value.cwiseMax(lo).cwiseMin(hi),
               [lo, hi](Node& self, Node& pa) {
                 pa.grad.array() +=
                     self.grad.array() *
                     ((pa.value.array() >= lo) && (pa.value.array() <= hi))
                         .cast<double>();
               });
}

Var cmax(Var a, Var b) {
  check_same_shape(a, b, "cmax");
  Var out = a->tape->alloc(a->value.cwiseMax(b->value));
  if (a->tape->recording())
    out->backprop = [a, b](Node& self) {
      Eigen::ArrayXXd take_a = (a->value.array() >= b->value.array()).cast<double>();
      a->grad.array() += self.grad.array() * take_a;
      b->grad.array() += self.grad.array() * (1.0 - take_a);
    };
  return out;
}

Var detach(Var a) { return a->tape->constant(a->value); }

Var sum(Var a) {
  Var out = a->tape->alloc(Mat::Constant(1, 1, a->value.sum()));
  if (a->tape->recording())
    out->backprop = [a](Node& self) {
      a->grad.array() += self.grad(0, 0);
    };
  return out;
}

Var mean(Var a) {
  const double n = static_cast<double>(a->value.size());
  Var out = a->tape->alloc(Mat::Constant(1, 1, a->value.mean()));
  if (a->tape->recording())
    out->backprop = [a, n](Node& self) {
      a->grad.array() += self.grad(0, 0) / n;
    };
  return out;
}

Var row_sums(Var a) {
  Var out = a->tape->alloc(a->value.rowwise().sum());
  if (a->tape->recording())
    out->backprop = [a](Node& self) {
      a->grad.colwise() += self.grad.col(0);
    };
  return out;
}

Var select_cols(Var a, const std::vector<Eigen::Index>& idx) {
  Mat v(a->rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a->cols())
      throw std::invalid_argument("select_cols: index out of range");
    v.col(static_cast<Eigen::Index>(k)) = a->value.col(idx[k]);
  }
  Var out = a->tape->alloc(std::move(v));
  if (a->tape->recording()) {
    std::vector<Eigen::Index> ix = idx;
    out->backprop = [a, ix](Node& self) {
      for (std::size_t k = 0; k < ix.size(); ++k)
        a->grad.col(ix[k]) += self.grad.col(static_cast<Eigen::Index>(k));
    };
  }
  return out;
}

Var logsumexp_row(Var a) {
  if (a->rows() != 1) throw std::invalid_argument("logsumexp_row: need 1xn");
  const double mx = a->value.maxCoeff();
  const double lse = mx + std::log((a->value.array() - mx).exp().sum());
  Var out = a->tape->alloc(Mat::Constant(1, 1, lse));
  if (a->tape->recording())
    out->backprop = [a, lse](Node& self) {
      a->grad.array() += self.grad(0, 0) * (a->value.array() - lse).exp();
    };
  return out;
}

Var softmax_rows(Var a) {
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(a->cols()), 1);
  return softmax_rows_masked(a, valid);
}

Var softmax_rows_masked(Var a, const std::vector<std::uint8_t>& valid) {
  if (static_cast<Eigen::Index>(valid.size()) != a->cols())
    throw std::invalid_argument("softmax_rows_masked: mask length mismatch");
  bool any = false;
  for (auto m : valid) any = any || m;
  if (!any) throw std::invalid_argument("softmax_rows_masked: all masked");
  Mat v(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < a->cols(); ++c)
      if (valid[static_cast<std::size_t>(c)]) mx = std::max(mx, a->value(r, c));
    double z = 0.0;
    for (Eigen::Index c = 0; c < a->cols(); ++c) {
      double e = valid[static_cast<std::size_t>(c)]
                     ? std::exp(a->value(r, c) - mx)
                     : 0.0;
      v(r, c) = e;
      z += e;
    }
    v.row(r) /= z;
  }
  Var out = a->tape->alloc(std::move(v));
  if (a->tape->recording())
    out->backprop = [a](Node& self) {
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        const double dot = self.grad.row(r).dot(self.value.row(r));
        a->grad.row(r).array() +=
            self.value.row(r).array() * (self.grad.row(r).array() - dot);
      }
    };
  return out;
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  if (gain->rows() != 1 || gain->cols() != a->cols() || bias->rows() != 1 ||
      bias->cols() != a->cols())
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1xd");
  const Eigen::Index d = a->cols();
  Mat xhat(a->rows(), d);
  Eigen::VectorXd inv_std(a->rows());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    const double mu = a->value.row(r).mean();
    const double var =
        (a->value.row(r).array() - mu).square().sum() / static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (a->value.row(r).array() - mu) * is;
  }
  Mat y = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
          bias->value.row(0).array();
  Var out = a->tape->alloc(std::move(y));
  if (a->tape->recording()) {
    auto xhat_p = std::make_shared<Mat>(std::move(xhat));
    auto is_p = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
    out->backprop = [a, gain, bias, xhat_p, is_p, d](Node& self) {
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        Eigen::RowVectorXd dxhat =
            self.grad.row(r).cwiseProduct(gain->value.row(0));
        const double m1 = dxhat.mean();
        const double m2 =
            dxhat.cwiseProduct(xhat_p->row(r)).sum() / static_cast<double>(d);
        a->grad.row(r).array() +=
            (*is_p)(r) *
            (dxhat.array() - m1 - xhat_p->row(r).array() * m2);
      }
      gain->grad.row(0) +=
          (self.grad.array() * xhat_p->array()).colwise().sum().matrix();
      bias->grad.row(0) += self.grad.colwise().sum();
    };
  }
  return out;
}

Var l2_normalize_rows(Var a, double tiny) {
  Eigen::VectorXd norms = a->value.rowwise().norm();
  if ((norms.array() < tiny).any())
    throw std::domain_error("l2_normalize_rows: zero-norm row");
  Mat v = a->value.array().colwise() / norms.array();
  Var out = a->tape->alloc(std::move(v));
  if (a->tape->recording()) {
    auto norms_p = std::make_shared<Eigen::VectorXd>(std::move(norms));
    out->backprop = [a, norms_p](Node& self) {
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        const double dot = self.grad.row(r).dot(self.value.row(r));
        a->grad.row(r) +=
            (self.grad.row(r) - dot * self.value.row(r)) / (*norms_p)(r);
      }
    };
  }
  return out;
}

Var embedding(Tape& tape, Tensor& table, const std::vector<int>& ids) {
  Mat v(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table.value.rows())
      throw std::out_of_range("embedding: id out of range");
    v.row(static_cast<Eigen::Index>(k)) = table.value.row(ids[k]);
  }
  Var out = tape.alloc(std::move(v));
  if (tape.recording() && table.trainable) {
    Tensor* tp = &table;
    std::vector<int> ix = ids;
    out->backprop = [tp, ix](Node& self) {
      for (std::size_t k = 0; k < ix.size(); ++k)
        tp->grad.row(ix[k]) += self.grad.row(static_cast<Eigen::Index>(k));
    };
  }
  return out;
}

}  // namespace dsdn::ad
