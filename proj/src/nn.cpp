#include "medcode/nn.hpp"

#include <cassert>
#include <cmath>

namespace medcode::nn {

Var Tape::push(Mat value, std::function<void(Tape&, const Node&)> back) {
  Node n;
  n.grad = Mat(value.rows, value.cols);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

Var Tape::leaf(Mat value) { return push(std::move(value)); }

Var Tape::param(Param* p) {
  Var v = push(p->value);
  nodes_[size_t(v)].bound = p;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  assert(A.cols == B.rows);
  Mat C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int k = 0; k < A.cols; ++k) {
      const double aik = A(i, k);
      if (aik == 0.0) continue;
      const double* brow = &B.a[size_t(k) * size_t(B.cols)];
      double* crow = &C.a[size_t(i) * size_t(C.cols)];
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return push(std::move(C), [a, b](Tape& t, const Node& self) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    Mat& dA = t.grad_mut(a);
    Mat& dB = t.grad_mut(b);
    const Mat& dC = self.grad;
    // dA += dC * B^T
    for (int i = 0; i < A.rows; ++i)
      for (int k = 0; k < A.cols; ++k) {
        const double* brow = &B.a[size_t(k) * size_t(B.cols)];
        const double* grow = &dC.a[size_t(i) * size_t(dC.cols)];
        double acc = 0;
        for (int j = 0; j < B.cols; ++j) acc += grow[j] * brow[j];
        dA(i, k) += acc;
      }
    // dB += A^T * dC
    for (int k = 0; k < A.cols; ++k)
      for (int i = 0; i < A.rows; ++i) {
        const double aik = A(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < B.cols; ++j) dB(k, j) += aik * dC(i, j);
      }
  });
}

Var Tape::add(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  assert(A.rows == B.rows && A.cols == B.cols);
  Mat C = A;
  for (size_t i = 0; i < C.size(); ++i) C.a[i] += B.a[i];
  return push(std::move(C), [a, b](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    Mat& dB = t.grad_mut(b);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      dA.a[i] += self.grad.a[i];
      dB.a[i] += self.grad.a[i];
    }
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  assert(R.rows == 1 && R.cols == A.cols);
  Mat C = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C(i, j) += R(0, j);
  return push(std::move(C), [a, row](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    Mat& dR = t.grad_mut(row);
    for (int i = 0; i < self.grad.rows; ++i)
      for (int j = 0; j < self.grad.cols; ++j) {
        dA(i, j) += self.grad(i, j);
        dR(0, j) += self.grad(i, j);
      }
  });
}

Var Tape::hadamard(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  assert(A.rows == B.rows && A.cols == B.cols);
  Mat C = A;
  for (size_t i = 0; i < C.size(); ++i) C.a[i] *= B.a[i];
  return push(std::move(C), [a, b](Tape& t, const Node& self) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    Mat& dA = t.grad_mut(a);
    Mat& dB = t.grad_mut(b);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      dA.a[i] += self.grad.a[i] * B.a[i];
      dB.a[i] += self.grad.a[i] * A.a[i];
    }
  });
}

Var Tape::scale(Var a, double s) {
  Mat C = val(a);
  for (double& v : C.a) v *= s;
  return push(std::move(C), [a, s](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (size_t i = 0; i < self.grad.size(); ++i) dA.a[i] += s * self.grad.a[i];
  });
}

Var Tape::sigmoid(Var a) {
  Mat C = val(a);
  for (double& v : C.a) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(C), [a](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value.a[i];
      dA.a[i] += self.grad.a[i] * y * (1.0 - y);
    }
  });
}

Var Tape::tanh(Var a) {
  Mat C = val(a);
  for (double& v : C.a) v = std::tanh(v);
  return push(std::move(C), [a](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value.a[i];
      dA.a[i] += self.grad.a[i] * (1.0 - y * y);
    }
  });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Mat& A = val(a);
  assert(0 <= c0 && c0 < c1 && c1 <= A.cols);
  Mat C(A.rows, c1 - c0);
  for (int i = 0; i < A.rows; ++i)
    for (int j = c0; j < c1; ++j) C(i, j - c0) = A(i, j);
  return push(std::move(C), [a, c0](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (int i = 0; i < self.grad.rows; ++i)
      for (int j = 0; j < self.grad.cols; ++j) dA(i, c0 + j) += self.grad(i, j);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  assert(!parts.empty());
  const int rows = val(parts[0]).rows;
  int cols = 0;
  for (Var p : parts) {
    assert(val(p).rows == rows);
    cols += val(p).cols;
  }
  Mat C(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Mat& P = val(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < P.cols; ++j) C(i, off + j) = P(i, j);
    off += P.cols;
  }
  return push(std::move(C), [parts](Tape& t, const Node& self) {
    int off = 0;
    for (Var p : parts) {
      Mat& dP = t.grad_mut(p);
      for (int i = 0; i < dP.rows; ++i)
        for (int j = 0; j < dP.cols; ++j) dP(i, j) += self.grad(i, off + j);
      off += dP.cols;
    }
  });
}

Var Tape::row(Var a, int r) {
  const Mat& A = val(a);
  assert(0 <= r && r < A.rows);
  Mat C(1, A.cols);
  for (int j = 0; j < A.cols; ++j) C(0, j) = A(r, j);
  return push(std::move(C), [a, r](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (int j = 0; j < self.grad.cols; ++j) dA(r, j) += self.grad(0, j);
  });
}

Var Tape::vstack(const std::vector<Var>& rows) {
  assert(!rows.empty());
  const int cols = val(rows[0]).cols;
  Mat C(int(rows.size()), cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    const Mat& R = val(rows[i]);
    assert(R.rows == 1 && R.cols == cols);
    for (int j = 0; j < cols; ++j) C(int(i), j) = R(0, j);
  }
  return push(std::move(C), [rows](Tape& t, const Node& self) {
    for (size_t i = 0; i < rows.size(); ++i) {
      Mat& dR = t.grad_mut(rows[i]);
      for (int j = 0; j < self.grad.cols; ++j) dR(0, j) += self.grad(int(i), j);
    }
  });
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Mat& T = val(table);
  Mat C(int(ids.size()), T.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    assert(ids[i] >= 0 && ids[i] < T.rows);
    for (int j = 0; j < T.cols; ++j) C(int(i), j) = T(ids[i], j);
  }
  return push(std::move(C), [table, ids = std::move(ids)](Tape& t, const Node& self) {
    Mat& dT = t.grad_mut(table);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < self.grad.cols; ++j) dT(ids[i], j) += self.grad(int(i), j);
  });
}

Var Tape::mean_rows(Var a) {
  const Mat& A = val(a);
  Mat C(1, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C(0, j) += A(i, j);
  for (int j = 0; j < A.cols; ++j) C(0, j) /= double(A.rows);
  const int rows = A.rows;
  return push(std::move(C), [a, rows](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < self.grad.cols; ++j) dA(i, j) += self.grad(0, j) / double(rows);
  });
}

Var Tape::matvec_rows(Var h, Var q) {
  const Mat& H = val(h);
  const Mat& Q = val(q);
  assert(Q.rows == 1 && Q.cols == H.cols);
  Mat C(H.rows, 1);
  for (int i = 0; i < H.rows; ++i) {
    double s = 0;
    for (int j = 0; j < H.cols; ++j) s += H(i, j) * Q(0, j);
    C(i, 0) = s;
  }
  return push(std::move(C), [h, q](Tape& t, const Node& self) {
    const Mat& H = t.val(h);
    const Mat& Q = t.val(q);
    Mat& dH = t.grad_mut(h);
    Mat& dQ = t.grad_mut(q);
    for (int i = 0; i < H.rows; ++i) {
      const double g = self.grad(i, 0);
      if (g == 0.0) continue;
      for (int j = 0; j < H.cols; ++j) {
        dH(i, j) += g * Q(0, j);
        dQ(0, j) += g * H(i, j);
      }
    }
  });
}

Var Tape::softmax_col(Var a) {
  const Mat& A = val(a);
  assert(A.cols == 1);
  Mat C(A.rows, 1);
  double mx = A(0, 0);
  for (int i = 1; i < A.rows; ++i) mx = std::max(mx, A(i, 0));
  double z = 0;
  for (int i = 0; i < A.rows; ++i) {
    C(i, 0) = std::exp(A(i, 0) - mx);
    z += C(i, 0);
  }
  for (int i = 0; i < A.rows; ++i) C(i, 0) /= z;
  return push(std::move(C), [a](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    const Mat& y = self.value;
    double dot = 0;
    for (int i = 0; i < y.rows; ++i) dot += self.grad(i, 0) * y(i, 0);
    for (int i = 0; i < y.rows; ++i) dA(i, 0) += y(i, 0) * (self.grad(i, 0) - dot);
  });
}

Var Tape::weighted_rows(Var w, Var h) {
  const Mat& W = val(w);
  const Mat& H = val(h);
  assert(W.cols == 1 && W.rows == H.rows);
  Mat C(1, H.cols);
  for (int i = 0; i < H.rows; ++i)
    for (int j = 0; j < H.cols; ++j) C(0, j) += W(i, 0) * H(i, j);
  return push(std::move(C), [w, h](Tape& t, const Node& self) {
    const Mat& W = t.val(w);
    const Mat& H = t.val(h);
    Mat& dW = t.grad_mut(w);
    Mat& dH = t.grad_mut(h);
    for (int i = 0; i < H.rows; ++i) {
      double acc = 0;
      for (int j = 0; j < H.cols; ++j) {
        acc += self.grad(0, j) * H(i, j);
        dH(i, j) += self.grad(0, j) * W(i, 0);
      }
      dW(i, 0) += acc;
    }
  });
}

Var Tape::max2(Var z) {
  const Mat& Z = val(z);
  assert(Z.rows == 1 && Z.cols == 2);
  // Subgradient goes to the winning coordinate; ties go to the positive one.
  const int arg = Z(0, 1) >= Z(0, 0) ? 1 : 0;
  Mat C(1, 1);
  C(0, 0) = Z(0, arg);
  return push(std::move(C), [z, arg](Tape& t, const Node& self) {
    t.grad_mut(z)(0, arg) += self.grad(0, 0);
  });
}

Var Tape::softmax_ce2(Var z, int target) {
  const Mat& Z = val(z);
  assert(Z.rows == 1 && Z.cols == 2 && (target == 0 || target == 1));
  const double mx = std::max(Z(0, 0), Z(0, 1));
  const double lse = mx + std::log(std::exp(Z(0, 0) - mx) + std::exp(Z(0, 1) - mx));
  Mat C(1, 1);
  C(0, 0) = lse - Z(0, target);
  return push(std::move(C), [z, target](Tape& t, const Node& self) {
    const Mat& Z = t.val(z);
    const double mx = std::max(Z(0, 0), Z(0, 1));
    const double e0 = std::exp(Z(0, 0) - mx);
    const double e1 = std::exp(Z(0, 1) - mx);
    const double p0 = e0 / (e0 + e1);
    const double g = self.grad(0, 0);
    Mat& dZ = t.grad_mut(z);
    dZ(0, 0) += g * (p0 - (target == 0 ? 1.0 : 0.0));
    dZ(0, 1) += g * ((1.0 - p0) - (target == 1 ? 1.0 : 0.0));
  });
}

Var Tape::bce_with_logit(Var z, double target) {
  const Mat& Z = val(z);
  assert(Z.rows == 1 && Z.cols == 1);
  const double x = Z(0, 0);
  // max(x,0) - x*y + log(1+exp(-|x|))
  Mat C(1, 1);
  C(0, 0) = std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::fabs(x)));
  return push(std::move(C), [z, target](Tape& t, const Node& self) {
    const double x = t.val(z)(0, 0);
    const double s = 1.0 / (1.0 + std::exp(-x));
    t.grad_mut(z)(0, 0) += self.grad(0, 0) * (s - target);
  });
}

Var Tape::dot_col(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  assert(A.cols == 1 && B.cols == 1 && A.rows == B.rows);
  Mat C(1, 1);
  for (int i = 0; i < A.rows; ++i) C(0, 0) += A(i, 0) * B(i, 0);
  return push(std::move(C), [a, b](Tape& t, const Node& self) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    Mat& dA = t.grad_mut(a);
    Mat& dB = t.grad_mut(b);
    const double g = self.grad(0, 0);
    for (int i = 0; i < A.rows; ++i) {
      dA(i, 0) += g * B(i, 0);
      dB(i, 0) += g * A(i, 0);
    }
  });
}

Var Tape::sum(const std::vector<Var>& scalars) {
  assert(!scalars.empty());
  Mat C(1, 1);
  for (Var s : scalars) {
    assert(val(s).rows == 1 && val(s).cols == 1);
    C(0, 0) += val(s)(0, 0);
  }
  return push(std::move(C), [scalars](Tape& t, const Node& self) {
    for (Var s : scalars) t.grad_mut(s)(0, 0) += self.grad(0, 0);
  });
}

Var Tape::dropout(Var a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  const Mat& A = val(a);
  Mat mask(A.rows, A.cols);
  const double keep = 1.0 - p;
  for (double& v : mask.a) v = rng.uniform() < p ? 0.0 : 1.0 / keep;
  Mat C = A;
  for (size_t i = 0; i < C.size(); ++i) C.a[i] *= mask.a[i];
  return push(std::move(C), [a, mask = std::move(mask)](Tape& t, const Node& self) {
    Mat& dA = t.grad_mut(a);
    for (size_t i = 0; i < self.grad.size(); ++i) dA.a[i] += self.grad.a[i] * mask.a[i];
  });
}

void Tape::backward(Var loss) {
  Node& top = nodes_[size_t(loss)];
  assert(top.value.rows == 1 && top.value.cols == 1);
  top.grad(0, 0) = 1.0;
  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[size_t(i)];
    if (n.back) n.back(*this, n);
    if (n.bound) {
      for (size_t k = 0; k < n.grad.size(); ++k) n.bound->grad.a[k] += n.grad.a[k];
    }
  }
}

void AdamW::step(const std::vector<Param*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (Param* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.a[i];
      p->adam_m.a[i] = cfg_.beta1 * p->adam_m.a[i] + (1.0 - cfg_.beta1) * g;
      p->adam_v.a[i] = cfg_.beta2 * p->adam_v.a[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = p->adam_m.a[i] / bc1;
      const double vhat = p->adam_v.a[i] / bc2;
      p->value.a[i] -=
          cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->value.a[i]);
    }
    p->zero_grad();
  }
}

void AdamW::clip_grad_norm(const std::vector<Param*>& params, double clip) {
  if (clip <= 0) return;
  double sq = 0;
  for (Param* p : params)
    for (double g : p->grad.a) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= clip || norm == 0.0) return;
  const double s = clip / norm;
  for (Param* p : params)
    for (double& g : p->grad.a) g *= s;
}

void init_uniform(Param& p, Rng& rng, double bound) {
  for (double& v : p.value.a) v = rng.uniform(-bound, bound);
}

}  // namespace medcode::nn
