#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "medcode/util.hpp"

namespace medcode::nn {

// Dense row-major matrix of doubles. Everything in the verifier is small
// enough that plain loops at double precision are both fast enough and easy
// to gradient-check.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}

  double& operator()(int r, int c) { return a[size_t(r) * size_t(cols) + size_t(c)]; }
  double operator()(int r, int c) const { return a[size_t(r) * size_t(cols) + size_t(c)]; }
  size_t size() const { return a.size(); }
  void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

// Trainable tensor with optimizer state.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  Param() = default;
  Param(std::string n, int r, int c)
      : name(std::move(n)), value(r, c), grad(r, c), adam_m(r, c), adam_v(r, c) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;
using Var = int;

// Reverse-mode tape. Build a graph per step with the ops below, call
// backward(loss) once, and gradients land in the bound Params.
class Tape {
 public:
  Var leaf(Mat value);
  Var param(Param* p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);                 // same shape
  Var add_rowvec(Var a, Var row);        // row broadcast over rows of a
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var row(Var a, int r);
  Var vstack(const std::vector<Var>& rows);       // 1 x C rows -> N x C
  Var gather_rows(Var table, std::vector<int> ids);
  Var mean_rows(Var a);                  // 1 x C
  Var matvec_rows(Var h, Var q);         // (T x d, 1 x d) -> T x 1 of row dots
  Var softmax_col(Var a);                // T x 1 -> T x 1
  Var weighted_rows(Var w, Var h);       // (T x 1, T x d) -> 1 x d
  Var max2(Var z);                       // 1 x 2 -> 1 x 1; ties break positive
  Var softmax_ce2(Var z, int target);    // 1 x 2 logits -> scalar CE
  Var bce_with_logit(Var z, double target);  // 1 x 1 logit -> scalar BCE
  Var dot_col(Var a, Var b);             // (T x 1, T x 1) -> scalar
  Var sum(const std::vector<Var>& scalars);
  // Inverted dropout; identity when training is false.
  Var dropout(Var a, double p, Rng& rng, bool training);

  void backward(Var loss);

  const Mat& val(Var v) const { return nodes_[size_t(v)].value; }
  const Mat& grad_of(Var v) const { return nodes_[size_t(v)].grad; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Node&)> back;  // null for leaves
    Param* bound = nullptr;
  };

  Var push(Mat value, std::function<void(Tape&, const Node&)> back = nullptr);
  Mat& grad_mut(Var v) { return nodes_[size_t(v)].grad; }

  std::deque<Node> nodes_;  // stable references across pushes
};

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. step() consumes and clears grads.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(const std::vector<Param*>& params);
  // Global-norm clipping, applied before step when clip > 0.
  static void clip_grad_norm(const std::vector<Param*>& params, double clip);

 private:
  AdamWConfig cfg_;
  long t_ = 0;
};

void init_uniform(Param& p, Rng& rng, double bound);

}  // namespace medcode::nn
