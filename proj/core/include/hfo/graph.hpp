#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Tape of eagerly evaluated ops. Creation order is topological, so backward
// walks the nodes once in reverse. One graph per training step.
class Graph {
 public:
  Var value(Tensor t);                        // constant leaf
  Var input(Tensor t, bool requires_grad);    // leaf, optionally differentiable

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var matmul(Var a, Var b);
  // x:(n,in) w:(in,out) b:(out) -> (n,out)
  Var linear(Var x, Var w, Var b);
  // x:(N,C,H,W) w:(O,C,kh,kw) b:(O)
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  // x:(N,I,H,W) w:(I,O,kh,kw) b:(O); out spatial = (in-1)*stride - 2*pad + k
  Var tconv2d(Var x, Var w, Var b, int stride, int pad);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var clamp(Var a, double lo, double hi);
  Var sum(Var a);   // scalar
  Var mean(Var a);  // scalar
  Var reshape(Var a, std::vector<std::size_t> shape);

  const Tensor& val(Var v) const;
  // Zero tensor until backward touches the node.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const;

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
  // requires_grad node reachable from the loss.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf, kAdd, kSub, kMul, kScale, kAddScalar, kMatmul, kLinear, kConv2d,
    kTConv2d, kRelu, kSigmoid, kTanh, kExp, kLog, kClamp, kSum, kMean, kReshape
  };

  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1, c = -1;
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    double s0 = 0.0, s1 = 0.0;  // op scalars (scale factor, clamp bounds)
    int stride = 1, pad = 0;
  };

  int push(Node n, const char* name);
  Node& at(Var v);
  const Node& at(Var v) const;
  Tensor& grad_buf(int idx);

  void backward_into(Node& node);

  std::vector<Node> nodes_;
};

const char* op_name(int op_kind);

}  // namespace hfo
