#include "hfo/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hfo/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hfo {

namespace {

const char* kOpNames[] = {"leaf",   "add",  "sub",  "mul",   "scale", "add_scalar", "matmul",
                          "linear", "conv2d", "tconv2d", "relu", "sigmoid", "tanh", "exp",
                          "log",    "clamp", "sum",  "mean",  "reshape"};

template <class F>
void par_for(std::size_t n, F&& f) {
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 8192)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    f(static_cast<std::size_t>(i));
  }
}

// Serial kernels used per image inside batch-parallel conv loops.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::memset(ci, 0, n * sizeof(double));
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

// C(M,N) = A^T B with A (K,M), B (K,N)
void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* ak = a + kk * m;
    const double* bk = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ak[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

// C(M,N) += A B^T with A (M,K), B (N,K)
void gemm_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

struct ConvDims {
  std::size_t in_c, in_h, in_w, kh, kw, out_h, out_w;
  int stride, pad;
};

// cols[(c*kh+ki)*kw+kj][y*out_w+x] = src[c][y*s+ki-p][x*s+kj-p], 0 outside.
void im2col(const double* src, const ConvDims& d, double* cols) {
  const std::size_t patch = d.kh * d.kw;
  const std::size_t m = d.out_h * d.out_w;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        double* row = cols + ((c * d.kh + ki) * d.kw + kj) * m;
        for (std::size_t y = 0; y < d.out_h; ++y) {
          const long iy = long(y) * d.stride + long(ki) - d.pad;
          double* out_row = row + y * d.out_w;
          if (iy < 0 || iy >= long(d.in_h)) {
            std::memset(out_row, 0, d.out_w * sizeof(double));
            continue;
          }
          const double* src_row = src + (c * d.in_h + std::size_t(iy)) * d.in_w;
          for (std::size_t x = 0; x < d.out_w; ++x) {
            const long ix = long(x) * d.stride + long(kj) - d.pad;
            out_row[x] = (ix < 0 || ix >= long(d.in_w)) ? 0.0 : src_row[std::size_t(ix)];
          }
        }
      }
    }
  }
  (void)patch;
}

// Scatter-add inverse of im2col.
void col2im_add(const double* cols, const ConvDims& d, double* dst) {
  const std::size_t m = d.out_h * d.out_w;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const double* row = cols + ((c * d.kh + ki) * d.kw + kj) * m;
        for (std::size_t y = 0; y < d.out_h; ++y) {
          const long iy = long(y) * d.stride + long(ki) - d.pad;
          if (iy < 0 || iy >= long(d.in_h)) continue;
          double* dst_row = dst + (c * d.in_h + std::size_t(iy)) * d.in_w;
          const double* src_row = row + y * d.out_w;
          for (std::size_t x = 0; x < d.out_w; ++x) {
            const long ix = long(x) * d.stride + long(kj) - d.pad;
            if (ix < 0 || ix >= long(d.in_w)) continue;
            dst_row[std::size_t(ix)] += src_row[x];
          }
        }
      }
    }
  }
}

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

}  // namespace

const char* op_name(int op_kind) { return kOpNames[op_kind]; }

Graph::Node& Graph::at(Var v) {
  if (!v.valid() || std::size_t(v.idx) >= nodes_.size()) {
    throw ValidationError("graph: invalid var handle");
  }
  return nodes_[std::size_t(v.idx)];
}

const Graph::Node& Graph::at(Var v) const {
  if (!v.valid() || std::size_t(v.idx) >= nodes_.size()) {
    throw ValidationError("graph: invalid var handle");
  }
  return nodes_[std::size_t(v.idx)];
}

int Graph::push(Node n, const char* name) {
  if (!n.val.all_finite()) {
    throw PipelineError(std::string("non-finite value after op ") + name + " at node " +
                        std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Var Graph::value(Tensor t) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(t);
  return {push(std::move(n), "value")};
}

Var Graph::input(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(t);
  n.requires_grad = requires_grad;
  return {push(std::move(n), "input")};
}

const Tensor& Graph::val(Var v) const { return at(v).val; }

bool Graph::requires_grad(Var v) const { return at(v).requires_grad; }

Tensor& Graph::grad_buf(int idx) {
  Node& n = nodes_[std::size_t(idx)];
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.val.shape());
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) {
  at(v);
  return grad_buf(v.idx);
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
  }
}

Var Graph::add(Var a, Var b) {
  const Tensor& va = at(a).val;
  const Tensor& vb = at(b).val;
  require_same_shape(va, vb, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  const double* pb = vb.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] + pb[i]; });
  return {push(std::move(n), "add")};
}

Var Graph::sub(Var a, Var b) {
  const Tensor& va = at(a).val;
  const Tensor& vb = at(b).val;
  require_same_shape(va, vb, "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  const double* pb = vb.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] - pb[i]; });
  return {push(std::move(n), "sub")};
}

Var Graph::mul(Var a, Var b) {
  const Tensor& va = at(a).val;
  const Tensor& vb = at(b).val;
  require_same_shape(va, vb, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  const double* pb = vb.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] * pb[i]; });
  return {push(std::move(n), "mul")};
}

Var Graph::scale(Var a, double s) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kScale;
  n.a = a.idx;
  n.s0 = s;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] * s; });
  return {push(std::move(n), "scale")};
}

Var Graph::add_scalar(Var a, double s) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kAddScalar;
  n.a = a.idx;
  n.s0 = s;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] + s; });
  return {push(std::move(n), "add_scalar")};
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& va = at(a).val;
  const Tensor& vb = at(b).val;
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw ValidationError("matmul: incompatible shapes " + va.shape_str() + " x " +
                          vb.shape_str());
  }
  Node n;
  n.op = Op::kMatmul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros({va.dim(0), vb.dim(1)});
  hfo::matmul(va.data(), vb.data(), n.val.data(), va.dim(0), va.dim(1), vb.dim(1));
  return {push(std::move(n), "matmul")};
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& vx = at(x).val;
  const Tensor& vw = at(w).val;
  const Tensor& vb = at(b).val;
  if (vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1 || vx.dim(1) != vw.dim(0) ||
      vw.dim(1) != vb.dim(0)) {
    throw ValidationError("linear: incompatible shapes " + vx.shape_str() + ", " +
                          vw.shape_str() + ", " + vb.shape_str());
  }
  Node n;
  n.op = Op::kLinear;
  n.a = x.idx;
  n.b = w.idx;
  n.c = b.idx;
  n.requires_grad = at(x).requires_grad || at(w).requires_grad || at(b).requires_grad;
  const std::size_t rows = vx.dim(0), out = vw.dim(1);
  n.val = Tensor::zeros({rows, out});
  hfo::matmul(vx.data(), vw.data(), n.val.data(), rows, vx.dim(1), out);
  double* po = n.val.data();
  const double* pb = vb.data();
  par_for(rows * out, [&](std::size_t i) { po[i] += pb[i % out]; });
  return {push(std::move(n), "linear")};
}

static ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad,
                          const char* op) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ValidationError(std::string(op) + ": expects 4-d input and kernel");
  }
  if (stride < 1 || pad < 0) throw ValidationError(std::string(op) + ": bad stride/pad");
  ConvDims d;
  d.in_c = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  const long oh = (long(d.in_h) + 2L * pad - long(d.kh)) / stride + 1;
  const long ow = (long(d.in_w) + 2L * pad - long(d.kw)) / stride + 1;
  if (oh < 1 || ow < 1) throw ValidationError(std::string(op) + ": kernel larger than input");
  d.out_h = std::size_t(oh);
  d.out_w = std::size_t(ow);
  return d;
}

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& vx = at(x).val;
  const Tensor& vw = at(w).val;
  const Tensor& vb = at(b).val;
  ConvDims d = conv_dims(vx, vw, stride, pad, "conv2d");
  if (vw.dim(1) != d.in_c) {
    throw ValidationError("conv2d: kernel channels " + vw.shape_str() + " vs input " +
                          vx.shape_str());
  }
  if (vb.rank() != 1 || vb.dim(0) != vw.dim(0)) {
    throw ValidationError("conv2d: bias shape " + vb.shape_str());
  }
  const std::size_t batch = vx.dim(0), out_c = vw.dim(0);
  const std::size_t k = d.in_c * d.kh * d.kw;
  const std::size_t m = d.out_h * d.out_w;

  Node n;
  n.op = Op::kConv2d;
  n.a = x.idx;
  n.b = w.idx;
  n.c = b.idx;
  n.stride = stride;
  n.pad = pad;
  n.requires_grad = at(x).requires_grad || at(w).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros({batch, out_c, d.out_h, d.out_w});

  const double* px = vx.data();
  const double* pw = vw.data();
  const double* pb = vb.data();
  double* po = n.val.data();
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && batch > 1)
#endif
  for (std::ptrdiff_t img = 0; img < static_cast<std::ptrdiff_t>(batch); ++img) {
    std::vector<double> cols(k * m);
    im2col(px + std::size_t(img) * d.in_c * d.in_h * d.in_w, d, cols.data());
    double* out = po + std::size_t(img) * out_c * m;
    gemm(pw, cols.data(), out, out_c, k, m, false);
    for (std::size_t o = 0; o < out_c; ++o) {
      const double bias = pb[o];
      double* row = out + o * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += bias;
    }
  }
  return {push(std::move(n), "conv2d")};
}

Var Graph::tconv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& vx = at(x).val;
  const Tensor& vw = at(w).val;
  const Tensor& vb = at(b).val;
  if (vx.rank() != 4 || vw.rank() != 4) {
    throw ValidationError("tconv2d: expects 4-d input and kernel");
  }
  if (vw.dim(0) != vx.dim(1)) {
    throw ValidationError("tconv2d: kernel in-channels " + vw.shape_str() + " vs input " +
                          vx.shape_str());
  }
  const std::size_t out_c = vw.dim(1);
  if (vb.rank() != 1 || vb.dim(0) != out_c) {
    throw ValidationError("tconv2d: bias shape " + vb.shape_str());
  }
  if (stride < 1 || pad < 0) throw ValidationError("tconv2d: bad stride/pad");
  const std::size_t batch = vx.dim(0), in_c = vx.dim(1), h = vx.dim(2), w_in = vx.dim(3);
  const long oh = (long(h) - 1) * stride - 2L * pad + long(vw.dim(2));
  const long ow = (long(w_in) - 1) * stride - 2L * pad + long(vw.dim(3));
  if (oh < 1 || ow < 1) throw ValidationError("tconv2d: empty output");

  // The output plays the conv-input role in the im2col mapping.
  ConvDims d;
  d.in_c = out_c;
  d.in_h = std::size_t(oh);
  d.in_w = std::size_t(ow);
  d.kh = vw.dim(2);
  d.kw = vw.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.out_h = h;
  d.out_w = w_in;

  const std::size_t kp = out_c * d.kh * d.kw;
  const std::size_t m = h * w_in;

  Node n;
  n.op = Op::kTConv2d;
  n.a = x.idx;
  n.b = w.idx;
  n.c = b.idx;
  n.stride = stride;
  n.pad = pad;
  n.requires_grad = at(x).requires_grad || at(w).requires_grad || at(b).requires_grad;
  n.val = Tensor::zeros({batch, out_c, d.in_h, d.in_w});

  const double* px = vx.data();
  const double* pw = vw.data();  // viewed as (in_c, kp)
  const double* pb = vb.data();
  double* po = n.val.data();
  const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && batch > 1)
#endif
  for (std::ptrdiff_t img = 0; img < static_cast<std::ptrdiff_t>(batch); ++img) {
    std::vector<double> cols(kp * m);
    gemm_at_b(pw, px + std::size_t(img) * in_c * m, cols.data(), kp, in_c, m);
    double* out = po + std::size_t(img) * out_c * d.in_h * d.in_w;
    col2im_add(cols.data(), d, out);
    for (std::size_t o = 0; o < out_c; ++o) {
      const double bias = pb[o];
      double* plane = out + o * d.in_h * d.in_w;
      for (std::size_t j = 0; j < d.in_h * d.in_w; ++j) plane[j] += bias;
    }
  }
  return {push(std::move(n), "tconv2d")};
}

Var Graph::relu(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kRelu;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = pa[i] > 0.0 ? pa[i] : 0.0; });
  return {push(std::move(n), "relu")};
}

Var Graph::sigmoid(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kSigmoid;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = 1.0 / (1.0 + std::exp(-pa[i])); });
  return {push(std::move(n), "sigmoid")};
}

Var Graph::tanh_(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kTanh;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = std::tanh(pa[i]); });
  return {push(std::move(n), "tanh")};
}

Var Graph::exp_(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kExp;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = std::exp(pa[i]); });
  return {push(std::move(n), "exp")};
}

Var Graph::log_(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kLog;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = std::log(pa[i]); });
  return {push(std::move(n), "log")};
}

Var Graph::clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo > hi");
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kClamp;
  n.a = a.idx;
  n.s0 = lo;
  n.s1 = hi;
  n.requires_grad = at(a).requires_grad;
  n.val = Tensor::zeros(va.shape());
  const double* pa = va.data();
  double* po = n.val.data();
  par_for(va.size(), [&](std::size_t i) { po[i] = std::clamp(pa[i], lo, hi); });
  return {push(std::move(n), "clamp")};
}

Var Graph::sum(Var a) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kSum;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
  n.val = Tensor::scalar(acc);
  return {push(std::move(n), "sum")};
}

Var Graph::mean(Var a) {
  const Tensor& va = at(a).val;
  if (va.size() == 0) throw ValidationError("mean of empty tensor");
  Node n;
  n.op = Op::kMean;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
  n.val = Tensor::scalar(acc / double(va.size()));
  return {push(std::move(n), "mean")};
}

Var Graph::reshape(Var a, std::vector<std::size_t> shape) {
  const Tensor& va = at(a).val;
  Node n;
  n.op = Op::kReshape;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  n.val = va.reshaped(std::move(shape));
  return {push(std::move(n), "reshape")};
}

void Graph::backward(Var loss) {
  Node& top = at(loss);
  if (top.val.size() != 1) throw ValidationError("backward: loss must be scalar");
  if (!top.requires_grad) {
    throw ValidationError("backward: loss does not depend on any differentiable leaf");
  }
  grad_buf(loss.idx)[0] += 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (!n.requires_grad || !n.grad_alloc || n.op == Op::kLeaf) continue;
    backward_into(n);
  }
}

void Graph::backward_into(Node& node) {
  const Tensor& g = node.grad;
  auto want = [&](int idx) { return idx >= 0 && nodes_[std::size_t(idx)].requires_grad; };

  switch (node.op) {
    case Op::kAdd: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i]; });
      }
      if (want(node.b)) {
        Tensor& gb = grad_buf(node.b);
        const double* pg = g.data();
        double* pb = gb.data();
        par_for(g.size(), [&](std::size_t i) { pb[i] += pg[i]; });
      }
      break;
    }
    case Op::kSub: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i]; });
      }
      if (want(node.b)) {
        Tensor& gb = grad_buf(node.b);
        const double* pg = g.data();
        double* pb = gb.data();
        par_for(g.size(), [&](std::size_t i) { pb[i] -= pg[i]; });
      }
      break;
    }
    case Op::kMul: {
      const Tensor& va = nodes_[std::size_t(node.a)].val;
      const Tensor& vb = nodes_[std::size_t(node.b)].val;
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = vb.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] * pv[i]; });
      }
      if (want(node.b)) {
        Tensor& gb = grad_buf(node.b);
        const double* pg = g.data();
        const double* pv = va.data();
        double* pb = gb.data();
        par_for(g.size(), [&](std::size_t i) { pb[i] += pg[i] * pv[i]; });
      }
      break;
    }
    case Op::kScale: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double s = node.s0;
        const double* pg = g.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] * s; });
      }
      break;
    }
    case Op::kAddScalar: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i]; });
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor& va = nodes_[std::size_t(node.a)].val;
      const Tensor& vb = nodes_[std::size_t(node.b)].val;
      const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
      if (want(node.a)) {
        matmul_a_bt_acc(g.data(), vb.data(), grad_buf(node.a).data(), m, n, k);
      }
      if (want(node.b)) {
        matmul_at_b_acc(va.data(), g.data(), grad_buf(node.b).data(), k, m, n);
      }
      break;
    }
    case Op::kLinear: {
      const Tensor& vx = nodes_[std::size_t(node.a)].val;
      const Tensor& vw = nodes_[std::size_t(node.b)].val;
      const std::size_t rows = vx.dim(0), in = vx.dim(1), out = vw.dim(1);
      if (want(node.a)) {
        matmul_a_bt_acc(g.data(), vw.data(), grad_buf(node.a).data(), rows, out, in);
      }
      if (want(node.b)) {
        matmul_at_b_acc(vx.data(), g.data(), grad_buf(node.b).data(), in, rows, out);
      }
      if (want(node.c)) {
        Tensor& gb = grad_buf(node.c);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* pg = g.data() + r * out;
          for (std::size_t j = 0; j < out; ++j) gb[j] += pg[j];
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& vx = nodes_[std::size_t(node.a)].val;
      const Tensor& vw = nodes_[std::size_t(node.b)].val;
      ConvDims d = conv_dims(vx, vw, node.stride, node.pad, "conv2d");
      const std::size_t batch = vx.dim(0), out_c = vw.dim(0);
      const std::size_t k = d.in_c * d.kh * d.kw;
      const std::size_t m = d.out_h * d.out_w;
      const bool wx = want(node.a), ww = want(node.b), wb = want(node.c);
      double* pdx = wx ? grad_buf(node.a).data() : nullptr;
      const double* pw = vw.data();
      const double* px = vx.data();
      const double* pg = g.data();

      const int threads = num_threads();
      const int nt = (threads > 1 && batch > 1) ? threads : 1;
      std::vector<std::vector<double>> wparts, bparts;
      if (ww) wparts.assign(std::size_t(nt), std::vector<double>(out_c * k, 0.0));
      if (wb) bparts.assign(std::size_t(nt), std::vector<double>(out_c, 0.0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
      for (std::ptrdiff_t img = 0; img < static_cast<std::ptrdiff_t>(batch); ++img) {
        const int tid = thread_id();
        const double* gimg = pg + std::size_t(img) * out_c * m;
        std::vector<double> cols(k * m);
        if (wx || ww) im2col(px + std::size_t(img) * d.in_c * d.in_h * d.in_w, d, cols.data());
        if (ww) {
          gemm_a_bt_acc(gimg, cols.data(), wparts[std::size_t(tid)].data(), out_c, m, k);
        }
        if (wb) {
          double* bp = bparts[std::size_t(tid)].data();
          for (std::size_t o = 0; o < out_c; ++o) {
            const double* row = gimg + o * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += row[j];
            bp[o] += acc;
          }
        }
        if (wx) {
          std::vector<double> dcols(k * m);
          gemm_at_b(pw, gimg, dcols.data(), k, out_c, m);
          col2im_add(dcols.data(), d, pdx + std::size_t(img) * d.in_c * d.in_h * d.in_w);
        }
      }
      if (ww) {
        Tensor& gw = grad_buf(node.b);
        for (int t = 0; t < nt; ++t) {
          const double* part = wparts[std::size_t(t)].data();
          for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += part[i];
        }
      }
      if (wb) {
        Tensor& gb = grad_buf(node.c);
        for (int t = 0; t < nt; ++t) {
          const double* part = bparts[std::size_t(t)].data();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += part[i];
        }
      }
      break;
    }
    case Op::kTConv2d: {
      const Tensor& vx = nodes_[std::size_t(node.a)].val;
      const Tensor& vw = nodes_[std::size_t(node.b)].val;
      const std::size_t batch = vx.dim(0), in_c = vx.dim(1), h = vx.dim(2), w_in = vx.dim(3);
      const std::size_t out_c = vw.dim(1);
      ConvDims d;
      d.in_c = out_c;
      d.in_h = node.val.dim(2);
      d.in_w = node.val.dim(3);
      d.kh = vw.dim(2);
      d.kw = vw.dim(3);
      d.stride = node.stride;
      d.pad = node.pad;
      d.out_h = h;
      d.out_w = w_in;
      const std::size_t kp = out_c * d.kh * d.kw;
      const std::size_t m = h * w_in;
      const bool wx = want(node.a), ww = want(node.b), wb = want(node.c);
      double* pdx = wx ? grad_buf(node.a).data() : nullptr;
      const double* pw = vw.data();
      const double* px = vx.data();
      const double* pg = g.data();

      const int threads = num_threads();
      const int nt = (threads > 1 && batch > 1) ? threads : 1;
      std::vector<std::vector<double>> wparts, bparts;
      if (ww) wparts.assign(std::size_t(nt), std::vector<double>(in_c * kp, 0.0));
      if (wb) bparts.assign(std::size_t(nt), std::vector<double>(out_c, 0.0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
      for (std::ptrdiff_t img = 0; img < static_cast<std::ptrdiff_t>(batch); ++img) {
        const int tid = thread_id();
        const double* gimg = pg + std::size_t(img) * out_c * d.in_h * d.in_w;
        std::vector<double> dcols(kp * m);
        im2col(gimg, d, dcols.data());
        if (wx) {
          gemm(pw, dcols.data(), pdx + std::size_t(img) * in_c * m, in_c, kp, m, true);
        }
        if (ww) {
          gemm_a_bt_acc(px + std::size_t(img) * in_c * m, dcols.data(),
                        wparts[std::size_t(tid)].data(), in_c, m, kp);
        }
        if (wb) {
          double* bp = bparts[std::size_t(tid)].data();
          for (std::size_t o = 0; o < out_c; ++o) {
            const double* plane = gimg + o * d.in_h * d.in_w;
            double acc = 0.0;
            for (std::size_t j = 0; j < d.in_h * d.in_w; ++j) acc += plane[j];
            bp[o] += acc;
          }
        }
      }
      if (ww) {
        Tensor& gw = grad_buf(node.b);
        for (int t = 0; t < nt; ++t) {
          const double* part = wparts[std::size_t(t)].data();
          for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += part[i];
        }
      }
      if (wb) {
        Tensor& gb = grad_buf(node.c);
        for (int t = 0; t < nt; ++t) {
          const double* part = bparts[std::size_t(t)].data();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += part[i];
        }
      }
      break;
    }
    case Op::kRelu: {
      if (want(node.a)) {
        const Tensor& va = nodes_[std::size_t(node.a)].val;
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = va.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pv[i] > 0.0 ? pg[i] : 0.0; });
      }
      break;
    }
    case Op::kSigmoid: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = node.val.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] * pv[i] * (1.0 - pv[i]); });
      }
      break;
    }
    case Op::kTanh: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = node.val.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] * (1.0 - pv[i] * pv[i]); });
      }
      break;
    }
    case Op::kExp: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = node.val.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] * pv[i]; });
      }
      break;
    }
    case Op::kLog: {
      if (want(node.a)) {
        const Tensor& va = nodes_[std::size_t(node.a)].val;
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        const double* pv = va.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i] / pv[i]; });
      }
      break;
    }
    case Op::kClamp: {
      if (want(node.a)) {
        const Tensor& va = nodes_[std::size_t(node.a)].val;
        Tensor& ga = grad_buf(node.a);
        const double lo = node.s0, hi = node.s1;
        const double* pg = g.data();
        const double* pv = va.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) {
          if (pv[i] > lo && pv[i] < hi) pa[i] += pg[i];
        });
      }
      break;
    }
    case Op::kSum: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double gv = g[0];
        double* pa = ga.data();
        par_for(ga.size(), [&](std::size_t i) { pa[i] += gv; });
      }
      break;
    }
    case Op::kMean: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double gv = g[0] / double(ga.size());
        double* pa = ga.data();
        par_for(ga.size(), [&](std::size_t i) { pa[i] += gv; });
      }
      break;
    }
    case Op::kReshape: {
      if (want(node.a)) {
        Tensor& ga = grad_buf(node.a);
        const double* pg = g.data();
        double* pa = ga.data();
        par_for(g.size(), [&](std::size_t i) { pa[i] += pg[i]; });
      }
      break;
    }
    case Op::kLeaf:
      break;
  }
}

}  // namespace hfo
