#include "evoqf/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>

#include "evoqf/error.hpp"

namespace evoqf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
ConstMap view(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return ConstMap(d.data(), rows, cols);
}
MutMap view(double* d, std::size_t rows, std::size_t cols) { return MutMap(d, rows, cols); }

Graph& graph_of(Var v) {
  if (!v.graph) fail(ErrorCode::DetachedLoss, "var is not attached to a graph");
  return *v.graph;
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) fail(ErrorCode::DetachedLoss, "inputs belong to different graphs");
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

template <class F, class DF>
Var unary_elementwise(Var x, OpKind kind, F f, DF df_from_xy) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto src = xv.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return graph_of(x).record(kind, {x}, std::move(out), [df_from_xy](const BackwardArgs& a) {
    if (!a.grad_inputs[0]) return;
    auto xs = a.inputs[0]->data();
    auto ys = a.output.data();
    for (std::size_t i = 0; i < xs.size(); ++i) a.grad_inputs[0][i] += a.grad_output[i] * df_from_xy(xs[i], ys[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(matrix_shape(n, m));
  view(out.data().data(), n, m).noalias() = view(av) * view(bv);
  return graph_of(a).record(OpKind::Matmul, {a, b}, std::move(out), [n, k, m](const BackwardArgs& g) {
    auto dc = view(g.grad_output, n, m);
    if (g.grad_inputs[0]) view(g.grad_inputs[0], n, k).noalias() += dc * view(*g.inputs[1]).transpose();
    if (g.grad_inputs[1]) view(g.grad_inputs[1], k, m).noalias() += view(*g.inputs[0]).transpose() * dc;
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    out.set_requires_grad(false);
    out.clear_grad();
    auto dst = out.data();
    auto src = bv.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return graph_of(a).record(OpKind::Add, {a, b}, std::move(out), [](const BackwardArgs& g) {
      for (std::size_t in = 0; in < 2; ++in) {
        if (!g.grad_inputs[in]) continue;
        for (std::size_t i = 0; i < g.grad_output.size(); ++i) g.grad_inputs[in][i] += g.grad_output[i];
      }
    });
  }
  // Bias over rows: b is a length-d vector (or 1 x d) and a is n x d.
  const bool bias_like = bv.rank() == 1 || (bv.rank() == 2 && bv.rows() == 1);
  if (av.rank() != 2 || !bias_like || bv.size() != av.cols()) shape_error("add", av.shape(), bv.shape());
  const std::size_t n = av.rows(), d = av.cols();
  Tensor out(av.shape());
  auto dst = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) dst[r * d + c] = av[r * d + c] + bv[c];
  }
  return graph_of(a).record(OpKind::Add, {a, b}, std::move(out), [n, d](const BackwardArgs& g) {
    if (g.grad_inputs[0]) {
      for (std::size_t i = 0; i < n * d; ++i) g.grad_inputs[0][i] += g.grad_output[i];
    }
    if (g.grad_inputs[1]) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) g.grad_inputs[1][c] += g.grad_output[r * d + c];
      }
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("hadamard", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return graph_of(a).record(OpKind::Hadamard, {a, b}, std::move(out), [](const BackwardArgs& g) {
    const Tensor& x = *g.inputs[0];
    const Tensor& y = *g.inputs[1];
    if (g.grad_inputs[0]) {
      for (std::size_t i = 0; i < x.size(); ++i) g.grad_inputs[0][i] += g.grad_output[i] * y[i];
    }
    if (g.grad_inputs[1]) {
      for (std::size_t i = 0; i < x.size(); ++i) g.grad_inputs[1][i] += g.grad_output[i] * x[i];
    }
  });
}

Var sigmoid(Var x) {
  return unary_elementwise(x, OpKind::Sigmoid, stable_sigmoid,
                           [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var x) {
  return unary_elementwise(
      x, OpKind::Gelu, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = xv.data().data() + r * d;
    double* dst = out.data().data() + r * d;
    const double mx = *std::max_element(src, src + d);
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < d; ++c) dst[c] /= total;
  }
  return graph_of(x).record(OpKind::Softmax, {x}, std::move(out), [n, d](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    auto y = g.output.data();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g.grad_output[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) {
        g.grad_inputs[0][r * d + c] += y[r * d + c] * (g.grad_output[r * d + c] - dot);
      }
    }
  });
}

Var layernorm(Var x, Var gamma, Var beta) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d) shape_error("layernorm gamma", xv.shape(), gamma.shape());
  if (beta.value().size() != d) shape_error("layernorm beta", xv.shape(), beta.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  Tensor out(xv.shape());
  auto normalized = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += src[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (src[c] - mean) * is;
      (*normalized)[r * d + c] = xh;
      out[r * d + c] = xh * gv[c] + bv[c];
    }
  }
  return graph_of(x).record(
      OpKind::LayerNorm, {x, gamma, beta}, std::move(out), [n, d, normalized, inv_std](const BackwardArgs& g) {
        const Tensor& gv = *g.inputs[1];
        const auto& xh = *normalized;
        if (g.grad_inputs[1] || g.grad_inputs[2]) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              const double go = g.grad_output[r * d + c];
              if (g.grad_inputs[1]) g.grad_inputs[1][c] += go * xh[r * d + c];
              if (g.grad_inputs[2]) g.grad_inputs[2][c] += go;
            }
          }
        }
        if (!g.grad_inputs[0]) return;
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxh[c] = g.grad_output[r * d + c] * gv[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += dxh[c] * xh[r * d + c];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            g.grad_inputs[0][r * d + c] += (*inv_std)[r] * (dxh[c] - mean_dxh - xh[r * d + c] * mean_dxh_xh);
          }
        }
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of zero tensors");
  if (axis > 1) fail(ErrorCode::ShapeMismatch, "concat axis must be 0 or 1");
  const Tensor& first = parts[0].value();
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    const Tensor& t = p.value();
    if (axis == 0) {
      if (t.cols() != first.cols()) shape_error("concat(axis=0)", first.shape(), t.shape());
      offsets.push_back(rows);
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) shape_error("concat(axis=1)", first.shape(), t.shape());
      offsets.push_back(cols);
      cols += t.cols();
      rows = t.rows();
    }
  }
  Tensor out(matrix_shape(rows, cols));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    if (axis == 0) {
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + offsets[i] * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(t.data().begin() + r * t.cols(), t.cols(), out.data().begin() + r * cols + offsets[i]);
      }
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return graph_of(parts[0]).record(
      OpKind::Concat, std::move(inputs), std::move(out), [axis, rows, cols, offsets](const BackwardArgs& g) {
        for (std::size_t i = 0; i < g.inputs.size(); ++i) {
          double* dst = g.grad_inputs[i];
          if (!dst) continue;
          const Tensor& t = *g.inputs[i];
          if (axis == 0) {
            const double* src = g.grad_output.data() + offsets[i] * cols;
            for (std::size_t j = 0; j < t.size(); ++j) dst[j] += src[j];
          } else {
            const std::size_t w = t.cols();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < w; ++c) dst[r * w + c] += g.grad_output[r * cols + offsets[i] + c];
            }
          }
        }
      });
}

Var mean_pool(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(matrix_shape(1, d));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[c] += xv[r * d + c];
  }
  for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(n);
  return graph_of(x).record(OpKind::MeanPool, {x}, std::move(out), [n, d](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) g.grad_inputs[0][r * d + c] += g.grad_output[c] * inv;
    }
  });
}

Var linear(Var x, Var weight) {
  require_same_graph(x, weight);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols()) shape_error("linear", xv.shape(), wv.shape());
  const std::size_t n = xv.rows(), in = xv.cols(), outd = wv.rows();
  Tensor out(matrix_shape(n, outd));
  view(out.data().data(), n, outd).noalias() = view(xv) * view(wv).transpose();
  return graph_of(x).record(OpKind::Linear, {x, weight}, std::move(out), [n, in, outd](const BackwardArgs& g) {
    auto dy = view(g.grad_output, n, outd);
    if (g.grad_inputs[0]) view(g.grad_inputs[0], n, in).noalias() += dy * view(*g.inputs[1]);
    if (g.grad_inputs[1]) view(g.grad_inputs[1], outd, in).noalias() += dy.transpose() * view(*g.inputs[0]);
  });
}

Var linear(Var x, Var weight, Var bias) { return add(linear(x, weight), bias); }

Var scale(Var x, double factor) {
  return unary_elementwise(
      x, OpKind::Scale, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  const std::size_t extent = axis == 0 ? n : d;
  if (axis > 1 || begin >= end || end > extent) {
    fail(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                                       std::to_string(axis) + " of " + shape_string(xv.shape()));
  }
  const std::size_t rows = axis == 0 ? end - begin : n;
  const std::size_t cols = axis == 0 ? d : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  Tensor out(matrix_shape(rows, cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[(r + r0) * d + c + c0];
  }
  return graph_of(x).record(OpKind::Slice, {x}, std::move(out), [rows, cols, r0, c0, d](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g.grad_inputs[0][(r + r0) * d + c + c0] += g.grad_output[r * cols + c];
    }
  });
}

Var repeat_rows(Var x, std::size_t times) {
  if (times == 0) fail(ErrorCode::ShapeMismatch, "repeat_rows with times = 0");
  const Tensor& xv = x.value();
  const std::size_t block = xv.size();
  Tensor out(matrix_shape(xv.rows() * times, xv.cols()));
  for (std::size_t t = 0; t < times; ++t) std::copy(xv.data().begin(), xv.data().end(), out.data().begin() + t * block);
  return graph_of(x).record(OpKind::RepeatRows, {x}, std::move(out), [times, block](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t t = 0; t < times; ++t) {
      for (std::size_t i = 0; i < block; ++i) g.grad_inputs[0][i] += g.grad_output[t * block + i];
    }
  });
}

Var segment_mean(Var x, std::span<const std::size_t> lengths) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  if (lens.empty() || std::accumulate(lens.begin(), lens.end(), std::size_t{0}) != xv.rows() ||
      std::find(lens.begin(), lens.end(), 0) != lens.end()) {
    fail(ErrorCode::ShapeMismatch, "segment lengths do not partition " + shape_string(xv.shape()));
  }
  Tensor out(matrix_shape(lens.size(), d));
  std::size_t row = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    for (std::size_t r = 0; r < lens[s]; ++r, ++row) {
      for (std::size_t c = 0; c < d; ++c) out[s * d + c] += xv[row * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out[s * d + c] /= static_cast<double>(lens[s]);
  }
  return graph_of(x).record(OpKind::SegmentMean, {x}, std::move(out), [lens, d](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    std::size_t row = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(lens[s]);
      for (std::size_t r = 0; r < lens[s]; ++r, ++row) {
        for (std::size_t c = 0; c < d; ++c) g.grad_inputs[0][row * d + c] += g.grad_output[s * d + c] * inv;
      }
    }
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double total = 0.0;
  for (double v : xv.data()) total += v;
  const std::size_t n = xv.size();
  return graph_of(x).record(OpKind::Sum, {x}, Tensor::scalar(total), [n](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t i = 0; i < n; ++i) g.grad_inputs[0][i] += g.grad_output[0];
  });
}

Var row_outer(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) shape_error("row_outer", av.shape(), bv.shape());
  const std::size_t n = av.rows(), p = av.cols(), q = bv.cols();
  Tensor out(matrix_shape(n, p * q));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < q; ++j) out[r * p * q + i * q + j] = av[r * p + i] * bv[r * q + j];
    }
  }
  return graph_of(a).record(OpKind::RowOuter, {a, b}, std::move(out), [n, p, q](const BackwardArgs& g) {
    const Tensor& av = *g.inputs[0];
    const Tensor& bv = *g.inputs[1];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          const double go = g.grad_output[r * p * q + i * q + j];
          if (g.grad_inputs[0]) g.grad_inputs[0][r * p + i] += go * bv[r * q + j];
          if (g.grad_inputs[1]) g.grad_inputs[1][r * q + j] += go * av[r * p + i];
        }
      }
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols(), n = xv.rows();
  std::vector<std::size_t> index(rows.begin(), rows.end());
  if (index.empty()) fail(ErrorCode::ShapeMismatch, "gather_rows with no rows");
  Tensor out(matrix_shape(index.size(), d));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) fail(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    std::copy_n(xv.data().begin() + index[i] * d, d, out.data().begin() + i * d);
  }
  return graph_of(x).record(OpKind::GatherRows, {x}, std::move(out), [index, d](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) g.grad_inputs[0][index[i] * d + c] += g.grad_output[i * d + c];
    }
  });
}

Var segment_attention(Var q, Var k, Var v, std::span<const std::size_t> q_lengths,
                      std::span<const std::size_t> kv_lengths, std::size_t heads) {
  require_same_graph(q, k);
  require_same_graph(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t d = qv.cols();
  if (kv.cols() != d || vv.cols() != d) shape_error("segment_attention", qv.shape(), kv.shape());
  if (kv.rows() != vv.rows()) shape_error("segment_attention k/v", kv.shape(), vv.shape());
  if (heads == 0 || d % heads != 0) {
    fail(ErrorCode::ShapeMismatch, "width " + std::to_string(d) + " not divisible into " + std::to_string(heads) +
                                       " heads");
  }
  std::vector<std::size_t> ql(q_lengths.begin(), q_lengths.end());
  std::vector<std::size_t> kl(kv_lengths.begin(), kv_lengths.end());
  const auto total = [](const std::vector<std::size_t>& v) {
    return std::accumulate(v.begin(), v.end(), std::size_t{0});
  };
  if (ql.size() != kl.size() || ql.empty() || total(ql) != qv.rows() || total(kl) != kv.rows() ||
      std::find(ql.begin(), ql.end(), 0) != ql.end() || std::find(kl.begin(), kl.end(), 0) != kl.end()) {
    fail(ErrorCode::ShapeMismatch, "segment_attention: segment lengths do not partition the inputs");
  }

  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nq = qv.rows(), nk = kv.rows();
  Tensor out(matrix_shape(nq, d));
  auto probs = std::make_shared<std::vector<RowMat>>();
  probs->reserve(ql.size() * heads);

  auto Q = view(qv), K = view(kv), V = view(vv);
  auto O = view(out.data().data(), nq, d);
  std::size_t q0 = 0, k0 = 0;
  for (std::size_t s = 0; s < ql.size(); ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      RowMat scores = (Q.block(q0, h * dh, ql[s], dh) * K.block(k0, h * dh, kl[s], dh).transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      O.block(q0, h * dh, ql[s], dh).noalias() = scores * V.block(k0, h * dh, kl[s], dh);
      probs->push_back(std::move(scores));
    }
    q0 += ql[s];
    k0 += kl[s];
  }

  return graph_of(q).record(
      OpKind::SegmentAttention, {q, k, v}, std::move(out),
      [ql, kl, heads, dh, d, nq, nk, inv_sqrt, probs](const BackwardArgs& g) {
        auto Q = view(*g.inputs[0]), K = view(*g.inputs[1]), V = view(*g.inputs[2]);
        auto dO = view(g.grad_output, nq, d);
        std::size_t q0 = 0, k0 = 0, idx = 0;
        for (std::size_t s = 0; s < ql.size(); ++s) {
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const RowMat& P = (*probs)[idx];
            auto dOs = dO.block(q0, h * dh, ql[s], dh);
            if (g.grad_inputs[2]) {
              view(g.grad_inputs[2], nk, d).block(k0, h * dh, kl[s], dh).noalias() += P.transpose() * dOs;
            }
            if (!g.grad_inputs[0] && !g.grad_inputs[1]) continue;
            RowMat dP = dOs * V.block(k0, h * dh, kl[s], dh).transpose();
            Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
            RowMat dS = (P.array() * (dP.colwise() - rowdot).array()).matrix() * inv_sqrt;
            if (g.grad_inputs[0]) {
              view(g.grad_inputs[0], nq, d).block(q0, h * dh, ql[s], dh).noalias() +=
                  dS * K.block(k0, h * dh, kl[s], dh);
            }
            if (g.grad_inputs[1]) {
              view(g.grad_inputs[1], nk, d).block(k0, h * dh, kl[s], dh).noalias() +=
                  dS.transpose() * Q.block(q0, h * dh, ql[s], dh);
            }
          }
          q0 += ql[s];
          k0 += kl[s];
        }
      });
}

Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  const auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      fail(ErrorCode::ShapeMismatch, std::string(to_string(kind)) + " expects " + std::to_string(n) + " inputs, got " +
                                         std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::Matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::Hadamard: need(2); return hadamard(inputs[0], inputs[1]);
    case OpKind::Sigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::Softmax: need(1); return softmax(inputs[0]);
    case OpKind::LayerNorm: {
      if (inputs.size() == 1) {
        Graph& g = graph_of(inputs[0]);
        const std::size_t d = inputs[0].cols();
        return layernorm(inputs[0], g.constant(Tensor({d}, 1.0)), g.constant(Tensor({d}, 0.0)));
      }
      need(3);
      return layernorm(inputs[0], inputs[1], inputs[2]);
    }
    case OpKind::Concat: return concat(inputs, attrs.axis);
    case OpKind::MeanPool: need(1); return mean_pool(inputs[0]);
    case OpKind::Linear:
      if (inputs.size() == 2) return linear(inputs[0], inputs[1]);
      need(3);
      return linear(inputs[0], inputs[1], inputs[2]);
    case OpKind::Scale: need(1); return scale(inputs[0], attrs.factor);
    default: break;
  }
  fail(ErrorCode::UnknownKind, std::string(to_string(kind)) + " is not a forward_op kind");
}

}  // namespace evoqf
