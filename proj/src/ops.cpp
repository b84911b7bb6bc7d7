#include "metaprep/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace metaprep::ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Tensor make_result(Op op, Shape out_shape, Storage out_values, std::vector<Tensor> inputs,
                   double scalar_attr = 0.0, int axis_a = 0, int axis_b = 0, Index start = 0,
                   std::shared_ptr<const std::vector<Index>> indices = nullptr) {
  Graph* g = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.on_graph()) continue;
    if (g != nullptr && g != t.graph()) {
      throw ValueError(std::string(op_name(op)) + ": inputs belong to different graphs");
    }
    g = t.graph();
  }
  auto values = std::make_shared<const Storage>(std::move(out_values));
  if (g != nullptr && g->recording()) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.shape = out_shape;
    n.values = values;
    n.scalar_attr = scalar_attr;
    n.axis_a = axis_a;
    n.axis_b = axis_b;
    n.start = start;
    n.indices = std::move(indices);
    std::int64_t id = g->append(std::move(n));
    return Tensor::with_node(std::move(out_shape), std::move(values), g, id);
  }
  return Tensor::with_node(std::move(out_shape), std::move(values), nullptr, -1);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

int normalize_axis(const char* op, int axis, Index rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(r));
  }
  return axis;
}

// Splits a shape around `axis` into outer/extent/inner extents.
struct AxisSplit {
  Index outer{1};
  Index extent{1};
  Index inner{1};
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  s.extent = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Storage out = a.values() + b.values();
  return make_result(Op::kAdd, a.shape(), std::move(out), {a, b});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Storage out = a.values() * b.values();
  return make_result(Op::kMul, a.shape(), std::move(out), {a, b});
}

Tensor scale(const Tensor& x, double c) {
  Storage out = x.values() * c;
  return make_result(Op::kScale, x.shape(), std::move(out), {x}, c);
}

Tensor add_scalar(const Tensor& x, double c) {
  Storage out = x.values() + c;
  return make_result(Op::kAddScalar, x.shape(), std::move(out), {x}, c);
}

Tensor pow_scalar(const Tensor& x, double p) {
  Storage out = x.values().pow(p);
  return make_result(Op::kPowScalar, x.shape(), std::move(out), {x}, p);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  Index m = as[as.size() - 2], k = as[as.size() - 1];
  Index kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
  bool b_broadcast = b.rank() == 2 && a.rank() > 2;
  if (!b_broadcast && a.rank() != b.rank()) {
    throw ShapeError("matmul: rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  Shape lead(as.begin(), as.end() - 2);
  if (!b_broadcast) {
    Shape lead_b(bs.begin(), bs.end() - 2);
    if (lead != lead_b) {
      throw ShapeError("matmul: leading dimensions mismatch " + shape_str(as) + " vs " + shape_str(bs));
    }
  }
  Index batches = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Storage out(batches * m * n);
  for (Index l = 0; l < batches; ++l) {
    CMapRM ma(a.data() + l * m * k, m, k);
    CMapRM mb(b.data() + (b_broadcast ? 0 : l * k * n), k, n);
    MapRM mo(out.data() + l * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  return make_result(Op::kMatMul, std::move(out_shape), std::move(out), {a, b});
}

Tensor swap_axes(const Tensor& x, int axis_a, int axis_b) {
  axis_a = normalize_axis("swap_axes", axis_a, x.rank());
  axis_b = normalize_axis("swap_axes", axis_b, x.rank());
  if (axis_a == axis_b) return x;
  if (axis_a > axis_b) std::swap(axis_a, axis_b);
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);
  auto in_strides = row_major_strides(x.shape());
  auto out_strides = row_major_strides(out_shape);
  std::swap(out_strides[static_cast<size_t>(axis_a)], out_strides[static_cast<size_t>(axis_b)]);
  // out_strides now maps input multi-indices to output offsets.
  Index n = x.size();
  Storage out(n);
  const size_t rank = x.shape().size();
  const double* src = x.data();
  for (Index flat = 0; flat < n; ++flat) {
    Index rem = flat, off = 0;
    for (size_t d = 0; d < rank; ++d) {
      Index idx = rem / in_strides[d];
      rem -= idx * in_strides[d];
      off += idx * out_strides[d];
    }
    out(off) = src[flat];
  }
  return make_result(Op::kSwapAxes, std::move(out_shape), std::move(out), {x}, 0.0, axis_a, axis_b);
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank >= 2 required, got " + shape_str(x.shape()));
  return swap_axes(x, static_cast<int>(x.rank()) - 2, static_cast<int>(x.rank()) - 1);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  // Row-major view: storage is shared untouched.
  Storage out = x.values();
  return make_result(Op::kReshape, std::move(shape), std::move(out), {x});
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  size_t xr = x.shape().size(), tr = shape.size();
  if (xr > tr) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  size_t off = tr - xr;
  auto x_strides = row_major_strides(x.shape());
  // Source stride per target dim; 0 where the source is stretched.
  std::vector<Index> src_strides(tr, 0);
  for (size_t i = 0; i < xr; ++i) {
    Index xd = x.shape()[i];
    Index td = shape[off + i];
    if (xd == td) {
      src_strides[off + i] = x_strides[i];
    } else if (xd != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
  }
  auto t_strides = row_major_strides(shape);
  Index n = numel(shape);
  Storage out(n);
  const double* src = x.data();
  for (Index flat = 0; flat < n; ++flat) {
    Index rem = flat, soff = 0;
    for (size_t d = 0; d < tr; ++d) {
      Index idx = rem / t_strides[d];
      rem -= idx * t_strides[d];
      soff += idx * src_strides[d];
    }
    out(flat) = src[soff];
  }
  return make_result(Op::kBroadcastTo, shape, std::move(out), {x});
}

Tensor sum_to_shape(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  size_t xr = x.shape().size(), tr = shape.size();
  if (tr > xr) {
    throw ShapeError("sum_to_shape: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  size_t off = xr - tr;
  auto t_strides = row_major_strides(shape);
  // Target stride per source dim; 0 where the dim is summed away.
  std::vector<Index> dst_strides(xr, 0);
  for (size_t i = 0; i < tr; ++i) {
    Index td = shape[i];
    Index xd = x.shape()[off + i];
    if (td == xd) {
      dst_strides[off + i] = t_strides[i];
    } else if (td != 1) {
      throw ShapeError("sum_to_shape: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
  }
  auto x_strides = row_major_strides(x.shape());
  Storage out = Storage::Zero(numel(shape));
  const double* src = x.data();
  Index n = x.size();
  for (Index flat = 0; flat < n; ++flat) {
    Index rem = flat, doff = 0;
    for (size_t d = 0; d < xr; ++d) {
      Index idx = rem / x_strides[d];
      rem -= idx * x_strides[d];
      doff += idx * dst_strides[d];
    }
    out(doff) += src[flat];
  }
  return make_result(Op::kSumToShape, shape, std::move(out), {x});
}

Tensor slice(const Tensor& x, int axis, Index start, Index extent) {
  axis = normalize_axis("slice", axis, x.rank());
  Index dim = x.dim(axis);
  if (start < 0 || extent < 0 || start + extent > dim) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + extent) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  if (start == 0 && extent == dim) return x;
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = extent;
  AxisSplit s = split_at(x.shape(), axis);
  Storage out(s.outer * extent * s.inner);
  const double* src = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    const double* block = src + (o * s.extent + start) * s.inner;
    std::copy(block, block + extent * s.inner, out.data() + o * extent * s.inner);
  }
  return make_result(Op::kSlice, std::move(out_shape), std::move(out), {x}, 0.0, axis, 0, start);
}

Tensor pad_axis(const Tensor& x, int axis, Index before, Index full_extent) {
  axis = normalize_axis("pad_axis", axis, x.rank());
  Index dim = x.dim(axis);
  if (before < 0 || before + dim > full_extent) {
    throw ShapeError("pad_axis: slice of extent " + std::to_string(dim) + " at offset " + std::to_string(before) +
                     " does not fit in " + std::to_string(full_extent));
  }
  if (before == 0 && dim == full_extent) return x;
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = full_extent;
  AxisSplit s = split_at(x.shape(), axis);
  Storage out = Storage::Zero(s.outer * full_extent * s.inner);
  const double* src = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    std::copy(src + o * dim * s.inner, src + (o + 1) * dim * s.inner,
              out.data() + (o * full_extent + before) * s.inner);
  }
  return make_result(Op::kPad, std::move(out_shape), std::move(out), {x}, 0.0, axis, 0, before);
}

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = normalize_axis("concat", axis, xs[0].rank());
  Shape out_shape = xs[0].shape();
  Index total = 0;
  for (const Tensor& x : xs) {
    Shape s = x.shape();
    if (s.size() != out_shape.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(out_shape) + " vs " + shape_str(s));
    }
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != out_shape[d]) {
        throw ShapeError("concat: shape mismatch off axis, " + shape_str(out_shape) + " vs " + shape_str(s));
      }
    }
    total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;
  AxisSplit s = split_at(out_shape, axis);
  Storage out(s.outer * total * s.inner);
  Index at = 0;
  for (const Tensor& x : xs) {
    Index ext = x.dim(axis);
    const double* src = x.data();
    for (Index o = 0; o < s.outer; ++o) {
      std::copy(src + o * ext * s.inner, src + (o + 1) * ext * s.inner,
                out.data() + (o * total + at) * s.inner);
    }
    at += ext;
  }
  return make_result(Op::kConcat, std::move(out_shape), std::move(out),
                     std::vector<Tensor>(xs.begin(), xs.end()), 0.0, axis);
}

Tensor sum(const Tensor& x) {
  Storage out = Storage::Constant(1, x.values().sum());
  return make_result(Op::kSumAll, Shape{}, std::move(out), {x});
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("sum_last: rank >= 1 required");
  Index last = x.dim(x.rank() - 1);
  Index rows = x.size() / last;
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Storage out(rows);
  const double* src = x.data();
  for (Index r = 0; r < rows; ++r) {
    double acc = 0;
    for (Index c = 0; c < last; ++c) acc += src[r * last + c];
    out(r) = acc;
  }
  return make_result(Op::kSumLast, std::move(out_shape), std::move(out), {x});
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: rank >= 1 required");
  Index last = x.dim(x.rank() - 1);
  Index rows = x.size() / last;
  Storage out(x.size());
  const double* src = x.data();
  for (Index r = 0; r < rows; ++r) {
    const double* row = src + r * last;
    double m = row[0];
    for (Index c = 1; c < last; ++c) m = std::max(m, row[c]);
    double z = 0;
    for (Index c = 0; c < last; ++c) {
      double e = std::exp(row[c] - m);
      out(r * last + c) = e;
      z += e;
    }
    for (Index c = 0; c < last; ++c) out(r * last + c) /= z;
  }
  return make_result(Op::kSoftmaxLast, x.shape(), std::move(out), {x});
}

Tensor log(const Tensor& x) {
  Storage out = x.values().log();
  return make_result(Op::kLog, x.shape(), std::move(out), {x});
}

Tensor exp(const Tensor& x) {
  Storage out = x.values().exp();
  return make_result(Op::kExp, x.shape(), std::move(out), {x});
}

Tensor tanh(const Tensor& x) {
  Storage out = x.values().tanh();
  return make_result(Op::kTanh, x.shape(), std::move(out), {x});
}

namespace {

// Node-level gather/scatter work on flat id lists; the public gather wraps the
// result back into the id shape.
Tensor gather_flat(const Tensor& table, std::shared_ptr<const std::vector<Index>> ids) {
  if (table.rank() < 1) throw ShapeError("embedding_gather: table rank >= 1 required");
  Index rows = table.dim(0);
  Index width = table.size() / std::max<Index>(rows, 1);
  for (Index id : *ids) {
    if (id < 0 || id >= rows) {
      throw ValueError("embedding_gather: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(rows) + ")");
    }
  }
  Index n = static_cast<Index>(ids->size());
  Shape out_shape{n};
  for (size_t d = 1; d < table.shape().size(); ++d) out_shape.push_back(table.shape()[d]);
  Storage out(n * width);
  const double* src = table.data();
  for (Index i = 0; i < n; ++i) {
    const double* row = src + (*ids)[static_cast<size_t>(i)] * width;
    std::copy(row, row + width, out.data() + i * width);
  }
  return make_result(Op::kGather, std::move(out_shape), std::move(out), {table}, 0.0, 0, 0, 0, std::move(ids));
}

}  // namespace

Tensor embedding_gather(const Tensor& table, std::span<const Index> ids, const Shape& id_shape) {
  if (numel(id_shape) != static_cast<Index>(ids.size())) {
    throw ShapeError("embedding_gather: id shape " + shape_str(id_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  auto stored = std::make_shared<const std::vector<Index>>(ids.begin(), ids.end());
  Tensor flat = gather_flat(table, std::move(stored));
  Shape out_shape = id_shape;
  for (size_t d = 1; d < table.shape().size(); ++d) out_shape.push_back(table.shape()[d]);
  return reshape(flat, std::move(out_shape));
}

Tensor embedding_scatter(const Tensor& grads, std::span<const Index> ids, Index num_rows) {
  if (grads.rank() < 1 || grads.dim(0) != static_cast<Index>(ids.size())) {
    throw ShapeError("embedding_scatter: leading dim of " + shape_str(grads.shape()) + " must equal " +
                     std::to_string(ids.size()) + " ids");
  }
  Index n = static_cast<Index>(ids.size());
  Index width = n > 0 ? grads.size() / n : 1;
  Shape out_shape{num_rows};
  for (size_t d = 1; d < grads.shape().size(); ++d) out_shape.push_back(grads.shape()[d]);
  Storage out = Storage::Zero(num_rows * width);
  const double* src = grads.data();
  for (Index i = 0; i < n; ++i) {
    Index id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= num_rows) {
      throw ValueError("embedding_scatter: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(num_rows) + ")");
    }
    for (Index c = 0; c < width; ++c) out(id * width + c) += src[i * width + c];
  }
  auto stored = std::make_shared<const std::vector<Index>>(ids.begin(), ids.end());
  return make_result(Op::kScatter, std::move(out_shape), std::move(out), {grads}, 0.0, 0, 0, 0, std::move(stored));
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const Index> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy_with_logits: logits must be [N, C], got " + shape_str(logits.shape()));
  }
  Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  if (n == 0) throw ValueError("cross_entropy_with_logits: empty batch");
  const double* src = logits.data();
  double total = 0;
  for (Index r = 0; r < n; ++r) {
    Index t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= c) {
      throw ValueError("cross_entropy_with_logits: target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(c) + ")");
    }
    const double* row = src + r * c;
    double m = row[0];
    for (Index j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (Index j = 0; j < c; ++j) z += std::exp(row[j] - m);
    total += m + std::log(z) - row[t];
  }
  Storage out = Storage::Constant(1, total / static_cast<double>(n));
  auto stored = std::make_shared<const std::vector<Index>>(targets.begin(), targets.end());
  return make_result(Op::kCrossEntropy, Shape{}, std::move(out), {logits}, 0.0, 0, 0, 0, std::move(stored));
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_last(const Tensor& x) {
  Index last = x.dim(x.rank() - 1);
  return scale(sum_last(x), 1.0 / static_cast<double>(last));
}

Tensor gelu(const Tensor& x) {
  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  Tensor x3 = mul(mul(x, x), x);
  Tensor inner = scale(add(x, scale(x3, 0.044715)), kSqrt2OverPi);
  return mul(scale(x, 0.5), add_scalar(tanh(inner), 1.0));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tensor mu = mean_last(x);
  Tensor centered = sub(x, broadcast_to(mu, x.shape()));
  Tensor var = mean_last(mul(centered, centered));
  Tensor inv_std = pow_scalar(add_scalar(var, eps), -0.5);
  Tensor normed = mul(centered, broadcast_to(inv_std, x.shape()));
  return add(mul(normed, broadcast_to(gain, x.shape())), broadcast_to(bias, x.shape()));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return add(y, broadcast_to(b, y.shape()));
}

Tensor dropout(const Tensor& x, double rate, RngStream* rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ValueError("dropout: rate must be < 1");
  if (rng == nullptr) throw ValueError("dropout: rate > 0 requires an rng stream");
  Storage mask(x.size());
  double keep = 1.0 - rate;
  for (Index i = 0; i < x.size(); ++i) mask(i) = rng->bernoulli(rate) ? 0.0 : 1.0 / keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

std::vector<Tensor> backward_rule(const Node& node, const Tensor& out, const Tensor& adj) {
  const std::vector<Tensor>& in = node.inputs;
  switch (node.op) {
    case Op::kLeaf:
      return {};
    case Op::kAdd:
      return {adj, adj};
    case Op::kMul:
      return {mul(adj, in[1]), mul(adj, in[0])};
    case Op::kScale:
      return {scale(adj, node.scalar_attr)};
    case Op::kAddScalar:
      return {adj};
    case Op::kPowScalar:
      return {scale(mul(adj, pow_scalar(in[0], node.scalar_attr - 1.0)), node.scalar_attr)};
    case Op::kMatMul: {
      Tensor da = matmul(adj, transpose(in[1]));
      Tensor db_full = matmul(transpose(in[0]), adj);
      Tensor db = in[1].rank() == 2 && in[0].rank() > 2 ? sum_to_shape(db_full, in[1].shape()) : db_full;
      return {da, db};
    }
    case Op::kSwapAxes:
      return {swap_axes(adj, node.axis_a, node.axis_b)};
    case Op::kReshape:
      return {reshape(adj, in[0].shape())};
    case Op::kBroadcastTo:
      return {sum_to_shape(adj, in[0].shape())};
    case Op::kSumToShape:
      return {broadcast_to(adj, in[0].shape())};
    case Op::kSlice:
      return {pad_axis(adj, node.axis_a, node.start, in[0].dim(node.axis_a))};
    case Op::kPad:
      return {slice(adj, node.axis_a, node.start, in[0].dim(node.axis_a))};
    case Op::kConcat: {
      std::vector<Tensor> contribs;
      contribs.reserve(in.size());
      Index at = 0;
      for (const Tensor& x : in) {
        contribs.push_back(slice(adj, node.axis_a, at, x.dim(node.axis_a)));
        at += x.dim(node.axis_a);
      }
      return contribs;
    }
    case Op::kSumAll:
      return {broadcast_to(adj, in[0].shape())};
    case Op::kSumLast:
      return {broadcast_to(adj, in[0].shape())};
    case Op::kSoftmaxLast: {
      // s * (g - sum_last(g * s))
      Tensor gs = mul(adj, out);
      Tensor row = broadcast_to(sum_last(gs), in[0].shape());
      return {mul(out, sub(adj, row))};
    }
    case Op::kLog:
      return {mul(adj, pow_scalar(in[0], -1.0))};
    case Op::kExp:
      return {mul(adj, out)};
    case Op::kTanh:
      return {mul(adj, add_scalar(scale(mul(out, out), -1.0), 1.0))};
    case Op::kGather:
      return {embedding_scatter(adj, *node.indices, in[0].dim(0))};
    case Op::kScatter:
      return {embedding_gather(adj, *node.indices, Shape{static_cast<Index>(node.indices->size())})};
    case Op::kCrossEntropy: {
      // (softmax(logits) - onehot) * adj / N
      const Shape& ls = in[0].shape();
      Index n = ls[0], c = ls[1];
      Storage onehot = Storage::Zero(n * c);
      for (Index r = 0; r < n; ++r) onehot(r * c + (*node.indices)[static_cast<size_t>(r)]) = 1.0;
      Tensor diff = sub(softmax(in[0]), Tensor(ls, std::move(onehot)));
      Tensor g = broadcast_to(scale(adj, 1.0 / static_cast<double>(n)), ls);
      return {mul(g, diff)};
    }
  }
  throw ValueError("backward_rule: unknown op");
}

}  // namespace metaprep::ad
