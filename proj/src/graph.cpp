#include "metaprep/graph.hpp"

namespace metaprep::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kPowScalar: return "pow_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kSwapAxes: return "swap_axes";
    case Op::kReshape: return "reshape";
    case Op::kBroadcastTo: return "broadcast_to";
    case Op::kSumToShape: return "sum_to_shape";
    case Op::kSlice: return "slice";
    case Op::kPad: return "pad_axis";
    case Op::kConcat: return "concat";
    case Op::kSumAll: return "sum";
    case Op::kSumLast: return "sum_last";
    case Op::kSoftmaxLast: return "softmax";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kTanh: return "tanh";
    case Op::kGather: return "embedding_gather";
    case Op::kScatter: return "embedding_scatter";
    case Op::kCrossEntropy: return "cross_entropy_with_logits";
  }
  return "?";
}

Tensor Graph::leaf(const Tensor& value) {
  Node n;
  n.op = Op::kLeaf;
  n.shape = value.shape();
  n.values = value.values_ptr();
  std::int64_t id = append(std::move(n));
  return Tensor::with_node(value.shape(), value.values_ptr(), this, id);
}

std::int64_t Graph::append(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

}  // namespace metaprep::ad
