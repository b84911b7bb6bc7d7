#pragma once

#include "metaprep/tensor.hpp"

#include <deque>
#include <memory>
#include <vector>

namespace metaprep::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kMul,
  kScale,
  kAddScalar,
  kPowScalar,
  kMatMul,
  kSwapAxes,
  kReshape,
  kBroadcastTo,
  kSumToShape,
  kSlice,
  kPad,
  kConcat,
  kSumAll,
  kSumLast,
  kSoftmaxLast,
  kLog,
  kExp,
  kTanh,
  kGather,
  kScatter,
  kCrossEntropy,
};

const char* op_name(Op op);

// One recorded computation. Inputs are held as tensors (values plus node
// references), so everything a backward rule needs survives as long as the
// graph does.
struct Node {
  Op op{Op::kLeaf};
  std::vector<Tensor> inputs;
  Shape shape;                             // output shape
  std::shared_ptr<const Storage> values;   // output values
  double scalar_attr{0.0};                 // scale factor / added constant / exponent
  int axis_a{0};                           // swap, slice, pad, concat axis
  int axis_b{0};                           // second swap axis
  Index start{0};                          // slice start / pad offset
  std::shared_ptr<const std::vector<Index>> indices;  // gather ids / CE targets
};

// Append-only tape. Node inputs always precede the node itself, so append
// order is a topological order and the backward walk is a single reverse
// sweep. One graph is single-threaded; independent graphs may run
// concurrently.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Places values on the graph as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  std::int64_t append(Node node);
  const Node& node(std::int64_t id) const { return nodes_[static_cast<size_t>(id)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  void mark_consumed() { consumed_ = true; }

  // Suspends recording while alive; backward passes without create_graph use
  // this so their arithmetic stays off the tape.
  class PauseRecording {
   public:
    explicit PauseRecording(Graph& g) : graph_(g), prev_(g.recording_) { g.recording_ = false; }
    ~PauseRecording() { graph_.recording_ = prev_; }
    PauseRecording(const PauseRecording&) = delete;
    PauseRecording& operator=(const PauseRecording&) = delete;

   private:
    Graph& graph_;
    bool prev_;
  };

 private:
  std::deque<Node> nodes_;
  bool recording_{true};
  bool consumed_{false};
};

}  // namespace metaprep::ad
