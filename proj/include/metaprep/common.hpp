#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaprep {

// All training math runs in 64-bit reals.
using Scalar = double;
using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Storage = Eigen::ArrayXd;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Row-major strides for a shape (last axis contiguous).
inline std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size());
  Index acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    strides[i] = acc;
    acc *= shape[i];
  }
  return strides;
}

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss/gradient, divergence.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Task tags shared between the data pipeline, the model heads and the trainers.
enum class TaskTag : std::uint8_t {
  kMlm,
  kNsp,
  kQaMatch,
  kQqMatch,
  kDownstreamSingle,
  kDownstreamPair,
  kDownstreamCloze,
  kQuadratic,
};

std::string task_tag_name(TaskTag tag);
TaskTag task_tag_from_name(const std::string& name);

// Dense integer matrix (token ids, segment ids, attention masks), row-major.
struct TokenMatrix {
  Index rows{0};
  Index cols{0};
  std::vector<Index> ids;

  TokenMatrix() = default;
  TokenMatrix(Index r, Index c, Index fill = 0) : rows(r), cols(c), ids(static_cast<size_t>(r * c), fill) {}

  Index& at(Index r, Index c) { return ids[static_cast<size_t>(r * cols + c)]; }
  Index at(Index r, Index c) const { return ids[static_cast<size_t>(r * cols + c)]; }
  bool operator==(const TokenMatrix& other) const = default;
};

}  // namespace metaprep
