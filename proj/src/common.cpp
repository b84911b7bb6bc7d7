#include "metaprep/common.hpp"

namespace metaprep {

std::string task_tag_name(TaskTag tag) {
  switch (tag) {
    case TaskTag::kMlm: return "mlm";
    case TaskTag::kNsp: return "nsp";
    case TaskTag::kQaMatch: return "qa_match";
    case TaskTag::kQqMatch: return "qq_match";
    case TaskTag::kDownstreamSingle: return "downstream_single";
    case TaskTag::kDownstreamPair: return "downstream_pair";
    case TaskTag::kDownstreamCloze: return "downstream_cloze";
    case TaskTag::kQuadratic: return "quadratic";
  }
  return "?";
}

TaskTag task_tag_from_name(const std::string& name) {
  if (name == "mlm") return TaskTag::kMlm;
  if (name == "nsp") return TaskTag::kNsp;
  if (name == "qa_match") return TaskTag::kQaMatch;
  if (name == "qq_match") return TaskTag::kQqMatch;
  if (name == "downstream_single") return TaskTag::kDownstreamSingle;
  if (name == "downstream_pair") return TaskTag::kDownstreamPair;
  if (name == "downstream_cloze") return TaskTag::kDownstreamCloze;
  if (name == "quadratic") return TaskTag::kQuadratic;
  throw ValueError("unknown task tag '" + name + "'");
}

}  // namespace metaprep
