#include "clustergnn/config.h"

namespace clustergnn {

MatchHead parse_match_head(const std::string& name) {
  if (name == "dual-softmax") return MatchHead::kDualSoftmax;
  if (name == "sinkhorn") return MatchHead::kSinkhorn;
  throw ConfigError("unknown match head '" + name +
                    "' (expected dual-softmax or sinkhorn)");
}

std::string to_string(MatchHead head) {
  return head == MatchHead::kSinkhorn ? "sinkhorn" : "dual-softmax";
}

void ModelConfig::validate() const {
  if (descriptor_dim == 0) throw ConfigError("descriptor_dim must be > 0");
  if (heads == 0 || descriptor_dim % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) +
                      ") must divide descriptor_dim (" +
                      std::to_string(descriptor_dim) + ")");
  }
  if (layers_per_stage == 0 && !schedule.empty()) {
    throw ConfigError("layers_per_stage must be > 0");
  }
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    if (schedule[s] < 1) throw ConfigError("schedule entries must be >= 1");
    if (s > 0 && schedule[s] < schedule[s - 1]) {
      throw ConfigError("schedule must be non-decreasing (stage " +
                        std::to_string(s) + ")");
    }
  }
  if (query_chunks == 0) throw ConfigError("query_chunks must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0,1]");
  if (head == MatchHead::kSinkhorn && sinkhorn_iters == 0) {
    throw ConfigError("sinkhorn_iters must be >= 1");
  }
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.descriptor_dim = 32;
  c.heads = 4;
  c.init_depth = 1;
  c.encoder_hidden_layers = 3;
  c.schedule = {4, 8};
  c.layers_per_stage = 2;
  return c;
}

}  // namespace clustergnn
