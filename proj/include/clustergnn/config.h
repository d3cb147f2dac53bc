#ifndef CLUSTERGNN_CONFIG_H_
#define CLUSTERGNN_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace clustergnn {

// Invalid or inconsistent model/training configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MatchHead { kDualSoftmax, kSinkhorn };

MatchHead parse_match_head(const std::string& name);
std::string to_string(MatchHead head);

struct ModelConfig {
  std::size_t descriptor_dim = 256;
  std::size_t heads = 4;
  // Stacked self/cross layers in the complete-graph initialization.
  std::size_t init_depth = 3;
  // Hidden layers (each of width descriptor_dim) in the keypoint encoder.
  std::size_t encoder_hidden_layers = 3;
  // Cluster count per stage, coarse to fine.
  std::vector<std::size_t> schedule = {16, 32, 64, 128};
  std::size_t layers_per_stage = 2;
  // Query chunks for the initialization attention; 1 disables chunking.
  std::size_t query_chunks = 4;
  // Re-route every layer instead of once per stage.
  bool recluster_per_layer = false;
  double beta = 0.99;
  std::size_t kmeans_iters = 10;
  MatchHead head = MatchHead::kDualSoftmax;
  std::size_t sinkhorn_iters = 100;
  double match_threshold = 0.2;

  std::size_t head_dim() const { return descriptor_dim / heads; }

  // Throws ConfigError on inconsistent values.
  void validate() const;

  // d = 32 desk-scale profile used for training on synthetic pairs.
  static ModelConfig tiny();
};

}  // namespace clustergnn

#endif  // CLUSTERGNN_CONFIG_H_
