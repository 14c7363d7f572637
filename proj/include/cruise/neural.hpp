#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cruise {

struct MlpTopology {
  int input = 1;
  std::vector<int> shared{128, 64};
  std::vector<int> head{64};
  int heads = 6;
  int outputs = 12;

  void validate() const;
  bool operator==(const MlpTopology&) const = default;
};

/// Parameter range of one trainable block (shared core or one head).
struct ParamBlock {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Dense shared-core, K-head network. Parameters live in one flat vector;
/// layers are views into it. Hidden layers use the rectifier, outputs are
/// linear.
class QNetwork {
 public:
  explicit QNetwork(MlpTopology topology);

  /// He-uniform weights, zero biases; each head drawn independently.
  void initialize(std::uint64_t seed);

  const MlpTopology& topology() const { return topology_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::Index param_count() const { return params_.size(); }

  /// Block 0 is the shared core, block 1 + k is head k.
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  struct Cache {
    std::vector<Eigen::MatrixXd> shared;              // activations, input first
    std::vector<std::vector<Eigen::MatrixXd>> heads;  // per head, post-trunk activations
  };

  /// Columns are samples. Returns one (outputs x batch) matrix per head.
  std::vector<Eigen::MatrixXd> forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;
  std::vector<Eigen::VectorXd> forward(const Eigen::VectorXd& input) const;

  /// Gradient of sum_k L_k with respect to the parameters, where
  /// `output_grads[k]` is dL_k/dQ_k. Heads with mask 0 contribute nothing;
  /// the shared-core gradient is divided by the head count.
  Eigen::VectorXd backward(const Cache& cache, const std::vector<Eigen::MatrixXd>& output_grads,
                           const std::vector<char>& head_mask) const;

  /// Text checkpoint; floats are written as hexfloats so reload is bitwise.
  void save(std::ostream& out) const;
  static QNetwork load(std::istream& in);
  void save_file(const std::string& path) const;
  static QNetwork load_file(const std::string& path);

 private:
  struct Layer {
    int in;
    int out;
    Eigen::Index w;  // offset of the (out x in) column-major weight matrix
    Eigen::Index b;
  };

  Eigen::Map<const Eigen::MatrixXd> weight(const Layer& l) const;
  Eigen::Map<const Eigen::VectorXd> bias(const Layer& l) const;

  MlpTopology topology_;
  std::vector<Layer> shared_layers_;
  std::vector<std::vector<Layer>> head_layers_;
  std::vector<ParamBlock> blocks_;
  Eigen::VectorXd params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-block step counters. Blocks whose gradient is exactly zero
/// are skipped entirely, so masked-out heads keep bitwise-identical
/// parameters and moments.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<ParamBlock> blocks, Eigen::Index size);

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.lr = lr; }
  const std::vector<long>& steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::vector<ParamBlock> blocks_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::vector<long> steps_;
};

}  // namespace cruise
