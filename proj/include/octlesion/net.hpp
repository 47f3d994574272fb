#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/layers.hpp"

namespace oct::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

nlohmann::json to_json(const AdamConfig&);
AdamConfig adam_config_from_json(const nlohmann::json&);

struct AdamState {
  std::vector<Tensor> m, v;  // aligned with MiniNet::params()
  long step = 0;
};

// An ordered DAG of layers. Node inputs are indices of earlier nodes
// (kInput = the network input); a plain stack wires every node to its
// predecessor, U-Nets add concat nodes with a second (skip) input.
class MiniNet {
 public:
  static constexpr int kPrev = -1;
  static constexpr int kInput = -2;
  static constexpr int kNone = -3;

  struct Node {
    std::unique_ptr<Layer> op;
    int in0 = kInput;
    int in1 = kNone;
  };

  MiniNet() = default;
  MiniNet(const MiniNet& other);
  MiniNet& operator=(const MiniNet& other);
  MiniNet(MiniNet&&) = default;
  MiniNet& operator=(MiniNet&&) = default;

  // Returns the new node's index. in0 = kPrev wires to the previous node
  // (or the network input for the first node).
  int add(std::unique_ptr<Layer> layer, int in0 = kPrev, int in1 = kNone);

  int size() const { return static_cast<int>(nodes_.size()); }
  Layer& layer(int i) { return *nodes_[static_cast<std::size_t>(i)].op; }
  const Layer& layer(int i) const { return *nodes_[static_cast<std::size_t>(i)].op; }
  // Replaces a node's operation in place (used by tests to mutate a layer).
  void replace_layer(int i, std::unique_ptr<Layer> op) { nodes_[static_cast<std::size_t>(i)].op = std::move(op); }

  // Forward with caching for a later backward pass; requires finite output.
  Tensor forward(const Tensor& batch, Phase phase);
  // Pure forward on frozen state; safe to call concurrently.
  Tensor infer(const Tensor& batch) const;
  // Propagates d(loss)/d(output) down to every parameter gradient;
  // call after forward() on the same batch.
  void backward_from_output(const Tensor& grad_output);

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<Tensor*> grads();
  std::vector<Tensor*> buffers();
  std::vector<const Tensor*> buffers() const;
  void zero_grads();
  Eigen::Index param_count() const;

  nlohmann::json arch() const;
  static MiniNet from_arch(const nlohmann::json& arch);

  AdamState& adam_state() { return adam_; }
  const AdamState& adam_state() const { return adam_; }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> outputs_;  // forward cache, per node
  AdamState adam_;
};

// probs (N, C) with per-sample class targets, or (N, C, S...) with per-pixel
// targets in [n][spatial] order. Mean of -log p[target] with probabilities
// clamped at 1e-12.
double cross_entropy(const Tensor& probs, const std::vector<long>& targets);

// d(loss)/d(probs) for the same contract.
Tensor cross_entropy_grad(const Tensor& probs, const std::vector<long>& targets);

Tensor forward(MiniNet& net, const Tensor& batch, bool training);

// Forward + cross-entropy backward; returns d(loss)/d(param) snapshots in
// params() order (the net's own grad tensors hold the same values).
std::vector<Tensor> backward(MiniNet& net, const Tensor& batch, const std::vector<long>& targets);

// Bias-corrected Adam update from explicit gradients (or the net's stored
// gradients); increments the step counter.
void adam_step(MiniNet& net, const std::vector<Tensor>& gradients, const AdamConfig& config);
void adam_step(MiniNet& net, const AdamConfig& config);

}  // namespace oct::nn
