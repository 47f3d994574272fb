#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/rng.hpp"
#include "octlesion/tensor.hpp"

namespace oct::nn {

enum class Phase { train, eval };

// A differentiable operation. forward() caches whatever backward() needs and
// is single-writer; infer() is pure and safe to call concurrently on a
// frozen net. Parameter gradients accumulate into the grads() tensors.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string type() const = 0;
  virtual Tensor forward(const Tensor& x, Phase phase) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;

  // Binary ops (concat) override these; arity is dispatched by MiniNet.
  virtual bool is_binary() const { return false; }
  virtual Tensor forward2(const Tensor&, const Tensor&, Phase) { throw std::logic_error("not a binary layer"); }
  virtual std::pair<Tensor, Tensor> backward2(const Tensor&) { throw std::logic_error("not a binary layer"); }
  virtual Tensor infer2(const Tensor&, const Tensor&) const { throw std::logic_error("not a binary layer"); }

  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::vector<const Tensor*> params() const { return {}; }
  virtual std::vector<Tensor*> grads() { return {}; }
  // Non-trained state carried by the layer (batchnorm running stats).
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual std::vector<const Tensor*> buffers() const { return {}; }

  virtual nlohmann::json config() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  void zero_grads() {
    for (Tensor* g : grads()) g->set_zero();
  }
};

// Stride-1, zero-padded "same" convolution over 2 or 3 spatial axes with a
// cubic kernel. Input (N, C_in, S...), output (N, C_out, S...).
class Conv : public Layer {
 public:
  Conv(int spatial_rank, long in_ch, long out_ch, long kernel);

  std::string type() const override { return spatial_rank_ == 2 ? "conv2d" : "conv3d"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Tensor*> params() override { return {&weight, &bias}; }
  std::vector<const Tensor*> params() const override { return {&weight, &bias}; }
  std::vector<Tensor*> grads() override { return {&dweight, &dbias}; }
  nlohmann::json config() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv>(*this); }

  void init_he(Rng& rng);

  Tensor weight;  // (out_ch, in_ch * kernel^d), row-major
  Tensor bias;    // (out_ch)
  Tensor dweight, dbias;

  int spatial_rank() const { return spatial_rank_; }
  long in_channels() const { return in_ch_; }
  long out_channels() const { return out_ch_; }
  long kernel() const { return kernel_; }

 private:
  Tensor run(const Tensor& x) const;
  void check_input(const Tensor& x) const;

  int spatial_rank_;
  long in_ch_, out_ch_, kernel_, pad_;
  Tensor input_;
};

// Per-channel batch normalization over all non-channel axes.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(long channels, double eps = 1e-8, double momentum = 0.1);

  std::string type() const override { return "batchnorm"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Tensor*> params() override { return {&gamma, &beta}; }
  std::vector<const Tensor*> params() const override { return {&gamma, &beta}; }
  std::vector<Tensor*> grads() override { return {&dgamma, &dbeta}; }
  std::vector<Tensor*> buffers() override { return {&running_mean, &running_var}; }
  std::vector<const Tensor*> buffers() const override { return {&running_mean, &running_var}; }
  nlohmann::json config() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Tensor gamma, beta, dgamma, dbeta;
  Tensor running_mean, running_var;
  long channels() const { return channels_; }
  double eps() const { return eps_; }

 private:
  long channels_;
  double eps_, momentum_;
  Tensor xhat_;
  Array inv_std_;
  Eigen::Index per_channel_ = 0;
};

class Relu final : public Layer {
 public:
  std::string type() const override { return "relu"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  nlohmann::json config() const override { return {{"type", "relu"}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  Tensor input_;
};

// 2x (2x2 / 2x2x2) max pooling, stride 2, floor semantics on odd extents.
class MaxPool final : public Layer {
 public:
  explicit MaxPool(int spatial_rank) : spatial_rank_(spatial_rank) {}

  std::string type() const override { return spatial_rank_ == 2 ? "maxpool2d" : "maxpool3d"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  nlohmann::json config() const override { return {{"type", type()}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool>(*this); }

 private:
  Tensor run(const Tensor& x, std::vector<Eigen::Index>* argmax) const;

  int spatial_rank_;
  std::vector<Eigen::Index> argmax_;
  std::vector<Eigen::Index> input_shape_;
};

// (N, C, S...) -> (N, C) mean over the spatial axes.
class GlobalAvgPool final : public Layer {
 public:
  std::string type() const override { return "global_avg_pool"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  nlohmann::json config() const override { return {{"type", "global_avg_pool"}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  std::vector<Eigen::Index> input_shape_;
};

class Dense final : public Layer {
 public:
  Dense(long in_features, long out_features);

  std::string type() const override { return "dense"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Tensor*> params() override { return {&weight, &bias}; }
  std::vector<const Tensor*> params() const override { return {&weight, &bias}; }
  std::vector<Tensor*> grads() override { return {&dweight, &dbias}; }
  nlohmann::json config() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  void init_he(Rng& rng);

  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
  Tensor dweight, dbias;
  long in_features() const { return in_f_; }
  long out_features() const { return out_f_; }

 private:
  long in_f_, out_f_;
  Tensor input_;
};

// Softmax across the channel axis: rows of (N, C), or per spatial position
// of (N, C, S...).
class Softmax final : public Layer {
 public:
  std::string type() const override { return "softmax"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  nlohmann::json config() const override { return {{"type", "softmax"}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Softmax>(*this); }

 private:
  Tensor output_;
};

// Nearest-neighbour 2x upsampling of (N, C, H, W).
class Upsample2d final : public Layer {
 public:
  std::string type() const override { return "upsample2d"; }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  Tensor infer(const Tensor& x) const override;
  nlohmann::json config() const override { return {{"type", "upsample2d"}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2d>(*this); }

 private:
  std::vector<Eigen::Index> input_shape_;
};

// Channel concatenation of two inputs with identical batch/spatial extents.
class Concat final : public Layer {
 public:
  std::string type() const override { return "concat"; }
  bool is_binary() const override { return true; }
  Tensor forward(const Tensor&, Phase) override { throw std::logic_error("concat needs two inputs"); }
  Tensor backward(const Tensor&) override { throw std::logic_error("concat needs two inputs"); }
  Tensor infer(const Tensor&) const override { throw std::logic_error("concat needs two inputs"); }
  Tensor forward2(const Tensor& a, const Tensor& b, Phase phase) override;
  std::pair<Tensor, Tensor> backward2(const Tensor& grad_out) override;
  Tensor infer2(const Tensor& a, const Tensor& b) const override;
  nlohmann::json config() const override { return {{"type", "concat"}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Concat>(*this); }

 private:
  Tensor run(const Tensor& a, const Tensor& b) const;
  std::vector<Eigen::Index> shape_a_, shape_b_;
};

std::unique_ptr<Layer> layer_from_config(const nlohmann::json& cfg);

}  // namespace oct::nn
