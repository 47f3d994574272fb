#include "octlesion/net.hpp"

#include <cmath>

namespace oct::nn {

void AdamConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("adam learning_rate must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (epsilon <= 0) throw std::invalid_argument("adam epsilon must be > 0");
}

nlohmann::json to_json(const AdamConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

AdamConfig adam_config_from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.validate();
  return c;
}

MiniNet::MiniNet(const MiniNet& other) { *this = other; }

MiniNet& MiniNet::operator=(const MiniNet& other) {
  if (this == &other) return *this;
  nodes_.clear();
  for (const auto& n : other.nodes_) nodes_.push_back({n.op->clone(), n.in0, n.in1});
  outputs_.clear();
  adam_ = other.adam_;
  return *this;
}

int MiniNet::add(std::unique_ptr<Layer> layer, int in0, int in1) {
  const int idx = size();
  if (in0 == kPrev) in0 = idx == 0 ? kInput : idx - 1;
  if (in0 >= idx || (in1 != kNone && in1 >= idx)) throw std::invalid_argument("node inputs must precede it");
  if (layer->is_binary() != (in1 != kNone)) throw std::invalid_argument("layer arity does not match inputs");
  nodes_.push_back({std::move(layer), in0, in1});
  return idx;
}

namespace {
const Tensor& pick(const Tensor& input, const std::vector<Tensor>& outs, int idx) {
  return idx == MiniNet::kInput ? input : outs[static_cast<std::size_t>(idx)];
}
}  // namespace

Tensor MiniNet::forward(const Tensor& batch, Phase phase) {
  if (nodes_.empty()) throw std::logic_error("empty network");
  outputs_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    const Tensor& a = pick(batch, outputs_, node.in0);
    outputs_[i] = node.op->is_binary() ? node.op->forward2(a, pick(batch, outputs_, node.in1), phase)
                                       : node.op->forward(a, phase);
  }
  const Tensor& out = outputs_.back();
  if (!out.all_finite()) throw std::runtime_error("non-finite activation in network output");
  return out;
}

Tensor MiniNet::infer(const Tensor& batch) const {
  if (nodes_.empty()) throw std::logic_error("empty network");
  std::vector<Tensor> outs(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    const Tensor& a = pick(batch, outs, node.in0);
    outs[i] = node.op->is_binary() ? node.op->infer2(a, pick(batch, outs, node.in1)) : node.op->infer(a);
  }
  if (!outs.back().all_finite()) throw std::runtime_error("non-finite activation in network output");
  return outs.back();
}

void MiniNet::backward_from_output(const Tensor& grad_output) {
  if (outputs_.empty()) throw std::logic_error("backward_from_output requires a cached forward pass");
  std::vector<Tensor> node_grads(nodes_.size());
  node_grads.back() = grad_output;

  auto accumulate = [&](int idx, Tensor&& g) {
    if (idx == kInput) return;  // gradient w.r.t. the network input is discarded
    Tensor& slot = node_grads[static_cast<std::size_t>(idx)];
    if (slot.numel() == 0)
      slot = std::move(g);
    else
      slot.array() += g.array();
  };

  for (int i = size() - 1; i >= 0; --i) {
    Tensor& gout = node_grads[static_cast<std::size_t>(i)];
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (gout.numel() == 0) {
      // Node feeds nothing that received gradient (cannot happen in the
      // builders' graphs, but keep backward total).
      gout = Tensor::zeros(outputs_[static_cast<std::size_t>(i)].shape());
    }
    if (node.op->is_binary()) {
      auto [da, db] = node.op->backward2(gout);
      accumulate(node.in0, std::move(da));
      accumulate(node.in1, std::move(db));
    } else {
      accumulate(node.in0, node.op->backward(gout));
    }
    gout = Tensor();  // free as we go
  }
}

std::vector<Tensor*> MiniNet::params() {
  std::vector<Tensor*> out;
  for (auto& n : nodes_)
    for (Tensor* t : n.op->params()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> MiniNet::params() const {
  std::vector<const Tensor*> out;
  for (const auto& n : nodes_)
    for (const Tensor* t : static_cast<const Layer&>(*n.op).params()) out.push_back(t);
  return out;
}

std::vector<Tensor*> MiniNet::grads() {
  std::vector<Tensor*> out;
  for (auto& n : nodes_)
    for (Tensor* t : n.op->grads()) out.push_back(t);
  return out;
}

std::vector<Tensor*> MiniNet::buffers() {
  std::vector<Tensor*> out;
  for (auto& n : nodes_)
    for (Tensor* t : n.op->buffers()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> MiniNet::buffers() const {
  std::vector<const Tensor*> out;
  for (const auto& n : nodes_)
    for (const Tensor* t : static_cast<const Layer&>(*n.op).buffers()) out.push_back(t);
  return out;
}

void MiniNet::zero_grads() {
  for (auto& n : nodes_) n.op->zero_grads();
}

Eigen::Index MiniNet::param_count() const {
  Eigen::Index n = 0;
  for (const Tensor* t : params()) n += t->numel();
  return n;
}

nlohmann::json MiniNet::arch() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_)
    nodes.push_back({{"op", n.op->config()}, {"in0", n.in0}, {"in1", n.in1}});
  return {{"nodes", nodes}};
}

MiniNet MiniNet::from_arch(const nlohmann::json& arch) {
  MiniNet net;
  for (const auto& jn : arch.at("nodes"))
    net.add(layer_from_config(jn.at("op")), jn.at("in0").get<int>(), jn.at("in1").get<int>());
  return net;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kProbClamp = 1e-12;

void check_targets(const Tensor& probs, const std::vector<long>& targets) {
  const Eigen::Index N = probs.dim(0), C = probs.dim(1);
  const Eigen::Index P = probs.numel() / (N * C);
  if (static_cast<Eigen::Index>(targets.size()) != N * P)
    throw std::invalid_argument("target count " + std::to_string(targets.size()) + " does not match " +
                                std::to_string(N * P) + " output positions");
  for (long t : targets)
    if (t < 0 || t >= C) throw std::out_of_range("target index " + std::to_string(t) + " out of range");
}

}  // namespace

double cross_entropy(const Tensor& probs, const std::vector<long>& targets) {
  check_targets(probs, targets);
  const Eigen::Index N = probs.dim(0), C = probs.dim(1);
  const Eigen::Index P = probs.numel() / (N * C);
  double loss = 0.0;
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index p = 0; p < P; ++p) {
      const long t = targets[static_cast<std::size_t>(n * P + p)];
      loss -= std::log(std::max(probs[(n * C + t) * P + p], kProbClamp));
    }
  return loss / static_cast<double>(N * P);
}

Tensor cross_entropy_grad(const Tensor& probs, const std::vector<long>& targets) {
  check_targets(probs, targets);
  const Eigen::Index N = probs.dim(0), C = probs.dim(1);
  const Eigen::Index P = probs.numel() / (N * C);
  Tensor grad = Tensor::zeros(probs.shape());
  const double scale = 1.0 / static_cast<double>(N * P);
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index p = 0; p < P; ++p) {
      const long t = targets[static_cast<std::size_t>(n * P + p)];
      const Eigen::Index i = (n * C + t) * P + p;
      grad[i] = -scale / std::max(probs[i], kProbClamp);
    }
  return grad;
}

Tensor forward(MiniNet& net, const Tensor& batch, bool training) {
  return net.forward(batch, training ? Phase::train : Phase::eval);
}

std::vector<Tensor> backward(MiniNet& net, const Tensor& batch, const std::vector<long>& targets) {
  net.zero_grads();
  const Tensor probs = net.forward(batch, Phase::train);
  net.backward_from_output(cross_entropy_grad(probs, targets));
  std::vector<Tensor> out;
  for (Tensor* g : net.grads()) out.push_back(*g);
  return out;
}

void adam_step(MiniNet& net, const std::vector<Tensor>& gradients, const AdamConfig& config) {
  config.validate();
  auto params = net.params();
  if (gradients.size() != params.size()) throw std::invalid_argument("gradient/parameter count mismatch");
  AdamState& st = net.adam_state();
  if (st.m.empty()) {
    for (Tensor* p : params) {
      st.m.push_back(Tensor::zeros(p->shape()));
      st.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = gradients[i];
    if (!g.same_shape(*params[i])) throw std::invalid_argument("gradient shape mismatch at parameter " + std::to_string(i));
    Array& m = st.m[i].array();
    Array& v = st.v[i].array();
    m = config.beta1 * m + (1.0 - config.beta1) * g.array();
    v = config.beta2 * v + (1.0 - config.beta2) * g.array().square();
    params[i]->array() -=
        config.learning_rate * (m / bc1) / ((v / bc2).sqrt() + config.epsilon);
  }
}

void adam_step(MiniNet& net, const AdamConfig& config) {
  std::vector<Tensor> grads;
  for (Tensor* g : net.grads()) grads.push_back(*g);
  adam_step(net, grads, config);
}

}  // namespace oct::nn
