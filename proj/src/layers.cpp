#include "octlesion/layers.hpp"

#include <cmath>
#include <utility>

namespace oct::nn {

namespace {

using Eigen::Index;
using ColsMatrix = Eigen::MatrixXd;  // column-major: one kernel-offset column is contiguous

void im2col2d(const double* x, Index C, Index H, Index W, Index k, Index pad, ColsMatrix& cols) {
  const Index P = H * W;
  cols.resize(P, C * k * k);
  for (Index ci = 0; ci < C; ++ci) {
    const double* xc = x + ci * P;
    for (Index kr = 0; kr < k; ++kr) {
      for (Index kc = 0; kc < k; ++kc) {
        double* col = cols.col((ci * k + kr) * k + kc).data();
        for (Index r = 0; r < H; ++r) {
          const Index rs = r + kr - pad;
          double* dst = col + r * W;
          if (rs < 0 || rs >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = xc + rs * W;
          for (Index c = 0; c < W; ++c) {
            const Index cs = c + kc - pad;
            dst[c] = (cs < 0 || cs >= W) ? 0.0 : src[cs];
          }
        }
      }
    }
  }
}

void col2im2d(const ColsMatrix& cols, Index C, Index H, Index W, Index k, Index pad, double* dx) {
  const Index P = H * W;
  for (Index ci = 0; ci < C; ++ci) {
    double* xc = dx + ci * P;
    for (Index kr = 0; kr < k; ++kr) {
      for (Index kc = 0; kc < k; ++kc) {
        const double* col = cols.col((ci * k + kr) * k + kc).data();
        for (Index r = 0; r < H; ++r) {
          const Index rs = r + kr - pad;
          if (rs < 0 || rs >= H) continue;
          const double* src = col + r * W;
          double* dst = xc + rs * W;
          for (Index c = 0; c < W; ++c) {
            const Index cs = c + kc - pad;
            if (cs >= 0 && cs < W) dst[cs] += src[c];
          }
        }
      }
    }
  }
}

void im2col3d(const double* x, Index C, Index D, Index H, Index W, Index k, Index pad, ColsMatrix& cols) {
  const Index P = D * H * W;
  cols.resize(P, C * k * k * k);
  for (Index ci = 0; ci < C; ++ci) {
    const double* xc = x + ci * P;
    for (Index kd = 0; kd < k; ++kd) {
      for (Index kr = 0; kr < k; ++kr) {
        for (Index kc = 0; kc < k; ++kc) {
          double* col = cols.col(((ci * k + kd) * k + kr) * k + kc).data();
          for (Index d = 0; d < D; ++d) {
            const Index ds = d + kd - pad;
            for (Index r = 0; r < H; ++r) {
              const Index rs = r + kr - pad;
              double* dst = col + (d * H + r) * W;
              if (ds < 0 || ds >= D || rs < 0 || rs >= H) {
                std::fill(dst, dst + W, 0.0);
                continue;
              }
              const double* src = xc + (ds * H + rs) * W;
              for (Index c = 0; c < W; ++c) {
                const Index cs = c + kc - pad;
                dst[c] = (cs < 0 || cs >= W) ? 0.0 : src[cs];
              }
            }
          }
        }
      }
    }
  }
}

void col2im3d(const ColsMatrix& cols, Index C, Index D, Index H, Index W, Index k, Index pad, double* dx) {
  const Index P = D * H * W;
  for (Index ci = 0; ci < C; ++ci) {
    double* xc = dx + ci * P;
    for (Index kd = 0; kd < k; ++kd) {
      for (Index kr = 0; kr < k; ++kr) {
        for (Index kc = 0; kc < k; ++kc) {
          const double* col = cols.col(((ci * k + kd) * k + kr) * k + kc).data();
          for (Index d = 0; d < D; ++d) {
            const Index ds = d + kd - pad;
            if (ds < 0 || ds >= D) continue;
            for (Index r = 0; r < H; ++r) {
              const Index rs = r + kr - pad;
              if (rs < 0 || rs >= H) continue;
              const double* src = col + (d * H + r) * W;
              double* dst = xc + (ds * H + rs) * W;
              for (Index c = 0; c < W; ++c) {
                const Index cs = c + kc - pad;
                if (cs >= 0 && cs < W) dst[cs] += src[c];
              }
            }
          }
        }
      }
    }
  }
}

Index spatial_count(const Tensor& x) {
  Index p = 1;
  for (int i = 2; i < x.rank(); ++i) p *= x.dim(i);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv

Conv::Conv(int spatial_rank, long in_ch, long out_ch, long kernel)
    : spatial_rank_(spatial_rank), in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), pad_(kernel / 2) {
  if (spatial_rank != 2 && spatial_rank != 3) throw std::invalid_argument("conv spatial rank must be 2 or 3");
  if (in_ch < 1 || out_ch < 1 || kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("conv needs positive channels and an odd kernel");
  Index kvol = 1;
  for (int i = 0; i < spatial_rank; ++i) kvol *= kernel;
  weight = Tensor::zeros({out_ch, in_ch * kvol});
  bias = Tensor::zeros({out_ch});
  dweight = Tensor::zeros(weight.shape());
  dbias = Tensor::zeros(bias.shape());
}

void Conv::init_he(Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(weight.dim(1)));
  for (Index i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, std_dev);
  bias.set_zero();
}

void Conv::check_input(const Tensor& x) const {
  if (x.rank() != spatial_rank_ + 2 || x.dim(1) != in_ch_)
    throw std::invalid_argument("conv input shape mismatch: got " + x.shape_string() + " for " + type() +
                                " with in_ch " + std::to_string(in_ch_));
}

Tensor Conv::run(const Tensor& x) const {
  check_input(x);
  const Index N = x.dim(0), P = spatial_count(x);
  std::vector<Index> out_shape = x.shape();
  out_shape[1] = out_ch_;
  Tensor out = Tensor::zeros(out_shape);

  ConstMatMap w = weight.mat(out_ch_, weight.dim(1));
  Eigen::Map<const Eigen::VectorXd> b(bias.data(), out_ch_);
  ColsMatrix cols;
  for (Index n = 0; n < N; ++n) {
    const double* xn = x.data() + n * in_ch_ * P;
    if (spatial_rank_ == 2)
      im2col2d(xn, in_ch_, x.dim(2), x.dim(3), kernel_, pad_, cols);
    else
      im2col3d(xn, in_ch_, x.dim(2), x.dim(3), x.dim(4), kernel_, pad_, cols);
    MatMap out_n(out.data() + n * out_ch_ * P, out_ch_, P);
    out_n.noalias() = w * cols.transpose();
    out_n.colwise() += b;
  }
  return out;
}

Tensor Conv::forward(const Tensor& x, Phase) {
  input_ = x;
  return run(x);
}

Tensor Conv::infer(const Tensor& x) const { return run(x); }

Tensor Conv::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const Index N = x.dim(0), P = spatial_count(x);
  Tensor dx = Tensor::zeros(x.shape());

  ConstMatMap w = std::as_const(weight).mat(out_ch_, weight.dim(1));
  MatMap dw = dweight.mat(out_ch_, weight.dim(1));
  Eigen::Map<Eigen::VectorXd> db(dbias.data(), out_ch_);
  ColsMatrix cols, dcols;
  for (Index n = 0; n < N; ++n) {
    const double* xn = x.data() + n * in_ch_ * P;
    if (spatial_rank_ == 2)
      im2col2d(xn, in_ch_, x.dim(2), x.dim(3), kernel_, pad_, cols);
    else
      im2col3d(xn, in_ch_, x.dim(2), x.dim(3), x.dim(4), kernel_, pad_, cols);
    ConstMatMap dy(grad_out.data() + n * out_ch_ * P, out_ch_, P);
    dw.noalias() += dy * cols;
    db.noalias() += dy.rowwise().sum();
    dcols.noalias() = dy.transpose() * w;  // (P, C_in*K)
    if (spatial_rank_ == 2)
      col2im2d(dcols, in_ch_, x.dim(2), x.dim(3), kernel_, pad_, dx.data() + n * in_ch_ * P);
    else
      col2im3d(dcols, in_ch_, x.dim(2), x.dim(3), x.dim(4), kernel_, pad_, dx.data() + n * in_ch_ * P);
  }
  return dx;
}

nlohmann::json Conv::config() const {
  return {{"type", type()}, {"in_ch", in_ch_}, {"out_ch", out_ch_}, {"kernel", kernel_}};
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(long channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma = Tensor::zeros({channels});
  gamma.array().setOnes();
  beta = Tensor::zeros({channels});
  dgamma = Tensor::zeros({channels});
  dbeta = Tensor::zeros({channels});
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::zeros({channels});
  running_var.array().setOnes();
}

Tensor BatchNorm::forward(const Tensor& x, Phase phase) {
  if (x.rank() < 2 || x.dim(1) != channels_)
    throw std::invalid_argument("batchnorm channel mismatch: got " + x.shape_string());
  if (phase == Phase::eval) return infer(x);

  const Index N = x.dim(0), P = spatial_count(x);
  const Index M = N * P;
  if (M < 2) throw std::invalid_argument("batchnorm training needs at least 2 values per channel");

  xhat_ = Tensor::zeros(x.shape());
  inv_std_.resize(channels_);
  per_channel_ = M;
  Tensor out = Tensor::zeros(x.shape());

  for (Index c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> blk(x.data() + (n * channels_ + c) * P, P);
      sum += blk.sum();
    }
    const double mean = sum / static_cast<double>(M);
    double sq = 0.0;  // two-pass variance: no cancellation against the mean
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> blk(x.data() + (n * channels_ + c) * P, P);
      sq += (blk - mean).square().sum();
    }
    const double var = std::max(0.0, sq / static_cast<double>(M));
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean;
    running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * var;
    const double g = gamma[c], bt = beta[c];
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> blk(x.data() + (n * channels_ + c) * P, P);
      Eigen::Map<Array> xh(xhat_.data() + (n * channels_ + c) * P, P);
      Eigen::Map<Array> y(out.data() + (n * channels_ + c) * P, P);
      xh = (blk - mean) * inv;
      y = g * xh + bt;
    }
  }
  return out;
}

Tensor BatchNorm::infer(const Tensor& x) const {
  if (x.rank() < 2 || x.dim(1) != channels_)
    throw std::invalid_argument("batchnorm channel mismatch: got " + x.shape_string());
  const Index N = x.dim(0), P = spatial_count(x);
  Tensor out = Tensor::zeros(x.shape());
  for (Index c = 0; c < channels_; ++c) {
    const double inv = 1.0 / std::sqrt(running_var[c] + eps_);
    const double g = gamma[c], bt = beta[c], mean = running_mean[c];
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> blk(x.data() + (n * channels_ + c) * P, P);
      Eigen::Map<Array> y(out.data() + (n * channels_ + c) * P, P);
      y = g * (blk - mean) * inv + bt;
    }
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  const Index N = grad_out.dim(0), P = spatial_count(grad_out);
  const double M = static_cast<double>(per_channel_);
  Tensor dx = Tensor::zeros(grad_out.shape());

  for (Index c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> dy(grad_out.data() + (n * channels_ + c) * P, P);
      Eigen::Map<const Array> xh(xhat_.data() + (n * channels_ + c) * P, P);
      sum_dy += dy.sum();
      sum_dy_xhat += (dy * xh).sum();
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const double mean_dy = sum_dy / M;
    const double mean_dy_xhat = sum_dy_xhat / M;
    const double scale = gamma[c] * inv_std_[c];
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Array> dy(grad_out.data() + (n * channels_ + c) * P, P);
      Eigen::Map<const Array> xh(xhat_.data() + (n * channels_ + c) * P, P);
      Eigen::Map<Array> d(dx.data() + (n * channels_ + c) * P, P);
      d = scale * (dy - mean_dy - xh * mean_dy_xhat);
    }
  }
  return dx;
}

nlohmann::json BatchNorm::config() const {
  return {{"type", "batchnorm"}, {"channels", channels_}, {"eps", eps_}, {"momentum", momentum_}};
}

// ---------------------------------------------------------------------------
// Relu

Tensor Relu::forward(const Tensor& x, Phase) {
  input_ = x;
  return infer(x);
}

Tensor Relu::infer(const Tensor& x) const {
  Tensor out = x;
  out.array() = out.array().max(0.0);
  return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  dx.array() *= (input_.array() > 0.0).cast<double>();
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool

Tensor MaxPool::run(const Tensor& x, std::vector<Eigen::Index>* argmax) const {
  if (x.rank() != spatial_rank_ + 2)
    throw std::invalid_argument("maxpool input rank mismatch: got " + x.shape_string());
  const Index N = x.dim(0), C = x.dim(1);
  std::vector<Index> out_shape{N, C};
  for (int i = 2; i < x.rank(); ++i) {
    const Index o = x.dim(i) / 2;
    if (o < 1) throw std::invalid_argument("spatial extent too small for pooling: " + x.shape_string());
    out_shape.push_back(o);
  }
  Tensor out = Tensor::zeros(out_shape);
  if (argmax) argmax->assign(static_cast<std::size_t>(out.numel()), 0);

  const Index D = spatial_rank_ == 3 ? x.dim(2) : 1;
  const Index H = x.dim(spatial_rank_ == 3 ? 3 : 2), W = x.dim(spatial_rank_ == 3 ? 4 : 3);
  const Index oD = spatial_rank_ == 3 ? out_shape[2] : 1;
  const Index oH = out_shape[spatial_rank_ == 3 ? 3 : 2], oW = out_shape[spatial_rank_ == 3 ? 4 : 3];
  const Index dD = spatial_rank_ == 3 ? 2 : 1;

  Index oi = 0;
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index base = (n * C + c) * D * H * W;
      for (Index od = 0; od < oD; ++od) {
        for (Index orr = 0; orr < oH; ++orr) {
          for (Index oc = 0; oc < oW; ++oc, ++oi) {
            double best = -std::numeric_limits<double>::infinity();
            Index best_idx = 0;
            for (Index kd = 0; kd < dD; ++kd) {
              for (Index kr = 0; kr < 2; ++kr) {
                for (Index kc = 0; kc < 2; ++kc) {
                  const Index idx = base + ((od * dD + kd) * H + (orr * 2 + kr)) * W + (oc * 2 + kc);
                  if (x[idx] > best) {
                    best = x[idx];
                    best_idx = idx;
                  }
                }
              }
            }
            out[oi] = best;
            if (argmax) (*argmax)[static_cast<std::size_t>(oi)] = best_idx;
          }
        }
      }
    }
  }
  return out;
}

Tensor MaxPool::forward(const Tensor& x, Phase) {
  input_shape_ = x.shape();
  return run(x, &argmax_);
}

Tensor MaxPool::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor MaxPool::backward(const Tensor& grad_out) {
  Tensor dx = Tensor::zeros(input_shape_);
  for (Index i = 0; i < grad_out.numel(); ++i) dx[argmax_[static_cast<std::size_t>(i)]] += grad_out[i];
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Phase) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  const Index N = x.dim(0), C = x.dim(1), P = spatial_count(x);
  Tensor out = Tensor::zeros({N, C});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      Eigen::Map<const Array> blk(x.data() + (n * C + c) * P, P);
      out[n * C + c] = blk.mean();
    }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx = Tensor::zeros(input_shape_);
  const Index N = input_shape_[0], C = input_shape_[1];
  const Index P = dx.numel() / (N * C);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      Eigen::Map<Array> blk(dx.data() + (n * C + c) * P, P);
      blk.setConstant(grad_out[n * C + c] / static_cast<double>(P));
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(long in_features, long out_features) : in_f_(in_features), out_f_(out_features) {
  if (in_features < 1 || out_features < 1) throw std::invalid_argument("dense needs positive feature counts");
  weight = Tensor::zeros({out_f_, in_f_});
  bias = Tensor::zeros({out_f_});
  dweight = Tensor::zeros(weight.shape());
  dbias = Tensor::zeros(bias.shape());
}

void Dense::init_he(Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_f_));
  for (Index i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, std_dev);
  bias.set_zero();
}

Tensor Dense::forward(const Tensor& x, Phase) {
  input_ = x;
  return infer(x);
}

Tensor Dense::infer(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_f_)
    throw std::invalid_argument("dense input shape mismatch: got " + x.shape_string());
  const Index N = x.dim(0);
  Tensor out = Tensor::zeros({N, out_f_});
  MatMap y = out.mat(N, out_f_);
  y.noalias() = x.mat(N, in_f_) * weight.mat(out_f_, in_f_).transpose();
  y.rowwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), out_f_).transpose();
  return out;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const Index N = input_.dim(0);
  ConstMatMap dy = grad_out.mat(N, out_f_);
  dweight.mat(out_f_, in_f_).noalias() += dy.transpose() * input_.mat(N, in_f_);
  Eigen::Map<Eigen::VectorXd>(dbias.data(), out_f_).noalias() += dy.colwise().sum().transpose();
  Tensor dx = Tensor::zeros(input_.shape());
  dx.mat(N, in_f_).noalias() = dy * weight.mat(out_f_, in_f_);
  return dx;
}

nlohmann::json Dense::config() const {
  return {{"type", "dense"}, {"in_features", in_f_}, {"out_features", out_f_}};
}

// ---------------------------------------------------------------------------
// Softmax

Tensor Softmax::forward(const Tensor& x, Phase) {
  Tensor out = infer(x);
  output_ = out;
  return out;
}

Tensor Softmax::infer(const Tensor& x) const {
  if (x.rank() < 2) throw std::invalid_argument("softmax needs at least (N, C)");
  const Index N = x.dim(0), C = x.dim(1), P = spatial_count(x);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> vals(static_cast<std::size_t>(C));
  for (Index n = 0; n < N; ++n) {
    for (Index p = 0; p < P; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index c = 0; c < C; ++c) {
        vals[static_cast<std::size_t>(c)] = x[(n * C + c) * P + p];
        mx = std::max(mx, vals[static_cast<std::size_t>(c)]);
      }
      double sum = 0.0;
      for (Index c = 0; c < C; ++c) {
        double& v = vals[static_cast<std::size_t>(c)];
        v = std::exp(v - mx);
        sum += v;
      }
      for (Index c = 0; c < C; ++c) out[(n * C + c) * P + p] = vals[static_cast<std::size_t>(c)] / sum;
    }
  }
  return out;
}

Tensor Softmax::backward(const Tensor& grad_out) {
  const Index N = output_.dim(0), C = output_.dim(1), P = spatial_count(output_);
  Tensor dx = Tensor::zeros(output_.shape());
  for (Index n = 0; n < N; ++n) {
    for (Index p = 0; p < P; ++p) {
      double dot = 0.0;
      for (Index c = 0; c < C; ++c) dot += grad_out[(n * C + c) * P + p] * output_[(n * C + c) * P + p];
      for (Index c = 0; c < C; ++c) {
        const Index i = (n * C + c) * P + p;
        dx[i] = output_[i] * (grad_out[i] - dot);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Upsample2d

Tensor Upsample2d::forward(const Tensor& x, Phase) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor Upsample2d::infer(const Tensor& x) const {
  if (x.rank() != 4) throw std::invalid_argument("upsample2d expects (N, C, H, W)");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({N, C, H * 2, W * 2});
  for (Index nc = 0; nc < N * C; ++nc) {
    const double* src = x.data() + nc * H * W;
    double* dst = out.data() + nc * H * W * 4;
    for (Index r = 0; r < H * 2; ++r) {
      const double* srow = src + (r / 2) * W;
      double* drow = dst + r * W * 2;
      for (Index c = 0; c < W * 2; ++c) drow[c] = srow[c / 2];
    }
  }
  return out;
}

Tensor Upsample2d::backward(const Tensor& grad_out) {
  Tensor dx = Tensor::zeros(input_shape_);
  const Index N = input_shape_[0], C = input_shape_[1], H = input_shape_[2], W = input_shape_[3];
  for (Index nc = 0; nc < N * C; ++nc) {
    const double* src = grad_out.data() + nc * H * W * 4;
    double* dst = dx.data() + nc * H * W;
    for (Index r = 0; r < H * 2; ++r) {
      const double* srow = src + r * W * 2;
      double* drow = dst + (r / 2) * W;
      for (Index c = 0; c < W * 2; ++c) drow[c / 2] += srow[c];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Concat

Tensor Concat::run(const Tensor& a, const Tensor& b) const {
  if (a.rank() != b.rank() || a.dim(0) != b.dim(0)) throw std::invalid_argument("concat input mismatch");
  for (int i = 2; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat spatial mismatch");
  const Index N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const Index Pa = a.numel() / N, Pb = b.numel() / N;
  std::vector<Index> out_shape = a.shape();
  out_shape[1] = Ca + Cb;
  Tensor out = Tensor::zeros(out_shape);
  for (Index n = 0; n < N; ++n) {
    std::copy(a.data() + n * Pa, a.data() + (n + 1) * Pa, out.data() + n * (Pa + Pb));
    std::copy(b.data() + n * Pb, b.data() + (n + 1) * Pb, out.data() + n * (Pa + Pb) + Pa);
  }
  return out;
}

Tensor Concat::forward2(const Tensor& a, const Tensor& b, Phase) {
  shape_a_ = a.shape();
  shape_b_ = b.shape();
  return run(a, b);
}

Tensor Concat::infer2(const Tensor& a, const Tensor& b) const { return run(a, b); }

std::pair<Tensor, Tensor> Concat::backward2(const Tensor& grad_out) {
  Tensor da = Tensor::zeros(shape_a_);
  Tensor db = Tensor::zeros(shape_b_);
  const Index N = shape_a_[0];
  const Index Pa = da.numel() / N, Pb = db.numel() / N;
  for (Index n = 0; n < N; ++n) {
    std::copy(grad_out.data() + n * (Pa + Pb), grad_out.data() + n * (Pa + Pb) + Pa, da.data() + n * Pa);
    std::copy(grad_out.data() + n * (Pa + Pb) + Pa, grad_out.data() + (n + 1) * (Pa + Pb), db.data() + n * Pb);
  }
  return {std::move(da), std::move(db)};
}

// ---------------------------------------------------------------------------

std::unique_ptr<Layer> layer_from_config(const nlohmann::json& cfg) {
  const std::string type = cfg.at("type").get<std::string>();
  if (type == "conv2d" || type == "conv3d")
    return std::make_unique<Conv>(type == "conv2d" ? 2 : 3, cfg.at("in_ch").get<long>(),
                                  cfg.at("out_ch").get<long>(), cfg.at("kernel").get<long>());
  if (type == "batchnorm")
    return std::make_unique<BatchNorm>(cfg.at("channels").get<long>(), cfg.value("eps", 1e-8),
                                       cfg.value("momentum", 0.1));
  if (type == "relu") return std::make_unique<Relu>();
  if (type == "maxpool2d") return std::make_unique<MaxPool>(2);
  if (type == "maxpool3d") return std::make_unique<MaxPool>(3);
  if (type == "global_avg_pool") return std::make_unique<GlobalAvgPool>();
  if (type == "dense")
    return std::make_unique<Dense>(cfg.at("in_features").get<long>(), cfg.at("out_features").get<long>());
  if (type == "softmax") return std::make_unique<Softmax>();
  if (type == "upsample2d") return std::make_unique<Upsample2d>();
  if (type == "concat") return std::make_unique<Concat>();
  throw std::invalid_argument("unknown layer type: " + type);
}

}  // namespace oct::nn
