#include "fundus/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "fundus/error.hpp"

namespace fundus::nn {

namespace {

std::size_t product(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

void require_rank(const Tensor& x, int rank, const char* who) {
  if (x.rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects rank " +
                                              std::to_string(rank) + ", got " +
                                              std::to_string(x.rank()));
  }
}

void init_uniform(std::vector<double>& w, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : w) v = dist(rng);
}

}  // namespace

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)) {
  data.assign(product(shape), fill);
}

std::vector<const Parameter*> Layer::parameters() const {
  auto mut = const_cast<Layer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(int in_channels, int filter, int num_filters, int padding, int stride, bool relu,
               Rng& init)
    : in_channels_(in_channels),
      filter_(filter),
      num_filters_(num_filters),
      padding_(padding),
      stride_(stride),
      relu_(relu) {
  const std::size_t n = static_cast<std::size_t>(filter) * filter * in_channels * num_filters;
  weight_.value.resize(n);
  weight_.grad.assign(n, 0.0);
  const double fan_in = static_cast<double>(filter) * filter * in_channels;
  init_uniform(weight_.value, std::sqrt(6.0 / fan_in), init);
  bias_.value.assign(num_filters, 0.0);
  bias_.grad.assign(num_filters, 0.0);
}

Tensor Conv2D::apply(const Tensor& x) const {
  require_rank(x, 4, "conv");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (c != in_channels_) {
    throw Error(ErrorCode::ShapeMismatch, "conv expects " + std::to_string(in_channels_) +
                                              " channels, got " + std::to_string(c));
  }
  if (h + 2 * padding_ < filter_ || w + 2 * padding_ < filter_) {
    throw Error(ErrorCode::FilterTooLarge, "conv filter larger than padded input");
  }
  const int oh = (h + 2 * padding_ - filter_) / stride_ + 1;
  const int ow = (w + 2 * padding_ - filter_) / stride_ + 1;
  const int k = num_filters_;
  Tensor out({n, oh, ow, k});
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* acc = &out.data[((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * k];
        std::copy(bias_.value.begin(), bias_.value.end(), acc);
        for (int fy = 0; fy < filter_; ++fy) {
          const int iy = oy * stride_ + fy - padding_;
          if (iy < 0 || iy >= h) continue;
          for (int fx = 0; fx < filter_; ++fx) {
            const int ix = ox * stride_ + fx - padding_;
            if (ix < 0 || ix >= w) continue;
            const double* in = &x.data[((static_cast<std::size_t>(b) * h + iy) * w + ix) * c];
            const double* wrow = &weight_.value[(static_cast<std::size_t>(fy) * filter_ + fx) * c * k];
            for (int ci = 0; ci < c; ++ci) {
              const double v = in[ci];
              if (v == 0.0) continue;
              const double* wk = wrow + static_cast<std::size_t>(ci) * k;
              for (int ki = 0; ki < k; ++ki) acc[ki] += v * wk[ki];
            }
          }
        }
        if (relu_) {
          for (int ki = 0; ki < k; ++ki) acc[ki] = std::max(acc[ki], 0.0);
        }
      }
    }
  }
  return out;
}

Tensor Conv2D::forward(const Tensor& x, Rng&) {
  input_ = x;
  output_ = apply(x);
  return output_;
}

Tensor Conv2D::backward(const Tensor& grad_out, bool need_input_grad) {
  const int n = input_.dim(0), h = input_.dim(1), w = input_.dim(2), c = input_.dim(3);
  const int oh = output_.dim(1), ow = output_.dim(2), k = num_filters_;
  Tensor grad_in;
  if (need_input_grad) grad_in = Tensor(input_.shape);
  std::vector<double> g(k);
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const std::size_t o = ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * k;
        bool any = false;
        for (int ki = 0; ki < k; ++ki) {
          g[ki] = (relu_ && output_.data[o + ki] <= 0.0) ? 0.0 : grad_out.data[o + ki];
          any = any || g[ki] != 0.0;
        }
        if (!any) continue;
        for (int ki = 0; ki < k; ++ki) bias_.grad[ki] += g[ki];
        for (int fy = 0; fy < filter_; ++fy) {
          const int iy = oy * stride_ + fy - padding_;
          if (iy < 0 || iy >= h) continue;
          for (int fx = 0; fx < filter_; ++fx) {
            const int ix = ox * stride_ + fx - padding_;
            if (ix < 0 || ix >= w) continue;
            const std::size_t in_off = ((static_cast<std::size_t>(b) * h + iy) * w + ix) * c;
            const std::size_t w_off = (static_cast<std::size_t>(fy) * filter_ + fx) * c * k;
            for (int ci = 0; ci < c; ++ci) {
              const double v = input_.data[in_off + ci];
              double* dw = &weight_.grad[w_off + static_cast<std::size_t>(ci) * k];
              const double* wk = &weight_.value[w_off + static_cast<std::size_t>(ci) * k];
              double dx = 0.0;
              for (int ki = 0; ki < k; ++ki) {
                dw[ki] += v * g[ki];
                dx += wk[ki] * g[ki];
              }
              if (need_input_grad) grad_in.data[in_off + ci] += dx;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// MaxPool2D

Tensor MaxPool2D::pool(const Tensor& x, std::vector<std::size_t>* argmax) const {
  require_rank(x, 4, "max_pool");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h < window_ || w < window_) throw Error(ErrorCode::WindowTooLarge, "pool window larger than input");
  const int oh = (h - window_) / stride_ + 1;
  const int ow = (w - window_) / stride_ + 1;
  Tensor out({n, oh, ow, c});
  if (argmax) argmax->assign(out.numel(), 0);
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ci = 0; ci < c; ++ci) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (int fy = 0; fy < window_; ++fy) {
            for (int fx = 0; fx < window_; ++fx) {
              const std::size_t idx =
                  ((static_cast<std::size_t>(b) * h + oy * stride_ + fy) * w + ox * stride_ + fx) * c + ci;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t o = ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * c + ci;
          out.data[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2D::apply(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool2D::forward(const Tensor& x, Rng&) {
  input_shape_ = x.shape;
  return pool(x, &argmax_);
}

Tensor MaxPool2D::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor grad_in(input_shape_);
  for (std::size_t o = 0; o < grad_out.numel(); ++o) grad_in.data[argmax_[o]] += grad_out.data[o];
  return grad_in;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::apply(const Tensor& x) const {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor out({n, c});
  for (int b = 0; b < n; ++b) {
    for (int p = 0; p < hw; ++p) {
      const double* in = &x.data[(static_cast<std::size_t>(b) * hw + p) * c];
      for (int ci = 0; ci < c; ++ci) out.data[static_cast<std::size_t>(b) * c + ci] += in[ci];
    }
    for (int ci = 0; ci < c; ++ci) out.data[static_cast<std::size_t>(b) * c + ci] /= hw;
  }
  return out;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Rng&) {
  input_shape_ = x.shape;
  return apply(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor grad_in(input_shape_);
  const int n = input_shape_[0], hw = input_shape_[1] * input_shape_[2], c = input_shape_[3];
  for (int b = 0; b < n; ++b) {
    for (int p = 0; p < hw; ++p) {
      for (int ci = 0; ci < c; ++ci) {
        grad_in.data[(static_cast<std::size_t>(b) * hw + p) * c + ci] =
            grad_out.data[static_cast<std::size_t>(b) * c + ci] / hw;
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Flatten

Tensor Flatten::apply(const Tensor& x) const {
  Tensor out = x;
  out.shape = {x.dim(0), static_cast<int>(x.numel() / std::max(1, x.dim(0)))};
  return out;
}

Tensor Flatten::forward(const Tensor& x, Rng&) {
  input_shape_ = x.shape;
  return apply(x);
}

Tensor Flatten::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor grad_in = grad_out;
  grad_in.shape = input_shape_;
  return grad_in;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(int in, int out, Activation act, double l2, Rng& init) : in_(in), out_(out), act_(act) {
  weight_.value.resize(static_cast<std::size_t>(in) * out);
  weight_.grad.assign(weight_.value.size(), 0.0);
  weight_.l2 = l2;
  // He-uniform ahead of ReLU, Glorot-uniform otherwise.
  const double limit = act == Activation::Relu ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
  init_uniform(weight_.value, limit, init);
  bias_.value.assign(out, 0.0);
  bias_.grad.assign(out, 0.0);
}

std::string Dense::kind() const {
  switch (act_) {
    case Activation::Relu: return "dense_relu";
    case Activation::Sigmoid: return "dense_sigmoid";
    case Activation::Linear: break;
  }
  return "dense";
}

Tensor Dense::apply(const Tensor& x) const {
  require_rank(x, 2, "dense");
  if (x.dim(1) != in_) {
    throw Error(ErrorCode::ShapeMismatch, "dense expects " + std::to_string(in_) +
                                              " features, got " + std::to_string(x.dim(1)));
  }
  const int n = x.dim(0);
  Tensor out({n, out_});
  for (int b = 0; b < n; ++b) {
    double* o = &out.data[static_cast<std::size_t>(b) * out_];
    std::copy(bias_.value.begin(), bias_.value.end(), o);
    for (int i = 0; i < in_; ++i) {
      const double v = x.data[static_cast<std::size_t>(b) * in_ + i];
      const double* wrow = &weight_.value[static_cast<std::size_t>(i) * out_];
      for (int j = 0; j < out_; ++j) o[j] += v * wrow[j];
    }
    for (int j = 0; j < out_; ++j) {
      if (act_ == Activation::Relu) o[j] = std::max(o[j], 0.0);
      else if (act_ == Activation::Sigmoid) o[j] = sigmoid(o[j]);
    }
  }
  return out;
}

Tensor Dense::forward(const Tensor& x, Rng&) {
  input_ = x;
  output_ = apply(x);
  return output_;
}

Tensor Dense::backward(const Tensor& grad_out, bool need_input_grad) {
  const int n = input_.dim(0);
  Tensor grad_in;
  if (need_input_grad) grad_in = Tensor({n, in_});
  std::vector<double> g(out_);
  for (int b = 0; b < n; ++b) {
    for (int j = 0; j < out_; ++j) {
      const double y = output_.data[static_cast<std::size_t>(b) * out_ + j];
      double d = grad_out.data[static_cast<std::size_t>(b) * out_ + j];
      if (act_ == Activation::Relu && y <= 0.0) d = 0.0;
      else if (act_ == Activation::Sigmoid) d *= y * (1.0 - y);
      g[j] = d;
      bias_.grad[j] += d;
    }
    for (int i = 0; i < in_; ++i) {
      const double v = input_.data[static_cast<std::size_t>(b) * in_ + i];
      double* dw = &weight_.grad[static_cast<std::size_t>(i) * out_];
      const double* wrow = &weight_.value[static_cast<std::size_t>(i) * out_];
      double dx = 0.0;
      for (int j = 0; j < out_; ++j) {
        dw[j] += v * g[j];
        dx += wrow[j] * g[j];
      }
      if (need_input_grad) grad_in.data[static_cast<std::size_t>(b) * in_ + i] = dx;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (rate < 0.0 || rate >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout rate must lie in [0,1)");
}

Tensor Dropout::forward(const Tensor& x, Rng& rng) {
  mask_.assign(x.numel(), 1.0);
  if (rate_ == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  Tensor out = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask_[i] = keep(rng) ? scale : 0.0;
    out.data[i] *= mask_[i];
  }
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.numel(); ++i) grad_in.data[i] *= mask_[i];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Sequential

void Sequential::add(std::unique_ptr<Layer> layer, bool trainable) {
  layers_.push_back(std::move(layer));
  trainable_.push_back(trainable);
}

Tensor Sequential::apply(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->apply(h);
  return h;
}

Tensor Sequential::forward(const Tensor& x, Rng& rng) {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->forward(h, rng);
  return h;
}

void Sequential::backward(const Tensor& grad_out) {
  const auto first = std::find(trainable_.begin(), trainable_.end(), true);
  if (first == trainable_.end()) return;
  const auto lowest = static_cast<std::size_t>(first - trainable_.begin());
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > lowest;) {
    g = layers_[i]->backward(g, i > lowest);
  }
}

void Sequential::zero_grad() {
  for (Parameter* p : all_parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<std::string> Sequential::kinds() const {
  std::vector<std::string> out;
  for (const auto& layer : layers_) out.push_back(layer->kind());
  return out;
}

std::vector<Parameter*> Sequential::trainable_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!trainable_[i]) continue;
    for (Parameter* p : layers_[i]->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> Sequential::all_parameters() {
  std::vector<Parameter*> out;
  for (const auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> Sequential::all_parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_) {
    for (const Parameter* p : std::as_const(*layer).parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : all_parameters()) n += p->value.size();
  return n;
}

std::vector<double> Sequential::snapshot() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Parameter* p : all_parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void Sequential::restore(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorCode::CheckpointMismatch, "expected " + std::to_string(parameter_count()) +
                                                   " parameters, got " + std::to_string(values.size()));
  }
  std::size_t off = 0;
  for (Parameter* p : all_parameters()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.begin());
    off += p->value.size();
  }
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + 2.0 * p.l2 * p.value[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

double l2_penalty(const std::vector<Parameter*>& params) {
  double total = 0.0;
  for (const Parameter* p : params) {
    if (p->l2 == 0.0) continue;
    double sq = 0.0;
    for (double w : p->value) sq += w * w;
    total += p->l2 * sq;
  }
  return total;
}

}  // namespace fundus::nn
