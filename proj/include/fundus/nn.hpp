#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fundus/random.hpp"

namespace fundus::nn {

// Dense row-major tensor. Images are NHWC, feature batches are (N, D).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);

  std::size_t numel() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }
};

struct Parameter {
  std::vector<double> value;
  std::vector<double> grad;
  // Coefficient of l2 * sum(w^2) added to the objective.
  double l2 = 0.0;
};

enum class Activation { Linear, Relu, Sigmoid };

class Layer {
 public:
  virtual ~Layer() = default;

  // Structural tag, e.g. "conv_relu", "max_pool", "dense_relu", "dropout".
  virtual std::string kind() const = 0;

  // Stateless inference (dropout is the identity). Safe for concurrent callers.
  virtual Tensor apply(const Tensor& x) const = 0;

  // Training-mode forward; caches what backward needs.
  virtual Tensor forward(const Tensor& x, Rng& rng) = 0;

  // Accumulates parameter gradients; returns dL/dx only when `need_input_grad`.
  virtual Tensor backward(const Tensor& grad_out, bool need_input_grad) = 0;

  virtual std::vector<Parameter*> parameters() { return {}; }
  std::vector<const Parameter*> parameters() const;
};

class Conv2D final : public Layer {
 public:
  Conv2D(int in_channels, int filter, int num_filters, int padding, int stride, bool relu, Rng& init);

  std::string kind() const override { return relu_ ? "conv_relu" : "conv"; }
  Tensor apply(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  int in_channels_, filter_, num_filters_, padding_, stride_;
  bool relu_;
  Parameter weight_;  // [F][F][Cin][K]
  Parameter bias_;    // [K]
  Tensor input_, output_;
};

class MaxPool2D final : public Layer {
 public:
  MaxPool2D(int window, int stride) : window_(window), stride_(stride) {}

  std::string kind() const override { return "max_pool"; }
  Tensor apply(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;

 private:
  Tensor pool(const Tensor& x, std::vector<std::size_t>* argmax) const;

  int window_, stride_;
  std::vector<int> input_shape_;
  std::vector<std::size_t> argmax_;
};

// (N, H, W, C) -> (N, C)
class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor apply(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;

 private:
  std::vector<int> input_shape_;
};

// (N, ...) -> (N, prod(...))
class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor apply(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;

 private:
  std::vector<int> input_shape_;
};

class Dense final : public Layer {
 public:
  Dense(int in, int out, Activation act, double l2, Rng& init);

  std::string kind() const override;
  Tensor apply(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }

 private:
  int in_, out_;
  Activation act_;
  Parameter weight_;  // [in][out]
  Parameter bias_;    // [out]
  Tensor input_, output_;
};

// Inverted dropout: kept units are scaled by 1/(1-rate) during training.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);

  std::string kind() const override { return "dropout"; }
  Tensor apply(const Tensor& x) const override { return x; }
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;

  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  std::vector<double> mask_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer, bool trainable = true);

  Tensor apply(const Tensor& x) const;
  Tensor forward(const Tensor& x, Rng& rng);
  // Backpropagates down to the lowest trainable layer.
  void backward(const Tensor& grad_out);
  void zero_grad();

  std::size_t size() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  bool trainable(std::size_t i) const { return trainable_.at(i); }
  void set_trainable(std::size_t i, bool on) { trainable_.at(i) = on; }
  std::vector<std::string> kinds() const;

  // Parameters of trainable layers only.
  std::vector<Parameter*> trainable_parameters();
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;
  std::size_t parameter_count() const;

  // Flat copy of every parameter value, in layer order.
  std::vector<double> snapshot() const;
  void restore(std::span<const double> values);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<bool> trainable_;
};

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  // Adds the L2 gradient (2 * l2 * w) then takes one Adam step on each parameter.
  void step(const std::vector<Parameter*>& params);

 private:
  AdamOptions options_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double sigmoid(double z) noexcept;

// Sum over parameters of l2 * ||w||^2.
double l2_penalty(const std::vector<Parameter*>& params);

}  // namespace fundus::nn
