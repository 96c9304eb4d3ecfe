#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace phlie {

enum class OptimizerKind { adam, ranger };

std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

/// First-order update on a flat parameter vector.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<double>& theta, const std::vector<double>& grad, double lr) = 0;

  static std::unique_ptr<Optimizer> make(OptimizerKind kind, std::size_t n);
};

class Adam : public Optimizer {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<double>& theta, const std::vector<double>& grad, double lr) override;

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

/// RAdam (variance-rectified warmup) wrapped in Lookahead.
class Ranger : public Optimizer {
 public:
  explicit Ranger(std::size_t n, std::size_t k = 6, double alpha = 0.5, double beta1 = 0.95, double beta2 = 0.999,
                  double eps = 1e-5);
  void step(std::vector<double>& theta, const std::vector<double>& grad, double lr) override;

 private:
  std::size_t k_;
  double alpha_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_, slow_;
  bool slow_init_ = false;
};

}  // namespace phlie
