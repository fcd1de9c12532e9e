#pragma once

#include <span>
#include <vector>

namespace gsvr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moments of one parameter group and its step counter.
struct AdamMoments {
  std::vector<double> m, v;
  long step = 0;

  explicit AdamMoments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW step with bias correction and decoupled weight decay:
///   theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)
void adamw_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                  double lr, const AdamWConfig& cfg);

struct StepSchedule {
  double factor = 0.5;
  int every = 200;
};

/// base * factor^floor(epoch / every)
double lr_at(int epoch, double base, const StepSchedule& schedule = {});

}  // namespace gsvr
