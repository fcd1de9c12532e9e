#include "gsvr/optim.hpp"

#include <cmath>

#include "gsvr/types.hpp"

namespace gsvr {

void adamw_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                  double lr, const AdamWConfig& cfg) {
  if (grads.size() != params.size() || moments.m.size() != params.size() ||
      moments.v.size() != params.size()) {
    throw InvalidParameter("adamw_update: parameter, gradient and moment shapes differ");
  }
  ++moments.step;
  const double t = static_cast<double>(moments.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    params[i] -= lr * cfg.weight_decay * params[i];
    moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
    moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

double lr_at(int epoch, double base, const StepSchedule& schedule) {
  if (epoch < 0) throw InvalidParameter("lr_at: epoch must be >= 0");
  if (schedule.every <= 0) throw InvalidParameter("lr_at: schedule period must be positive");
  return base * std::pow(schedule.factor, epoch / schedule.every);
}

}  // namespace gsvr
