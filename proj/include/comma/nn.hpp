#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "comma/rng.hpp"

namespace comma::nn {

// Numerically stable exponential normalization.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Log-probabilities via the same max-shift trick.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

double sigmoid(double x);

// Uniform Glorot initialization over [-limit, limit].
Eigen::MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Scales all gradients in place when their joint L2 norm exceeds max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<Eigen::MatrixXd*>& grads,
                        double max_norm);

// Linear warm-up from 0 to 1 over the first warmup_frac share of the step
// budget, flat afterwards.
double warmup_scale(long long step, long long total_steps, double warmup_frac);

// Adam with per-tensor state keyed by name; every trainable tensor is a
// MatrixXd (vectors as single-column matrices).
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::string& name, Eigen::MatrixXd& param,
              const Eigen::MatrixXd& grad, double lr_scale = 1.0);

private:
    struct Slot {
        Eigen::MatrixXd m;
        Eigen::MatrixXd v;
        long long t = 0;
    };

    double lr_, beta1_, beta2_, eps_;
    std::map<std::string, Slot> slots_;
};

}  // namespace comma::nn
