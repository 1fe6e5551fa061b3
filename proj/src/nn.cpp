#include "comma/nn.hpp"

#include <cmath>

#include "comma/errors.hpp"

namespace comma::nn {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    if (logits.size() == 0) throw contract_error("softmax over empty logits");
    const double shift = logits.maxCoeff();
    Eigen::VectorXd out = (logits.array() - shift).exp();
    const double z = out.sum();
    if (!(z > 0.0) || !std::isfinite(z)) {
        throw numeric_error("softmax normalizer is not finite");
    }
    return out / z;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
    if (logits.size() == 0) throw contract_error("softmax over empty logits");
    const double shift = logits.maxCoeff();
    const Eigen::ArrayXd shifted = logits.array() - shift;
    const double log_z = std::log(shifted.exp().sum());
    if (!std::isfinite(log_z)) {
        throw numeric_error("softmax normalizer is not finite");
    }
    return (shifted - log_z).matrix();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            out(r, c) = (2.0 * rng.unit() - 1.0) * limit;
        }
    }
    return out;
}

double clip_global_norm(const std::vector<Eigen::MatrixXd*>& grads,
                        double max_norm) {
    double sq = 0.0;
    for (const auto* g : grads) sq += g->squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        throw numeric_error("gradient norm is not finite");
    }
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto* g : grads) *g *= scale;
    }
    return norm;
}

double warmup_scale(long long step, long long total_steps, double warmup_frac) {
    const auto warm =
        static_cast<long long>(warmup_frac * static_cast<double>(total_steps));
    if (warm <= 0 || step >= warm) return 1.0;
    return static_cast<double>(step + 1) / static_cast<double>(warm);
}

void Adam::step(const std::string& name, Eigen::MatrixXd& param,
                const Eigen::MatrixXd& grad, double lr_scale) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
        throw contract_error("adam gradient shape mismatch for " + name);
    }
    Slot& slot = slots_[name];
    if (slot.m.size() == 0) {
        slot.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
        slot.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    }
    ++slot.t;
    slot.m = beta1_ * slot.m + (1.0 - beta1_) * grad;
    slot.v = beta2_ * slot.v.array().matrix() +
             (1.0 - beta2_) * grad.array().square().matrix();
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
    const Eigen::ArrayXXd m_hat = slot.m.array() / bias1;
    const Eigen::ArrayXXd v_hat = slot.v.array() / bias2;
    param.array() -= lr_ * lr_scale * m_hat / (v_hat.sqrt() + eps_);
}

}  // namespace comma::nn
