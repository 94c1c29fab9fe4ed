#pragma once

#include "semid/model.hpp"

#include <numeric>
#include <vector>

namespace semid {

/// Neural output-error (NNOE) model: a multilayer perceptron with tanh
/// hidden layers and a linear output layer, fed with
/// [y_{t-1}, ..., y_{t-n}, u_t, ..., u_{t-n}].
///
/// Parameter flattening: layer by layer, the weight matrix (out x in,
/// row-major) followed by the bias vector.
class MlpModel final : public Model {
public:
    MlpModel(Index order, Index n_outputs, Index n_inputs, std::vector<Index> hidden)
        : order_(order), p_(n_outputs), q_(n_inputs), hidden_(std::move(hidden)) {
        if (order_ < 1 || p_ < 1 || q_ < 1) throw DimensionError("mlp: order and channel counts must be positive");
        for (Index w : hidden_)
            if (w < 1) throw DimensionError("mlp: hidden layer widths must be positive");
        widths_.push_back(input_width());
        widths_.insert(widths_.end(), hidden_.begin(), hidden_.end());
        widths_.push_back(p_);
        Index offset = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            offsets_.push_back(offset);
            offset += widths_[l] * widths_[l + 1] + widths_[l + 1];
        }
        n_params_ = offset;
    }

    std::string name() const override { return "mlp"; }
    Index order() const override { return order_; }
    Index n_outputs() const override { return p_; }
    Index n_inputs() const override { return q_; }
    Index n_params() const override { return n_params_; }

    Index input_width() const { return p_ * order_ + q_ * (order_ + 1); }
    const std::vector<Index>& hidden_widths() const { return hidden_; }

    /// Weights ~ N(0, 1/fan_in), biases zero.
    Vector initial_params(std::mt19937_64& rng) const override {
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector theta = Vector::Zero(n_params_);
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            const Index in = widths_[l], out = widths_[l + 1];
            const double sd = 1.0 / std::sqrt(static_cast<double>(in));
            for (Index i = 0; i < in * out; ++i) theta(offsets_[l] + i) = sd * normal(rng);
        }
        return theta;
    }

    /// Regressor in network order from oldest-first windows.
    Vector regressor(ConstRowBlock lagged, ConstRowBlock inputs) const {
        Vector x(input_width());
        Index pos = 0;
        for (Index k = 1; k <= order_; ++k, pos += p_) x.segment(pos, p_) = lagged.row(order_ - k).transpose();
        for (Index k = 0; k <= order_; ++k, pos += q_) x.segment(pos, q_) = inputs.row(order_ - k).transpose();
        return x;
    }

protected:
    Vector do_evaluate(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        return forward(regressor(lagged, inputs), theta).back();
    }

    LocalJacobians do_jacobians(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        const auto acts = forward(regressor(lagged, inputs), theta);
        const std::size_t L = widths_.size() - 1;

        LocalJacobians j;
        j.d_params = RowMatrix::Zero(p_, n_params_);
        // delta holds d(output)/d(pre-activation) of the current layer, one row per output.
        RowMatrix delta = RowMatrix::Identity(p_, p_);
        for (std::size_t l = L; l-- > 0;) {
            const Index in = widths_[l], out = widths_[l + 1];
            const Vector& a_in = acts[l];
            for (Index r = 0; r < p_; ++r) {
                auto w_grad = Eigen::Map<RowMatrix>(j.d_params.row(r).data() + offsets_[l], out, in);
                w_grad.noalias() = delta.row(r).transpose() * a_in.transpose();
                j.d_params.row(r).segment(offsets_[l] + out * in, out) = delta.row(r);
            }
            RowMatrix back = delta * weights(theta, l);
            if (l > 0) back.array().rowwise() *= (1.0 - acts[l].array().square()).transpose();
            delta = std::move(back);
        }
        // delta is now d(output)/d(regressor); scatter to oldest-first blocks.
        j.d_outputs.resize(p_, p_ * order_);
        j.d_inputs.resize(p_, q_ * (order_ + 1));
        Index pos = 0;
        for (Index k = 1; k <= order_; ++k, pos += p_) j.d_outputs.middleCols((order_ - k) * p_, p_) = delta.middleCols(pos, p_);
        for (Index k = 0; k <= order_; ++k, pos += q_) j.d_inputs.middleCols((order_ - k) * q_, q_) = delta.middleCols(pos, q_);
        return j;
    }

private:
    Eigen::Map<const RowMatrix> weights(const Vector& theta, std::size_t layer) const {
        return {theta.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
    }
    Eigen::Map<const Vector> bias(const Vector& theta, std::size_t layer) const {
        return {theta.data() + offsets_[layer] + widths_[layer] * widths_[layer + 1], widths_[layer + 1]};
    }

    // Activations of every layer, acts[0] being the regressor.
    std::vector<Vector> forward(Vector x, const Vector& theta) const {
        const std::size_t L = widths_.size() - 1;
        std::vector<Vector> acts;
        acts.reserve(L + 1);
        acts.push_back(std::move(x));
        for (std::size_t l = 0; l < L; ++l) {
            Vector z = weights(theta, l) * acts.back() + bias(theta, l);
            if (l + 1 < L) z = z.array().tanh();
            acts.push_back(std::move(z));
        }
        return acts;
    }

    Index order_, p_, q_;
    std::vector<Index> hidden_;
    std::vector<Index> widths_;
    std::vector<Index> offsets_;
    Index n_params_ = 0;
};

} // namespace semid
