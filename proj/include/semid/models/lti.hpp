#pragma once

#include "semid/model.hpp"

namespace semid {

/// y_t = theta_1 * y_{t-1} + theta_2 * u_{t-1}.
class LtiFirstOrder final : public Model {
public:
    std::string name() const override { return "lti"; }
    Index order() const override { return 1; }
    Index n_outputs() const override { return 1; }
    Index n_inputs() const override { return 1; }
    Index n_params() const override { return 2; }
    bool linear_in_params() const override { return true; }

protected:
    // inputs rows: u_{t-1}, u_t
    Vector do_evaluate(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        Vector y(1);
        y(0) = theta(0) * lagged(0, 0) + theta(1) * inputs(0, 0);
        return y;
    }

    LocalJacobians do_jacobians(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        LocalJacobians j;
        j.d_outputs = RowMatrix::Constant(1, 1, theta(0));
        j.d_inputs = RowMatrix::Zero(1, 2);
        j.d_inputs(0, 0) = theta(1);
        j.d_params.resize(1, 2);
        j.d_params << lagged(0, 0), inputs(0, 0);
        return j;
    }
};

} // namespace semid
