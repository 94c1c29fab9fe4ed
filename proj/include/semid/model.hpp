#pragma once

#include "semid/error.hpp"
#include "semid/types.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace semid {

/// Partial derivatives of one model evaluation with respect to its direct
/// arguments. Column blocks follow ascending time, matching the layout of the
/// argument windows (and of the optimization vector).
struct LocalJacobians {
    RowMatrix d_outputs; ///< p x (p * window rows)
    RowMatrix d_inputs;  ///< p x (q * (n + 1))
    RowMatrix d_params;  ///< p x n_theta
};

/// Nonlinear input-output model y_t = M(y_{t-1..t-n}, u_{t..t-n}, theta).
///
/// Windows are passed oldest-first: `lagged_outputs` holds y_{t-n}..y_{t-1}
/// (n rows) and `input_window` holds u_{t-n}..u_t (n + 1 rows). The
/// constraint form used by the identification problem is `residual`, which
/// also receives y_t as the last row of its output window; explicit models
/// inherit h_t = y_t - M(...), implicit ones (e.g. Euler-discretized
/// mechanics) override it.
class Model {
public:
    virtual ~Model() = default;

    virtual std::string name() const = 0;
    virtual Index order() const = 0;
    virtual Index n_outputs() const = 0;
    virtual Index n_inputs() const = 0;
    virtual Index n_params() const = 0;

    /// True when the one-step predictor is affine in theta.
    virtual bool linear_in_params() const { return false; }

    /// Default initializer: 0.1 * standard normal.
    virtual Vector initial_params(std::mt19937_64& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector theta(n_params());
        for (Index i = 0; i < theta.size(); ++i) theta(i) = 0.1 * normal(rng);
        return theta;
    }

    Vector evaluate(ConstRowBlock lagged_outputs, ConstRowBlock input_window, const Vector& theta) const {
        check_shapes(lagged_outputs, order(), input_window, theta);
        return do_evaluate(lagged_outputs, input_window, theta);
    }

    LocalJacobians local_jacobians(ConstRowBlock lagged_outputs, ConstRowBlock input_window,
                                   const Vector& theta) const {
        check_shapes(lagged_outputs, order(), input_window, theta);
        return do_jacobians(lagged_outputs, input_window, theta);
    }

    /// Constraint value h_t on the window y_{t-n}..y_t.
    Vector residual(ConstRowBlock output_window, ConstRowBlock input_window, const Vector& theta) const {
        check_shapes(output_window, order() + 1, input_window, theta);
        return do_residual(output_window, input_window, theta);
    }

    LocalJacobians residual_jacobians(ConstRowBlock output_window, ConstRowBlock input_window,
                                      const Vector& theta) const {
        check_shapes(output_window, order() + 1, input_window, theta);
        return do_residual_jacobians(output_window, input_window, theta);
    }

protected:
    virtual Vector do_evaluate(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const = 0;
    virtual LocalJacobians do_jacobians(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const = 0;

    virtual Vector do_residual(ConstRowBlock window, ConstRowBlock inputs, const Vector& theta) const {
        const Index n = order();
        return window.row(n).transpose() - do_evaluate(window.topRows(n), inputs, theta);
    }

    virtual LocalJacobians do_residual_jacobians(ConstRowBlock window, ConstRowBlock inputs,
                                                 const Vector& theta) const {
        const Index n = order(), p = n_outputs();
        LocalJacobians e = do_jacobians(window.topRows(n), inputs, theta);
        LocalJacobians r;
        r.d_outputs = RowMatrix::Zero(p, p * (n + 1));
        r.d_outputs.leftCols(p * n) = -e.d_outputs;
        r.d_outputs.rightCols(p).setIdentity();
        r.d_inputs = -e.d_inputs;
        r.d_params = -e.d_params;
        return r;
    }

private:
    void check_shapes(ConstRowBlock outputs, Index output_rows, ConstRowBlock inputs, const Vector& theta) const {
        if (outputs.rows() != output_rows || outputs.cols() != n_outputs())
            throw DimensionError(name() + ": output window must be " + std::to_string(output_rows) + " x " +
                                 std::to_string(n_outputs()));
        if (inputs.rows() != order() + 1 || inputs.cols() != n_inputs())
            throw DimensionError(name() + ": input window must be " + std::to_string(order() + 1) + " x " +
                                 std::to_string(n_inputs()));
        if (theta.size() != n_params())
            throw DimensionError(name() + ": expected " + std::to_string(n_params()) + " parameters, got " +
                                 std::to_string(theta.size()));
    }
};

using ModelPtr = std::shared_ptr<const Model>;

/// Free-run simulation: the first n rows are `init_outputs` verbatim, later
/// rows follow the model recursion driven by `inputs`.
inline RowMatrix simulate_free_run(const Model& model, const Vector& theta, const ConstRowBlock& init_outputs,
                                   const ConstRowBlock& inputs) {
    const Index n = model.order(), p = model.n_outputs(), N = inputs.rows();
    if (init_outputs.rows() != n || init_outputs.cols() != p)
        throw DimensionError("simulate_free_run: need " + std::to_string(n) + " initial outputs of width " +
                             std::to_string(p));
    if (inputs.cols() != model.n_inputs()) throw DimensionError("simulate_free_run: input width mismatch");
    if (N <= n) throw InsufficientDataError("simulate_free_run: input length must exceed the model order");

    RowMatrix y(N, p);
    y.topRows(n) = init_outputs;
    for (Index t = n; t < N; ++t) {
        y.row(t) = model.evaluate(y.middleRows(t - n, n), inputs.middleRows(t - n, n + 1), theta).transpose();
        if (!y.row(t).allFinite()) throw DivergedSimulationError(static_cast<std::size_t>(t));
    }
    return y;
}

/// Local derivatives of a state-space step or output map.
struct StateJacobians {
    RowMatrix d_state;
    RowMatrix d_input;
    RowMatrix d_params;
};

/// x_{t+1} = M1(x_t, u_t, theta), y_t = M2(x_t, u_t, theta).
class StateSpaceModel {
public:
    virtual ~StateSpaceModel() = default;

    virtual std::string name() const = 0;
    virtual Index state_dim() const = 0;
    virtual Index n_outputs() const = 0;
    virtual Index n_inputs() const = 0;
    virtual Index n_params() const = 0;

    virtual Vector step(const Vector& x, const Vector& u, const Vector& theta) const = 0;
    virtual StateJacobians step_jacobians(const Vector& x, const Vector& u, const Vector& theta) const = 0;
    virtual Vector output(const Vector& x, const Vector& u, const Vector& theta) const = 0;
    virtual StateJacobians output_jacobians(const Vector& x, const Vector& u, const Vector& theta) const = 0;

    virtual Vector initial_params(std::mt19937_64& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector theta(n_params());
        for (Index i = 0; i < theta.size(); ++i) theta(i) = 0.1 * normal(rng);
        return theta;
    }
};

using StateSpaceModelPtr = std::shared_ptr<const StateSpaceModel>;

/// Rolls the state-space model forward from x_1 and returns the output sequence.
inline RowMatrix simulate_state_space(const StateSpaceModel& model, const Vector& theta, const Vector& x1,
                                      const ConstRowBlock& inputs) {
    const Index N = inputs.rows();
    RowMatrix y(N, model.n_outputs());
    Vector x = x1;
    for (Index t = 0; t < N; ++t) {
        Vector u = inputs.row(t).transpose();
        y.row(t) = model.output(x, u, theta).transpose();
        if (!y.row(t).allFinite()) throw DivergedSimulationError(static_cast<std::size_t>(t));
        if (t + 1 < N) x = model.step(x, u, theta);
    }
    return y;
}

} // namespace semid
