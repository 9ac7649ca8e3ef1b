#pragma once

#include <vector>

#include "symode/matfun.hpp"

namespace symode {

/// Samples of an RK4 path together with the right-hand side at each node.
template <class State>
struct OdePath {
    std::vector<double> t;
    std::vector<State> y;
    std::vector<State> dy;
    double error_estimate = 0.0; ///< Richardson estimate, max-norm over common nodes
};

template <class State, class Rhs>
State rk4_step(const Rhs& rhs, double t, const State& y, double h) {
    const State k1 = rhs(t, y);
    const State k2 = rhs(t + 0.5 * h, State(y + (0.5 * h) * k1));
    const State k3 = rhs(t + 0.5 * h, State(y + (0.5 * h) * k2));
    const State k4 = rhs(t + h, State(y + h * k3));
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace detail {

template <class State, class Rhs>
std::vector<State> rk4_sweep(const Rhs& rhs, const std::vector<double>& grid, size_t start, const State& y0) {
    std::vector<State> y(grid.size());
    y[start] = y0;
    for (size_t i = start; i + 1 < grid.size(); ++i) {
        y[i + 1] = rk4_step(rhs, grid[i], y[i], grid[i + 1] - grid[i]);
        if (!y[i + 1].allFinite()) throw NumericalError("RK4: non-finite state at t=" + std::to_string(grid[i + 1]));
    }
    for (size_t i = start; i > 0; --i) {
        y[i - 1] = rk4_step(rhs, grid[i], y[i], grid[i - 1] - grid[i]);
        if (!y[i - 1].allFinite()) throw NumericalError("RK4: non-finite state at t=" + std::to_string(grid[i - 1]));
    }
    return y;
}

} // namespace detail

/// Fixed-step RK4 over `steps` uniform steps of the domain, started from y0 at
/// grid node `start_index` and swept in both directions. The error estimate
/// compares against a run with doubled step.
template <class State, class Rhs>
OdePath<State> rk4_solve(const Rhs& rhs, const Domain& dom, int steps, const State& y0, int start_index,
                         bool estimate_error = true) {
    OdePath<State> p;
    p.t = uniform_grid(dom, steps);
    p.y = detail::rk4_sweep(rhs, p.t, static_cast<size_t>(start_index), y0);
    p.dy.reserve(p.t.size());
    for (size_t i = 0; i < p.t.size(); ++i) p.dy.push_back(rhs(p.t[i], p.y[i]));
    if (estimate_error && steps % 2 == 0 && start_index % 2 == 0) {
        std::vector<double> coarse;
        for (size_t i = 0; i < p.t.size(); i += 2) coarse.push_back(p.t[i]);
        const auto yc = detail::rk4_sweep(rhs, coarse, static_cast<size_t>(start_index / 2), y0);
        double err = 0;
        for (size_t i = 0; i < coarse.size(); ++i) err = std::max(err, (p.y[2 * i] - yc[i]).norm() / 15.0);
        p.error_estimate = err;
    }
    return p;
}

/// Starts at the domain midpoint (ode_steps is even, so the midpoint is a node).
template <class State, class Rhs>
OdePath<State> rk4_from_mid(const Rhs& rhs, const Domain& dom, int steps, const State& y0,
                            bool estimate_error = true) {
    return rk4_solve(rhs, dom, steps, y0, steps / 2, estimate_error);
}

template <class State, class Rhs>
OdePath<State> rk4_from_lo(const Rhs& rhs, const Domain& dom, int steps, const State& y0,
                           bool estimate_error = true) {
    return rk4_solve(rhs, dom, steps, y0, 0, estimate_error);
}

/// Integral from t[start] of the Hermite interpolant with values v and derivatives d.
/// Exact for cubics on each cell.
template <class T>
std::vector<T> hermite_cumulative(const std::vector<double>& t, const std::vector<T>& v, const std::vector<T>& d,
                                  size_t start) {
    std::vector<T> out(t.size());
    out[start] = v[start] * 0.0;
    for (size_t i = start; i + 1 < t.size(); ++i) {
        const double h = t[i + 1] - t[i];
        out[i + 1] = out[i] + (v[i] + v[i + 1]) * (h / 2) + (d[i] - d[i + 1]) * (h * h / 12);
    }
    for (size_t i = start; i > 0; --i) {
        const double h = t[i] - t[i - 1];
        out[i - 1] = out[i] - ((v[i - 1] + v[i]) * (h / 2) + (d[i - 1] - d[i]) * (h * h / 12));
    }
    return out;
}

} // namespace symode
