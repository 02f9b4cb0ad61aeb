#pragma once

// Population objectives of a head against a supervisor, with analytic gradients.

#include "models.hpp"

namespace w2sg {

struct LossAndOutputGrad {
    double value = 0.0;
    Matrix d_out;  // dValue/dOutput, k x n
};

/// Weighted loss sum_j w_j loss(kind, supervisor_j, outputs_j) and its gradient with
/// respect to the student outputs. The supervisor always sits in the first slot;
/// reverse kinds swap internally.
inline LossAndOutputGrad output_loss(LossKind kind, const Matrix& supervisor, const Matrix& outputs,
                                     const Vector& weights) {
    if (supervisor.rows() != outputs.rows() || supervisor.cols() != outputs.cols())
        throw DimensionError("output_loss: supervisor is " + std::to_string(supervisor.rows()) + "x" +
                             std::to_string(supervisor.cols()) + ", outputs are " + std::to_string(outputs.rows()) +
                             "x" + std::to_string(outputs.cols()));
    if (weights.size() != outputs.cols()) throw DimensionError("output_loss: weight count mismatch");
    const long k = outputs.rows();
    const long n = outputs.cols();
    std::vector<double> terms(static_cast<std::size_t>(n));
    Matrix d(k, n);
    for (long j = 0; j < n; ++j) {
        const auto g = supervisor.col(j);
        const auto q = outputs.col(j);
        const double w = weights[j];
        terms[static_cast<std::size_t>(j)] = w * detail::point_loss(kind, g, q);
        for (long i = 0; i < k; ++i) {
            double dq = 0.0;
            switch (kind) {
                case LossKind::ForwardKL:
                case LossKind::ForwardCE: dq = g[i] > 0.0 ? -g[i] / q[i] : 0.0; break;
                case LossKind::ReverseKL: dq = std::log(q[i]) - std::log(g[i]) + 1.0; break;
                case LossKind::ReverseCE: dq = -std::log(g[i]); break;
                case LossKind::Squared: dq = 2.0 * (q[i] - g[i]); break;
            }
            if (!std::isfinite(dq)) throw NumericError("output_loss: non-finite gradient", j * k + i);
            d(i, j) = w * dq;
        }
    }
    return {pairwise_sum(terms), std::move(d)};
}

struct LossAndGrad {
    double value = 0.0;
    Vector grad;
};

/// Population loss of `head` on `features` against `supervisor` and its exact
/// gradient with respect to the flattened head parameters.
template <Head H>
LossAndGrad loss_gradient(LossKind kind, const H& head, const FeatureSet& features, const Vector& weights,
                          const Matrix& supervisor) {
    const Matrix q = head_outputs(head, features);
    auto [value, d_out] = output_loss(kind, supervisor, q, weights);
    Vector g = head_backward(head, features, d_out);
    for (long i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i])) throw NumericError("loss_gradient: non-finite gradient", i);
    return {value, std::move(g)};
}

template <Head H>
double loss_value(LossKind kind, const H& head, const FeatureSet& features, const Vector& weights,
                  const Matrix& supervisor) {
    return output_loss(kind, supervisor, head_outputs(head, features), weights).value;
}

}  // namespace w2sg
