#pragma once

#include <vector>

#include "fields.hpp"

namespace mfg {

/// F(x, z) = sum_{k=2..K} F_k(x) (z - m0(x))^k / k!.
class RunningCost {
public:
    /// coefficients[j] is the order-(j+2) coefficient.
    RunningCost(ScalarField center, std::vector<ScalarField> coefficients)
        : center_(std::move(center)), coef_(std::move(coefficients))
    {
        if (coef_.empty()) throw PreconditionViolated("running cost needs at least the order-2 coefficient");
        for (const auto& c : coef_) detail::require_same_grid(center_.grid(), c.grid());
    }
    /// Zero cost of order 2 centered at m0.
    static RunningCost zero(const ScalarField& center)
    {
        return RunningCost(center, {ScalarField::zeros(center.grid_ptr())});
    }

    int order() const { return static_cast<int>(coef_.size()) + 1; }
    const ScalarField& center() const { return center_; }
    const std::vector<ScalarField>& coefficients() const { return coef_; }
    bool has(int k) const { return k >= 2 && k <= order(); }
    /// Coefficient of order k; orders outside 2..K are identically zero.
    ScalarField coefficient(int k) const
    {
        if (!has(k)) return ScalarField::zeros(center_.grid_ptr());
        return coef_[static_cast<std::size_t>(k - 2)];
    }

    double evaluate(std::size_t node, double z) const
    {
        const double dz = z - center_[node];
        double term = dz;  // dz^k / k! built incrementally
        double sum = 0.0;
        for (int k = 2; k <= order(); ++k) {
            term *= dz / k;
            sum += coef_[static_cast<std::size_t>(k - 2)][node] * term;
        }
        return sum;
    }
    Vec evaluate(const double* m) const
    {
        Vec out(static_cast<Eigen::Index>(center_.size()));
        for (std::size_t k = 0; k < center_.size(); ++k) out[static_cast<Eigen::Index>(k)] = evaluate(k, m[k]);
        return out;
    }
    /// Same coefficients re-centered at another density (used when the center is reconstructed).
    RunningCost with_center(ScalarField center) const { return RunningCost(std::move(center), coef_); }
    RunningCost with_coefficients(std::vector<ScalarField> coefficients) const
    {
        return RunningCost(center_, std::move(coefficients));
    }

private:
    ScalarField center_;
    std::vector<ScalarField> coef_;
};

}  // namespace mfg
