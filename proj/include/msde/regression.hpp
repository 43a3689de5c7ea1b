#pragma once

// Least-squares machinery shared by the drift, diffusion and interaction-kernel
// fits. Design matrices are never materialized: rows are folded into the Gram
// matrix G = sum phi phi^T and the moment matrix B = sum phi y^T as they are
// produced.

#include "msde/basis.hpp"
#include "msde/core.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <span>

namespace msde {

struct Regularization {
    enum class Kind { none, ridge, truncated_svd };

    Kind kind = Kind::truncated_svd;
    // ridge: penalty added to the row-normalized Gram matrix.
    // truncated_svd: relative singular-value cutoff on the column-equilibrated design.
    double strength = 1e-10;
    // Optional coefficient-norm ball (Frobenius); inactive when unset.
    std::optional<double> coefficient_radius;

    nlohmann::json to_json() const;
    static Regularization from_json(const nlohmann::json &j);
};

std::string to_string(Regularization::Kind kind);

class NormalEquations {
public:
    NormalEquations() = default;
    NormalEquations(std::size_t n_basis, std::size_t n_outputs);

    std::size_t n_basis() const { return static_cast<std::size_t>(gram_.rows()); }
    std::size_t n_outputs() const { return static_cast<std::size_t>(moments_.cols()); }
    double rows() const { return rows_; }

    // Adds weight * phi phi^T and weight * phi y^T for a sparse row phi.
    void add(std::span<const BasisEntry> phi, std::span<const double> targets, double weight = 1.0);
    // Same with a dense row.
    void add_dense(const Vector &phi, std::span<const double> targets, double weight = 1.0);

    // Sums another accumulator into this one (used for ordered reductions).
    void merge(const NormalEquations &other);

    // Re-expresses the system for targets y' = R^T y, i.e. Y' = Y R.
    NormalEquations with_outputs_mixed(const Matrix &right) const;

    const Matrix &gram() const { return gram_; }
    const Matrix &moments() const { return moments_; }

    // Minimizer of the row-averaged residual sum of squares, one coefficient
    // column per output. Throws IllConditionedError for a singular system with
    // Kind::none.
    Matrix solve(const Regularization &reg) const;

    // Row-averaged residual sum of squares and its gradient at `coef`.
    Vector loss(const Matrix &coef) const;
    Matrix gradient(const Matrix &coef) const;

private:
    Matrix gram_;
    Matrix moments_;
    Matrix target_cross_;  // sum y y^T
    double rows_ = 0.0;
};

// Folds rows from `n_items` independent work items into one accumulator. Items
// are grouped into a fixed number of chunks that depend only on n_items, and
// chunk results are merged in order, so the sums are bit-stable for any thread
// count.
NormalEquations accumulate_ordered(std::size_t n_basis, std::size_t n_outputs, std::size_t n_items,
                                   std::size_t threads,
                                   const std::function<void(std::size_t item, NormalEquations &acc)> &add_item);

}  // namespace msde
