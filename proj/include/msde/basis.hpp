#pragma once

#include "msde/core.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace msde {

enum class BasisFamily { bspline, piecewise_poly, trig };

std::string to_string(BasisFamily family);
BasisFamily basis_family_from_string(const std::string &name);

struct BasisEntry {
    std::size_t index;
    double value;
};

// One-dimensional basis on [knots.front(), knots.back()].
//
//  bspline         clamped B-splines of the given degree; n = segments + degree
//  piecewise_poly  Legendre polynomials up to `degree` on each segment,
//                  discontinuous across knots; n = segments * (degree + 1)
//  trig            {1, cos k w t, sin k w t}, k <= degree, w = 2 pi / (b - a);
//                  knots = {a, b}; n = 2 degree + 1
struct BasisSpec1D {
    BasisFamily family = BasisFamily::bspline;
    int degree = 2;
    std::vector<double> knots;
    std::size_t n_functions = 0;

    static BasisSpec1D uniform(BasisFamily family, int degree, std::size_t segments, double a, double b);

    double lower() const { return knots.front(); }
    double upper() const { return knots.back(); }
    std::size_t segments() const { return knots.size() - 1; }

    // Appends the nonzero basis values at t (clamped to the interval for the
    // non-periodic families).
    void eval(double t, std::vector<BasisEntry> &out) const;
};

inline constexpr int kMaxDegree = 2;

struct Box {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t dims() const { return lower.size(); }
};

// Per-dimension [min - pad, max + pad], pad = fraction * (max - min), floored
// at 1e-8. Rows of `points` are the samples.
Box infer_box(const Matrix &points, double padding_fraction);

// Tensor-product library. Flat index is row-major over the per-dimension
// indices (the last dimension varies fastest).
class BasisLibrary {
public:
    BasisLibrary() = default;
    explicit BasisLibrary(std::vector<BasisSpec1D> specs);

    std::size_t dims_in() const { return specs_.size(); }
    std::size_t size() const { return n_total_; }
    const std::vector<BasisSpec1D> &specs() const { return specs_; }
    Box box() const;

    // Nonzero entries at `point`, sorted by index. Reuses `out`'s storage.
    void eval_sparse(std::span<const double> point, std::vector<BasisEntry> &out) const;
    Vector eval(const Vector &point) const;

    nlohmann::json to_json() const;
    static BasisLibrary from_json(const nlohmann::json &j);

private:
    std::vector<BasisSpec1D> specs_;
    std::vector<std::size_t> strides_;
    std::size_t n_total_ = 0;
};

Vector eval_basis(const BasisLibrary &lib, const Vector &point);

// Row i is eval_basis(lib, points.row(i)).
Matrix design_matrix(const BasisLibrary &lib, const Matrix &points);

// Declarative per-dimension choice, resolved against a data box.
struct BasisDimConfig {
    BasisFamily family = BasisFamily::bspline;
    int degree = 2;
    std::size_t segments = 8;
};

struct BasisConfig {
    std::vector<BasisDimConfig> dims;  // one entry, or one per input dimension
    double padding_fraction = 0.05;

    nlohmann::json to_json() const;
    static BasisConfig from_json(const nlohmann::json &j);
};

// Builds the library over `box`; trig dimensions always span [0, 2 pi).
BasisLibrary build_library(const BasisConfig &config, const Box &box);

}  // namespace msde
