#include "msde/basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace msde {

namespace {

constexpr double kMinPad = 1e-8;

// Nonzero clamped B-spline values N_{span-p..span} at t, via the triangular
// recurrence on the local knot differences.
void bspline_values(const BasisSpec1D &spec, double t, std::vector<BasisEntry> &out) {
    const int p = spec.degree;
    const auto &bp = spec.knots;
    const std::size_t segs = bp.size() - 1;
    t = std::clamp(t, bp.front(), bp.back());

    std::size_t seg = static_cast<std::size_t>(std::upper_bound(bp.begin(), bp.end(), t) - bp.begin());
    seg = seg == 0 ? 0 : seg - 1;
    if (seg >= segs) seg = segs - 1;

    // Clamped knot vector U has p extra copies of each end; U[i] for the span
    // index i = seg + p maps onto breakpoints by shifting.
    auto U = [&](long i) {
        const long j = std::clamp<long>(i - p, 0, static_cast<long>(segs));
        return bp[static_cast<std::size_t>(j)];
    };
    const long span = static_cast<long>(seg) + p;

    std::array<double, kMaxDegree + 2> N{};
    std::array<double, kMaxDegree + 2> left{};
    std::array<double, kMaxDegree + 2> right{};
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[static_cast<std::size_t>(j)] = t - U(span + 1 - j);
        right[static_cast<std::size_t>(j)] = U(span + j) - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
            const double temp = N[static_cast<std::size_t>(r)] / denom;
            N[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
            saved = left[static_cast<std::size_t>(j - r)] * temp;
        }
        N[static_cast<std::size_t>(j)] = saved;
    }
    for (int r = 0; r <= p; ++r) {
        out.push_back({static_cast<std::size_t>(span - p + r), N[static_cast<std::size_t>(r)]});
    }
}

void piecewise_values(const BasisSpec1D &spec, double t, std::vector<BasisEntry> &out) {
    const auto &bp = spec.knots;
    const std::size_t segs = bp.size() - 1;
    t = std::clamp(t, bp.front(), bp.back());
    std::size_t seg = static_cast<std::size_t>(std::upper_bound(bp.begin(), bp.end(), t) - bp.begin());
    seg = seg == 0 ? 0 : seg - 1;
    if (seg >= segs) seg = segs - 1;
    const double u = 2.0 * (t - bp[seg]) / (bp[seg + 1] - bp[seg]) - 1.0;
    // Legendre P0..P2 on the segment's local coordinate.
    const double legendre[3] = {1.0, u, 0.5 * (3.0 * u * u - 1.0)};
    const auto stride = static_cast<std::size_t>(spec.degree + 1);
    for (std::size_t j = 0; j < stride; ++j) out.push_back({seg * stride + j, legendre[j]});
}

void trig_values(const BasisSpec1D &spec, double t, std::vector<BasisEntry> &out) {
    const double w = 2.0 * std::numbers::pi / (spec.upper() - spec.lower());
    const double phase = w * (t - spec.lower());
    out.push_back({0, 1.0});
    for (int k = 1; k <= spec.degree; ++k) {
        out.push_back({static_cast<std::size_t>(2 * k - 1), std::cos(k * phase)});
        out.push_back({static_cast<std::size_t>(2 * k), std::sin(k * phase)});
    }
}

}  // namespace

std::string to_string(BasisFamily family) {
    switch (family) {
    case BasisFamily::bspline: return "bspline";
    case BasisFamily::piecewise_poly: return "piecewise_poly";
    case BasisFamily::trig: return "trig";
    }
    return "unknown";
}

BasisFamily basis_family_from_string(const std::string &name) {
    if (name == "bspline") return BasisFamily::bspline;
    if (name == "piecewise_poly") return BasisFamily::piecewise_poly;
    if (name == "trig") return BasisFamily::trig;
    throw ConfigError("unknown basis family '" + name + "'");
}

BasisSpec1D BasisSpec1D::uniform(BasisFamily family, int degree, std::size_t segments, double a, double b) {
    if (degree < 0 || degree > kMaxDegree) throw ConfigError("basis degree must lie in [0, 2]");
    if (!(a < b)) throw ConfigError("basis interval must satisfy a < b");
    BasisSpec1D spec;
    spec.family = family;
    spec.degree = degree;
    if (family == BasisFamily::trig) {
        spec.knots = {a, b};
        spec.n_functions = static_cast<std::size_t>(2 * degree + 1);
        return spec;
    }
    if (segments < 1) throw ConfigError("basis needs at least one segment");
    spec.knots.resize(segments + 1);
    for (std::size_t s = 0; s <= segments; ++s) {
        spec.knots[s] = a + (b - a) * static_cast<double>(s) / static_cast<double>(segments);
    }
    spec.knots.back() = b;
    spec.n_functions = family == BasisFamily::bspline ? segments + static_cast<std::size_t>(degree)
                                                      : segments * static_cast<std::size_t>(degree + 1);
    return spec;
}

void BasisSpec1D::eval(double t, std::vector<BasisEntry> &out) const {
    switch (family) {
    case BasisFamily::bspline: bspline_values(*this, t, out); break;
    case BasisFamily::piecewise_poly: piecewise_values(*this, t, out); break;
    case BasisFamily::trig: trig_values(*this, t, out); break;
    }
}

Box infer_box(const Matrix &points, double padding_fraction) {
    if (points.rows() == 0) throw ContractViolation("infer_box: no data");
    if (!(padding_fraction >= 0.0)) throw ContractViolation("infer_box: padding fraction must be nonnegative");
    if (!points.allFinite()) throw NumericalError("infer_box: data contains non-finite values");
    Box box;
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const double lo = points.col(k).minCoeff();
        const double hi = points.col(k).maxCoeff();
        const double pad = std::max(padding_fraction * (hi - lo), hi > lo ? 0.0 : kMinPad);
        box.lower.push_back(lo - pad);
        box.upper.push_back(hi + pad);
    }
    return box;
}

BasisLibrary::BasisLibrary(std::vector<BasisSpec1D> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw ContractViolation("BasisLibrary: need at least one dimension");
    strides_.assign(specs_.size(), 1);
    n_total_ = 1;
    for (std::size_t d = specs_.size(); d-- > 0;) {
        const auto &s = specs_[d];
        if (s.knots.size() < 2 || !std::is_sorted(s.knots.begin(), s.knots.end()) ||
            std::adjacent_find(s.knots.begin(), s.knots.end()) != s.knots.end()) {
            throw ContractViolation("BasisLibrary: knots must be strictly increasing");
        }
        if (s.degree < 0 || s.degree > kMaxDegree) throw ContractViolation("BasisLibrary: degree outside [0, 2]");
        strides_[d] = n_total_;
        n_total_ *= s.n_functions;
    }
}

Box BasisLibrary::box() const {
    Box b;
    for (const auto &s : specs_) {
        b.lower.push_back(s.lower());
        b.upper.push_back(s.upper());
    }
    return b;
}

void BasisLibrary::eval_sparse(std::span<const double> point, std::vector<BasisEntry> &out) const {
    if (point.size() != specs_.size()) throw ContractViolation("eval_basis: point dimension differs from the library");
    thread_local std::vector<BasisEntry> dim_values;
    thread_local std::vector<BasisEntry> next;
    out.clear();
    out.push_back({0, 1.0});
    for (std::size_t d = 0; d < specs_.size(); ++d) {
        dim_values.clear();
        specs_[d].eval(point[d], dim_values);
        next.clear();
        for (const auto &acc : out) {
            for (const auto &e : dim_values) next.push_back({acc.index + e.index * strides_[d], acc.value * e.value});
        }
        out.swap(next);
    }
}

Vector BasisLibrary::eval(const Vector &point) const {
    std::vector<BasisEntry> entries;
    eval_sparse({point.data(), static_cast<std::size_t>(point.size())}, entries);
    Vector row = Vector::Zero(static_cast<Eigen::Index>(n_total_));
    for (const auto &e : entries) row[static_cast<Eigen::Index>(e.index)] += e.value;
    return row;
}

nlohmann::json BasisLibrary::to_json() const {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto &s : specs_) {
        dims.push_back({{"family", to_string(s.family)}, {"degree", s.degree}, {"knots", s.knots},
                        {"n_functions", s.n_functions}});
    }
    return {{"dims", dims}, {"n_total", n_total_}};
}

BasisLibrary BasisLibrary::from_json(const nlohmann::json &j) {
    std::vector<BasisSpec1D> specs;
    for (const auto &d : j.at("dims")) {
        BasisSpec1D s;
        s.family = basis_family_from_string(d.at("family").get<std::string>());
        s.degree = d.at("degree").get<int>();
        s.knots = d.at("knots").get<std::vector<double>>();
        s.n_functions = d.at("n_functions").get<std::size_t>();
        specs.push_back(std::move(s));
    }
    return BasisLibrary(std::move(specs));
}

Vector eval_basis(const BasisLibrary &lib, const Vector &point) { return lib.eval(point); }

Matrix design_matrix(const BasisLibrary &lib, const Matrix &points) {
    Matrix out = Matrix::Zero(points.rows(), static_cast<Eigen::Index>(lib.size()));
    std::vector<BasisEntry> entries;
    Vector p;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        p = points.row(i).transpose();
        lib.eval_sparse({p.data(), static_cast<std::size_t>(p.size())}, entries);
        for (const auto &e : entries) out(i, static_cast<Eigen::Index>(e.index)) += e.value;
    }
    return out;
}

nlohmann::json BasisConfig::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &d : dims) {
        arr.push_back({{"family", to_string(d.family)}, {"degree", d.degree}, {"segments", d.segments}});
    }
    return {{"dims", arr}, {"padding_fraction", padding_fraction}};
}

BasisConfig BasisConfig::from_json(const nlohmann::json &j) {
    BasisConfig c;
    for (const auto &d : j.at("dims")) {
        BasisDimConfig dc;
        dc.family = basis_family_from_string(d.at("family").get<std::string>());
        dc.degree = d.value("degree", 2);
        dc.segments = d.value("segments", std::size_t{8});
        c.dims.push_back(dc);
    }
    if (c.dims.empty()) throw ConfigError("basis configuration lists no dimensions");
    c.padding_fraction = j.value("padding_fraction", 0.05);
    return c;
}

BasisLibrary build_library(const BasisConfig &config, const Box &box) {
    if (config.dims.size() != 1 && config.dims.size() != box.dims()) {
        throw ConfigError("basis configuration must give one entry or one per input dimension");
    }
    std::vector<BasisSpec1D> specs;
    for (std::size_t d = 0; d < box.dims(); ++d) {
        const auto &dc = config.dims.size() == 1 ? config.dims.front() : config.dims[d];
        if (dc.family == BasisFamily::trig) {
            specs.push_back(BasisSpec1D::uniform(dc.family, dc.degree, 1, 0.0, 2.0 * std::numbers::pi));
        } else {
            specs.push_back(BasisSpec1D::uniform(dc.family, dc.degree, dc.segments, box.lower[d], box.upper[d]));
        }
    }
    return BasisLibrary(std::move(specs));
}

}  // namespace msde
