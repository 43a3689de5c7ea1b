#include "msde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace msde {

namespace {

Matrix squared_distances(const Matrix &a, const Matrix &b) {
    const Vector an = a.rowwise().squaredNorm();
    const Vector bn = b.rowwise().squaredNorm();
    Matrix c(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
    return c;
}

double log_sum_exp(const double *values, Eigen::Index n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k) mx = std::max(mx, values[k]);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) s += std::exp(values[k] - mx);
    return mx + std::log(s);
}

// Entropic OT between uniform measures with cost matrix c. Returns the dual
// value <f, a> + <g, b>. `symmetric` uses the averaged single-potential update
// valid when c is the self-cost of one point cloud.
double entropic_ot(const Matrix &c, double eps_target, const WassersteinOptions &opt, bool symmetric) {
    const Eigen::Index n = c.rows();
    const Eigen::Index m = c.cols();
    const double log_a = -std::log(static_cast<double>(n));
    const double log_b = -std::log(static_cast<double>(m));
    Vector f = Vector::Zero(n);
    Vector g = Vector::Zero(m);
    std::vector<double> buf(static_cast<std::size_t>(std::max(n, m)));

    auto update_f = [&](double eps, const Vector &gv) {
        Vector out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) buf[static_cast<std::size_t>(j)] = log_b + (gv[j] - c(i, j)) / eps;
            out[i] = -eps * log_sum_exp(buf.data(), m);
        }
        return out;
    };
    auto update_g = [&](double eps, const Vector &fv) {
        Vector out(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = log_a + (fv[i] - c(i, j)) / eps;
            out[j] = -eps * log_sum_exp(buf.data(), n);
        }
        return out;
    };
    auto row_violation = [&](double eps) {
        double err = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double row = 0.0;
            for (Eigen::Index j = 0; j < m; ++j) row += std::exp(log_a + log_b + (f[i] + g[j] - c(i, j)) / eps);
            err += std::abs(row - std::exp(log_a));
        }
        return err;
    };

    // Anneal from the cost scale down to the target entropic scale.
    double eps = std::max(c.maxCoeff(), eps_target);
    for (;;) {
        const bool last = eps <= eps_target;
        const std::size_t cap = last ? opt.max_iterations : 50;
        for (std::size_t it = 0; it < cap; ++it) {
            if (symmetric) {
                f = 0.5 * (f + update_f(eps, f));
                g = f;
            } else {
                f = update_f(eps, g);
                g = update_g(eps, f);
            }
            if (last && it % 10 == 9 && row_violation(eps) < opt.tolerance) break;
        }
        if (last) break;
        eps = std::max(eps * 0.5, eps_target);
    }
    return f.mean() + g.mean();
}

}  // namespace

OccupationMeasure OccupationMeasure::from_ensemble(const TrajectoryEnsemble &ensemble) {
    OccupationMeasure rho;
    const auto n = static_cast<Eigen::Index>(ensemble.M * ensemble.L);
    rho.points = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        ensemble.states.data(), n, static_cast<Eigen::Index>(ensemble.dims.total));
    rho.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
    return rho;
}

L2RhoError l2_rho_error(const VectorFn &true_h, const VectorFn &est_h, const OccupationMeasure &rho) {
    if (rho.points.rows() != rho.weights.size()) throw ContractViolation("l2_rho_error: weights/points mismatch");
    double err = 0.0;
    double ref = 0.0;
    for (Eigen::Index i = 0; i < rho.points.rows(); ++i) {
        const Vector z = rho.points.row(i).transpose();
        const Vector h = true_h(z);
        const Vector hh = est_h(z);
        if (h.size() != hh.size()) throw ContractViolation("l2_rho_error: drift output sizes differ");
        err += rho.weights[i] * (h - hh).squaredNorm();
        ref += rho.weights[i] * h.squaredNorm();
    }
    L2RhoError out;
    out.absolute = std::sqrt(err);
    if (ref > 0.0) {
        out.relative = out.absolute / std::sqrt(ref);
    } else {
        out.relative_defined = false;
    }
    return out;
}

TrajectoryError trajectory_error(const TrajectoryEnsemble &reference, const TrajectoryEnsemble &replayed) {
    if (!(reference.dims == replayed.dims) || reference.M != replayed.M || reference.L != replayed.L) {
        throw ContractViolation("trajectory_error: ensembles have different shapes");
    }
    if (reference.seed != replayed.seed || reference.times != replayed.times) {
        throw ContractViolation("trajectory_error: ensembles do not share a time grid and noise seed");
    }
    TrajectoryError out;
    out.per_trajectory.reserve(reference.M);
    std::vector<double> absolute;
    absolute.reserve(reference.M);
    const double T = reference.horizon();
    for (std::size_t m = 0; m < reference.M; ++m) {
        double diff = 0.0;
        double norm = 0.0;
        for (std::size_t l = 0; l + 1 < reference.L; ++l) {
            const double dt = reference.step(l);
            const auto a = reference.state(m, l);
            const auto b = replayed.state(m, l);
            double d2 = 0.0;
            double n2 = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                d2 += (a[k] - b[k]) * (a[k] - b[k]);
                n2 += a[k] * a[k];
            }
            diff += d2 * dt;
            norm += n2 * dt;
        }
        out.per_trajectory.push_back(norm > 0.0 ? std::sqrt(diff / norm) : (diff > 0.0 ? INFINITY : 0.0));
        absolute.push_back(diff / T);
    }
    auto mean_std = [](const std::vector<double> &v, double &mean, double &sd) {
        mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    mean_std(out.per_trajectory, out.mean, out.std);
    mean_std(absolute, out.absolute_mean, out.absolute_std);
    return out;
}

Assignment solve_assignment(const Matrix &cost) {
    if (cost.rows() != cost.cols()) throw ContractViolation("solve_assignment: cost matrix must be square");
    const auto n = static_cast<std::size_t>(cost.rows());
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials; row 0 / column 0 are sentinels.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            const double ui0 = u[i0];
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - ui0 - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    Assignment out;
    out.column_for_row.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) out.column_for_row[match[j] - 1] = j - 1;
    for (std::size_t i = 0; i < n; ++i) {
        out.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.column_for_row[i]));
    }
    return out;
}

double sinkhorn_w2(const Matrix &a, const Matrix &b, const WassersteinOptions &options) {
    const Matrix cab = squared_distances(a, b);
    std::vector<double> all(cab.data(), cab.data() + cab.size());
    auto mid = all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2);
    std::nth_element(all.begin(), mid, all.end());
    const double median = *mid;
    if (!(median > 0.0)) return 0.0;
    const double eps = options.epsilon_factor * median;
    const double ab = entropic_ot(cab, eps, options, false);
    const double aa = entropic_ot(squared_distances(a, a), eps, options, true);
    const double bb = entropic_ot(squared_distances(b, b), eps, options, true);
    return std::sqrt(std::max(ab - 0.5 * (aa + bb), 0.0));
}

WassersteinResult wasserstein2(const Matrix &a, const Matrix &b, const WassersteinOptions &options) {
    if (a.rows() != b.rows()) throw ContractViolation("wasserstein2: sample counts differ");
    if (a.cols() != b.cols()) throw ContractViolation("wasserstein2: sample dimensions differ");
    if (a.rows() == 0) return {};
    const auto n = static_cast<std::size_t>(a.rows());
    if (n <= options.exact_max) {
        const auto assignment = solve_assignment(squared_distances(a, b));
        return {std::sqrt(std::max(assignment.cost, 0.0) / static_cast<double>(n)), false};
    }
    return {sinkhorn_w2(a, b, options), true};
}

std::vector<WassersteinPoint> wasserstein_curve(const TrajectoryEnsemble &reference,
                                                const TrajectoryEnsemble &comparison,
                                                const std::vector<double> &snapshot_times,
                                                const WassersteinOptions &options) {
    std::vector<WassersteinPoint> out;
    for (double t : snapshot_times) {
        const auto la = reference.nearest_index(t);
        const auto lb = comparison.nearest_index(t);
        const auto w = wasserstein2(reference.snapshot(la), comparison.snapshot(lb), options);
        out.push_back({reference.times[la], w.distance, w.approximate});
    }
    return out;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json w = nlohmann::json::array();
    for (const auto &p : wasserstein) w.push_back({{"time", p.time}, {"distance", p.distance}, {"approximate", p.approximate}});
    nlohmann::json j = {{"relative_L2_rho", l2_rho.relative},
                        {"absolute_L2_rho", l2_rho.absolute},
                        {"relative_L2_rho_defined", l2_rho.relative_defined},
                        {"trajectory_error_mean", trajectory.mean},
                        {"trajectory_error_std", trajectory.std},
                        {"trajectory_error_absolute_mean", trajectory.absolute_mean},
                        {"trajectory_error_absolute_std", trajectory.absolute_std},
                        {"wasserstein", w}};
    if (!coupling_note.empty()) j["coupling_note"] = coupling_note;
    return j;
}

std::string MetricReport::csv_header() const {
    std::ostringstream os;
    os << "relative_L2_rho,trajectory_error_mean,trajectory_error_std";
    for (const auto &p : wasserstein) os << ",W2_t=" << p.time;
    return os.str();
}

std::string MetricReport::csv_row(int precision) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << l2_rho.relative << ',' << trajectory.mean << ','
       << trajectory.std;
    for (const auto &p : wasserstein) os << ',' << p.distance;
    return os.str();
}

}  // namespace msde
