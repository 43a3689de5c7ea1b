#include "msde/simulate.hpp"

#include "msde/io.hpp"
#include "msde/parallel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace msde {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'E', 'E', 'N', 'S', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "ensemble files are little-endian");

bool blown_up(const Vector &z) {
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        if (!std::isfinite(z[k]) || std::abs(z[k]) > kBlowUpThreshold) return true;
    }
    return false;
}

// One Euler-Maruyama path. `draw` fills the y-block increment for step l.
template <typename Draw>
void integrate_path(const ModelSystem &model, TrajectoryEnsemble &out, std::size_t m, Vector z, Draw &&draw) {
    const auto &dims = model.dims;
    const auto dy = static_cast<Eigen::Index>(dims.y);
    Vector dw(dy);
    std::memcpy(out.state(m, 0).data(), z.data(), dims.total * sizeof(double));
    if (blown_up(z)) {
        throw SimulationError("non-finite or unbounded initial state in trajectory " + std::to_string(m), m, 0.0);
    }
    for (std::size_t l = 0; l + 1 < out.L; ++l) {
        const double dt = out.dt;
        draw(l, dw);
        const Vector h = full_drift(model, z);
        const Matrix s = checked_sigma_y(model, z.tail(dy));
        Vector next = z + h * dt;
        next.tail(dy) += s * dw;
        if (blown_up(next)) {
            std::ostringstream os;
            os << "trajectory " << m << " blew up at t = " << out.times[l + 1];
            throw SimulationError(os.str(), m, out.times[l + 1]);
        }
        std::memcpy(out.increment(m, l).data(), dw.data(), dims.y * sizeof(double));
        std::memcpy(out.state(m, l + 1).data(), next.data(), dims.total * sizeof(double));
        z = std::move(next);
    }
}

template <typename T>
void put(std::string &buf, const T &value) {
    buf.append(reinterpret_cast<const char *>(&value), sizeof(T));
}

void put_array(std::string &buf, const std::vector<double> &values) {
    buf.append(reinterpret_cast<const char *>(values.data()), values.size() * sizeof(double));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    template <typename T>
    T get() {
        T value;
        take(&value, sizeof(T));
        return value;
    }
    void get_array(std::vector<double> &values, std::size_t n) {
        values.resize(n);
        take(values.data(), n * sizeof(double));
    }
    void take(void *dst, std::size_t n) {
        if (pos_ + n > data_.size()) throw ContractViolation("ensemble file is truncated");
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }
    bool exhausted() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

std::size_t SimulationConfig::time_points() const {
    if (!(T > 0.0) || !(dt > 0.0)) throw ConfigError("simulation: T and dt must be positive");
    if (M < 1) throw ConfigError("simulation: M must be at least 1");
    const double steps = std::round(T / dt);
    if (steps < 1.0) throw ConfigError("simulation: need at least two time points");
    if (std::abs(T - steps * dt) > 1e-9 * T) throw ConfigError("simulation: T must be an integer multiple of dt");
    return static_cast<std::size_t>(steps) + 1;
}

TrajectoryEnsemble TrajectoryEnsemble::allocate(const SystemDimensions &dims, std::size_t M, std::size_t L, double dt,
                                                std::uint64_t seed) {
    TrajectoryEnsemble e;
    e.dims = dims;
    e.seed = seed;
    e.dt = dt;
    e.M = M;
    e.L = L;
    e.times.resize(L);
    for (std::size_t l = 0; l < L; ++l) e.times[l] = static_cast<double>(l) * dt;
    e.states.assign(M * L * dims.total, 0.0);
    e.noise.assign(M * (L - 1) * dims.y, 0.0);
    return e;
}

Vector TrajectoryEnsemble::state_vector(std::size_t m, std::size_t l) const {
    const auto s = state(m, l);
    return Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
}

std::size_t TrajectoryEnsemble::nearest_index(double t) const {
    const double raw = std::round(t / dt);
    if (raw < 0.0 || raw > static_cast<double>(L - 1) || std::abs(times[static_cast<std::size_t>(raw)] - t) > dt / 2) {
        std::ostringstream os;
        os << "snapshot time " << t << " is outside the ensemble grid [0, " << horizon() << "]";
        throw ContractViolation(os.str());
    }
    return static_cast<std::size_t>(raw);
}

Matrix TrajectoryEnsemble::snapshot(std::size_t l) const {
    Matrix out(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(dims.total));
    for (std::size_t m = 0; m < M; ++m) {
        const auto s = state(m, l);
        for (std::size_t k = 0; k < dims.total; ++k) out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = s[k];
    }
    return out;
}

TrajectoryEnsemble simulate_ensemble(const ModelSystem &model, const SimulationConfig &config, std::size_t threads) {
    model.validate();
    const std::size_t L = config.time_points();
    auto out = TrajectoryEnsemble::allocate(model.dims, config.M, L, config.dt, config.seed);
    const double sqrt_dt = std::sqrt(config.dt);

    parallel_for(config.M, threads, [&](std::size_t m) {
        Rng rng = trajectory_stream(config.seed, m);
        Vector z0 = config.initial.sample(rng, model.dims.total);
        std::normal_distribution<double> normal(0.0, 1.0);
        integrate_path(model, out, m, std::move(z0), [&](std::size_t, Vector &dw) {
            for (Eigen::Index k = 0; k < dw.size(); ++k) dw[k] = sqrt_dt * normal(rng);
        });
    });
    return out;
}

TrajectoryEnsemble replay_ensemble(const ModelSystem &model, const TrajectoryEnsemble &reference, std::size_t threads) {
    model.validate();
    if (!(model.dims == reference.dims)) throw ContractViolation("replay: model dimensions differ from the reference");
    if (reference.L < 2 || reference.noise.size() != reference.M * (reference.L - 1) * reference.dims.y) {
        throw ContractViolation("replay: reference ensemble has no complete noise record");
    }
    auto out = TrajectoryEnsemble::allocate(model.dims, reference.M, reference.L, reference.dt, reference.seed);
    out.times = reference.times;

    parallel_for(reference.M, threads, [&](std::size_t m) {
        integrate_path(model, out, m, reference.state_vector(m, 0), [&](std::size_t l, Vector &dw) {
            const auto inc = reference.increment(m, l);
            for (Eigen::Index k = 0; k < dw.size(); ++k) dw[k] = inc[static_cast<std::size_t>(k)];
        });
    });
    return out;
}

void save_ensemble(const TrajectoryEnsemble &e, const std::filesystem::path &path) {
    std::string buf;
    buf.reserve(128 + (e.times.size() + e.states.size() + e.noise.size()) * sizeof(double));
    buf.append(kMagic, sizeof kMagic);
    put(buf, kFormatVersion);
    put(buf, std::uint32_t{0});
    for (std::uint64_t v : {std::uint64_t(e.dims.total), std::uint64_t(e.dims.x), std::uint64_t(e.dims.y),
                            std::uint64_t(e.dims.feature_f), std::uint64_t(e.dims.feature_g), std::uint64_t(e.L),
                            std::uint64_t(e.M), e.seed}) {
        put(buf, v);
    }
    put(buf, e.dt);
    put(buf, e.horizon());
    put_array(buf, e.times);
    put_array(buf, e.states);
    put_array(buf, e.noise);
    write_file_atomic(path, buf);
}

TrajectoryEnsemble load_ensemble(const std::filesystem::path &path) {
    Reader in(read_file(path));
    char magic[8];
    in.take(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ContractViolation(path.string() + " is not an ensemble file");
    if (in.get<std::uint32_t>() != kFormatVersion) throw ContractViolation("unsupported ensemble format version");
    in.get<std::uint32_t>();
    SystemDimensions dims;
    dims.total = in.get<std::uint64_t>();
    dims.x = in.get<std::uint64_t>();
    dims.y = in.get<std::uint64_t>();
    dims.feature_f = in.get<std::uint64_t>();
    dims.feature_g = in.get<std::uint64_t>();
    dims.validate();
    TrajectoryEnsemble e;
    e.dims = dims;
    e.L = in.get<std::uint64_t>();
    e.M = in.get<std::uint64_t>();
    e.seed = in.get<std::uint64_t>();
    e.dt = in.get<double>();
    in.get<double>();
    if (e.L < 2) throw ContractViolation("ensemble file has fewer than two time points");
    in.get_array(e.times, e.L);
    in.get_array(e.states, e.M * e.L * dims.total);
    in.get_array(e.noise, e.M * (e.L - 1) * dims.y);
    if (!in.exhausted()) throw ContractViolation("ensemble file has trailing bytes");
    return e;
}

void write_ensemble_csv(const TrajectoryEnsemble &e, const std::filesystem::path &path) {
    std::ostringstream os;
    os << "trajectory,time";
    for (std::size_t k = 0; k < e.dims.total; ++k) os << ",state_" << k;
    os << '\n' << std::setprecision(17);
    for (std::size_t m = 0; m < e.M; ++m) {
        for (std::size_t l = 0; l < e.L; ++l) {
            os << m << ',' << e.times[l];
            for (double v : e.state(m, l)) os << ',' << v;
            os << '\n';
        }
    }
    write_file_atomic(path, os.str());
}

}  // namespace msde
