#include "nlbayes/bpm.hpp"

#include <cmath>
#include <numbers>
#include <thread>

#include <unsupported/Eigen/FFT>

namespace nlb {

double GridSpec::k0() const { return 2.0 * std::numbers::pi / lambda0; }

void GridSpec::validate() const {
  if (nx < 1 || nz < 1) throw ConfigError("grid: nx and nz must be positive");
  const auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!positive(dx) || !positive(dz)) throw ConfigError("grid: dx and dz must be positive");
  if (!positive(n_b)) throw ConfigError("grid: background index n_b must be positive");
  if (!positive(lambda0)) throw ConfigError("grid: wavelength must be positive");
}

void SensorSpec::validate() const {
  if (!(distance >= 0.0) || !std::isfinite(distance)) {
    throw ConfigError("sensor: detector distance must be finite and non-negative");
  }
  if (padding != 1 && padding != 2) throw ConfigError("sensor: padding factor must be 1 or 2");
}

RealVector dft_angular_frequencies(Index n, double dx) {
  RealVector w(n);
  for (Index j = 0; j < n; ++j) {
    const Index f = (j <= (n - 1) / 2) ? j : j - n;
    w[j] = 2.0 * std::numbers::pi * static_cast<double>(f) / (static_cast<double>(n) * dx);
  }
  return w;
}

PropagationKernel make_kernel(const GridSpec& grid, double distance, Index window) {
  grid.validate();
  const RealVector w = dft_angular_frequencies(window, grid.dx);
  const double kb = grid.k0() * grid.n_b;
  ComplexVector spectrum(window);
  for (Index j = 0; j < window; ++j) {
    const double arg = kb * kb - w[j] * w[j];
    const Complex root = arg >= 0.0 ? Complex(std::sqrt(arg), 0.0) : Complex(0.0, std::sqrt(-arg));
    spectrum[j] = std::exp(Complex(0.0, 1.0) * distance * root);
  }
  return {std::move(spectrum)};
}

PropagationKernel make_kernel(const GridSpec& grid) { return make_kernel(grid, grid.dz, grid.nx); }

IncidentWave make_plane_wave(const GridSpec& grid, double angle, const SensorSpec& sensor) {
  grid.validate();
  sensor.validate();
  const Index n = sensor.window(grid);
  const Index offset = sensor.offset(grid);
  const double kb = grid.k0() * grid.n_b;
  ComplexVector field(n);
  for (Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(i - offset) * grid.dx;
    const double z = -grid.dz;
    field[i] = std::polar(1.0, kb * (x * std::sin(angle) + z * std::cos(angle)));
  }
  return {angle, std::move(field)};
}

std::vector<double> illumination_angles(Index count, double theta) {
  if (count < 1) throw ConfigError("illumination_angles: need at least one wave");
  std::vector<double> angles(static_cast<std::size_t>(count));
  if (count == 1) {
    angles[0] = 0.0;
    return angles;
  }
  for (Index q = 0; q < count; ++q) {
    angles[static_cast<std::size_t>(q)] =
        -theta + 2.0 * theta * static_cast<double>(q) / static_cast<double>(count - 1);
  }
  return angles;
}

namespace {

struct Propagator {
  Propagator(const GridSpec& grid, const SensorSpec& sensor)
      : slice(make_kernel(grid, grid.dz, sensor.window(grid)).spectrum),
        detector(make_kernel(grid, sensor.distance, sensor.window(grid)).spectrum) {}

  void apply(ComplexVector& u, const ComplexVector& spectrum, bool adjoint) {
    fft.fwd(buffer, u);
    if (adjoint) {
      buffer.array() *= spectrum.array().conjugate();
    } else {
      buffer.array() *= spectrum.array();
    }
    fft.inv(u, buffer);
  }

  ComplexVector slice;
  ComplexVector detector;
  Eigen::FFT<double> fft;
  ComplexVector buffer;
};

void check_inputs(const GridSpec& grid, const SensorSpec& sensor, const RealVector& s) {
  grid.validate();
  sensor.validate();
  if (s.size() != grid.size()) {
    throw ConfigError("bpm: contrast length " + std::to_string(s.size()) + " does not match grid " +
                      std::to_string(grid.nx) + "x" + std::to_string(grid.nz));
  }
}

}  // namespace

BpmTrace bpm_trace(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                   const SensorSpec& sensor) {
  check_inputs(grid, sensor, s);
  const Index n = sensor.window(grid);
  const Index offset = sensor.offset(grid);
  if (wave.init_slice.size() != n) {
    throw ConfigError("bpm: incident slice length " + std::to_string(wave.init_slice.size()) +
                      " does not match simulation window " + std::to_string(n));
  }
  Propagator prop(grid, sensor);
  const double phase_scale = grid.k0() * grid.dz;

  BpmTrace trace;
  trace.diffracted.reserve(static_cast<std::size_t>(grid.nz));
  trace.refracted.reserve(static_cast<std::size_t>(grid.nz));
  ComplexVector u = wave.init_slice;
  for (Index k = 0; k < grid.nz; ++k) {
    prop.apply(u, prop.slice, false);
    trace.diffracted.push_back(u);
    const auto s_k = s.segment(k * grid.nx, grid.nx);
    for (Index j = 0; j < grid.nx; ++j) u[offset + j] *= std::polar(1.0, phase_scale * s_k[j]);
    if (!u.allFinite()) {
      throw NumericalError("bpm: non-finite field at slice " + std::to_string(k));
    }
    trace.refracted.push_back(u);
  }
  if (sensor.distance > 0.0) prop.apply(u, prop.detector, false);
  trace.measurement = u.segment(offset, grid.nx);
  trace.detector = std::move(u);
  return trace;
}

ComplexVector bpm_forward(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                          const SensorSpec& sensor) {
  return bpm_trace(grid, wave, s, sensor).measurement;
}

RealVector bpm_vjp(const GridSpec& grid, const SensorSpec& sensor, const RealVector& s,
                   const BpmTrace& trace, const ComplexVector& r) {
  check_inputs(grid, sensor, s);
  if (r.size() != grid.nx) {
    throw ConfigError("bpm: cotangent length " + std::to_string(r.size()) +
                      " does not match sensor count " + std::to_string(grid.nx));
  }
  const Index n = sensor.window(grid);
  const Index offset = sensor.offset(grid);
  Propagator prop(grid, sensor);
  const double phase_scale = grid.k0() * grid.dz;
  const Complex dphase(0.0, phase_scale);

  ComplexVector g = ComplexVector::Zero(n);
  g.segment(offset, grid.nx) = r;
  if (sensor.distance > 0.0) prop.apply(g, prop.detector, true);

  RealVector grad(grid.size());
  for (Index k = grid.nz - 1; k >= 0; --k) {
    const ComplexVector& u_k = trace.refracted[static_cast<std::size_t>(k)];
    const auto s_k = s.segment(k * grid.nx, grid.nx);
    for (Index j = 0; j < grid.nx; ++j) {
      const Index i = offset + j;
      grad[k * grid.nx + j] = std::real(std::conj(dphase * u_k[i]) * g[i]);
      g[i] *= std::polar(1.0, -phase_scale * s_k[j]);
    }
    prop.apply(g, prop.slice, true);
    if (!g.allFinite()) {
      throw NumericalError("bpm: non-finite adjoint field at slice " + std::to_string(k));
    }
  }
  return grad;
}

RealVector bpm_vjp(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                   const SensorSpec& sensor, const ComplexVector& r) {
  return bpm_vjp(grid, sensor, s, bpm_trace(grid, wave, s, sensor), r);
}

ComplexVector bpm_multi_forward(const GridSpec& grid, const std::vector<IncidentWave>& waves,
                                const RealVector& s, const SensorSpec& sensor) {
  return BpmOperator(grid, waves, sensor).forward(s);
}

BpmOperator::BpmOperator(GridSpec grid, std::vector<IncidentWave> waves, SensorSpec sensor,
                         int threads)
    : grid_(grid), waves_(std::move(waves)), sensor_(sensor), threads_(std::max(1, threads)) {
  grid_.validate();
  sensor_.validate();
  if (waves_.empty()) throw ConfigError("bpm: at least one incident wave is required");
  for (const auto& w : waves_) {
    if (w.init_slice.size() != sensor_.window(grid_)) {
      throw ConfigError("bpm: incident slice length does not match simulation window");
    }
  }
}

std::vector<BpmTrace> BpmOperator::traces(const RealVector& x) const {
  std::vector<BpmTrace> out(waves_.size());
  const auto run = [&](std::size_t q) { out[q] = bpm_trace(grid_, waves_[q], x, sensor_); };
  if (threads_ <= 1 || waves_.size() == 1) {
    for (std::size_t q = 0; q < waves_.size(); ++q) run(q);
    return out;
  }
  std::vector<std::exception_ptr> errors(waves_.size());
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads_), waves_.size());
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t q = w; q < waves_.size(); q += workers) {
        try {
          run(q);
        } catch (...) {
          errors[q] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

ComplexVector BpmOperator::forward(const RealVector& x) const {
  const auto all = traces(x);
  ComplexVector y(out_dim());
  for (std::size_t q = 0; q < all.size(); ++q) {
    y.segment(static_cast<Index>(q) * grid_.nx, grid_.nx) = all[q].measurement;
  }
  return y;
}

RealVector BpmOperator::vjp(const RealVector& x, const ComplexVector& r) const {
  return linearize(x).pullback(r);
}

Linearization<Complex> BpmOperator::linearize(const RealVector& x) const {
  auto all = traces(x);
  ComplexVector y(out_dim());
  for (std::size_t q = 0; q < all.size(); ++q) {
    y.segment(static_cast<Index>(q) * grid_.nx, grid_.nx) = all[q].measurement;
  }
  return {std::move(y), [this, x, all = std::move(all)](const ComplexVector& r) {
            if (r.size() != out_dim()) throw ConfigError("bpm: cotangent length mismatch");
            RealVector grad = RealVector::Zero(in_dim());
            // Summed in wave order so the result does not depend on threading.
            for (std::size_t q = 0; q < all.size(); ++q) {
              const ComplexVector r_q = r.segment(static_cast<Index>(q) * grid_.nx, grid_.nx);
              grad += bpm_vjp(grid_, sensor_, x, all[q], r_q);
            }
            return grad;
          }};
}

}  // namespace nlb
