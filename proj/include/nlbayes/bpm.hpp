#pragma once

#include <vector>

#include "nlbayes/operator.hpp"

namespace nlb {

/// Sampling of the x-z region of interest. Lengths in micrometres.
struct GridSpec {
  Index nx = 0;
  Index nz = 0;
  double dx = 0.0;
  double dz = 0.0;
  double n_b = 1.0;
  double lambda0 = 0.0;

  [[nodiscard]] double k0() const;
  [[nodiscard]] Index size() const { return nx * nz; }
  void validate() const;
};

/// Detector plane at `distance` beyond the last slice; the field is simulated
/// on a window `padding` times wider than the sample and cropped to the
/// central nx samples.
struct SensorSpec {
  double distance = 0.0;
  Index padding = 1;

  [[nodiscard]] Index window(const GridSpec& grid) const { return grid.nx * padding; }
  [[nodiscard]] Index offset(const GridSpec& grid) const { return (window(grid) - grid.nx) / 2; }
  void validate() const;
};

struct IncidentWave {
  double angle = 0.0;
  ComplexVector init_slice;  // field at z = -dz over the simulation window
};

/// DFT of the free-space propagator over one distance.
struct PropagationKernel {
  ComplexVector spectrum;
};

/// Signed angular frequencies 2*pi*f_j / (n*dx) in standard DFT order:
/// f_j = j for j <= (n-1)/2, j - n otherwise.
RealVector dft_angular_frequencies(Index n, double dx);

/// exp(i*distance*sqrt(k0^2 n_b^2 - w^2)); the evanescent branch takes the
/// root with non-negative imaginary part so those modes decay.
PropagationKernel make_kernel(const GridSpec& grid, double distance, Index window);

/// One-slice kernel on the unpadded grid.
PropagationKernel make_kernel(const GridSpec& grid);

/// Unit-amplitude plane wave exp(i k0 n_b (x sin(a) + z cos(a))) sampled at z = -dz.
IncidentWave make_plane_wave(const GridSpec& grid, double angle, const SensorSpec& sensor = {});

/// Q angles uniformly spaced in [-theta, theta]; a single wave sits at 0.
std::vector<double> illumination_angles(Index count, double theta);

/// Intermediate fields of one BPM pass.
struct BpmTrace {
  std::vector<ComplexVector> diffracted;  // u~_k, before the phase mask
  std::vector<ComplexVector> refracted;   // u_k, after the phase mask
  ComplexVector detector;                 // field on the detector plane, full window
  ComplexVector measurement;              // cropped to the sensor positions
};

BpmTrace bpm_trace(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                   const SensorSpec& sensor = {});

ComplexVector bpm_forward(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                          const SensorSpec& sensor = {});

/// Re(J^H r) with respect to the contrast s.
RealVector bpm_vjp(const GridSpec& grid, const IncidentWave& wave, const RealVector& s,
                   const SensorSpec& sensor, const ComplexVector& r);

/// Backpropagation through a recorded trace.
RealVector bpm_vjp(const GridSpec& grid, const SensorSpec& sensor, const RealVector& s,
                   const BpmTrace& trace, const ComplexVector& r);

/// Stacked multi-illumination BPM, y = [y_1, ..., y_Q].
ComplexVector bpm_multi_forward(const GridSpec& grid, const std::vector<IncidentWave>& waves,
                                const RealVector& s, const SensorSpec& sensor = {});

class BpmOperator final : public DifferentiableOp<Complex> {
 public:
  /// `threads` > 1 evaluates waves concurrently; results match sequential runs.
  BpmOperator(GridSpec grid, std::vector<IncidentWave> waves, SensorSpec sensor = {},
              int threads = 1);

  Index in_dim() const override { return grid_.size(); }
  Index out_dim() const override { return static_cast<Index>(waves_.size()) * grid_.nx; }
  std::string name() const override { return "bpm"; }

  ComplexVector forward(const RealVector& x) const override;
  RealVector vjp(const RealVector& x, const ComplexVector& r) const override;
  Linearization<Complex> linearize(const RealVector& x) const override;

  const GridSpec& grid() const { return grid_; }
  const SensorSpec& sensor() const { return sensor_; }
  const std::vector<IncidentWave>& waves() const { return waves_; }

 private:
  std::vector<BpmTrace> traces(const RealVector& x) const;

  GridSpec grid_;
  std::vector<IncidentWave> waves_;
  SensorSpec sensor_;
  int threads_;
};

}  // namespace nlb
