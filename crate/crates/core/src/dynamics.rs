//! Closed- and open-system propagation under `H0 + sum_m theta_m(t) H_m`.
//!
//! Waveforms are piecewise constant. Within each sub-pulse the samples are
//! held as in the trapezoid rule (see `hold_segments`), so every layer lasts
//! exactly `4 sigma` and its pulse area equals `dt` times the sample sum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{hermitian_defect, lowering_operators, DeviceModel, Operator};
use crate::pulses::Waveform;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    pub amplitudes: DVector<Complex64>,
}

impl QuantumState {
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amplitudes = DVector::zeros(dim);
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    /// `|g...g>`.
    pub fn ground(dim: usize) -> Self {
        Self::basis(dim, 0)
    }

    pub fn from_amplitudes(amplitudes: DVector<Complex64>) -> Self {
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &QuantumState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_pure(state: &QuantumState) -> Self {
        let psi = &state.amplitudes;
        Self {
            matrix: psi * psi.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `<psi| rho |psi>`.
    pub fn fidelity_with_pure(&self, state: &QuantumState) -> f64 {
        let psi = &state.amplitudes;
        psi.dotc(&(&self.matrix * psi)).re
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    /// Exact exponential of each piecewise-constant sample.
    StepExponential,
    /// Classical fourth-order Runge-Kutta.
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub integrator: Integrator,
    /// Integration step, seconds; must divide the waveform sample step.
    pub dt: f64,
    pub open_system: bool,
}

impl EvolutionConfig {
    pub fn closed() -> Self {
        Self {
            integrator: Integrator::StepExponential,
            dt: 0.5e-9,
            open_system: false,
        }
    }

    pub fn open() -> Self {
        Self {
            integrator: Integrator::Rk4,
            dt: 0.1e-9,
            open_system: true,
        }
    }

    /// Equal RK4 steps no longer than `dt` covering `span`.
    fn split(&self, span: f64) -> (usize, f64) {
        let n = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (n, span / n as f64)
    }

    /// Number of integration steps per waveform sample.
    fn substeps(&self, sample_dt: f64) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("integration dt must be positive, got {}", self.dt)));
        }
        let ratio = sample_dt / self.dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * n {
            return Err(Error::Config(format!(
                "integration dt {} must divide the sample step {}",
                self.dt, sample_dt
            )));
        }
        Ok(n as usize)
    }
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self::closed()
    }
}

/// `exp(-i H dt)` for Hermitian `H`.
pub fn step_propagator(h: &Operator, dt: f64) -> Result<Operator> {
    check_hermitian(h)?;
    let eig = SymmetricEigen::new(h.clone());
    let phases = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| (-I * l * dt).exp()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&phases) * v.adjoint())
}

fn check_hermitian(h: &Operator) -> Result<()> {
    if !h.is_square() {
        return Err(Error::Shape(format!("operator is {}x{}", h.nrows(), h.ncols())));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let defect = hermitian_defect(h);
    if defect > 1e-12 * scale {
        return Err(Error::NonHermitian(defect));
    }
    Ok(())
}

/// Static and control Hamiltonians bundled for repeated propagation.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub static_part: Operator,
    pub controls: Vec<Operator>,
}

impl Hamiltonian {
    pub fn new(static_part: Operator, controls: Vec<Operator>) -> Result<Self> {
        let dim = static_part.nrows();
        check_hermitian(&static_part)?;
        for c in &controls {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::Shape(format!(
                    "control operator is {}x{}, static part is {dim}x{dim}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            check_hermitian(c)?;
        }
        Ok(Self {
            static_part,
            controls,
        })
    }

    pub fn dim(&self) -> usize {
        self.static_part.nrows()
    }

    fn at_sample(&self, waveform: &Waveform, k: usize) -> Operator {
        let mut h = self.static_part.clone();
        for (op, theta) in self.controls.iter().zip(waveform.at(k)) {
            if theta != 0.0 {
                h += op * Complex64::new(theta, 0.0);
            }
        }
        h
    }

    fn check(&self, waveform: &Waveform, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::Shape(format!(
                "state dimension {dim} vs Hamiltonian dimension {}",
                self.dim()
            )));
        }
        if waveform.channels() != self.controls.len() {
            return Err(Error::Shape(format!(
                "waveform has {} channels for {} control operators",
                waveform.channels(),
                self.controls.len()
            )));
        }
        if waveform.samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("waveform amplitude".into()));
        }
        Ok(())
    }
}

/// Pure-state propagation over the whole waveform.
pub fn evolve_pure(
    state: &QuantumState,
    hamiltonian: &Hamiltonian,
    waveform: &Waveform,
    config: &EvolutionConfig,
) -> Result<QuantumState> {
    evolve_pure_range(state, hamiltonian, waveform, 0..waveform.len(), config)
}

/// Pure-state propagation over samples `range` of the waveform.
pub fn evolve_pure_range(
    state: &QuantumState,
    hamiltonian: &Hamiltonian,
    waveform: &Waveform,
    range: std::ops::Range<usize>,
    config: &EvolutionConfig,
) -> Result<QuantumState> {
    if config.open_system {
        return Err(Error::Config("evolve_pure called with open_system = true".into()));
    }
    hamiltonian.check(waveform, state.dim())?;
    config.substeps(waveform.dt)?;
    let mut psi = state.amplitudes.clone();

    for (k, span) in hold_segments(range, waveform) {
        let h = hamiltonian.at_sample(waveform, k);
        match config.integrator {
            Integrator::StepExponential => {
                // psi <- V exp(-i L span) V^† psi, without forming U
                let eig = SymmetricEigen::new(h);
                let v = &eig.eigenvectors;
                let mut coeffs = v.ad_mul(&psi);
                for (c, &l) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
                    *c *= (-I * l * span).exp();
                }
                psi = v * coeffs;
            }
            Integrator::Rk4 => {
                let gen = h * (-I);
                let (n, step) = config.split(span);
                for _ in 0..n {
                    psi = rk4_vec(&gen, &psi, step);
                }
            }
        }
    }
    let state = QuantumState::from_amplitudes(psi);
    if !state.norm().is_finite() {
        return Err(Error::NonFinite("propagated state".into()));
    }
    Ok(state)
}

/// Piecewise-constant holds for samples `range`, as `(sample, duration)`.
///
/// Each sub-pulse is integrated with the trapezoid rule on its own window:
/// the first sample of a layer is held for `dt/2` at both ends of the layer
/// (the envelope is symmetric, so it also stands in for `t = 4 sigma`) and
/// the others for a full `dt`. Layer boundaries stay on exact multiples of
/// the sub-pulse length, which keeps different sample steps time-aligned.
fn hold_segments(range: std::ops::Range<usize>, waveform: &Waveform) -> Vec<(usize, f64)> {
    let spl = waveform.samples_per_layer.max(1);
    let dt = waveform.dt;
    let mut out = Vec::with_capacity(range.len() + range.len() / spl + 2);
    for k in range {
        let first = k - k % spl;
        out.push((k, if k == first { 0.5 * dt } else { dt }));
        if k % spl == spl - 1 {
            out.push((first, 0.5 * dt));
        }
    }
    out
}

fn rk4_vec(gen: &Operator, psi: &DVector<Complex64>, h: f64) -> DVector<Complex64> {
    let hc = Complex64::new(h, 0.0);
    let k1 = gen * psi;
    let k2 = gen * (psi + &k1 * (hc * 0.5));
    let k3 = gen * (psi + &k2 * (hc * 0.5));
    let k4 = gen * (psi + &k3 * hc);
    psi + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4) * (hc / 6.0)
}

/// Collapse channels `sqrt(gamma) L` of the device, precomputed for the RK4 right-hand side.
#[derive(Clone, Debug)]
pub struct Dissipator {
    jumps: Vec<(f64, Operator)>,
    /// `-(i/2) sum_k gamma_k L_k^† L_k`
    anti_hermitian: Operator,
}

impl Dissipator {
    pub fn from_device(device: &DeviceModel) -> Result<Self> {
        let g1 = device.relaxation_rates();
        let g2 = device.dephasing_rates();
        if g1.iter().chain(&g2).any(|g| *g < 0.0 || !g.is_finite()) {
            return Err(Error::InvalidDevice("decoherence rates must be finite and nonnegative".into()));
        }
        let dim = device.dim();
        let mut jumps = Vec::new();
        for (q, a) in lowering_operators(device)?.into_iter().enumerate() {
            let n = a.adjoint() * &a;
            if g1[q] > 0.0 {
                jumps.push((g1[q], a));
            }
            if g2[q] > 0.0 {
                jumps.push((g2[q], n));
            }
        }
        let mut anti_hermitian = Operator::zeros(dim, dim);
        for (g, l) in &jumps {
            anti_hermitian -= (l.adjoint() * l) * Complex64::new(0.0, 0.5 * g);
        }
        Ok(Self {
            jumps,
            anti_hermitian,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// `-i(H_eff rho - rho H_eff^†) + sum gamma L rho L^†` with `H_eff = H + anti_hermitian`.
    fn rhs(&self, h_eff: &Operator, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let left = h_eff * rho;
        let mut out = (&left - left.adjoint()) * (-I);
        for (g, l) in &self.jumps {
            out += (l * rho * l.adjoint()) * Complex64::new(*g, 0.0);
        }
        out
    }
}

/// Lindblad propagation over the whole waveform with relaxation `L[a_q]` at
/// `1/T1` and dephasing `L[a_q^† a_q]` at `1/T_phi`.
pub fn evolve_lindblad(
    rho: &DensityMatrix,
    hamiltonian: &Hamiltonian,
    waveform: &Waveform,
    device: &DeviceModel,
    config: &EvolutionConfig,
) -> Result<DensityMatrix> {
    let dissipator = Dissipator::from_device(device)?;
    evolve_lindblad_range(rho, hamiltonian, waveform, &dissipator, 0..waveform.len(), config)
}

pub fn evolve_lindblad_range(
    rho: &DensityMatrix,
    hamiltonian: &Hamiltonian,
    waveform: &Waveform,
    dissipator: &Dissipator,
    range: std::ops::Range<usize>,
    config: &EvolutionConfig,
) -> Result<DensityMatrix> {
    if !config.open_system {
        return Err(Error::Config("evolve_lindblad called with open_system = false".into()));
    }
    hamiltonian.check(waveform, rho.dim())?;
    config.substeps(waveform.dt)?;
    let two = Complex64::new(2.0, 0.0);
    let mut r = rho.matrix.clone();

    for (k, span) in hold_segments(range, waveform) {
        let h_eff = hamiltonian.at_sample(waveform, k) + &dissipator.anti_hermitian;
        let (n, step) = config.split(span);
        let half = Complex64::new(0.5 * step, 0.0);
        let full = Complex64::new(step, 0.0);
        let sixth = Complex64::new(step / 6.0, 0.0);
        for _ in 0..n {
            let k1 = dissipator.rhs(&h_eff, &r);
            let k2 = dissipator.rhs(&h_eff, &(&r + &k1 * half));
            let k3 = dissipator.rhs(&h_eff, &(&r + &k2 * half));
            let k4 = dissipator.rhs(&h_eff, &(&r + &k3 * full));
            r += (k1 + k2 * two + k3 * two + k4) * sixth;
        }
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("propagated density matrix".into()));
    }
    Ok(DensityMatrix { matrix: r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_control_hamiltonians, build_static_hamiltonian};
    use crate::pulses::{amplitude_for_rotation, schedule_to_waveforms, PulseSchedule, PulseShape};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn device_hamiltonian(device: &DeviceModel) -> Hamiltonian {
        Hamiltonian::new(
            build_static_hamiltonian(device).unwrap(),
            build_control_hamiltonians(device).unwrap(),
        )
        .unwrap()
    }

    fn pi_pulse_waveform(angle: f64, shape: &PulseShape) -> Waveform {
        let sched = PulseSchedule::from_channel_major(2, 1, &[amplitude_for_rotation(angle, shape), 0.0]).unwrap();
        schedule_to_waveforms(&sched, shape).unwrap()
    }

    fn random_schedule(channels: usize, layers: usize, seed: u64, shape: &PulseShape) -> PulseSchedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = amplitude_for_rotation(1.0, shape);
        let data: Vec<f64> = (0..channels * layers).map(|_| rng.random_range(-2.0..2.0) * unit).collect();
        PulseSchedule::from_channel_major(channels, layers, &data).unwrap()
    }

    #[test]
    fn propagator_of_zero_is_identity() {
        let u = step_propagator(&Operator::zeros(3, 3), 1e-9).unwrap();
        assert_eq!(u, Operator::identity(3, 3));
    }

    #[test]
    fn propagator_pauli_closed_form() {
        let omega = 3.1e7;
        let dt = 2.3e-8;
        let h = Operator::from_row_slice(
            2,
            2,
            &[0.0, 0.5 * omega, 0.5 * omega, 0.0].map(|x| Complex64::new(x, 0.0)),
        );
        let u = step_propagator(&h, dt).unwrap();
        let c = (omega * dt / 2.0).cos();
        let s = (omega * dt / 2.0).sin();
        let expected = Operator::from_row_slice(
            2,
            2,
            &[Complex64::new(c, 0.0), Complex64::new(0.0, -s), Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        );
        assert!((u - expected).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn propagator_is_unitary() {
        let dev = DeviceModel::q3_q5_q6().with_levels(3);
        let ham = device_hamiltonian(&dev);
        let mut h = ham.static_part.clone();
        for (m, c) in ham.controls.iter().enumerate() {
            h += c * Complex64::new(1e7 * (m as f64 - 2.5), 0.0);
        }
        let u = step_propagator(&h, 0.5e-9).unwrap();
        let defect = (u.adjoint() * &u - Operator::identity(27, 27)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(defect <= 1e-10, "unitarity defect {defect}");
    }

    #[test]
    fn propagator_rejects_non_hermitian() {
        let h = Operator::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0].map(|x| Complex64::new(x, 0.0)));
        assert!(matches!(step_propagator(&h, 1e-9), Err(Error::NonHermitian(_))));
    }

    #[test]
    fn ground_state_stationary_without_drive() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let wf = schedule_to_waveforms(&PulseSchedule::zeros(4, 4), &PulseShape::default()).unwrap();
        let psi0 = QuantumState::ground(4);
        let out = evolve_pure(&psi0, &ham, &wf, &EvolutionConfig::closed()).unwrap();
        assert!(out.fidelity(&psi0) >= 1.0 - 1e-9);
    }

    #[test]
    fn rabi_oracle() {
        let dev = DeviceModel::uncoupled(1, 2);
        let ham = device_hamiltonian(&dev);
        let shape = PulseShape::default();
        for (angle, expected) in [(PI, 1.0), (PI / 4.0, (PI / 8.0).sin().powi(2)), (PI / 2.0, 0.5)] {
            let wf = pi_pulse_waveform(angle, &shape);
            for config in [EvolutionConfig::closed(), EvolutionConfig { integrator: Integrator::Rk4, dt: 0.1e-9, open_system: false }] {
                let out = evolve_pure(&QuantumState::ground(2), &ham, &wf, &config).unwrap();
                assert_abs_diff_eq!(out.populations()[1], expected, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn integrators_agree_on_random_schedule() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let shape = PulseShape { sigma: 10e-9, dt: 0.5e-9 };
        for seed in 0..3 {
            let wf = schedule_to_waveforms(&random_schedule(4, 4, seed, &shape), &shape).unwrap();
            let psi0 = QuantumState::ground(4);
            let exact = evolve_pure(&psi0, &ham, &wf, &EvolutionConfig { integrator: Integrator::StepExponential, dt: 0.1e-9, open_system: false }).unwrap();
            let rk = evolve_pure(&psi0, &ham, &wf, &EvolutionConfig { integrator: Integrator::Rk4, dt: 0.1e-9, open_system: false }).unwrap();
            assert!(exact.fidelity(&rk) >= 1.0 - 1e-6);
            assert_abs_diff_eq!(exact.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn sample_halving_converges() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let coarse = PulseShape::default();
        let fine = PulseShape { dt: coarse.dt / 2.0, ..coarse };
        let sched = random_schedule(4, 4, 7, &coarse);
        let psi0 = QuantumState::ground(4);
        let a = evolve_pure(&psi0, &ham, &schedule_to_waveforms(&sched, &coarse).unwrap(), &EvolutionConfig::closed()).unwrap();
        let b = evolve_pure(&psi0, &ham, &schedule_to_waveforms(&sched, &fine).unwrap(), &EvolutionConfig { dt: fine.dt, ..EvolutionConfig::closed() }).unwrap();
        assert!(a.fidelity(&b) >= 1.0 - 1e-6, "fidelity {}", a.fidelity(&b));
    }

    #[test]
    fn config_dt_must_divide_sample() {
        let dev = DeviceModel::uncoupled(1, 2);
        let ham = device_hamiltonian(&dev);
        let wf = pi_pulse_waveform(PI, &PulseShape::default());
        let bad = EvolutionConfig { dt: 0.3e-9, ..EvolutionConfig::closed() };
        assert!(evolve_pure(&QuantumState::ground(2), &ham, &wf, &bad).is_err());
        assert!(evolve_pure(&QuantumState::ground(2), &ham, &wf, &EvolutionConfig::open()).is_err());
    }

    #[test]
    fn dimension_and_channel_mismatch() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let wf = pi_pulse_waveform(PI, &PulseShape::default());
        assert!(matches!(evolve_pure(&QuantumState::ground(4), &ham, &wf, &EvolutionConfig::closed()), Err(Error::Shape(_))));
        let wf4 = schedule_to_waveforms(&PulseSchedule::zeros(4, 1), &PulseShape::default()).unwrap();
        assert!(matches!(evolve_pure(&QuantumState::ground(2), &ham, &wf4, &EvolutionConfig::closed()), Err(Error::Shape(_))));
    }

    fn idle_waveform(duration: f64, channels: usize) -> Waveform {
        let shape = PulseShape::default();
        let layers = (duration / shape.support()).round() as usize;
        schedule_to_waveforms(&PulseSchedule::zeros(channels, layers), &shape).unwrap()
    }

    #[test]
    fn relaxation_closed_form() {
        let t1 = 0.2e-6;
        let dev = DeviceModel::uncoupled(1, 2).with_uniform_coherence(t1, f64::INFINITY);
        let ham = device_hamiltonian(&dev);
        let rho0 = DensityMatrix::from_pure(&QuantumState::basis(2, 1));
        for layers in [1usize, 4, 10] {
            let wf = idle_waveform(layers as f64 * 40e-9, 2);
            let rho = evolve_lindblad(&rho0, &ham, &wf, &dev, &EvolutionConfig::open()).unwrap();
            let t = wf.duration();
            assert_abs_diff_eq!(rho.matrix[(1, 1)].re, (-t / t1).exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn coherence_closed_form() {
        let (t1, tphi) = (0.3e-6, 0.1e-6);
        let dev = DeviceModel::uncoupled(1, 2).with_uniform_coherence(t1, tphi);
        let ham = device_hamiltonian(&dev);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = QuantumState::from_amplitudes(DVector::from_vec(vec![Complex64::new(s, 0.0); 2]));
        let rho0 = DensityMatrix::from_pure(&plus);
        let (g1, g2) = (1.0 / t1, 1.0 / tphi);
        for layers in [1usize, 5] {
            let wf = idle_waveform(layers as f64 * 40e-9, 2);
            let rho = evolve_lindblad(&rho0, &ham, &wf, &dev, &EvolutionConfig::open()).unwrap();
            let t = wf.duration();
            assert_abs_diff_eq!(rho.matrix[(0, 1)].norm(), 0.5 * (-(g1 + g2) * t / 2.0).exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn lindblad_without_rates_matches_pure() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let shape = PulseShape::default();
        let wf = schedule_to_waveforms(&random_schedule(4, 4, 11, &shape), &shape).unwrap();
        let psi0 = QuantumState::ground(4);
        let psi = evolve_pure(&psi0, &ham, &wf, &EvolutionConfig::closed()).unwrap();
        let rho = evolve_lindblad(&DensityMatrix::from_pure(&psi0), &ham, &wf, &dev.clone().with_uniform_coherence(f64::INFINITY, f64::INFINITY), &EvolutionConfig::open()).unwrap();
        assert!(rho.fidelity_with_pure(&psi) >= 1.0 - 1e-8);
    }

    #[test]
    fn lindblad_preserves_trace_hermiticity_positivity() {
        let dev = DeviceModel::q3_q5_q6().with_uniform_coherence(0.1e-6, 0.05e-6);
        let ham = device_hamiltonian(&dev);
        let shape = PulseShape::default();
        let wf = schedule_to_waveforms(&random_schedule(6, 4, 3, &shape), &shape).unwrap();
        let rho = evolve_lindblad(&DensityMatrix::from_pure(&QuantumState::ground(8)), &ham, &wf, &dev, &EvolutionConfig::open()).unwrap();
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-9);
        assert!(rho.trace().im.abs() <= 1e-9);
        assert!(rho.hermitian_defect() <= 1e-10);
        assert!(rho.min_eigenvalue() >= -1e-8);
    }

    #[test]
    fn negative_rates_rejected() {
        let mut dev = DeviceModel::uncoupled(1, 2);
        dev.t1 = vec![-1.0];
        assert!(Dissipator::from_device(&dev).is_err());
    }

    #[test]
    fn propagation_is_deterministic() {
        let dev = DeviceModel::q3_q5();
        let ham = device_hamiltonian(&dev);
        let shape = PulseShape::default();
        let wf = schedule_to_waveforms(&random_schedule(4, 4, 5, &shape), &shape).unwrap();
        let a = evolve_pure(&QuantumState::ground(4), &ham, &wf, &EvolutionConfig::closed()).unwrap();
        let b = evolve_pure(&QuantumState::ground(4), &ham, &wf, &EvolutionConfig::closed()).unwrap();
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn norm_preserved_over_full_schedule(seed in 0u64..1000) {
                let dev = DeviceModel::q3_q5_q6();
                let ham = device_hamiltonian(&dev);
                let shape = PulseShape::default();
                let wf = schedule_to_waveforms(&random_schedule(6, 4, seed, &shape), &shape).unwrap();
                let out = evolve_pure(&QuantumState::ground(8), &ham, &wf, &EvolutionConfig::closed()).unwrap();
                prop_assert!((out.norm() - 1.0).abs() <= 1e-9);
            }
        }
    }
}
