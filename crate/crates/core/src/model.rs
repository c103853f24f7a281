//! The end-to-end model: a linear encoder `theta_En = W x` feeding encoding
//! pulses, followed by directly trained inference pulses and label readout.
//!
//! Trainable amplitudes are stored in rotation units: a value `theta` plays a
//! Gaussian sub-pulse whose area is `theta` radians, i.e. a peak of
//! `amplitude_for_rotation(theta, shape)` rad/s on the device.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_lindblad_range, evolve_pure_range, DensityMatrix, Dissipator, EvolutionConfig, Hamiltonian,
    QuantumState,
};
use crate::error::{Error, Result};
use crate::hilbert::{build_control_hamiltonians, build_static_hamiltonian, DeviceModel};
use crate::pulses::{amplitude_for_rotation, schedule_to_waveforms, PulseSchedule, PulseShape};
use crate::readout::{classify, confidence, label_marginal, MeasurementModel, OutcomeDistribution, Populations};

pub const IMAGE_PIXELS: usize = 784;

/// Initial value of every encoder weight.
pub const INITIAL_WEIGHT: f64 = 1e-5;

/// Initial rotation angle of every inference sub-pulse.
pub const INITIAL_ROTATION: f64 = std::f64::consts::FRAC_PI_4;

/// Number of label qubits `ceil(log2 N)` for `N` classes.
pub fn label_qubit_count(classes: usize) -> usize {
    let mut l = 0;
    while (1usize << l) < classes {
        l += 1;
    }
    l
}

/// Register size `ceil(log2 N) + 1`.
pub fn qubits_for_classes(classes: usize) -> usize {
    label_qubit_count(classes) + 1
}

#[derive(Clone, Debug)]
pub enum State {
    Pure(QuantumState),
    Mixed(DensityMatrix),
}

impl Populations for State {
    fn basis_populations(&self) -> Vec<f64> {
        match self {
            State::Pure(s) => s.populations(),
            State::Mixed(r) => r.populations(),
        }
    }
}

impl State {
    pub fn as_pure(&self) -> Option<&QuantumState> {
        match self {
            State::Pure(s) => Some(s),
            State::Mixed(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardResult {
    /// State after the encoding block, `psi(t_E)`.
    pub encoded: State,
    /// State after the inference block, `psi(t_{E+I})`.
    pub final_state: State,
    pub distribution: OutcomeDistribution,
    pub confidence: Option<f64>,
}

/// Settings needed to build a fresh model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub class_labels: Vec<u8>,
    pub encoding_layers: usize,
    pub inference_layers: usize,
    pub device: DeviceModel,
    pub shape: PulseShape,
}

impl ModelConfig {
    /// Calibrated device sized for `class_labels`, `E = I = 2`, 40 ns sub-pulses.
    pub fn for_task(class_labels: Vec<u8>) -> Self {
        let m = qubits_for_classes(class_labels.len());
        let device = if m <= 3 {
            DeviceModel::calibrated(m)
        } else {
            DeviceModel::uncoupled(m, 2)
        };
        Self {
            class_labels,
            encoding_layers: 2,
            inference_layers: 2,
            device,
            shape: PulseShape::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndToEndModel {
    pub class_labels: Vec<u8>,
    pub encoding_layers: usize,
    pub inference_layers: usize,
    /// Encoder, `(r E) x 784`; row `m E + j` drives channel `m` in layer `j`.
    pub w: DMatrix<f64>,
    /// Inference amplitudes, `theta_in[m I + j]` drives channel `m` in layer `E + j`.
    pub theta_in: Vec<f64>,
    pub device: DeviceModel,
    pub shape: PulseShape,
    pub measurement: MeasurementModel,
}

/// `W = 1e-5` everywhere, every inference sub-pulse a `pi/4` rotation.
pub fn init_model(config: &ModelConfig) -> Result<EndToEndModel> {
    let n = config.class_labels.len();
    let r = 2 * config.device.num_qubits;
    let model = EndToEndModel {
        class_labels: config.class_labels.clone(),
        encoding_layers: config.encoding_layers,
        inference_layers: config.inference_layers,
        w: DMatrix::from_element(r * config.encoding_layers, IMAGE_PIXELS, INITIAL_WEIGHT),
        theta_in: vec![INITIAL_ROTATION; r * config.inference_layers],
        device: config.device.clone(),
        shape: config.shape,
        measurement: MeasurementModel::exact((0..label_qubit_count(n)).collect()),
    };
    model.validate()?;
    Ok(model)
}

/// `theta_En = W x`.
pub fn encode_controls(w: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
    if w.ncols() != x.len() {
        return Err(Error::Shape(format!("encoder expects {} inputs, got {}", w.ncols(), x.len())));
    }
    Ok((w * DVector::from_column_slice(x)).iter().copied().collect())
}

impl EndToEndModel {
    pub fn channels(&self) -> usize {
        2 * self.device.num_qubits
    }

    pub fn layers(&self) -> usize {
        self.encoding_layers + self.inference_layers
    }

    pub fn classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.shape.validate()?;
        let n = self.classes();
        if n < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        for (i, c) in self.class_labels.iter().enumerate() {
            if self.class_labels[..i].contains(c) {
                return Err(Error::Config(format!("class label {c} repeated")));
            }
        }
        let l = label_qubit_count(n);
        if self.device.num_qubits < l + 1 {
            return Err(Error::Config(format!(
                "{n} classes need {} qubits, device has {}",
                l + 1,
                self.device.num_qubits
            )));
        }
        self.measurement.validate(self.device.num_qubits)?;
        if self.measurement.outcomes() < n {
            return Err(Error::Config("too few label qubits for the class count".into()));
        }
        let r = self.channels();
        if self.w.nrows() != r * self.encoding_layers {
            return Err(Error::Shape(format!(
                "W has {} rows, expected {}",
                self.w.nrows(),
                r * self.encoding_layers
            )));
        }
        if self.theta_in.len() != r * self.inference_layers {
            return Err(Error::Shape(format!(
                "theta_in has {} entries, expected {}",
                self.theta_in.len(),
                r * self.inference_layers
            )));
        }
        if self.w.iter().chain(&self.theta_in).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        Ok(())
    }

    /// Peak-amplitude schedule for the given encoding and inference controls.
    pub fn schedule(&self, theta_en: &[f64], theta_in: &[f64]) -> Result<PulseSchedule> {
        let (r, e, i) = (self.channels(), self.encoding_layers, self.inference_layers);
        if theta_en.len() != r * e || theta_in.len() != r * i {
            return Err(Error::Shape(format!(
                "controls {}+{} for {r} channels and {e}+{i} layers",
                theta_en.len(),
                theta_in.len()
            )));
        }
        let unit = amplitude_for_rotation(1.0, &self.shape);
        let mut data = Vec::with_capacity(r * (e + i));
        for m in 0..r {
            data.extend(theta_en[m * e..(m + 1) * e].iter().map(|t| t * unit));
            data.extend(theta_in[m * i..(m + 1) * i].iter().map(|t| t * unit));
        }
        PulseSchedule::from_channel_major(r, e + i, &data)
    }

    /// Simulator for this model. `open` requests Lindblad propagation; it is
    /// ignored when the device has no finite coherence time.
    pub fn engine(&self, open: bool) -> Result<Engine<'_>> {
        self.validate()?;
        let hamiltonian = Hamiltonian::new(
            build_static_hamiltonian(&self.device)?,
            build_control_hamiltonians(&self.device)?,
        )?;
        let dissipator = if open && !self.device.is_closed() {
            Some(Dissipator::from_device(&self.device)?)
        } else {
            None
        };
        let config = if dissipator.is_some() {
            EvolutionConfig::open()
        } else {
            EvolutionConfig {
                dt: self.shape.dt,
                ..EvolutionConfig::closed()
            }
        };
        Ok(Engine {
            model: self,
            hamiltonian,
            dissipator,
            config,
        })
    }

    pub fn forward(&self, x: &[f64], label: Option<usize>) -> Result<ForwardResult> {
        self.engine(false)?.forward(x, label)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        self.engine(false)?.predict(x)
    }

    /// Maps an outcome distribution to a digit: basis index `i` is `class_labels[i]`.
    pub fn label_for(&self, dist: &OutcomeDistribution) -> u8 {
        let n = self.classes();
        // unused outcomes (N not a power of two) never win the vote
        let restricted = OutcomeDistribution(dist.0[..n].to_vec());
        self.class_labels[classify(&restricted)]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            class_labels: self.class_labels.clone(),
            e: self.encoding_layers,
            i: self.inference_layers,
            w: self.w.row_iter().map(|r| r.iter().copied().collect()).collect(),
            theta_in: self.theta_in.clone(),
            device: self.device.clone(),
            shape: self.shape,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        let rows = c.w.len();
        let cols = c.w.first().map_or(0, Vec::len);
        if c.w.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged W in checkpoint".into()));
        }
        let w = DMatrix::from_row_iterator(rows, cols, c.w.into_iter().flatten());
        let l = label_qubit_count(c.class_labels.len());
        let model = Self {
            class_labels: c.class_labels,
            encoding_layers: c.e,
            inference_layers: c.i,
            w,
            theta_in: c.theta_in,
            device: c.device,
            shape: c.shape,
            measurement: MeasurementModel::exact((0..l).collect()),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_checkpoint(c)
    }
}

/// On-disk model: a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub class_labels: Vec<u8>,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "I")]
    pub i: usize,
    /// Encoder rows, row-major.
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub theta_in: Vec<f64>,
    pub device: DeviceModel,
    pub shape: PulseShape,
}

/// A model bound to its prebuilt Hamiltonian and integrator settings.
pub struct Engine<'a> {
    pub model: &'a EndToEndModel,
    hamiltonian: Hamiltonian,
    dissipator: Option<Dissipator>,
    config: EvolutionConfig,
}

/// States at every layer boundary, `states[j]` being the state entering layer `j`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

impl Engine<'_> {
    pub fn is_open(&self) -> bool {
        self.dissipator.is_some()
    }

    fn initial_state(&self) -> State {
        let dim = self.model.device.dim();
        let psi = QuantumState::ground(dim);
        if self.is_open() {
            State::Mixed(DensityMatrix::from_pure(&psi))
        } else {
            State::Pure(psi)
        }
    }

    /// Propagates layers `from..` starting from `start`, recording each boundary.
    fn propagate(&self, start: State, from: usize, theta_en: &[f64], theta_in: &[f64]) -> Result<Vec<State>> {
        let sched = self.model.schedule(theta_en, theta_in)?;
        let wf = schedule_to_waveforms(&sched, &self.model.shape)?;
        let spl = wf.samples_per_layer;
        let mut out = Vec::with_capacity(self.model.layers() + 1 - from);
        let mut cur = start;
        out.push(cur.clone());
        for j in from..self.model.layers() {
            let range = j * spl..(j + 1) * spl;
            cur = match (&cur, &self.dissipator) {
                (State::Pure(psi), None) => {
                    State::Pure(evolve_pure_range(psi, &self.hamiltonian, &wf, range, &self.config)?)
                }
                (State::Mixed(rho), Some(diss)) => State::Mixed(evolve_lindblad_range(
                    rho,
                    &self.hamiltonian,
                    &wf,
                    diss,
                    range,
                    &self.config,
                )?),
                _ => return Err(Error::Config("state kind does not match engine mode".into())),
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn trajectory(&self, theta_en: &[f64], theta_in: &[f64]) -> Result<Trajectory> {
        let states = self.propagate(self.initial_state(), 0, theta_en, theta_in)?;
        Ok(Trajectory { states })
    }

    /// Final state when only layers `from..` differ from `base`.
    pub fn resume(&self, base: &Trajectory, from: usize, theta_en: &[f64], theta_in: &[f64]) -> Result<State> {
        let states = self.propagate(base.states[from].clone(), from, theta_en, theta_in)?;
        Ok(states.into_iter().last().expect("non-empty"))
    }

    pub fn distribution(&self, state: &State) -> Result<OutcomeDistribution> {
        label_marginal(
            state,
            self.model.device.levels,
            self.model.device.num_qubits,
            &self.model.measurement.label_qubits,
        )
    }

    pub fn forward_controls(&self, theta_en: &[f64], theta_in: &[f64], label: Option<usize>) -> Result<ForwardResult> {
        let traj = self.trajectory(theta_en, theta_in)?;
        let e = self.model.encoding_layers;
        let final_state = traj.final_state().clone();
        let distribution = self.distribution(&final_state)?;
        let confidence = label.map(|y| confidence(&distribution, y)).transpose()?;
        if let Some(p) = confidence {
            if !p.is_finite() {
                return Err(Error::NonFinite("confidence".into()));
            }
        }
        Ok(ForwardResult {
            encoded: traj.states[e].clone(),
            final_state,
            distribution,
            confidence,
        })
    }

    pub fn forward(&self, x: &[f64], label: Option<usize>) -> Result<ForwardResult> {
        let theta_en = encode_controls(&self.model.w, x)?;
        self.forward_controls(&theta_en, &self.model.theta_in, label)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        let r = self.forward(x, None)?;
        Ok(self.model.label_for(&r.distribution))
    }
}

/// `1 - (1/b) sum_l P(y_l | x_l)`.
pub fn loss(model: &EndToEndModel, batch: &[(&[f64], usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let engine = model.engine(false)?;
    let mut total = 0.0;
    for (x, y) in batch {
        total += engine.forward(x, Some(*y))?.confidence.expect("label given");
    }
    Ok(loss_from_confidences(&[total / batch.len() as f64]))
}

/// `1 - mean(confidences)`.
pub fn loss_from_confidences(confidences: &[f64]) -> f64 {
    1.0 - confidences.iter().sum::<f64>() / confidences.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn two_digit() -> EndToEndModel {
        init_model(&ModelConfig::for_task(vec![0, 2])).unwrap()
    }

    fn zero_control(mut m: EndToEndModel) -> EndToEndModel {
        m.w.fill(0.0);
        m.theta_in.iter_mut().for_each(|t| *t = 0.0);
        m
    }

    #[test]
    fn qubit_allocation() {
        assert_eq!(qubits_for_classes(2), 2);
        assert_eq!(qubits_for_classes(3), 3);
        assert_eq!(qubits_for_classes(4), 3);
        assert_eq!(qubits_for_classes(5), 4);
        assert_eq!(label_qubit_count(4), 2);
    }

    #[test]
    fn encoder_examples() {
        let w0 = DMatrix::zeros(8, 784);
        let x: Vec<f64> = (0..784).map(|i| (i % 7) as f64 / 7.0).collect();
        assert!(encode_controls(&w0, &x).unwrap().iter().all(|&v| v == 0.0));

        let w = DMatrix::from_element(8, 784, 1e-5);
        let s: f64 = x.iter().sum();
        for v in encode_controls(&w, &x).unwrap() {
            assert_abs_diff_eq!(v, 1e-5 * s, epsilon = 1e-15);
        }
        assert!(encode_controls(&w, &x[..10]).is_err());
    }

    #[test]
    fn init_values() {
        let m = two_digit();
        assert_eq!(m.w.shape(), (8, 784));
        assert!(m.w.iter().all(|&v| v == 1e-5));
        assert_eq!(m.theta_in.len(), 8);
        assert!(m.theta_in.iter().all(|&t| t == PI / 4.0 && t > 0.0));
        let sched = m.schedule(&[0.0; 8], &m.theta_in).unwrap();
        let peak = amplitude_for_rotation(PI / 4.0, &m.shape);
        assert_abs_diff_eq!(sched.amplitude(0, 2), peak, epsilon = 1e-6);
        assert_eq!(m, two_digit());
    }

    #[test]
    fn schedule_layout() {
        let m = two_digit();
        let en: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let inf: Vec<f64> = (10..18).map(|v| v as f64).collect();
        let s = m.schedule(&en, &inf).unwrap();
        let unit = amplitude_for_rotation(1.0, &m.shape);
        // channel 1, encoding layer 1 is theta_En[1 * E + 1]
        assert_abs_diff_eq!(s.amplitude(1, 1), 3.0 * unit, epsilon = 1e-6);
        // channel 2, inference layer 0 is theta_In[2 * I]
        assert_abs_diff_eq!(s.amplitude(2, 2), 14.0 * unit, epsilon = 1e-6);
    }

    #[test]
    fn zero_controls_leave_ground_state() {
        let m = zero_control(two_digit());
        let x = vec![0.5; 784];
        let r = m.forward(&x, Some(0)).unwrap();
        assert_abs_diff_eq!(r.confidence.unwrap(), 1.0, epsilon = 1e-9);
        assert_eq!(m.predict(&x).unwrap(), 0);
    }

    #[test]
    fn rabi_pulse_on_label_qubit() {
        let mut cfg = ModelConfig::for_task(vec![0, 2]);
        cfg.device = DeviceModel::uncoupled(2, 2);
        let mut m = zero_control(init_model(&cfg).unwrap());
        // x channel of qubit 0 is channel 0; a full pi area across its inference layers
        m.theta_in[0] = PI;
        let r = m.forward(&vec![0.0; 784], Some(1)).unwrap();
        assert_abs_diff_eq!(r.confidence.unwrap(), 1.0, epsilon = 1e-3);
        assert_eq!(m.predict(&vec![0.0; 784]).unwrap(), 2);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = two_digit();
        let x: Vec<f64> = (0..784).map(|i| ((i * 31) % 256) as f64 / 255.0).collect();
        let a = m.forward(&x, Some(1)).unwrap();
        let b = m.forward(&x, Some(1)).unwrap();
        assert_eq!(a.distribution, b.distribution);
        assert_eq!(a.confidence, b.confidence);
    }

    #[test]
    fn resume_matches_full_trajectory() {
        let m = two_digit();
        let engine = m.engine(false).unwrap();
        let en: Vec<f64> = (0..8).map(|v| 0.3 * v as f64 - 1.0).collect();
        let base = engine.trajectory(&en, &m.theta_in).unwrap();
        let mut inf = m.theta_in.clone();
        inf[5] += 0.01;
        let resumed = engine.resume(&base, 3, &en, &inf).unwrap();
        let full = engine.trajectory(&en, &inf).unwrap();
        let (State::Pure(a), State::Pure(b)) = (&resumed, full.final_state()) else { panic!() };
        assert_eq!(a, b);
    }

    #[test]
    fn density_forward_matches_pure_without_decoherence() {
        let m = two_digit();
        let mut open_model = m.clone();
        open_model.device = open_model.device.with_uniform_coherence(1e3, 1e3);
        let x: Vec<f64> = (0..784).map(|i| ((i * 7) % 256) as f64 / 255.0).collect();
        let en = encode_controls(&m.w, &x).unwrap();
        let pure = m.engine(false).unwrap().forward_controls(&en, &m.theta_in, None).unwrap();
        let open = open_model.engine(true).unwrap();
        assert!(open.is_open());
        let mixed = open.forward_controls(&en, &m.theta_in, None).unwrap();
        for (a, b) in pure.distribution.0.iter().zip(&mixed.distribution.0) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn loss_arithmetic() {
        assert_abs_diff_eq!(loss_from_confidences(&[0.9, 0.7]), 0.2, epsilon = 1e-15);
        assert_eq!(loss_from_confidences(&[1.0, 1.0]), 0.0);
        assert_abs_diff_eq!(loss_from_confidences(&[0.37]), 0.63, epsilon = 1e-15);
        let m = zero_control(two_digit());
        let x = vec![0.1; 784];
        assert_abs_diff_eq!(loss(&m, &[(&x, 0), (&x, 0)]).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(loss(&m, &[(&x, 0), (&x, 1)]).unwrap(), 0.5, epsilon = 1e-9);
        assert!(matches!(loss(&m, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn positional_label_mapping() {
        let mut m = init_model(&ModelConfig::for_task(vec![0, 2, 7, 9])).unwrap();
        assert_eq!(m.label_for(&OutcomeDistribution(vec![0.1, 0.2, 0.5, 0.2])), 7);
        m.class_labels = vec![9, 7, 2, 0];
        assert_eq!(m.label_for(&OutcomeDistribution(vec![0.1, 0.2, 0.5, 0.2])), 2);
        let m2 = two_digit();
        assert_eq!(m2.label_for(&OutcomeDistribution(vec![0.9, 0.1])), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        let mut m = init_model(&ModelConfig::for_task(vec![0, 2, 7, 9])).unwrap();
        m.w[(3, 100)] = -0.123456789012345;
        m.theta_in[2] = 1.0 / 3.0;
        m.save(&p).unwrap();
        let back = EndToEndModel::load(&p).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["class_labels", "\"E\"", "\"I\"", "\"W\"", "theta_in", "device", "shape"] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let mut c = two_digit().to_checkpoint();
        c.theta_in.pop();
        assert!(EndToEndModel::from_checkpoint(c).is_err());
    }
}
