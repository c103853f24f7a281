//! Finite-difference gradients of the batch loss and Adam updates.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Sample};
use crate::error::{Error, Result};
use crate::model::{encode_controls, EndToEndModel, Engine, State, Trajectory, INITIAL_ROTATION};
use crate::par;
use crate::readout::{apply_confusion, bayesian_correct, confidence, sample_shots, OutcomeDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Forward-difference step, in rotation units (radians of pulse area).
    pub delta: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Estimate every probability from this many shots instead of exactly.
    pub shots: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            delta: 1e-2 * INITIAL_ROTATION,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 300,
            batch_size: 2,
            seed: 0,
            shots: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("lr and epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.shots == Some(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        Ok(())
    }
}

/// Mean batch confidence and loss gradients for `W` and `theta_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub p_out: f64,
    pub g_w: DMatrix<f64>,
    pub g_in: Vec<f64>,
}

impl GradientReport {
    pub fn loss(&self) -> f64 {
        1.0 - self.p_out
    }
}

/// Shot-noise emulation for gradient estimates.
#[derive(Clone, Copy, Debug)]
pub struct ShotNoise {
    pub shots: usize,
    pub seed: u64,
}

#[derive(Clone, Copy)]
enum Param {
    Encoding(usize),
    Inference(usize),
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 fold
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

fn probability(engine: &Engine<'_>, state: &State, label: usize, noise: Option<(ShotNoise, u64)>) -> Result<f64> {
    let mut dist = engine.distribution(state)?;
    if let Some((n, salt)) = noise {
        dist = sample_shots(&dist, n.shots, mix_seed(&[n.seed, salt]));
    }
    let p = confidence(&dist, label)?;
    if !p.is_finite() {
        return Err(Error::NonFinite("forward confidence".into()));
    }
    Ok(p)
}

/// Forward-difference gradients of the loss over one batch.
///
/// For each sample the baseline `P0` is computed once; every encoding and
/// inference control is then bumped by `delta` in turn and the trajectory is
/// resumed from the perturbed layer. `g_W -= g1 x^T / b`, `g_In -= g2 / b`.
pub fn loss_and_gradients(model: &EndToEndModel, batch: &[(&[f64], usize)], delta: f64) -> Result<GradientReport> {
    loss_and_gradients_with(model, batch, delta, None)
}

pub fn loss_and_gradients_with(
    model: &EndToEndModel,
    batch: &[(&[f64], usize)],
    delta: f64,
    noise: Option<ShotNoise>,
) -> Result<GradientReport> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Config(format!("delta must be positive, got {delta}")));
    }
    let engine = model.engine(false)?;
    let b = batch.len() as f64;
    let (e, i) = (model.encoding_layers, model.inference_layers);
    let n_en = model.w.nrows();
    let n_in = model.theta_in.len();

    let bases: Vec<Result<(Vec<f64>, Trajectory, f64)>> = par::map(batch, |(x, y)| {
        let theta_en = encode_controls(&model.w, x)?;
        let traj = engine.trajectory(&theta_en, &model.theta_in)?;
        let p0 = probability(&engine, traj.final_state(), *y, noise.map(|n| (n, 0)))?;
        Ok((theta_en, traj, p0))
    });
    let bases = bases.into_iter().collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, Param)> = (0..batch.len())
        .flat_map(|l| {
            (0..n_en)
                .map(move |k| (l, Param::Encoding(k)))
                .chain((0..n_in).map(move |k| (l, Param::Inference(k))))
        })
        .collect();

    let perturbed: Vec<Result<f64>> = par::map(&tasks, |&(l, param)| {
        let (theta_en, traj, _) = &bases[l];
        let y = batch[l].1;
        let (state, salt) = match param {
            Param::Encoding(k) => {
                let mut en = theta_en.clone();
                en[k] += delta;
                (engine.resume(traj, k % e, &en, &model.theta_in)?, 1 + k as u64)
            }
            Param::Inference(k) => {
                let mut inf = model.theta_in.clone();
                inf[k] += delta;
                (engine.resume(traj, e + k % i, theta_en, &inf)?, 1 + (n_en + k) as u64)
            }
        };
        probability(&engine, &state, y, noise.map(|n| (n, salt)))
    });

    let mut g_w = DMatrix::zeros(n_en, model.w.ncols());
    let mut g_in = vec![0.0; n_in];
    let mut p_out = 0.0;
    let mut it = perturbed.into_iter();
    for (l, (x, _)) in batch.iter().enumerate() {
        let p0 = bases[l].2;
        let g1 = (0..n_en)
            .map(|_| it.next().expect("task count").map(|p| (p - p0) / delta))
            .collect::<Result<Vec<_>>>()?;
        let g2 = (0..n_in)
            .map(|_| it.next().expect("task count").map(|p| (p - p0) / delta))
            .collect::<Result<Vec<_>>>()?;
        for (r, g) in g1.iter().enumerate() {
            for (c, xv) in x.iter().enumerate() {
                g_w[(r, c)] -= g * xv / b;
            }
        }
        for (acc, g) in g_in.iter_mut().zip(&g2) {
            *acc -= g / b;
        }
        p_out += p0 / b;
    }
    Ok(GradientReport { p_out, g_w, g_in })
}

/// Adam with bias-corrected moments; one instance per parameter block.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First moment estimate.
    pub s: Vec<f64>,
    /// Second moment estimate.
    pub r: Vec<f64>,
    pub step: i32,
}

impl Adam {
    pub fn new(len: usize, config: &TrainerConfig) -> Self {
        Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            s: vec![0.0; len],
            r: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.s.len());
        assert_eq!(grad.len(), self.s.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for k in 0..params.len() {
            let g = grad[k];
            self.s[k] = self.beta1 * self.s[k] + (1.0 - self.beta1) * g;
            self.r[k] = self.beta2 * self.r[k] + (1.0 - self.beta2) * g * g;
            let s_hat = self.s[k] / c1;
            let r_hat = self.r[k] / c2;
            params[k] -= self.lr * s_hat / (r_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EndToEndModel,
    pub history: Vec<IterationRecord>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

pub fn adam_train(model: &EndToEndModel, dataset: &[Sample], config: &TrainerConfig) -> Result<TrainOutcome> {
    adam_train_with(model, dataset, config, |_| {})
}

/// Runs `config.iterations` Adam steps; `on_iteration` sees each record as it lands.
pub fn adam_train_with(
    model: &EndToEndModel,
    dataset: &[Sample],
    config: &TrainerConfig,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = model.clone();
    let mut adam_w = Adam::new(model.w.len(), config);
    let mut adam_in = Adam::new(model.theta_in.len(), config);
    let mut sampler = BatchSampler::new(dataset.len(), config.batch_size, config.seed)?;
    let start = Instant::now();
    let mut history = Vec::with_capacity(config.iterations);

    for k in 1..=config.iterations {
        let idx = sampler.next().expect("sampler is infinite");
        let batch: Vec<(&[f64], usize)> = idx.iter().map(|&j| (dataset[j].x.as_slice(), dataset[j].y)).collect();
        let noise = config.shots.map(|shots| ShotNoise {
            shots,
            seed: mix_seed(&[config.seed, k as u64]),
        });
        let report = loss_and_gradients_with(&model, &batch, config.delta, noise)?;
        adam_w.update(model.w.as_mut_slice(), report.g_w.as_slice());
        adam_in.update(&mut model.theta_in, &report.g_in);
        let rec = IterationRecord {
            iteration: k,
            loss: report.loss(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_iteration(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}

/// Readout emulation applied at evaluation time.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub open_system: bool,
    pub shots: Option<usize>,
    pub confusion: Option<DMatrix<f64>>,
    pub bayesian_correction: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Mean confidence of the true label, `1 - L`.
    pub mean_confidence: f64,
    /// `counts[true][predicted]`, indexed by class position.
    pub counts: Vec<Vec<usize>>,
}

/// Observed distribution after optional confusion, shot noise and correction.
pub fn observe(dist: &OutcomeDistribution, opts: &EvalOptions, salt: u64) -> Result<OutcomeDistribution> {
    let mut d = dist.clone();
    if let Some(m0) = &opts.confusion {
        d = apply_confusion(&d, m0)?;
    }
    if let Some(shots) = opts.shots {
        d = sample_shots(&d, shots, mix_seed(&[opts.seed, salt]));
    }
    if opts.bayesian_correction {
        if let Some(m0) = &opts.confusion {
            d = bayesian_correct(&d, m0)?;
        }
    }
    Ok(d)
}

pub fn evaluate(model: &EndToEndModel, test: &[Sample], opts: &EvalOptions) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let engine = model.engine(opts.open_system)?;
    let indexed: Vec<(usize, &Sample)> = test.iter().enumerate().collect();
    let results: Vec<Result<(usize, f64)>> = par::map(&indexed, |&(k, s)| {
        let r = engine.forward(&s.x, None)?;
        let d = observe(&r.distribution, opts, k as u64)?;
        let digit = model.label_for(&d);
        let pred = model.class_labels.iter().position(|&c| c == digit).expect("label from list");
        Ok((pred, confidence(&d, s.y)?))
    });
    let n = model.classes();
    let mut counts = vec![vec![0usize; n]; n];
    let mut conf_sum = 0.0;
    for (s, r) in test.iter().zip(results) {
        let (pred, c) = r?;
        counts[s.y][pred] += 1;
        conf_sum += c;
    }
    let correct: usize = (0..n).map(|c| counts[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        mean_confidence: conf_sum / test.len() as f64,
        counts,
    })
}

/// Centred moving average over `window` neighbouring points (truncated at the ends).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let before = (w - 1) / 2;
    let after = w - 1 - before;
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(before);
            let hi = (k + after + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
