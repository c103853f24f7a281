//! Two-class linear discriminant projections along the model pipeline, and
//! accuracy grids under decoherence.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::dynamics::QuantumState;
use crate::error::{Error, Result};
use crate::model::{encode_controls, init_model, EndToEndModel, ModelConfig, State};
use crate::par;
use crate::pulses::PulseShape;
use crate::training::{adam_train, evaluate, EvalOptions, TrainerConfig};

/// Real parts followed by imaginary parts, in basis order.
pub fn state_to_real(state: &QuantumState) -> Vec<f64> {
    let a = &state.amplitudes;
    a.iter().map(|z| z.re).chain(a.iter().map(|z| z.im)).collect()
}

/// Relative singular-value cutoff below which the scatter matrix is treated as singular.
pub const PINV_RCOND: f64 = 1e-10;

fn mean(points: &[Vec<f64>], dim: usize) -> DVector<f64> {
    let mut mu = DVector::zeros(dim);
    for p in points {
        mu += DVector::from_column_slice(p);
    }
    mu / points.len() as f64
}

/// Covariance normalised by the point count.
fn scatter(points: &[Vec<f64>], mu: &DVector<f64>) -> DMatrix<f64> {
    let dim = mu.len();
    let mut s = DMatrix::zeros(dim, dim);
    for p in points {
        let d = DVector::from_column_slice(p) - mu;
        s.ger(1.0, &d, &d, 1.0);
    }
    s / points.len() as f64
}

/// Solves `S w = b` for symmetric positive semidefinite `S` with the
/// pseudo-inverse, discarding eigen-directions below `rcond * max`.
pub fn pinv_solve(s: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let cutoff = rcond * eig.eigenvalues.amax();
    let coeffs = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, &l)| if l.abs() > cutoff { c / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

fn is_ill_conditioned(s: &DMatrix<f64>) -> bool {
    let sv = s.singular_values();
    let max = sv.max();
    max == 0.0 || sv.min() < PINV_RCOND * max
}

/// Optimal projector `(E0 + E1)^{-1} (mu0 - mu1)` and whether the pseudo-inverse was needed.
pub fn lda_projector(cluster0: &[Vec<f64>], cluster1: &[Vec<f64>]) -> Result<(DVector<f64>, bool)> {
    if cluster0.len() < 2 || cluster1.len() < 2 {
        return Err(Error::DegenerateProjector("each cluster needs at least two points".into()));
    }
    let dim = cluster0[0].len();
    if cluster0.iter().chain(cluster1).any(|p| p.len() != dim) {
        return Err(Error::Shape("LDA points have mixed dimensions".into()));
    }
    let mu0 = mean(cluster0, dim);
    let mu1 = mean(cluster1, dim);
    let diff = &mu0 - &mu1;
    if diff.amax() == 0.0 {
        return Err(Error::DegenerateProjector("cluster means coincide".into()));
    }
    let s = scatter(cluster0, &mu0) + scatter(cluster1, &mu1);
    if is_ill_conditioned(&s) {
        return Ok((pinv_solve(&s, &diff, PINV_RCOND), true));
    }
    let omega = s
        .clone()
        .cholesky()
        .map(|c| c.solve(&diff))
        .or_else(|| s.clone().lu().solve(&diff))
        .ok_or_else(|| Error::DegenerateProjector("scatter matrix not invertible".into()))?;
    Ok((omega, false))
}

/// `omega^T (x - (mu0 + mu1)/2) / |omega^T (mu0 - mu1)|`, oriented so `mu0` lands on +0.5.
pub fn lda_project(points: &[Vec<f64>], omega: &DVector<f64>, mu0: &[f64], mu1: &[f64]) -> Result<Vec<f64>> {
    let dim = omega.len();
    if mu0.len() != dim || mu1.len() != dim {
        return Err(Error::Shape("projector and means differ in dimension".into()));
    }
    let gap: f64 = (0..dim).map(|k| omega[k] * (mu0[k] - mu1[k])).sum();
    if gap == 0.0 || !gap.is_finite() {
        return Err(Error::DegenerateProjector("projector is orthogonal to the mean difference".into()));
    }
    let mid: Vec<f64> = mu0.iter().zip(mu1).map(|(a, b)| 0.5 * (a + b)).collect();
    points
        .iter()
        .map(|p| {
            if p.len() != dim {
                return Err(Error::Shape(format!("point of length {} for projector of length {dim}", p.len())));
            }
            Ok((0..dim).map(|k| omega[k] * (p[k] - mid[k])).sum::<f64>() / gap)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaResult {
    pub omega: Vec<f64>,
    /// Projected points of cluster 0 and cluster 1.
    pub projected: [Vec<f64>; 2],
    pub means: [f64; 2],
    pub stds: [f64; 2],
    /// Root mean squared distance of every point from its own cluster centre.
    pub pooled_std: f64,
    /// `|omega^T (mu0 - mu1)|` before normalisation.
    pub normalization: f64,
    pub pseudo_inverse: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Fits the projector on both clusters and projects them.
pub fn lda(cluster0: &[Vec<f64>], cluster1: &[Vec<f64>]) -> Result<LdaResult> {
    let (omega, pseudo_inverse) = lda_projector(cluster0, cluster1)?;
    let dim = omega.len();
    let mu0: Vec<f64> = mean(cluster0, dim).iter().copied().collect();
    let mu1: Vec<f64> = mean(cluster1, dim).iter().copied().collect();
    let gap: f64 = (0..dim).map(|k| omega[k] * (mu0[k] - mu1[k])).sum();
    let omega = if gap < 0.0 { -omega } else { omega };
    let p0 = lda_project(cluster0, &omega, &mu0, &mu1)?;
    let p1 = lda_project(cluster1, &omega, &mu0, &mu1)?;
    let (m0, s0) = mean_std(&p0);
    let (m1, s1) = mean_std(&p1);
    let n = (p0.len() + p1.len()) as f64;
    let pooled_std = ((s0 * s0 * p0.len() as f64 + s1 * s1 * p1.len() as f64) / n).sqrt();
    Ok(LdaResult {
        omega: omega.iter().copied().collect(),
        projected: [p0, p1],
        means: [m0, m1],
        stds: [s0, s1],
        pooled_std,
        normalization: gap.abs(),
        pseudo_inverse,
    })
}

/// Where along the pipeline the data is captured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pixels,
    EncodingControls,
    EncodedState,
    FinalState,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Pixels, Stage::EncodingControls, Stage::EncodedState, Stage::FinalState];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pixels => "pixels",
            Stage::EncodingControls => "encoding_controls",
            Stage::EncodedState => "encoded_state",
            Stage::FinalState => "final_state",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLda {
    pub stage: Stage,
    pub dim: usize,
    pub result: LdaResult,
}

fn pure(state: &State) -> Result<&QuantumState> {
    state
        .as_pure()
        .ok_or_else(|| Error::Config("LDA needs closed-system (pure) states".into()))
}

/// LDA of the pixels, `theta_En`, `psi(t_E)` and `psi(t_{E+I})` of a two-class model.
pub fn pipeline_lda(model: &EndToEndModel, samples: &[Sample]) -> Result<Vec<StageLda>> {
    if model.classes() != 2 {
        return Err(Error::UnsupportedTask(format!(
            "LDA is two-class only; model has {} classes",
            model.classes()
        )));
    }
    let engine = model.engine(false)?;
    let features: Vec<Result<[Vec<f64>; 4]>> = par::map(samples, |s| {
        let en = encode_controls(&model.w, &s.x)?;
        let fwd = engine.forward_controls(&en, &model.theta_in, None)?;
        Ok([
            s.x.clone(),
            en,
            state_to_real(pure(&fwd.encoded)?),
            state_to_real(pure(&fwd.final_state)?),
        ])
    });
    let mut clusters: [[Vec<Vec<f64>>; 2]; 4] = Default::default();
    for (s, f) in samples.iter().zip(features) {
        if s.y > 1 {
            return Err(Error::IndexOutOfRange { index: s.y, limit: 2 });
        }
        for (stage, v) in f?.into_iter().enumerate() {
            clusters[stage][s.y].push(v);
        }
    }
    Stage::ALL
        .iter()
        .zip(clusters.iter())
        .map(|(&stage, [c0, c1])| {
            let result = lda(c0, c1)?;
            Ok(StageLda {
                stage,
                dim: result.omega.len(),
                result,
            })
        })
        .collect()
}

/// One cluster/value row per projected point.
pub fn write_lda_points(path: impl AsRef<Path>, result: &LdaResult) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["cluster", "projection"]).map_err(|e| csv_err(path, e))?;
    for (c, pts) in result.projected.iter().enumerate() {
        for p in pts {
            w.write_record([c.to_string(), p.to_string()]).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_lda_points(path: impl AsRef<Path>) -> Result<[Vec<f64>; 2]> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: [Vec<f64>; 2] = Default::default();
    for rec in r.deserialize::<(usize, f64)>() {
        let (c, v) = rec.map_err(|e| csv_err(path, e))?;
        out.get_mut(c)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                reason: format!("cluster {c}"),
            })?
            .push(v);
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Accuracy and mean confidence over rows of coherence times and columns of pulse lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Total pulse length of all layers, seconds.
    pub taus: Vec<f64>,
    /// Row `i` uses `t1[i]` and `t_phi[i]` on every qubit; infinity means no such channel.
    #[serde(with = "crate::serde_inf::vec")]
    pub t1: Vec<f64>,
    #[serde(with = "crate::serde_inf::vec")]
    pub t_phi: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
    pub confidence: Vec<Vec<f64>>,
}

/// Shape whose layers fill `tau` seconds in total.
pub fn shape_for_tau(tau: f64, layers: usize, dt: f64) -> Result<PulseShape> {
    let shape = PulseShape::for_total_length(tau, layers, dt);
    shape.validate()?;
    Ok(shape)
}

/// Closed-system training of a fresh model whose pulses span `tau`.
pub fn train_for_tau(config: &ModelConfig, tau: f64, train: &[Sample], trainer: &TrainerConfig) -> Result<EndToEndModel> {
    let mut cfg = config.clone();
    cfg.shape = shape_for_tau(tau, cfg.encoding_layers + cfg.inference_layers, cfg.shape.dt)?;
    Ok(adam_train(&init_model(&cfg)?, train, trainer)?.model)
}

/// Evaluates `models[j]` (trained at `taus[j]`) open-system for every coherence row.
pub fn decoherence_sweep(
    models: &[EndToEndModel],
    t1: &[f64],
    t_phi: &[f64],
    taus: &[f64],
    test: &[Sample],
) -> Result<SweepGrid> {
    if models.len() != taus.len() {
        return Err(Error::Shape(format!("{} models for {} pulse lengths", models.len(), taus.len())));
    }
    if t1.len() != t_phi.len() {
        return Err(Error::Shape(format!("{} T1 values vs {} T_phi values", t1.len(), t_phi.len())));
    }
    for (m, &tau) in models.iter().zip(taus) {
        let length = m.shape.support() * m.layers() as f64;
        if (length - tau).abs() > 1e-6 * tau {
            return Err(Error::Config(format!("model pulses last {length} s, expected {tau} s")));
        }
    }
    let opts = EvalOptions {
        open_system: true,
        ..EvalOptions::default()
    };
    let mut accuracy = vec![vec![0.0; taus.len()]; t1.len()];
    let mut confidence = accuracy.clone();
    for (i, (&a, &b)) in t1.iter().zip(t_phi).enumerate() {
        for (j, model) in models.iter().enumerate() {
            let mut noisy = model.clone();
            noisy.device = noisy.device.with_uniform_coherence(a, b);
            noisy.device.validate()?;
            let ev = evaluate(&noisy, test, &opts)?;
            accuracy[i][j] = ev.accuracy;
            confidence[i][j] = ev.mean_confidence;
        }
    }
    Ok(SweepGrid {
        taus: taus.to_vec(),
        t1: t1.to_vec(),
        t_phi: t_phi.to_vec(),
        accuracy,
        confidence,
    })
}

fn fmt_time_us(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        format!("{}", t * 1e6)
    }
}

fn parse_time_us(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    if s.trim() == "inf" {
        Ok(f64::INFINITY)
    } else {
        s.trim().parse::<f64>().map(|v| v * 1e6_f64.recip())
    }
}

/// Which table of a [`SweepGrid`] to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepTable {
    Accuracy,
    Confidence,
}

/// Rows are coherence pairs, columns pulse lengths; times in microseconds.
pub fn write_sweep_csv(path: impl AsRef<Path>, grid: &SweepGrid, table: SweepTable) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("t1_us,t_phi_us");
    for &t in &grid.taus {
        text.push(',');
        text.push_str(&fmt_time_us(t));
    }
    text.push('\n');
    let values = match table {
        SweepTable::Accuracy => &grid.accuracy,
        SweepTable::Confidence => &grid.confidence,
    };
    for (i, row) in values.iter().enumerate() {
        text.push_str(&fmt_time_us(grid.t1[i]));
        text.push(',');
        text.push_str(&fmt_time_us(grid.t_phi[i]));
        for v in row {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_sweep_csv`]: `(taus, t1, t_phi, values)`.
#[allow(clippy::type_complexity)]
pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let taus = header
        .iter()
        .skip(2)
        .map(|s| parse_time_us(s).map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let (mut t1, mut t_phi, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let nums = rec
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if k < 2 {
                    parse_time_us(s)
                } else {
                    s.trim().parse::<f64>()
                }
                .map_err(|e| bad(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        t1.push(nums[0]);
        t_phi.push(nums[1]);
        values.push(nums[2..].to_vec());
    }
    Ok((taus, t1, t_phi, values))
}
