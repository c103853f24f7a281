//! Label-qubit readout: marginals, majority vote, shot noise and readout-error
//! correction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DensityMatrix, QuantumState};
use crate::error::{Error, Result};

/// Measured single-qubit confusion matrix; column `j` is the outcome
/// distribution observed when preparing basis state `j`.
pub fn confusion_1q() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.979, 0.060, 0.021, 0.940])
}

/// Measured two-qubit confusion matrix, same convention as [`confusion_1q`].
pub fn confusion_2q() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.961, 0.060, 0.066, 0.004, //
            0.024, 0.925, 0.002, 0.065, //
            0.014, 0.002, 0.910, 0.054, //
            0.001, 0.013, 0.023, 0.877,
        ],
    )
}

/// Default confusion matrix for `label_qubits` simultaneously read out.
pub fn default_confusion(label_qubits: usize) -> Option<DMatrix<f64>> {
    match label_qubits {
        1 => Some(confusion_1q()),
        2 => Some(confusion_2q()),
        _ => None,
    }
}

pub fn validate_confusion(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("confusion matrix is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config("confusion matrix entries must be finite and nonnegative".into()));
    }
    // published matrices are rounded to three decimals, so a column may miss
    // unity by up to half a unit in the last place per entry
    let tol = 5e-4 * m.nrows() as f64 + 1e-12;
    for (j, col) in m.column_iter().enumerate() {
        let s: f64 = col.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Config(format!("confusion column {j} sums to {s}")));
        }
    }
    Ok(())
}

/// Reads a header-free, row-major CSV confusion matrix.
pub fn load_confusion_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(parse_err(format!("expected a square matrix, got {n} rows")));
    }
    let m = DMatrix::from_row_iterator(n, n, rows.into_iter().flatten());
    validate_confusion(&m)?;
    Ok(m)
}

pub fn write_confusion_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| x.to_string()))
            .map_err(|e| Error::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    /// Measured qubits; the first one is the most significant outcome bit.
    pub label_qubits: Vec<usize>,
    /// Optional readout confusion applied to the ideal distribution.
    pub confusion: Option<DMatrix<f64>>,
    /// Optional finite-shot sampling.
    pub shots: Option<usize>,
}

impl MeasurementModel {
    pub fn exact(label_qubits: Vec<usize>) -> Self {
        Self {
            label_qubits,
            confusion: None,
            shots: None,
        }
    }

    pub fn outcomes(&self) -> usize {
        1 << self.label_qubits.len()
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        for (i, &q) in self.label_qubits.iter().enumerate() {
            if q >= num_qubits {
                return Err(Error::IndexOutOfRange { index: q, limit: num_qubits });
            }
            if self.label_qubits[..i].contains(&q) {
                return Err(Error::Config(format!("label qubit {q} listed twice")));
            }
        }
        if let Some(m) = &self.confusion {
            validate_confusion(m)?;
            if m.nrows() != self.outcomes() {
                return Err(Error::Shape(format!(
                    "confusion matrix is {0}x{0} for {1} outcomes",
                    m.nrows(),
                    self.outcomes()
                )));
            }
        }
        if self.shots == Some(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        Ok(())
    }
}

/// Probabilities over label-qubit bit strings, indexed by their binary value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution(pub Vec<f64>);

impl OutcomeDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Something with computational-basis populations.
pub trait Populations {
    fn basis_populations(&self) -> Vec<f64>;
}

impl Populations for QuantumState {
    fn basis_populations(&self) -> Vec<f64> {
        self.populations()
    }
}

impl Populations for DensityMatrix {
    fn basis_populations(&self) -> Vec<f64> {
        self.populations()
    }
}

/// Traces out non-label qubits. Any level `>= 1` of a transmon reads as `e`.
pub fn label_marginal(
    state: &impl Populations,
    levels: usize,
    num_qubits: usize,
    label_qubits: &[usize],
) -> Result<OutcomeDistribution> {
    let pops = state.basis_populations();
    let dim = levels.pow(num_qubits as u32);
    if pops.len() != dim {
        return Err(Error::Shape(format!("state dimension {} vs register dimension {dim}", pops.len())));
    }
    for &q in label_qubits {
        if q >= num_qubits {
            return Err(Error::IndexOutOfRange { index: q, limit: num_qubits });
        }
    }
    let strides: Vec<usize> = label_qubits
        .iter()
        .map(|&q| levels.pow((num_qubits - 1 - q) as u32))
        .collect();
    let mut out = vec![0.0; 1 << label_qubits.len()];
    for (i, p) in pops.into_iter().enumerate() {
        let outcome = strides
            .iter()
            .fold(0usize, |acc, &s| (acc << 1) | usize::from((i / s) % levels != 0));
        out[outcome] += p;
    }
    Ok(OutcomeDistribution(out))
}

pub fn confidence(dist: &OutcomeDistribution, label: usize) -> Result<f64> {
    dist.0
        .get(label)
        .copied()
        .ok_or(Error::IndexOutOfRange { index: label, limit: dist.len() })
}

/// Majority vote: argmax, ties resolved toward the lower index.
pub fn classify(dist: &OutcomeDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.0.iter().enumerate().skip(1) {
        if p > dist.0[best] {
            best = i;
        }
    }
    best
}

/// Empirical frequencies of `shots` draws from `dist`.
pub fn sample_shots(dist: &OutcomeDistribution, shots: usize, seed: u64) -> OutcomeDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; dist.len()];
    let total = dist.total();
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = dist.len() - 1;
        for (i, &p) in dist.0.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        counts[pick] += 1;
    }
    OutcomeDistribution(counts.into_iter().map(|c| c as f64 / shots as f64).collect())
}

/// `M0 p` (renormalised): what a readout with confusion `M0` reports for true distribution `p`.
pub fn apply_confusion(dist: &OutcomeDistribution, m0: &DMatrix<f64>) -> Result<OutcomeDistribution> {
    if m0.ncols() != dist.len() || m0.nrows() != dist.len() {
        return Err(Error::Shape(format!(
            "confusion matrix {}x{} for {} outcomes",
            m0.nrows(),
            m0.ncols(),
            dist.len()
        )));
    }
    let p = m0 * DVector::from_column_slice(&dist.0);
    let total = p.sum();
    Ok(OutcomeDistribution(p.iter().map(|x| x / total).collect()))
}

/// `M0^{-1} p`, negative entries clipped to zero and renormalised.
pub fn bayesian_correct(dist: &OutcomeDistribution, m0: &DMatrix<f64>) -> Result<OutcomeDistribution> {
    if m0.ncols() != dist.len() || m0.nrows() != dist.len() {
        return Err(Error::Shape(format!(
            "confusion matrix {}x{} for {} outcomes",
            m0.nrows(),
            m0.ncols(),
            dist.len()
        )));
    }
    let inv = m0.clone().try_inverse().ok_or(Error::SingularConfusion)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularConfusion);
    }
    let raw = inv * DVector::from_column_slice(&dist.0);
    let clipped: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    if s <= 0.0 {
        return Err(Error::NonFinite("corrected distribution has no mass".into()));
    }
    Ok(OutcomeDistribution(clipped.into_iter().map(|x| x / s).collect()))
}
