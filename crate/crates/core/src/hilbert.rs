//! Truncated transmon operators and device Hamiltonians.
//!
//! Units: hbar = 1, energies are angular frequencies (rad/s), times in seconds.
//! Tensor ordering puts qubit 0 in the most significant factor, so basis index
//! `i` of an `M`-transmon register decodes as base-`d` digits `(l_0 l_1 ... l_{M-1})`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Operator = DMatrix<Complex64>;

const MHZ: f64 = 1.0e6;
const US: f64 = 1.0e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingModel {
    /// `J (a_q^† a_p + a_p^† a_q)`
    #[default]
    Exchange,
    /// `J n_q n_p`
    CrossKerr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub num_qubits: usize,
    pub levels: usize,
    /// Anharmonicity `E_C` per qubit, rad/s.
    pub anharmonicity: Vec<f64>,
    /// Symmetric coupling matrix `J`, rad/s, zero diagonal.
    pub coupling: Vec<Vec<f64>>,
    /// Energy relaxation times in seconds; `null` in JSON means infinite.
    #[serde(with = "crate::serde_inf::vec")]
    pub t1: Vec<f64>,
    /// Pure dephasing times in seconds; `null` in JSON means infinite.
    #[serde(with = "crate::serde_inf::vec")]
    pub t_phi: Vec<f64>,
    #[serde(default)]
    pub coupling_model: CouplingModel,
}

impl DeviceModel {
    /// A register of `num_qubits` uncoupled qubits with infinite coherence.
    pub fn uncoupled(num_qubits: usize, levels: usize) -> Self {
        Self {
            num_qubits,
            levels,
            anharmonicity: vec![0.0; num_qubits],
            coupling: vec![vec![0.0; num_qubits]; num_qubits],
            t1: vec![f64::INFINITY; num_qubits],
            t_phi: vec![f64::INFINITY; num_qubits],
            coupling_model: CouplingModel::Exchange,
        }
    }

    /// Calibrated Q3/Q5 pair used for the two-digit task.
    pub fn q3_q5() -> Self {
        Self::calibrated(2)
    }

    /// Calibrated Q3/Q5/Q6 triple used for the four-digit task.
    pub fn q3_q5_q6() -> Self {
        Self::calibrated(3)
    }

    /// First `num_qubits` transmons of the calibrated (Q3, Q5, Q6) chip.
    pub fn calibrated(num_qubits: usize) -> Self {
        assert!((1..=3).contains(&num_qubits), "calibration covers at most 3 qubits");
        let anh = [217.0, 206.0, 197.0];
        // Q3-Q5, Q5-Q6, Q3-Q6
        let j = [[0.0, 4.11, 4.46], [4.11, 0.0, 3.02], [4.46, 3.02, 0.0]];
        let t1 = [13.0, 10.0, 13.0];
        let t_phi = [49.0, 37.0, 58.0];
        let n = num_qubits;
        Self {
            num_qubits: n,
            levels: 2,
            anharmonicity: anh[..n].iter().map(|a| 2.0 * PI * a * MHZ).collect(),
            coupling: (0..n)
                .map(|q| (0..n).map(|p| 2.0 * PI * j[q][p] * MHZ).collect())
                .collect(),
            t1: t1[..n].iter().map(|t| t * US).collect(),
            t_phi: t_phi[..n].iter().map(|t| t * US).collect(),
            coupling_model: CouplingModel::Exchange,
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    /// Sets identical coherence times on every qubit.
    pub fn with_uniform_coherence(mut self, t1: f64, t_phi: f64) -> Self {
        self.t1 = vec![t1; self.num_qubits];
        self.t_phi = vec![t_phi; self.num_qubits];
        self
    }

    pub fn dim(&self) -> usize {
        self.levels.pow(self.num_qubits as u32)
    }

    /// Relaxation rates `1/T1`, zero where `T1` is infinite.
    pub fn relaxation_rates(&self) -> Vec<f64> {
        self.t1.iter().map(|&t| rate(t)).collect()
    }

    /// Dephasing rates `1/T_phi`, zero where `T_phi` is infinite.
    pub fn dephasing_rates(&self) -> Vec<f64> {
        self.t_phi.iter().map(|&t| rate(t)).collect()
    }

    pub fn is_closed(&self) -> bool {
        self.t1.iter().chain(&self.t_phi).all(|t| t.is_infinite())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_qubits;
        if m == 0 {
            return Err(Error::InvalidDevice("need at least one qubit".into()));
        }
        if self.levels < 2 {
            return Err(Error::InvalidTruncation(self.levels));
        }
        for (name, v) in [
            ("anharmonicity", &self.anharmonicity),
            ("t1", &self.t1),
            ("t_phi", &self.t_phi),
        ] {
            if v.len() != m {
                return Err(Error::InvalidDevice(format!(
                    "{name} has {} entries for {m} qubits",
                    v.len()
                )));
            }
        }
        if self.anharmonicity.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidDevice(
                "anharmonicities must be finite and nonnegative".into(),
            ));
        }
        if self.t1.iter().chain(&self.t_phi).any(|t| t.is_nan() || *t <= 0.0) {
            return Err(Error::InvalidDevice(
                "coherence times must be positive or infinite".into(),
            ));
        }
        if self.coupling.len() != m || self.coupling.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidDevice(format!("coupling matrix must be {m}x{m}")));
        }
        for q in 0..m {
            if self.coupling[q][q] != 0.0 {
                return Err(Error::InvalidDevice("coupling diagonal must be zero".into()));
            }
            for p in 0..m {
                let j = self.coupling[q][p];
                if !j.is_finite() || j < 0.0 {
                    return Err(Error::InvalidDevice(
                        "couplings must be finite and nonnegative".into(),
                    ));
                }
                if j != self.coupling[p][q] {
                    return Err(Error::InvalidDevice("coupling matrix must be symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

fn rate(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        1.0 / t
    }
}

/// Lowering operator on a `d`-level oscillator: `<k-1| a |k> = sqrt(k)`.
pub fn annihilation(d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::InvalidTruncation(d));
    }
    let mut a = Operator::zeros(d, d);
    for k in 1..d {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    Ok(a)
}

/// Lifts a single-transmon operator into the full register at slot `q`.
pub fn embed(op: &Operator, q: usize, device: &DeviceModel) -> Result<Operator> {
    let d = device.levels;
    let m = device.num_qubits;
    if op.nrows() != d || op.ncols() != d {
        return Err(Error::Shape(format!(
            "single-transmon operator is {}x{}, expected {d}x{d}",
            op.nrows(),
            op.ncols()
        )));
    }
    if q >= m {
        return Err(Error::IndexOutOfRange { index: q, limit: m });
    }
    let left = Operator::identity(d.pow(q as u32), d.pow(q as u32));
    let right_dim = d.pow((m - 1 - q) as u32);
    let right = Operator::identity(right_dim, right_dim);
    Ok(left.kronecker(op).kronecker(&right))
}

/// Embedded `a_q` for every qubit.
pub fn lowering_operators(device: &DeviceModel) -> Result<Vec<Operator>> {
    let a = annihilation(device.levels)?;
    (0..device.num_qubits).map(|q| embed(&a, q, device)).collect()
}

/// Static Hamiltonian: pairwise coupling minus the anharmonic Kerr term.
pub fn build_static_hamiltonian(device: &DeviceModel) -> Result<Operator> {
    device.validate()?;
    let lowering = lowering_operators(device)?;
    let dim = device.dim();
    let mut h = Operator::zeros(dim, dim);
    let m = device.num_qubits;

    for (a, &ec) in lowering.iter().zip(&device.anharmonicity) {
        let ad = a.adjoint();
        let kerr = &ad * &ad * a * a;
        h -= kerr * Complex64::new(ec / 2.0, 0.0);
    }

    for q in 0..m {
        for p in 0..q {
            let j = device.coupling[q][p];
            if j == 0.0 {
                continue;
            }
            let (aq, ap) = (&lowering[q], &lowering[p]);
            let term = match device.coupling_model {
                CouplingModel::Exchange => aq.adjoint() * ap + ap.adjoint() * aq,
                CouplingModel::CrossKerr => (aq.adjoint() * aq) * (ap.adjoint() * ap),
            };
            h += term * Complex64::new(j, 0.0);
        }
    }
    Ok(h)
}

/// Control Hamiltonians `[H_1, ..., H_2M]` with `H_{2q-1} = (a_q + a_q^†)/2`
/// (x drive) and `H_{2q} = i(a_q - a_q^†)/2` (y drive).
pub fn build_control_hamiltonians(device: &DeviceModel) -> Result<Vec<Operator>> {
    device.validate()?;
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    let mut out = Vec::with_capacity(2 * device.num_qubits);
    for a in lowering_operators(device)? {
        let ad = a.adjoint();
        out.push((&a + &ad) * half);
        out.push((&a - &ad) * half_i);
    }
    Ok(out)
}

/// Total excitation number `sum_q a_q^† a_q`.
pub fn number_operator(device: &DeviceModel) -> Result<Operator> {
    let dim = device.dim();
    let mut n = Operator::zeros(dim, dim);
    for a in lowering_operators(device)? {
        n += a.adjoint() * a;
    }
    Ok(n)
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermitian_defect(op: &Operator) -> f64 {
    (op - op.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
