//! Layered Gaussian sub-pulse schedules and their sampled waveforms.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Gaussian sub-pulse geometry. The sub-pulse support is always `4 sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    /// Gaussian width, seconds.
    pub sigma: f64,
    /// Waveform sample step, seconds.
    pub dt: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            sigma: 10.0e-9,
            dt: 0.5e-9,
        }
    }
}

impl PulseShape {
    /// Shape whose `layers` contiguous sub-pulses last `total` seconds.
    pub fn for_total_length(total: f64, layers: usize, dt: f64) -> Self {
        Self {
            sigma: total / (4.0 * layers as f64),
            dt,
        }
    }

    pub fn support(&self) -> f64 {
        4.0 * self.sigma
    }

    pub fn samples_per_layer(&self) -> usize {
        (self.support() / self.dt).round() as usize
    }

    /// Time integral of a unit-peak sub-pulse: `sigma sqrt(2 pi) erf(sqrt 2)`.
    pub fn unit_area(&self) -> f64 {
        self.sigma * (2.0 * PI).sqrt() * erf(SQRT_2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.samples_per_layer() < 2 {
            return Err(Error::Config(format!(
                "dt = {} leaves fewer than two samples per {} s sub-pulse",
                self.dt,
                self.support()
            )));
        }
        Ok(())
    }

    fn unit_envelope(&self) -> Vec<f64> {
        let n = self.samples_per_layer();
        let centre = 2.0 * self.sigma;
        let two_var = 2.0 * self.sigma * self.sigma;
        (0..n)
            .map(|k| {
                let t = k as f64 * self.dt - centre;
                (-t * t / two_var).exp()
            })
            .collect()
    }
}

/// Samples `amplitude * exp(-(t - 2 sigma)^2 / (2 sigma^2))` at `t = k dt` on `[0, 4 sigma)`.
pub fn gaussian_envelope(amplitude: f64, shape: &PulseShape) -> Vec<f64> {
    shape.unit_envelope().into_iter().map(|g| amplitude * g).collect()
}

/// Peak amplitude whose envelope area equals `angle`.
pub fn amplitude_for_rotation(angle: f64, shape: &PulseShape) -> f64 {
    angle / shape.unit_area()
}

/// Peak amplitudes `theta_m(t_j)`, one row per control channel and one
/// column per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSchedule {
    amplitudes: DMatrix<f64>,
}

impl PulseSchedule {
    pub fn zeros(channels: usize, layers: usize) -> Self {
        Self {
            amplitudes: DMatrix::zeros(channels, layers),
        }
    }

    pub fn from_matrix(amplitudes: DMatrix<f64>) -> Result<Self> {
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("pulse schedule amplitude".into()));
        }
        Ok(Self { amplitudes })
    }

    /// Builds from channel-major data: `data[m * layers + j] = theta_m(t_j)`.
    pub fn from_channel_major(channels: usize, layers: usize, data: &[f64]) -> Result<Self> {
        if data.len() != channels * layers {
            return Err(Error::Shape(format!(
                "{} amplitudes for a {channels}x{layers} schedule",
                data.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(channels, layers, data))
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn layers(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn amplitude(&self, channel: usize, layer: usize) -> f64 {
        self.amplitudes[(channel, layer)]
    }

    pub fn set(&mut self, channel: usize, layer: usize, value: f64) {
        self.amplitudes[(channel, layer)] = value;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.amplitudes
    }
}

/// Sampled per-channel control amplitudes on a shared time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// `samples[m][k]` is channel `m` at `t = k dt`.
    pub samples: Vec<Vec<f64>>,
    pub dt: f64,
    pub samples_per_layer: usize,
}

impl Waveform {
    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layers(&self) -> usize {
        self.len().checked_div(self.samples_per_layer).unwrap_or(0)
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    /// Control values of every channel at sample `k`.
    pub fn at(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |ch| ch[k])
    }
}

/// Renders contiguous layers: layer `j` occupies `[j 4 sigma, (j + 1) 4 sigma)`.
pub fn schedule_to_waveforms(schedule: &PulseSchedule, shape: &PulseShape) -> Result<Waveform> {
    shape.validate()?;
    let unit = shape.unit_envelope();
    let per_layer = unit.len();
    let samples = (0..schedule.channels())
        .map(|m| {
            let mut ch = Vec::with_capacity(per_layer * schedule.layers());
            for j in 0..schedule.layers() {
                let a = schedule.amplitude(m, j);
                ch.extend(unit.iter().map(|g| a * g));
            }
            ch
        })
        .collect();
    Ok(Waveform {
        samples,
        dt: shape.dt,
        samples_per_layer: per_layer,
    })
}
