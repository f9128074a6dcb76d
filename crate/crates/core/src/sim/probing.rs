//! Exponentially decaying multi-tone excitation added to every control.

use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbingSpec {
    #[serde(rename = "A")]
    pub amplitude: f64,
    /// Envelope decay rate, 1/s.
    pub kappa: f64,
    /// Tone frequencies, Hz.
    pub freqs: Vec<f64>,
}

impl Default for ProbingSpec {
    fn default() -> Self {
        Self { amplitude: 1.0, kappa: 0.1, freqs: vec![0.1, 0.7, 1.3, 2.1, 3.7] }
    }
}

impl ProbingSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(format!("probing amplitude {} must be non-negative", self.amplitude));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(format!("probing decay rate {} must be positive", self.kappa));
        }
        if self.freqs.iter().any(|f| !f.is_finite()) {
            return Err("probing frequencies must be finite".into());
        }
        Ok(())
    }

    /// Upper bound on `|probe(t)|` per channel.
    pub fn envelope(&self, t: f64) -> f64 {
        self.amplitude * self.freqs.len() as f64 * (-self.kappa * t).exp()
    }
}

/// One agent's probing signal with phases fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingSignal {
    spec: ProbingSpec,
    /// `phases[channel][tone]`.
    phases: Vec<Vec<f64>>,
}

impl ProbingSignal {
    pub fn new<R: Rng + ?Sized>(spec: &ProbingSpec, channels: usize, rng: &mut R) -> Self {
        let phases = (0..channels)
            .map(|_| spec.freqs.iter().map(|_| rng.gen_range(0.0..TAU)).collect())
            .collect();
        Self { spec: spec.clone(), phases }
    }

    /// `A e^{−κt} Σ_k sin(2π f_k t + φ_k)` per channel.
    pub fn at(&self, t: f64) -> DVector<f64> {
        let scale = self.spec.amplitude * (-self.spec.kappa * t).exp();
        DVector::from_iterator(
            self.phases.len(),
            self.phases.iter().map(|ph| {
                if scale == 0.0 {
                    return 0.0;
                }
                scale * self.spec.freqs.iter().zip(ph).map(|(f, p)| (TAU * f * t + p).sin()).sum::<f64>()
            }),
        )
    }
}
