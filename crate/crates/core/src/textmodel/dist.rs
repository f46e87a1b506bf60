use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Shannon entropy in nats. Zero-probability entries contribute nothing.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// A next-token probability vector over the vocabulary, with its entropy cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
    entropy_nats: f64,
}

impl ProbDist {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Input(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Input(format!("probabilities sum to {total}")));
        }
        Ok(Self::from_normalized(probs))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Input(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Input("weights have no mass".into()));
        }
        Ok(Self::from_normalized(
            weights.into_iter().map(|w| w / total).collect(),
        ))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one outcome");
        Self::from_normalized(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, id: usize) -> Self {
        assert!(id < n, "point mass outside support");
        let mut probs = vec![0.0; n];
        probs[id] = 1.0;
        Self::from_normalized(probs)
    }

    /// Wraps a vector the caller has already normalized.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        let entropy_nats = shannon_entropy(&probs);
        Self {
            probs,
            entropy_nats,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, id: u32) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        self.entropy_nats
    }

    /// 1-based rank of `id` in descending probability order, ties broken by
    /// ascending token id.
    pub fn rank_of(&self, id: u32) -> usize {
        let target = self.prob(id);
        1 + self
            .probs
            .iter()
            .enumerate()
            .filter(|&(j, &p)| p > target || (p == target && (j as u32) < id))
            .count()
    }

    /// Inverse-CDF draw with `u` in [0, 1). Zero-probability outcomes are never returned.
    pub fn sample_with(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last_nonzero = i;
            if u < acc {
                return i as u32;
            }
        }
        last_nonzero as u32
    }
}
