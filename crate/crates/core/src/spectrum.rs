//! Degree distributions of device and slot nodes, and the generating-function
//! algebra on them.

use thiserror::Error;

/// Tail mass allowed to be dropped when truncating an unbounded spectrum.
pub const TAIL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("truncation at degree {max_degree} leaves tail mass {tail:e}")]
    TruncationTooSmall { max_degree: usize, tail: f64 },
    #[error("edge perspective undefined for a spectrum with zero mean degree")]
    ZeroMeanSpectrum,
}

/// Probability vector over node degrees, `probs[d]` = Pr(degree = d).
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeSpectrum {
    probs: Vec<f64>,
    mean: f64,
}

impl DegreeSpectrum {
    /// Builds from raw weights, renormalizing to unit mass.
    pub fn from_weights(mut probs: Vec<f64>) -> DegreeSpectrum {
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            for p in probs.iter_mut() {
                *p /= total;
            }
        }
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        let mean = probs.iter().enumerate().map(|(d, p)| d as f64 * p).sum();
        DegreeSpectrum { probs, mean }
    }

    /// Every node has degree `d`.
    pub fn constant(d: usize) -> DegreeSpectrum {
        let mut probs = vec![0.0; d + 1];
        probs[d] = 1.0;
        DegreeSpectrum { probs, mean: d as f64 }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, d: usize) -> f64 {
        self.probs.get(d).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max_degree(&self) -> usize {
        self.probs.len() - 1
    }

    /// Generating polynomial Σ_d probs[d] x^d (Horner).
    pub fn eval(&self, x: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, &p| acc * x + p)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Binomial(n, p): number of successes among `n` independent Bernoulli(p)
/// trials, i.e. the degree of a node with `n` potential edges each present
/// with probability `p`.
pub fn binomial_spectrum(p: f64, n: usize) -> DegreeSpectrum {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    if p == 0.0 {
        return DegreeSpectrum::constant(0);
    }
    if p == 1.0 {
        return DegreeSpectrum::constant(n);
    }
    // Log-space recurrence from d = 0 keeps large n stable.
    let log_odds = (p / (1.0 - p)).ln();
    let mut log_pmf = n as f64 * (-p).ln_1p();
    let mut probs = Vec::with_capacity(n + 1);
    for d in 0..=n {
        probs.push(log_pmf.exp());
        if d < n {
            log_pmf += ((n - d) as f64 / (d + 1) as f64).ln() + log_odds;
        }
    }
    DegreeSpectrum::from_weights(probs)
}

/// Poisson(mean), truncated once the remaining tail drops below
/// [`TAIL_MASS`] and renormalized.
pub fn poisson_spectrum(mean: f64) -> DegreeSpectrum {
    let (probs, _) = poisson_prefix(mean, usize::MAX);
    DegreeSpectrum::from_weights(probs)
}

/// Poisson(mean) truncated at `max_degree`; fails if that drops more than
/// [`TAIL_MASS`].
pub fn poisson_spectrum_truncated(mean: f64, max_degree: usize) -> Result<DegreeSpectrum, SpectrumError> {
    let (probs, tail) = poisson_prefix(mean, max_degree);
    if tail > TAIL_MASS {
        return Err(SpectrumError::TruncationTooSmall { max_degree, tail });
    }
    Ok(DegreeSpectrum::from_weights(probs))
}

fn poisson_prefix(mean: f64, max_degree: usize) -> (Vec<f64>, f64) {
    assert!(mean >= 0.0 && mean.is_finite(), "invalid Poisson mean {mean}");
    if mean == 0.0 {
        return (vec![1.0], 0.0);
    }
    let mut probs = Vec::new();
    let mut log_pmf = -mean;
    let mut acc = 0.0;
    let mut d = 0usize;
    loop {
        let p = log_pmf.exp();
        probs.push(p);
        acc += p;
        let tail = (1.0 - acc).max(0.0);
        // Past the mode the remaining mass is what is left of 1.
        if (d as f64 > mean && tail < TAIL_MASS) || d == max_degree {
            return (probs, tail);
        }
        d += 1;
        log_pmf += (mean / d as f64).ln();
    }
}

/// Distribution of the sum of independent degrees.
pub fn convolve_spectra(parts: &[DegreeSpectrum]) -> DegreeSpectrum {
    let mut acc = vec![1.0];
    for part in parts {
        let mut next = vec![0.0; acc.len() + part.probs.len() - 1];
        for (a, &pa) in acc.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in part.probs.iter().enumerate() {
                next[a + b] += pa * pb;
            }
        }
        acc = next;
    }
    DegreeSpectrum::from_weights(acc)
}

/// Degree distribution seen from a uniformly chosen edge, excluding that
/// edge: `out[d - 1] = d * probs[d] / mean`.
pub fn edge_perspective(node: &DegreeSpectrum) -> Result<DegreeSpectrum, SpectrumError> {
    if node.mean <= 0.0 {
        return Err(SpectrumError::ZeroMeanSpectrum);
    }
    let probs = node
        .probs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(d, &p)| d as f64 * p / node.mean)
        .collect();
    Ok(DegreeSpectrum::from_weights(probs))
}

/// Total-variation distance, ½ Σ |a_d − b_d|.
pub fn tv_distance(a: &DegreeSpectrum, b: &DegreeSpectrum) -> f64 {
    let n = a.probs.len().max(b.probs.len());
    0.5 * (0..n).map(|d| (a.prob(d) - b.prob(d)).abs()).sum::<f64>()
}
