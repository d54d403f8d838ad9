//! 25-Gaussians target, out-of-distribution contrast sets, and the analytic
//! mixture density.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::Point;

/// Component std of the default target: solves `−ln 25 − ln(2πσ²) − 1 = −1.10`,
/// the expected log density of a well-separated isotropic mixture.
pub const DEFAULT_COMPONENT_STD: f64 = 0.0839;

/// Isotropic Gaussian mixture in 2D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub centers: Vec<Point>,
    pub component_std: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(centers: Vec<Point>, component_std: f64, weights: Vec<f64>) -> Result<Self> {
        let spec = MixtureSpec { centers, component_std, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() || self.centers.len() != self.weights.len() {
            return Err(Error::invalid("mixture needs one weight per center"));
        }
        if !(self.component_std > 0.0) || !self.component_std.is_finite() {
            return Err(Error::invalid(format!("component_std must be > 0, got {}", self.component_std)));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {}, not 1", total)));
        }
        for i in 0..self.centers.len() {
            for j in 0..i {
                if self.centers[i] == self.centers[j] {
                    return Err(Error::invalid(format!("duplicate center {:?}", self.centers[i])));
                }
            }
        }
        Ok(())
    }

    /// Same mixture translated by `offset`.
    pub fn shifted(&self, offset: Point) -> MixtureSpec {
        MixtureSpec {
            centers: self.centers.iter().map(|c| [c[0] + offset[0], c[1] + offset[1]]).collect(),
            ..self.clone()
        }
    }

    pub fn min_center_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.centers.len() {
            for j in 0..i {
                best = best.min(dist(self.centers[i], self.centers[j]));
            }
        }
        best
    }
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Grid `{−2..2}²` with unit spacing, uniform weights.
pub fn default_25g_spec() -> MixtureSpec {
    grid_spec(DEFAULT_COMPONENT_STD)
}

pub fn grid_spec(component_std: f64) -> MixtureSpec {
    let mut centers = Vec::with_capacity(25);
    for i in -2..=2 {
        for j in -2..=2 {
            centers.push([i as f64, j as f64]);
        }
    }
    MixtureSpec { centers, component_std, weights: vec![1.0 / 25.0; 25] }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Ood,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub samples: Vec<Point>,
    pub split: Split,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` points (or all of them).
    pub fn head(&self, n: usize) -> &[Point] {
        &self.samples[..n.min(self.samples.len())]
    }
}

pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64, split: Split) -> Result<ToyDataset> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    spec.validate()?;
    let mut rng = rng_for(seed, "mixture");
    let pick = WeightedIndex::new(&spec.weights).map_err(|e| Error::invalid(e.to_string()))?;
    let s = spec.component_std;
    let samples = (0..n)
        .map(|_| {
            let c = spec.centers[pick.sample(&mut rng)];
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            [c[0] + s * e0, c[1] + s * e1]
        })
        .collect();
    Ok(ToyDataset { samples, split, seed })
}

/// `log Σ_k w_k N(x; μ_k, σ²I)`, log-sum-exp stabilized.
pub fn true_log_density(spec: &MixtureSpec, x: Point) -> f64 {
    let var = spec.component_std * spec.component_std;
    let norm = -(2.0 * PI * var).ln();
    let terms = spec.centers.iter().zip(&spec.weights).map(|(c, &w)| {
        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        w.ln() + norm - 0.5 * d2 / var
    });
    log_sum_exp(terms)
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Uniform box, half-offset mixture and a wide Gaussian blob.
pub fn gen_ood_sets(spec: &MixtureSpec, n: usize, seed: u64) -> Result<BTreeMap<String, ToyDataset>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut sets = BTreeMap::new();

    let mut rng = rng_for(seed, "ood-uniform");
    let uniform = (0..n).map(|_| [rng.random_range(-3.0..=3.0), rng.random_range(-3.0..=3.0)]).collect();
    sets.insert("uniform".to_string(), ToyDataset { samples: uniform, split: Split::Ood, seed });

    let shifted_spec = spec.shifted([0.5, 0.5]);
    let mut shifted = sample_mixture(&shifted_spec, n, crate::rng::derive_seed(seed, "ood-shifted"), Split::Ood)?;
    shifted.seed = seed;
    sets.insert("shifted".to_string(), shifted);

    let mut rng = rng_for(seed, "ood-blob");
    let blob = (0..n)
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    sets.insert("blob".to_string(), ToyDataset { samples: blob, split: Split::Ood, seed });
    Ok(sets)
}

/// Writes `x0,x1` rows with 17 significant digits.
pub fn write_points_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x0,x1")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Point>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "x0,x1" {
                return Err(Error::invalid(format!("{}: expected header x0,x1", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || -> Result<f64> {
            parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}:{}: malformed row", path.display(), i + 1)))
        };
        out.push([next()?, next()?]);
    }
    Ok(out)
}
