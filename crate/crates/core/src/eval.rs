//! Grid-integrated normalizer, test log-likelihood, mode coverage, AUROC and
//! likelihood histograms.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebm::{energies, energy, VaebmModel};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::toydata::{dist, log_sum_exp, true_log_density, MixtureSpec};
use crate::vae::{iwae_bound_stream, iwae_bounds};
use crate::Point;

pub const MIN_GRID_RESOLUTION: usize = 16;

/// Uniform grid of `resolution × resolution` cells over a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `[x0_min, x0_max, x1_min, x1_max]`
    pub bounds: [f64; 4],
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { bounds: [-4.0, 4.0, -4.0, 4.0], resolution: 200 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c, d] = self.bounds;
        if !(b > a) || !(d > c) || !self.bounds.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("grid bounds {:?} need max > min on each axis", self.bounds)));
        }
        if self.resolution < MIN_GRID_RESOLUTION {
            return Err(Error::invalid(format!(
                "grid resolution {} is below the minimum of {}",
                self.resolution, MIN_GRID_RESOLUTION
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let r = self.resolution as f64;
        ((self.bounds[1] - self.bounds[0]) / r, (self.bounds[3] - self.bounds[2]) / r)
    }

    pub fn num_cells(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Center of cell `index`, row-major with the first axis outermost.
    pub fn center(&self, index: usize) -> Point {
        let (dx, dy) = self.cell_size();
        let (i, j) = (index / self.resolution, index % self.resolution);
        [self.bounds[0] + (i as f64 + 0.5) * dx, self.bounds[2] + (j as f64 + 0.5) * dy]
    }

    pub fn doubled(&self) -> GridSpec {
        GridSpec { resolution: self.resolution * 2, ..*self }
    }
}

/// `log ∫ exp(f)` by the midpoint rule; `f` receives `(cell index, center)`.
pub fn grid_log_integral<F>(grid: &GridSpec, f: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, Point) -> Result<f64> + Sync,
{
    grid.validate()?;
    let vals: Vec<f64> = (0..grid.num_cells())
        .into_par_iter()
        .map(|i| f(i, grid.center(i)))
        .collect::<Result<_>>()?;
    if vals.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite { op: "grid cell value" });
    }
    let (dx, dy) = grid.cell_size();
    let lz = log_sum_exp(vals.iter().copied()) + (dx * dy).ln();
    if !lz.is_finite() {
        return Err(Error::NonFinite { op: "grid_log_integral" });
    }
    Ok((lz, vals))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionEstimate {
    pub log_z: f64,
    pub grid: GridSpec,
    pub iwae_k: usize,
    /// `log p̂(c) − E(c)` per cell.
    pub cell_log_mass: Option<Vec<f64>>,
}

/// `log Z = log Σ_cells exp(IWAE_K(c) − E(c)) + log(cell area)`.
pub fn grid_log_partition(model: &VaebmModel, grid: &GridSpec, k: usize, seed: u64) -> Result<PartitionEstimate> {
    let s = derive_seed(seed, "grid");
    let (log_z, cells) = grid_log_integral(grid, |i, c| {
        Ok(iwae_bound_stream(&model.vae, c, k, s, i as u64)? - energy(&model.energy, c)?)
    })?;
    Ok(PartitionEstimate { log_z, grid: *grid, iwae_k: k, cell_log_mass: Some(cells) })
}

/// Mean of `IWAE_K(x) − E(x) − log Z` over the test points.
pub fn test_log_likelihood(
    model: &VaebmModel,
    test: &[Point],
    partition: &PartitionEstimate,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let iw = iwae_bounds(&model.vae, test, k, seed)?;
    let e = energies(&model.energy, test)?;
    mean_log_likelihood(&iw, &e, partition.log_z)
}

/// Mean of `log p̂(x) − E(x) − log Z` from precomputed parts.
pub fn mean_log_likelihood(log_p: &[f64], energy: &[f64], log_z: f64) -> Result<f64> {
    if log_p.is_empty() || log_p.len() != energy.len() {
        return Err(Error::invalid("need matching, nonempty likelihood and energy lists"));
    }
    Ok(log_p.iter().zip(energy).map(|(p, e)| p - e - log_z).sum::<f64>() / log_p.len() as f64)
}

/// Mean analytic log density of the mixture over `points`.
pub fn true_test_log_likelihood(spec: &MixtureSpec, points: &[Point]) -> f64 {
    points.iter().map(|&x| true_log_density(spec, x)).sum::<f64>() / points.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoverage {
    pub modes_covered: usize,
    /// `KL(p̂ ‖ uniform)` with one pseudo-count added to every mode.
    pub mode_kl: f64,
    pub counts: Vec<usize>,
    pub unassigned: usize,
}

pub fn mode_coverage(samples: &[Point], spec: &MixtureSpec, radius: f64) -> Result<ModeCoverage> {
    let half = 0.5 * spec.min_center_separation();
    if !(radius > 0.0) || radius >= half {
        return Err(Error::invalid(format!("mode radius {} must be in (0, {})", radius, half)));
    }
    let k = spec.centers.len();
    let mut counts = vec![0usize; k];
    let mut unassigned = 0;
    for &x in samples {
        let (best, d) = spec
            .centers
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, dist(x, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty centers");
        if d <= radius {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let assigned: usize = counts.iter().sum();
    if assigned == 0 {
        return Err(Error::NoAssignedSamples);
    }
    let total = (assigned + k) as f64;
    let mode_kl = counts
        .iter()
        .map(|&c| {
            let p = (c + 1) as f64 / total;
            p * (p * k as f64).ln()
        })
        .sum::<f64>()
        .max(0.0);
    Ok(ModeCoverage { modes_covered: counts.iter().filter(|&&c| c > 0).count(), mode_kl, counts, unassigned })
}

/// Mann–Whitney AUROC of "in" scoring above "out", ties counted as one half.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::invalid("auroc needs nonempty score lists"));
    }
    if in_scores.iter().chain(out_scores).any(|v| v.is_nan()) {
        return Err(Error::NonFinite { op: "auroc" });
    }
    let mut all: Vec<(f64, bool)> =
        in_scores.iter().map(|&s| (s, true)).chain(out_scores.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_in = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum_in += avg * all[i..j].iter().filter(|t| t.1).count() as f64;
        i = j;
    }
    let (n_in, n_out) = (in_scores.len() as f64, out_scores.len() as f64);
    Ok((rank_sum_in - n_in * (n_in + 1.0) / 2.0) / (n_in * n_out))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OodReport {
    pub vaebm: BTreeMap<String, f64>,
    pub vae: BTreeMap<String, f64>,
}

/// Scores are `IWAE_K` for the VAE and `IWAE_K − E` for the VAEBM.
pub fn ood_report(
    model: &VaebmModel,
    in_test: &[Point],
    ood_sets: &BTreeMap<String, Vec<Point>>,
    k: usize,
    seed: u64,
) -> Result<OodReport> {
    let in_iw = iwae_bounds(&model.vae, in_test, k, derive_seed(seed, "ood-in"))?;
    let in_e = energies(&model.energy, in_test)?;
    let in_h: Vec<f64> = in_iw.iter().zip(&in_e).map(|(p, e)| p - e).collect();
    let mut report = OodReport::default();
    for (name, pts) in ood_sets {
        let iw = iwae_bounds(&model.vae, pts, k, derive_seed(seed, &format!("ood-{}", name)))?;
        let e = energies(&model.energy, pts)?;
        let h: Vec<f64> = iw.iter().zip(&e).map(|(p, e)| p - e).collect();
        report.vae.insert(name.clone(), auroc(&in_iw, &iw)?);
        report.vaebm.insert(name.clone(), auroc(&in_h, &h)?);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub train_mean: f64,
    pub test_mean: f64,
}

/// Shared-range histogram of two score lists.
pub fn histogram_from_scores(train: &[f64], test: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 10 {
        return Err(Error::invalid(format!("histogram needs at least 10 bins, got {}", bins)));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("histogram needs nonempty score lists"));
    }
    if train.iter().chain(test).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "histogram" });
    }
    let lo = train.iter().chain(test).copied().fold(f64::INFINITY, f64::min);
    let mut hi = train.iter().chain(test).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let count = |v: &[f64]| {
        let mut c = vec![0usize; bins];
        for &s in v {
            c[(((s - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Histogram {
        edges,
        train_counts: count(train),
        test_counts: count(test),
        train_mean: mean(train),
        test_mean: mean(test),
    })
}

/// Unnormalized log density `IWAE_K(x) − E(x)` per point.
pub fn log_h_scores(model: &VaebmModel, points: &[Point], k: usize, seed: u64) -> Result<Vec<f64>> {
    let iw = iwae_bounds(&model.vae, points, k, seed)?;
    let e = energies(&model.energy, points)?;
    Ok(iw.iter().zip(&e).map(|(p, e)| p - e).collect())
}

/// Histogram of `IWAE_K − E` on train and test points.
pub fn ll_histogram(
    model: &VaebmModel,
    train: &[Point],
    test: &[Point],
    k: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    let tr = log_h_scores(model, train, k, derive_seed(seed, "hist-train"))?;
    let te = log_h_scores(model, test, k, derive_seed(seed, "hist-test"))?;
    histogram_from_scores(&tr, &te, bins)
}

impl Histogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "bin_left,bin_right,train_count,test_count")?;
        for i in 0..self.train_counts.len() {
            writeln!(w, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.train_counts[i], self.test_counts[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub true_test_ll: f64,
    pub vae_test_ll: f64,
    pub mean_test_ll: f64,
    pub log_z: f64,
    pub modes_covered: usize,
    pub mode_kl: f64,
    pub mode_unassigned: usize,
    pub vae_modes_covered: usize,
    pub vae_mode_kl: f64,
    pub auroc_by_set: BTreeMap<String, f64>,
    pub vae_auroc_by_set: BTreeMap<String, f64>,
    pub hist_train_mean: f64,
    pub hist_test_mean: f64,
    /// AUROC of test against train scores; 0.5 when the model treats them alike.
    pub auroc_self: f64,
    pub iwae_k: usize,
    pub grid_iwae_k: usize,
    pub grid_resolution: usize,
    pub n_test_ll: usize,
    pub n_mode_samples: usize,
}

impl MetricsReport {
    /// Ordered `(key, value)` pairs.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = vec![
            ("true_test_ll".into(), self.true_test_ll.to_string()),
            ("vae_test_ll".into(), self.vae_test_ll.to_string()),
            ("mean_test_ll".into(), self.mean_test_ll.to_string()),
            ("log_z".into(), self.log_z.to_string()),
            ("modes_covered".into(), self.modes_covered.to_string()),
            ("mode_kl".into(), self.mode_kl.to_string()),
            ("mode_kl_smoothing".into(), "plus_one_per_mode".into()),
            ("mode_unassigned".into(), self.mode_unassigned.to_string()),
            ("vae_modes_covered".into(), self.vae_modes_covered.to_string()),
            ("vae_mode_kl".into(), self.vae_mode_kl.to_string()),
        ];
        for (k, a) in &self.auroc_by_set {
            v.push((format!("auroc_{}", k), a.to_string()));
        }
        for (k, a) in &self.vae_auroc_by_set {
            v.push((format!("vae_auroc_{}", k), a.to_string()));
        }
        v.extend([
            ("hist_train_mean".into(), self.hist_train_mean.to_string()),
            ("hist_test_mean".into(), self.hist_test_mean.to_string()),
            ("auroc_self".into(), self.auroc_self.to_string()),
            ("iwae_k".into(), self.iwae_k.to_string()),
            ("grid_iwae_k".into(), self.grid_iwae_k.to_string()),
            ("grid_resolution".into(), self.grid_resolution.to_string()),
            ("n_test_ll".into(), self.n_test_ll.to_string()),
            ("n_mode_samples".into(), self.n_mode_samples.to_string()),
        ]);
        v
    }

    pub fn to_kv(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
    }

    pub fn to_csv(&self) -> String {
        let e = self.entries();
        let header: Vec<&str> = e.iter().map(|(k, _)| k.as_str()).collect();
        let row: Vec<&str> = e.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    pub fn has_nan(&self) -> bool {
        let f = [
            self.true_test_ll,
            self.vae_test_ll,
            self.mean_test_ll,
            self.log_z,
            self.mode_kl,
            self.vae_mode_kl,
            self.hist_train_mean,
            self.hist_test_mean,
            self.auroc_self,
        ];
        f.iter().any(|v| v.is_nan()) || self.auroc_by_set.values().chain(self.vae_auroc_by_set.values()).any(|v| v.is_nan())
    }
}
