//! Acceptance suite. Trains the default pipeline for seeds 1, 2 and 3 (and
//! seed 1 a second time), then checks every criterion at its stated
//! tolerance. One PASS/FAIL line per criterion goes to stderr uncaptured.
//!
//! Set `VAEBM_ACCEPTANCE_DIR` to keep the run directories.

#[path = "../../core/tests/support/grad_suite.rs"]
mod grad_suite;
#[path = "../../core/tests/support/partition_suite.rs"]
mod partition_suite;
#[path = "../../core/tests/support/sampler_suite.rs"]
mod sampler_suite;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use vaebm::checkpoint::load_vaebm;
use vaebm::ebm::{energies, VaebmModel};
use vaebm::eval::{auroc, grid_log_partition, log_h_scores, MetricsReport};
use vaebm::rng::derive_seed;
use vaebm::toydata::read_points_csv;
use vaebm_lab::commands::{cmd_all, OOD_SETS};
use vaebm_lab::{Layout, RunConfig};

const SEEDS: [u64; 3] = [1, 2, 3];

fn say(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{}", line);
    let _ = e.flush();
}

struct Outcome {
    criterion: &'static str,
    pass: bool,
    detail: String,
}

struct Run {
    seed: u64,
    layout: Layout,
    report: Result<MetricsReport, String>,
    secs: f64,
}

fn root() -> (Option<tempfile::TempDir>, PathBuf) {
    match std::env::var_os("VAEBM_ACCEPTANCE_DIR") {
        Some(d) => {
            let p = PathBuf::from(d);
            std::fs::create_dir_all(&p).unwrap();
            (None, p)
        }
        None => {
            let t = tempfile::tempdir().unwrap();
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    }
}

fn pipeline(dir: &Path, seed: u64) -> Run {
    let cfg = RunConfig { seed, out: dir.to_path_buf(), ..RunConfig::default() };
    let layout = Layout::new(dir);
    let t = Instant::now();
    let report = cmd_all(&cfg, &layout, true).map_err(|e| e.to_string());
    let secs = t.elapsed().as_secs_f64();
    say(&format!("  pipeline seed {} finished in {:.0} s", seed, secs));
    Run { seed, layout, report, secs }
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn c1_headline(runs: &[Run]) -> Outcome {
    let mut detail = String::new();
    let mut ordered = true;
    let mut sums = [0.0; 3];
    for r in runs {
        match &r.report {
            Ok(m) => {
                let ok = m.vae_test_ll < m.mean_test_ll && m.mean_test_ll < m.true_test_ll;
                ordered &= ok;
                sums[0] += m.true_test_ll;
                sums[1] += m.vae_test_ll;
                sums[2] += m.mean_test_ll;
                detail += &format!(
                    "seed {}: true {:.4}, VAE {:.4}, VAEBM {:.4}, ordered {}, {:.0} s; ",
                    r.seed, m.true_test_ll, m.vae_test_ll, m.mean_test_ll, ok, r.secs
                );
            }
            Err(e) => {
                return Outcome { criterion: "1 headline log-likelihoods", pass: false, detail: format!("seed {} failed: {}", r.seed, e) };
            }
        }
    }
    let n = runs.len() as f64;
    let (t, v, b) = (sums[0] / n, sums[1] / n, sums[2] / n);
    let bands = within(t, -1.10, 0.02) && within(v, -2.97, 0.5) && within(b, -1.50, 0.4);
    detail += &format!(
        "means: true {:.4} (-1.10 ± 0.02), VAE {:.4} (-2.97 ± 0.5), VAEBM {:.4} (-1.50 ± 0.4)",
        t, v, b
    );
    Outcome { criterion: "1 headline log-likelihoods", pass: bands && ordered, detail }
}

fn c2_partition(model: Option<&VaebmModel>, seed: u64) -> Outcome {
    let (z0, z0d) = partition_suite::zero_energy();
    let (q, qd) = partition_suite::quadratic_energy();
    let mut pass = within(z0, 0.0, 0.02) && within(q, -std::f64::consts::LN_2, 0.01);
    pass &= (z0 - z0d).abs() < 0.01 && (q - qd).abs() < 0.01;
    let mut detail = format!(
        "E=0: {:.5} (drift {:.1e}); quadratic: {:.5} vs -0.69315 (drift {:.1e})",
        z0,
        (z0 - z0d).abs(),
        q,
        (q - qd).abs()
    );
    match model {
        Some(m) => {
            let cfg = RunConfig::default();
            let grid = cfg.grid();
            let s = derive_seed(seed, "acceptance-doubling");
            let a = grid_log_partition(m, &grid, 100, s).unwrap().log_z;
            let b = grid_log_partition(m, &grid.doubled(), 100, s).unwrap().log_z;
            pass &= (a - b).abs() < 0.01;
            detail += &format!(
                "; trained model {}² vs {}² at K=100: {:.4} vs {:.4} (drift {:.1e})",
                grid.resolution,
                2 * grid.resolution,
                a,
                b,
                (a - b).abs()
            );
        }
        None => {
            pass = false;
            detail += "; no trained model for the doubling check";
        }
    }
    Outcome { criterion: "2 partition oracles", pass, detail }
}

fn c3_gradients() -> Outcome {
    let mut checks = grad_suite::primitive_checks();
    let prim_worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let composed = grad_suite::composed_checks();
    let comp_worst = composed.iter().map(|c| c.worst).fold(0.0, f64::max);
    checks.extend(composed);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass()).map(|c| c.name).collect();
    Outcome {
        criterion: "3 gradient suite",
        pass: failed.is_empty(),
        detail: format!(
            "{} checks x {} trials, h = {:e}; worst primitive {:.1e} (< 1e-6), worst composed {:.1e} (< 1e-5){}",
            checks.len(),
            grad_suite::TRIALS,
            grad_suite::H,
            prim_worst,
            comp_worst,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    }
}

fn c4_sampler() -> Outcome {
    let m = sampler_suite::zero_energy_moments();
    let gap = sampler_suite::equivalence_gap(10_000);
    let anc = sampler_suite::zero_steps_is_ancestral();
    let worst_var = m.coords.iter().map(|c| (c.1 - 1.0).abs()).fold(0.0, f64::max);
    let worst_z = m.coords.iter().map(|c| c.0.abs() / c.2).fold(0.0, f64::max);
    Outcome {
        criterion: "4 sampler correctness",
        pass: m.pass() && gap < 1e-12 && anc,
        detail: format!(
            "{} draws: worst |mean|/SE {:.2} (< 3), worst |var-1| {:.4} (< 0.05); lemma gap {:.1e} (< 1e-12); zero-step = ancestral: {}",
            m.draws, worst_z, worst_var, gap, anc
        ),
    }
}

fn c5_modes(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for r in runs {
        match &r.report {
            Ok(m) => {
                let ok = m.modes_covered == 25 && m.mode_kl < 0.1;
                pass &= ok;
                detail += &format!(
                    "seed {}: VAEBM {}/25, KL {:.4}, unassigned {}; VAE {}/25, KL {:.4}; ",
                    r.seed, m.modes_covered, m.mode_kl, m.mode_unassigned, m.vae_modes_covered, m.vae_mode_kl
                );
            }
            Err(_) => pass = false,
        }
    }
    Outcome { criterion: "5 mode coverage", pass, detail: detail.trim_end_matches("; ").to_string() }
}

fn c6_ood(runs: &[Run], model: Option<&VaebmModel>, seed1: &Layout) -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for r in runs {
        match &r.report {
            Ok(m) => {
                let mut parts = Vec::new();
                for set in OOD_SETS {
                    let (a, b) = (m.auroc_by_set[set], m.vae_auroc_by_set[set]);
                    pass &= a > b;
                    parts.push(format!("{} {:.4}>{:.4}", set, a, b));
                }
                pass &= within(m.auroc_self, 0.5, 0.02);
                detail += &format!("seed {}: {}, self {:.4}; ", r.seed, parts.join(" "), m.auroc_self);
            }
            Err(_) => pass = false,
        }
    }
    match model {
        Some(model) => {
            let test = read_points_csv(&seed1.test_csv()).unwrap();
            let ood = read_points_csv(&seed1.ood_csv("shifted")).unwrap();
            let (test, ood) = (&test[..2000], &ood[..2000]);
            let a = log_h_scores(model, test, 20, 1).unwrap();
            let b = log_h_scores(model, ood, 20, 2).unwrap();
            let base = auroc(&a, &b).unwrap();
            let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
            let shifted = VaebmModel { vae: model.vae.clone(), energy: model.energy.shifted(5.0) };
            let a5 = log_h_scores(&shifted, test, 20, 1).unwrap();
            let b5 = log_h_scores(&shifted, ood, 20, 2).unwrap();
            let inv = auroc(&exp(&a), &exp(&b)).unwrap() == base && auroc(&a5, &b5).unwrap() == base;
            pass &= inv;
            detail += &format!("monotone/shift invariance: {}", inv);
        }
        None => pass = false,
    }
    Outcome { criterion: "6 OOD ordering", pass, detail }
}

fn c7_overfit(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for r in runs {
        match &r.report {
            Ok(m) => {
                let gap = m.hist_train_mean - m.hist_test_mean;
                pass &= gap.abs() < 0.1;
                detail += &format!("seed {}: train {:.4}, test {:.4}, gap {:.4}; ", r.seed, m.hist_train_mean, m.hist_test_mean, gap);
            }
            Err(_) => pass = false,
        }
    }
    Outcome { criterion: "7 no overfit", pass, detail: detail.trim_end_matches("; ").to_string() }
}

fn c8_determinism(a: &Layout, b: &Layout) -> Outcome {
    let files = ["metrics.csv", "metrics.txt", "ll_histogram.csv", "samples.csv", "vae_train_log.csv", "ebm_train_log.csv"];
    let differ: Vec<&str> = files
        .iter()
        .filter(|f| std::fs::read(a.root.join(f)).ok() != std::fs::read(b.root.join(f)).ok() || !a.root.join(f).exists())
        .copied()
        .collect();
    Outcome {
        criterion: "8 determinism",
        pass: differ.is_empty(),
        detail: if differ.is_empty() { format!("{} files byte-identical across two seed-1 runs", files.len()) } else { format!("differ: {}", differ.join(", ")) },
    }
}

/// Energy should separate the data region from the uniform box.
fn energy_separation(model: Option<&VaebmModel>, layout: &Layout) -> Outcome {
    let Some(model) = model else {
        return Outcome { criterion: "energy separation", pass: false, detail: "no model".into() };
    };
    let mean = |p: &[[f64; 2]]| energies(&model.energy, p).unwrap().iter().sum::<f64>() / p.len() as f64;
    let test = mean(&read_points_csv(&layout.test_csv()).unwrap()[..10_000]);
    let uni = mean(&read_points_csv(&layout.ood_csv("uniform")).unwrap());
    Outcome {
        criterion: "energy separation",
        pass: test < uni - 1.0,
        detail: format!("mean E test {:.3}, uniform {:.3} (need gap > 1)", test, uni),
    }
}

#[test]
fn acceptance_criteria() {
    let (_keep, root) = root();
    say("acceptance: running default pipelines (seeds 1, 2, 3 and a repeat of seed 1)");
    let runs: Vec<Run> = SEEDS.iter().map(|&s| pipeline(&root.join(format!("seed{}", s)), s)).collect();
    let repeat = pipeline(&root.join("seed1-repeat"), 1);
    let model = runs[0].report.as_ref().ok().map(|_| load_vaebm(&runs[0].layout.vaebm_ckpt()).unwrap());

    let outcomes = vec![
        c1_headline(&runs),
        c2_partition(model.as_ref(), 1),
        c3_gradients(),
        c4_sampler(),
        c5_modes(&runs),
        c6_ood(&runs, model.as_ref(), &runs[0].layout),
        c7_overfit(&runs),
        c8_determinism(&runs[0].layout, &repeat.layout),
        energy_separation(model.as_ref(), &runs[0].layout),
    ];
    let mut summary = BTreeMap::new();
    for o in &outcomes {
        say(&format!("[{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.criterion, o.detail));
        summary.insert(o.criterion, o.pass);
    }
    let failed: Vec<&&str> = summary.iter().filter(|(_, &p)| !p).map(|(k, _)| k).collect();
    assert!(failed.is_empty(), "failed criteria: {:?}", failed);
}
