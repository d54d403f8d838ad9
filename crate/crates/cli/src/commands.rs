use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use vaebm::checkpoint::{load_vae, load_vaebm, save_vae, save_vaebm};
use vaebm::ebm::{train_ebm, EbmLogRow, EnergyNet, TrainStatus, VaebmModel};
use vaebm::eval::{
    auroc, grid_log_partition, histogram_from_scores, log_h_scores, mean_log_likelihood, mode_coverage,
    ood_report, true_test_log_likelihood, MetricsReport,
};
use vaebm::rng::derive_seed;
use vaebm::sampler::{sample_vaebm, sample_vaebm_run, InitSource, LangevinConfig};
use vaebm::toydata::{gen_ood_sets, grid_spec, read_points_csv, sample_mixture, write_points_csv, MixtureSpec, Split};
use vaebm::vae::{iwae_bounds, train_vae, VaeLogRow};
use vaebm::Point;

use crate::config::RunConfig;
use crate::svg;
use crate::CliError;

pub const OOD_SETS: [&str; 3] = ["blob", "shifted", "uniform"];

/// File names under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn train_csv(&self) -> PathBuf {
        self.p("data/25g_train.csv")
    }
    pub fn test_csv(&self) -> PathBuf {
        self.p("data/25g_test.csv")
    }
    pub fn ood_csv(&self, name: &str) -> PathBuf {
        self.p(&format!("data/ood_{}.csv", name))
    }
    pub fn spec_json(&self) -> PathBuf {
        self.p("data/mixture_spec.json")
    }
    pub fn vae_ckpt(&self) -> PathBuf {
        self.p("vae.ckpt")
    }
    pub fn vae_log(&self) -> PathBuf {
        self.p("vae_train_log.csv")
    }
    pub fn vaebm_ckpt(&self) -> PathBuf {
        self.p("vaebm.ckpt")
    }
    pub fn ebm_log(&self) -> PathBuf {
        self.p("ebm_train_log.csv")
    }
    pub fn samples_csv(&self) -> PathBuf {
        self.p("samples.csv")
    }
    pub fn samples_svg(&self) -> PathBuf {
        self.p("samples.svg")
    }
    pub fn trace_csv(&self) -> PathBuf {
        self.p("trace.csv")
    }
    pub fn metrics_txt(&self) -> PathBuf {
        self.p("metrics.txt")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.p("metrics.csv")
    }
    pub fn hist_csv(&self) -> PathBuf {
        self.p("ll_histogram.csv")
    }
    pub fn config_toml(&self) -> PathBuf {
        self.p("config_resolved.toml")
    }
}

fn guard(paths: &[PathBuf], force: bool) -> Result<(), CliError> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Exists(p.clone()));
        }
    }
    Ok(())
}

fn require(path: &Path, hint: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing { path: path.to_path_buf(), hint })
    }
}

fn read_points(path: &Path) -> Result<Vec<Point>, CliError> {
    require(path, "run gen-data first")?;
    Ok(read_points_csv(path)?)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_dir(path)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn mixture(cfg: &RunConfig) -> MixtureSpec {
    grid_spec(cfg.data.component_std)
}

/// Writes train/test/OOD point sets and the mixture spec. `n` overrides the
/// train and test sizes.
pub fn gen_data(cfg: &RunConfig, layout: &Layout, n: Option<usize>, force: bool) -> Result<(), CliError> {
    let mut outs = vec![layout.train_csv(), layout.test_csv(), layout.spec_json()];
    outs.extend(OOD_SETS.iter().map(|s| layout.ood_csv(s)));
    guard(&outs, force)?;
    if n == Some(0) {
        return Err(CliError::Config("--n = 0: must be >= 1".into()));
    }
    let spec = mixture(cfg);
    let train = sample_mixture(&spec, n.unwrap_or(cfg.data.n_train), derive_seed(cfg.seed, "data-train"), Split::Train)?;
    let test = sample_mixture(&spec, n.unwrap_or(cfg.data.n_test), derive_seed(cfg.seed, "data-test"), Split::Test)?;
    let ood = gen_ood_sets(&spec, cfg.data.n_ood, derive_seed(cfg.seed, "data-ood"))?;
    ensure_dir(&layout.train_csv())?;
    write_points_csv(&layout.train_csv(), &train.samples)?;
    write_points_csv(&layout.test_csv(), &test.samples)?;
    for (name, set) in &ood {
        write_points_csv(&layout.ood_csv(name), &set.samples)?;
    }
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_text(&layout.spec_json(), &(json + "\n"))?;
    eprintln!("wrote {} train, {} test and {} x {} OOD points", train.len(), test.len(), ood.len(), cfg.data.n_ood);
    Ok(())
}

fn write_vae_log(path: &Path, log: &[VaeLogRow]) -> Result<(), CliError> {
    let mut s = String::from("epoch,step,kl_weight,elbo,kl\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.step, r.kl_weight, r.elbo, r.kl);
    }
    write_text(path, &s)
}

fn write_ebm_log(path: &Path, log: &[EbmLogRow]) -> Result<(), CliError> {
    let mut s = String::from("step,loss,E_data_mean,E_neg_mean,buffer_p\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.loss, r.e_data_mean, r.e_neg_mean, r.buffer_p);
    }
    write_text(path, &s)
}

pub fn cmd_train_vae(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<(), CliError> {
    guard(&[layout.vae_ckpt(), layout.vae_log()], force)?;
    let train = read_points(&layout.train_csv())?;
    let out = train_vae(&train, &cfg.vae_train(), derive_seed(cfg.seed, "vae"))?;
    ensure_dir(&layout.vae_ckpt())?;
    save_vae(&layout.vae_ckpt(), &out.model)?;
    write_vae_log(&layout.vae_log(), &out.log)?;
    if let Some(last) = out.log.last() {
        eprintln!("vae: {} epochs, final train ELBO {:.4}", out.log.len(), last.elbo);
    }
    Ok(())
}

/// Stage 2. On divergence the last good parameters and the partial log are
/// still written before the error is returned.
pub fn cmd_train_ebm(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<(), CliError> {
    guard(&[layout.vaebm_ckpt(), layout.ebm_log()], force)?;
    require(&layout.vae_ckpt(), "run train-vae first")?;
    let vae = load_vae(&layout.vae_ckpt())?;
    let train = read_points(&layout.train_csv())?;
    let tc = cfg.ebm_train();
    let init = EnergyNet::init(tc.arch, tc.l2_coeff, derive_seed(cfg.seed, "energy"))?;
    let out = train_ebm(&vae, init, &train, &cfg.train_langevin(), &tc, derive_seed(cfg.seed, "ebm"))?;
    save_vaebm(&layout.vaebm_ckpt(), &VaebmModel { vae, energy: out.energy })?;
    write_ebm_log(&layout.ebm_log(), &out.log)?;
    match out.status {
        TrainStatus::Completed => eprintln!("ebm: {} iterations", out.log.len()),
        TrainStatus::EarlyStopped { step } => eprintln!("ebm: early stop at step {}", step),
        TrainStatus::Diverged { step, reason } => {
            return Err(CliError::Divergence(format!("energy training step {}: {}", step, reason)));
        }
    }
    Ok(())
}

fn load_model(layout: &Layout) -> Result<VaebmModel, CliError> {
    require(&layout.vaebm_ckpt(), "run train-ebm first")?;
    Ok(load_vaebm(&layout.vaebm_ckpt())?)
}

pub fn cmd_sample(
    cfg: &RunConfig,
    layout: &Layout,
    n: Option<usize>,
    steps: Option<usize>,
    trace: bool,
    force: bool,
) -> Result<(), CliError> {
    let mut outs = vec![layout.samples_csv(), layout.samples_svg()];
    if trace {
        outs.push(layout.trace_csv());
    }
    guard(&outs, force)?;
    let model = load_model(layout)?;
    let n = n.unwrap_or(cfg.eval.n_samples);
    if n == 0 {
        return Err(CliError::Config("--n = 0: must be >= 1".into()));
    }
    let steps = steps.unwrap_or(cfg.sampler.eval_steps);
    let ld = LangevinConfig {
        steps,
        step_size: cfg.sampler.step_size,
        seed: derive_seed(cfg.seed, "sample"),
        trace_every: usize::from(trace),
    };
    let run = sample_vaebm_run(&model, n, &ld, InitSource::Gaussian)?;
    write_points_csv(&layout.samples_csv(), &run.points)?;
    let title = if steps == 0 {
        format!("VAE-only samples (n = {})", n)
    } else {
        format!("VAEBM samples (n = {}, {} Langevin steps)", n, steps)
    };
    write_text(&layout.samples_svg(), &svg::scatter(&run.points, &mixture(cfg).centers, &title))?;
    if trace {
        let mut w = std::io::BufWriter::new(std::fs::File::create(layout.trace_csv())?);
        writeln!(w, "chain,step,x0,x1,potential")?;
        for (c, t) in run.traces.iter().enumerate() {
            for p in &t.points {
                writeln!(w, "{},{},{},{},{}", c, p.step, p.x[0], p.x[1], p.potential)?;
            }
        }
        w.flush()?;
    }
    eprintln!("sampled {} points with {} Langevin steps", n, steps);
    Ok(())
}

fn head(points: &[Point], n: usize) -> &[Point] {
    &points[..n.min(points.len())]
}

/// Full evaluation of a trained model on the stored data sets.
pub fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<MetricsReport, CliError> {
    let model = load_model(layout)?;
    let spec = mixture(cfg);
    let test = read_points(&layout.test_csv())?;
    let train = read_points(&layout.train_csv())?;
    let mut ood = BTreeMap::new();
    for name in OOD_SETS {
        ood.insert(name.to_string(), head(&read_points(&layout.ood_csv(name))?, cfg.eval.n_score).to_vec());
    }
    let ev = &cfg.eval;
    let s = cfg.seed;

    let true_ll = true_test_log_likelihood(&spec, &test);
    let ll_pts = head(&test, ev.n_test_ll);
    let iw = iwae_bounds(&model.vae, ll_pts, ev.iwae_k, derive_seed(s, "eval-test-iwae"))?;
    let e = vaebm::ebm::energies(&model.energy, ll_pts)?;
    let zeros = vec![0.0; iw.len()];
    let vae_ll = mean_log_likelihood(&iw, &zeros, 0.0)?;
    let partition = grid_log_partition(&model, &cfg.grid(), ev.grid_iwae_k, derive_seed(s, "eval-grid"))?;
    let vaebm_ll = mean_log_likelihood(&iw, &e, partition.log_z)?;

    let radius = ev.mode_radius_std * spec.component_std;
    let ld = cfg.eval_langevin(derive_seed(s, "eval-samples"));
    let samples = sample_vaebm(&model, ev.n_samples, &ld, InitSource::Gaussian)?;
    let modes = mode_coverage(&samples, &spec, radius)?;
    let vae_samples = sample_vaebm(&model, ev.n_samples, &LangevinConfig { steps: 0, ..ld }, InitSource::Gaussian)?;
    let vae_modes = mode_coverage(&vae_samples, &spec, radius)?;

    let ood_r = ood_report(&model, head(&test, ev.n_score), &ood, ev.score_k, derive_seed(s, "eval-ood"))?;
    let tr = log_h_scores(&model, head(&train, ev.n_score), ev.score_k, derive_seed(s, "eval-hist-train"))?;
    let te = log_h_scores(&model, head(&test, ev.n_score), ev.score_k, derive_seed(s, "eval-hist-test"))?;
    let hist = histogram_from_scores(&tr, &te, ev.hist_bins)?;
    let auroc_self = auroc(&te, &tr)?;

    let report = MetricsReport {
        true_test_ll: true_ll,
        vae_test_ll: vae_ll,
        mean_test_ll: vaebm_ll,
        log_z: partition.log_z,
        modes_covered: modes.modes_covered,
        mode_kl: modes.mode_kl,
        mode_unassigned: modes.unassigned,
        vae_modes_covered: vae_modes.modes_covered,
        vae_mode_kl: vae_modes.mode_kl,
        auroc_by_set: ood_r.vaebm,
        vae_auroc_by_set: ood_r.vae,
        hist_train_mean: hist.train_mean,
        hist_test_mean: hist.test_mean,
        auroc_self,
        iwae_k: ev.iwae_k,
        grid_iwae_k: ev.grid_iwae_k,
        grid_resolution: ev.grid_resolution,
        n_test_ll: ll_pts.len(),
        n_mode_samples: ev.n_samples,
    };
    hist.write_csv(&layout.hist_csv())?;
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<MetricsReport, CliError> {
    guard(&[layout.metrics_txt(), layout.metrics_csv(), layout.hist_csv()], force)?;
    let report = evaluate(cfg, layout)?;
    write_text(&layout.metrics_txt(), &report.to_kv())?;
    write_text(&layout.metrics_csv(), &report.to_csv())?;
    print!("{}", summary_table(&report));
    Ok(report)
}

/// Runs every stage in order into one output directory.
pub fn cmd_all(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<MetricsReport, CliError> {
    std::fs::create_dir_all(&layout.root)?;
    guard(&[layout.config_toml()], force)?;
    write_text(&layout.config_toml(), &cfg.to_toml())?;
    gen_data(cfg, layout, None, force)?;
    cmd_train_vae(cfg, layout, force)?;
    cmd_train_ebm(cfg, layout, force)?;
    cmd_sample(cfg, layout, None, None, false, force)?;
    cmd_eval(cfg, layout, force)
}

pub fn summary_table(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<34} {:>12} {:>12}", "metric", "this run", "reference");
    let _ = writeln!(s, "{:<34} {:>12.4} {:>12}", "test LL, true density (nats)", r.true_test_ll, "-1.10");
    let _ = writeln!(s, "{:<34} {:>12.4} {:>12}", "test LL, VAE (IWAE)", r.vae_test_ll, "-2.97");
    let _ = writeln!(s, "{:<34} {:>12.4} {:>12}", "test LL, VAEBM", r.mean_test_ll, "-1.50");
    let _ = writeln!(s, "{:<34} {:>12.4} {:>12}", "log Z (grid)", r.log_z, "");
    let _ = writeln!(s, "{:<34} {:>12} {:>12}", "modes covered, VAEBM / VAE", format!("{} / {}", r.modes_covered, r.vae_modes_covered), "25");
    let _ = writeln!(s, "{:<34} {:>12} {:>12}", "mode KL, VAEBM / VAE", format!("{:.3} / {:.3}", r.mode_kl, r.vae_mode_kl), "< 0.1");
    for (k, v) in &r.auroc_by_set {
        let base = r.vae_auroc_by_set.get(k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{:<34} {:>12} {:>12}", format!("AUROC {}, VAEBM / VAE", k), format!("{:.3} / {:.3}", v, base), "");
    }
    let _ = writeln!(s, "{:<34} {:>12.4} {:>12}", "train - test mean log h", r.hist_train_mean - r.hist_test_mean, "< 0.1");
    s
}
