use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
n_train = 2000
n_test = 2000
n_ood = 300

[vae]
hidden_width = 16
depth = 3
latent_dim = 4
epochs = 2

[ebm]
hidden_width = 16
depth = 3
iterations = 20
batch_size = 32
buffer_ramp_steps = 10

[sampler]
steps = 5
eval_steps = 5

[eval]
grid_resolution = 24
iwae_k = 20
grid_iwae_k = 4
score_k = 4
n_test_ll = 100
n_samples = 300
n_score = 200
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vaebm-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = dir.path().join("run");
    Fixture { _dir: dir, config, out }
}

impl Fixture {
    fn cmd(&self, sub: &[&str]) -> Output {
        let mut args = vec![sub[0], "--config", s(&self.config), "--out", s(&self.out)];
        args.extend(&sub[1..]);
        run(&args)
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_data_writes_all_sets_and_is_repeatable() {
    let f = fixture();
    ok(&f.cmd(&["gen-data"]));
    let data = f.out.join("data");
    assert_eq!(rows(&data.join("25g_train.csv")), 2000);
    assert_eq!(rows(&data.join("25g_test.csv")), 2000);
    for set in ["uniform", "shifted", "blob"] {
        assert_eq!(rows(&data.join(format!("ood_{}.csv", set))), 300);
    }
    assert!(data.join("mixture_spec.json").exists());
    let first = std::fs::read(data.join("25g_train.csv")).unwrap();

    let again = f.cmd(&["gen-data"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    ok(&f.cmd(&["gen-data", "--force"]));
    assert_eq!(std::fs::read(data.join("25g_train.csv")).unwrap(), first);

    ok(&f.cmd(&["gen-data", "--force", "--n", "123"]));
    assert_eq!(rows(&data.join("25g_train.csv")), 123);
    assert_eq!(rows(&data.join("25g_test.csv")), 123);
}

#[test]
fn stage_order_is_enforced() {
    let f = fixture();
    ok(&f.cmd(&["gen-data"]));
    let o = f.cmd(&["train-ebm"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vae.ckpt"));
    let o = f.cmd(&["sample"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vaebm.ckpt"));
}

#[test]
fn missing_data_is_reported() {
    let f = fixture();
    let o = f.cmd(&["train-vae"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("25g_train.csv"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[ebm]\nlearning_rate = 0.1\n").unwrap();
    let o = run(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    std::fs::write(&cfg, "[sampler]\nstep_size = -1.0\n").unwrap();
    let o = run(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sampler.step_size") && err.contains("-1"), "{}", err);
}

#[test]
fn full_pipeline_outputs_and_determinism() {
    let f = fixture();
    let o = f.cmd(&["all", "--seed", "4"]);
    ok(&o);
    let table = String::from_utf8_lossy(&o.stdout);
    for anchor in ["-1.10", "-2.97", "-1.50"] {
        assert!(table.contains(anchor), "summary lacks {}", anchor);
    }
    for name in [
        "vae.ckpt",
        "vaebm.ckpt",
        "vae_train_log.csv",
        "ebm_train_log.csv",
        "samples.csv",
        "samples.svg",
        "metrics.txt",
        "metrics.csv",
        "ll_histogram.csv",
        "config_resolved.toml",
    ] {
        assert!(f.out.join(name).exists(), "missing {}", name);
    }
    assert_eq!(rows(&f.out.join("samples.csv")), 300);
    assert_eq!(rows(&f.out.join("ebm_train_log.csv")), 20);
    let metrics = std::fs::read_to_string(f.out.join("metrics.txt")).unwrap();
    assert!(!metrics.to_lowercase().contains("nan"), "{}", metrics);
    for key in ["mean_test_ll", "vae_test_ll", "true_test_ll", "log_z", "modes_covered", "mode_kl", "auroc_self"] {
        assert!(metrics.lines().any(|l| l.starts_with(&format!("{} = ", key))), "missing {}", key);
    }
    let hist = std::fs::read_to_string(f.out.join("ll_histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,train_count,test_count\n"));

    let report = std::fs::read(f.out.join("metrics.csv")).unwrap();
    ok(&f.cmd(&["eval", "--seed", "4", "--force"]));
    assert_eq!(std::fs::read(f.out.join("metrics.csv")).unwrap(), report);

    let samples = std::fs::read(f.out.join("samples.csv")).unwrap();
    ok(&f.cmd(&["sample", "--seed", "4", "--force"]));
    assert_eq!(std::fs::read(f.out.join("samples.csv")).unwrap(), samples);

    ok(&f.cmd(&["sample", "--seed", "4", "--force", "--steps", "0", "--n", "50", "--trace"]));
    let svg = std::fs::read_to_string(f.out.join("samples.svg")).unwrap();
    assert!(svg.contains("VAE-only"));
    let trace = std::fs::read_to_string(f.out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("chain,step,x0,x1,potential\n"));
    assert_eq!(trace.lines().count() - 1, 50);

    ok(&f.cmd(&["sample", "--seed", "4", "--force", "--steps", "3", "--n", "10", "--trace"]));
    assert_eq!(rows(&f.out.join("trace.csv")), 40);

    let ckpt = std::fs::read(f.out.join("vaebm.ckpt")).unwrap();
    let model = vaebm::checkpoint::load_vaebm(&f.out.join("vaebm.ckpt")).unwrap();
    let resaved = f.out.join("resaved.ckpt");
    vaebm::checkpoint::save_vaebm(&resaved, &model).unwrap();
    assert_eq!(std::fs::read(&resaved).unwrap(), ckpt);

    let o = f.cmd(&["train-ebm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_results() {
    let f = fixture();
    ok(&f.cmd(&["gen-data"]));
    ok(&f.cmd(&["train-vae", "--threads", "1"]));
    ok(&f.cmd(&["train-ebm", "--threads", "1"]));
    ok(&f.cmd(&["sample", "--threads", "1"]));
    let one = std::fs::read(f.out.join("samples.csv")).unwrap();
    let ebm_one = std::fs::read(f.out.join("vaebm.ckpt")).unwrap();
    ok(&f.cmd(&["train-ebm", "--threads", "3", "--force"]));
    ok(&f.cmd(&["sample", "--threads", "3", "--force"]));
    assert_eq!(std::fs::read(f.out.join("vaebm.ckpt")).unwrap(), ebm_one);
    assert_eq!(std::fs::read(f.out.join("samples.csv")).unwrap(), one);
}
