use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fnodst::format::{load_checkpoint, load_dataset, read_real};
use fnodst::train::window_at;
use fnodst::Fno;

const TINY: &str = "\
grid.n = 32
data.instances = 4
data.test_instances = 2
data.T = 6
model.dv = 6
model.layers = 2
model.modes_space = 4
model.modes_time = 2
model.tau = 2
model.h = 2
cov.hidden = 8
train.epochs = 2
train.warmup_mse_epochs = 1
train.batch = 2
seed = 3
";

fn fnodst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnodst")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.ini"), config).unwrap();
        Run { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, out: &str) -> Output {
        fnodst(&["simulate", "--config", s(&self.path("run.ini")), "--out", s(&self.path(out))])
    }

    fn train(&self, data: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.path("run.ini");
        let (d, o) = (self.path(data), self.path(out));
        let mut args = vec!["train", "--config", s(&cfg), "--data", s(&d), "--out", s(&o), "--threads", "1"];
        args.extend_from_slice(extra);
        fnodst(&args)
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn simulate_writes_dataset_and_is_reproducible() {
    let r = Run::new(&(TINY.to_string() + "data.gamma_mode = random\ndata.gamma_lo = 0.05\ndata.gamma_hi = 0.7\n"));
    assert_eq!(code(&r.simulate("a")), 0);
    assert_eq!(code(&r.simulate("b")), 0);
    let mut names: Vec<String> = fs::read_dir(r.path("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["dataset.json", "instance_0000.fdst", "instance_0001.fdst", "instance_0002.fdst", "instance_0003.fdst"]
    );
    for n in &names {
        assert_eq!(bytes(&r.path("a").join(n)), bytes(&r.path("b").join(n)), "{n}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&bytes(&r.path("a/dataset.json"))).unwrap();
    let gamma = meta["gamma"].as_array().unwrap();
    assert_eq!(gamma.len(), 4);
    assert!(gamma.iter().all(|g| (0.05..0.7).contains(&g.as_f64().unwrap())));
    assert_eq!(meta["n_instances"], 4);
    assert_eq!(meta["T"], 6);
    assert_eq!(meta["split"]["test"], 2);
}

#[test]
fn two_instances() {
    let r = Run::new(&TINY.replace("data.instances = 4\ndata.test_instances = 2", "data.instances = 2\ndata.test_instances = 1"));
    assert_eq!(code(&r.simulate("d")), 0);
    assert_eq!(fs::read_dir(r.path("d")).unwrap().count(), 3);
}

#[test]
fn invalid_config_values_name_the_key() {
    let cases = [
        ("grid.n = 100", "grid.n"),
        ("grid.n = many", "grid.n"),
        ("train.lr = -1", "train.lr"),
        ("train.lr = 0", "train.lr"),
        ("train.beta1 = 1.0", "train.beta1"),
        ("train.batch = 0", "train.batch"),
        ("model.dv = 3", "model.dv"),
        ("model.modes_space = 40", "model.modes_space"),
        ("model.modes_time = 9", "model.modes_time"),
        ("data.delta = 0", "data.delta"),
        ("data.gamma_mode = sometimes", "data.gamma_mode"),
        ("ic.nu = -2", "ic.nu"),
        ("cov.alpha_r_init = 0", "cov.alpha_r_init"),
        ("data.T = 4", "data.T"),
        ("data.test_instances = 4", "data.test_instances"),
        ("mystery.key = 1", "mystery.key"),
        ("model.h = 2", "model.h"),
    ];
    for (line, key) in cases {
        let r = Run::new(&format!("{TINY}{line}\n"));
        let o = r.simulate("x");
        assert_eq!(code(&o), 2, "{line}: {}", stderr(&o));
        assert!(stderr(&o).contains(key), "{line}: {}", stderr(&o));
    }
}

#[test]
fn train_forecast_evaluate() {
    let r = Run::new(TINY);
    assert_eq!(code(&r.simulate("ds")), 0);
    let o = r.train("ds", "m.ckpt", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let log = fs::read_to_string(r.path("m.ckpt.log.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 2);
    for rec in &recs {
        for key in ["epoch", "step", "nll", "mse", "wallclock_s"] {
            assert!(rec.get(key).is_some(), "missing {key}");
        }
    }
    assert!(recs.last().unwrap()["nll"].as_f64().unwrap().is_finite());

    // Resume: the step counter carries on.
    let o = r.train("ds", "m2.ckpt", &["--checkpoint", s(&r.path("m.ckpt"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = load_checkpoint(&r.path("m.ckpt")).unwrap();
    let second = load_checkpoint(&r.path("m2.ckpt")).unwrap();
    assert!(second.header.step > first.header.step);
    assert_eq!(second.header.epoch, 4);
    let log2 = fs::read_to_string(r.path("m2.ckpt.log.jsonl")).unwrap();
    let steps: Vec<u64> = log2
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert!(steps[0] > first.header.step && steps.windows(2).all(|w| w[0] < w[1]));

    // Forecast.
    let fc = r.path("fc");
    let (ck, ds) = (r.path("m.ckpt"), r.path("ds"));
    let o = fnodst(&["forecast", "--checkpoint", s(&ck), "--data", s(&ds), "--instance", "3", "--k", "4", "--out", s(&fc)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let get = |n: &str| read_real(&fc.join(format!("{n}.fdst"))).unwrap().into_data();
    let (mean, sigma, lower, upper) = (get("mean"), get("sigma"), get("lower"), get("upper"));
    for v in [&mean, &sigma, &lower, &upper] {
        assert_eq!(v.len(), 32);
    }
    for i in 0..32 {
        assert!(lower[i] < mean[i] && mean[i] < upper[i]);
    }
    let summary: serde_json::Value = serde_json::from_slice(&bytes(&fc.join("forecast.json"))).unwrap();
    assert_eq!(summary["target_frame"], 6);
    let loaded = load_checkpoint(&ck).unwrap();
    let data = load_dataset(&ds).unwrap();
    let w = window_at(&data.series[3], 4, 2, 2).unwrap();
    let direct = Fno::new(loaded.header.fno).unwrap().forward(&w, &loaded.theta).unwrap();
    assert_eq!(direct, mean);

    for bad_k in ["2", "5", "0"] {
        let o = fnodst(&["forecast", "--checkpoint", s(&ck), "--data", s(&ds), "--instance", "0", "--k", bad_k, "--out", s(&fc)]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains("3..=4"), "{}", stderr(&o));
    }

    // Evaluate.
    let (rep1, rep2) = (r.path("r1.json"), r.path("r2.json"));
    for rep in [&rep1, &rep2] {
        let o = fnodst(&["evaluate", "--checkpoint", s(&ck), "--data", s(&ds), "--out", s(rep)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("Persistence"));
    }
    assert_eq!(bytes(&rep1), bytes(&rep2));
    let report: serde_json::Value = serde_json::from_slice(&bytes(&rep1)).unwrap();
    let models = report["models"].as_array().unwrap();
    let pers = models.iter().find(|m| m["model"] == "Persistence").unwrap();
    assert!(pers["picp"].is_null() && pers["mpiw"].is_null());
    let fno = models.iter().find(|m| m["model"] == "m").unwrap();
    let picp = fno["picp"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&picp) && fno["mpiw"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["n_instances"], 2);
    assert_eq!(report["n_windows"], 4);
}

#[test]
fn training_mismatch_and_failures() {
    let r = Run::new(TINY);
    assert_eq!(code(&r.simulate("ds")), 0);
    let other = Run::new(&TINY.replace("grid.n = 32", "grid.n = 64"));
    let cfg = other.path("run.ini");
    let (ds, out) = (r.path("ds"), r.path("x.ckpt"));
    let o = fnodst(&["train", "--config", s(&cfg), "--data", s(&ds), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config mismatch"));

    assert_eq!(code(&r.train("missing", "x.ckpt", &[])), 3);

    let wild = Run::new(&format!("{TINY}train.lr = 1e6\n"));
    assert_eq!(code(&wild.simulate("ds")), 0);
    let o = wild.train("ds", "x.ckpt", &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn ide_beats_persistence_on_pure_diffusion() {
    // A tiny-amplitude initial condition makes the advection term negligible.
    let cfg = TINY.replace("grid.n = 32", "grid.n = 64").replace("model.modes_space = 4", "model.modes_space = 4")
        + "ic.variance = 1e-8\nic.lengthscale = 0.2\ndata.gamma_mode = fixed\ndata.gamma_fixed = 0.02\n";
    let r = Run::new(&cfg);
    assert_eq!(code(&r.simulate("ds")), 0);
    assert_eq!(code(&r.train("ds", "m.ckpt", &[])), 0);
    let rep = r.path("rep.json");
    let (ck, ds) = (r.path("m.ckpt"), r.path("ds"));
    let o = fnodst(&["evaluate", "--checkpoint", s(&ck), "--data", s(&ds), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&bytes(&rep)).unwrap();
    let mspe = |name: &str| {
        report["models"].as_array().unwrap().iter().find(|m| m["model"] == name).unwrap()["mspe"].as_f64().unwrap()
    };
    assert!(mspe("IDE") < 0.1 * mspe("Persistence"), "{report}");
}

#[test]
fn selftest_and_fault_injection() {
    let o = fnodst(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = fnodst(&["gradcheck", "--inject-fault", "fno_backward"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("fno_backward"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fno_backward"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&fnodst(&[])), 2);
    assert_eq!(code(&fnodst(&["train"])), 2);
    assert_eq!(code(&fnodst(&["selftest", "--inject-fault", "nothing"])), 2);
}
