use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fnodst::burgers::generate_dataset;
use fnodst::config::RunConfig;
use fnodst::eval::{evaluate, stack_forecasts, FnoModel, Forecaster, Origins};
use fnodst::format::{
    load_checkpoint, load_checkpoint_for, load_dataset, load_dataset_meta, save_checkpoint, save_dataset, write_atomic,
    write_real, Checkpoint,
};
use fnodst::likelihood::{forecast_distribution, prediction_interval};
use fnodst::selftest::{self, Fault, Suite};
use fnodst::train::{make_windows, train_windows, window_at, TrainConfig, TrainState};
use fnodst::{Error, Fno, RealTensor};

#[derive(Parser)]
#[command(name = "fnodst", version, about = "Simulate, train and evaluate FNO spatio-temporal forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the sequential path
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Burgers dataset
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write; the log goes next to it
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast one window of one instance
    Forecast {
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Zero-based instance index
        #[arg(long)]
        instance: usize,
        /// One-based index of the newest conditioning frame
        #[arg(long)]
        k: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Compare checkpoints, persistence and the IDE on the test split
    Evaluate {
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Report path (JSON)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Forecast origins: `all` shared ones or only the `last`
        #[arg(long, default_value = "all")]
        origins: String,
        /// Leave out the IDE baseline
        #[arg(long)]
        no_ide: bool,
        /// Directory for per-point squared errors
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Gradient checks only
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Run all built-in numerical checks
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_divergence() => 4,
            Error::Io { .. } | Error::Format { .. } => 3,
            _ => 2,
        };
        Fail(code, e.to_string())
    }
}

type Res<T> = Result<T, Fail>;

fn usage(msg: impl Into<String>) -> Fail {
    Fail(2, msg.into())
}

fn set_threads(n: Option<usize>) -> Res<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot set up {n} threads: {e}")))?;
    }
    Ok(())
}

fn load_config(c: &Common) -> Res<RunConfig> {
    set_threads(c.threads)?;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn write_json(path: &Path, v: &impl Serialize) -> Res<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
    Ok(write_atomic(path, text.as_bytes())?)
}

fn simulate(common: &Common, out: &Path) -> Res<()> {
    let cfg = load_config(common)?;
    let ds = generate_dataset(&cfg.data, cfg.instances, cfg.test_instances, cfg.seed)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} instances ({} train, {} test) to {}",
        ds.series.len(),
        ds.split.train,
        ds.split.test,
        out.display()
    );
    Ok(())
}

fn log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log.jsonl");
    PathBuf::from(p)
}

fn train(common: &Common, data: &Path, out: &Path, resume: Option<&Path>) -> Res<()> {
    let cfg = load_config(common)?;
    let meta = load_dataset_meta(data)?;
    if meta.n != cfg.data.n || meta.t != cfg.data.t_model || meta.delta != cfg.data.delta {
        return Err(Error::ConfigMismatch(format!(
            "dataset has n = {}, T = {}, delta = {}; config has n = {}, T = {}, delta = {}",
            meta.n, meta.t, meta.delta, cfg.data.n, cfg.data.t_model, cfg.data.delta
        ))
        .into());
    }
    let ds = load_dataset(data)?;
    let windows = make_windows(ds.train(), cfg.model.tau, cfg.model.h)?;
    let state = match resume {
        Some(p) => {
            let ck = load_checkpoint_for(p, &cfg.model)?;
            if ck.header.cov != cfg.cov {
                return Err(Error::ConfigMismatch("checkpoint error model differs from cov.* settings".into()).into());
            }
            ck.state
        }
        None => TrainState::new(&cfg.model, &cfg.cov, cfg.train.seed)?,
    };
    let start = state.step;
    // train.epochs counts epochs of this run, on top of any resumed ones.
    let tcfg = TrainConfig { epochs: state.epoch + cfg.train.epochs, ..cfg.train };
    let outcome = train_windows(&windows, &cfg.model, &tcfg, state)?;
    let ck = Checkpoint::new(cfg.model, cfg.cov, cfg.train, outcome.theta, outcome.alpha, outcome.state);
    save_checkpoint(&ck, out)?;
    write_atomic(&log_path(out), outcome.log.to_json_lines().as_bytes())?;
    let last = outcome.log.records.last();
    println!(
        "trained {} windows, steps {} -> {}, final nll {}, checkpoint {}",
        windows.len(),
        start,
        ck.state.step,
        last.map_or("-".into(), |r| format!("{:.6}", r.nll)),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ForecastSummary {
    instance: usize,
    k: usize,
    target_frame: usize,
    level: f64,
    n: usize,
    mspe: f64,
    coverage: f64,
    mean_width: f64,
}

#[allow(clippy::too_many_arguments)]
fn forecast(ckpt: &Path, data: &Path, instance: usize, k: usize, out: &Path, level: f64) -> Res<()> {
    let ck = load_checkpoint(ckpt)?;
    let ds = load_dataset(data)?;
    let cfg = ck.header.fno;
    let s = ds
        .series
        .get(instance)
        .ok_or_else(|| usage(format!("--instance {instance} out of range 0..{}", ds.series.len())))?;
    let t = s.t_len();
    if s.n != cfg.n {
        return Err(Error::ConfigMismatch(format!("dataset grid {} vs model grid {}", s.n, cfg.n)).into());
    }
    if k < cfg.tau + 1 || k + cfg.h > t {
        return Err(usage(format!(
            "--k {k} out of range: valid k is {}..={} (tau = {}, h = {}, T = {t})",
            cfg.tau + 1,
            t.saturating_sub(cfg.h),
            cfg.tau,
            cfg.h
        )));
    }
    let net = Fno::new(cfg)?;
    let w = window_at(s, k, cfg.tau, cfg.h)?;
    let dist = forecast_distribution(&net, &w, &ck.theta, &ck.alpha, false)?;
    let (lower, upper) = prediction_interval(&dist, level)?;
    std::fs::create_dir_all(out).map_err(|e| Fail::from(Error::Io { path: out.into(), source: e }))?;
    let n = cfg.n;
    for (name, v) in [("mean", &dist.mean), ("sigma", &dist.sigma), ("lower", &lower), ("upper", &upper)] {
        write_real(&out.join(format!("{name}.fdst")), &RealTensor::new(vec![n], v.clone())?)?;
    }
    let truth = w.target.as_deref().expect("window_at sets the target");
    let summary = ForecastSummary {
        instance,
        k,
        target_frame: k + cfg.h,
        level,
        n,
        mspe: fnodst::eval::mspe(truth, &dist.mean)?,
        coverage: fnodst::eval::picp(truth, &lower, &upper)?,
        mean_width: fnodst::eval::mpiw(&lower, &upper)?,
    };
    write_json(&out.join("forecast.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    ckpts: &[PathBuf],
    data: &Path,
    out: Option<&Path>,
    level: f64,
    origins: &str,
    no_ide: bool,
    errors: Option<&Path>,
) -> Res<()> {
    let which = match origins {
        "all" => Origins::All,
        "last" => Origins::Last,
        o => return Err(usage(format!("--origins {o:?} is not one of all, last"))),
    };
    let ds = load_dataset(data)?;
    if ds.split.test == 0 {
        return Err(usage(format!("dataset {} has no test split", data.display())));
    }
    let mut models = Vec::new();
    for p in ckpts {
        let ck = load_checkpoint(p)?;
        let name = p.file_stem().map_or("FNO-DST".into(), |s| s.to_string_lossy().into_owned());
        models.push(Forecaster::Fno(Box::new(FnoModel {
            name,
            net: Fno::new(ck.header.fno)?,
            theta: ck.theta,
            alpha: ck.alpha,
        })));
    }
    models.push(Forecaster::Persistence);
    if !no_ide {
        models.push(Forecaster::Ide);
    }
    let h = match &models[0] {
        Forecaster::Fno(m) => m.net.config().h,
        _ => unreachable!("checkpoints come first"),
    };
    if models.iter().any(|m| matches!(m, Forecaster::Fno(f) if f.net.config().h != h)) {
        return Err(usage("all checkpoints must share the horizon h"));
    }
    let report = evaluate(&models, ds.test(), h, which, level)?;
    let path = out.map_or_else(|| data.join("report.json"), Path::to_path_buf);
    write_json(&path, &report)?;
    if let Some(dir) = errors {
        std::fs::create_dir_all(dir).map_err(|e| Fail::from(Error::Io { path: dir.into(), source: e }))?;
        for m in &models {
            let st = stack_forecasts(m, ds.test(), &report.origins, h, level)?;
            let sq: Vec<f64> = st.truth.iter().zip(&st.mean).map(|(a, b)| (a - b) * (a - b)).collect();
            let t = RealTensor::new(vec![report.n_windows, report.n], sq)?;
            write_real(&dir.join(format!("errors_{}.fdst", m.name())), &t)?;
        }
    }
    print!("{}", report.to_table());
    Ok(())
}

fn selftest_cmd(suites: &[Suite], fault: Option<Fault>) -> Res<()> {
    let results = selftest::run(suites, fault);
    print!("{}", selftest::table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Fail(1, format!("failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Simulate { common, out } => simulate(&common, &out),
        Command::Train { common, data, out, checkpoint } => train(&common, &data, &out, checkpoint.as_deref()),
        Command::Forecast { threads, checkpoint, data, instance, k, out, level } => {
            set_threads(threads)?;
            forecast(&checkpoint, &data, instance, k, &out, level)
        }
        Command::Evaluate { threads, checkpoint, data, out, level, origins, no_ide, errors } => {
            set_threads(threads)?;
            evaluate_cmd(&checkpoint, &data, out.as_deref(), level, &origins, no_ide, errors.as_deref())
        }
        Command::Gradcheck { inject_fault } => selftest_cmd(&[Suite::Gradcheck], inject_fault),
        Command::Selftest { inject_fault } => selftest_cmd(&Suite::ALL, inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
