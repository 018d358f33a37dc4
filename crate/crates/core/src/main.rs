use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use railevac::campaign::{analyze_dir, design_points, simulate_to_dir, CampaignConfig, Preset};
use railevac::engine::TuningConfig;
use railevac::geometry::ExitType;
use railevac::metrics::{read_metrics_csv, write_metrics_csv, FlowCount, MetricsRow};
use railevac::population::REFERENCE_GROUP_SIZE;
use railevac::refdata::{load_reference, validate_batch, DEFAULT_MIN_RUNS};
use railevac::sensitivity::{analyze, exit_label, read_design_csv, write_design_csv, Var};
use railevac::{Error, Result};

pub const OUT_ENV: &str = "RAILEVAC_OUT";

#[derive(Parser)]
#[command(name = "railevac", version, about = "Railcar evacuation campaigns and sensitivity analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo campaign and write one log per run.
    Simulate(SimulateArgs),
    /// Extract metrics from a directory of run logs.
    Analyze(AnalyzeArgs),
    /// Fit the polynomial meta-model and report CoP tables.
    Sensitivity(SensitivityArgs),
    /// Compare a campaign with the measured trials.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// JSON file with the same keys as the flags (and optionally `tuning`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    het: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    exits: Option<Vec<ExitType>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Defaults to $RAILEVAC_OUT, then `railevac-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<Preset>,
    widths: Option<Vec<f64>>,
    het: Option<Vec<f64>>,
    exits: Option<Vec<ExitType>>,
    runs: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    dt: Option<f64>,
    out: Option<PathBuf>,
    tuning: Option<TuningConfig>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Campaign directory (or any directory of log files).
    dir: PathBuf,
    /// Metrics CSV; defaults to `<dir>/metrics.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "headways")]
    flow_count: FlowArg,
    #[arg(long, default_value_t = REFERENCE_GROUP_SIZE)]
    target_n: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowArg {
    Headways,
    Persons,
}

#[derive(Args)]
struct SensitivityArgs {
    /// CSV with columns W_m,H_pct,E_code,TET_s. Not needed for `experiment`.
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "basic")]
    mode: Preset,
    /// Report directory; defaults to the input's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Campaign directory, or a metrics CSV.
    path: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_RUNS)]
    min_runs: usize,
    /// Report file; defaults to `validation.json` next to the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("railevac-out"))
}

/// Preset, then config file, then flags.
fn campaign_config(a: &SimulateArgs) -> Result<(CampaignConfig, PathBuf)> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let preset = a.preset.or(file.preset).unwrap_or(Preset::Basic);
    let mut c = CampaignConfig::preset(preset);
    if let Some(t) = file.tuning {
        c.dt = t.dt;
        c.tuning = t;
    }
    macro_rules! layer {
        ($($f:ident),*) => {$(
            if let Some(v) = file.$f.clone() { c.$f = v; }
            if let Some(v) = a.$f.clone() { c.$f = v; }
        )*};
    }
    layer!(widths, het, exits, runs, n, seed, dt);
    let out = a.out.clone().or(file.out).unwrap_or_else(default_out);
    c.validate()?;
    Ok((c, out))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (cfg, out) = campaign_config(&a)?;
    let scenarios = cfg.scenarios().len();
    info!("{scenarios} scenarios x {} runs into {}", cfg.runs, out.display());
    let t0 = std::time::Instant::now();
    let s = simulate_to_dir(&cfg, &out)?;
    println!(
        "{} logs written, {} already complete, {:.1} s -> {}",
        s.written,
        s.skipped,
        t0.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns whether every log was readable.
fn analyze_cmd(a: AnalyzeArgs) -> Result<bool> {
    let count = match a.flow_count {
        FlowArg::Headways => FlowCount::Headways,
        FlowArg::Persons => FlowCount::Persons,
    };
    let res = analyze_dir(&a.dir, a.target_n, count)?;
    for (p, e) in &res.failures {
        warn!("skipping {}: {e}", p.display());
    }
    if res.rows.is_empty() {
        return Err(Error::Validation(format!("no readable logs under {}", a.dir.display())));
    }
    let metrics = a.out.unwrap_or_else(|| a.dir.join("metrics.csv"));
    let base = metrics.parent().map(Path::to_path_buf).unwrap_or_default();
    write_file(&metrics, |b| write_metrics_csv(&res.rows, b))?;
    let points = design_points(&res.rows)?;
    write_file(&base.join("design.csv"), |b| write_design_csv(&points, b))?;
    write_file(&base.join("curves.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["scenario", "seed", "rank", "time_s"])?;
        for (c, seed) in &res.curves {
            c.to_long_csv(*seed, &mut w)?;
        }
        w.flush().map_err(|e| Error::io("curves.csv", e))
    })?;
    println!(
        "{} rows -> {} ({} logs skipped)",
        res.rows.len(),
        metrics.display(),
        res.failures.len()
    );
    Ok(res.failures.is_empty())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("--".into(), |x| format!("{:.1}", 100.0 * x))
}

fn sensitivity_cmd(a: SensitivityArgs) -> Result<()> {
    let (points, base) = match (&a.input, a.mode) {
        (Some(p), _) => {
            let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            (read_design_csv(f)?, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        (None, Preset::Experiment) => (load_reference()?.design_points(), PathBuf::from(".")),
        (None, _) => return Err(Error::Config("an input CSV is required for simulated data".into())),
    };
    let mode = match a.mode {
        Preset::Basic => "basic",
        Preset::Fine => "fine",
        Preset::Experiment => "experiment",
    };
    let report = analyze(&points, mode)?;
    let out = a.out.unwrap_or(base);
    write_file(&out.join("sensitivity.json"), |b| {
        serde_json::to_writer_pretty(b, &report).map_err(Error::from)
    })?;
    write_file(&out.join("cop.csv"), |b| report.write_cop_csv(b))?;
    write_file(&out.join("coefficients.csv"), |b| report.write_coefficients_csv(b))?;
    println!("{:<14} {:>6} {:>8} {:>8} {:>8}", "(%)", "CoP", "CoP(W)", "CoP(H)", "CoP(E)");
    let cell = |m: &railevac::sensitivity::PolyModel, v: Var| {
        if m.excluded.contains(&v) {
            "excluded".to_string()
        } else {
            pct(m.cop_of(v))
        }
    };
    let a = &report.all;
    println!(
        "{:<14} {:>6.1} {:>8} {:>8} {:>8}",
        "all",
        100.0 * a.cop,
        cell(a, Var::W),
        cell(a, Var::H),
        cell(a, Var::E)
    );
    for (e, m) in &report.per_exit {
        println!(
            "{:<14} {:>6.1} {:>8} {:>8} {:>8}",
            format!("{} E={e}", exit_label(*e)),
            100.0 * m.cop,
            cell(m, Var::W),
            cell(m, Var::H),
            "--"
        );
    }
    let coef: Vec<String> = a
        .alpha
        .iter()
        .map(|c| c.map_or("-".into(), |c| format!("{c:.2}")))
        .collect();
    println!("alpha: {}  R2 {:.3}", coef.join(" "), a.r2);
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let (rows, base): (Vec<MetricsRow>, PathBuf) = if a.path.is_file() {
        let f = fs::File::open(&a.path).map_err(|e| Error::io(&a.path, e))?;
        (read_metrics_csv(f)?, a.path.parent().map(Path::to_path_buf).unwrap_or_default())
    } else {
        let res = analyze_dir(&a.path, REFERENCE_GROUP_SIZE, FlowCount::default())?;
        for (p, e) in &res.failures {
            warn!("skipping {}: {e}", p.display());
        }
        (res.rows, a.path.clone())
    };
    let report = validate_batch(&rows, &load_reference()?, a.min_runs)?;
    let out = a.out.unwrap_or_else(|| base.join("validation.json"));
    write_file(&out, |b| serde_json::to_writer_pretty(b, &report).map_err(Error::from))?;
    println!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a).map(|_| true),
        Cmd::Analyze(a) => analyze_cmd(a),
        Cmd::Sensitivity(a) => sensitivity_cmd(a).map(|_| true),
        Cmd::Validate(a) => validate_cmd(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
