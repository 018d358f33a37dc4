//! Monte Carlo campaigns over a grid of scenarios, per-run log files and the
//! campaign manifest.
//!
//! Seeds: the crowd of run `r` is built from `derive_seed(master, TAG_RUN, r)`
//! in every scenario, so the same people are drawn for a run index across
//! the grid; the engine stream of that run is
//! `derive_seed(scenario_seed, TAG_RUN, r)` with
//! `scenario_seed = derive_seed(master, TAG_SCENARIO, fnv1a(scenario_id))`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{scenario_id, EgressEvent, EgressLog, RunOptions, Simulator, TuningConfig};
use crate::error::{Error, Result};
use crate::geometry::{build_railcar, ExitType};
use crate::metrics::{FlowCount, MetricsRow, OccupantCurve};
use crate::population::{build_crowd, SeatPlan, REFERENCE_GROUP_SIZE};
use crate::refdata::HET_PERCENT;
use crate::rng::{derive_seed, TAG_RUN, TAG_SCENARIO};
use crate::sensitivity::DesignPoint;

pub const MANIFEST_SCHEMA: &str = "railevac.manifest/v1";
pub const LOG_SCHEMA: &str = "railevac.log/v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const BASIC_WIDTHS: [f64; 5] = [0.65, 0.75, 0.90, 1.10, 1.34];
pub const FINE_WIDTHS: [f64; 9] = [0.65, 0.75, 0.85, 0.90, 0.95, 1.00, 1.10, 1.20, 1.34];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Basic,
    Fine,
    /// The measured trial grid with the measured group sizes (42 HOM, 46 HET).
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub widths: Vec<f64>,
    /// Percent of agents with limitations.
    pub het: Vec<f64>,
    pub exits: Vec<ExitType>,
    pub runs: usize,
    pub n: usize,
    /// HOM scenarios use 42 agents, HET scenarios 46.
    pub trial_sizes: bool,
    pub seed: u64,
    pub dt: f64,
    pub tuning: TuningConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self::preset(Preset::Basic)
    }
}

impl CampaignConfig {
    pub fn preset(p: Preset) -> Self {
        let (widths, het): (Vec<f64>, Vec<f64>) = match p {
            Preset::Basic | Preset::Experiment => (BASIC_WIDTHS.to_vec(), vec![0.0, HET_PERCENT]),
            Preset::Fine => (FINE_WIDTHS.to_vec(), vec![0.0, 15.0, HET_PERCENT, 56.0]),
        };
        let tuning = TuningConfig::default();
        CampaignConfig {
            widths,
            het,
            exits: ExitType::ALL.to_vec(),
            runs: 30,
            n: REFERENCE_GROUP_SIZE,
            trial_sizes: p == Preset::Experiment,
            seed: 2024,
            dt: tuning.dt,
            tuning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.widths.is_empty() || self.het.is_empty() || self.exits.is_empty() {
            return Err(Error::Config("empty scenario grid".into()));
        }
        if let Some(w) = self.widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!("exit width must be positive, got {w}")));
        }
        if let Some(h) = self.het.iter().find(|h| !(0.0..=100.0).contains(*h)) {
            return Err(Error::Config(format!("heterogeneity must be in [0, 100] %, got {h}")));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        self.tuning().validate()
    }

    /// Tuning with the campaign time step.
    pub fn tuning(&self) -> TuningConfig {
        self.tuning.clone().with_dt(self.dt)
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &exit in &self.exits {
            for &h in &self.het {
                for &w in &self.widths {
                    let n = if self.trial_sizes && h == 0.0 { 42 } else { self.n };
                    out.push(Scenario { exit, het: h, width: w, n });
                }
            }
        }
        out
    }

    /// Hash over geometry, crowds, tuning, seeds and code version. The run
    /// count is left out so a campaign can be extended in place.
    pub fn hash(&self) -> Result<String> {
        let plan = SeatPlan::experimental();
        let mut keyed = self.clone();
        keyed.runs = 0;
        let mut parts = vec![CODE_VERSION.to_string(), serde_json::to_string(&keyed)?];
        let mut widths = self.widths.clone();
        widths.sort_by(f64::total_cmp);
        widths.dedup();
        for &e in &self.exits {
            for &w in &widths {
                parts.push(build_railcar(w, e)?.to_json()?);
            }
        }
        for s in self.scenarios() {
            parts.push(build_crowd(s.n, s.het, &plan, self.crowd_seed(0))?.to_json()?);
        }
        Ok(crate::refdata::sha256_hex(parts.join("\n").as_bytes()))
    }

    pub fn crowd_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, TAG_RUN, run as u64)
    }

    pub fn run_seed(&self, s: &Scenario, run: usize) -> u64 {
        derive_seed(derive_seed(self.seed, TAG_SCENARIO, fnv1a(&s.id())), TAG_RUN, run as u64)
    }
}

pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub exit: ExitType,
    pub het: f64,
    pub width: f64,
    pub n: usize,
}

impl Scenario {
    pub fn id(&self) -> String {
        scenario_id(self.exit, self.het, self.width)
    }
}

/// Inverse of [`scenario_id`]: `jump_H28_W0.65` -> (Jump, 28, 0.65).
pub fn parse_scenario_id(id: &str) -> Result<(ExitType, f64, f64)> {
    let bad = || Error::Schema(format!("malformed scenario id '{id}'"));
    let mut it = id.split('_');
    let exit: ExitType = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let h = it.next().and_then(|s| s.strip_prefix('H')).ok_or_else(bad)?;
    let w = it.next().and_then(|s| s.strip_prefix('W')).ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((exit, h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
}

/// One simulated run of a scenario.
pub fn run_one(cfg: &CampaignConfig, sim: &Simulator, s: &Scenario, run: usize) -> Result<EgressLog> {
    let crowd = build_crowd(s.n, s.het, &SeatPlan::experimental(), cfg.crowd_seed(run))?;
    sim.run(&crowd, cfg.run_seed(s, run), RunOptions::default())
}

/// Runs the whole grid in memory, logs ordered by scenario then run.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<(Scenario, usize, EgressLog)>> {
    cfg.validate()?;
    let tuning = cfg.tuning();
    cfg.scenarios()
        .par_iter()
        .map(|s| -> Result<Vec<_>> {
            let g = build_railcar(s.width, s.exit)?;
            let sim = Simulator::new(&g, tuning.clone())?;
            (0..cfg.runs)
                .into_par_iter()
                .map(|r| run_one(cfg, &sim, s, r).map(|log| (*s, r, log)))
                .collect()
        })
        .collect::<Result<Vec<Vec<_>>>>()
        .map(|v| v.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub campaign_hash: String,
    pub scenario: String,
    pub run: usize,
    pub seed: u64,
    pub n: usize,
    pub dt: f64,
    pub steps: u64,
    pub max_gate_occupancy: usize,
}

/// One per-run file: a `# {json header}` line followed by the event CSV.
pub fn write_log_file(path: &Path, header: &LogHeader, log: &EgressLog) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = format!("# {}\n{}", serde_json::to_string(header)?, log.to_csv()?);
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_log_file(path: &Path) -> Result<(LogHeader, Vec<EgressEvent>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log_text(&text).map_err(|e| {
        let msg = match e {
            Error::Schema(m) => m,
            other => other.to_string(),
        };
        Error::Schema(format!("{}: {msg}", path.display()))
    })
}

pub fn parse_log_text(text: &str) -> Result<(LogHeader, Vec<EgressEvent>)> {
    let (first, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Schema("missing log header".into()))?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Schema("missing log header".into()))?;
    let header: LogHeader = serde_json::from_str(json)?;
    if header.schema != LOG_SCHEMA {
        return Err(Error::Schema(format!("log schema {}", header.schema)));
    }
    let events = EgressLog::events_from_csv(body)?;
    if events.len() != header.n {
        return Err(Error::Schema(format!("{} events for {} agents", events.len(), header.n)));
    }
    if events.iter().any(|e| !e.time.is_finite()) || events.windows(2).any(|w| w[0].time > w[1].time) {
        return Err(Error::Schema("egress times not sorted".into()));
    }
    Ok((header, events))
}

pub fn log_path(out: &Path, scenario: &str, run: usize) -> PathBuf {
    out.join("logs").join(scenario).join(format!("run_{run:03}.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scenario: String,
    pub run: usize,
    pub seed: u64,
    /// Relative to the output directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub code_version: String,
    pub hash: String,
    pub config: CampaignConfig,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Option<Manifest>> {
        let p = out.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimulateSummary {
    pub written: usize,
    pub skipped: usize,
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::refdata::sha256_hex(&bytes))
}

/// Completed runs of an earlier invocation with the same hash: listed in
/// its manifest with a matching checksum, or a readable log file whose
/// header carries the hash.
fn is_complete(path: &Path, hash: &str, listed: Option<&ManifestEntry>) -> bool {
    if let Some(e) = listed {
        return file_sha(path).is_ok_and(|s| s == e.sha256);
    }
    read_log_file(path).is_ok_and(|(h, _)| h.campaign_hash == hash)
}

/// Writes one CSV per run and the manifest. Runs already completed under
/// the same campaign hash are skipped.
pub fn simulate_to_dir(cfg: &CampaignConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash()?;
    let previous = Manifest::load(out).ok().flatten().filter(|m| m.hash == hash);
    let listed: BTreeMap<(String, usize), ManifestEntry> = previous
        .map(|m| m.runs.into_iter().map(|e| ((e.scenario.clone(), e.run), e)).collect())
        .unwrap_or_default();
    let tuning = cfg.tuning();
    let results: Vec<Vec<(ManifestEntry, bool)>> = cfg
        .scenarios()
        .par_iter()
        .map(|s| -> Result<Vec<_>> {
            let id = s.id();
            let todo: Vec<usize> = (0..cfg.runs)
                .filter(|&r| !is_complete(&log_path(out, &id, r), &hash, listed.get(&(id.clone(), r))))
                .collect();
            let g = if todo.is_empty() {
                None
            } else {
                Some(build_railcar(s.width, s.exit)?)
            };
            let sim = g.as_ref().map(|g| Simulator::new(g, tuning.clone())).transpose()?;
            (0..cfg.runs)
                .into_par_iter()
                .map(|r| {
                    let path = log_path(out, &id, r);
                    let fresh = todo.contains(&r);
                    if fresh {
                        let log = run_one(cfg, sim.as_ref().expect("simulator"), s, r)?;
                        let header = LogHeader {
                            schema: LOG_SCHEMA.into(),
                            campaign_hash: hash.clone(),
                            scenario: id.clone(),
                            run: r,
                            seed: log.seed,
                            n: s.n,
                            dt: log.dt,
                            steps: log.steps,
                            max_gate_occupancy: log.max_gate_occupancy,
                        };
                        write_log_file(&path, &header, &log)?;
                    }
                    let rel = path.strip_prefix(out).unwrap_or(&path).to_string_lossy().into_owned();
                    Ok((
                        ManifestEntry {
                            scenario: id.clone(),
                            run: r,
                            seed: cfg.run_seed(s, r),
                            file: rel,
                            sha256: file_sha(&path)?,
                        },
                        fresh,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut summary = SimulateSummary::default();
    let mut runs = Vec::new();
    for (e, fresh) in results.into_iter().flatten() {
        if fresh {
            summary.written += 1;
        } else {
            summary.skipped += 1;
        }
        runs.push(e);
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        code_version: CODE_VERSION.into(),
        hash,
        config: cfg.clone(),
        runs,
    };
    let p = out.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}

/// Metrics of every readable log under `dir`, in path order; unreadable
/// logs are returned separately.
pub struct Analysis {
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<(OccupantCurve, u64)>,
    pub failures: Vec<(PathBuf, Error)>,
}

fn collect_logs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_logs(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

/// Log files under `dir` (recursively), sorted.
pub fn find_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let root = if dir.join("logs").is_dir() { dir.join("logs") } else { dir.to_path_buf() };
    let mut v = Vec::new();
    collect_logs(&root, &mut v)?;
    v.sort();
    Ok(v)
}

pub fn analyze_dir(dir: &Path, target_n: usize, count: FlowCount) -> Result<Analysis> {
    let files = find_logs(dir)?;
    let mut a = Analysis {
        rows: Vec::new(),
        curves: Vec::new(),
        failures: Vec::new(),
    };
    for f in files {
        let parsed = read_log_file(&f).and_then(|(h, ev)| {
            let log = EgressLog {
                scenario: h.scenario.clone(),
                seed: h.seed,
                dt: h.dt,
                events: ev,
                trajectories: Vec::new(),
                steps: h.steps,
                max_gate_occupancy: h.max_gate_occupancy,
                wall_clock_s: 0.0,
            };
            let row = MetricsRow::from_log(&log, target_n, count)?;
            Ok((row, OccupantCurve::from_log(&log)?, h.seed))
        });
        match parsed {
            Ok((row, curve, seed)) => {
                a.rows.push(row);
                a.curves.push((curve, seed));
            }
            Err(e) => a.failures.push((f, e)),
        }
    }
    Ok(a)
}

/// Design points (W, H, E, TET corr) of metrics rows.
pub fn design_points(rows: &[MetricsRow]) -> Result<Vec<DesignPoint>> {
    rows.iter()
        .map(|r| {
            let (e, h, w) = parse_scenario_id(&r.scenario)?;
            Ok(DesignPoint::new(w, h, e.code(), r.tet_corr))
        })
        .collect()
}
