//! Measured reference data of the evacuation trials and the comparison of
//! simulated batches against it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::scenario_id;
use crate::error::{Error, Result};
use crate::geometry::ExitType;
use crate::metrics::MetricsRow;
use crate::population::Group;
use crate::sensitivity::DesignPoint;

/// Heterogeneity percent of the HET group.
pub const HET_PERCENT: f64 = 28.0;

/// Runs per scenario expected by default.
pub const DEFAULT_MIN_RUNS: usize = 30;

/// Relative slack around the simulated band.
pub const BAND_SLACK: f64 = 0.1;

pub struct Fixture {
    pub name: &'static str,
    pub text: &'static str,
    pub sha256: &'static str,
}

pub const TRIALS: Fixture = Fixture {
    name: "trials.csv",
    text: include_str!("../data/trials.csv"),
    sha256: "6dfb3cb1dbf21e511490e41a4ca54ba4ea73899dd098b5b7dba6eee76b6a75dc",
};

pub const FLOWS: Fixture = Fixture {
    name: "flows.csv",
    text: include_str!("../data/flows.csv"),
    sha256: "124aed4726e6338ff89f1b300b6ab65ca119d749cfb877991e349879530f2349",
};

pub const EXIT_DELAYS: Fixture = Fixture {
    name: "exit_delays.csv",
    text: include_str!("../data/exit_delays.csv"),
    sha256: "a143e5fa8b8823239b910eb7940b7370c66d8c223ac84b02f9a45a712ebc2cf6",
};

pub const SPEEDS: Fixture = Fixture {
    name: "speeds.csv",
    text: include_str!("../data/speeds.csv"),
    sha256: "77ea76da80df6ef7ad602508bdc5921fcc770a76e2340fb456086287f70c6778",
};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fails unless `text` hashes to `sha256`.
pub fn verify_checksum(name: &str, text: &str, sha256: &str) -> Result<()> {
    let got = sha256_hex(text.as_bytes());
    if got != sha256 {
        return Err(Error::Fixture(format!("{name}: sha256 {got}, expected {sha256}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrial {
    pub id: String,
    pub exit: ExitType,
    pub group: Group,
    pub width_m: f64,
    pub n: usize,
    pub tet_s: f64,
    pub tet46_s: f64,
    pub delay_s: f64,
    pub tet_corr_s: f64,
    pub first_trial: bool,
    #[serde(default)]
    pub note: String,
}

impl ReferenceTrial {
    pub fn heterogeneity(&self) -> f64 {
        match self.group {
            Group::Hom => 0.0,
            Group::Het => HET_PERCENT,
        }
    }

    pub fn scenario(&self) -> String {
        scenario_id(self.exit, self.heterogeneity(), self.width_m)
    }

    pub fn design_point(&self) -> DesignPoint {
        DesignPoint::new(self.width_m, self.heterogeneity(), self.exit.code(), self.tet_corr_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFlow {
    pub exit: ExitType,
    pub group: Group,
    pub width_m: f64,
    pub flow_pps: f64,
    pub flow_ppm: f64,
    pub first_trial: bool,
}

/// Delays of one agent type at the exit drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitDelay {
    pub agent_type: String,
    pub before_s: f64,
    pub after_s: f64,
}

/// Summary of measured travel speeds in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    /// `aisle` or `staircase`.
    pub location: String,
    /// Exit type of the trials, or `any`.
    pub exit: String,
    pub group: Group,
    pub width_m: f64,
    pub mean_mps: f64,
    pub min_mps: f64,
    pub max_mps: f64,
    pub sd_mps: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub trials: Vec<ReferenceTrial>,
    pub flows: Vec<ReferenceFlow>,
    pub exit_delays: Vec<ExitDelay>,
    pub speeds: Vec<SpeedSummary>,
}

fn parse<T: serde::de::DeserializeOwned>(f: &Fixture) -> Result<Vec<T>> {
    verify_checksum(f.name, f.text, f.sha256)?;
    parse_csv(f.name, f.text)
}

/// Parses fixture rows without the checksum test.
pub fn parse_csv<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Fixture(format!("{name}: {e}"))))
        .collect()
}

/// Checksum-verified reference data.
pub fn load_reference() -> Result<Reference> {
    let r = Reference {
        trials: parse(&TRIALS)?,
        flows: parse(&FLOWS)?,
        exit_delays: parse(&EXIT_DELAYS)?,
        speeds: parse(&SPEEDS)?,
    };
    r.check()?;
    Ok(r)
}

impl Reference {
    fn check(&self) -> Result<()> {
        if self.trials.len() != 30 {
            return Err(Error::Fixture(format!("{} trials, expected 30", self.trials.len())));
        }
        for t in &self.trials {
            if (t.tet46_s - t.delay_s - t.tet_corr_s).abs() > 1e-9 {
                return Err(Error::Fixture(format!("trial {}: TET corr inconsistent", t.id)));
            }
        }
        let mut keys: Vec<String> = self.trials.iter().map(|t| t.scenario()).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != self.trials.len() {
            return Err(Error::Fixture("duplicate scenario in trials".into()));
        }
        Ok(())
    }

    pub fn trial(&self, id: &str) -> Option<&ReferenceTrial> {
        self.trials.iter().find(|t| t.id == id)
    }

    pub fn trial_for(&self, exit: ExitType, group: Group, width_m: f64) -> Option<&ReferenceTrial> {
        self.trials
            .iter()
            .find(|t| t.exit == exit && t.group == group && (t.width_m - width_m).abs() < 1e-9)
    }

    pub fn flow_for(&self, exit: ExitType, group: Group, width_m: f64) -> Option<f64> {
        self.flows
            .iter()
            .find(|f| f.exit == exit && f.group == group && (f.width_m - width_m).abs() < 1e-9)
            .map(|f| f.flow_pps)
    }

    /// The trials as sensitivity design points on TET corr.
    pub fn design_points(&self) -> Vec<DesignPoint> {
        self.trials.iter().map(|t| t.design_point()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioValidation {
    pub scenario: String,
    pub trial_id: String,
    pub experimental: f64,
    pub band_min: f64,
    pub band_max: f64,
    pub sim_mean: f64,
    pub runs: usize,
    pub contained: bool,
    /// `(sim_mean - experimental) / experimental`.
    pub rel_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenarios: Vec<ScenarioValidation>,
    pub contained: usize,
    pub rate: f64,
}

/// True iff `exp` lies in `[0.9 min, 1.1 max]`.
pub fn band_contains(exp: f64, min: f64, max: f64) -> bool {
    exp >= (1.0 - BAND_SLACK) * min && exp <= (1.0 + BAND_SLACK) * max
}

/// Compares the TET corr of every simulated run with the reference trial of
/// its scenario. Every reference scenario needs at least `min_runs` runs.
pub fn validate_batch(rows: &[MetricsRow], reference: &Reference, min_runs: usize) -> Result<ValidationReport> {
    if rows.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.scenario.as_str()).or_default().push(r.tet_corr);
    }
    let mut missing = Vec::new();
    let mut scenarios = Vec::new();
    for t in &reference.trials {
        let key = t.scenario();
        match by.get(key.as_str()) {
            Some(v) if v.len() >= min_runs.max(1) => {
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                scenarios.push(ScenarioValidation {
                    scenario: key,
                    trial_id: t.id.clone(),
                    experimental: t.tet_corr_s,
                    band_min: min,
                    band_max: max,
                    sim_mean: mean,
                    runs: v.len(),
                    contained: band_contains(t.tet_corr_s, min, max),
                    rel_deviation: (mean - t.tet_corr_s) / t.tet_corr_s,
                });
            }
            Some(v) => missing.push(format!("{key} ({} of {min_runs} runs)", v.len())),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScenarios(missing));
    }
    let contained = scenarios.iter().filter(|s| s.contained).count();
    Ok(ValidationReport {
        rate: contained as f64 / scenarios.len() as f64,
        contained,
        scenarios,
    })
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>5} {:>8} {:>8} {:>8} {:>8} {:>7}  in",
            "scenario", "trial", "exp", "min", "mean", "max", "dev%"
        )?;
        for s in &self.scenarios {
            writeln!(
                f,
                "{:<22} {:>5} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>7.1}  {}",
                s.scenario,
                s.trial_id,
                s.experimental,
                s.band_min,
                s.sim_mean,
                s.band_max,
                100.0 * s.rel_deviation,
                if s.contained { "yes" } else { "no" }
            )?;
        }
        write!(
            f,
            "contained {}/{} ({:.1}%)",
            self.contained,
            self.scenarios.len(),
            100.0 * self.rate
        )
    }
}
