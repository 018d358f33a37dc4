//! Observables of egress logs: total evacuation time, its extrapolation to a
//! 46-person group, delay correction, exit flow and checkpoint speeds.

use serde::{Deserialize, Serialize};

use crate::engine::{AgentTrajectory, EgressLog};
use crate::error::{Error, Result};
use crate::geometry::Segment;

/// Points used by the tail extrapolation.
pub const EXTRAPOLATION_WINDOW: usize = 7;

/// Ordered egress times of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupantCurve {
    pub scenario: String,
    pub times: Vec<f64>,
}

impl OccupantCurve {
    /// Sorts `times`; rejects non-finite values.
    pub fn new(scenario: impl Into<String>, mut times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Metric("non-finite egress time".into()));
        }
        times.sort_by(f64::total_cmp);
        Ok(OccupantCurve {
            scenario: scenario.into(),
            times,
        })
    }

    pub fn from_log(log: &EgressLog) -> Result<Self> {
        Self::new(log.scenario.clone(), log.egress_times())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn tet(&self) -> Result<f64> {
        tet(&self.times)
    }

    /// Number of agents out by time `t`.
    pub fn count_at(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x <= t)
    }

    /// Long-format rows `scenario,seed,rank,time_s`.
    pub fn to_long_csv(&self, seed: u64, w: &mut csv::Writer<impl std::io::Write>) -> Result<()> {
        for (k, t) in self.times.iter().enumerate() {
            w.write_record([
                self.scenario.clone(),
                seed.to_string(),
                (k + 1).to_string(),
                t.to_string(),
            ])?;
        }
        Ok(())
    }
}

/// Time of the last egress.
pub fn tet(times: &[f64]) -> Result<f64> {
    times
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
        .ok_or_else(|| Error::Metric("empty occupant curve".into()))
}

/// Least-squares line through the last seven points `(i, t_i)` (1-based
/// ranks), evaluated at rank `target_n`.
pub fn extrapolate_to(times: &[f64], target_n: usize) -> Result<f64> {
    let n = times.len();
    if n < EXTRAPOLATION_WINDOW {
        return Err(Error::Metric(format!(
            "extrapolation needs at least {EXTRAPOLATION_WINDOW} egress times, got {n}"
        )));
    }
    if target_n < n {
        return Err(Error::Metric(format!("target {target_n} below log size {n}")));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = &sorted[n - EXTRAPOLATION_WINDOW..];
    let xs: Vec<f64> = (n - EXTRAPOLATION_WINDOW + 1..=n).map(|i| i as f64).collect();
    let k = EXTRAPOLATION_WINDOW as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = tail.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(tail).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(my + slope * (target_n as f64 - mx))
}

pub fn apply_delay_correction(tet_46: f64, delay: f64) -> Result<f64> {
    if !(delay >= 0.0) {
        return Err(Error::Metric(format!("negative incident delay {delay}")));
    }
    Ok(tet_46 - delay)
}

/// Numerator of the mean exit flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCount {
    /// Headways between first and last: `(N - 1) / (t_N - t_1)`.
    #[default]
    Headways,
    /// `N / (t_N - t_1)`.
    Persons,
}

/// Persons per second between the first and the last egress.
pub fn mean_exit_flow(times: &[f64], count: FlowCount) -> Result<f64> {
    let n = times.len();
    if n < 2 {
        return Err(Error::Metric("flow needs at least two egress times".into()));
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::Metric("first and last egress coincide".into()));
    }
    let num = match count {
        FlowCount::Headways => n - 1,
        FlowCount::Persons => n,
    };
    Ok(num as f64 / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TetRecord {
    pub tet: f64,
    pub tet_46: f64,
    pub delay: f64,
    pub tet_corr: f64,
}

/// Full TET chain; logs smaller than `target_n` are extrapolated.
pub fn tet_record(times: &[f64], target_n: usize, delay: f64) -> Result<TetRecord> {
    let t = tet(times)?;
    let tet_46 = if times.len() < target_n {
        extrapolate_to(times, target_n)?
    } else {
        t
    };
    Ok(TetRecord {
        tet: t,
        tet_46,
        delay,
        tet_corr: apply_delay_correction(tet_46, delay)?,
    })
}

/// First time the sampled trajectory crosses `seg`, linearly interpolated.
pub fn crossing_time(traj: &AgentTrajectory, seg: &Segment) -> Option<f64> {
    traj.samples.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        seg.crossing(a.position(), b.position())
            .map(|f| a.t + f * (b.t - a.t))
    })
}

/// Distance between the segment midpoints over the time between crossing
/// `a` and then `b`. `None` if the trajectory does not cross both in order.
pub fn checkpoint_speed(traj: &AgentTrajectory, a: &Segment, b: &Segment) -> Option<f64> {
    let ta = crossing_time(traj, a)?;
    let tb = crossing_time(traj, b)?;
    (tb > ta).then(|| a.midpoint().distance(b.midpoint()) / (tb - ta))
}

/// Mean checkpoint speed over all agents that cross both segments.
pub fn mean_checkpoint_speed(log: &EgressLog, a: &Segment, b: &Segment) -> Option<f64> {
    let v: Vec<f64> = log
        .trajectories
        .iter()
        .filter_map(|tr| checkpoint_speed(tr, a, b))
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub seed: u64,
    #[serde(rename = "TET")]
    pub tet: f64,
    #[serde(rename = "TET_46")]
    pub tet_46: f64,
    #[serde(rename = "TET_corr")]
    pub tet_corr: f64,
    pub flow: f64,
}

impl MetricsRow {
    /// Metrics of a simulated log (no incident delay).
    pub fn from_log(log: &EgressLog, target_n: usize, count: FlowCount) -> Result<Self> {
        let times = log.egress_times();
        let rec = tet_record(&times, target_n, 0.0)?;
        Ok(MetricsRow {
            scenario: log.scenario.clone(),
            seed: log.seed,
            tet: rec.tet,
            tet_46: rec.tet_46,
            tet_corr: rec.tet_corr,
            flow: mean_exit_flow(&times, count)?,
        })
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], w: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("metrics csv", e))?;
    Ok(())
}

pub fn read_metrics_csv(r: impl std::io::Read) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
