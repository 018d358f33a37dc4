//! Continuous-space evacuation runs.
//!
//! Agents are disks that follow the descent direction of a floor field,
//! deflected by exponential repulsion from neighbours ahead and from walls.
//! Speed is the free speed capped by the headway to the nearest agent in the
//! walking lane (`gap / time_gap`). Agents only keep headway to neighbours
//! with a lower field potential; a stalled agent closer to the exit makes
//! the neighbours pressing on it step back. Positions update sequentially in a
//! per-step random order; a move is accepted only if it keeps disks and walls
//! at least their squeeze-compressed radii apart (or does not reduce an
//! existing violation).

pub mod config;
pub mod field;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use config::TuningConfig;
pub use field::{CellKind, FieldParams, FloorField};

use crate::error::{Error, Result};
use crate::geometry::{ExitModel, ExitType, RailcarGeometry, Vec2};
use crate::population::{AgentProfile, AgentType, Crowd};
use crate::rng::{derive_seed, rng_from, TAG_AGENT, TAG_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seated,
    Moving,
    GateQueued,
    GateOccupying,
    PostJumpBalancing,
    Exited,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Seated,
        Phase::Moving,
        Phase::GateQueued,
        Phase::GateOccupying,
        Phase::PostJumpBalancing,
        Phase::Exited,
    ];

    /// Whether the agent's body occupies floor space in the car.
    pub fn on_plane(self) -> bool {
        matches!(
            self,
            Phase::Seated | Phase::Moving | Phase::GateQueued | Phase::GateOccupying
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgressEvent {
    pub agent_id: u32,
    pub agent_type: AgentType,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl TrajectorySample {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrajectory {
    pub agent_id: u32,
    pub samples: Vec<TrajectorySample>,
}

/// Record of one run. Events are sorted by time, ties by agent id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgressLog {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub events: Vec<EgressEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<AgentTrajectory>,
    pub steps: u64,
    pub max_gate_occupancy: usize,
    /// Not part of the deterministic content.
    pub wall_clock_s: f64,
}

impl EgressLog {
    pub fn egress_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    pub fn tet(&self) -> Option<f64> {
        self.events.last().map(|e| e.time)
    }

    /// CSV body: one row per agent, `agent_id,agent_type,egress_time_s`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["agent_id", "agent_type", "egress_time_s"])?;
        for e in &self.events {
            w.write_record([
                e.agent_id.to_string(),
                e.agent_type.to_string(),
                format!("{}", e.time),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Fixture(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Fixture(e.to_string()))
    }

    pub fn events_from_csv(s: &str) -> Result<Vec<EgressEvent>> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["agent_id", "agent_type", "egress_time_s"] {
            return Err(Error::Schema(format!("unexpected log columns {headers:?}")));
        }
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse_err = |what: &str| Error::Schema(format!("bad {what} in log row {rec:?}"));
            out.push(EgressEvent {
                agent_id: rec[0].parse().map_err(|_| parse_err("agent_id"))?,
                agent_type: rec[1].parse()?,
                time: rec[2].parse().map_err(|_| parse_err("egress_time_s"))?,
            });
        }
        Ok(out)
    }
}

/// Canonical scenario key, e.g. `jump_H28_W0.65`.
pub fn scenario_id(exit: ExitType, heterogeneity: f64, width: f64) -> String {
    format!("{}_H{}_W{:.2}", exit.as_str(), heterogeneity, width)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record positions every this many steps.
    pub trajectory_every: Option<u64>,
}

/// Precomputed model of one geometry, shareable by concurrent runs.
pub struct Simulator<'g> {
    geometry: &'g RailcarGeometry,
    field: FloorField,
    tuning: TuningConfig,
    gate: Option<GateSpec>,
}

#[derive(Debug, Clone, Copy)]
struct GateSpec {
    capacity: usize,
    depth: f64,
    x0: f64,
    x1: f64,
}

impl GateSpec {
    fn contains(&self, p: Vec2) -> bool {
        p.y <= self.depth && p.y > -1.0 && p.x >= self.x0 - 0.05 && p.x <= self.x1 + 0.05
    }
}

impl<'g> Simulator<'g> {
    pub fn new(geometry: &'g RailcarGeometry, tuning: TuningConfig) -> Result<Self> {
        tuning.validate()?;
        let params = FieldParams {
            resolution: tuning.grid_resolution,
            wall_clearance: tuning.wall_clearance,
            wall_penalty: tuning.wall_penalty,
            wall_reach: 0.6,
        };
        let field = FloorField::new(geometry, &params);
        let line = geometry.main_exit.line;
        let gate = match geometry.exit_model {
            ExitModel::Jump {
                gate_capacity,
                gate_depth,
                ..
            } => Some(GateSpec {
                capacity: gate_capacity,
                depth: gate_depth,
                x0: line.a.x.min(line.b.x),
                x1: line.a.x.max(line.b.x),
            }),
            _ => None,
        };
        Ok(Simulator {
            geometry,
            field,
            tuning,
            gate,
        })
    }

    pub fn geometry(&self) -> &RailcarGeometry {
        self.geometry
    }

    pub fn field(&self) -> &FloorField {
        &self.field
    }

    pub fn tuning(&self) -> &TuningConfig {
        &self.tuning
    }

    pub fn start<'s>(&'s self, crowd: &Crowd, seed: u64, options: RunOptions) -> Result<Simulation<'s, 'g>> {
        Simulation::new(self, crowd, seed, options)
    }

    pub fn run(&self, crowd: &Crowd, seed: u64, options: RunOptions) -> Result<EgressLog> {
        let clock = Instant::now();
        let mut sim = self.start(crowd, seed, options)?;
        while !sim.is_finished() {
            sim.step()?;
        }
        let mut log = sim.into_log();
        log.wall_clock_s = clock.elapsed().as_secs_f64();
        Ok(log)
    }
}

/// One run with the default tuning and time step `dt`.
pub fn run(geometry: &RailcarGeometry, crowd: &Crowd, seed: u64, dt: f64) -> Result<EgressLog> {
    let sim = Simulator::new(geometry, TuningConfig::default().with_dt(dt))?;
    sim.run(crowd, seed, RunOptions::default())
}

#[derive(Debug, Clone)]
struct AgentState {
    id: u32,
    profile: AgentProfile,
    pos: Vec2,
    heading: Vec2,
    velocity: Vec2,
    phase: Phase,
    priority: u64,
    radius: f64,
    hard_radius: f64,
    egress: Option<f64>,
    at_edge: bool,
    release_at: f64,
    queued_at: u64,
    /// s spent without moving
    still: f64,
}

/// m/s; below this an agent counts as stalled
const STALL_SPEED: f64 = 0.05;
/// m
const CONTACT_MARGIN: f64 = 0.03;
/// m/s
const YIELD_SPEED: f64 = 0.3;
/// s; an agent held this long ignores headway and may step sideways
const STALL_TIMEOUT: f64 = 4.0;

pub struct Simulation<'s, 'g> {
    sim: &'s Simulator<'g>,
    agents: Vec<AgentState>,
    t: f64,
    steps: u64,
    rng: ChaCha8Rng,
    occupancy: usize,
    queue: Vec<usize>,
    max_occupancy: usize,
    events: Vec<EgressEvent>,
    options: RunOptions,
    trajectories: Vec<AgentTrajectory>,
    scenario: String,
    seed: u64,
    order: Vec<usize>,
}

/// Agent snapshot exposed for inspection and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentView {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub phase: Phase,
    pub hard_radius: f64,
}

impl<'s, 'g> Simulation<'s, 'g> {
    fn new(sim: &'s Simulator<'g>, crowd: &Crowd, seed: u64, options: RunOptions) -> Result<Self> {
        let g = sim.geometry;
        let mut agents = Vec::with_capacity(crowd.len());
        for a in &crowd.agents {
            let seat = g
                .seat(a.seat_id)
                .ok_or_else(|| Error::Config(format!("seat {} not in geometry", a.seat_id)))?;
            let mut r = rng_from(derive_seed(seed, TAG_AGENT, a.id as u64));
            agents.push(AgentState {
                id: a.id,
                profile: a.profile,
                pos: seat.position,
                heading: sim.field.direction(seat.position),
                velocity: Vec2::ZERO,
                phase: Phase::Seated,
                priority: r.random(),
                radius: a.profile.radius().max(a.profile.compressed_radius()),
                hard_radius: a.profile.compressed_radius(),
                egress: None,
                at_edge: false,
                release_at: 0.0,
                queued_at: 0,
                still: 0.0,
            });
        }
        let trajectories = if options.trajectory_every.is_some() {
            agents
                .iter()
                .map(|a| AgentTrajectory {
                    agent_id: a.id,
                    samples: vec![TrajectorySample {
                        t: 0.0,
                        x: a.pos.x,
                        y: a.pos.y,
                    }],
                })
                .collect()
        } else {
            Vec::new()
        };
        let order = (0..agents.len()).collect();
        Ok(Simulation {
            sim,
            agents,
            t: 0.0,
            steps: 0,
            rng: rng_from(derive_seed(seed, TAG_STEP, 0)),
            occupancy: 0,
            queue: Vec::new(),
            max_occupancy: 0,
            events: Vec::new(),
            options,
            trajectories,
            scenario: scenario_id(g.exit_type(), crowd.heterogeneity, g.exit_width()),
            seed,
            order,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.agents.iter().all(|a| a.phase == Phase::Exited)
    }

    pub fn gate_occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn phase_counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for a in &self.agents {
            c[Phase::ALL.iter().position(|p| *p == a.phase).unwrap_or(0)] += 1;
        }
        c
    }

    pub fn agents(&self) -> Vec<AgentView> {
        self.agents
            .iter()
            .map(|a| AgentView {
                id: a.id,
                position: a.pos,
                velocity: a.velocity,
                phase: a.phase,
                hard_radius: a.hard_radius,
            })
            .collect()
    }

    pub fn into_log(mut self) -> EgressLog {
        self.events
            .sort_by(|a, b| a.time.total_cmp(&b.time).then(a.agent_id.cmp(&b.agent_id)));
        EgressLog {
            scenario: self.scenario,
            seed: self.seed,
            dt: self.sim.tuning.dt,
            events: self.events,
            trajectories: self.trajectories,
            steps: self.steps,
            max_gate_occupancy: self.max_occupancy,
            wall_clock_s: 0.0,
        }
    }

    fn record_egress(&mut self, i: usize, time: f64) {
        let a = &mut self.agents[i];
        if a.egress.is_none() {
            a.egress = Some(time);
            self.events.push(EgressEvent {
                agent_id: a.id,
                agent_type: a.profile.agent_type,
                time,
            });
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let sim: &'s Simulator<'g> = self.sim;
        let tuning = &sim.tuning;
        if self.t > tuning.time_limit {
            let remaining = self.agents.iter().filter(|a| a.phase != Phase::Exited).count();
            let stuck: Vec<String> = self
                .agents
                .iter()
                .filter(|a| a.phase != Phase::Exited)
                .take(5)
                .map(|a| format!("#{} {:?} at ({:.2}, {:.2})", a.id, a.phase, a.pos.x, a.pos.y))
                .collect();
            return Err(Error::NonTermination {
                limit_s: tuning.time_limit,
                remaining,
                detail: format!("{}; {}", self.scenario, stuck.join(", ")),
            });
        }
        let dt = tuning.dt;
        let t = self.t;
        if self.sim.gate.is_some() {
            self.gate_timers(t);
            self.gate_admit();
        }

        let n = self.agents.len();
        let r2 = tuning.neighbor_radius * tuning.neighbor_radius;
        let half_disk = 0.5 * std::f64::consts::PI * r2;
        let mut density = vec![0.0; n];
        for i in 0..n {
            if !self.agents[i].phase.on_plane() || !self.agents[i].profile.sfpe_coupling {
                continue;
            }
            // Density of the crowd the agent walks into: other agents in the
            // forward half disk of the neighbour radius.
            let p = self.agents[i].pos;
            let h = self.agents[i].heading;
            let count = self
                .agents
                .iter()
                .enumerate()
                .filter(|(j, b)| {
                    let rel = b.pos - p;
                    *j != i && b.phase.on_plane() && rel.length_sq() <= r2 && rel.dot(h) >= 0.0
                })
                .count();
            density[i] = count as f64 / half_disk;
        }

        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        for &i in &order {
            self.move_agent(i, density[i], t, dt)?;
            let a = &mut self.agents[i];
            if a.phase == Phase::Moving && a.velocity.length() < STALL_SPEED {
                a.still += dt;
            } else {
                a.still = 0.0;
            }
        }
        self.order = order;

        self.t = t + dt;
        self.steps += 1;
        self.max_occupancy = self.max_occupancy.max(self.occupancy);
        if let Some(every) = self.options.trajectory_every {
            if self.steps.is_multiple_of(every.max(1)) {
                for (k, a) in self.agents.iter().enumerate() {
                    if a.phase.on_plane() {
                        self.trajectories[k].samples.push(TrajectorySample {
                            t: self.t,
                            x: a.pos.x,
                            y: a.pos.y,
                        });
                    }
                }
            }
        }
        debug_assert_eq!(self.phase_counts().iter().sum::<usize>(), n);
        Ok(())
    }

    fn gate_timers(&mut self, t: f64) {
        for i in 0..self.agents.len() {
            let (phase, at_edge, release_at) = {
                let a = &self.agents[i];
                (a.phase, a.at_edge, a.release_at)
            };
            match phase {
                Phase::GateOccupying if at_edge && release_at <= t + 1e-9 => {
                    self.record_egress(i, release_at);
                    let a = &mut self.agents[i];
                    a.velocity = Vec2::ZERO;
                    if a.profile.delay_after_jump > 0.0 {
                        a.phase = Phase::PostJumpBalancing;
                        a.release_at = release_at + a.profile.delay_after_jump;
                    } else {
                        a.phase = Phase::Exited;
                        self.occupancy -= 1;
                    }
                }
                Phase::PostJumpBalancing if release_at <= t + 1e-9 => {
                    self.agents[i].phase = Phase::Exited;
                    self.occupancy -= 1;
                }
                _ => {}
            }
        }
    }

    /// Admits queued agents, first come first served, while the gate has room.
    fn gate_admit(&mut self) {
        let Some(gate) = self.sim.gate else { return };
        let agents = &self.agents;
        self.queue
            .sort_by(|&a, &b| {
                agents[a]
                    .queued_at
                    .cmp(&agents[b].queued_at)
                    .then(agents[b].priority.cmp(&agents[a].priority))
            });
        while self.occupancy < gate.capacity && !self.queue.is_empty() {
            let i = self.queue.remove(0);
            self.agents[i].phase = Phase::GateOccupying;
            self.occupancy += 1;
        }
    }

    fn move_agent(&mut self, i: usize, density: f64, t: f64, dt: f64) -> Result<()> {
        let sim: &'s Simulator<'g> = self.sim;
        let tuning = &sim.tuning;
        let field = &sim.field;
        let me = self.agents[i].clone();
        if !matches!(me.phase, Phase::Seated | Phase::Moving | Phase::GateOccupying) || me.at_edge {
            self.agents[i].velocity = Vec2::ZERO;
            return Ok(());
        }
        let p = me.pos;
        let e0 = field.direction(p);
        if e0 == Vec2::ZERO {
            self.agents[i].velocity = Vec2::ZERO;
            return Ok(());
        }

        let reach = tuning.neighbor_radius.max(1.2);
        let neighbors: Vec<usize> = self
            .agents
            .iter()
            .enumerate()
            .filter(|(j, b)| *j != i && b.phase.on_plane() && (b.pos - p).length_sq() < reach * reach)
            .map(|(j, _)| j)
            .collect();

        // Agents only yield to those closer to the exit along the floor field,
        // so the lowest-potential agent of any cluster is never held back.
        let phi_me = field.potential(p);
        let ignored: Vec<bool> = neighbors
            .iter()
            .map(|&j| {
                let b = &self.agents[j];
                let phi_b = field.potential(b.pos);
                phi_b > phi_me || (phi_b == phi_me && b.priority < me.priority)
            })
            .collect();

        // Step back for a stalled agent closer to the exit whose way is
        // blocked by this agent's body.
        if me.phase != Phase::GateOccupying {
            for &j in &neighbors {
                let b = &self.agents[j];
                let rel = p - b.pos;
                let d = rel.length();
                if field.potential(b.pos) >= phi_me
                    || b.velocity.length() > STALL_SPEED
                    || d > me.hard_radius + b.hard_radius + CONTACT_MARGIN
                    || d < 1e-9
                {
                    continue;
                }
                let away = rel * (1.0 / d);
                let step = YIELD_SPEED * dt;
                for dir in [away, away.rotated(0.8), away.rotated(-0.8)] {
                    let q = p + dir * step;
                    if self.valid_move(i, p, q, &neighbors, t) {
                        self.apply_move(i, p, q, t, dt, None);
                        return Ok(());
                    }
                }
                break;
            }
        }

        // Heading.
        let mut acc = e0;
        for (k, &j) in neighbors.iter().enumerate() {
            if ignored[k] {
                continue;
            }
            let b = &self.agents[j];
            let rel = p - b.pos;
            let d = rel.length();
            if d > tuning.neighbor_radius || d < 1e-9 || (b.pos - p).dot(e0) <= 0.0 {
                continue;
            }
            let w = tuning.agent_repulsion * ((me.radius + b.radius - d) / tuning.agent_repulsion_range).exp();
            acc = acc + rel * (w / d);
        }
        // Neighbours may slow or deflect an agent but never turn it around.
        let forward = acc.dot(e0);
        let min_forward = 0.1 * acc.length();
        if forward < min_forward {
            acc = acc + e0 * (min_forward - forward);
        }
        let mut e = acc.normalized();
        if e == Vec2::ZERO {
            e = e0;
        }
        // Walls remove the component of the heading that points into them.
        let (wd, wn) = field.wall_distance(p);
        if wn != Vec2::ZERO && e.dot(wn) < 0.0 {
            let w = (tuning.wall_repulsion * ((me.radius - wd) / tuning.wall_repulsion_range).exp()).min(1.0);
            let slid = e - wn * (e.dot(wn) * w);
            if slid.dot(e0) > 0.0 && slid.length() > 1e-9 {
                e = slid.normalized();
            } else if e0.dot(wn) >= 0.0 {
                e = e0;
            }
        }
        if tuning.heading_noise > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            e = e.rotated(z * tuning.heading_noise);
        }

        // Speed.
        let mut v_free = me.profile.max_speed;
        if me.profile.sfpe_coupling {
            v_free *= tuning.sfpe.fraction(density)?;
        }
        match field.kind_at(p) {
            CellKind::Stair => v_free *= tuning.stair_factor,
            CellKind::ExternalStair => v_free *= tuning.external_stair_factor,
            _ => {}
        }
        if let Some(gate) = self.sim.gate {
            if me.phase == Phase::GateOccupying && gate.contains(p) {
                v_free *= tuning.jump_zone_factor;
            }
        }
        let mut gap = f64::INFINITY;
        for (k, &j) in neighbors.iter().enumerate() {
            if ignored[k] {
                continue;
            }
            let b = &self.agents[j];
            let rel = b.pos - p;
            let along = rel.dot(e);
            if along <= 0.0 || rel.dot(e0) <= 0.0 {
                continue;
            }
            let lat = rel.cross(e).abs();
            let l = me.radius + b.radius;
            if lat >= l {
                continue;
            }
            let s = along - (l * l - lat * lat).sqrt();
            gap = gap.min(s.max(0.0));
        }
        let stalled = me.still > STALL_TIMEOUT;
        let v = if stalled {
            0.5 * v_free
        } else {
            v_free.min(gap / tuning.time_gap)
        };
        let step = v * dt;
        self.agents[i].heading = e;
        if step < 1e-9 {
            self.agents[i].velocity = Vec2::ZERO;
            return Ok(());
        }

        let phi0 = phi_me;
        let mut candidates = vec![e];
        for &deg in &tuning.detour_angles {
            let a = deg.to_radians();
            candidates.push(e.rotated(a));
            candidates.push(e.rotated(-a));
        }
        if let Some(tan) = field.wall_tangent(p) {
            let s = if tan.dot(e) >= 0.0 { tan } else { -tan };
            candidates.push(s);
        }

        for (k, dir) in candidates.into_iter().enumerate() {
            let mut q = p + dir * step;
            if k > 0 && !stalled && field.potential(q) >= phi0 {
                continue;
            }
            if !self.valid_move(i, p, q, &neighbors, t) {
                continue;
            }
            let mut edge_frac = None;
            if let Some(gate) = self.sim.gate {
                let a = &self.agents[i];
                if a.phase != Phase::GateOccupying && gate.contains(q) {
                    if self.queue.is_empty() && self.occupancy < gate.capacity {
                        self.agents[i].phase = Phase::GateOccupying;
                        self.occupancy += 1;
                    } else {
                        let a = &mut self.agents[i];
                        a.phase = Phase::GateQueued;
                        a.queued_at = self.steps;
                        a.velocity = Vec2::ZERO;
                        self.queue.push(i);
                        return Ok(());
                    }
                }
                let a = &self.agents[i];
                let delayed = a.profile.delay_before_jump > 0.0 || a.profile.delay_after_jump > 0.0;
                if a.phase == Phase::GateOccupying && delayed && q.y <= a.radius && p.y > a.radius {
                    let f = (p.y - a.radius) / (p.y - q.y);
                    let edge = p + (q - p) * f;
                    if !self.valid_move(i, p, edge, &neighbors, t) {
                        self.agents[i].velocity = Vec2::ZERO;
                        return Ok(());
                    }
                    q = edge;
                    edge_frac = Some(f);
                }
            }
            self.apply_move(i, p, q, t, dt, edge_frac);
            return Ok(());
        }
        self.agents[i].velocity = Vec2::ZERO;
        Ok(())
    }

    fn valid_move(&self, i: usize, p: Vec2, q: Vec2, neighbors: &[usize], t: f64) -> bool {
        let g = self.sim.geometry;
        if !g.is_walkable(q) {
            return false;
        }
        let me = &self.agents[i];
        let c = me.hard_radius;
        let (wq, _) = self.sim.field.wall_distance(q);
        if wq < c {
            let (wp, _) = self.sim.field.wall_distance(p);
            if wq < wp - 1e-12 {
                return false;
            }
        }
        for door in &g.internal_doors {
            if door.opening_delay > t && g.regions[door.region].rect().contains(q) {
                return false;
            }
        }
        for &j in neighbors {
            let b = &self.agents[j];
            let min = c + b.hard_radius;
            let dq = (q - b.pos).length();
            if dq < min && dq < (p - b.pos).length() - 1e-12 {
                return false;
            }
        }
        true
    }

    fn apply_move(&mut self, i: usize, p: Vec2, q: Vec2, t: f64, dt: f64, edge_frac: Option<f64>) {
        let g = self.sim.geometry;
        let exit_line = g.main_exit.line;
        let sink_y = g.sink.a.y;
        {
            let a = &mut self.agents[i];
            a.pos = q;
            a.velocity = (q - p) * (1.0 / dt);
            if a.phase == Phase::Seated {
                a.phase = Phase::Moving;
            }
        }
        if let Some(f) = edge_frac {
            let a = &mut self.agents[i];
            a.at_edge = true;
            a.release_at = t + f * dt + a.profile.delay_before_jump;
            return;
        }
        if p.y > 0.0 && q.y <= 0.0 {
            if let Some(f) = exit_line.crossing(p, q) {
                self.record_egress(i, t + f * dt);
            }
        }
        let is_jump = self.sim.gate.is_some();
        if q.y <= sink_y && self.agents[i].egress.is_some() {
            let a = &mut self.agents[i];
            let was_occupying = a.phase == Phase::GateOccupying;
            a.phase = Phase::Exited;
            a.velocity = Vec2::ZERO;
            if is_jump && was_occupying {
                self.occupancy -= 1;
            }
        }
    }
}
