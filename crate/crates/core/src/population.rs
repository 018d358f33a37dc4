//! Agent types, per-campaign parameter draws and crowd assembly.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::RailcarGeometry;
use crate::rng::{derive_seed, rng_from, TAG_AGENT};

pub const CROWD_SCHEMA: &str = "railevac.crowd/v1";

/// Default body compressibility and minimum diameter of the steering model.
pub const DEFAULT_SQUEEZE: f64 = 0.7;
pub const DEFAULT_MIN_DIAMETER: f64 = 0.33;

pub const WL_SPEED: TruncNormal = TruncNormal {
    mean: 0.94,
    sd: 0.25,
    lo: 0.64,
    hi: 1.56,
};
pub const WL_WIDTH: TruncNormal = TruncNormal {
    mean: 0.457,
    sd: 0.05,
    lo: 0.38,
    hi: 0.58,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
    WithoutLimitations,
    Child,
    ToddlerCarrier,
    Senior,
    Disabled,
}

impl AgentType {
    pub const ALL: [AgentType; 5] = [
        AgentType::WithoutLimitations,
        AgentType::Child,
        AgentType::ToddlerCarrier,
        AgentType::Senior,
        AgentType::Disabled,
    ];
    pub const LIMITED: [AgentType; 4] = [
        AgentType::Child,
        AgentType::ToddlerCarrier,
        AgentType::Senior,
        AgentType::Disabled,
    ];

    pub fn is_limited(self) -> bool {
        self != AgentType::WithoutLimitations
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::WithoutLimitations => "WithoutLimitations",
            AgentType::Child => "Child",
            AgentType::ToddlerCarrier => "ToddlerCarrier",
            AgentType::Senior => "Senior",
            AgentType::Disabled => "Disabled",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AgentType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown agent type '{s}'")))
    }
}

/// Concrete movement parameters of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_type: AgentType,
    /// m/s
    pub max_speed: f64,
    /// m
    pub shoulder_width: f64,
    pub sfpe_coupling: bool,
    pub squeeze: f64,
    /// m
    pub min_diameter: f64,
    /// s
    pub delay_before_jump: f64,
    /// s
    pub delay_after_jump: f64,
}

impl AgentProfile {
    /// Fixed profile of a limited type. `variant` selects the child width.
    pub fn limited(agent_type: AgentType, variant: usize) -> Option<AgentProfile> {
        let base = AgentProfile {
            agent_type,
            max_speed: 0.0,
            shoulder_width: 0.0,
            sfpe_coupling: true,
            squeeze: DEFAULT_SQUEEZE,
            min_diameter: DEFAULT_MIN_DIAMETER,
            delay_before_jump: 0.0,
            delay_after_jump: 0.0,
        };
        let p = match agent_type {
            AgentType::WithoutLimitations => return None,
            AgentType::Child => AgentProfile {
                max_speed: 1.32,
                shoulder_width: if variant.is_multiple_of(2) { 0.25 } else { 0.32 },
                delay_before_jump: 2.5,
                delay_after_jump: 0.5,
                ..base
            },
            AgentType::ToddlerCarrier => AgentProfile {
                max_speed: 0.94,
                shoulder_width: 0.62,
                sfpe_coupling: false,
                squeeze: 0.6,
                min_diameter: 0.5,
                delay_before_jump: 1.5,
                delay_after_jump: 0.5,
                ..base
            },
            AgentType::Senior => AgentProfile {
                max_speed: 0.70,
                shoulder_width: 0.40,
                delay_before_jump: 2.0,
                delay_after_jump: 1.0,
                ..base
            },
            AgentType::Disabled => AgentProfile {
                max_speed: 0.94,
                shoulder_width: 0.71,
                squeeze: 0.6,
                min_diameter: 0.5,
                delay_before_jump: 1.5,
                delay_after_jump: 0.75,
                ..base
            },
        };
        Some(p)
    }

    pub fn without_limitations(max_speed: f64, shoulder_width: f64) -> AgentProfile {
        AgentProfile {
            agent_type: AgentType::WithoutLimitations,
            max_speed,
            shoulder_width,
            sfpe_coupling: false,
            squeeze: DEFAULT_SQUEEZE,
            min_diameter: DEFAULT_MIN_DIAMETER,
            delay_before_jump: 0.0,
            delay_after_jump: 0.0,
        }
    }

    pub fn radius(&self) -> f64 {
        self.shoulder_width / 2.0
    }

    /// Smallest radius the body may be compressed to in conflicts.
    pub fn compressed_radius(&self) -> f64 {
        (self.squeeze * self.radius()).max(self.min_diameter / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncNormal {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_truncated_normal(self.mean, self.sd, self.lo, self.hi, rng)
    }
}

/// Draws from a normal distribution conditioned on `[lo, hi]` by inverse-CDF
/// sampling, so every draw costs one uniform and no rejections happen.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && mean.is_finite() && sd.is_finite()) || lo >= hi {
        return Err(Error::InvalidDistribution(format!(
            "truncated normal bounds [{lo}, {hi}] with mean {mean}, sd {sd}"
        )));
    }
    if sd < 0.0 {
        return Err(Error::InvalidDistribution(format!("negative sd {sd}")));
    }
    if sd == 0.0 {
        return Ok(mean.clamp(lo, hi));
    }
    let n = Normal::new(mean, sd).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let (fa, fb) = (n.cdf(lo), n.cdf(hi));
    if fb - fa < 1e-300 {
        return Ok(if mean < lo { lo } else { hi });
    }
    let u: f64 = rng.random();
    let x = n.inverse_cdf(fa + u * (fb - fa));
    Ok(x.clamp(lo, hi))
}

/// Analytic mean of a truncated normal.
pub fn truncated_normal_mean(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    mean + sd * (pdf(a) - pdf(b)) / (std.cdf(b) - std.cdf(a))
}

/// Linear speed-density reduction with a low-density knee and a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfpeCurve {
    /// m²/person
    pub a: f64,
    /// persons/m² below which speed is unaffected
    pub knee: f64,
    /// persons/m² beyond which the floor applies
    pub max_density: f64,
    pub floor: f64,
}

impl Default for SfpeCurve {
    fn default() -> Self {
        SfpeCurve {
            a: 0.266,
            knee: 0.55,
            max_density: 3.55,
            floor: 0.15,
        }
    }
}

impl SfpeCurve {
    pub fn fraction(&self, density: f64) -> Result<f64> {
        if density.is_nan() || density < 0.0 {
            return Err(Error::NegativeDensity(density));
        }
        if density <= self.knee {
            return Ok(1.0);
        }
        if density > self.max_density {
            return Ok(self.floor);
        }
        let f = (1.0 - self.a * density) / (1.0 - self.a * self.knee);
        Ok(f.max(self.floor))
    }
}

/// Fraction of maximum speed available at local `density` (persons/m²).
pub fn sfpe_speed_fraction(density: f64) -> Result<f64> {
    SfpeCurve::default().fraction(density)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "HOM")]
    Hom,
    #[serde(rename = "HET")]
    Het,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Hom => "HOM",
            Group::Het => "HET",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub seat_id: u32,
    pub profile: AgentProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crowd {
    pub schema: String,
    pub heterogeneity: f64,
    pub group: Group,
    pub master_seed: u64,
    pub agents: Vec<Agent>,
}

impl Crowd {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Counts in the order WithoutLimitations, Child, ToddlerCarrier, Senior, Disabled.
    pub fn type_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for a in &self.agents {
            c[a.profile.agent_type as usize] += 1;
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Crowd> {
        let c: Crowd = serde_json::from_str(s)?;
        if c.schema != CROWD_SCHEMA {
            return Err(Error::Schema(format!(
                "crowd schema '{}' (expected '{CROWD_SCHEMA}')",
                c.schema
            )));
        }
        Ok(c)
    }
}

/// Ordered seats; agent `i` of a crowd sits at `seats[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatPlan {
    pub seats: Vec<u32>,
}

/// Positions in the seat plan preferred by each limited type, in fill order.
const PREF_CHILD: [usize; 10] = [42, 33, 44, 22, 36, 26, 38, 30, 40, 9];
const PREF_TODDLER: [usize; 6] = [20, 24, 8, 28, 12, 18];
const PREF_SENIOR: [usize; 8] = [2, 6, 10, 14, 3, 7, 11, 15];
const PREF_DISABLED: [usize; 2] = [0, 16];

/// Size of the experimental group.
pub const REFERENCE_GROUP_SIZE: usize = 46;

impl SeatPlan {
    /// The experimental seating: 20 lower-deck, 12 mezzanine and 14 upper-deck
    /// seats, followed by the remaining seats of the half-car for larger crowds.
    pub fn experimental() -> SeatPlan {
        let mut seats = Vec::new();
        let lower: Vec<u32> = (0..20).map(|i| 100 + i).collect();
        let mezz: Vec<u32> = (0..12).map(|i| 200 + i).collect();
        let upper: Vec<u32> = (0..14).map(|i| 300 + i).collect();
        seats.extend(lower);
        seats.extend(mezz);
        seats.extend(upper);
        seats.extend((20..32).map(|i| 100 + i));
        seats.extend((12..16).map(|i| 200 + i));
        seats.extend((14..24).map(|i| 300 + i));
        SeatPlan { seats }
    }

    pub fn capacity(&self) -> usize {
        self.seats.len()
    }

    pub fn check(&self, geometry: &RailcarGeometry) -> Result<()> {
        for id in &self.seats {
            if geometry.seat(*id).is_none() {
                return Err(Error::Config(format!("seat {id} not present in geometry")));
            }
        }
        let mut sorted = self.seats.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seats.len() {
            return Err(Error::Config("seat plan assigns a seat twice".into()));
        }
        Ok(())
    }
}

/// Type counts (WL, Child, ToddlerCarrier, Senior, Disabled) for a crowd of
/// `n` with `heterogeneity` percent limited agents.
pub fn type_counts(n: usize, heterogeneity: f64) -> Result<[usize; 5]> {
    if !(0.0..=100.0).contains(&heterogeneity) {
        return Err(Error::Config(format!(
            "heterogeneity {heterogeneity}% outside [0, 100]"
        )));
    }
    if n == REFERENCE_GROUP_SIZE {
        let table = [
            (0.0, [46, 0, 0, 0, 0]),
            (15.0, [39, 3, 1, 2, 1]),
            (28.0, [33, 5, 3, 4, 1]),
            (56.0, [20, 10, 6, 8, 2]),
        ];
        if let Some((_, c)) = table.iter().find(|(h, _)| (h - heterogeneity).abs() < 1e-9) {
            return Ok(*c);
        }
    }
    let limited = (n as f64 * heterogeneity / 100.0).round() as usize;
    let weights = [10.0, 6.0, 8.0, 2.0];
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| limited as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = limited - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| {
        (exact[j] - exact[j].floor())
            .total_cmp(&(exact[i] - exact[i].floor()))
            .then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    Ok([n - limited, counts[0], counts[1], counts[2], counts[3]])
}

/// Assigns types to seat-plan positions for a crowd of `n`.
fn assign_types(n: usize, heterogeneity: f64, capacity: usize) -> Result<Vec<AgentType>> {
    // Crowds of 42 are the 46-person crowd without its last four members.
    let basis = n.max(REFERENCE_GROUP_SIZE).min(capacity);
    let counts = type_counts(basis, heterogeneity)?;
    let mut types = vec![AgentType::WithoutLimitations; basis];
    let mut taken = vec![false; basis];
    let prefs: [(&[usize], AgentType, usize); 4] = [
        (&PREF_CHILD, AgentType::Child, counts[1]),
        (&PREF_TODDLER, AgentType::ToddlerCarrier, counts[2]),
        (&PREF_SENIOR, AgentType::Senior, counts[3]),
        (&PREF_DISABLED, AgentType::Disabled, counts[4]),
    ];
    for (pref, t, k) in prefs {
        let mut placed = 0;
        for &i in pref.iter().filter(|&&i| i < basis) {
            if placed == k {
                break;
            }
            if !taken[i] {
                types[i] = t;
                taken[i] = true;
                placed += 1;
            }
        }
        let reserved: Vec<usize> = PREF_CHILD
            .iter()
            .chain(&PREF_TODDLER)
            .chain(&PREF_SENIOR)
            .chain(&PREF_DISABLED)
            .copied()
            .collect();
        for i in 0..basis {
            if placed == k {
                break;
            }
            if !taken[i] && !reserved.contains(&i) {
                types[i] = t;
                taken[i] = true;
                placed += 1;
            }
        }
        for i in 0..basis {
            if placed == k {
                break;
            }
            if !taken[i] {
                types[i] = t;
                taken[i] = true;
                placed += 1;
            }
        }
    }
    types.truncate(n);
    Ok(types)
}

/// Assembles a crowd. Each agent draws its own parameter stream from the
/// master seed by index, so the same person keeps the same drawn values
/// across every scenario of a campaign.
pub fn build_crowd(n: usize, heterogeneity: f64, plan: &SeatPlan, master_seed: u64) -> Result<Crowd> {
    if n > plan.capacity() {
        return Err(Error::SeatCapacity {
            requested: n,
            capacity: plan.capacity(),
        });
    }
    let types = assign_types(n, heterogeneity, plan.capacity())?;
    let mut children = 0;
    let mut agents = Vec::with_capacity(n);
    for (i, t) in types.into_iter().enumerate() {
        let mut rng = rng_from(derive_seed(master_seed, TAG_AGENT, i as u64));
        let speed = WL_SPEED.sample(&mut rng)?;
        let width = WL_WIDTH.sample(&mut rng)?;
        let profile = match t {
            AgentType::WithoutLimitations => AgentProfile::without_limitations(speed, width),
            AgentType::Child => {
                children += 1;
                AgentProfile::limited(t, children - 1).expect("limited type")
            }
            _ => AgentProfile::limited(t, 0).expect("limited type"),
        };
        agents.push(Agent {
            id: i as u32,
            seat_id: plan.seats[i],
            profile,
        });
    }
    Ok(Crowd {
        schema: CROWD_SCHEMA.to_string(),
        heterogeneity,
        group: if heterogeneity > 0.0 { Group::Het } else { Group::Hom },
        master_seed,
        agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_railcar, ExitType};

    #[test]
    fn measured_compositions() {
        let plan = SeatPlan::experimental();
        let c = build_crowd(46, 28.0, &plan, 1).unwrap();
        assert_eq!(c.type_counts(), [33, 5, 3, 4, 1]);
        assert_eq!(build_crowd(46, 0.0, &plan, 1).unwrap().type_counts(), [46, 0, 0, 0, 0]);
        assert_eq!(build_crowd(42, 28.0, &plan, 1).unwrap().type_counts(), [31, 3, 3, 4, 1]);
        assert_eq!(build_crowd(46, 15.0, &plan, 1).unwrap().type_counts(), [39, 3, 1, 2, 1]);
        assert_eq!(build_crowd(46, 56.0, &plan, 1).unwrap().type_counts(), [20, 10, 6, 8, 2]);
    }

    #[test]
    fn seat_plan_matches_geometry() {
        let g = build_railcar(0.9, ExitType::Jump).unwrap();
        SeatPlan::experimental().check(&g).unwrap();
        assert_eq!(SeatPlan::experimental().capacity(), g.seats.len());
    }

    #[test]
    fn capacity_is_enforced() {
        let plan = SeatPlan::experimental();
        let too_many = plan.capacity() + 1;
        assert!(matches!(
            build_crowd(too_many, 0.0, &plan, 1),
            Err(Error::SeatCapacity { .. })
        ));
    }

    #[test]
    fn seniors_sit_on_the_lower_deck() {
        let plan = SeatPlan::experimental();
        let c = build_crowd(46, 56.0, &plan, 9).unwrap();
        for a in c.agents.iter().filter(|a| a.profile.agent_type == AgentType::Senior) {
            assert!((100..200).contains(&a.seat_id));
        }
    }

    #[test]
    fn draws_are_shared_across_heterogeneity_levels() {
        let plan = SeatPlan::experimental();
        let hom = build_crowd(46, 0.0, &plan, 5).unwrap();
        let het = build_crowd(46, 28.0, &plan, 5).unwrap();
        for (a, b) in hom.agents.iter().zip(&het.agents) {
            if !b.profile.agent_type.is_limited() {
                assert_eq!(a.profile, b.profile);
            }
        }
    }

    #[test]
    fn limited_profiles() {
        let s = AgentProfile::limited(AgentType::Senior, 0).unwrap();
        assert_eq!((s.max_speed, s.shoulder_width), (0.70, 0.40));
        assert_eq!((s.delay_before_jump, s.delay_after_jump), (2.0, 1.0));
        assert!(s.sfpe_coupling);
        let t = AgentProfile::limited(AgentType::ToddlerCarrier, 0).unwrap();
        assert!(!t.sfpe_coupling);
        assert_eq!((t.squeeze, t.min_diameter), (0.6, 0.5));
        let d = AgentProfile::limited(AgentType::Disabled, 0).unwrap();
        assert_eq!((d.shoulder_width, d.squeeze, d.min_diameter), (0.71, 0.6, 0.5));
        assert_eq!((d.delay_before_jump, d.delay_after_jump), (1.5, 0.75));
        let c0 = AgentProfile::limited(AgentType::Child, 0).unwrap();
        let c1 = AgentProfile::limited(AgentType::Child, 1).unwrap();
        assert_eq!((c0.shoulder_width, c1.shoulder_width), (0.25, 0.32));
        assert_eq!((c0.max_speed, c0.delay_before_jump, c0.delay_after_jump), (1.32, 2.5, 0.5));
        assert!(AgentProfile::limited(AgentType::WithoutLimitations, 0).is_none());
    }

    #[test]
    fn truncated_normal_mean_matches_analytic() {
        let mut rng = rng_from(11);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_truncated_normal(0.94, 0.25, 0.64, 1.56, &mut rng).unwrap();
        }
        let mc = sum / n as f64;
        // Independent oracle: midpoint-rule integration of the conditioned density.
        let (mu, sd, lo, hi) = (0.94, 0.25, 0.64, 1.56);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..steps {
            let x: f64 = lo + (k as f64 + 0.5) * h;
            let w = (-0.5 * ((x - mu) / sd).powi(2)).exp();
            num += x * w;
            den += w;
        }
        let oracle = num / den;
        assert!((oracle - truncated_normal_mean(mu, sd, lo, hi)).abs() < 1e-6);
        // Asymmetric truncation shifts the conditioned mean above the parent mean.
        assert!(oracle > 0.98 && oracle < 1.0);
        assert!((mc - oracle).abs() < 0.01, "sample mean {mc} vs {oracle}");
    }

    #[test]
    fn degenerate_and_invalid_truncated_normals() {
        let mut rng = rng_from(3);
        assert_eq!(sample_truncated_normal(0.457, 0.0, 0.38, 0.58, &mut rng).unwrap(), 0.457);
        assert!(sample_truncated_normal(0.5, 0.1, 0.6, 0.6, &mut rng).is_err());
        assert!(sample_truncated_normal(0.5, 0.1, 0.7, 0.6, &mut rng).is_err());
        assert!(sample_truncated_normal(0.5, -0.1, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn sfpe_points() {
        assert_eq!(sfpe_speed_fraction(0.0).unwrap(), 1.0);
        assert_eq!(sfpe_speed_fraction(0.55).unwrap(), 1.0);
        let f3 = sfpe_speed_fraction(3.0).unwrap();
        let expected = (1.0 - 0.266 * 3.0) / (1.0 - 0.266 * 0.55);
        assert!((f3 - expected).abs() < 1e-12);
        assert!(f3 > 0.15 && f3 < 0.5);
        assert_eq!(sfpe_speed_fraction(10.0).unwrap(), 0.15);
        assert!(matches!(sfpe_speed_fraction(-0.1), Err(Error::NegativeDensity(_))));
    }

    #[test]
    fn crowd_json_round_trip() {
        let c = build_crowd(46, 28.0, &SeatPlan::experimental(), 77).unwrap();
        let back = Crowd::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn arbitrary_heterogeneity_uses_proportional_rounding() {
        let c = type_counts(46, 40.0).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 46);
        assert_eq!(c[0], 46 - 18);
        assert!(type_counts(46, 120.0).is_err());
    }
}
