//! Reset-free surrogate arena.
//!
//! The physical robot is replaced by a fixed, seeded twist field: a sum of
//! random Fourier features of the genotype and the substep index, squashed
//! into velocity bounds. Episodes integrate that twist (plus Gaussian noise)
//! from wherever the robot currently stands; nothing ever resets the pose.

use crate::controller::{Genotype, EPISODE_SECONDS, GENOTYPE_LEN};
use crate::rng::{substream, Stream, StreamRng};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Substeps per episode.
pub const SUBSTEPS: usize = 10;
/// Substep duration in seconds.
pub const DT: f64 = EPISODE_SECONDS / SUBSTEPS as f64;
/// Random features per twist channel.
pub const N_FEATURES: usize = 32;
pub const MAX_LINEAR_SPEED: f64 = 0.08;
pub const MAX_ANGULAR_SPEED: f64 = 0.6;
/// Below this displacement (metres) the arc heading is undefined and fitness is 0.
pub const DEGENERATE_BD: f64 = 1e-3;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Planar pose in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Maps a body-frame offset into the world frame.
    pub fn transform_point(&self, local: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * local[0] - s * local[1], self.y + s * local[0] + c * local[1]]
    }

    /// Composes a relative pose `(dx, dy, dtheta)` expressed in this body frame.
    pub fn compose(&self, rel: [f64; 3]) -> Pose {
        let [x, y] = self.transform_point([rel[0], rel[1]]);
        Pose::new(x, y, self.theta + rel[2])
    }

    /// Expresses a world point in this body frame.
    pub fn to_local(&self, world: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = world[0] - self.x;
        let dy = world[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    Exploration,
    Recovery,
    Outside,
}

/// Concentric exploration and recovery discs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneMap {
    pub center: [f64; 2],
    pub r_exploration: f64,
    pub r_recovery: f64,
}

impl ZoneMap {
    pub fn new(center: [f64; 2], r_exploration: f64, r_recovery: f64) -> crate::Result<Self> {
        if !(r_exploration > 0.0 && r_exploration < r_recovery) {
            return Err(crate::Error::Config(format!(
                "zone radii must satisfy 0 < r_exploration < r_recovery (got {r_exploration}, {r_recovery})"
            )));
        }
        Ok(Self { center, r_exploration, r_recovery })
    }

    pub fn distance_from_center(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    pub fn zone_of_point(&self, p: [f64; 2]) -> Zone {
        let d = self.distance_from_center(p);
        if d <= self.r_exploration {
            Zone::Exploration
        } else if d <= self.r_recovery {
            Zone::Recovery
        } else {
            Zone::Outside
        }
    }
}

impl Default for ZoneMap {
    fn default() -> Self {
        Self { center: [0.0, 0.0], r_exploration: 0.5, r_recovery: 0.75 }
    }
}

pub fn zone_of(p: &Pose, z: &ZoneMap) -> Zone {
    z.zone_of_point(p.position())
}

/// Body-frame twist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

/// Source of the commanded body twist for a genotype at substep `k`.
pub trait TwistField: Sync {
    fn twist(&self, g: &Genotype, k: usize) -> Twist;
}

/// Per-channel random Fourier features.
#[derive(Clone, Debug)]
pub struct FeatureChannel {
    pub amp: [f64; N_FEATURES],
    pub freq: [[f64; GENOTYPE_LEN]; N_FEATURES],
    pub offset: [f64; N_FEATURES],
    pub phase_rate: [f64; N_FEATURES],
}

impl FeatureChannel {
    fn sample(rng: &mut StreamRng) -> Self {
        let mut ch = FeatureChannel {
            amp: [0.0; N_FEATURES],
            freq: [[0.0; GENOTYPE_LEN]; N_FEATURES],
            offset: [0.0; N_FEATURES],
            phase_rate: [0.0; N_FEATURES],
        };
        for j in 0..N_FEATURES {
            ch.amp[j] = rng.sample(StandardNormal);
            for w in ch.freq[j].iter_mut() {
                *w = rng.sample(StandardNormal);
            }
            ch.offset[j] = rng.random::<f64>() * TAU;
            ch.phase_rate[j] = rng.random::<f64>() * TAU;
        }
        ch
    }

    /// Unsquashed channel value `u(g, k)`.
    pub fn raw(&self, g: &Genotype, k: usize) -> f64 {
        let p = g.params();
        let kf = k as f64;
        let mut sum = 0.0;
        for j in 0..N_FEATURES {
            let dot: f64 = self.freq[j].iter().zip(p).map(|(w, x)| w * x).sum();
            sum += self.amp[j] * (dot + self.offset[j] + self.phase_rate[j] * kf).cos();
        }
        sum / (N_FEATURES as f64).sqrt()
    }
}

/// The hidden ground-truth dynamics, fixed by a master seed.
///
/// Parameters are drawn channel by channel (vx, vy, omega); within a channel
/// feature by feature as `amp, freq[0..24], offset, phase_rate`.
#[derive(Clone, Debug)]
pub struct SurrogateTwist {
    pub master_seed: u64,
    pub channels: [FeatureChannel; 3],
}

impl SurrogateTwist {
    pub fn new(master_seed: u64) -> Self {
        let mut rng = substream(master_seed, Stream::Surrogate, 0);
        let channels = std::array::from_fn(|_| FeatureChannel::sample(&mut rng));
        Self { master_seed, channels }
    }
}

impl TwistField for SurrogateTwist {
    fn twist(&self, g: &Genotype, k: usize) -> Twist {
        Twist {
            vx: MAX_LINEAR_SPEED * self.channels[0].raw(g, k).tanh(),
            vy: MAX_LINEAR_SPEED * self.channels[1].raw(g, k).tanh(),
            omega: MAX_ANGULAR_SPEED * self.channels[2].raw(g, k).tanh(),
        }
    }
}

/// Execution noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// m/s, per linear channel.
    pub sigma_v: f64,
    /// rad/s.
    pub sigma_omega: f64,
}

impl NoiseLevels {
    pub const NONE: NoiseLevels = NoiseLevels { sigma_v: 0.0, sigma_omega: 0.0 };
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self { sigma_v: 0.005, sigma_omega: 0.02 }
    }
}

/// One substep, expressed in the episode-start body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; 3],
    /// `k / SUBSTEPS`.
    pub phase: f64,
    pub action: Genotype,
    pub next_state: [f64; 3],
}

impl Transition {
    pub fn delta(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.next_state[i] - self.state[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub start_pose: Pose,
    pub final_pose: Pose,
    /// Final position relative to the start, in the start body frame.
    pub bd: [f64; 2],
    /// Accumulated heading change (unwrapped).
    pub theta_rel: f64,
    pub fitness: f64,
    pub transitions: Vec<Transition>,
    /// Consecutive distinct zones visited at substep boundaries (empty when the
    /// executor has no zone map).
    pub zone_events: Vec<Zone>,
}

impl EpisodeResult {
    /// World poses after every substep.
    pub fn world_trace(&self) -> Vec<Pose> {
        self.transitions.iter().map(|t| self.start_pose.compose(t.next_state)).collect()
    }
}

/// Omnidirectional-task fitness: minus the heading error against the tangent
/// of the circular arc from the origin (facing +x) through `bd`.
pub fn arc_fitness(bd: [f64; 2], theta_rel: f64) -> f64 {
    if bd[0].hypot(bd[1]) < DEGENERATE_BD {
        return 0.0;
    }
    let desired = 2.0 * bd[1].atan2(bd[0]);
    -wrap_angle(theta_rel - desired).abs()
}

/// Anything that can run a controller for one episode from a given pose.
pub trait Environment {
    fn execute(&mut self, start: Pose, g: &Genotype) -> EpisodeResult;
}

/// Integrates one episode of `field` from `start`.
///
/// Per substep: `theta += omega * DT`, then the body-frame velocity is rotated
/// by the updated heading and integrated with step `DT`. Three normal draws are
/// consumed per substep whatever the noise level.
pub fn integrate<F: TwistField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    start: Pose,
    g: &Genotype,
    noise: NoiseLevels,
    zones: Option<&ZoneMap>,
    rng: &mut R,
) -> EpisodeResult {
    let mut rel = [0.0f64; 3];
    let mut transitions = Vec::with_capacity(SUBSTEPS);
    let mut zone_events = Vec::new();
    if let Some(z) = zones {
        zone_events.push(zone_of(&start, z));
    }
    for k in 0..SUBSTEPS {
        let tw = field.twist(g, k);
        let nv: f64 = rng.sample(StandardNormal);
        let nu: f64 = rng.sample(StandardNormal);
        let nw: f64 = rng.sample(StandardNormal);
        let vx = tw.vx + noise.sigma_v * nv;
        let vy = tw.vy + noise.sigma_v * nu;
        let omega = tw.omega + noise.sigma_omega * nw;

        let state = rel;
        rel[2] += omega * DT;
        let (s, c) = rel[2].sin_cos();
        rel[0] += DT * (vx * c - vy * s);
        rel[1] += DT * (vx * s + vy * c);
        transitions.push(Transition {
            state,
            phase: k as f64 / SUBSTEPS as f64,
            action: *g,
            next_state: rel,
        });
        if let Some(z) = zones {
            let zone = zone_of(&start.compose(rel), z);
            if zone_events.last() != Some(&zone) {
                zone_events.push(zone);
            }
        }
    }
    let bd = [rel[0], rel[1]];
    EpisodeResult {
        start_pose: start,
        final_pose: start.compose(rel),
        bd,
        theta_rel: rel[2],
        fitness: arc_fitness(bd, rel[2]),
        transitions,
        zone_events,
    }
}

/// The surrogate robot together with its noise stream.
pub struct SurrogateArena<F: TwistField = SurrogateTwist> {
    pub field: F,
    pub noise: NoiseLevels,
    pub zones: Option<ZoneMap>,
    rng: StreamRng,
}

impl SurrogateArena<SurrogateTwist> {
    pub fn new(master_seed: u64, noise: NoiseLevels, rng: StreamRng) -> Self {
        Self::with_field(SurrogateTwist::new(master_seed), noise, rng)
    }
}

impl<F: TwistField> SurrogateArena<F> {
    pub fn with_field(field: F, noise: NoiseLevels, rng: StreamRng) -> Self {
        Self { field, noise, zones: None, rng }
    }

    pub fn with_zones(mut self, zones: ZoneMap) -> Self {
        self.zones = Some(zones);
        self
    }
}

impl<F: TwistField> Environment for SurrogateArena<F> {
    fn execute(&mut self, start: Pose, g: &Genotype) -> EpisodeResult {
        integrate(&self.field, start, g, self.noise, self.zones.as_ref(), &mut self.rng)
    }
}
