//! Open-loop sinusoidal gait controller.
//!
//! A genotype holds 24 normalized values: for each of the four legs, one
//! (amplitude, phase, duty) triple drives the hip and a second triple drives
//! the knee and the foot together.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const GENOTYPE_LEN: usize = 24;
pub const N_LEGS: usize = 4;
pub const N_JOINTS: usize = 12;
/// Gait frequency in Hz.
pub const GAIT_FREQ: f64 = 1.0;
/// Duration of one controller execution, in seconds.
pub const EPISODE_SECONDS: f64 = 5.0;

/// 24 gains in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; GENOTYPE_LEN]", into = "[f64; GENOTYPE_LEN]")]
pub struct Genotype([f64; GENOTYPE_LEN]);

impl Genotype {
    /// Clamps every component into `[0, 1]`. NaN maps to 0.
    pub fn new(params: [f64; GENOTYPE_LEN]) -> Self {
        Self(params.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn from_slice(params: &[f64]) -> Option<Self> {
        let arr: [f64; GENOTYPE_LEN] = params.try_into().ok()?;
        Some(Self::new(arr))
    }

    pub fn zeros() -> Self {
        Self([0.0; GENOTYPE_LEN])
    }

    pub fn filled(v: f64) -> Self {
        Self::new([v; GENOTYPE_LEN])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = [0.0; GENOTYPE_LEN];
        for v in p.iter_mut() {
            *v = rng.random::<f64>();
        }
        Self(p)
    }

    pub fn params(&self) -> &[f64; GENOTYPE_LEN] {
        &self.0
    }
}

impl From<[f64; GENOTYPE_LEN]> for Genotype {
    fn from(p: [f64; GENOTYPE_LEN]) -> Self {
        Self::new(p)
    }
}

impl From<Genotype> for [f64; GENOTYPE_LEN] {
    fn from(g: Genotype) -> Self {
        g.0
    }
}

/// One duty-cycled sine channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointSignal {
    pub amplitude: f64,
    /// Fraction of a period.
    pub phase: f64,
    /// Fraction of the period spent in the positive half-wave.
    pub duty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegParams {
    pub hip: JointSignal,
    /// Shared by the knee and the foot.
    pub kneefoot: JointSignal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaitParams {
    pub legs: [LegParams; N_LEGS],
}

fn signal_at(p: &[f64]) -> JointSignal {
    JointSignal { amplitude: p[0], phase: p[1], duty: p[2] }
}

/// Layout: `[leg0.hip.(A,phi,d), leg0.kneefoot.(A,phi,d), leg1.hip.., ...]`.
pub fn decode(g: &Genotype) -> GaitParams {
    let p = g.params();
    let legs = std::array::from_fn(|leg| LegParams {
        hip: signal_at(&p[leg * 6..leg * 6 + 3]),
        kneefoot: signal_at(&p[leg * 6 + 3..leg * 6 + 6]),
    });
    GaitParams { legs }
}

pub fn encode(gait: &GaitParams) -> Genotype {
    let mut p = [0.0; GENOTYPE_LEN];
    for (leg, lp) in gait.legs.iter().enumerate() {
        for (j, s) in [lp.hip, lp.kneefoot].iter().enumerate() {
            let base = leg * 6 + j * 3;
            p[base] = s.amplitude;
            p[base + 1] = s.phase;
            p[base + 2] = s.duty;
        }
    }
    Genotype::new(p)
}

/// Duty-cycled sine: the positive half-wave is squeezed into the first `duty`
/// of the period and the negative half into the rest. `duty` of 0 or 1 leaves
/// only one half-wave, and the empty branch is never taken.
pub fn signal_value(s: &JointSignal, t: f64, freq: f64) -> f64 {
    let p = (t * freq + s.phase).rem_euclid(1.0);
    let d = s.duty;
    if p < d {
        s.amplitude * (PI * p / d).sin()
    } else {
        -s.amplitude * (PI * (p - d) / (1.0 - d)).sin()
    }
}

/// Normalized angle commands for the 12 joints at time `t`:
/// `[hip, knee, foot]` per leg.
pub fn joint_commands(g: &Genotype, t: f64) -> [f64; N_JOINTS] {
    let gait = decode(g);
    let mut out = [0.0; N_JOINTS];
    for (leg, lp) in gait.legs.iter().enumerate() {
        let hip = signal_value(&lp.hip, t, GAIT_FREQ);
        let kf = signal_value(&lp.kneefoot, t, GAIT_FREQ);
        out[leg * 3] = hip;
        out[leg * 3 + 1] = kf;
        out[leg * 3 + 2] = kf;
    }
    out
}
