//! Learned forward dynamics: a bootstrapped ensemble of probabilistic nets
//! predicting per-substep state deltas, and the imagined rollouts built on it.

mod buffer;
pub mod checkpoint;
mod ensemble;
pub mod net;

pub use buffer::{ReplayBuffer, DEFAULT_CAPACITY};
pub use ensemble::{model_input, Ensemble, EnsembleConfig, Member, Normalizer, TrainReport, INPUT_DIM, TARGET_DIM};
pub use net::ProbabilisticNet;

use crate::arena::{arc_fitness, TwistField, DT, SUBSTEPS};
use crate::controller::Genotype;
use crate::par::{self, Exec};
use rand::Rng;

/// Anything that predicts the next-state delta of a substep, possibly with
/// several interchangeable members.
pub trait DynamicsModel: Sync {
    fn n_members(&self) -> usize;

    /// Mean delta of `(x, y, theta)` in the episode-start frame.
    fn predict_delta(&self, member: usize, state: [f64; 3], phase: f64, g: &Genotype) -> [f64; 3];
}

/// Outcome of a rollout through a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Imagined {
    pub bd: [f64; 2],
    pub theta_rel: f64,
    pub fitness: f64,
}

/// Feeds the model its own predictions for a full episode, starting from the
/// origin, with a single member throughout.
pub fn imagine_rollout<M: DynamicsModel + ?Sized>(model: &M, g: &Genotype, member: usize) -> Imagined {
    let mut s = [0.0; 3];
    for k in 0..SUBSTEPS {
        let d = model.predict_delta(member, s, k as f64 / SUBSTEPS as f64, g);
        for i in 0..3 {
            s[i] += d[i];
        }
    }
    let bd = [s[0], s[1]];
    Imagined { bd, theta_rel: s[2], fitness: arc_fitness(bd, s[2]) }
}

pub fn pick_member<R: Rng + ?Sized>(model: &(impl DynamicsModel + ?Sized), rng: &mut R) -> usize {
    rng.random_range(0..model.n_members())
}

/// Trace of the (population) covariance of the members' final descriptors.
pub fn disagreement<M: DynamicsModel + ?Sized>(model: &M, g: &Genotype, exec: Exec) -> f64 {
    let n = model.n_members();
    let finals = par::map_range(exec, n, |j| imagine_rollout(model, g, j).bd);
    let mut mean = [0.0; 2];
    for b in &finals {
        mean[0] += b[0] / n as f64;
        mean[1] += b[1] / n as f64;
    }
    finals.iter().map(|b| (b[0] - mean[0]).powi(2) + (b[1] - mean[1]).powi(2)).sum::<f64>() / n as f64
}

/// Noise-free ground truth posing as a one-member model. Its rollouts agree
/// bit for bit with noise-free arena executions.
pub struct PerfectModel<'a, F: TwistField>(pub &'a F);

impl<F: TwistField> DynamicsModel for PerfectModel<'_, F> {
    fn n_members(&self) -> usize {
        1
    }

    fn predict_delta(&self, _member: usize, state: [f64; 3], phase: f64, g: &Genotype) -> [f64; 3] {
        let k = (phase * SUBSTEPS as f64).round() as usize;
        let tw = self.0.twist(g, k);
        let theta = state[2] + tw.omega * DT;
        let (s, c) = theta.sin_cos();
        let x = state[0] + DT * (tw.vx * c - tw.vy * s);
        let y = state[1] + DT * (tw.vx * s + tw.vy * c);
        [x - state[0], y - state[1], theta - state[2]]
    }
}
