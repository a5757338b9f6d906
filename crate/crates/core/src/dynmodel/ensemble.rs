use super::buffer::ReplayBuffer;
use super::net::{Adam, ProbabilisticNet, Scratch};
use super::DynamicsModel;
use crate::arena::Transition;
use crate::controller::{Genotype, GENOTYPE_LEN};
use crate::par::{self, Exec};
use crate::rng::{substream, Stream, StreamRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Relative pose (3) + phase (1) + genotype (24).
pub const INPUT_DIM: usize = 3 + 1 + GENOTYPE_LEN;
/// Predicted state delta.
pub const TARGET_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 4, hidden: 64, hidden_layers: 2, lr: 1e-3, batch_size: 64, epochs: 20 }
    }
}

impl EnsembleConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![INPUT_DIM];
        s.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        s.push(2 * TARGET_DIM);
        s
    }
}

pub fn model_input(state: [f64; 3], phase: f64, g: &Genotype) -> [f64; INPUT_DIM] {
    let mut x = [0.0; INPUT_DIM];
    x[..3].copy_from_slice(&state);
    x[3] = phase;
    x[4..].copy_from_slice(g.params());
    x
}

/// Per-feature affine standardization of inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

fn column_stats(rows: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() / dim;
    let mut mean = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).map(|s| if s < MIN_STD { 1.0 } else { s }).collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            in_mean: vec![0.0; INPUT_DIM],
            in_std: vec![1.0; INPUT_DIM],
            out_mean: vec![0.0; TARGET_DIM],
            out_std: vec![1.0; TARGET_DIM],
        }
    }

    fn fit(inputs: &[f64], targets: &[f64]) -> Self {
        let (in_mean, in_std) = column_stats(inputs, INPUT_DIM);
        let (out_mean, out_std) = column_stats(targets, TARGET_DIM);
        Self { in_mean, in_std, out_mean, out_std }
    }

    fn apply_input(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.in_mean).zip(&self.in_std) {
            *v = (*v - m) / s;
        }
    }

    fn apply_target(&self, t: &mut [f64]) {
        for ((v, m), s) in t.iter_mut().zip(&self.out_mean).zip(&self.out_std) {
            *v = (*v - m) / s;
        }
    }

    fn invert_target(&self, t: &mut [f64]) {
        for ((v, m), s) in t.iter_mut().zip(&self.out_mean).zip(&self.out_std) {
            *v = *v * s + m;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Member {
    pub net: ProbabilisticNet,
    adam: Adam,
    batch_rng: StreamRng,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Set when the buffer was empty and nothing happened.
    pub skipped: bool,
    /// Mean minibatch loss per epoch, per member.
    pub epoch_losses: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn final_losses(&self) -> Vec<f64> {
        self.epoch_losses.iter().map(|l| l.last().copied().unwrap_or(f64::NAN)).collect()
    }
}

/// Normalized design matrix for a set of transitions.
fn design(transitions: &[&Transition], norm: Option<&Normalizer>) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(transitions.len() * INPUT_DIM);
    let mut t = Vec::with_capacity(transitions.len() * TARGET_DIM);
    for tr in transitions {
        let mut row = model_input(tr.state, tr.phase, &tr.action);
        let mut d = tr.delta();
        if let Some(n) = norm {
            n.apply_input(&mut row);
            n.apply_target(&mut d);
        }
        x.extend_from_slice(&row);
        t.extend_from_slice(&d);
    }
    (x, t)
}

/// Bootstrapped ensemble of probabilistic networks.
///
/// Member `j` draws its initial weights from `(seed, ModelInit, j)` and its
/// bootstrap/minibatch order from `(seed, ModelBatching, j)`, so a member's
/// history does not depend on how many siblings it has.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub config: EnsembleConfig,
    pub seed: u64,
    pub members: Vec<Member>,
    pub norm: Normalizer,
    pub exec: Exec,
}

impl Ensemble {
    pub fn new(config: EnsembleConfig, seed: u64) -> Self {
        let sizes = config.layer_sizes();
        let members = (0..config.members)
            .map(|j| Member {
                net: ProbabilisticNet::new(&sizes, &mut substream(seed, Stream::ModelInit, j as u32)),
                adam: Adam::new(0, config.lr),
                batch_rng: substream(seed, Stream::ModelBatching, j as u32),
            })
            .map(|mut m| {
                m.adam = Adam::new(m.net.params().len(), config.lr);
                m
            })
            .collect();
        Self { config, seed, members, norm: Normalizer::identity(), exec: Exec::default() }
    }

    /// Rebuilds an inference-only ensemble (fresh optimizer state).
    pub fn from_parts(config: EnsembleConfig, seed: u64, nets: Vec<ProbabilisticNet>, norm: Normalizer) -> Self {
        let members = nets
            .into_iter()
            .enumerate()
            .map(|(j, net)| Member {
                adam: Adam::new(net.params().len(), config.lr),
                net,
                batch_rng: substream(seed, Stream::ModelBatching, j as u32),
            })
            .collect();
        Self { config, seed, members, norm, exec: Exec::default() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn train(&mut self, buffer: &ReplayBuffer) -> TrainReport {
        let epochs = self.config.epochs;
        self.train_epochs(buffer, epochs)
    }

    /// Refits the normalizer on the whole buffer, then trains every member on
    /// its own bootstrap resample for `epochs` passes.
    pub fn train_epochs(&mut self, buffer: &ReplayBuffer, epochs: usize) -> TrainReport {
        if buffer.is_empty() {
            log::warn!("dynamics model training skipped: replay buffer is empty");
            return TrainReport { skipped: true, epoch_losses: vec![Vec::new(); self.members.len()] };
        }
        let all: Vec<&Transition> = buffer.iter().collect();
        let (raw_x, raw_t) = design(&all, None);
        self.norm = Normalizer::fit(&raw_x, &raw_t);
        let (x, t) = design(&all, Some(&self.norm));
        let n = all.len();
        let batch_size = self.config.batch_size.max(1);

        let mut losses = vec![Vec::new(); self.members.len()];
        let mut work: Vec<(&mut Member, &mut Vec<f64>)> = self.members.iter_mut().zip(losses.iter_mut()).collect();
        par::for_each_mut(self.exec, &mut work, |_, (member, log)| {
            let mut idx: Vec<usize> = (0..n).map(|_| member.batch_rng.random_range(0..n)).collect();
            let mut scratch = Scratch::default();
            let mut grad = vec![0.0; member.net.params().len()];
            let mut bx = Vec::with_capacity(batch_size * INPUT_DIM);
            let mut bt = Vec::with_capacity(batch_size * TARGET_DIM);
            for _ in 0..epochs {
                shuffle(&mut idx, &mut member.batch_rng);
                let mut sum = 0.0;
                let mut batches = 0;
                for chunk in idx.chunks(batch_size) {
                    bx.clear();
                    bt.clear();
                    for &i in chunk {
                        bx.extend_from_slice(&x[i * INPUT_DIM..(i + 1) * INPUT_DIM]);
                        bt.extend_from_slice(&t[i * TARGET_DIM..(i + 1) * TARGET_DIM]);
                    }
                    sum += member.net.loss_and_grad(&bx, &bt, &mut grad, &mut scratch);
                    member.adam.step(member.net.params_mut(), &grad);
                    batches += 1;
                }
                log.push(sum / batches as f64);
            }
        });
        TrainReport { skipped: false, epoch_losses: losses }
    }

    /// Per-member loss on `transitions`, under the current normalizer.
    pub fn eval_loss(&self, transitions: &[Transition]) -> Vec<f64> {
        let refs: Vec<&Transition> = transitions.iter().collect();
        let (x, t) = design(&refs, Some(&self.norm));
        par::map(self.exec, &self.members, |m| m.net.nll_loss(&x, &t, &mut Scratch::default()))
    }
}

/// Fisher-Yates, consuming one draw per position.
fn shuffle(v: &mut [usize], rng: &mut StreamRng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

impl DynamicsModel for Ensemble {
    fn n_members(&self) -> usize {
        self.members.len()
    }

    fn predict_delta(&self, member: usize, state: [f64; 3], phase: f64, g: &Genotype) -> [f64; 3] {
        let mut x = model_input(state, phase, g);
        self.norm.apply_input(&mut x);
        let mut mean = [0.0; TARGET_DIM];
        self.members[member].net.predict_mean(&x, &mut Scratch::default(), &mut mean);
        self.norm.invert_target(&mut mean);
        mean
    }
}
