//! The reset-free learning loop.
//!
//! Each cycle either imagines a batch of offspring with the dynamics ensemble
//! and keeps the safe, novel ones (dynamics-aware variants), or mutates real
//! archive members directly. Selected controllers run back to back from the
//! live pose. Whenever the robot ends up in the recovery ring, known
//! behaviours that lead back toward the centre are replayed, and their
//! descriptors are refreshed with an exponential moving average, until the
//! safety margin is restored.

use crate::archive::{AddOutcome, ArchiveMetrics, Solution, UnstructuredArchive};
use crate::arena::{zone_of, Environment, EpisodeResult, Pose, Zone, ZoneMap};
use crate::controller::Genotype;
use crate::dynmodel::{disagreement, imagine_rollout, DynamicsModel, Ensemble, EnsembleConfig, ReplayBuffer, DEFAULT_CAPACITY};
use crate::par::{self, Exec};
use crate::rng::{substream, Stream, StreamRng};
use crate::variation::{iso_line_dd, VariationParams};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Distance from `p` to the closest point outside the exploration disc
/// (0 once outside).
pub fn dist_to_unsafe(p: &Pose, z: &ZoneMap) -> f64 {
    dist_point_to_unsafe(p.position(), z)
}

pub fn dist_point_to_unsafe(p: [f64; 2], z: &ZoneMap) -> f64 {
    (z.r_exploration - z.distance_from_center(p)).max(0.0)
}

/// Running quantities of the exploration parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyState {
    pub beta: f64,
    /// Largest distance-to-unsafe seen over real states so far.
    pub running_max_dist: f64,
}

impl SafetyState {
    pub fn new(beta: f64, initial_dist: f64) -> Result<Self> {
        let s = Self { beta, running_max_dist: initial_dist };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.running_max_dist > self.beta {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "safety buffer beta={} leaves no room: largest distance to the unsafe set is {}",
                self.beta, self.running_max_dist
            )))
        }
    }

    pub fn observe(&mut self, dist: f64) {
        self.running_max_dist = self.running_max_dist.max(dist);
    }
}

/// `(dist(s) - beta) / (max_i dist(s_i) - beta)`.
pub fn epsilon(p: &Pose, z: &ZoneMap, ss: &SafetyState) -> Result<f64> {
    ss.check()?;
    Ok((dist_to_unsafe(p, z) - ss.beta) / (ss.running_max_dist - ss.beta))
}

/// Exponential moving average; exact at `alpha` 0 and 1 and at fixed points.
pub fn ema(old: f64, new: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        old
    } else if alpha == 1.0 {
        new
    } else {
        old + alpha * (new - old)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[serde(rename = "rfqd")]
    RfQd,
    #[serde(rename = "noda")]
    NoDa,
    #[serde(rename = "norecovery")]
    NoRecovery,
    #[serde(rename = "mapelites")]
    MapElites,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::RfQd, Ablation::NoDa, Ablation::NoRecovery, Ablation::MapElites];

    pub fn dynamics_awareness(self) -> bool {
        matches!(self, Ablation::RfQd | Ablation::NoRecovery)
    }

    pub fn recovery(self) -> bool {
        matches!(self, Ablation::RfQd | Ablation::NoDa)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::RfQd => "rfqd",
            Ablation::NoDa => "noda",
            Ablation::NoRecovery => "norecovery",
            Ablation::MapElites => "mapelites",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "rfqd" => Some(Ablation::RfQd),
            "noda" | "rfqdnoda" => Some(Ablation::NoDa),
            "norecovery" | "rfqdnorecovery" => Some(Ablation::NoRecovery),
            "mapelites" => Some(Ablation::MapElites),
            _ => None,
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ranking applied to the safe imagined candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prioritisation {
    #[default]
    Novelty,
    Disagreement,
    Safety,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dynamics_awareness: bool,
    pub recovery_enabled: bool,
    pub eval_budget: usize,
    pub init_controllers: usize,
    pub imagination_iters: usize,
    pub batch_per_cycle: usize,
    pub train_every: usize,
    pub alpha: f64,
    pub beta: f64,
    pub archive_l: f64,
    pub novelty_k: usize,
    pub prioritisation: Prioritisation,
    pub variation: VariationParams,
    pub ensemble: EnsembleConfig,
    pub buffer_capacity: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dynamics_awareness: true,
            recovery_enabled: true,
            eval_budget: 1000,
            init_controllers: 10,
            imagination_iters: 200,
            batch_per_cycle: 10,
            train_every: 10,
            alpha: 0.8,
            beta: 0.3,
            archive_l: 0.05,
            novelty_k: 15,
            prioritisation: Prioritisation::Novelty,
            variation: VariationParams::default(),
            ensemble: EnsembleConfig::default(),
            buffer_capacity: DEFAULT_CAPACITY,
            seed: 1,
            exec: Exec::default(),
        }
    }
}

impl RunConfig {
    pub fn for_ablation(mut self, a: Ablation) -> Self {
        self.dynamics_awareness = a.dynamics_awareness();
        self.recovery_enabled = a.recovery();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidValue { key: "update.alpha".into(), reason: "must lie in [0, 1]".into() });
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidValue { key: "safety.beta".into(), reason: "must be non-negative".into() });
        }
        if self.ensemble.members == 0 {
            return Err(Error::InvalidValue { key: "model.members".into(), reason: "need at least one member".into() });
        }
        if self.batch_per_cycle == 0 {
            return Err(Error::InvalidValue { key: "run.batch_per_cycle".into(), reason: "must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    BudgetExhausted,
    LeftRecoveryZone,
    InitFailure,
}

/// Why a real execution happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Init,
    Explore,
    /// Safe set was empty; a fresh random genotype ran instead.
    Fallback,
    Recovery,
}

/// Per-evaluation metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based count of real executions so far.
    pub eval: usize,
    pub kind: EvalKind,
    pub size: usize,
    pub coverage: f64,
    pub max_fitness: f64,
    pub qd_score: f64,
    pub pose: Pose,
    pub zone: Zone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub real_evals_used: usize,
    pub termination: Termination,
    pub dynamics_awareness: bool,
    pub recovery_enabled: bool,
    pub seed: u64,
    pub zones: ZoneMap,
    pub train_calls: usize,
    pub recovery_evals: usize,
    pub fallback_evals: usize,
    pub history: Vec<EvalRecord>,
    /// Start pose followed by the pose after every execution.
    pub pose_trace: Vec<Pose>,
}

impl RunReport {
    pub fn final_metrics(&self) -> Option<ArchiveMetrics> {
        self.history.last().map(|r| ArchiveMetrics {
            size: r.size,
            coverage: r.coverage,
            max_fitness: r.max_fitness,
            qd_score: r.qd_score,
        })
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub archive: UnstructuredArchive,
    pub ensemble: Option<Ensemble>,
    /// World poses at every substep, one entry per execution.
    pub trajectories: Vec<Vec<Pose>>,
}

/// Runs `iters` rounds of select / vary / imagine / add on `imagined`.
/// Returns the ids allocated this phase, in allocation order.
#[allow(clippy::too_many_arguments)]
pub fn imagination_phase<M: DynamicsModel + ?Sized>(
    model: &M,
    imagined: &mut UnstructuredArchive,
    iters: usize,
    variation: &VariationParams,
    var_rng: &mut StreamRng,
    member_rng: &mut StreamRng,
    next_id: &mut u64,
) -> Vec<u64> {
    let mut fresh = Vec::with_capacity(iters);
    for _ in 0..iters {
        if imagined.is_empty() {
            break;
        }
        let n = imagined.len();
        let x = imagined.solutions()[var_rng.random_range(0..n)].genotype;
        let y = imagined.solutions()[var_rng.random_range(0..n)].genotype;
        let child = iso_line_dd(&x, &y, variation, var_rng);
        let member = member_rng.random_range(0..model.n_members());
        let im = imagine_rollout(model, &child, member);
        let id = *next_id;
        *next_id += 1;
        fresh.push(id);
        imagined.try_add(Solution { id, genotype: child, bd: im.bd, fitness: im.fitness, n_evals: 0 });
    }
    fresh
}

/// World position reached by replaying a descriptor from `pose`.
pub fn predicted_arrival(pose: &Pose, bd: [f64; 2]) -> [f64; 2] {
    pose.transform_point(bd)
}

/// Safe, prioritised subset of this cycle's imagined solutions.
///
/// `fresh` lists the ids created during the imagination phase; those still
/// present in `imagined` are the candidates. A candidate is safe when its
/// predicted arrival lies strictly inside the exploration disc.
#[allow(clippy::too_many_arguments)]
pub fn select_for_execution<M: DynamicsModel + ?Sized>(
    imagined: &UnstructuredArchive,
    fresh: &[u64],
    real: &UnstructuredArchive,
    pose: &Pose,
    zones: &ZoneMap,
    batch: usize,
    prioritisation: Prioritisation,
    model: &M,
    exec: Exec,
) -> Vec<Solution> {
    let safe: Vec<&Solution> = fresh
        .iter()
        .filter_map(|id| imagined.get(*id))
        .filter(|s| dist_point_to_unsafe(predicted_arrival(pose, s.bd), zones) > 0.0)
        .collect();
    let scores = par::map(exec, &safe, |s| match prioritisation {
        Prioritisation::Novelty => real.novelty(s.bd),
        Prioritisation::Disagreement => disagreement(model, &s.genotype, Exec::Sequential),
        Prioritisation::Safety => dist_point_to_unsafe(predicted_arrival(pose, s.bd), zones),
    });
    let mut order: Vec<usize> = (0..safe.len()).collect();
    // Descending score; stable, so equal scores keep allocation order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.into_iter().take(batch).map(|i| safe[i].clone()).collect()
}

/// Archive member whose replay from `pose` is predicted to end closest to
/// the zone centre.
pub fn recovery_step<'a>(real: &'a UnstructuredArchive, pose: &Pose, zones: &ZoneMap) -> Result<&'a Solution> {
    let mut best: Option<(&Solution, f64)> = None;
    for s in real.solutions() {
        let d = zones.distance_from_center(predicted_arrival(pose, s.bd));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((s, d));
        }
    }
    best.map(|(s, _)| s).ok_or(Error::EmptyArchive)
}

/// Folds a fresh execution of archive member `id` into its fitness and
/// descriptor, then puts it back through the admission rule.
pub fn update_controller(real: &mut UnstructuredArchive, id: u64, f_new: f64, bd_new: [f64; 2], alpha: f64) -> Result<AddOutcome> {
    let mut s = real.remove(id)?;
    s.fitness = ema(s.fitness, f_new, alpha);
    s.bd = [ema(s.bd[0], bd_new[0], alpha), ema(s.bd[1], bd_new[1], alpha)];
    s.n_evals += 1;
    Ok(real.try_add(s))
}

/// Control flow signal after a real execution.
enum Flow {
    Continue,
    Stop(Termination),
}

struct Loop<'a, E: Environment> {
    cfg: &'a RunConfig,
    env: &'a mut E,
    zones: &'a ZoneMap,
    pose: Pose,
    safety: SafetyState,
    archive: UnstructuredArchive,
    buffer: ReplayBuffer,
    ensemble: Option<Ensemble>,
    var_rng: StreamRng,
    member_rng: StreamRng,
    next_id: u64,
    evals: usize,
    evals_at_train: Option<usize>,
    train_calls: usize,
    recovery_evals: usize,
    fallback_evals: usize,
    history: Vec<EvalRecord>,
    pose_trace: Vec<Pose>,
    trajectories: Vec<Vec<Pose>>,
}

impl<E: Environment> Loop<'_, E> {
    fn execute(&mut self, g: &Genotype, kind: EvalKind) -> EpisodeResult {
        let r = self.env.execute(self.pose, g);
        self.pose = r.final_pose;
        self.evals += 1;
        self.buffer.extend(r.transitions.iter().cloned());
        self.safety.observe(dist_to_unsafe(&self.pose, self.zones));
        self.trajectories.push(r.world_trace());
        match kind {
            EvalKind::Recovery => self.recovery_evals += 1,
            EvalKind::Fallback => self.fallback_evals += 1,
            _ => {}
        }
        r
    }

    fn record(&mut self, kind: EvalKind) {
        let m = self.archive.metrics();
        self.history.push(EvalRecord {
            eval: self.evals,
            kind,
            size: m.size,
            coverage: m.coverage,
            max_fitness: m.max_fitness,
            qd_score: m.qd_score,
            pose: self.pose,
            zone: zone_of(&self.pose, self.zones),
        });
        self.pose_trace.push(self.pose);
    }

    fn new_solution(&mut self, g: Genotype, r: &EpisodeResult) -> Solution {
        let id = self.next_id;
        self.next_id += 1;
        Solution { id, genotype: g, bd: r.bd, fitness: r.fitness, n_evals: 1 }
    }

    /// Executes a new controller and offers it to the archive.
    fn explore(&mut self, g: Genotype, kind: EvalKind) -> Flow {
        let r = self.execute(&g, kind);
        let s = self.new_solution(g, &r);
        self.archive.try_add(s);
        self.record(kind);
        self.after_step()
    }

    fn after_step(&self) -> Flow {
        if zone_of(&self.pose, self.zones) == Zone::Outside {
            Flow::Stop(Termination::LeftRecoveryZone)
        } else if self.evals >= self.cfg.eval_budget {
            Flow::Stop(Termination::BudgetExhausted)
        } else {
            Flow::Continue
        }
    }

    fn needs_recovery(&self) -> bool {
        self.cfg.recovery_enabled && zone_of(&self.pose, self.zones) == Zone::Recovery
    }

    /// Replays inward behaviours until the exploration parameter is positive.
    fn recover(&mut self) -> Result<Flow> {
        loop {
            let Ok(sol) = recovery_step(&self.archive, &self.pose, self.zones) else {
                return Ok(Flow::Stop(Termination::InitFailure));
            };
            let (id, g) = (sol.id, sol.genotype);
            let r = self.execute(&g, EvalKind::Recovery);
            update_controller(&mut self.archive, id, r.fitness, r.bd, self.cfg.alpha)?;
            self.record(EvalKind::Recovery);
            if let Flow::Stop(t) = self.after_step() {
                return Ok(Flow::Stop(t));
            }
            if epsilon(&self.pose, self.zones, &self.safety)? > 0.0 {
                return Ok(Flow::Continue);
            }
        }
    }

    fn maybe_train(&mut self) {
        let due = match self.evals_at_train {
            None => true,
            Some(at) => self.evals - at >= self.cfg.train_every,
        };
        if let (true, Some(ens)) = (due, self.ensemble.as_mut()) {
            ens.train(&self.buffer);
            self.evals_at_train = Some(self.evals);
            self.train_calls += 1;
        }
    }

    fn candidates(&mut self) -> Vec<Genotype> {
        if let Some(ens) = self.ensemble.as_ref() {
            let mut imagined = self.archive.clone();
            let fresh = imagination_phase(
                ens,
                &mut imagined,
                self.cfg.imagination_iters,
                &self.cfg.variation,
                &mut self.var_rng,
                &mut self.member_rng,
                &mut self.next_id,
            );
            select_for_execution(
                &imagined,
                &fresh,
                &self.archive,
                &self.pose,
                self.zones,
                self.cfg.batch_per_cycle,
                self.cfg.prioritisation,
                ens,
                self.cfg.exec,
            )
            .into_iter()
            .map(|s| s.genotype)
            .collect()
        } else {
            let n = self.archive.len();
            (0..self.cfg.batch_per_cycle)
                .map(|_| {
                    let x = self.archive.solutions()[self.var_rng.random_range(0..n)].genotype;
                    let y = self.archive.solutions()[self.var_rng.random_range(0..n)].genotype;
                    iso_line_dd(&x, &y, &self.cfg.variation, &mut self.var_rng)
                })
                .collect()
        }
    }

    fn run(&mut self) -> Result<Termination> {
        let init = if self.archive.is_empty() { self.cfg.init_controllers } else { 0 };
        for _ in 0..init.min(self.cfg.eval_budget) {
            let g = Genotype::random(&mut self.var_rng);
            match self.explore(g, EvalKind::Init) {
                Flow::Stop(Termination::LeftRecoveryZone) => return Ok(Termination::InitFailure),
                Flow::Stop(t) => return Ok(t),
                Flow::Continue => {}
            }
        }
        if self.evals >= self.cfg.eval_budget {
            return Ok(Termination::BudgetExhausted);
        }
        loop {
            if self.needs_recovery() {
                if let Flow::Stop(t) = self.recover()? {
                    return Ok(t);
                }
            }
            if self.archive.is_empty() {
                return Ok(Termination::InitFailure);
            }
            self.maybe_train();
            let mut batch = self.candidates();
            let mut kind = EvalKind::Explore;
            if batch.is_empty() {
                batch.push(Genotype::random(&mut self.var_rng));
                kind = EvalKind::Fallback;
            }
            for g in batch {
                if let Flow::Stop(t) = self.explore(g, kind) {
                    return Ok(t);
                }
                // Remaining selections were judged from a pose we no longer hold.
                if self.needs_recovery() {
                    break;
                }
            }
        }
    }
}

/// Runs one reset-free experiment from `start` until the budget is spent or
/// the robot leaves the recovery zone.
pub fn run<E: Environment>(cfg: &RunConfig, env: &mut E, zones: &ZoneMap, start: Pose) -> Result<RunOutcome> {
    run_from(cfg, env, zones, start, UnstructuredArchive::new(cfg.archive_l, cfg.novelty_k))
}

/// Like [`run`] but continues from an existing real archive. A non-empty
/// archive replaces the random initialisation phase.
pub fn run_from<E: Environment>(
    cfg: &RunConfig,
    env: &mut E,
    zones: &ZoneMap,
    start: Pose,
    archive: UnstructuredArchive,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let next_id = archive.solutions().iter().map(|s| s.id + 1).max().unwrap_or(0);
    let safety = SafetyState::new(cfg.beta, dist_to_unsafe(&start, zones))?;
    let ensemble = cfg.dynamics_awareness.then(|| Ensemble::new(cfg.ensemble, cfg.seed).with_exec(cfg.exec));
    let mut lp = Loop {
        cfg,
        env,
        zones,
        pose: start,
        safety,
        archive,
        buffer: ReplayBuffer::new(cfg.buffer_capacity),
        ensemble,
        var_rng: substream(cfg.seed, Stream::Variation, 0),
        member_rng: substream(cfg.seed, Stream::MemberChoice, 0),
        next_id,
        evals: 0,
        evals_at_train: None,
        train_calls: 0,
        recovery_evals: 0,
        fallback_evals: 0,
        history: Vec::new(),
        pose_trace: vec![start],
        trajectories: Vec::new(),
    };
    let termination = lp.run()?;
    log::info!(
        "run finished: {:?} after {} evaluations ({} recovery, {} model fits)",
        termination,
        lp.evals,
        lp.recovery_evals,
        lp.train_calls
    );
    Ok(RunOutcome {
        report: RunReport {
            real_evals_used: lp.evals,
            termination,
            dynamics_awareness: cfg.dynamics_awareness,
            recovery_enabled: cfg.recovery_enabled,
            seed: cfg.seed,
            zones: *zones,
            train_calls: lp.train_calls,
            recovery_evals: lp.recovery_evals,
            fallback_evals: lp.fallback_evals,
            history: lp.history,
            pose_trace: lp.pose_trace,
        },
        archive: lp.archive,
        ensemble: lp.ensemble,
        trajectories: lp.trajectories,
    })
}

#[cfg(test)]
#[path = "rfqd_tests.rs"]
mod tests;
