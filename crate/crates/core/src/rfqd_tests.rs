use super::*;
use crate::arena::{arc_fitness, integrate, NoiseLevels, SurrogateArena, SurrogateTwist, Transition};
use crate::dynmodel::PerfectModel;
use crate::archive::bd_distance;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

fn zones() -> ZoneMap {
    ZoneMap::default()
}

fn sol(id: u64, bd: [f64; 2], fitness: f64) -> Solution {
    Solution { id, genotype: Genotype::zeros(), bd, fitness, n_evals: 1 }
}

#[test]
fn dist_to_unsafe_examples() {
    let z = zones();
    assert_eq!(dist_to_unsafe(&Pose::default(), &z), 0.5);
    assert_eq!(dist_to_unsafe(&Pose::new(0.5, 0.0, 0.0), &z), 0.0);
    assert!((dist_to_unsafe(&Pose::new(0.0, 0.3, 0.0), &z) - 0.2).abs() < 1e-15);
    assert_eq!(dist_to_unsafe(&Pose::new(0.9, 0.0, 0.0), &z), 0.0);
}

#[test]
fn epsilon_examples() {
    let z = zones();
    let ss = SafetyState::new(0.3, 0.5).unwrap();
    assert!((epsilon(&Pose::default(), &z, &ss).unwrap() - 1.0).abs() < 1e-12);
    assert!(epsilon(&Pose::new(0.2, 0.0, 0.0), &z, &ss).unwrap().abs() < 1e-12);
    assert!((epsilon(&Pose::new(0.6, 0.0, 0.0), &z, &ss).unwrap() + 1.5).abs() < 1e-12);
    assert!(SafetyState::new(0.3, 0.3).is_err());
    let bad = SafetyState { beta: 0.5, running_max_dist: 0.4 };
    assert!(matches!(epsilon(&Pose::default(), &z, &bad), Err(Error::Config(_))));
}

#[test]
fn ema_examples() {
    assert!((ema(-1.0, -0.5, 0.8) + 0.6).abs() < 1e-12);
    assert_eq!(ema(-1.0, -0.5, 0.0), -1.0);
    assert_eq!(ema(-1.0, -0.5, 1.0), -0.5);
    let mut a = UnstructuredArchive::new(0.05, 15);
    a.try_add(sol(1, [0.1, 0.0], -1.0));
    update_controller(&mut a, 1, -0.5, [0.2, 0.1], 0.8).unwrap();
    let s = a.get(1).unwrap().clone();
    assert!((s.fitness + 0.6).abs() < 1e-12);
    assert!((s.bd[0] - 0.18).abs() < 1e-12 && (s.bd[1] - 0.08).abs() < 1e-12);
    assert_eq!(s.n_evals, 2);
    update_controller(&mut a, 1, -3.0, [0.5, 0.5], 0.0).unwrap();
    let t = a.get(1).unwrap();
    assert_eq!((t.fitness, t.bd), (s.fitness, s.bd));
    assert!(update_controller(&mut a, 99, 0.0, [0.0, 0.0], 0.5).is_err());
}

#[test]
fn updated_controller_can_be_dropped() {
    let mut a = UnstructuredArchive::new(0.05, 15);
    a.try_add(sol(1, [0.0, 0.0], -0.1));
    a.try_add(sol(2, [0.2, 0.0], -1.0));
    // Member 2 now behaves like member 1 but worse: it loses the competition.
    let out = update_controller(&mut a, 2, -2.0, [0.0, 0.0], 1.0).unwrap();
    assert_eq!(out, AddOutcome::Rejected);
    assert_eq!(a.len(), 1);
}

proptest! {
    #[test]
    fn ema_fixed_point(f in -PI..0.0, bx in -0.5f64..0.5, by in -0.5f64..0.5, alpha in 0.0f64..=1.0) {
        let mut a = UnstructuredArchive::new(0.05, 15);
        a.try_add(sol(7, [bx, by], f));
        update_controller(&mut a, 7, f, [bx, by], alpha).unwrap();
        let s = a.get(7).unwrap();
        prop_assert_eq!(s.fitness, f);
        prop_assert_eq!(s.bd, [bx, by]);
    }

    #[test]
    fn epsilon_sign_and_normalisation(x in -1.0f64..1.0, y in -1.0f64..1.0, beta in 0.0f64..0.45, extra in 0.0f64..0.05) {
        let z = zones();
        let p = Pose::new(x, y, 0.0);
        let ss = SafetyState::new(beta, 0.45 + extra).unwrap();
        let e = epsilon(&p, &z, &ss).unwrap();
        if e > 0.0 {
            prop_assert_eq!(zone_of(&p, &z), Zone::Exploration);
        }
        if zone_of(&p, &z) != Zone::Exploration {
            prop_assert!(e <= 0.0);
        }
        let d = dist_to_unsafe(&p, &z);
        if d > beta {
            let at_max = SafetyState::new(beta, d).unwrap();
            prop_assert_eq!(epsilon(&p, &z, &at_max).unwrap(), 1.0);
            let mut grown = at_max;
            let mut last = 1.0;
            for step in 1..10 {
                grown.observe(d + step as f64 * 0.01);
                let now = epsilon(&p, &z, &grown).unwrap();
                prop_assert!(now <= last);
                last = now;
            }
        }
    }
}

#[test]
fn running_max_never_decreases() {
    let mut ss = SafetyState::new(0.3, 0.5).unwrap();
    for d in [0.1, 0.6, 0.2, 0.0, 0.55] {
        let before = ss.running_max_dist;
        ss.observe(d);
        assert!(ss.running_max_dist >= before);
    }
    assert_eq!(ss.running_max_dist, 0.6);
}

fn seeded_archive(n: usize, seed: u64) -> UnstructuredArchive {
    let field = SurrogateTwist::new(42);
    let mut rng = substream(seed, Stream::Variation, 5);
    let mut a = UnstructuredArchive::new(0.05, 15);
    for i in 0..n {
        let g = Genotype::random(&mut rng);
        let r = integrate(&field, Pose::default(), &g, NoiseLevels::NONE, None, &mut substream(0, Stream::ArenaNoise, 0));
        a.try_add(Solution { id: i as u64, genotype: g, bd: r.bd, fitness: r.fitness, n_evals: 1 });
    }
    a
}

#[test]
fn imagination_with_zero_iterations_is_a_copy() {
    let field = SurrogateTwist::new(42);
    let real = seeded_archive(10, 1);
    let mut imagined = real.clone();
    let mut next = 100;
    let fresh = imagination_phase(
        &PerfectModel(&field),
        &mut imagined,
        0,
        &VariationParams::default(),
        &mut substream(1, Stream::Variation, 0),
        &mut substream(1, Stream::MemberChoice, 0),
        &mut next,
    );
    assert!(fresh.is_empty());
    assert_eq!(imagined, real);
}

#[test]
fn perfect_model_imagination_matches_reality() {
    let field = SurrogateTwist::new(42);
    let real = seeded_archive(10, 2);
    let mut imagined = real.clone();
    let mut next = 100;
    let fresh = imagination_phase(
        &PerfectModel(&field),
        &mut imagined,
        50,
        &VariationParams::default(),
        &mut substream(2, Stream::Variation, 0),
        &mut substream(2, Stream::MemberChoice, 0),
        &mut next,
    );
    assert_eq!(fresh.len(), 50);
    assert_eq!(real, seeded_archive(10, 2), "real archive untouched");
    for id in fresh {
        if let Some(s) = imagined.get(id) {
            let r = integrate(&field, Pose::new(0.3, -0.1, 2.0), &s.genotype, NoiseLevels::NONE, None, &mut substream(0, Stream::ArenaNoise, 0));
            assert_eq!(s.bd, r.bd);
            assert_eq!(s.fitness, r.fitness);
            assert_eq!(s.n_evals, 0);
        }
    }
}

#[test]
fn imagined_archive_grows_with_iterations() {
    let field = SurrogateTwist::new(42);
    let real = seeded_archive(10, 3);
    let mut last = real.len();
    for iters in [0, 10, 50, 200] {
        let mut imagined = real.clone();
        let mut next = 100;
        imagination_phase(
            &PerfectModel(&field),
            &mut imagined,
            iters,
            &VariationParams::default(),
            &mut substream(3, Stream::Variation, 0),
            &mut substream(3, Stream::MemberChoice, 0),
            &mut next,
        );
        assert!(imagined.len() >= last);
        last = imagined.len();
    }
}

#[test]
fn selection_filters_unsafe_arrivals_and_ranks_by_novelty() {
    let field = SurrogateTwist::new(42);
    let model = PerfectModel(&field);
    let z = zones();
    let real = UnstructuredArchive::from_solutions(vec![sol(0, [0.0, 0.0], 0.0)], 0.05, 1);
    let mut imagined = UnstructuredArchive::new(0.05, 1);
    let bds = [[0.4, 0.0], [0.0, -0.3], [0.2, 0.2], [-0.1, 0.05]];
    for (i, bd) in bds.iter().enumerate() {
        imagined.try_add(sol(10 + i as u64, *bd, -1.0));
    }
    let fresh: Vec<u64> = (10..14).collect();
    let picked = select_for_execution(&imagined, &fresh, &real, &Pose::default(), &z, 10, Prioritisation::Novelty, &model, Exec::Sequential);
    assert_eq!(picked.len(), 4, "all arrivals lie within 0.4 of the centre");
    let novelties: Vec<f64> = picked.iter().map(|s| real.novelty(s.bd)).collect();
    assert!(novelties.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(picked[0].id, 10);

    // At 0.45 facing outward a 0.3 m forward step would leave the disc.
    let edge = Pose::new(0.45, 0.0, 0.0);
    let mut out = UnstructuredArchive::new(0.05, 1);
    out.try_add(sol(20, [0.3, 0.0], -1.0));
    out.try_add(sol(21, [-0.3, 0.0], -1.0));
    let picked = select_for_execution(&out, &[20, 21], &real, &edge, &z, 10, Prioritisation::Novelty, &model, Exec::Sequential);
    assert_eq!(picked.iter().map(|s| s.id).collect::<Vec<_>>(), vec![21]);

    // Only candidates created this cycle are eligible, and batch caps the count.
    let picked = select_for_execution(&imagined, &[11, 12], &real, &Pose::default(), &z, 1, Prioritisation::Novelty, &model, Exec::Parallel);
    assert_eq!(picked.len(), 1);
    assert_eq!(picked[0].id, 11);
}

#[test]
fn novelty_order_two_candidates() {
    let field = SurrogateTwist::new(42);
    let real = UnstructuredArchive::from_solutions(vec![sol(0, [0.0, 0.0], 0.0)], 0.05, 1);
    let imagined = UnstructuredArchive::from_solutions(vec![sol(1, [0.05, 0.0], -1.0), sol(2, [0.2, 0.0], -1.0)], 0.05, 1);
    let picked = select_for_execution(&imagined, &[1, 2], &real, &Pose::default(), &zones(), 2, Prioritisation::Novelty, &PerfectModel(&field), Exec::Sequential);
    assert_eq!(picked.iter().map(|s| s.id).collect::<Vec<_>>(), vec![2, 1]);
}

#[test]
fn recovery_picks_the_most_central_arrival() {
    let z = zones();
    let pose = Pose::new(0.6, 0.0, PI / 2.0);
    // Heading +y: body (0, 0.6) maps to world (-0.6, 0) offset, landing at the centre.
    let a = UnstructuredArchive::from_solutions(vec![sol(1, [0.1, 0.1], 0.0), sol(2, [0.0, 0.6], 0.0), sol(3, [0.2, 0.0], 0.0)], 0.05, 15);
    assert_eq!(recovery_step(&a, &pose, &z).unwrap().id, 2);

    let at_center = Pose::new(0.6, 0.0, PI);
    let b = UnstructuredArchive::from_solutions(vec![sol(1, [0.5, 0.0], 0.0), sol(2, [0.3, 0.0], 0.0)], 0.05, 15);
    // Arrivals at 0.1 and 0.3 from the centre.
    assert_eq!(recovery_step(&b, &at_center, &z).unwrap().id, 1);
    assert!(matches!(recovery_step(&UnstructuredArchive::new(0.05, 15), &pose, &z), Err(Error::EmptyArchive)));
}

#[test]
fn recovery_matches_brute_force() {
    let z = zones();
    let mut rng = substream(17, Stream::Variation, 0);
    for _ in 0..50 {
        let sols: Vec<Solution> = (0..30)
            .map(|i| sol(i, [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)], 0.0))
            .collect();
        let pose = Pose::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-PI..PI));
        let a = UnstructuredArchive::from_solutions(sols.clone(), 0.05, 15);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in sols.iter().enumerate() {
            let (sn, cs) = pose.theta.sin_cos();
            let wx = pose.x + cs * s.bd[0] - sn * s.bd[1];
            let wy = pose.y + sn * s.bd[0] + cs * s.bd[1];
            let d = (wx * wx + wy * wy).sqrt();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        assert_eq!(recovery_step(&a, &pose, &z).unwrap().id, sols[best].id);
    }
}

/// Plays back fixed final poses; `script[i]` is where execution `i` ends.
struct Scripted {
    script: Vec<Pose>,
    calls: usize,
}

impl Environment for Scripted {
    fn execute(&mut self, start: Pose, g: &Genotype) -> EpisodeResult {
        let end = self.script[self.calls.min(self.script.len() - 1)];
        self.calls += 1;
        let rel = start.to_local(end.position());
        let dtheta = crate::arena::wrap_angle(end.theta - start.theta);
        let transitions = (0..crate::arena::SUBSTEPS)
            .map(|k| {
                let f = k as f64 / 10.0;
                let f1 = (k + 1) as f64 / 10.0;
                Transition {
                    state: [rel[0] * f, rel[1] * f, dtheta * f],
                    phase: f,
                    action: *g,
                    next_state: [rel[0] * f1, rel[1] * f1, dtheta * f1],
                }
            })
            .collect();
        EpisodeResult {
            start_pose: start,
            final_pose: end,
            bd: rel,
            theta_rel: dtheta,
            fitness: arc_fitness(rel, dtheta),
            transitions,
            zone_events: Vec::new(),
        }
    }
}

fn small_run_config(a: Ablation, budget: usize) -> RunConfig {
    RunConfig {
        eval_budget: budget,
        imagination_iters: 40,
        ensemble: EnsembleConfig { hidden: 16, epochs: 3, ..EnsembleConfig::default() },
        ..RunConfig::default()
    }
    .for_ablation(a)
}

#[test]
fn budget_of_ten_is_only_the_initialisation() {
    let cfg = small_run_config(Ablation::RfQd, 10);
    let mut env = SurrogateArena::new(42, NoiseLevels::default(), substream(1, Stream::ArenaNoise, 0));
    let out = run(&cfg, &mut env, &zones(), Pose::default()).unwrap();
    assert_eq!(out.report.real_evals_used, 10);
    assert_eq!(out.report.termination, Termination::BudgetExhausted);
    assert_eq!(out.report.history.len(), 10);
    assert!(out.report.history.iter().all(|r| r.kind == EvalKind::Init));
}

#[test]
fn leaving_the_ring_without_recovery_terminates() {
    let mut script = vec![Pose::new(0.01, 0.0, 0.0); 10];
    script.push(Pose::new(0.9, 0.0, 0.0));
    let mut env = Scripted { script, calls: 0 };
    let cfg = small_run_config(Ablation::NoRecovery, 100);
    let out = run(&cfg, &mut env, &zones(), Pose::default()).unwrap();
    assert_eq!(out.report.termination, Termination::LeftRecoveryZone);
    assert_eq!(out.report.real_evals_used, 11);
}

#[test]
fn leaving_during_init_is_an_init_failure() {
    let mut env = Scripted { script: vec![Pose::new(0.1, 0.0, 0.0), Pose::new(0.9, 0.0, 0.0)], calls: 0 };
    let out = run(&small_run_config(Ablation::RfQd, 100), &mut env, &zones(), Pose::default()).unwrap();
    assert_eq!(out.report.termination, Termination::InitFailure);
    assert_eq!(out.report.real_evals_used, 2);
}

#[test]
fn runs_are_reproducible_and_reset_free() {
    for a in Ablation::ALL {
        let cfg = small_run_config(a, 60);
        let go = || {
            let mut env = SurrogateArena::new(42, NoiseLevels::default(), substream(cfg.seed, Stream::ArenaNoise, 0));
            run(&cfg, &mut env, &zones(), Pose::default()).unwrap()
        };
        let (x, y) = (go(), go());
        assert_eq!(x.report, y.report, "{a}");
        assert_eq!(x.archive, y.archive);
        assert_eq!(x.report.history.len(), x.report.real_evals_used);
        assert_eq!(x.report.pose_trace.len(), x.report.real_evals_used + 1);
        // Every episode starts exactly where the previous one ended.
        for (w, traj) in x.report.pose_trace.windows(2).zip(&x.trajectories) {
            assert_eq!(*traj.last().unwrap(), w[1]);
        }
        assert!(x.archive.solutions().iter().all(|s| s.n_evals >= 1), "only executed solutions in the real archive");
        assert_eq!(x.report.dynamics_awareness, a.dynamics_awareness());
        assert_eq!(x.report.recovery_enabled, a.recovery());
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let mut cfg = small_run_config(Ablation::RfQd, 40);
    let go = |cfg: &RunConfig| {
        let mut env = SurrogateArena::new(42, NoiseLevels::default(), substream(cfg.seed, Stream::ArenaNoise, 0));
        run(cfg, &mut env, &zones(), Pose::default()).unwrap().report
    };
    let par = go(&cfg);
    cfg.exec = Exec::Sequential;
    assert_eq!(par, go(&cfg));
}

/// Fixture genotypes (gene 23 = 1) move by their compass offset and score
/// the best fitness; anything else is thrown to a random spot of the annulus
/// 0.3..0.74 around the centre.
struct Pusher {
    rng: StreamRng,
}

fn compass_bd(g: &Genotype) -> [f64; 2] {
    let a = g.params()[0] * 2.0 * PI;
    [0.12 * a.cos(), 0.12 * a.sin()]
}

impl Environment for Pusher {
    fn execute(&mut self, start: Pose, g: &Genotype) -> EpisodeResult {
        let (end, bd, theta_rel) = if g.params()[23] == 1.0 {
            let bd = compass_bd(g);
            let theta_rel = 2.0 * bd[1].atan2(bd[0]);
            let world = start.transform_point(bd);
            (Pose::new(world[0], world[1], start.theta + theta_rel), bd, theta_rel)
        } else {
            let r = self.rng.random_range(0.3..0.74);
            let a = self.rng.random_range(-PI..PI);
            let end = Pose::new(r * a.cos(), r * a.sin(), self.rng.random_range(-PI..PI));
            let bd = start.to_local(end.position());
            let theta_rel = crate::arena::wrap_angle(end.theta - start.theta);
            (end, bd, theta_rel)
        };
        EpisodeResult {
            start_pose: start,
            final_pose: end,
            bd,
            theta_rel,
            fitness: if g.params()[23] == 1.0 { 0.0 } else { -1.0 },
            transitions: Vec::new(),
            zone_events: Vec::new(),
        }
    }
}

fn compass_archive() -> UnstructuredArchive {
    let sols = (0..8)
        .map(|i| {
            let mut genes = [0.5; 24];
            genes[0] = i as f64 / 8.0;
            genes[23] = 1.0;
            let g = Genotype::new(genes);
            Solution { id: i, genotype: g, bd: compass_bd(&g), fitness: 0.0, n_evals: 1 }
        })
        .collect();
    UnstructuredArchive::from_solutions(sols, 0.05, 15)
}

#[test]
fn recovery_keeps_the_robot_in_bounds() {
    for seed in 0..3 {
        let cfg = RunConfig { eval_budget: 10_000, seed, ..RunConfig::default() }.for_ablation(Ablation::NoDa);
        let mut env = Pusher { rng: substream(seed, Stream::ArenaNoise, 0) };
        let out = run_from(&cfg, &mut env, &zones(), Pose::default(), compass_archive()).unwrap();
        assert_eq!(out.report.termination, Termination::BudgetExhausted, "seed {seed}");
        assert_eq!(out.report.real_evals_used, 10_000);
        assert!(out.report.recovery_evals > 1000, "the fixture should exercise recovery");
        assert!(out.report.history.iter().all(|r| r.kind != EvalKind::Init));
        assert!(out.report.pose_trace.iter().all(|p| zone_of(p, &zones()) != Zone::Outside));
        for c in compass_archive().solutions() {
            let kept = out.archive.solutions().iter().any(|s| s.fitness == 0.0 && bd_distance(s.bd, c.bd) <= 0.05);
            assert!(kept, "compass heading {:?} still covered", c.bd);
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    let mut env = SurrogateArena::new(42, NoiseLevels::default(), substream(1, Stream::ArenaNoise, 0));
    let cfg = RunConfig { alpha: 1.5, ..RunConfig::default() };
    assert!(run(&cfg, &mut env, &zones(), Pose::default()).is_err());
    let cfg = RunConfig { beta: 0.6, ..RunConfig::default() };
    assert!(matches!(run(&cfg, &mut env, &zones(), Pose::default()), Err(Error::Config(_))));
}

#[test]
fn ablation_names_roundtrip() {
    for a in Ablation::ALL {
        assert_eq!(Ablation::parse(a.name()), Some(a));
    }
    assert_eq!(Ablation::parse("MAP-Elites"), Some(Ablation::MapElites));
    assert_eq!(Ablation::parse("RF-QD"), Some(Ablation::RfQd));
    assert_eq!(Ablation::parse("nope"), None);
}
