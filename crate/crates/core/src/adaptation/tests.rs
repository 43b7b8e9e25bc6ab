use super::*;
use crate::instructions::parse;
use proptest::prelude::*;

fn i(s: &str) -> Instruction {
    parse(s).unwrap()
}

fn sample(base: &str, transfer: &str, rate: f64) -> AdaptationSample {
    AdaptationSample {
        base: Some(i(base)),
        transfer: i(transfer),
        n_steps: 10,
        success_rate: rate,
        curve: vec![(10, rate)],
        seed: 0,
    }
}

fn small_plan(k: usize, p: usize, n: usize, seed: u64) -> ExperimentPlan {
    ExperimentPlan::sample(k, p, n, seed, EnvConfig::new(4, 0), TrainConfig::tabular(), 20_000).unwrap()
}

#[test]
fn plan_sampling_is_seeded_and_disjoint() {
    let a = small_plan(8, 8, 100, 3);
    assert_eq!(a, small_plan(8, 8, 100, 3));
    assert_ne!(a.alpha, small_plan(8, 8, 100, 4).alpha);
    assert!(a.beta.iter().all(|b| !a.alpha.contains(b)));
    assert_eq!(a.holdout().len(), 24 - 16);
    assert!(matches!(
        ExperimentPlan::sample(12, 12, 1, 0, EnvConfig::new(4, 0), TrainConfig::tabular(), 1),
        Err(AdaptationError::InvalidPlan(_))
    ));
}

#[test]
fn plan_validation() {
    let mut plan = small_plan(3, 2, 100, 0);
    plan.alpha[1] = plan.alpha[0];
    assert!(matches!(plan.validate(), Err(AdaptationError::InvalidPlan(_))));
    let mut plan = small_plan(3, 2, 100, 0);
    plan.alpha.truncate(1);
    assert!(plan.validate().is_err());
    let mut plan = small_plan(3, 2, 100, 0);
    plan.n_adapt_steps = 0;
    assert!(plan.validate().is_err());
}

#[test]
fn table_two_example() {
    let samples = [
        sample("pickup the red ball", "goto the green key", 0.91),
        sample("goto the yellow box", "goto the green key", 0.86),
    ];
    let ds = build_dataset(&samples);
    let expected = ComparisonRecord {
        z_x: i("goto the green key"),
        z_i: i("pickup the red ball"),
        z_j: i("goto the yellow box"),
        label: 1,
    };
    assert_eq!(ds.len(), 2);
    assert!(ds.contains(&expected));
    assert!(ds.contains(&expected.mirrored()));
}

#[test]
fn ties_and_scratch_rows_emit_nothing() {
    let mut samples = vec![
        sample("pickup the red ball", "goto the green key", 0.5),
        sample("goto the yellow box", "goto the green key", 0.5),
    ];
    samples.push(AdaptationSample {
        base: None,
        ..sample("goto the red box", "goto the green key", 0.9)
    });
    assert!(build_dataset(&samples).is_empty());
}

fn brute_force_label(samples: &[AdaptationSample], r: &ComparisonRecord) -> Option<u8> {
    let perf = |b: Instruction| {
        samples
            .iter()
            .find(|s| s.base == Some(b) && s.transfer == r.z_x)
            .map(|s| s.success_rate)
    };
    let (pi, pj) = (perf(r.z_i)?, perf(r.z_j)?);
    (pi != pj).then_some((pi > pj) as u8)
}

proptest! {
    #[test]
    fn dataset_algebra(
        rates in proptest::collection::vec(0u8..5, 12),
        k in 2usize..5,
    ) {
        let all = crate::instructions::enumerate_all();
        let bases = &all[..k];
        let transfers = &all[10..13];
        let mut samples = Vec::new();
        for (bi, b) in bases.iter().enumerate() {
            for (ti, t) in transfers.iter().enumerate() {
                samples.push(AdaptationSample {
                    base: Some(*b),
                    transfer: *t,
                    n_steps: 1,
                    success_rate: rates[(bi * 3 + ti) % rates.len()] as f64 / 4.0,
                    curve: vec![],
                    seed: 0,
                });
            }
        }
        let ds = build_dataset(&samples);
        let mut untied = 0;
        for t in transfers {
            for x in 0..k {
                for y in x + 1..k {
                    let r = ComparisonRecord { z_x: *t, z_i: bases[x], z_j: bases[y], label: 0 };
                    untied += brute_force_label(&samples, &r).is_some() as usize;
                }
            }
        }
        prop_assert_eq!(ds.len(), 2 * untied);
        for r in &ds {
            prop_assert_ne!(r.z_i, r.z_j);
            prop_assert!(ds.contains(&r.mirrored()));
            prop_assert_eq!(Some(r.label), brute_force_label(&samples, r));
        }
        let mut sorted = ds.clone();
        sorted.sort();
        prop_assert_eq!(&sorted, &ds);
        samples.reverse();
        prop_assert_eq!(build_dataset(&samples), ds);
    }

    #[test]
    fn match_partitions_are_exhaustive(picks in proptest::collection::vec((0usize..24, 0usize..24), 1..30)) {
        let all = crate::instructions::enumerate_all();
        let samples: Vec<_> = picks
            .iter()
            .map(|&(b, t)| AdaptationSample {
                base: Some(all[b]),
                transfer: all[t],
                n_steps: 1,
                success_rate: 0.5,
                curve: vec![(1, 0.5)],
                seed: 0,
            })
            .collect();
        for d in Dimension::ALL {
            let g = group_curves(&samples, d, &[]).unwrap();
            prop_assert_eq!(g.n_matching + g.n_differing, samples.len());
            prop_assert_eq!(g.matching.is_some(), g.n_matching > 0);
            prop_assert_eq!(g.differing.is_some(), g.n_differing > 0);
        }
    }
}

#[test]
fn curves_average_pointwise() {
    let mut a = sample("goto the red ball", "goto the blue key", 0.4);
    a.curve = vec![(1, 0.2), (2, 0.4)];
    let mut b = sample("goto the red box", "goto the green key", 0.6);
    b.curve = vec![(1, 0.4), (2, 0.6)];
    let g = group_curves(&[a, b], Dimension::Verb, &[]).unwrap();
    let m = g.matching.clone().unwrap();
    assert!((m[0].1 - 0.3).abs() < 1e-12 && (m[1].1 - 0.5).abs() < 1e-12);
    assert!(g.differing.is_none());
    assert!(g.has_empty_partition());
    assert!(g.scratch.is_none());
    assert!(matches!(group_curves(&[], Dimension::Color, &[]), Err(AdaptationError::NoSamples)));
}

#[test]
fn mean_final_split() {
    let s = [
        sample("goto the red ball", "goto the blue key", 1.0),
        sample("pickup the red ball", "goto the blue key", 0.2),
        sample("pickup the red box", "goto the blue key", 0.4),
    ];
    let (m, d) = mean_final_success(&s, Dimension::Verb);
    assert_eq!(m, Some(1.0));
    assert!((d.unwrap() - 0.3).abs() < 1e-12);
}

#[test]
fn csv_roundtrip() {
    let mut s = sample("goto the red ball", "pickup the blue key", 1.0 / 3.0);
    s.curve = vec![(1000, 0.25), (2000, 1.0 / 3.0)];
    s.seed = u64::MAX;
    let scratch = AdaptationSample { base: None, ..s.clone() };
    let samples = vec![scratch, s];

    let mut buf = Vec::new();
    write_samples(&mut buf, &samples).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("base_instruction,transfer_instruction,n_steps,success_rate,seed\n"));
    assert!(text.contains("scratch,pickup the blue key,10,0.333333,18446744073709551615"));
    let back = read_samples(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].base, samples[1].base);
    assert_eq!(back[0].base, None);
    assert_eq!(back[1].success_rate, 0.333333);

    let mut buf = Vec::new();
    write_curves(&mut buf, &samples).unwrap();
    let curves = read_curves(buf.as_slice()).unwrap();
    assert_eq!(curves[&(samples[1].base, samples[1].transfer)], vec![(1000, 0.25), (2000, 0.333333)]);

    let ds = build_dataset(&[
        sample("goto the red ball", "goto the blue key", 0.9),
        sample("goto the red box", "goto the blue key", 0.1),
    ]);
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("z_x,z_i,z_j,label\n"));
    assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
}

#[test]
fn csv_errors_name_the_row() {
    let bad = "base_instruction,transfer_instruction,n_steps,success_rate,seed\n\
               goto the red ball,goto the blue key,10,0.5,1\n\
               goto the red ball,fly the blue key,10,0.5,1\n";
    match read_samples(bad.as_bytes()) {
        Err(CsvError::Parse { row, .. }) => assert_eq!(row, 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_dataset("a,b\n".as_bytes()), Err(CsvError::Header { .. })));
}

#[test]
fn base_training_and_grid() {
    let plan = small_plan(2, 2, 2_000, 11);
    let bases = train_base_policies::<f64>(&plan).unwrap();
    assert_eq!(bases.len(), 2);
    for b in &bases {
        assert!(b.converged);
        assert!(b.snapshot.final_success_rate >= 0.90, "{}", b.snapshot.final_success_rate);
    }
    let again = train_base_policies::<f64>(&plan).unwrap();
    for (a, b) in bases.iter().zip(&again) {
        assert_eq!(a.snapshot.content_hash(), b.snapshot.content_hash());
    }

    let snaps: Vec<_> = bases.iter().map(|b| b.snapshot.clone()).collect();
    let grid = run_grid(&plan, &snaps, &plan.beta);
    assert_eq!(grid.samples.len(), 4);
    assert!(grid.failures.is_empty());
    let keys: Vec<_> = grid.samples.iter().map(|s| s.sort_key()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for s in &grid.samples {
        assert!((0.0..=1.0).contains(&s.success_rate));
        assert!(s.curve.iter().all(|&(step, _)| step <= plan.n_adapt_steps));
    }

    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let reversed: Vec<_> = snaps.iter().rev().cloned().collect();
    let serial_grid = serial.install(|| run_grid(&plan, &reversed, &plan.beta));
    assert_eq!(serial_grid, grid);

    // source snapshot is untouched by adaptation
    let before = snaps[0].content_hash();
    run_cell(&plan, &snaps[0], plan.beta[0]).unwrap();
    assert_eq!(snaps[0].content_hash(), before);
}

#[test]
fn self_transfer_retains_competence() {
    let plan = small_plan(2, 1, 1_000, 5);
    for b in train_base_policies::<f64>(&plan).unwrap() {
        let s = run_cell(&plan, &b.snapshot, b.snapshot.instruction).unwrap();
        assert!(
            s.success_rate >= b.snapshot.final_success_rate - 0.15,
            "{}: {} vs base {}",
            b.snapshot.instruction,
            s.success_rate,
            b.snapshot.final_success_rate
        );
    }
}

#[test]
fn one_step_budget_logs_one_point() {
    let plan = small_plan(2, 1, 1, 2);
    let base = train_base::<f64>(&plan, &plan.alpha[0]).unwrap();
    let s = run_cell(&plan, &base.snapshot, plan.beta[0]).unwrap();
    assert_eq!(s.curve.len(), 1);
    assert_eq!(s.curve[0].0, 1);
    assert_eq!(s.n_steps, 1);
}

#[test]
fn scratch_baselines() {
    let env = EnvConfig::new(3, 0);
    let cfg = TrainConfig {
        epsilon_decay_steps: 5_000,
        ..TrainConfig::tabular()
    };
    let tasks = [i("goto the red ball"), i("pickup the blue key")];
    let a = run_scratch_baselines::<f64>(&tasks, 10_000, &env, &cfg, 1).unwrap();
    assert_eq!(a, run_scratch_baselines::<f64>(&tasks, 10_000, &env, &cfg, 1).unwrap());
    for s in &a {
        assert!(s.base.is_none());
        assert!(s.success_rate > 0.0);
        assert!(s.curve[0].1 < 0.5, "untrained start {:?}", s.curve[0]);
    }
}
