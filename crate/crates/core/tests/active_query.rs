use pcb_core::active_query::{
    confusion_cem, perturb, run_active_loop, synthesize_query, train_low_dim, ActiveLoopConfig, LowDimConcept, QueryContext,
    QueryMemory, QuerySource, QueryStrategy, StrategyKind, AUGMENT_POSITION_STD,
};
use pcb_core::oracle::{answer_feature_queries, true_label, ConceptId};
use pcb_core::pipeline::{build_balanced_testset, classification_accuracy, SimConfig};
use pcb_core::scene::{sample_scene, Catalog, FeatureGroup, Workspace};
use pcb_core::{seed, Error};

fn random_source() -> QuerySource {
    QuerySource::Label(QueryStrategy::new(StrategyKind::Random, false))
}

/// A `near` concept trained on 300 random queries.
fn trained_near() -> LowDimConcept {
    let cfg = ActiveLoopConfig::new(ConceptId::Near, 300, random_source(), true, 5);
    run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default())
        .unwrap()
        .final_model()
        .clone()
}

fn ctx<'a>(concept: ConceptId, catalog: &'a Catalog, workspace: &'a Workspace) -> QueryContext<'a> {
    QueryContext {
        concept,
        catalog,
        workspace,
        cem: confusion_cem(),
    }
}

#[test]
fn confusion_queries_sit_on_the_boundary() {
    let model = trained_near();
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let c = ctx(ConceptId::Near, &catalog, &ws);
    let memory = QueryMemory::new();
    let mut rng = seed::rng(11);
    let n = 60;
    let mut confused = 0;
    let mut random_confused = 0;
    for _ in 0..n {
        let s = synthesize_query(&QueryStrategy::new(StrategyKind::Confusion, false), Some(&model), &memory, &c, &mut rng).unwrap();
        confused += usize::from((model.predict(&s).unwrap() - 0.5).abs() <= 0.1);
        let r = sample_scene(&catalog, &ws, ConceptId::Near, &mut rng).unwrap();
        random_confused += usize::from((model.predict(&r).unwrap() - 0.5).abs() <= 0.1);
    }
    assert!(confused as f64 >= 0.8 * n as f64, "{confused}/{n}");
    assert!(random_confused < confused / 2, "random {random_confused} vs confusion {confused}");
}

#[test]
fn random_queries_stay_in_the_workspace() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    for concept in ConceptId::ALL {
        let c = ctx(concept, &catalog, &ws);
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            let s = synthesize_query(&QueryStrategy::new(StrategyKind::Random, false), None, &QueryMemory::new(), &c, &mut rng).unwrap();
            assert!(ws.contains_moving(&s.moving.spec, &s.moving.pose.position));
            assert!(concept.applicable(&s.anchor.spec) && concept.applicable(&s.moving.spec));
        }
    }
}

#[test]
fn augment_perturbs_the_stored_positive() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let c = ctx(ConceptId::Top, &catalog, &ws);
    let mut rng = seed::rng(4);
    let stored = sample_scene(&catalog, &ws, ConceptId::Top, &mut rng).unwrap();
    let mut memory = QueryMemory::new();
    memory.record(stored, 1);
    memory.record(sample_scene(&catalog, &ws, ConceptId::Top, &mut rng).unwrap(), 0);
    memory.record(sample_scene(&catalog, &ws, ConceptId::Top, &mut rng).unwrap(), 0);
    let strategy = QueryStrategy {
        exploit: 1.0,
        ..QueryStrategy::new(StrategyKind::Random, true)
    };
    let n = 500;
    let mut inside = 0;
    for _ in 0..n {
        let q = synthesize_query(&strategy, None, &memory, &c, &mut rng).unwrap();
        assert_eq!(q.anchor, stored.anchor);
        assert_eq!(q.camera, stored.camera);
        let d = q.moving.pose.position - stored.moving.pose.position;
        assert!(d.amax() < 5.0 * AUGMENT_POSITION_STD, "{d:?}");
        inside += usize::from(d.amax() <= 3.0 * AUGMENT_POSITION_STD);
    }
    // per-axis 3-sigma mass cubed is about 0.992
    assert!(inside as f64 >= 0.97 * n as f64, "{inside}/{n}");
}

#[test]
fn perturbation_spreads_match_the_noise_scales() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let mut rng = seed::rng(8);
    let s = sample_scene(&catalog, &ws, ConceptId::Near, &mut rng).unwrap();
    let n = 4000;
    let (mut pos2, mut rot2) = (0.0, 0.0);
    for _ in 0..n {
        let p = perturb(&s, &mut rng);
        pos2 += (p.moving.pose.position - s.moving.pose.position).norm_squared();
        rot2 += p.moving.pose.orientation().angle_to(s.moving.pose.orientation()).powi(2);
    }
    // E|d|^2 = 3 sigma^2 for isotropic Gaussian noise
    let pos_sigma = (pos2 / (3.0 * n as f64)).sqrt();
    let rot_sigma = (rot2 / (3.0 * n as f64)).sqrt();
    assert!((pos_sigma - 0.03).abs() < 0.002, "{pos_sigma}");
    assert!((rot_sigma - 0.1).abs() < 0.006, "{rot_sigma}");
}

#[test]
fn augment_without_memory_falls_back() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let c = ctx(ConceptId::Near, &catalog, &ws);
    let strategy = QueryStrategy {
        exploit: 1.0,
        ..QueryStrategy::new(StrategyKind::Random, true)
    };
    let plain = QueryStrategy {
        exploit: 1.0,
        ..QueryStrategy::new(StrategyKind::Random, false)
    };
    let a = synthesize_query(&strategy, None, &QueryMemory::new(), &c, &mut seed::rng(1)).unwrap();
    let b = synthesize_query(&plain, None, &QueryMemory::new(), &c, &mut seed::rng(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn confrand_coin_extremes_reduce_to_the_pure_strategies() {
    let model = trained_near();
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let c = ctx(ConceptId::Near, &catalog, &ws);
    let memory = QueryMemory::new();
    let with_coin = |coin| QueryStrategy {
        coin,
        ..QueryStrategy::new(StrategyKind::Confrand, false)
    };
    for s in 0..5 {
        let run = |st: QueryStrategy| synthesize_query(&st, Some(&model), &memory, &c, &mut seed::rng(s)).unwrap();
        assert_eq!(run(with_coin(1.0)), run(QueryStrategy::new(StrategyKind::Confusion, false)));
        assert_eq!(run(with_coin(0.0)), run(QueryStrategy::new(StrategyKind::Random, false)));
    }
}

#[test]
fn memory_counts_and_rarer_class() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let mut rng = seed::rng(2);
    let mut m = QueryMemory::new();
    assert_eq!(m.rarer_label(), 1);
    let s = sample_scene(&catalog, &ws, ConceptId::Near, &mut rng).unwrap();
    m.record(s, 0);
    assert_eq!((m.counts(), m.rarer_label()), ((0, 1), 1));
    m.record(s, 1);
    m.record(s, 1);
    assert_eq!((m.counts(), m.rarer_label()), ((2, 1), 0));
    assert_eq!(m.positives().len(), 2);
    assert_eq!(m.negatives().len(), 1);
}

#[test]
fn loop_produces_every_checkpoint_and_query() {
    let cfg = ActiveLoopConfig::new(ConceptId::AboveBb, 500, random_source(), false, 9);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    assert_eq!(run.dataset.len(), 500);
    assert_eq!(run.checkpoints.len(), 5);
    assert_eq!(run.checkpoints.iter().map(|c| c.n_queries).collect::<Vec<_>>(), [100, 200, 300, 400, 500]);
    for r in &run.dataset.records {
        assert_eq!(r.label, true_label(ConceptId::AboveBb, &r.scene).unwrap());
    }
}

#[test]
fn train_at_limits_checkpoints_for_model_free_strategies() {
    let mut cfg = ActiveLoopConfig::new(ConceptId::Near, 400, random_source(), false, 9);
    cfg.train_at = Some(vec![200]);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    assert_eq!(run.checkpoints.iter().map(|c| c.n_queries).collect::<Vec<_>>(), [200, 400]);
    let full = run_active_loop(
        &ActiveLoopConfig {
            train_at: None,
            ..cfg.clone()
        },
        &Catalog::primitives(),
        &Workspace::default(),
    )
    .unwrap();
    assert_eq!(full.dataset, run.dataset);
    assert_eq!(full.checkpoint_at(200), run.checkpoint_at(200));
}

#[test]
fn demo_loop_is_exactly_balanced() {
    let cfg = ActiveLoopConfig::new(ConceptId::Upright, 200, QuerySource::Demo, false, 1);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    assert_eq!(run.dataset.positives(), 100);
    assert_eq!(run.dataset.positive_ratio(), 1.0);
    for (i, r) in run.dataset.records.iter().enumerate() {
        assert_eq!(r.label, u8::from(i % 2 == 0));
        assert_eq!(r.label, true_label(ConceptId::Upright, &r.scene).unwrap());
    }
}

#[test]
fn feature_answers_mask_every_stored_observation() {
    let cfg = ActiveLoopConfig::new(ConceptId::Upright, 100, random_source(), true, 1);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    assert_eq!(run.answers, Some(answer_feature_queries(ConceptId::Upright)));
    for r in &run.dataset.records {
        for g in FeatureGroup::ALL.into_iter().filter(|g| g.involves_anchor()) {
            assert!(!r.privileged.is_active(g));
            assert!(r.privileged.group(g).iter().all(|v| *v == 0.0));
        }
        assert!(r.privileged.is_active(FeatureGroup::MovingPose));
    }
    assert_eq!(run.final_model().answers, run.answers);
}

#[test]
fn loop_is_deterministic_and_seed_sensitive() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let strategy = QuerySource::Label(QueryStrategy::new(StrategyKind::Confrand, true));
    let cfg = ActiveLoopConfig::new(ConceptId::Front, 200, strategy, true, 21);
    let a = run_active_loop(&cfg, &catalog, &ws).unwrap();
    let b = run_active_loop(&cfg, &catalog, &ws).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.final_model(), b.final_model());
    let c = run_active_loop(&ActiveLoopConfig { seed: 22, ..cfg }, &catalog, &ws).unwrap();
    assert_ne!(a.dataset, c.dataset);
}

#[test]
fn noisy_human_flips_some_labels() {
    let mut cfg = ActiveLoopConfig::new(ConceptId::Near, 300, random_source(), false, 3);
    cfg.noise = 0.25;
    cfg.train_at = Some(vec![]);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    let flipped = run
        .dataset
        .records
        .iter()
        .filter(|r| r.label != true_label(ConceptId::Near, &r.scene).unwrap())
        .count();
    // Binomial(300, 0.25): mean 75, sd 7.5
    assert!((50..=100).contains(&flipped), "{flipped}");
}

#[test]
fn invalid_loop_configs_are_rejected() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let base = ActiveLoopConfig::new(ConceptId::Near, 200, random_source(), false, 0);
    let bad = [
        ActiveLoopConfig { budget: 250, ..base.clone() },
        ActiveLoopConfig { batch_size: 0, ..base.clone() },
        ActiveLoopConfig { noise: 1.5, ..base.clone() },
        ActiveLoopConfig {
            source: QuerySource::Label(QueryStrategy {
                coin: 2.0,
                ..QueryStrategy::new(StrategyKind::Confrand, false)
            }),
            ..base.clone()
        },
    ];
    for cfg in bad {
        assert!(matches!(run_active_loop(&cfg, &catalog, &ws), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn low_dim_concept_json_round_trip_is_exact() {
    let model = trained_near();
    let back = LowDimConcept::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("near.json");
    model.save(&path).unwrap();
    assert_eq!(LowDimConcept::load(&path).unwrap(), model);
}

#[test]
fn learning_curves_rise_on_average() {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let sim = SimConfig::default();
    let test = build_balanced_testset(ConceptId::Near, 1000, &catalog, &sim, false, 77).unwrap();
    let seeds = [0, 1, 2];
    let mut mean = [0.0; 5];
    for s in seeds {
        let cfg = ActiveLoopConfig::new(ConceptId::Near, 500, random_source(), true, s);
        let run = run_active_loop(&cfg, &catalog, &ws).unwrap();
        for (m, c) in mean.iter_mut().zip(&run.checkpoints) {
            *m += classification_accuracy(&c.model, &test).unwrap() / seeds.len() as f64;
        }
    }
    for w in mean.windows(2) {
        assert!(w[1] >= w[0] - 0.05, "{mean:?}");
    }
    assert!(mean[4] > mean[0], "{mean:?}");
}

#[test]
fn retraining_from_the_same_data_is_reproducible() {
    let cfg = ActiveLoopConfig::new(ConceptId::Near, 100, random_source(), false, 4);
    let run = run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()).unwrap();
    let a = train_low_dim(&run.dataset, None, &cfg.train, 1).unwrap();
    let b = train_low_dim(&run.dataset, None, &cfg.train, 1).unwrap();
    assert_eq!(a, b);
}
