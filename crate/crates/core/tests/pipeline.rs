//! Library-level run of every stage at toy scale.

use metaself_core::dataset::{load_split, split_dataset, EpisodeStore, Split, SplitConfig};
use metaself_core::factory::{check_validity, generate_family, read_family, write_family, Validity};
use metaself_core::net::Checkpoint;
use metaself_core::sim::{collect_family, EngineConfig};

use metaself_core::train::{evaluate, train, TrainConfig};
use metaself_core::{CollectConfig, ConfigSpace, DatasetManifest, EncoderConfig, FactoryConfig, RigidBodySim, Variant};

fn tiny_train(variant: Variant, rm_xyz: bool) -> TrainConfig {
    let mut encoder = EncoderConfig::tiny(variant, 30, 160);
    encoder.latent_dim = 16;
    TrainConfig { epochs: 3, batch_size: 4, variant, rm_xyz, encoder, learning_rate: 1e-3, ..Default::default() }
}

#[test]
fn generate_collect_split_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let factory = FactoryConfig::default();
    let (family, stats) = generate_family(10, 11, &factory, 1).unwrap();
    assert_eq!(family.len(), 10);
    assert_eq!(stats.accepted, 10);
    write_family(root, &family, &stats).unwrap();
    let family = read_family(root).unwrap();
    for r in &family.records {
        let mut sim = RigidBodySim::new(family.config.engine.clone());
        assert_eq!(check_validity(r, &mut sim, &family.config.validity).unwrap(), Validity::Valid);
    }

    let cfg = CollectConfig { trials: 1, ..Default::default() };
    let mut store = EpisodeStore::open(root).unwrap();
    let s = collect_family(&family, &cfg, &EngineConfig::default(), 5, &mut store, 1).unwrap();
    assert_eq!(s.written + s.failures.len(), 10);
    assert!(store.len() >= 6, "{:?}", s.failures);

    let reopened = EpisodeStore::open(root).unwrap();
    assert_eq!(reopened.len(), store.len());
    let manifest = split_dataset(&reopened, &SplitConfig { test_count: 1, ..Default::default() }, 5).unwrap();
    manifest.write(root).unwrap();
    let manifest = DatasetManifest::read(root).unwrap();
    let tr = load_split(&reopened, &manifest, Split::Train).unwrap();
    let va = load_split(&reopened, &manifest, Split::Val).unwrap();
    let te = load_split(&reopened, &manifest, Split::Test).unwrap();
    assert_eq!(tr.len() + va.len() + te.len(), store.len());
    assert!(tr.iter().all(|e| e.cycles.dim() == (10, 16, 30)));

    let space = ConfigSpace::default();
    for (variant, rm) in [(Variant::ConvSe, false), (Variant::Mlp, true), (Variant::Lstm, false)] {
        let out = train(&tr, &va, &tiny_train(variant, rm), &space).unwrap();
        let h = &out.history;
        assert_eq!(h.epochs.len(), 3);
        assert!(h.epochs.iter().all(|e| e.train_loss > 0.0 && e.val_loss > 0.0));
        assert_eq!(h.best_val_loss, h.epochs[h.best_epoch - 1].val_loss);

        // the best checkpoint reloads with identical validation metrics
        let path = root.join(format!("{}.ckpt", variant.name()));
        out.best.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let a = evaluate(&out.best, &va, 1, &space).unwrap();
        let b = evaluate(&back, &va, 1, &space).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-6);
        // seed 1 reproduces the validation windows used during training
        assert!((a.loss - h.best_val_loss).abs() < 1e-6, "{} vs {}", a.loss, h.best_val_loss);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a, evaluate(&out.best, &va, 1, &space).unwrap());
        assert_eq!(a.rm_xyz, rm);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (family, _) = generate_family(4, 2, &FactoryConfig::default(), 1).unwrap();
    let cfg = CollectConfig { trials: 1, ..Default::default() };
    let mut store = EpisodeStore::open(dir.path()).unwrap();
    collect_family(&family, &cfg, &EngineConfig::default(), 0, &mut store, 1).unwrap();
    let eps: Vec<_> = store.refs().values().map(|r| store.read_episode(*r).unwrap()).collect();
    let space = ConfigSpace::default();
    let cfg = tiny_train(Variant::ConvSe, false);
    let a = train(&eps, &eps, &cfg, &space).unwrap();
    let b = train(&eps, &eps, &cfg, &space).unwrap();
    let strip = |h: &metaself_core::train::TrainHistory| h.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
}

#[test]
fn empty_splits_are_rejected() {
    let space = ConfigSpace::default();
    assert!(train(&[], &[], &tiny_train(Variant::Mlp, false), &space).is_err());
}
