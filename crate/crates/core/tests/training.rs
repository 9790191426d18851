use graphmod::datagen::{
    generate_dataset, GraphSampler, Lexicon, ModificationInstance, Recipe, SimilarityTable, SplitSizes, TemplateSet,
};
use graphmod::graph::EditKind;
use graphmod::model::{EdgeDecoderKind, Fusion, ModelConfig};
use graphmod::train::{self, TrainConfig, TrainError};

fn data(kinds: Vec<EditKind>, n: usize, seed: u64) -> Vec<ModificationInstance> {
    let graphs = GraphSampler::new(&Lexicon::builtin()).sample_corpus(100, seed);
    let sizes = SplitSizes { train: n, dev: 0, test: 0 };
    generate_dataset(&graphs, &Recipe::Single(kinds), &TemplateSet::default(), &SimilarityTable::builtin(), sizes, seed, 1)
        .unwrap()
        .train
}

fn config(fusion: Fusion) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 32,
        d_ff: 32,
        gru_hidden: 32,
        fusion,
        edge_decoder: EdgeDecoderKind::Flat,
        max_decode_nodes: 6,
    }
}

#[test]
fn same_seed_same_run() {
    let d = data(vec![EditKind::Insert, EditKind::Delete, EditKind::Substitute], 24, 1);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 9, ..TrainConfig::default() };
    let run = || {
        let out = train::fit(&d, &d[..6], None, &config(Fusion::Cross), &cfg, |_| {}).unwrap();
        let losses: Vec<u64> = out.history.iter().map(|l| l.loss.to_bits()).collect();
        (out.checkpoint.to_bytes(), losses)
    };
    assert_eq!(run(), run());
    let other = TrainConfig { seed: 10, ..cfg.clone() };
    let out = train::fit(&d, &d[..6], None, &config(Fusion::Cross), &other, |_| {}).unwrap();
    assert_ne!(out.checkpoint.to_bytes(), run().0);
}

#[test]
fn small_set_is_memorised() {
    let d = data(vec![EditKind::Delete], 8, 2);
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 8,
        lr: 3e-3,
        seed: 1,
        stop_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let mut seen = 0;
    let out = train::fit(&d, &d, None, &config(Fusion::Gating), &cfg, |log| {
        seen += 1;
        assert_eq!(log.epoch, seen);
        assert!(log.loss.is_finite() && log.grad_norm.is_finite());
    })
    .unwrap();
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < first / 4.0, "{first} -> {last}");
    assert_eq!(out.checkpoint.dev_accuracy, 1.0, "after {} epochs", out.history.len());
    assert!(out.history.len() < 300);
}

#[test]
fn bad_inputs_are_rejected() {
    let d = data(vec![EditKind::Delete], 4, 3);
    let m = config(Fusion::Concat);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(matches!(train::fit(&[], &d, None, &m, &cfg, |_| {}), Err(TrainError::EmptyData(_))));
    assert!(matches!(train::fit(&d, &d, Some(&d), &m, &cfg, |_| {}), Err(TrainError::BadConfig(_))));
    let mix = TrainConfig { mix: true, ..cfg.clone() };
    assert!(matches!(train::fit(&d, &d, None, &m, &mix, |_| {}), Err(TrainError::EmptyData("user"))));
    assert!(train::fit(&d, &d, Some(&d), &m, &mix, |_| {}).is_ok());
    let bad = TrainConfig { lr: 0.0, ..cfg };
    assert!(train::fit(&d, &d, None, &m, &bad, |_| {}).is_err());
}
