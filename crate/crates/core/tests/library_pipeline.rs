use faultsage::explain::explain_all;
use faultsage::sage::{self, predict};
use faultsage::waveform::{read_dataset, write_dataset};
use faultsage::*;

fn small_model(input_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        hidden1: 8,
        hidden2: 6,
        head_dims: vec![5],
        lr: 1e-3,
        epochs: 4,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn dataset() -> SyntheticDataset {
    let params = SynthParams {
        sample_count: 240,
        seed: 5,
        ..SynthParams::default()
    };
    synth_dataset(&params, 4).unwrap()
}

#[test]
fn dataset_graphs_and_checkpoints_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset();
    write_dataset(&ds, dir.path()).unwrap();
    let loaded = read_dataset(dir.path()).unwrap();
    assert_eq!(loaded.1, ds.instances);

    let te = TeConfig::default();
    let graphs: Vec<CausalGraphInstance> = loaded.1.iter().map(|i| discover(i, &te).unwrap()).collect();
    for (g, inst) in graphs.iter().zip(&loaded.1) {
        let path = dir.path().join("graphs").join(format!("{}.json", g.instance_id));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        GraphRecord::from_graph(g).write(&path).unwrap();
        assert_eq!(&GraphRecord::read(&path).unwrap().into_graph(inst).unwrap(), g);
    }

    let cfg = small_model(240);
    let outcome = sage::train(&graphs, &cfg).unwrap();
    assert_eq!(outcome.epochs.len(), 4);
    assert_eq!(outcome.test_indices.len(), 9);
    let ckpt = dir.path().join("model.ckpt");
    outcome.checkpoint.save(&ckpt).unwrap();
    let restored = Checkpoint::load(&ckpt, &cfg).unwrap();
    assert_eq!(restored, outcome.checkpoint);
    for g in &graphs {
        assert_eq!(
            predict(g, &restored.params, &cfg).unwrap(),
            predict(g, &outcome.checkpoint.params, &cfg).unwrap()
        );
    }
    let test: Vec<_> = outcome.test_indices.iter().map(|&i| graphs[i].clone()).collect();
    let m = sage::evaluate(&test, &restored, &cfg).unwrap();
    assert_eq!(m.accuracy, outcome.epochs.last().unwrap().test.accuracy);
}

#[test]
fn explanations_cover_every_graph_and_class() {
    let ds = dataset();
    let graphs: Vec<_> = ds.instances.iter().map(|i| discover(i, &TeConfig::default()).unwrap()).collect();
    let cfg = small_model(240);
    let outcome = sage::train(&graphs, &cfg).unwrap();
    let explain = ExplainConfig {
        ig_steps: 8,
        mask_epochs: 10,
        ..ExplainConfig::default()
    };
    let records = explain_all(&graphs, &outcome.checkpoint.params, &cfg, &explain).unwrap();
    assert_eq!(records.len(), graphs.len());
    for (r, g) in records.iter().zip(&graphs) {
        assert_eq!(r.instance_id, g.instance_id);
        assert_eq!(r.nodes, ["V_A", "V_B", "V_C", "I_A", "I_B", "I_C"]);
        let mut seen = r.ranking.clone();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert!(r.combined.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    for class in FaultClass::ALL {
        let of_class: Vec<_> = records.iter().filter(|r| r.label == class).cloned().collect();
        let h = RankHistogram::from_records(class, &of_class).unwrap();
        assert_eq!(h.graph_count(), 4);
        assert!(h.column_sums().iter().all(|&s| s == 4));
    }
}
