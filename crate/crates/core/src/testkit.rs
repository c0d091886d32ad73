//! Small fixtures shared by unit tests.

use crate::data::{
    build_backdoor_dataset, dirichlet_partition, gen_synthetic, BackdoorKind, BackdoorPools, BackdoorSpec, Dataset,
    SyntheticData, SyntheticSpec,
};
use crate::nn::{init_model, ModelArch, ParamVec, TrainConfig};

pub struct Toy {
    pub data: SyntheticData,
    pub arch: ModelArch,
    pub global: ParamVec,
    pub backdoor: Dataset,
    pub clients: Vec<Dataset>,
}

pub fn toy_spec() -> SyntheticSpec {
    SyntheticSpec {
        class_count: 4,
        feature_dim: 4,
        samples_per_class: 60,
        test_per_class: 20,
        edge_pool_size: 60,
        out_pool_size: 60,
        ..SyntheticSpec::default()
    }
}

pub fn toy(seed: u64) -> Toy {
    let data = gen_synthetic(&toy_spec(), seed).unwrap();
    let arch = ModelArch::new(vec![4, 8, 5]).unwrap();
    let global = init_model(&arch, seed).unwrap();
    let spec = BackdoorSpec {
        kind: BackdoorKind::Out,
        target_class: 0,
        true_label: 0,
        out_class: 4,
        backdoor_label: 1,
        dataset_size: 40,
        malicious_fraction: 0.4,
    };
    let pools = BackdoorPools {
        benign_classes: 4,
        train: &data.train,
        test: &data.test,
        edge: &data.edge_pool,
        out: data.out_pool.as_ref(),
    };
    let backdoor = build_backdoor_dataset(&pools, &spec, seed).unwrap();
    let plan = dirichlet_partition(&data.train, 6, 0.9, seed).unwrap();
    let clients = plan.materialize(&data.train);
    Toy {
        data,
        arch,
        global,
        backdoor,
        clients,
    }
}

pub fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        lr: 0.1,
        batch_size: 8,
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
