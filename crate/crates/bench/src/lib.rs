//! Fixtures shared by the criterion benches.

use dexgraph_core::data::{BlobModel, BlobSpec};
use dexgraph_core::fl::{Arch, FlData, ModelParams};
use dexgraph_core::net::{random_distances, RssMatrix, RssSpec};
use dexgraph_core::rng::stream;

/// RSS over `n` devices dropped on a 100 m square.
pub fn rss(n: usize, seed: u64) -> RssMatrix {
    let mut rng = stream(seed, &[]);
    let d = random_distances(n, 100.0, &mut rng);
    RssSpec::default().sample(&d, &mut rng).expect("valid spec")
}

/// Separable blobs as one training set.
pub fn blobs(classes: usize, dim: usize, per_class: usize, seed: u64) -> FlData {
    let spec = BlobSpec {
        classes,
        dim,
        separation: 3.0,
        noise: 1.0,
    };
    let model = BlobModel::new(&spec, seed).expect("valid spec");
    FlData::from(
        &model
            .sample(per_class, &mut stream(seed, &[1]))
            .expect("sample"),
    )
}

pub fn softmax(dim: usize, classes: usize, seed: u64) -> ModelParams {
    ModelParams::init(
        Arch::Softmax {
            input: dim,
            outputs: classes,
        },
        &mut stream(seed, &[2]),
    )
    .expect("init")
}
