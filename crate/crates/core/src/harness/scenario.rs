use super::config::{ExperimentConfig, Mode, Sweep, SweepValue};
use crate::data::SkewSpec;
use crate::error::{Error, Result};
use crate::fl::TrainConfig;
use crate::rl::PolicyHyper;

pub const SCENARIOS: [&str; 11] = [
    "default",
    "smoke",
    "stragglers",
    "aggregation_interval",
    "skew",
    "dynamic_rss",
    "system_size",
    "trust_structure",
    "pca_dimension",
    "kmeans_clusters",
    "multi_edge",
];

fn ints(values: &[i64]) -> Vec<SweepValue> {
    values.iter().map(|&v| SweepValue::Int(v)).collect()
}

fn sweep(cfg: &mut ExperimentConfig, axis: &str, values: Vec<SweepValue>) {
    cfg.sweep = Some(Sweep {
        axis: axis.into(),
        values,
    });
}

/// Pre-filled configuration for a named experiment family.
pub fn scenario(name: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig {
        scenario: name.into(),
        ..ExperimentConfig::default()
    };
    match name {
        "default" => {}
        "smoke" => {
            c.seeds = vec![0];
            c.system.devices = 4;
            c.system.l_hat = 2;
            c.system.threshold = 15;
            c.data.blobs.classes = 5;
            c.data.pool_per_class = 100;
            c.data.test_per_class = 40;
            c.data.skew = SkewSpec {
                labels_per_device: 2,
                proportions: vec![0.7, 0.3],
                ..SkewSpec::default()
            };
            c.rl = PolicyHyper {
                t_rl: 200,
                ..PolicyHyper::default()
            };
            c.fl = TrainConfig {
                rounds: 20,
                ..TrainConfig::default()
            };
        }
        "stragglers" => {
            let values = [0.0, 0.1, 0.2, 0.3, 0.4]
                .iter()
                .map(|&v| SweepValue::Float(v))
                .collect();
            sweep(&mut c, "fl.straggler_frac", values);
        }
        "aggregation_interval" => sweep(&mut c, "fl.tau_a", ints(&[1, 2, 4, 8, 16])),
        "skew" => {
            c.system.l_hat = 1;
            sweep(&mut c, "data.labels_per_device", ints(&[1, 2, 3, 4, 5]));
        }
        "dynamic_rss" => {
            c.system.dynamic = true;
            c.system.rate = 0.8;
            c.system.noise = 0.02;
            c.system.rss = crate::net::RssSpec {
                mean: 0.3,
                std: 0.1,
                lo: 0.05,
                hi: 0.55,
            };
            sweep(&mut c, "system.rss_resolution", ints(&[2, 4, 6, 8, 10]));
        }
        "system_size" => {
            c.data.pool_per_class = 600;
            sweep(&mut c, "system.devices", ints(&[5, 10, 20, 40]));
        }
        "trust_structure" => {
            let values = ["random", "row_sparse", "col_sparse", "block"]
                .iter()
                .map(|s| SweepValue::Text((*s).into()))
                .collect();
            sweep(&mut c, "data.trust_pattern", values);
        }
        "pca_dimension" => {
            c.data.mode = Mode::Unsupervised;
            c.system.l_hat = 2;
            sweep(&mut c, "data.pca_dim", ints(&[1, 2, 3, 4]));
        }
        "kmeans_clusters" => {
            c.data.mode = Mode::Unsupervised;
            c.system.l_hat = 2;
            sweep(&mut c, "data.kmeans_clusters", ints(&[2, 3, 4, 5, 6]));
        }
        "multi_edge" => sweep(&mut c, "system.edges", ints(&[1, 2, 3])),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; valid names: {}",
                SCENARIOS.join(", ")
            )));
        }
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_validates() {
        for name in SCENARIOS {
            let c = scenario(name).unwrap();
            assert_eq!(c.scenario, name);
            let text = c.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c, "{name}");
        }
    }

    #[test]
    fn skew_sweeps_one_to_five_labels() {
        let cells = scenario("skew").unwrap().expand().unwrap();
        let k: Vec<usize> = cells
            .iter()
            .map(|(_, c)| c.data.skew.labels_per_device)
            .collect();
        assert_eq!(k, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn dynamic_rss_uses_truncated_gaussian() {
        let c = scenario("dynamic_rss").unwrap();
        assert!(c.system.dynamic);
        assert_eq!(
            (
                c.system.rss.mean,
                c.system.rss.std,
                c.system.rss.lo,
                c.system.rss.hi
            ),
            (0.3, 0.1, 0.05, 0.55)
        );
        assert_eq!((c.system.rate, c.system.noise), (0.8, 0.02));
        assert_eq!(c.sweep.unwrap().axis, "system.rss_resolution");
    }

    #[test]
    fn smoke_is_small() {
        let c = scenario("smoke").unwrap();
        assert_eq!((c.system.devices, c.rl.t_rl, c.fl.rounds), (4, 200, 20));
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let err = scenario("nope").unwrap_err().to_string();
        assert!(err.contains("aggregation_interval") && err.contains("smoke"));
    }
}
