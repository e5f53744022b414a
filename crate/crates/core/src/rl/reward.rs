use super::env::{Channel, Evaluation};
use super::policy::PolicyHyper;
use crate::error::{ensure_len, Result};

/// `alpha1 * gain - alpha2 * P_D`.
pub fn local_reward(gain: f64, p_drop: f64, hyper: &PolicyHyper) -> f64 {
    hyper.alpha1 * gain - hyper.alpha2 * p_drop
}

/// Cluster-level reward: a system score plus `alpha3 * (B_k - d'_k)`.
pub fn global_reward(system: f64, budget: u64, spent: u64, hyper: &PolicyHyper) -> f64 {
    system + hyper.alpha3 * (budget as f64 - spent as f64)
}

pub fn overall_reward(local: f64, global: f64, hyper: &PolicyHyper) -> f64 {
    local + hyper.gamma * global
}

/// Local rewards of a round; devices without a selection score 0.
pub fn local_rewards(
    eval: &Evaluation,
    selections: &[Option<usize>],
    channel: &Channel,
    hyper: &PolicyHyper,
) -> Result<Vec<f64>> {
    ensure_len(selections.len(), eval.gain.len())?;
    Ok(selections
        .iter()
        .enumerate()
        .map(|(i, s)| match *s {
            Some(j) => local_reward(eval.gain[i], channel.drop().get(i, j), hyper),
            None => 0.0,
        })
        .collect())
}

/// Sum of local rewards; the objective the exhaustive search maximises.
pub fn objective(
    eval: &Evaluation,
    selections: &[Option<usize>],
    channel: &Channel,
    hyper: &PolicyHyper,
) -> Result<f64> {
    Ok(local_rewards(eval, selections, channel, hyper)?
        .iter()
        .sum())
}

/// Overall reward per device. The system score is the mean local reward,
/// or the system agreement when the environment reports one. Budget use
/// counts committed spending plus this round's inter-cluster requests.
pub fn round_rewards(
    eval: &Evaluation,
    selections: &[Option<usize>],
    channel: &Channel,
    hyper: &PolicyHyper,
) -> Result<Vec<f64>> {
    let local = local_rewards(eval, selections, channel, hyper)?;
    let system = eval
        .agreement
        .unwrap_or_else(|| local.iter().sum::<f64>() / local.len() as f64);
    let c = channel.clustering();
    let global: Vec<f64> = (0..c.num_clusters())
        .map(|k| {
            global_reward(
                system,
                c.budgets[k],
                c.spent[k] + eval.inter_cluster[k],
                hyper,
            )
        })
        .collect();
    Ok(local
        .iter()
        .enumerate()
        .map(|(i, &l)| overall_reward(l, global[c.cluster_of(i)], hyper))
        .collect())
}
