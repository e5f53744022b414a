use std::collections::BTreeMap;

use serde::Serialize;

use super::pipeline::ResultRow;

/// Aggregate over seeds for one (scenario, method, metric).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
    /// Seeds whose curve reached the threshold.
    pub reached: usize,
    pub rounds_to_threshold: Option<f64>,
    pub energy_to_threshold: Option<f64>,
}

/// First round whose value is at least `threshold`.
pub fn rounds_to_threshold(series: &[(usize, f64)], threshold: f64) -> Option<usize> {
    series
        .iter()
        .find(|(_, v)| *v >= threshold)
        .map(|(r, _)| *r)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    // shifted by the first value so constant input stays exact
    let n = v.len() as f64;
    let shift = v[0];
    let d = v.iter().map(|x| x - shift).sum::<f64>() / n;
    let mean = shift + d;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - shift - d).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn is_curve(metric: &str) -> bool {
    matches!(metric, "accuracy" | "linear_eval_accuracy" | "mse")
}

/// Mean and sample standard deviation of the final value, plus the mean
/// rounds and joules (D2D + D2S) to reach `threshold` over the seeds that
/// got there. Thresholds apply to accuracy curves only.
pub fn summarize(rows: &[ResultRow], threshold: f64) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), BTreeMap<u64, Vec<&ResultRow>>> =
        BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario.clone(), r.method.clone(), r.metric.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, method, metric), seeds)| {
            let mut finals = Vec::new();
            let mut rounds = Vec::new();
            let mut joules = Vec::new();
            for mut series in seeds.into_values() {
                series.sort_by_key(|r| r.round);
                finals.push(series.last().expect("nonempty group").value);
                if is_curve(&metric) && metric != "mse" {
                    let points: Vec<(usize, f64)> =
                        series.iter().map(|r| (r.round, r.value)).collect();
                    if let Some(round) = rounds_to_threshold(&points, threshold) {
                        let hit = series
                            .iter()
                            .find(|r| r.round == round)
                            .expect("round exists");
                        rounds.push(round as f64);
                        joules.push(hit.d2d_joules + hit.d2s_joules);
                    }
                }
            }
            let (final_mean, final_std) = mean_std(&finals);
            let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            SummaryRow {
                scenario,
                method,
                metric,
                seeds: finals.len(),
                final_mean,
                final_std,
                reached: rounds.len(),
                rounds_to_threshold: avg(&rounds),
                energy_to_threshold: avg(&joules),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: std::io::Write>(
    rows: &[SummaryRow],
    out: W,
) -> crate::error::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| crate::error::Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(seed: u64, round: usize, value: f64) -> ResultRow {
        ResultRow {
            scenario: "s".into(),
            method: "ours".into(),
            seed,
            round,
            metric: "accuracy".into(),
            value,
            d2d_joules: round as f64,
            d2s_joules: 0.5,
        }
    }

    #[test]
    fn single_row_is_itself() {
        let s = summarize(&[r(0, 3, 0.42)], 0.7);
        assert_eq!(s.len(), 1);
        assert_eq!(
            (s[0].final_mean, s[0].final_std, s[0].seeds, s[0].reached),
            (0.42, 0.0, 1, 0)
        );
        assert_eq!(s[0].rounds_to_threshold, None);
    }

    #[test]
    fn constant_metric_has_zero_std() {
        let s = summarize(&[r(0, 1, 0.8), r(1, 1, 0.8), r(2, 1, 0.8)], 0.7);
        assert_eq!(s[0].final_std, 0.0);
        assert_eq!(s[0].rounds_to_threshold, Some(1.0));
    }

    #[test]
    fn scripted_curve_crosses_at_twelve() {
        let rows: Vec<ResultRow> = (1..=30).map(|k| r(0, k, 0.3 + 0.035 * k as f64)).collect();
        // 0.3 + 0.035 * 11 = 0.685, 0.3 + 0.035 * 12 = 0.72
        let s = summarize(&rows, 0.7);
        assert_eq!(s[0].rounds_to_threshold, Some(12.0));
        assert_eq!(s[0].energy_to_threshold, Some(12.5));
        let mut out = Vec::new();
        write_summary_csv(&summarize(&[r(0, 3, 0.42)], 0.7), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "scenario,method,metric,seeds,final_mean,final_std,reached,rounds_to_threshold,energy_to_threshold\ns,ours,accuracy,1,0.42,0.0,0,,\n"
        );
    }
}
