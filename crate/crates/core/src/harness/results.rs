use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const RESULTS_HEADER: &str = "trial,method,target_task,episode,return,wall_time_ms";

/// One episode of one method on one target in one trial. Episodes are
/// numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub method: String,
    pub target_task: String,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub wall_time_ms: f64,
}

/// A result row tagged with the library sample size it was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sample_size: usize,
    pub trial: usize,
    pub method: String,
    pub target_task: String,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub wall_time_ms: f64,
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Csv(e.to_string())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn results_to_bytes(rows: &[ResultRow]) -> Result<Vec<u8>, HarnessError> {
    if rows.is_empty() {
        return Ok(format!("{RESULTS_HEADER}\n").into_bytes());
    }
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(buf)
}

/// Mean, standard error and the 95% half-width `1.96 * stderr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci95: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                stderr: f64::NAN,
                ci95: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            stderr,
            ci95: 1.96 * stderr,
        }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn high(&self) -> f64 {
        self.mean + self.ci95
    }

    pub fn overlaps(&self, other: &Stat) -> bool {
        self.low() <= other.high() && other.low() <= self.high()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub target_task: String,
    pub episode: usize,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci95: f64,
}

/// Per (method, target, episode) statistics across trials, plus rows with
/// `target_task = "all"` that first average over targets within each trial.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut per_target: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    let mut per_trial: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        per_target
            .entry((r.method.clone(), r.target_task.clone(), r.episode))
            .or_default()
            .push(r.episode_return);
        per_trial
            .entry((r.method.clone(), r.episode, r.trial))
            .or_default()
            .push(r.episode_return);
    }
    let mut across: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for ((method, episode, _trial), values) in per_trial {
        across
            .entry((method, episode))
            .or_default()
            .push(values.iter().sum::<f64>() / values.len() as f64);
    }
    let mut out: Vec<SummaryRow> = per_target
        .into_iter()
        .map(|((method, target_task, episode), values)| {
            let s = Stat::of(&values);
            SummaryRow {
                method,
                target_task,
                episode,
                n: s.n,
                mean: s.mean,
                stderr: s.stderr,
                ci95: s.ci95,
            }
        })
        .collect();
    out.extend(across.into_iter().map(|((method, episode), values)| {
        let s = Stat::of(&values);
        SummaryRow {
            method,
            target_task: "all".into(),
            episode,
            n: s.n,
            mean: s.mean,
            stderr: s.stderr,
            ci95: s.ci95,
        }
    }));
    out
}

/// Per-trial mean over all targets and the given episodes, one value per
/// trial in trial order.
pub fn trial_means<'a, I>(rows: I, method: &str, episodes: Option<&[usize]>) -> Vec<f64>
where
    I: IntoIterator<Item = &'a ResultRow>,
{
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if r.method != method {
            continue;
        }
        if let Some(eps) = episodes {
            if !eps.contains(&r.episode) {
                continue;
            }
        }
        let e = acc.entry(r.trial).or_insert((0.0, 0));
        e.0 += r.episode_return;
        e.1 += 1;
    }
    acc.into_values().map(|(s, n)| s / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub sample_size: usize,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci95: f64,
}

/// Per (size, method): statistics across trials of each trial's mean return
/// over all targets and episodes.
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummaryRow> {
    let mut acc: BTreeMap<(usize, String, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((r.sample_size, r.method.clone(), r.trial))
            .or_insert((0.0, 0));
        e.0 += r.episode_return;
        e.1 += 1;
    }
    let mut grouped: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for ((size, method, _), (s, n)) in acc {
        grouped.entry((size, method)).or_default().push(s / n as f64);
    }
    grouped
        .into_iter()
        .map(|((sample_size, method), values)| {
            let s = Stat::of(&values);
            AblationSummaryRow {
                sample_size,
                method,
                n: s.n,
                mean: s.mean,
                stderr: s.stderr,
                ci95: s.ci95,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, target: &str, ret: f64) -> ResultRow {
        ResultRow {
            trial,
            method: "ours-gp".into(),
            target_task: target.into(),
            episode: 1,
            episode_return: ret,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn header_and_round_trip() {
        let rows = vec![
            row(0, "nav2d:10.5:10", -65.639_610_306_789_28),
            row(1, "nav2d:0:10", 0.1 + 0.2),
        ];
        let bytes = results_to_bytes(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(&format!("{RESULTS_HEADER}\n")));
        assert!(!text.contains('\r'));
        let back: Vec<ResultRow> = read_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn ci_is_196_stderr() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.ci95 - 1.96 * sd / 2.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[5.0]).ci95, 0.0);
    }

    #[test]
    fn cross_target_average_per_trial() {
        let rows = vec![row(0, "a", 1.0), row(0, "b", 3.0), row(1, "a", 5.0), row(1, "b", 7.0)];
        let all: Vec<_> = summarize(&rows)
            .into_iter()
            .filter(|r| r.target_task == "all")
            .collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].mean, 4.0);
        assert_eq!(trial_means(&rows, "ours-gp", None), vec![2.0, 6.0]);
    }
}
