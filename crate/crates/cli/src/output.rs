//! Report files written under `--out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cnl_core::train::{score_edges, DomainResult, EpochLog, SweepRow};
use cnl_core::{EdgeScores, GraphBundle, ModelParams, RunConfig};
use serde::Serialize;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Output {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut body = serde_json::to_string_pretty(value).expect("reports serialise");
        body.push('\n');
        self.write(name, &body)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per epoch; a leading `fold` column when `logs` carries fold ids.
pub fn epochs_csv(logs: &[(Option<usize>, &[EpochLog])]) -> String {
    let with_fold = logs.iter().any(|(f, _)| f.is_some());
    let mut s = String::new();
    if with_fold {
        s.push_str("fold,");
    }
    s.push_str("epoch,total,classification,contrastive,orthogonality,mutual_info,val_f1\n");
    for (fold, log) in logs {
        for e in *log {
            if with_fold {
                let _ = write!(s, "{},", fold.map(|f| f.to_string()).unwrap_or_default());
            }
            let l = &e.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.epoch,
                l.total,
                l.classification,
                l.contrastive,
                l.orthogonality,
                l.mutual_info,
                opt(e.val_f1)
            );
        }
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("tau,f1_mean,f1_std,delta_vs_0.1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.tau, r.f1_mean, r.f1_std, r.delta);
    }
    s
}

pub fn shift_csv(domains: &[DomainResult]) -> String {
    let mut s = String::from("domain,precision,recall,f1\n");
    for d in domains {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            d.domain, d.report.macro_precision, d.report.macro_recall, d.report.macro_f1
        );
    }
    s
}

pub fn edge_scores_csv(bundle: &GraphBundle, scores: &EdgeScores) -> String {
    let mut s = String::from("src,dst,raw_logit,normalized\n");
    for ((&(u, v), raw), norm) in bundle.edges().iter().zip(&scores.raw).zip(&scores.normalized) {
        let _ = writeln!(s, "{u},{v},{raw},{norm}");
    }
    s
}

/// Score the clean graph with `params` and write `edge_scores.csv`.
pub fn write_edge_scores(
    out: &OutDir,
    bundle: &GraphBundle,
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<PathBuf, CliError> {
    let scores = score_edges(params, bundle, cfg)?;
    out.write("edge_scores.csv", &edge_scores_csv(bundle, &scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_header_names_the_baseline() {
        let rows = [SweepRow {
            tau: 0.2,
            f1_mean: 0.5,
            f1_std: 0.1,
            delta: -0.01,
        }];
        assert_eq!(sweep_csv(&rows), "tau,f1_mean,f1_std,delta_vs_0.1\n0.2,0.5,0.1,-0.01\n");
    }
}
