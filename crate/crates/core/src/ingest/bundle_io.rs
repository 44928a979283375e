//! The bundle directory format:
//!
//! | file           | content                                   |
//! |----------------|-------------------------------------------|
//! | `edges.csv`    | header `src,dst` or `src,dst,weight`      |
//! | `features.csv` | header `node_id,f0,...,f{d-1}`            |
//! | `labels.csv`   | header `node_id,label`                    |
//! | `meta.json`    | `num_nodes`, `num_edges`, `feature_dim`, `class_count`, `directed`, `source` |
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which reads back to the identical `f64`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::graph::{build_bundle_with_classes, GraphBundle};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub directed: bool,
    pub source: String,
}

impl BundleMeta {
    pub fn describe(bundle: &GraphBundle, source: &str) -> Self {
        Self {
            num_nodes: bundle.num_nodes(),
            num_edges: bundle.num_edges(),
            feature_dim: bundle.feature_dim(),
            class_count: bundle.class_count(),
            directed: !bundle.is_symmetric(),
            source: source.to_string(),
        }
    }
}

/// 17 significant digits, scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn reader(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::Missing {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::malformed(path, line, e.to_string())
}

fn headers(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>, IngestError> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, IngestError> {
    let raw = rec
        .get(i)
        .ok_or_else(|| IngestError::malformed(path, line, format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| IngestError::malformed(path, line, format!("cannot parse `{raw}` as {name}")))
}

/// Rows keyed by `node_id`; every id in `0..n` must appear exactly once.
fn place(path: &Path, line: u64, id: usize, n: usize, seen: &mut [bool]) -> Result<(), IngestError> {
    if id >= n {
        return Err(IngestError::malformed(path, line, format!("node_id {id} >= num_nodes {n}")));
    }
    if std::mem::replace(&mut seen[id], true) {
        return Err(IngestError::malformed(path, line, format!("node_id {id} listed twice")));
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<GraphBundle, IngestError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| IngestError::Missing {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    let meta: BundleMeta = serde_json::from_str(&meta_text).map_err(|e| {
        IngestError::malformed(&meta_path, e.line() as u64, e.to_string())
    })?;
    let n = meta.num_nodes;

    // edges.csv
    let path = dir.join("edges.csv");
    let mut rdr = reader(&path)?;
    let h = headers(&path, &mut rdr)?;
    let weighted = match h.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["src", "dst"] => false,
        ["src", "dst", "weight"] => true,
        other => {
            return Err(IngestError::malformed(
                &path,
                1,
                format!("expected header `src,dst[,weight]`, found `{}`", other.join(",")),
            ))
        }
    };
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let s: usize = field(&path, line, &rec, 0, "src")?;
        let d: usize = field(&path, line, &rec, 1, "dst")?;
        if s >= n || d >= n {
            return Err(IngestError::malformed(
                &path,
                line,
                format!("edge ({s},{d}) references a node >= num_nodes {n}"),
            ));
        }
        edges.push((s, d));
        if weighted {
            weights.push(field::<f64>(&path, line, &rec, 2, "weight")?);
        }
    }
    if edges.len() != meta.num_edges {
        return Err(IngestError::CountMismatch {
            path,
            what: "edge count",
            expected: meta.num_edges,
            found: edges.len(),
        });
    }

    // features.csv
    let path = dir.join("features.csv");
    let mut rdr = reader(&path)?;
    let h = headers(&path, &mut rdr)?;
    let d = h.len().saturating_sub(1);
    let expected_header: Vec<String> = std::iter::once("node_id".to_string())
        .chain((0..d).map(|j| format!("f{j}")))
        .collect();
    if h != expected_header {
        return Err(IngestError::malformed(&path, 1, "expected header `node_id,f0,...`"));
    }
    if d != meta.feature_dim {
        return Err(IngestError::CountMismatch {
            path,
            what: "feature dimension",
            expected: meta.feature_dim,
            found: d,
        });
    }
    let mut features = Matrix::zeros(n, d);
    let mut seen = vec![false; n];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 1 {
            return Err(IngestError::malformed(&path, line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let id: usize = field(&path, line, &rec, 0, "node_id")?;
        place(&path, line, id, n, &mut seen)?;
        for j in 0..d {
            features.set(id, j, field(&path, line, &rec, j + 1, "feature")?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(IngestError::CountMismatch {
            path,
            what: "feature rows",
            expected: n,
            found: rows,
        });
    }

    // labels.csv
    let path = dir.join("labels.csv");
    let mut rdr = reader(&path)?;
    if headers(&path, &mut rdr)? != ["node_id", "label"] {
        return Err(IngestError::malformed(&path, 1, "expected header `node_id,label`"));
    }
    let mut labels = vec![0usize; n];
    let mut seen = vec![false; n];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = field(&path, line, &rec, 0, "node_id")?;
        place(&path, line, id, n, &mut seen)?;
        labels[id] = field(&path, line, &rec, 1, "label")?;
        rows += 1;
    }
    if rows != n {
        return Err(IngestError::CountMismatch {
            path,
            what: "label rows",
            expected: n,
            found: rows,
        });
    }
    let found_classes = labels.iter().max().map_or(0, |m| m + 1);
    if found_classes > meta.class_count {
        return Err(IngestError::CountMismatch {
            path,
            what: "class count",
            expected: meta.class_count,
            found: found_classes,
        });
    }

    let (bundle, report) = build_bundle_with_classes(
        &edges,
        features,
        labels,
        weighted.then_some(weights),
        meta.class_count,
    )?;
    if report.duplicates_removed + report.self_loops_removed > 0 {
        log::warn!(
            "{}: dropped {} duplicate edges and {} self-loops",
            dir.display(),
            report.duplicates_removed,
            report.self_loops_removed
        );
    }
    Ok(bundle)
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IngestError::io(path, e))
}

/// Write `bundle` into `dir` (created if needed).
pub fn write_bundle(bundle: &GraphBundle, dir: &Path, source: &str) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: std::io::Error| IngestError::io(path.clone(), e)
    };

    let path = dir.join("edges.csv");
    let mut w = create(&path)?;
    let weights = bundle.edge_weights();
    if weights.is_some() {
        writeln!(w, "src,dst,weight").map_err(io(&path))?;
    } else {
        writeln!(w, "src,dst").map_err(io(&path))?;
    }
    for (e, &(s, d)) in bundle.edges().iter().enumerate() {
        match weights {
            Some(ws) => writeln!(w, "{s},{d},{}", format_float(ws[e])),
            None => writeln!(w, "{s},{d}"),
        }
        .map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join("features.csv");
    let mut w = create(&path)?;
    let x = bundle.features();
    let mut line = String::from("node_id");
    for j in 0..x.cols() {
        line.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{line}").map_err(io(&path))?;
    for v in 0..x.rows() {
        line.clear();
        line.push_str(&v.to_string());
        for &f in x.row(v) {
            line.push(',');
            line.push_str(&format_float(f));
        }
        writeln!(w, "{line}").map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join("labels.csv");
    let mut w = create(&path)?;
    writeln!(w, "node_id,label").map_err(io(&path))?;
    for (v, l) in bundle.labels().iter().enumerate() {
        writeln!(w, "{v},{l}").map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&BundleMeta::describe(bundle, source))
        .expect("meta serialises");
    fs::write(&path, meta + "\n").map_err(io(&path))?;
    Ok(())
}
