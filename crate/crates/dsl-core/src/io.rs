//! Plain-text persistence for datasets, ground truth, coordinates, and
//! fitted models.
//!
//! Layout of a dataset directory:
//!
//! - `data.csv` - header of node names, then one row of values per sample
//! - `labels.csv` - one `1` or `-1` per line, aligned with the data rows
//! - `edges.csv` - `src,dst,weight` rows naming summary-graph edges
//!
//! Floats are written as `{:.16e}` (17 significant digits), which survives
//! a parse round trip bit for bit. Models are stored as JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{DslError, Result};
use crate::graph::SummaryGraph;
use crate::optim::DslModel;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| DslError::io(path, e))?,
    ))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| DslError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| DslError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DslError {
    DslError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Node names become CSV fields verbatim, so they must stay delimiter-free.
fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(',') || name.contains('\n') || name.contains('\r') {
        return Err(DslError::InvalidParameter {
            name: "node name",
            message: format!("{name:?} is empty or contains a delimiter"),
        });
    }
    Ok(())
}

/// Writes `data.csv`, `labels.csv`, and `edges.csv` into `dir` (created if
/// missing).
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DslError::io(dir, e))?;
    let graph = data.graph();
    for name in graph.node_names() {
        check_name(name)?;
    }

    let data_path = dir.join("data.csv");
    let mut f = open_writer(&data_path)?;
    writeln!(f, "{}", graph.node_names().join(",")).map_err(|e| DslError::io(&data_path, e))?;
    let x = data.x();
    for j in 0..data.n_samples() {
        let row: Vec<String> = (0..data.n_nodes()).map(|i| fmt(x[(i, j)])).collect();
        writeln!(f, "{}", row.join(",")).map_err(|e| DslError::io(&data_path, e))?;
    }
    f.flush().map_err(|e| DslError::io(&data_path, e))?;

    let labels_path = dir.join("labels.csv");
    let mut f = open_writer(&labels_path)?;
    for &label in data.y() {
        writeln!(f, "{label}").map_err(|e| DslError::io(&labels_path, e))?;
    }
    f.flush().map_err(|e| DslError::io(&labels_path, e))?;

    let edges_path = dir.join("edges.csv");
    save_edges(&edges_path, graph)?;
    Ok(())
}

fn save_edges(path: &Path, graph: &SummaryGraph) -> Result<()> {
    let mut f = open_writer(path)?;
    writeln!(f, "src,dst,weight").map_err(|e| DslError::io(path, e))?;
    let names = graph.node_names();
    for e in graph.edges() {
        writeln!(f, "{},{},{}", names[e.a], names[e.b], fmt(e.weight))
            .map_err(|e| DslError::io(path, e))?;
    }
    f.flush().map_err(|e| DslError::io(path, e))
}

/// Loads a dataset directory written by [`save_dataset`] (or assembled by
/// hand in the same shape).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let data_path = dir.join("data.csv");
    let lines = read_lines(&data_path)?;
    if lines.is_empty() {
        return Err(parse_err(&data_path, 1, "missing header row"));
    }
    let names: Vec<String> = lines[0].split(',').map(|s| s.trim().to_string()).collect();
    for name in &names {
        check_name(name).map_err(|_| parse_err(&data_path, 1, format!("bad node name {name:?}")))?;
    }
    let m = names.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m {
            return Err(parse_err(
                &data_path,
                idx + 1,
                format!("expected {m} columns, found {}", fields.len()),
            ));
        }
        let row = fields
            .iter()
            .map(|f| parse_float(&data_path, idx + 1, f))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(DslError::EmptyDataset);
    }
    // samples arrive as rows; the data matrix keeps them as columns
    let x = DMatrix::from_fn(m, n, |i, j| rows[j][i]);

    let labels_path = dir.join("labels.csv");
    let mut y = Vec::new();
    for (idx, line) in read_lines(&labels_path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let label: i64 = t
            .parse()
            .map_err(|_| parse_err(&labels_path, idx + 1, format!("invalid label {t:?}")))?;
        if label != 1 && label != -1 {
            return Err(DslError::InvalidLabel {
                found: label.to_string(),
            });
        }
        y.push(label as i8);
    }
    if y.len() != n {
        return Err(parse_err(
            &labels_path,
            y.len() + 1,
            format!("{} labels for {n} samples", y.len()),
        ));
    }

    let graph = load_edges(&dir.join("edges.csv"), names)?;
    Dataset::new(x, y, Arc::new(graph))
}

fn load_edges(path: &Path, names: Vec<String>) -> Result<SummaryGraph> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim()) != Some("src,dst,weight") {
        return Err(parse_err(path, 1, "expected header 'src,dst,weight'"));
    }
    let index: std::collections::HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut edges = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let resolve = |field: &str| -> Result<usize> {
            index
                .get(field.trim())
                .copied()
                .ok_or_else(|| DslError::UnknownNode {
                    node: field.trim().to_string(),
                    context: format!("{} line {}", path.display(), idx + 1),
                })
        };
        let a = resolve(fields[0])?;
        let b = resolve(fields[1])?;
        let w = parse_float(path, idx + 1, fields[2])?;
        edges.push((a, b, w));
    }
    SummaryGraph::from_weighted_edges(names, &edges)
}

/// Writes ground-truth node names, one per line.
pub fn save_gt_nodes(path: &Path, graph: &SummaryGraph, nodes: &[usize]) -> Result<()> {
    let names = graph.node_names();
    let mut f = open_writer(path)?;
    for &i in nodes {
        let name = names.get(i).ok_or(DslError::InvalidParameter {
            name: "gt_nodes",
            message: format!("node index {i} out of range"),
        })?;
        writeln!(f, "{name}").map_err(|e| DslError::io(path, e))?;
    }
    f.flush().map_err(|e| DslError::io(path, e))
}

/// Reads ground-truth node names and resolves them against the graph.
pub fn load_gt_nodes(path: &Path, graph: &SummaryGraph) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<&str, usize> = graph
        .node_names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut nodes = Vec::new();
    for line in read_lines(path)? {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let i = index.get(t).copied().ok_or_else(|| DslError::UnknownNode {
            node: t.to_string(),
            context: path.display().to_string(),
        })?;
        nodes.push(i);
    }
    Ok(nodes)
}

/// Writes planar node coordinates as `node,x,y` rows.
pub fn save_coords(path: &Path, graph: &SummaryGraph, coords: &[[f64; 2]]) -> Result<()> {
    if coords.len() != graph.node_count() {
        return Err(DslError::DimensionMismatch {
            context: "coordinates vs nodes".into(),
            expected: graph.node_count(),
            found: coords.len(),
        });
    }
    let mut f = open_writer(path)?;
    writeln!(f, "node,x,y").map_err(|e| DslError::io(path, e))?;
    for (name, c) in graph.node_names().iter().zip(coords) {
        writeln!(f, "{name},{},{}", fmt(c[0]), fmt(c[1])).map_err(|e| DslError::io(path, e))?;
    }
    f.flush().map_err(|e| DslError::io(path, e))
}

/// Serializes a fitted model as JSON.
pub fn save_model(path: &Path, model: &DslModel) -> Result<()> {
    let f = open_writer(path)?;
    serde_json::to_writer_pretty(f, model)?;
    Ok(())
}

/// Loads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<DslModel> {
    let f = File::open(path).map_err(|e| DslError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::optim::{fit, FitOptions, Hyperparams};

    fn sample_data() -> crate::data::SyntheticData {
        generate_synthetic(&SyntheticConfig {
            n_nodes: 12,
            tau: 0.4,
            n_samples: 10,
            gt_size: 4,
            sigma: 2.5,
            pos_range: (50.0, 100.0),
            neg_range: (-100.0, -50.0),
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let data = sample_data();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data.dataset).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.x(), data.dataset.x());
        assert_eq!(back.y(), data.dataset.y());
        let (g0, g1) = (data.dataset.graph(), back.graph());
        assert_eq!(g0.node_names(), g1.node_names());
        assert_eq!(g0.edge_count(), g1.edge_count());
        for (a, b) in g0.edges().iter().zip(g1.edges()) {
            assert_eq!((a.a, a.b), (b.a, b.b));
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn gt_and_coords_round_trip() {
        let data = sample_data();
        let dir = tempfile::tempdir().unwrap();
        let graph = data.dataset.graph();
        let gt_path = dir.path().join("gt_nodes.csv");
        save_gt_nodes(&gt_path, graph, &data.gt_nodes).unwrap();
        assert_eq!(load_gt_nodes(&gt_path, graph).unwrap(), data.gt_nodes);

        let coords_path = dir.path().join("coords.csv");
        save_coords(&coords_path, graph, &data.coords).unwrap();
        let lines = read_lines(&coords_path).unwrap();
        assert_eq!(lines[0], "node,x,y");
        assert_eq!(lines.len(), 13);
    }

    #[test]
    fn model_round_trip_preserves_bits() {
        let data = sample_data();
        let hp = Hyperparams::new(0.1, 0.3, 1.0, 1.0).unwrap();
        let model = fit(&data.dataset, &hp, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.selection.phi(), model.selection.phi());
        assert_eq!(back.selection.reweight(), model.selection.reweight());
        assert_eq!(back.hyperplane.w, model.hyperplane.w);
        assert_eq!(back.hyperplane.b, model.hyperplane.b);
        assert_eq!(back.hyper, model.hyper);
        assert_eq!(back.trace.len(), model.trace.len());
        assert_eq!(back.converged, model.converged);
    }

    #[test]
    fn parse_errors_name_path_and_line() {
        let data = sample_data();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data.dataset).unwrap();

        // corrupt one value on data row 3 (file line 4)
        let data_path = dir.path().join("data.csv");
        let mut lines = read_lines(&data_path).unwrap();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[1] = "oops".into();
        lines[3] = fields.join(",");
        std::fs::write(&data_path, lines.join("\n")).unwrap();
        match load_dataset(dir.path()) {
            Err(DslError::Parse { path, line, .. }) => {
                assert!(path.ends_with("data.csv"));
                assert_eq!(line, 4);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_finite_and_bad_labels() {
        let data = sample_data();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data.dataset).unwrap();

        let data_path = dir.path().join("data.csv");
        let mut lines = read_lines(&data_path).unwrap();
        let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
        fields[0] = "NaN".into();
        lines[1] = fields.join(",");
        std::fs::write(&data_path, lines.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DslError::Parse { line: 2, .. })
        ));

        // restore data, corrupt a label instead
        save_dataset(dir.path(), &data.dataset).unwrap();
        let labels_path = dir.path().join("labels.csv");
        let mut lines = read_lines(&labels_path).unwrap();
        lines[0] = "3".into();
        std::fs::write(&labels_path, lines.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DslError::InvalidLabel { found }) if found == "3"
        ));
    }

    #[test]
    fn unknown_edge_node_is_reported() {
        let data = sample_data();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data.dataset).unwrap();
        let edges_path = dir.path().join("edges.csv");
        let mut lines = read_lines(&edges_path).unwrap();
        let replacement = format!("ghost,{}", lines[1].split_once(',').unwrap().1);
        lines[1] = replacement;
        std::fs::write(&edges_path, lines.join("\n")).unwrap();
        match load_dataset(dir.path()) {
            Err(DslError::UnknownNode { node, .. }) => assert_eq!(node, "ghost"),
            other => panic!("expected unknown node, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_maps_to_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DslError::Io { .. })
        ));
    }
}
