//! Binary field dumps: little-endian f64, row-major, with a sidecar JSON
//! header. `<stem>.f64` holds the raw samples and `<stem>.json` the metadata;
//! the round trip is bit-exact.

use crate::error::{LabError, Result};
use crate::grid::{build_grid, GraphFlow};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub schema: u32,
    pub experiment: String,
    /// Sample counts, time axis first: [M+1, N+1] or [M+1, N+1, N+1].
    pub dims: Vec<usize>,
    pub spacing: f64,
    pub t0: f64,
    pub dt: f64,
}

fn data_path(stem: &Path) -> PathBuf {
    stem.with_extension("f64")
}

fn header_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn dump_field(stem: &Path, header: &FieldHeader, data: &[f64]) -> Result<()> {
    let expect: usize = header.dims.iter().product();
    if expect != data.len() {
        return Err(LabError::FieldFormat(format!(
            "dims {:?} declare {expect} samples, got {}",
            header.dims,
            data.len()
        )));
    }
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(data_path(stem), bytes)?;
    let json = serde_json::to_string_pretty(header)
        .map_err(|e| LabError::FieldFormat(e.to_string()))?;
    fs::write(header_path(stem), json)?;
    Ok(())
}

pub fn load_field(stem: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let htext = fs::read_to_string(header_path(stem))?;
    let header: FieldHeader =
        serde_json::from_str(&htext).map_err(|e| LabError::FieldFormat(e.to_string()))?;
    if header.schema != SCHEMA_VERSION {
        return Err(LabError::FieldFormat(format!(
            "unsupported schema version {}",
            header.schema
        )));
    }
    let bytes = fs::read(data_path(stem))?;
    let expect: usize = header.dims.iter().product();
    if bytes.len() != expect * 8 {
        return Err(LabError::FieldFormat(format!(
            "payload is {} bytes, dims {:?} need {}",
            bytes.len(),
            header.dims,
            expect * 8
        )));
    }
    let mut data = Vec::with_capacity(expect);
    for chunk in bytes.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((header, data))
}

pub fn dump_graph_flow(stem: &Path, gf: &GraphFlow, experiment: &str) -> Result<()> {
    let g = &gf.grid;
    let mut dims = vec![g.steps + 1, g.nodes_per_axis()];
    if g.sdim() == 2 {
        dims.push(g.nodes_per_axis());
    }
    let header = FieldHeader {
        schema: SCHEMA_VERSION,
        experiment: experiment.to_string(),
        dims,
        spacing: g.hx,
        t0: g.t0,
        dt: g.dt,
    };
    dump_field(stem, &header, gf.samples())
}

pub fn load_graph_flow(stem: &Path) -> Result<(FieldHeader, GraphFlow)> {
    let (header, data) = load_field(stem)?;
    if header.dims.len() < 2 || header.dims.len() > 3 {
        return Err(LabError::FieldFormat(format!(
            "graph flow needs 2 or 3 dims, got {:?}",
            header.dims
        )));
    }
    let n = header.dims.len();
    let steps = header.dims[0] - 1;
    let cells = header.dims[1] - 1;
    if header.dims[1..].iter().any(|&d| d != cells + 1) {
        return Err(LabError::FieldFormat("spatial axes must agree".into()));
    }
    let t1 = header.t0 + steps as f64 * header.dt;
    let grid = build_grid(n, cells, steps, header.t0, t1)?;
    let gf = GraphFlow::from_samples(grid, data)?;
    Ok((header, gf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::sample_graph;

    #[test]
    fn header_shape_bookkeeping() {
        let g = build_grid(2, 8, 4, 0.0, 1.0).unwrap();
        let gf = sample_graph(&Expr::parse("x1 * t").unwrap(), &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("dump");
        dump_graph_flow(&stem, &gf, "unit").unwrap();
        let (h, _) = load_field(&stem).unwrap();
        assert_eq!(h.dims, vec![5, 9]);
        assert_eq!(h.spacing, 0.25);
    }

    #[test]
    fn roundtrip_bit_exact() {
        let g = build_grid(2, 8, 4, 0.0, 1.0).unwrap();
        let gf = sample_graph(&Expr::parse("sin(3*x1) - 0.1*t").unwrap(), &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("flow");
        dump_graph_flow(&stem, &gf, "unit").unwrap();
        let (_, back) = load_graph_flow(&stem).unwrap();
        assert_eq!(gf.samples(), back.samples());
        assert_eq!(gf.grid, back.grid);
    }

    #[test]
    fn truncated_payload_rejected() {
        let g = build_grid(2, 8, 4, 0.0, 1.0).unwrap();
        let gf = sample_graph(&Expr::parse("x1").unwrap(), &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cut");
        dump_graph_flow(&stem, &gf, "unit").unwrap();
        let raw = std::fs::read(stem.with_extension("f64")).unwrap();
        std::fs::write(stem.with_extension("f64"), &raw[..raw.len() - 8]).unwrap();
        assert!(matches!(load_field(&stem), Err(LabError::FieldFormat(_))));
    }
}
