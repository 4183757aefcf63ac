//! File formats: the KRF1 feature container, CSV fallbacks, distance-matrix
//! ingestion, and ranking/report emission.
//!
//! ## KRF1 layout (little-endian throughout)
//!
//! | offset | size        | content                                   |
//! |--------|-------------|-------------------------------------------|
//! | 0      | 4           | magic bytes `"KRF1"`                      |
//! | 4      | 4           | `u32` row count `n`                       |
//! | 8      | 4           | `u32` feature dimension `d`               |
//! | 12     | 4           | `u32` flags: bit 0 = ids, bit 1 = cameras |
//! | 16     | `4*n*d`     | row-major IEEE-754 `f32` features         |
//! | ...    | `4*n` (opt) | `i32` identity labels, if bit 0           |
//! | ...    | `4*n` (opt) | `i32` camera labels, if bit 1             |
//!
//! Declared sizes must match the byte length exactly; NaN/Inf payloads are
//! rejected. Camera label `-1` means "unknown". Features are stored as `f32`
//! on disk (embedding exporters emit that anyway); all in-memory accumulation
//! happens in `f64`.
//!
//! The CSV fallback for features expects a header `f0,...,f{d-1}[,id][,cam]`.
//! Distance matrices load from headerless CSV; mirror entries further apart
//! than 1e-5 are averaged with a warning, and the diagonal must be zero
//! within the same tolerance.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::types::{DistanceMatrix, EmbeddingSet, RankedResult};

pub const KRF_MAGIC: [u8; 4] = *b"KRF1";

const FLAG_IDS: u32 = 1;
const FLAG_CAMS: u32 = 1 << 1;

/// Writes `set` in the KRF1 container format.
pub fn save_features(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut flags = 0u32;
    if set.ids().is_some() {
        flags |= FLAG_IDS;
    }
    if set.cams().is_some() {
        flags |= FLAG_CAMS;
    }
    let mut bytes = Vec::with_capacity(16 + set.data().len() * 4);
    bytes.extend_from_slice(&KRF_MAGIC);
    bytes.extend_from_slice(&(set.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&flags.to_le_bytes());
    for v in set.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(ids) = set.ids() {
        for v in ids {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(cams) = set.cams() {
        for v in cams {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads features from KRF1, or from CSV when the path ends in `.csv`.
pub fn load_features(path: &Path) -> Result<EmbeddingSet> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        load_features_csv(&fs::read_to_string(path)?)
    } else {
        load_features_krf(&fs::read(path)?)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn load_features_krf(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile {
            expected: 16,
            found: bytes.len(),
        });
    }
    if bytes[..4] != KRF_MAGIC {
        return Err(Error::BadMagic);
    }
    let n = read_u32(bytes, 4) as usize;
    let dim = read_u32(bytes, 8) as usize;
    let flags = read_u32(bytes, 12);
    let has_ids = flags & FLAG_IDS != 0;
    let has_cams = flags & FLAG_CAMS != 0;
    let mut expected = 16 + 4 * n * dim;
    if has_ids {
        expected += 4 * n;
    }
    if has_cams {
        expected += 4 * n;
    }
    if bytes.len() != expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let mut offset = 16;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        data.push(f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()));
        offset += 4;
    }
    let read_i32s = |count: usize, offset: &mut usize| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(i32::from_le_bytes(bytes[*offset..*offset + 4].try_into().unwrap()));
            *offset += 4;
        }
        out
    };
    let ids = has_ids.then(|| read_i32s(n, &mut offset));
    let cams = has_cams.then(|| read_i32s(n, &mut offset));
    EmbeddingSet::new(data, dim, ids, cams)
}

/// CSV features: header `f0..f{d-1}[,id][,cam]`, one row per item.
/// Row indices in errors are 0-based over data rows.
pub fn load_features_csv(text: &str) -> Result<EmbeddingSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgs("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols.iter().take_while(|c| c.starts_with('f')).count();
    if dim == 0 {
        return Err(Error::InvalidArgs(
            "CSV header must start with feature columns f0..f{d-1}".into(),
        ));
    }
    let has_id = cols.get(dim) == Some(&"id");
    let has_cam = cols.get(dim + usize::from(has_id)) == Some(&"cam");
    let expected_cols = dim + usize::from(has_id) + usize::from(has_cam);
    if cols.len() != expected_cols {
        return Err(Error::InvalidArgs(format!(
            "unexpected CSV columns: {header}"
        )));
    }
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut cams = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected_cols {
            return Err(Error::InvalidArgs(format!(
                "row {row} has {} fields, expected {expected_cols}",
                fields.len()
            )));
        }
        for f in &fields[..dim] {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::NonFiniteValue { row })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row });
            }
            data.push(v);
        }
        if has_id {
            ids.push(
                fields[dim]
                    .parse::<i32>()
                    .map_err(|_| Error::InvalidArgs(format!("bad id at row {row}")))?,
            );
        }
        if has_cam {
            cams.push(
                fields[dim + usize::from(has_id)]
                    .parse::<i32>()
                    .map_err(|_| Error::InvalidArgs(format!("bad cam at row {row}")))?,
            );
        }
    }
    EmbeddingSet::new(data, dim, has_id.then_some(ids), has_cam.then_some(cams))
}

/// What the distance loader had to fix up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceLoadReport {
    pub max_asymmetry: f32,
    /// True when mirror entries disagreed beyond 1e-5 and were averaged.
    pub symmetrized: bool,
}

/// Loads a square distance matrix from headerless CSV and declares the first
/// `n_probe` indices as probes. Asymmetry beyond 1e-5 is repaired by
/// averaging `(a_ij + a_ji) / 2` and reported as a warning rather than an
/// error.
pub fn load_distance_matrix(path: &Path, n_probe: usize) -> Result<(DistanceMatrix, DistanceLoadReport)> {
    let text = fs::read_to_string(path)?;
    parse_distance_csv(&text, n_probe)
}

pub fn parse_distance_csv(text: &str, n_probe: usize) -> Result<(DistanceMatrix, DistanceLoadReport)> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = lines.len();
    if n == 0 {
        return Err(Error::InvalidArgs("empty distance CSV".into()));
    }
    let mut values = vec![0.0f32; n * n];
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: fields.len(),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f32 = f.parse().map_err(|_| Error::NonFiniteValue { row: i })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i });
            }
            if v < 0.0 {
                return Err(Error::InvalidDistance {
                    row: i,
                    col: j,
                    value: v as f64,
                });
            }
            values[i * n + j] = v;
        }
    }
    // measure asymmetry before the canonicalizing constructor averages it
    let mut max_asymmetry = 0.0f32;
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = (values[i * n + j] - values[j * n + i]).abs();
            if delta > max_asymmetry {
                max_asymmetry = delta;
            }
        }
    }
    let symmetrized = max_asymmetry > 1e-5;
    if symmetrized {
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (values[i * n + j] + values[j * n + i]);
                values[i * n + j] = avg;
                values[j * n + i] = avg;
            }
        }
    }
    let matrix = DistanceMatrix::new(values, n, n_probe)?;
    Ok((
        matrix,
        DistanceLoadReport {
            max_asymmetry,
            symmetrized,
        },
    ))
}

/// Writes rankings as CSV with columns `probe_index,rank,gallery_index,final_distance`.
/// Ranks are 1-based; float formatting is shortest round-trip, so output
/// bytes are deterministic and parse back to identical values.
pub fn write_ranking_csv<W: Write>(results: &[RankedResult], mut w: W) -> Result<()> {
    writeln!(w, "probe_index,rank,gallery_index,final_distance")?;
    for r in results {
        for (rank, (&g, &d)) in r.order.iter().zip(&r.distances).enumerate() {
            writeln!(w, "{},{},{},{}", r.probe_index, rank + 1, g, d)?;
        }
    }
    Ok(())
}

pub fn save_ranking_csv(results: &[RankedResult], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_ranking_csv(results, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Parses a ranking CSV produced by [`write_ranking_csv`].
pub fn load_ranking_csv(path: &Path) -> Result<Vec<RankedResult>> {
    let text = fs::read_to_string(path)?;
    parse_ranking_csv(&text)
}

pub fn parse_ranking_csv(text: &str) -> Result<Vec<RankedResult>> {
    let mut results: Vec<RankedResult> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidArgs(format!("bad ranking row: {line}")));
        }
        let probe: usize = fields[0]
            .parse()
            .map_err(|_| Error::InvalidArgs(format!("bad probe index: {line}")))?;
        let gallery: u32 = fields[2]
            .parse()
            .map_err(|_| Error::InvalidArgs(format!("bad gallery index: {line}")))?;
        let distance: f64 = fields[3]
            .parse()
            .map_err(|_| Error::InvalidArgs(format!("bad distance: {line}")))?;
        match results.last_mut() {
            Some(last) if last.probe_index == probe => {
                last.order.push(gallery);
                last.distances.push(distance);
            }
            _ => results.push(RankedResult {
                probe_index: probe,
                order: vec![gallery],
                distances: vec![distance],
            }),
        }
    }
    Ok(results)
}

/// Greppable CSV report: `metric,value` rows for mAP, probe count, and every
/// CMC rank.
pub fn write_eval_csv<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "mAP,{:.6}", report.map)?;
    writeln!(w, "n_valid_probes,{}", report.n_valid_probes)?;
    for (i, c) in report.cmc.iter().enumerate() {
        writeln!(w, "cmc@{},{:.6}", i + 1, c)?;
    }
    Ok(())
}

/// Human-readable report for the terminal.
pub fn format_eval_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("valid probes: {}\n", report.n_valid_probes));
    out.push_str(&format!("mAP:    {:.4}\n", report.map));
    for rank in [1usize, 5, 10, 20, 50] {
        if rank <= report.cmc.len() {
            out.push_str(&format!("rank-{:<2} {:.4}\n", rank, report.cmc[rank - 1]));
        }
    }
    out
}
