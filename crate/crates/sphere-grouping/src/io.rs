//! File formats: CSV matrices, 16-bit PGM masks, PPM visualizations, and
//! the flat key=value experiment config.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, so read-back is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::loss::InstanceLabeling;
use crate::net::PerPixelNet;

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad float: {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer: {s:?}")))
}

/// Writes an embedding as CSV: first line `D,N`, then `D` rows of `N`
/// comma-separated values.
pub fn write_embedding_csv(path: &Path, x: &EmbeddingMatrix) -> Result<()> {
    write_matrix_csv(path, x.data())
}

pub fn read_embedding_csv(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(read_matrix_csv(path)?)
}

/// Same `D,N`-headed CSV layout for an arbitrary real matrix.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let parts: Vec<&str> = header.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Parse(format!("bad header: {header:?}")));
    }
    let rows = parse_usize(parts[0])?;
    let cols = parse_usize(parts[1])?;
    let mut m = Array2::zeros((rows, cols));
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing row {r}")))??;
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols {
            return Err(Error::Parse(format!("row {r}: expected {cols} values")));
        }
        for (c, v) in vals.iter().enumerate() {
            m[[r, c]] = parse_f64(v)?;
        }
    }
    Ok(m)
}

/// Writes a labeling as a 16-bit binary PGM (P5) mask; pixel value is the
/// instance id.
pub fn write_labels_pgm(
    path: &Path,
    labels: &InstanceLabeling,
    width: usize,
    height: usize,
) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", width * height),
            got: format!("{}", labels.len()),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for &l in labels.labels() {
        w.write_all(&(l as u16).to_be_bytes())?;
    }
    Ok(())
}

pub fn read_labels_pgm(path: &Path) -> Result<(InstanceLabeling, usize, usize)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    // Header: magic, width, height, maxval as whitespace-separated tokens.
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1; // single whitespace after maxval
    if tokens.len() != 4 || tokens[0] != "P5" {
        return Err(Error::Parse("not a binary PGM".into()));
    }
    let width = parse_usize(&tokens[1])?;
    let height = parse_usize(&tokens[2])?;
    let maxval = parse_usize(&tokens[3])?;
    if maxval != 65535 {
        return Err(Error::Parse(format!("expected 16-bit PGM, maxval {maxval}")));
    }
    let n = width * height;
    if bytes.len() < pos + 2 * n {
        return Err(Error::Parse("truncated PGM payload".into()));
    }
    let labels: Vec<u32> = (0..n)
        .map(|i| u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as u32)
        .collect();
    Ok((InstanceLabeling::new(labels)?, width, height))
}

/// Labeling as CSV, one id per line (for point sets without image shape).
pub fn write_labels_csv(path: &Path, labels: &InstanceLabeling) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels.labels() {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<InstanceLabeling> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            labels.push(
                t.parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad label: {t:?}")))?,
            );
        }
    }
    Ok(InstanceLabeling::new(labels)?)
}

/// Color visualization of a scene's first three color channels as PPM (P6).
pub fn write_scene_ppm(
    path: &Path,
    features: &Array2<f64>,
    width: usize,
    height: usize,
) -> Result<()> {
    if features.ncols() != width * height || features.nrows() < 5 {
        return Err(Error::ShapeMismatch {
            expected: format!("5 x {}", width * height),
            got: format!("{:?}", features.dim()),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    for i in 0..width * height {
        for k in 0..3 {
            let v = (features[[2 + k, i]].clamp(0.0, 1.0) * 255.0).round() as u8;
            w.write_all(&[v])?;
        }
    }
    Ok(())
}

/// Per-loop losses as CSV: `loop,value,positive_term,negative_term`.
pub fn write_losses_csv(path: &Path, losses: &[crate::loss::LossResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "loop,value,positive_term,negative_term")?;
    for (t, l) in losses.iter().enumerate() {
        writeln!(w, "{t},{},{},{}", l.value, l.positive_term, l.negative_term)?;
    }
    Ok(())
}

/// Generic two-column metric CSV: `metric,value` rows.
pub fn write_metrics_csv(path: &Path, metrics: &[(String, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "metric,value")?;
    for (name, value) in metrics {
        writeln!(w, "{name},{value}")?;
    }
    Ok(())
}

/// Network parameters as CSV blocks, each headed by `layer,rows,cols`.
pub fn write_net_csv(path: &Path, net: &PerPixelNet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let blocks: [(&str, &Array2<f64>); 2] = [("w1", &net.w1), ("w2", &net.w2)];
    for (name, m) in blocks {
        writeln!(w, "{name},{},{}", m.nrows(), m.ncols())?;
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    let vecs: [(&str, &Array1<f64>); 2] = [("b1", &net.b1), ("b2", &net.b2)];
    for (name, v) in vecs {
        writeln!(w, "{name},1,{}", v.len())?;
        let line: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_net_csv(path: &Path) -> Result<PerPixelNet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut blocks: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("bad block header: {header:?}")));
        }
        let name = parts[0].to_string();
        let rows = parse_usize(parts[1])?;
        let cols = parse_usize(parts[2])?;
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("{name}: missing row {r}")))??;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != cols {
                return Err(Error::Parse(format!("{name} row {r}: expected {cols} values")));
            }
            for (c, v) in vals.iter().enumerate() {
                m[[r, c]] = parse_f64(v)?;
            }
        }
        blocks.insert(name, m);
    }
    let take = |name: &str| -> Result<Array2<f64>> {
        blocks
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("missing block {name:?}")))
    };
    Ok(PerPixelNet {
        w1: take("w1")?,
        b1: take("b1")?.row(0).to_owned(),
        w2: take("w2")?,
        b2: take("b2")?.row(0).to_owned(),
    })
}

/// Flat `key=value` config file; `#` starts a comment line.
pub fn read_kv_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {t:?}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
