//! File formats: dense CSV and Matrix Market counts, gene flags, treatment
//! labels, doublet flags and split manifests.
//!
//! `counts.csv`: optional header (`cell_id,<gene ids...>` or just gene ids),
//! one integer row per cell. `counts.mtx`: coordinate integer format with
//! 1-based `(cell, gene, count)` triplets. `genes.csv`:
//! `gene_id,is_mito,is_hemoglobin,is_ribosomal`. `perts.csv`:
//! `cell_id,treatment` with `+`-joined combinations. `doublets.csv`:
//! `cell_id,is_doublet`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{default_ids, ExpressionMatrix, GeneFlags, PerturbationSet, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountFormat {
    DenseCsv,
    MatrixMarket,
}

impl CountFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") => Self::MatrixMarket,
            _ => Self::DenseCsv,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(source: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_count(field: &str, source: &str, line: u64) -> Result<u32> {
    let field = field.trim();
    match field.parse::<i64>() {
        Ok(v) if v < 0 => Err(Error::Validation(format!(
            "{source}:{line}: negative count {v}"
        ))),
        Ok(v) => u32::try_from(v).map_err(|_| parse_err(source, line, format!("count {v} too large"))),
        Err(_) => match field.parse::<f64>() {
            Ok(v) if v.is_finite() && v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 => Ok(v as u32),
            Ok(v) if v < 0.0 => Err(Error::Validation(format!("{source}:{line}: negative count {v}"))),
            Ok(v) => Err(Error::Validation(format!(
                "{source}:{line}: non-integer count {v}"
            ))),
            Err(_) => Err(parse_err(source, line, format!("cannot parse '{field}' as a count"))),
        },
    }
}

fn csv_records(text: &str, source: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Parse dense CSV counts. `source` names the input in error messages.
pub fn parse_counts_csv(text: &str, source: &str) -> Result<ExpressionMatrix> {
    let records = csv_records(text, source)?;
    let Some((_, first)) = records.first() else {
        return Err(parse_err(source, 1, "empty counts file"));
    };
    let first_is_data = first.iter().all(|f| f.trim().parse::<f64>().is_ok());
    let (has_cell_col, gene_ids, body) = if first_is_data {
        (false, None, &records[..])
    } else {
        let fields: Vec<String> = first.iter().map(|f| f.trim().to_string()).collect();
        if fields.first().map(String::as_str) == Some("cell_id") {
            (true, Some(fields[1..].to_vec()), &records[1..])
        } else {
            (false, Some(fields), &records[1..])
        }
    };
    let n_genes = match &gene_ids {
        Some(g) => g.len(),
        None => first.len(),
    };
    let mut counts = Vec::with_capacity(body.len() * n_genes);
    let mut cell_ids = Vec::with_capacity(body.len());
    for (line, rec) in body {
        let expected = n_genes + usize::from(has_cell_col);
        if rec.len() != expected {
            return Err(parse_err(
                source,
                *line,
                format!("expected {expected} fields, found {}", rec.len()),
            ));
        }
        let mut fields = rec.iter();
        if has_cell_col {
            cell_ids.push(fields.next().unwrap_or_default().trim().to_string());
        } else {
            cell_ids.push(format!("cell{}", cell_ids.len()));
        }
        for f in fields {
            counts.push(parse_count(f, source, *line)?);
        }
    }
    let n_cells = cell_ids.len();
    ExpressionMatrix::new(
        n_cells,
        n_genes,
        counts,
        gene_ids.unwrap_or_else(|| default_ids("gene", n_genes)),
        vec![GeneFlags::default(); n_genes],
        cell_ids,
    )
}

/// Parse Matrix Market coordinate counts (rows = cells, columns = genes).
pub fn parse_counts_mtx(text: &str, source: &str) -> Result<ExpressionMatrix> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k as u64 + 1, l));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(source, 1, "empty matrix market file"))?;
    let h: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(parse_err(source, hline, "expected '%%MatrixMarket matrix coordinate ...' header"));
    }
    if h[3] != "integer" && h[3] != "real" {
        return Err(parse_err(source, hline, format!("unsupported field type '{}'", h[3])));
    }
    if h[4] != "general" {
        return Err(parse_err(source, hline, format!("unsupported symmetry '{}'", h[4])));
    }
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let (sline, size) = body
        .next()
        .ok_or_else(|| parse_err(source, hline + 1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(source, sline, "size line must be 'rows cols nnz'"))?;
    let [n_cells, n_genes, nnz] = dims[..] else {
        return Err(parse_err(source, sline, "size line must be 'rows cols nnz'"));
    };
    let mut counts = vec![0u32; n_cells * n_genes];
    let mut seen = vec![false; n_cells * n_genes];
    let mut entries = 0usize;
    for (line, l) in body {
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(source, line, "entry must be 'row col value'"));
        }
        let idx = |s: &str, max: usize| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err(source, line, format!("bad index '{s}'")))?;
            if v == 0 || v > max {
                return Err(parse_err(source, line, format!("index {v} out of range 1..={max}")));
            }
            Ok(v - 1)
        };
        let i = idx(parts[0], n_cells)?;
        let j = idx(parts[1], n_genes)?;
        let v = parse_count(parts[2], source, line)?;
        let k = i * n_genes + j;
        if seen[k] {
            return Err(parse_err(source, line, format!("duplicate entry ({}, {})", i + 1, j + 1)));
        }
        seen[k] = true;
        counts[k] = v;
        entries += 1;
    }
    if entries != nnz {
        return Err(parse_err(
            source,
            sline,
            format!("size line declares {nnz} entries, found {entries}"),
        ));
    }
    ExpressionMatrix::from_counts(n_cells, n_genes, counts)
}

/// Load counts, optionally attaching a `genes.csv` annotation.
///
/// For Matrix Market input the gene file also supplies gene ids, in order.
pub fn load_counts(path: &Path, format: CountFormat, genes: Option<&Path>) -> Result<ExpressionMatrix> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    let mut m = match format {
        CountFormat::DenseCsv => parse_counts_csv(&text, &source)?,
        CountFormat::MatrixMarket => parse_counts_mtx(&text, &source)?,
    };
    if let Some(gpath) = genes {
        let flags = load_gene_flags(gpath)?;
        if format == CountFormat::MatrixMarket {
            if flags.len() != m.n_genes() {
                return Err(Error::validation(format!(
                    "{} lists {} genes, matrix has {}",
                    gpath.display(),
                    flags.len(),
                    m.n_genes()
                )));
            }
            m.gene_ids = flags.iter().map(|(id, _)| id.clone()).collect();
        }
        m.apply_gene_flags(&flags)?;
    }
    Ok(m)
}

pub fn write_counts_csv(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let mut out = String::with_capacity(m.n_cells() * m.n_genes() * 3);
    out.push_str("cell_id");
    for g in &m.gene_ids {
        out.push(',');
        out.push_str(g);
    }
    out.push('\n');
    for i in 0..m.n_cells() {
        out.push_str(&m.cell_ids[i]);
        for c in m.row(i) {
            out.push(',');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_counts_mtx(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let nnz = m.counts().iter().filter(|&&c| c > 0).count();
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate integer general\n");
    out.push_str(&format!("{} {} {}\n", m.n_cells(), m.n_genes(), nnz));
    for i in 0..m.n_cells() {
        for (j, &c) in m.row(i).iter().enumerate() {
            if c > 0 {
                out.push_str(&format!("{} {} {}\n", i + 1, j + 1, c));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_counts(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    match CountFormat::from_path(path) {
        CountFormat::DenseCsv => write_counts_csv(path, m),
        CountFormat::MatrixMarket => write_counts_mtx(path, m),
    }
}

fn parse_flag(s: &str, source: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(parse_err(source, line, format!("expected 0/1, found '{other}'"))),
    }
}

pub fn load_gene_flags(path: &Path) -> Result<Vec<(String, GeneFlags)>> {
    let source = path.display().to_string();
    let records = csv_records(&read_text(path)?, &source)?;
    let mut out = Vec::new();
    for (k, (line, rec)) in records.iter().enumerate() {
        if k == 0 && rec.get(0).map(str::trim) == Some("gene_id") {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(&source, *line, "expected gene_id,is_mito,is_hemoglobin,is_ribosomal"));
        }
        out.push((
            rec[0].trim().to_string(),
            GeneFlags {
                is_mito: parse_flag(&rec[1], &source, *line)?,
                is_hemoglobin: parse_flag(&rec[2], &source, *line)?,
                is_ribosomal: parse_flag(&rec[3], &source, *line)?,
            },
        ));
    }
    Ok(out)
}

pub fn write_gene_flags(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let mut out = String::from("gene_id,is_mito,is_hemoglobin,is_ribosomal\n");
    for (id, f) in m.gene_ids.iter().zip(&m.gene_flags) {
        out.push_str(&format!(
            "{id},{},{},{}\n",
            u8::from(f.is_mito),
            u8::from(f.is_hemoglobin),
            u8::from(f.is_ribosomal)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Build a multi-hot set from per-cell `+`-joined labels. With no registry
/// the treatment columns follow first appearance.
pub fn parse_perturbations(labels: &[&str], registry: Option<&[String]>) -> Result<PerturbationSet> {
    let mut names: Vec<String> = registry.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, usize> =
        names.iter().enumerate().map(|(k, n)| (n.clone(), k)).collect();
    let mut patterns = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        if label.trim().is_empty() {
            return Err(Error::validation(format!("row {i}: empty treatment")));
        }
        let mut pattern = Vec::new();
        for part in label.split('+') {
            let name = part.trim();
            if name.is_empty() {
                return Err(Error::validation(format!("row {i}: empty treatment name in '{label}'")));
            }
            let t = match index.get(name) {
                Some(&t) => t,
                None if registry.is_some() => {
                    return Err(Error::validation(format!("row {i}: unknown treatment '{name}'")))
                }
                None => {
                    names.push(name.to_string());
                    index.insert(name.to_string(), names.len() - 1);
                    names.len() - 1
                }
            };
            pattern.push(t);
        }
        pattern.sort_unstable();
        pattern.dedup();
        patterns.push(pattern);
    }
    PerturbationSet::from_patterns(&patterns, names)
}

fn read_perturbation_rows(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let source = path.display().to_string();
    let records = csv_records(&read_text(path)?, &source)?;
    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for (k, (line, rec)) in records.iter().enumerate() {
        if k == 0 && rec.get(0).map(str::trim) == Some("cell_id") {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(&source, *line, "expected cell_id,treatment"));
        }
        cells.push(rec[0].trim().to_string());
        labels.push(rec[1].trim().to_string());
    }
    Ok((cells, labels))
}

/// Read `perts.csv`; returns the cell ids alongside the multi-hot set.
pub fn load_perturbations(path: &Path) -> Result<(Vec<String>, PerturbationSet)> {
    let (cells, labels) = read_perturbation_rows(path)?;
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok((cells, parse_perturbations(&refs, None)?))
}

pub fn load_perturbations_with_registry(
    path: &Path,
    registry: &[String],
) -> Result<(Vec<String>, PerturbationSet)> {
    let (cells, labels) = read_perturbation_rows(path)?;
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok((cells, parse_perturbations(&refs, Some(registry))?))
}

pub fn write_perturbations(path: &Path, cell_ids: &[String], p: &PerturbationSet) -> Result<()> {
    let mut out = String::from("cell_id,treatment\n");
    for (i, id) in cell_ids.iter().enumerate() {
        let names: Vec<&str> = p.pattern(i).iter().map(|&t| p.treatment_names[t].as_str()).collect();
        out.push_str(&format!("{id},{}\n", names.join("+")));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read `doublets.csv`, aligned to `cell_ids`. Missing cells are an error.
pub fn load_doublets(path: &Path, cell_ids: &[String]) -> Result<Vec<bool>> {
    let source = path.display().to_string();
    let records = csv_records(&read_text(path)?, &source)?;
    let mut by_cell = BTreeMap::new();
    for (k, (line, rec)) in records.iter().enumerate() {
        if k == 0 && rec.get(0).map(str::trim) == Some("cell_id") {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(&source, *line, "expected cell_id,is_doublet"));
        }
        by_cell.insert(rec[0].trim().to_string(), parse_flag(&rec[1], &source, *line)?);
    }
    cell_ids
        .iter()
        .map(|c| {
            by_cell
                .get(c)
                .copied()
                .ok_or_else(|| Error::validation(format!("cell '{c}' missing from {source}")))
        })
        .collect()
}

pub fn write_doublets(path: &Path, cell_ids: &[String], doublets: &[bool]) -> Result<()> {
    let mut out = String::from("cell_id,is_doublet\n");
    for (id, &d) in cell_ids.iter().zip(doublets) {
        out.push_str(&format!("{id},{}\n", u8::from(d)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, split)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<Split> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// Standard file names inside a dataset directory.
pub const COUNTS_CSV: &str = "counts.csv";
pub const COUNTS_MTX: &str = "counts.mtx";
pub const GENES_FILE: &str = "genes.csv";
pub const PERTS_FILE: &str = "perts.csv";
pub const DOUBLETS_FILE: &str = "doublets.csv";
pub const SPLIT_FILE: &str = "split.json";

/// Load `counts.csv` (or `counts.mtx`), `genes.csv`, `perts.csv` and, if
/// present, `doublets.csv` from `dir`. Missing doublet flags default to false.
pub fn load_dataset(dir: &Path) -> Result<super::Dataset> {
    let csv = dir.join(COUNTS_CSV);
    let mtx = dir.join(COUNTS_MTX);
    let counts_path = if csv.exists() {
        csv
    } else if mtx.exists() {
        mtx
    } else {
        return Err(Error::validation(format!(
            "{} contains neither {COUNTS_CSV} nor {COUNTS_MTX}",
            dir.display()
        )));
    };
    let genes = dir.join(GENES_FILE);
    let genes = genes.exists().then_some(genes);
    let mut expr = load_counts(&counts_path, CountFormat::from_path(&counts_path), genes.as_deref())?;
    let (cells, perts) = load_perturbations(&dir.join(PERTS_FILE))?;
    if cells.len() != expr.n_cells() {
        return Err(Error::validation(format!(
            "{PERTS_FILE} has {} rows, counts have {} cells",
            cells.len(),
            expr.n_cells()
        )));
    }
    if cells != expr.cell_ids {
        if expr.cell_ids == default_ids("cell", expr.n_cells()) {
            expr.cell_ids = cells;
        } else {
            return Err(Error::validation(format!(
                "cell ids in {PERTS_FILE} do not match the count matrix"
            )));
        }
    }
    let dpath = dir.join(DOUBLETS_FILE);
    let doublets = if dpath.exists() {
        load_doublets(&dpath, &expr.cell_ids)?
    } else {
        vec![false; expr.n_cells()]
    };
    super::Dataset::new(expr, perts, doublets)
}

/// Write a dataset directory in the layout read by [`load_dataset`], with
/// dense CSV counts.
pub fn write_dataset(dir: &Path, data: &super::Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_counts_csv(&dir.join(COUNTS_CSV), &data.expr)?;
    write_gene_flags(&dir.join(GENES_FILE), &data.expr)?;
    write_perturbations(&dir.join(PERTS_FILE), &data.expr.cell_ids, &data.perts)?;
    write_doublets(&dir.join(DOUBLETS_FILE), &data.expr.cell_ids, &data.doublets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CONTROL_NAME;
    use proptest::prelude::*;

    #[test]
    fn dense_csv_without_header() {
        let m = parse_counts_csv("1,0,2\n0,5,0\n", "t").unwrap();
        assert_eq!(m.to_rows(), vec![vec![1, 0, 2], vec![0, 5, 0]]);
        assert_eq!(m.gene_flags, vec![GeneFlags::default(); 3]);
    }

    #[test]
    fn dense_csv_with_header_and_cell_ids() {
        let m = parse_counts_csv("cell_id,g1,g2\nc1,3,4\nc2,0,1\n", "t").unwrap();
        assert_eq!(m.gene_ids, vec!["g1", "g2"]);
        assert_eq!(m.cell_ids, vec!["c1", "c2"]);
        assert_eq!(m.row(0), &[3, 4]);
    }

    #[test]
    fn dense_csv_negative_is_validation_error() {
        let err = parse_counts_csv("1,0\n-1,2\n", "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains("t:2"), "{err}");
        assert!(matches!(parse_counts_csv("1.5,0\n", "t").unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn dense_csv_malformed_reports_line() {
        let err = parse_counts_csv("a,b\n1,2\n3,x\n", "counts.csv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = parse_counts_csv("1,2\n3\n", "counts.csv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn mtx_triplets_expand() {
        let text = "%%MatrixMarket matrix coordinate integer general\n% comment\n2 3 2\n1 1 4\n2 3 7\n";
        let m = parse_counts_mtx(text, "t").unwrap();
        assert_eq!(m.to_rows(), vec![vec![4, 0, 0], vec![0, 0, 7]]);
    }

    #[test]
    fn mtx_errors() {
        let bad_count = "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 -3\n";
        assert!(matches!(parse_counts_mtx(bad_count, "t").unwrap_err(), Error::Validation(_)));
        let oob = "%%MatrixMarket matrix coordinate integer general\n1 1 1\n2 1 3\n";
        assert!(matches!(parse_counts_mtx(oob, "t").unwrap_err(), Error::Parse { line: 3, .. }));
        let nnz = "%%MatrixMarket matrix coordinate integer general\n1 2 2\n1 1 3\n";
        assert!(parse_counts_mtx(nnz, "t").is_err());
    }

    #[test]
    fn perturbation_multi_hot() {
        let reg: Vec<String> = vec!["A".into(), "B".into(), CONTROL_NAME.into()];
        let p = parse_perturbations(&["A", "A+B", CONTROL_NAME], Some(&reg)).unwrap();
        assert_eq!(p.assignments(), &[1, 0, 0, 1, 1, 0, 0, 0, 1]);
        assert_eq!(p.control_index, Some(2));
        let q = parse_perturbations(&["B+A"], Some(&reg)).unwrap();
        assert_eq!(q.row(0), p.row(1));
        assert!(parse_perturbations(&[""], Some(&reg)).is_err());
        assert!(parse_perturbations(&["A+"], None).is_err());
    }

    #[test]
    fn gene_flags_file_applies() {
        let dir = tempfile::tempdir().unwrap();
        let m = parse_counts_csv("cell_id,MT-1,HBB,RPL3\nc,1,2,3\n", "t").unwrap();
        let mut flagged = m.clone();
        flagged.gene_flags[0].is_mito = true;
        flagged.gene_flags[1].is_hemoglobin = true;
        flagged.gene_flags[2].is_ribosomal = true;
        let gpath = dir.path().join("genes.csv");
        write_gene_flags(&gpath, &flagged).unwrap();
        let cpath = dir.path().join("counts.csv");
        write_counts_csv(&cpath, &m).unwrap();
        let loaded = load_counts(&cpath, CountFormat::DenseCsv, Some(&gpath)).unwrap();
        assert_eq!(loaded, flagged);
        let plain = load_counts(&cpath, CountFormat::DenseCsv, None).unwrap();
        assert_eq!(plain.gene_flags, vec![GeneFlags::default(); 3]);
    }

    proptest! {
        #[test]
        fn counts_roundtrip_both_formats(
            rows in 1usize..6, cols in 1usize..6,
            seed in proptest::collection::vec(0u32..50, 36)
        ) {
            let counts: Vec<u32> = (0..rows * cols).map(|k| seed[k % seed.len()] * (k as u32 % 3)).collect();
            let m = ExpressionMatrix::from_counts(rows, cols, counts).unwrap();
            let dir = tempfile::tempdir().unwrap();
            for name in ["c.csv", "c.mtx"] {
                let p = dir.path().join(name);
                write_counts(&p, &m).unwrap();
                let back = load_counts(&p, CountFormat::from_path(&p), None).unwrap();
                prop_assert_eq!(&back, &m);
            }
        }
    }
}
