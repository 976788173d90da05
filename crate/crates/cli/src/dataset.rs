//! CSV datasets. One row per observation: an optional `label` column, then
//! `x_r{r}_c{c}` in column-major order so that a row is `vec(X)ᵀ`. Missing
//! cells are empty or `NA`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use matnorm::{DenseMatrix, ObservationSet};

#[derive(Clone, Debug)]
pub struct Dataset {
    pub data: ObservationSet,
    pub labels: Option<Vec<usize>>,
}

fn parse_cell_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("x_r")?;
    let (r, c) = rest.split_once("_c")?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

/// Recovers `(has_label, p, q)` from a header.
pub fn parse_header(header: &[&str]) -> Result<(bool, usize, usize)> {
    let has_label = header.first() == Some(&"label");
    let cells: Vec<&str> = header[usize::from(has_label)..].to_vec();
    if cells.is_empty() {
        bail!("header has no x_r{{r}}_c{{c}} columns");
    }
    let parsed = cells
        .iter()
        .map(|n| parse_cell_name(n).with_context(|| format!("column {n:?} is not of the form x_r{{r}}_c{{c}}")))
        .collect::<Result<Vec<_>>>()?;
    let p = parsed.iter().map(|&(r, _)| r).max().unwrap_or(0);
    if p == 0 || cells.len() % p != 0 {
        bail!("header columns do not form a complete p x q grid");
    }
    let q = cells.len() / p;
    for (k, &(r, c)) in parsed.iter().enumerate() {
        let (er, ec) = (k % p + 1, k / p + 1);
        if (r, c) != (er, ec) {
            bail!("column {} is {:?}; expected x_r{er}_c{ec} (column-major order)", k + 1 + usize::from(has_label), cells[k]);
        }
    }
    Ok((has_label, p, q))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_dataset_from(file).with_context(|| format!("reading {}", path.display()))
}

pub fn read_dataset_from(reader: impl std::io::Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let (has_label, p, q) = parse_header(&header_refs)?;
    let width = header.len();

    let mut obs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 2, |pos| pos.line());
        if record.len() != width {
            bail!("row {} (line {line}) has {} fields, expected {width}", row + 1, record.len());
        }
        let mut fields = record.iter();
        if has_label {
            let raw = fields.next().unwrap_or_default();
            let label: usize = raw
                .parse()
                .ok()
                .filter(|&l| l >= 1)
                .with_context(|| format!("row {} (line {line}): label {raw:?} is not a positive integer", row + 1))?;
            labels.push(label);
        }
        let mut values = Vec::with_capacity(p * q);
        for (k, raw) in fields.enumerate() {
            let v = if raw.is_empty() || raw == "NA" {
                f64::NAN
            } else {
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .with_context(|| format!("row {} (line {line}), column {}: {raw:?} is not a finite number", row + 1, header[k + usize::from(has_label)]))?
            };
            values.push(v);
        }
        obs.push(DenseMatrix::from_column_slice(p, q, &values));
    }
    if obs.is_empty() {
        bail!("dataset has no rows");
    }
    let data = ObservationSet::new(p, q, obs)?;
    Ok(Dataset { data, labels: has_label.then_some(labels) })
}

pub fn header(p: usize, q: usize, labelled: bool) -> Vec<String> {
    let mut h: Vec<String> = if labelled { vec!["label".into()] } else { Vec::new() };
    for c in 1..=q {
        for r in 1..=p {
            h.push(format!("x_r{r}_c{c}"));
        }
    }
    h
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:?}")
    }
}

pub fn dataset_to_csv(data: &ObservationSet, labels: Option<&[usize]>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if l.len() != data.n() {
            bail!("{} labels for {} observations", l.len(), data.n());
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(data.p(), data.q(), labels.is_some()))?;
    for (i, x) in data.iter().enumerate() {
        let mut rec: Vec<String> = labels.map(|l| vec![l[i].to_string()]).unwrap_or_default();
        rec.extend(x.iter().map(|&v| format_value(v)));
        w.write_record(rec)?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = header(2, 3, true);
        assert_eq!(h[1..4], ["x_r1_c1", "x_r2_c1", "x_r1_c2"]);
        let refs: Vec<&str> = h.iter().map(String::as_str).collect();
        assert_eq!(parse_header(&refs).unwrap(), (true, 2, 3));
        assert!(parse_header(&["x_r1_c1", "x_r1_c2", "x_r2_c1", "x_r2_c2"]).is_err());
        assert!(parse_header(&["label"]).is_err());
        assert!(parse_header(&["x_r1_c1", "y"]).is_err());
    }

    #[test]
    fn reads_missing_markers() {
        let csv = "x_r1_c1,x_r2_c1,x_r1_c2,x_r2_c2\n1,NA,3,4\n5,6,,8\n";
        let d = read_dataset_from(csv.as_bytes()).unwrap();
        assert!(d.labels.is_none());
        assert!(d.data.get(0)[(1, 0)].is_nan());
        assert!(d.data.get(1)[(0, 1)].is_nan());
        assert_eq!(d.data.get(0)[(0, 1)], 3.0);
        assert_eq!(d.data.missing_count(), 2);
    }

    #[test]
    fn ragged_row_names_the_row() {
        let csv = "x_r1_c1,x_r1_c2\n1,2\n3\n";
        let err = format!("{:#}", read_dataset_from(csv.as_bytes()).unwrap_err());
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(read_dataset_from("x_r1_c1\nabc\n".as_bytes()).is_err());
        assert!(read_dataset_from("x_r1_c1\ninf\n".as_bytes()).is_err());
        assert!(read_dataset_from("label,x_r1_c1\n0,1\n".as_bytes()).is_err());
        assert!(read_dataset_from("x_r1_c1\n".as_bytes()).is_err());
        assert!(read_dataset_from("x_r1_c1,x_r2_c1\nNA,NA\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read() {
        let x = DenseMatrix::from_row_slice(2, 2, &[0.1, f64::NAN, -3.5e-17, 1.0 / 3.0]);
        let data = ObservationSet::new(2, 2, vec![x.clone(), x]).unwrap();
        let bytes = dataset_to_csv(&data, Some(&[1, 2])).unwrap();
        let back = read_dataset_from(bytes.as_slice()).unwrap();
        assert_eq!(back.labels, Some(vec![1, 2]));
        for (a, b) in data.iter().zip(back.data.iter()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }
}
