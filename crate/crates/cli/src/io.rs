//! CSV and JSON serialisation, and atomic file output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use mixmiss_core::{CovStructure, MissingCode, MissingnessParams, MixtureParams, PartialDataset};

use crate::error::{CliError, CliResult, Context};

/// Writes through a temporary file in the target directory and renames it
/// over `path` only when `body` succeeds.
pub fn write_atomic<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> CliResult<String> {
    let mut s = String::new();
    BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?)
        .read_to_string(&mut s)
        .map_err(|e| CliError::io(path, e))?;
    Ok(s)
}

/// `y1,...,yp,en,missing,label,truth`
pub fn dataset_header(p: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=p).map(|k| format!("y{k}")).collect();
    h.extend(["en", "missing", "label", "truth"].map(String::from));
    h
}

pub fn write_dataset(w: &mut dyn Write, data: &PartialDataset<f64>) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Data(format!("writing CSV: {e}"));
    out.write_record(dataset_header(data.dim())).map_err(err)?;
    let mut row: Vec<String> = Vec::with_capacity(data.dim() + 4);
    for j in 0..data.n() {
        row.clear();
        row.extend(data.features().row(j).iter().map(|v| v.to_string()));
        row.push(data.entropy().map_or(String::new(), |e| e[j].to_string()));
        row.push(data.missing()[j].code().to_string());
        row.push(data.obs_label()[j].map_or(String::new(), |l| l.to_string()));
        row.push(data.truth().map_or(String::new(), |t| t[j].to_string()));
        out.write_record(&row).map_err(err)?;
    }
    out.flush().map_err(|e| CliError::Data(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn save_dataset(path: &Path, data: &PartialDataset<f64>) -> CliResult<()> {
    write_atomic(path, |w| write_dataset(w, data))
}

/// Parses the canonical dataset CSV. The `en` and `truth` columns may be
/// left empty, but then on every row.
pub fn parse_dataset(path: &Path, text: &str) -> CliResult<PartialDataset<f64>> {
    let parse_err = |line: u64, message: String| CliError::Parse { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 5 {
        return Err(parse_err(1, format!("expected header y1,...,yp,en,missing,label,truth; got {}", header.join(","))));
    }
    let p = header.len() - 4;
    if header != dataset_header(p) {
        return Err(parse_err(
            1,
            format!("expected header {}; got {}", dataset_header(p).join(","), header.join(",")),
        ));
    }

    let mut feats = Vec::new();
    let mut en: Vec<Option<f64>> = Vec::new();
    let mut missing = Vec::new();
    let mut labels = Vec::new();
    let mut truth: Vec<Option<usize>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != p + 4 {
            return Err(parse_err(line, format!("expected {} fields, found {}", p + 4, rec.len())));
        }
        let real = |k: usize| -> CliResult<f64> {
            let s = rec[k].trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("column {}: '{s}' is not a finite number", header[k]))),
            }
        };
        for k in 0..p {
            feats.push(real(k)?);
        }
        en.push(if rec[p].trim().is_empty() { None } else { Some(real(p)?) });
        let code = rec[p + 1].trim();
        let m = code
            .parse::<u8>()
            .ok()
            .and_then(MissingCode::from_code)
            .ok_or_else(|| parse_err(line, format!("column missing: '{code}' is not one of 0, 1, 2")))?;
        let label = rec[p + 2].trim();
        let parse_class = |s: &str, col: &str| -> CliResult<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(parse_err(line, format!("column {col}: '{s}' is not a class index (1, 2, ...)"))),
            }
        };
        match (m, label.is_empty()) {
            (MissingCode::Labelled, false) => labels.push(Some(parse_class(label, "label")?)),
            (MissingCode::Labelled, true) => return Err(parse_err(line, "labelled row (missing=0) without a label".into())),
            (_, true) => labels.push(None),
            (_, false) => {
                return Err(parse_err(line, format!("row with missing={} must leave label empty", m.code())))
            }
        }
        missing.push(m);
        let t = rec[p + 3].trim();
        truth.push(if t.is_empty() { None } else { Some(parse_class(t, "truth")?) });
    }
    let n = missing.len();
    if n == 0 {
        return Err(parse_err(1, "no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, p), feats).map_err(|e| CliError::Data(e.to_string()))?;
    let mut data = PartialDataset::new(features, missing, labels).context("dataset")?;
    if en.iter().all(Option::is_some) {
        data = data.with_entropy(en.into_iter().flatten().collect::<Array1<f64>>()).context("dataset")?;
    } else if en.iter().any(Option::is_some) {
        return Err(parse_err(1, "column en must be filled on every row or on none".into()));
    }
    if truth.iter().all(Option::is_some) {
        data = data.with_truth(truth.into_iter().flatten().collect()).context("dataset")?;
    } else if truth.iter().any(Option::is_some) {
        return Err(parse_err(1, "column truth must be filled on every row or on none".into()));
    }
    Ok(data)
}

pub fn load_dataset(path: &Path) -> CliResult<PartialDataset<f64>> {
    parse_dataset(path, &read_to_string(path)?)
}

/// JSON form of a fitted or specified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    pub g: usize,
    pub p: usize,
    /// 1 shared covariance, 2 one per component.
    pub ncov: u8,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// One matrix when `ncov = 1`, `g` otherwise; rows are nested arrays.
    pub sigma: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub xi0: f64,
    #[serde(default)]
    pub xi1: f64,
    #[serde(default)]
    pub loglik: Option<f64>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
}

pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> CliResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Data(format!("{what}: ragged or empty matrix")));
    }
    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| CliError::Data(format!("{what}: {e}")))
}

impl ParamsJson {
    pub fn new(params: &MixtureParams<f64>, miss: &MissingnessParams<f64>) -> Self {
        Self {
            g: params.n_components(),
            p: params.dim(),
            ncov: params.structure().code(),
            pi: params.weights().to_vec(),
            mu: matrix_rows(params.means()),
            sigma: params.distinct_covariances().iter().map(matrix_rows).collect(),
            alpha: miss.alpha,
            xi0: miss.xi0,
            xi1: miss.xi1,
            loglik: None,
            iterations: 0,
            converged: false,
        }
    }

    pub fn mixture(&self) -> CliResult<MixtureParams<f64>> {
        let structure = CovStructure::from_code(self.ncov)
            .ok_or_else(|| CliError::Data(format!("ncov must be 1 or 2, got {}", self.ncov)))?;
        if self.pi.len() != self.g || self.mu.len() != self.g {
            return Err(CliError::Data(format!("pi and mu need g = {} entries", self.g)));
        }
        let mu = matrix_from_rows(&self.mu, "mu")?;
        if mu.ncols() != self.p {
            return Err(CliError::Data(format!("mu rows need p = {} entries", self.p)));
        }
        let sigma = self.sigma.iter().map(|s| matrix_from_rows(s, "sigma")).collect::<CliResult<Vec<_>>>()?;
        if sigma.iter().any(|s| s.dim() != (self.p, self.p)) {
            return Err(CliError::Data(format!("sigma matrices must be {0}x{0}", self.p)));
        }
        MixtureParams::new(Array1::from(self.pi.clone()), mu, sigma, structure).context("parameters")
    }

    pub fn missingness(&self) -> CliResult<MissingnessParams<f64>> {
        MissingnessParams::new(self.alpha, self.xi0, self.xi1).context("parameters")
    }
}

pub fn to_json_string<S: Serialize>(value: &S) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = to_json_string(value)?;
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e)))
}

pub fn load_json<D: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<D> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), line: e.line() as u64, message: e.to_string() })
}

/// Writes rows of displayable cells as CSV.
pub fn write_table(w: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Data(format!("writing CSV: {e}"));
    out.write_record(header).map_err(err)?;
    for r in rows {
        out.write_record(r).map_err(err)?;
    }
    out.flush().map_err(|e| CliError::Data(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn save_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    write_atomic(path, |w| write_table(w, header, rows))
}
