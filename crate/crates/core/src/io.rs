//! CSV datasets and prediction tables, JSON model documents.
//!
//! Dataset CSV: header `x,y1,...,yM`; an empty field marks a missing output value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{CovarianceMode, Dataset, FittedModel, ModelSpec, NoiseVariance};
use crate::kernel::{KernelKind, KernelParams};
use crate::multioutput::{CoregionalizationMatrix, MODataset, MOFittedModel, MONoise};
use crate::transform::InputTransform;

pub const SCHEMA_VERSION: u32 = 1;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// Columns of a dataset CSV; `columns[k][i]` is `None` when missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub x: Vec<f64>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn outputs(&self) -> usize {
        self.columns.len()
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().any(|c| c.iter().any(|v| v.is_none()))
    }

    /// Single-output dataset; fails if the table has several outputs or missing values.
    pub fn to_dataset(&self, noise_variance: f64) -> Result<Dataset> {
        if self.outputs() != 1 {
            return Err(Error::Dimension(format!("expected one output column, found {}", self.outputs())));
        }
        let y = self.columns[0]
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Parse(format!("row {}: y1 is empty", i + 2))))
            .collect::<Result<Vec<f64>>>()?;
        Dataset::homoscedastic(self.x.clone(), y, noise_variance)
    }

    pub fn to_mo_dataset(&self, noise: MONoise) -> Result<MODataset> {
        MODataset::from_columns(self.x.clone(), &self.columns, noise)
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Table { x: ds.x.clone(), columns: vec![ds.y.iter().map(|&v| Some(v)).collect()] }
    }

    pub fn from_mo_dataset(ds: &MODataset) -> Self {
        let columns = (0..ds.m).map(|k| (0..ds.len()).map(|i| ds.value(k, i)).collect()).collect();
        Table { x: ds.x.clone(), columns }
    }
}

fn parse_field(s: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: cannot parse {t:?} as a number")))
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
    let headers = rd.headers()?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if names.first().map(String::as_str) != Some("x") {
        return Err(Error::Parse("header is missing column x (expected x,y1,...,yM)".into()));
    }
    if names.len() < 2 {
        return Err(Error::Parse("header is missing column y1 (expected x,y1,...,yM)".into()));
    }
    for (k, name) in names[1..].iter().enumerate() {
        let want = format!("y{}", k + 1);
        if *name != want {
            return Err(Error::Parse(format!("header is missing column {want} (found {name:?})")));
        }
    }
    let m = names.len() - 1;
    let mut x = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); m];
    let mut record = csv::StringRecord::new();
    let mut row = 1;
    while rd.read_record(&mut record)? {
        row += 1;
        let xv = parse_field(&record[0], row, "x")?
            .ok_or_else(|| Error::Parse(format!("row {row}: column x is empty")))?;
        x.push(xv);
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(parse_field(&record[k + 1], row, &names[k + 1])?);
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Table { x, columns })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_table(BufReader::new(File::open(path)?))
}

fn fmt(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v:?}")
}

pub fn write_table<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["x".to_string()];
    header.extend((1..=table.outputs()).map(|k| format!("y{k}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..table.x.len() {
        rec.clear();
        rec.push(fmt(table.x[i]));
        for c in &table.columns {
            rec.push(c[i].map(fmt).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(table: &Table, path: &Path) -> Result<()> {
    write_table(table, BufWriter::new(File::create(path)?))
}

/// Generic numeric CSV with named columns, used for predictions and benchmark output.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericTable {
    pub headers: Vec<String>,
    /// column-major
    pub columns: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = writer(out);
        w.write_record(&self.headers)?;
        for i in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| fmt(c[i])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (r, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (c, col) in columns.iter_mut().enumerate() {
                let v = parse_field(&rec[c], r + 2, &headers[c])?
                    .ok_or_else(|| Error::Parse(format!("row {}: column {} is empty", r + 2, headers[c])))?;
                col.push(v);
            }
        }
        Ok(NumericTable { headers, columns })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseField {
    Single(NoiseVariance),
    /// separable `M×M` noise, row-major
    Matrix(Vec<Vec<f64>>),
}

/// Versioned JSON form of a fitted model. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub kernel_kind: KernelKind,
    pub params: KernelParams,
    pub n: usize,
    pub transform: InputTransform,
    pub noise_variance: Option<NoiseField>,
    pub lambda: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub signal_variance: f64,
    #[serde(default = "one_usize")]
    pub outputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kf: Option<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = r.len();
    let c = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| r[i][j]))
}

/// A fitted model of either kind.
#[derive(Clone, Debug)]
pub enum Model {
    Single(FittedModel),
    Multi(MOFittedModel),
}

impl Model {
    pub fn outputs(&self) -> usize {
        match self {
            Model::Single(_) => 1,
            Model::Multi(m) => m.outputs(),
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        match self {
            Model::Single(m) => ModelDocument {
                schema_version: SCHEMA_VERSION,
                kernel_kind: m.basis().kind(),
                params: *m.basis().params(),
                n: m.basis().requested_order(),
                transform: m.transform(),
                noise_variance: Some(NoiseField::Single(m.noise().clone())),
                lambda: m.basis().eigenvalues().iter().copied().collect(),
                alpha_prime: m.alpha_prime().iter().copied().collect(),
                g: rows(m.g()),
                signal_variance: m.signal_variance(),
                outputs: 1,
                kf: None,
            },
            Model::Multi(m) => ModelDocument {
                schema_version: SCHEMA_VERSION,
                kernel_kind: m.basis().kind(),
                params: *m.basis().params(),
                n: m.basis().requested_order(),
                transform: m.transform(),
                noise_variance: match m.noise() {
                    MONoise::Separable(s) => Some(NoiseField::Matrix(rows(s))),
                    MONoise::Full(_) => None,
                },
                lambda: m.basis().eigenvalues().iter().copied().collect(),
                alpha_prime: m.alpha_prime().iter().copied().collect(),
                g: rows(m.g()),
                signal_variance: 1.0,
                outputs: m.outputs(),
                kf: Some(rows(&m.kf().kf())),
            },
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        if doc.params.kind() != doc.kernel_kind {
            return Err(Error::Parse("kernel_kind does not match params".into()));
        }
        let alpha = DVector::from_vec(doc.alpha_prime.clone());
        let g = from_rows(&doc.g, "G")?;
        let model = match &doc.kf {
            None => {
                let noise = match &doc.noise_variance {
                    Some(NoiseField::Single(n)) => n.clone(),
                    _ => return Err(Error::Parse("single-output model needs a scalar or per-point noise_variance".into())),
                };
                let spec = ModelSpec { params: doc.params, n: doc.n, signal_variance: doc.signal_variance };
                Model::Single(FittedModel::from_parts(spec, doc.transform, alpha, g, noise)?)
            }
            Some(kf) => {
                let kf = CoregionalizationMatrix::from_kf(&from_rows(kf, "kf")?)?;
                let m = kf.m();
                let noise = match &doc.noise_variance {
                    Some(NoiseField::Matrix(s)) => MONoise::Separable(from_rows(s, "noise_variance")?),
                    // full noise is not stored; predictions do not need it
                    _ => MONoise::Separable(DMatrix::identity(m, m)),
                };
                Model::Multi(MOFittedModel::from_parts(doc.params, doc.n, doc.transform, kf, alpha, g, noise)?)
            }
        };
        let lambda = match &model {
            Model::Single(m) => m.basis().eigenvalues().clone(),
            Model::Multi(m) => m.basis().eigenvalues().clone(),
        };
        if lambda.len() != doc.lambda.len()
            || lambda.iter().zip(&doc.lambda).any(|(a, b)| (a - b).abs() > 1e-10 * a.abs().max(1e-300))
        {
            return Err(Error::Parse("stored lambda does not match the kernel parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &self.to_document())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Model::from_document(&doc)
    }

    /// Prediction table `x, mean_j[, var_j]` (prefixed `d{k}_` for derivative orders k > 0).
    pub fn predict_table(&self, x: &[f64], orders: &[usize], variance: bool) -> Result<NumericTable> {
        let mut headers = vec!["x".to_string()];
        let mut columns = vec![x.to_vec()];
        let mode = if variance { CovarianceMode::Diagonal } else { CovarianceMode::None };
        let m = self.outputs();
        let outputs: Vec<usize> = (0..m).collect();
        for &k in orders {
            let post = match (self, k) {
                (Model::Single(s), 0) => s.predict(x, mode)?,
                (Model::Single(s), k) => s.predict_derivative(x, k, mode)?,
                (Model::Multi(mm), 0) => mm.predict(x, &outputs, mode)?,
                (Model::Multi(mm), k) => mm.predict_derivative(x, &outputs, k, mode)?,
            };
            let prefix = if k == 0 { String::new() } else { format!("d{k}_") };
            for j in 0..m {
                headers.push(format!("{prefix}mean_{}", j + 1));
                columns.push(post.mean.rows(j * x.len(), x.len()).iter().copied().collect());
                if let Some(v) = &post.variance {
                    headers.push(format!("{prefix}var_{}", j + 1));
                    columns.push(v.rows(j * x.len(), x.len()).iter().copied().collect());
                }
            }
        }
        Ok(NumericTable { headers, columns })
    }
}
