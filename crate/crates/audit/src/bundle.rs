//! Model bundles: a directory with `manifest.json`, `items.csv` and an optional
//! `users.csv`. Factors are stored as decimal text with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use reach_core::{BiasSign, DenseMatrix, FactorModel};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub d: usize,
    pub lambda: f64,
    pub mu: f64,
    pub bias_sign: BiasSign,
    pub m: usize,
    pub n: usize,
}

/// A factor model together with the external ids of its items and users.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: FactorModel,
    pub item_ids: Vec<String>,
    /// Empty when the bundle carries no user factors.
    pub user_ids: Vec<String>,
}

impl ModelBundle {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            d: self.model.dim(),
            lambda: self.model.lambda(),
            mu: self.model.mu(),
            bias_sign: self.model.bias_sign(),
            m: self.model.items(),
            n: self.user_ids.len(),
        }
    }

    /// Bias `c_u` for an external user id, when the bundle has user factors.
    pub fn user_bias(&self, id: &str) -> Option<f64> {
        let users = self.model.users()?;
        self.user_ids.iter().position(|u| u == id).map(|k| users.c[k])
    }

    /// Bundle restricted to the listed item rows.
    pub fn restrict_items(&self, rows: &[usize]) -> AppResult<ModelBundle> {
        Ok(ModelBundle {
            model: self.model.restrict_items(rows)?,
            item_ids: rows.iter().map(|&i| self.item_ids[i].clone()).collect(),
            user_ids: self.user_ids.clone(),
        })
    }

    pub fn item_row(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    let io = |e: csv::Error| AppError::format(path, e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

fn factor_header(id: &str, bias: &str, d: usize) -> Vec<String> {
    let mut h = vec![id.to_string(), bias.to_string()];
    h.extend((1..=d).map(|k| format!("{}{k}", if bias == "b" { "q" } else { "p" })));
    h
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn save_model(dir: &Path, bundle: &ModelBundle) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(format!("cannot create {}", dir.display()), e))?;
    let manifest = bundle.manifest();
    let model = &bundle.model;
    let d = model.dim();
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    let manifest_path = dir.join("manifest.json");
    fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(json.as_bytes()))
        .map_err(|e| AppError::io(format!("cannot write {}", manifest_path.display()), e))?;

    let items = (0..model.items()).map(|i| {
        let mut row = vec![bundle.item_ids[i].clone(), fmt_f64(model.item_biases()[i])];
        row.extend(model.item_factor(i).iter().map(|&v| fmt_f64(v)));
        row
    });
    write_table(&dir.join("items.csv"), &factor_header("item_id", "b", d), items)?;

    let users_path = dir.join("users.csv");
    match model.users() {
        Some(users) => {
            let rows = (0..users.p.rows()).map(|u| {
                let mut row = vec![bundle.user_ids[u].clone(), fmt_f64(users.c[u])];
                row.extend(users.p.row(u).iter().map(|&v| fmt_f64(v)));
                row
            });
            write_table(&users_path, &factor_header("user_id", "c", d), rows)?;
        }
        None if users_path.exists() => {
            fs::remove_file(&users_path)
                .map_err(|e| AppError::io(format!("cannot remove {}", users_path.display()), e))?;
        }
        None => {}
    }
    Ok(())
}

fn read_table(path: &Path, header: &[String], rows: usize) -> AppResult<(Vec<String>, Vec<f64>, DenseMatrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| AppError::format(path, e.to_string()))?;
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| AppError::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(AppError::format(path, format!("expected header {}", header.join(","))));
    }
    let d = header.len() - 2;
    let mut ids = Vec::with_capacity(rows);
    let mut bias = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * d);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |s: &str| -> AppResult<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AppError::format(path, format!("line {line}: {s:?} is not a finite number")))
        };
        ids.push(rec[0].to_string());
        bias.push(num(&rec[1])?);
        for k in 0..d {
            data.push(num(&rec[k + 2])?);
        }
    }
    if ids.len() != rows {
        return Err(AppError::format(
            path,
            format!("manifest declares {rows} rows, table has {}", ids.len()),
        ));
    }
    let mut sorted = ids.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(AppError::format(path, "duplicate ids"));
    }
    Ok((ids, bias, DenseMatrix::new(rows, d, data)?))
}

/// Loads a bundle written by [`save_model`] or by hand.
pub fn load_model(dir: &Path) -> AppResult<ModelBundle> {
    if !dir.is_dir() {
        return Err(AppError::Usage(format!("model directory not found: {}", dir.display())));
    }
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AppError::format(&manifest_path, "missing manifest"),
        _ => AppError::io(format!("cannot read {}", manifest_path.display()), e),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| AppError::format(&manifest_path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(AppError::format(
            &manifest_path,
            format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    if manifest.d == 0 || manifest.m == 0 {
        return Err(AppError::format(&manifest_path, "d and m must be at least 1"));
    }
    let (item_ids, b, q) = read_table(
        &dir.join("items.csv"),
        &factor_header("item_id", "b", manifest.d),
        manifest.m,
    )?;
    let mut model = FactorModel::new(q, b, manifest.mu, manifest.lambda, manifest.bias_sign)
        .map_err(|e| AppError::format(&manifest_path, e.to_string()))?;
    let users_path = dir.join("users.csv");
    let mut user_ids = Vec::new();
    if manifest.n > 0 || users_path.exists() {
        let (ids, c, p) = read_table(&users_path, &factor_header("user_id", "c", manifest.d), manifest.n)?;
        model = model.with_users(p, c)?;
        user_ids = ids;
    }
    Ok(ModelBundle {
        model,
        item_ids,
        user_ids,
    })
}
