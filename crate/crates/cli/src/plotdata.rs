//! Long-format `series,x,y` rows from a finished run directory.

use std::collections::BTreeMap;
use std::path::Path;

use crate::artifacts::{num, MANIFEST};
use crate::error::CliError;

struct Table {
    columns: BTreeMap<String, Vec<String>>,
    rows: usize,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Artifact { path: path.to_path_buf(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
        let mut columns: BTreeMap<String, Vec<String>> = header.iter().map(|h| (h.clone(), Vec::new())).collect();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            for (h, v) in header.iter().zip(rec.iter()) {
                columns.get_mut(h).expect("header column").push(v.to_string());
            }
            rows += 1;
        }
        Ok(Table { columns, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<&[String], CliError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CliError::Artifact { path: path.to_path_buf(), message: format!("missing column `{name}`") })
    }
}

struct Rows(Vec<[String; 3]>);

impl Rows {
    fn series(&mut self, name: &str, xs: &[String], ys: &[String]) {
        for (x, y) in xs.iter().zip(ys) {
            self.0.push([name.to_string(), x.clone(), y.clone()]);
        }
    }
}

fn kind_of(dir: &Path) -> Result<String, CliError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::NoArtifacts(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Read { path: path.clone(), source })?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Artifact { path: path.clone(), message: e.to_string() })?;
    v["kind"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::Artifact { path, message: "no `kind` entry".into() })
}

// theta(y), u(y), I(y) and the stem curve from a shape table, optionally split by branch
fn shape_series(rows: &mut Rows, t: &Table, path: &Path) -> Result<(), CliError> {
    let branches: Vec<String> = match t.columns.get("branch") {
        Some(b) => b.clone(),
        None => vec![String::new(); t.rows],
    };
    let mut order: Vec<String> = branches.clone();
    order.dedup();
    let y = t.col("y", path)?;
    let x = t.col("x", path)?;
    for b in order {
        let pick = |c: &[String]| -> Vec<String> {
            c.iter().zip(&branches).filter(|(_, bb)| **bb == b).map(|(v, _)| v.clone()).collect()
        };
        let suffix = if b.is_empty() { String::new() } else { format!(":{b}") };
        let ys = pick(y);
        rows.series(&format!("theta{suffix}"), &ys, &pick(t.col("theta", path)?));
        if t.columns.contains_key("u") {
            rows.series(&format!("u{suffix}"), &ys, &pick(t.col("u", path)?));
        }
        rows.series(&format!("I{suffix}"), &ys, &pick(t.col("I", path)?));
        rows.series(&format!("stem{suffix}"), &pick(x), &ys);
    }
    Ok(())
}

/// Builds the plot table for the run in `dir`.
pub fn emit_plotdata(dir: &Path) -> Result<String, CliError> {
    let kind = kind_of(dir)?;
    let mut rows = Rows(Vec::new());
    match kind.as_str() {
        "op1" | "eq1" | "op2" | "eq2" => {
            let path = dir.join("shape.csv");
            shape_series(&mut rows, &Table::read(&path)?, &path)?;
        }
        "op3" => {
            let path = dir.join("stem.csv");
            let t = Table::read(&path)?;
            rows.series("theta", t.col("s", &path)?, t.col("theta", &path)?);
            rows.series("stem", t.col("x", &path)?, t.col("y", &path)?);
        }
        "halfline" => {
            let path = dir.join("family.csv");
            let t = Table::read(&path)?;
            let (xi, s) = (t.col("xi", &path)?, t.col("s", &path)?);
            let (x, y, th) = (t.col("x", &path)?, t.col("y", &path)?, t.col("theta", &path)?);
            let zero = num(0.0);
            let base: Vec<usize> = (0..t.rows).filter(|&k| s[k] == zero).collect();
            let bx: Vec<String> = base.iter().map(|&k| xi[k].clone()).collect();
            let by: Vec<String> = base.iter().map(|&k| th[k].clone()).collect();
            rows.series("base_theta", &bx, &by);
            let mut start = 0;
            while start < t.rows {
                let end = (start..t.rows).find(|&k| xi[k] != xi[start]).unwrap_or(t.rows);
                rows.series(&format!("stem:{}", xi[start]), &x[start..end], &y[start..end]);
                start = end;
            }
        }
        "sweep" => {
            let path = dir.join("sweep.csv");
            let t = Table::read(&path)?;
            let param = t
                .columns
                .keys()
                .find(|k| !matches!(k.as_str(), "h" | "payoff" | "residual_map"))
                .cloned()
                .ok_or_else(|| CliError::Artifact { path: path.clone(), message: "no parameter column".into() })?;
            rows.series("h", t.col(&param, &path)?, t.col("h", &path)?);
        }
        other => {
            return Err(CliError::Artifact { path: dir.join(MANIFEST), message: format!("unknown kind `{other}`") })
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let wrap = |e: String| CliError::Artifact { path: dir.to_path_buf(), message: e };
    w.write_record(["series", "x", "y"]).map_err(|e| wrap(e.to_string()))?;
    for r in &rows.0 {
        w.write_record(r).map_err(|e| wrap(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| wrap(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_has_no_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plotdata(dir.path()), Err(CliError::NoArtifacts(_))));
    }

    #[test]
    fn branches_become_separate_series() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST), "{\"kind\": \"op1\"}").unwrap();
        std::fs::write(
            dir.path().join("shape.csv"),
            "branch,y,x,theta,I\n1,0,0,0.8,0.5\n1,1,1,0.8,0.5\n2,0,0,1.2,0.5\n",
        )
        .unwrap();
        let out = emit_plotdata(dir.path()).unwrap();
        assert!(out.starts_with("series,x,y\r\n"));
        assert!(out.contains("theta:1,1,0.8"));
        assert!(out.contains("stem:2,0,0"));
        assert!(!out.contains("\nu"));
    }
}
