//! Per-cell factor scores (regression method) and per-factor rankings.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::efa::{CorrelationMatrix, FactorModel};
use crate::ingest::GeoPoint;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("factor index {index} out of range for {k} factors")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("top_cells needs n >= 1")]
    EmptyRanking,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("correlation matrix singular even after ridge")]
    SingularCorrelation,
    #[error("score csv: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ridge added to R when it cannot be factorized.
pub const RIDGE: f64 = 1e-8;

/// Cells × K factor scores joined to cell identity and location.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub cell_ids: Vec<String>,
    pub coordinates: Vec<Option<GeoPoint>>,
    pub scores: DMatrix<f64>,
    /// Column labels `f1..fK`.
    pub labels: Vec<String>,
    /// R had to be regularized with [`RIDGE`].
    pub ridge: bool,
}

impl ScoreTable {
    pub fn n_factors(&self) -> usize {
        self.scores.ncols()
    }

    /// CSV with header `cell_id,lat,lon,f1,...,fK`; unknown coordinates are blank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ScoringError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cell_id".to_string(), "lat".into(), "lon".into()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.cell_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            match self.coordinates[i] {
                Some(p) => row.extend([p.lat.to_string(), p.lon.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
            row.extend(self.scores.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ScoringError> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.len() < 4 || &headers[0] != "cell_id" || &headers[1] != "lat" || &headers[2] != "lon" {
            return Err(ScoringError::Format(
                "expected header cell_id,lat,lon,f1,...".into(),
            ));
        }
        let labels: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
        let k = labels.len();
        let (mut cell_ids, mut coordinates, mut data) = (Vec::new(), Vec::new(), Vec::new());
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| ScoringError::Format(format!("`{s}` is not a number")))
        };
        for row in csv.records() {
            let row = row?;
            if row.len() != k + 3 {
                return Err(ScoringError::Format(format!("row has {} fields", row.len())));
            }
            cell_ids.push(row[0].to_string());
            coordinates.push(if row[1].is_empty() || row[2].is_empty() {
                None
            } else {
                Some(GeoPoint {
                    lat: num(&row[1])?,
                    lon: num(&row[2])?,
                })
            });
            for f in row.iter().skip(3) {
                data.push(num(f)?);
            }
        }
        let n = cell_ids.len();
        Ok(Self {
            cell_ids,
            coordinates,
            scores: DMatrix::from_row_slice(n, k, &data),
            labels,
            ridge: false,
        })
    }
}

/// Regression (Thurstone) factor scores: weights W = R⁻¹·S with S the
/// structure matrix, scores = Z·W.
///
/// `z` must be the standardized matrix R was computed from; `cell_ids` and
/// `coordinates` label its rows.
pub fn regression_scores(
    z: &DMatrix<f64>,
    r: &CorrelationMatrix,
    model: &FactorModel,
    cell_ids: &[String],
    coordinates: &[Option<GeoPoint>],
) -> Result<ScoreTable, ScoringError> {
    let (n, p) = z.shape();
    if r.dim() != p || model.n_variables() != p {
        return Err(ScoringError::DimensionMismatch(format!(
            "z has {p} variables, R {}, model {}",
            r.dim(),
            model.n_variables()
        )));
    }
    if cell_ids.len() != n || coordinates.len() != n {
        return Err(ScoringError::DimensionMismatch(format!(
            "z has {n} rows but {} cell ids and {} coordinates",
            cell_ids.len(),
            coordinates.len()
        )));
    }
    let structure = model.structure();
    let (weights, ridge) = match r.as_matrix().clone().cholesky() {
        Some(chol) => (chol.solve(&structure), false),
        None => {
            log::warn!("correlation matrix singular; scoring with ridge {RIDGE:e}");
            let mut reg = r.as_matrix().clone();
            for i in 0..p {
                reg[(i, i)] += RIDGE;
            }
            let chol = reg.cholesky().ok_or(ScoringError::SingularCorrelation)?;
            (chol.solve(&structure), true)
        }
    };
    let scores = z * weights;
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::SingularCorrelation);
    }
    Ok(ScoreTable {
        cell_ids: cell_ids.to_vec(),
        coordinates: coordinates.to_vec(),
        labels: (1..=model.n_factors()).map(|k| format!("f{k}")).collect(),
        scores,
        ridge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCell {
    pub cell_id: String,
    pub score: f64,
}

/// The `n` highest-scoring cells for `factor` (0-based), descending; ties
/// broken by ascending cell id.
pub fn top_cells(
    table: &ScoreTable,
    factor: usize,
    n: usize,
) -> Result<Vec<RankedCell>, ScoringError> {
    let k = table.n_factors();
    if factor >= k {
        return Err(ScoringError::IndexOutOfRange { index: factor, k });
    }
    if n == 0 {
        return Err(ScoringError::EmptyRanking);
    }
    let column = table.scores.column(factor);
    let mut order: Vec<usize> = (0..table.cell_ids.len()).collect();
    order.sort_by(|&a, &b| {
        column[b]
            .total_cmp(&column[a])
            .then_with(|| table.cell_ids[a].cmp(&table.cell_ids[b]))
    });
    Ok(order
        .into_iter()
        .take(n)
        .map(|i| RankedCell {
            cell_id: table.cell_ids[i].clone(),
            score: column[i],
        })
        .collect())
}

/// `factor,rank,cell_id,score` table of the top `n` cells of every factor.
pub fn write_rankings<W: Write>(table: &ScoreTable, n: usize, writer: W) -> Result<(), ScoringError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["factor", "rank", "cell_id", "score"])?;
    for f in 0..table.n_factors() {
        for (rank, cell) in top_cells(table, f, n)?.into_iter().enumerate() {
            w.write_record([
                table.labels[f].clone(),
                (rank + 1).to_string(),
                cell.cell_id,
                cell.score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efa::{correlation_matrix, standardize, FitDiagnostics, Rotation};

    fn table(ids: &[&str], scores: &[f64]) -> ScoreTable {
        ScoreTable {
            cell_ids: ids.iter().map(|s| s.to_string()).collect(),
            coordinates: vec![None; ids.len()],
            scores: DMatrix::from_column_slice(ids.len(), 1, scores),
            labels: vec!["f1".into()],
            ridge: false,
        }
    }

    #[test]
    fn ranking_and_ties() {
        let t = table(&["B", "A", "C"], &[1.0, 2.0, 0.5]);
        let top: Vec<_> = top_cells(&t, 0, 2).unwrap().into_iter().map(|c| c.cell_id).collect();
        assert_eq!(top, vec!["A", "B"]);
        let tie = table(&["B", "A"], &[1.0, 1.0]);
        assert_eq!(top_cells(&tie, 0, 1).unwrap()[0].cell_id, "A");
        assert!(matches!(
            top_cells(&t, 1, 1),
            Err(ScoringError::IndexOutOfRange { index: 1, k: 1 })
        ));
        assert!(matches!(top_cells(&t, 0, 0), Err(ScoringError::EmptyRanking)));
        assert_eq!(top_cells(&t, 0, 10).unwrap().len(), 3);
    }

    fn orthogonal_model(pattern: DMatrix<f64>) -> FactorModel {
        let k = pattern.ncols();
        let n = pattern.nrows();
        FactorModel {
            pattern,
            phi: DMatrix::identity(k, k),
            uniqueness: vec![0.5; n],
            communalities: vec![0.5; n],
            explained_variance: vec![1.0; k],
            rotation: Rotation::Varimax,
            diagnostics: FitDiagnostics::default(),
        }
    }

    #[test]
    fn noise_free_single_factor() {
        // Every variable is a positive multiple of one activation: R is all ones.
        let activation: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 + 0.5).collect();
        let x = DMatrix::from_fn(40, 5, |i, j| activation[i] * (j as f64 + 1.0));
        let s = standardize(&x).unwrap();
        let r = correlation_matrix(&s.z);
        let model = orthogonal_model(DMatrix::from_element(5, 1, 0.9995));
        let ids: Vec<String> = (0..40).map(|i| format!("c{i:02}")).collect();
        let t = regression_scores(&s.z, &r, &model, &ids, &vec![None; 40]).unwrap();
        assert!(t.ridge);
        let sc: Vec<f64> = t.scores.column(0).iter().copied().collect();
        let corr = pearson(&sc, &activation);
        assert!(corr.abs() >= 0.999, "r = {corr}");
        assert!(sc.iter().sum::<f64>().abs() / 40.0 <= 1e-8);
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn dimension_checks() {
        let z = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let r = CorrelationMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let model = orthogonal_model(DMatrix::from_element(3, 1, 0.5));
        let ids = vec!["a".to_string(); 4];
        assert!(matches!(
            regression_scores(&z, &r, &model, &ids, &vec![None; 4]),
            Err(ScoringError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = table(&["A", "B"], &[1.25, -0.1]);
        t.coordinates[0] = Some(GeoPoint { lat: 41.0, lon: 29.0 });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "cell_id,lat,lon,f1\nA,41,29,1.25\nB,,,-0.1\n");
        assert_eq!(ScoreTable::read_csv(buf.as_slice()).unwrap(), t);
    }
}
