use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::LabeledCells;
use crate::error::{Error, Result};
use crate::som::Cell;
use crate::stats;

/// False positive rate at which the figure of merit is read off.
pub const FOM_FPR: f64 = 0.01;

/// Orders all `m * m` cells for switch-off: cells with no members first,
/// then ascending by the `q`-th percentile of their members' scores. Ties
/// keep row-major order.
pub fn order_cells_by_percentile(cells: &[Cell], scores: &[f64], m: usize, q: f64) -> Result<Vec<Cell>> {
    if cells.is_empty() {
        return Err(Error::invalid("ordering needs a non-empty dataset"));
    }
    if cells.len() != scores.len() {
        return Err(Error::shape("member scores", cells.len(), scores.len()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid(format!("percentile {q} outside [0, 100]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("member scores must be finite"));
    }
    let mut members = vec![Vec::new(); m * m];
    for (c, &s) in cells.iter().zip(scores) {
        if c.row >= m || c.col >= m {
            return Err(Error::invalid(format!("cell ({}, {}) outside {m}x{m} map", c.row, c.col)));
        }
        members[c.index(m)].push(s);
    }
    let keys: Vec<Option<f64>> = members.iter().map(|v| stats::percentile(v, q)).collect();
    let mut order: Vec<usize> = (0..m * m).collect();
    // Stable: equal keys stay row-major. `None` (empty) sorts before any value.
    order.sort_by(|&a, &b| match (keys[a], keys[b]) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    });
    Ok(order.into_iter().map(|i| Cell::from_index(i, m)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cells switched off so far.
    pub n_off: usize,
    pub fpr: f64,
    pub mdr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Percentile used to order the cells, if the ordering came from scores.
    pub q: Option<f64>,
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// MDR of the point with the largest FPR not above `limit` (lowest MDR
    /// among equal FPRs); 1.0 if no point qualifies.
    pub fn mdr_at_fpr(&self, limit: f64) -> f64 {
        let mut best: Option<RocPoint> = None;
        for p in self.points.iter().filter(|p| p.fpr <= limit) {
            best = match best {
                Some(b) if b.fpr > p.fpr || (b.fpr == p.fpr && b.mdr <= p.mdr) => Some(b),
                _ => Some(*p),
            };
        }
        best.map_or(1.0, |p| p.mdr)
    }

    /// CSV with header `n_off,fpr,mdr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_off,fpr,mdr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.n_off, p.fpr, p.mdr).expect("write to string");
        }
        out
    }
}

/// MDR at FPR = 1 %, step-function convention (no interpolation).
pub fn figure_of_merit(roc: &RocCurve) -> f64 {
    roc.mdr_at_fpr(FOM_FPR)
}

/// Starts with every cell selected and deselects them in `ordering`,
/// recording (FPR, MDR) before the first and after every removal.
pub fn roc_switch_off(ordering: &[Cell], cells: &LabeledCells, q: Option<f64>) -> Result<RocCurve> {
    let m = cells.m;
    let n = m * m;
    if ordering.len() != n {
        return Err(Error::shape("cell ordering", n, ordering.len()));
    }
    let mut seen = vec![false; n];
    for c in ordering {
        if c.row >= m || c.col >= m || std::mem::replace(&mut seen[c.index(m)], true) {
            return Err(Error::invalid(format!(
                "ordering is not a permutation of the {m}x{m} cells (at ({}, {}))",
                c.row, c.col
            )));
        }
    }
    if cells.real.is_empty() || cells.bogus.is_empty() {
        return Err(Error::invalid("switch-off curve needs both real and bogus stamps"));
    }
    let counts = cells.counts();
    let (nr, nb) = (cells.real.len(), cells.bogus.len());
    let (mut real_off, mut bogus_off) = (0usize, 0usize);
    let point = |k: usize, real_off: usize, bogus_off: usize| RocPoint {
        n_off: k,
        fpr: (nb - bogus_off) as f64 / nb as f64,
        mdr: real_off as f64 / nr as f64,
    };
    let mut points = Vec::with_capacity(n + 1);
    points.push(point(0, 0, 0));
    for (k, c) in ordering.iter().enumerate() {
        let (r, b) = counts[c.index(m)];
        real_off += r;
        bogus_off += b;
        points.push(point(k + 1, real_off, bogus_off));
    }
    Ok(RocCurve { q, points })
}
