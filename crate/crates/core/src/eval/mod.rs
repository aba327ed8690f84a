//! Real/bogus classification with a PV selection, and its evaluation.
//!
//! A stamp is classified real iff its map cell is in the selection. Rates
//! are computed from per-stamp cell assignments so a trained model is only
//! run once per dataset.

mod roc;
mod scorer;

pub use roc::{
    figure_of_merit, order_cells_by_percentile, roc_switch_off, RocCurve, RocPoint, FOM_FPR,
};
pub use scorer::{
    fit_scorer, train_mlp_scorer, train_reference_scorer, LogisticScorer, MlpScorer, ReferenceScorer, Scorer,
    ScorerConfig,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::desom::{stamps_tensor, DesomModel};
use crate::error::{Error, Result};
use crate::som::Cell;
use crate::stamps::{Label, Stamp};

/// Cells whose members are classified real.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PvSelection {
    m: usize,
    selected: BTreeSet<Cell>,
}

#[derive(Serialize, Deserialize)]
struct SelectionJson {
    m: usize,
    selected: Vec<[usize; 2]>,
}

impl PvSelection {
    pub fn new(m: usize, cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let mut sel = PvSelection::empty(m);
        for c in cells {
            sel.insert(c)?;
        }
        Ok(sel)
    }

    pub fn empty(m: usize) -> Self {
        PvSelection {
            m,
            selected: BTreeSet::new(),
        }
    }

    pub fn all(m: usize) -> Self {
        PvSelection {
            m,
            selected: (0..m * m).map(|i| Cell::from_index(i, m)).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.selected.contains(&cell)
    }

    /// Selected cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.selected.iter().copied()
    }

    fn check(&self, cell: Cell) -> Result<()> {
        if cell.row >= self.m || cell.col >= self.m {
            return Err(Error::invalid(format!(
                "cell ({}, {}) outside {}x{} map",
                cell.row, cell.col, self.m, self.m
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, cell: Cell) -> Result<bool> {
        self.check(cell)?;
        Ok(self.selected.insert(cell))
    }

    pub fn remove(&mut self, cell: Cell) -> bool {
        self.selected.remove(&cell)
    }

    /// Flips membership of `cell`; returns whether it is now selected.
    pub fn toggle(&mut self, cell: Cell) -> Result<bool> {
        self.check(cell)?;
        if !self.selected.remove(&cell) {
            self.selected.insert(cell);
            return Ok(true);
        }
        Ok(false)
    }

    /// Parses `{"m": int, "selected": [[i, j], ...]}`; duplicates collapse.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SelectionJson = serde_json::from_str(text)?;
        if raw.m == 0 {
            return Err(Error::invalid("selection map side must be positive"));
        }
        PvSelection::new(raw.m, raw.selected.iter().map(|&[i, j]| Cell::new(i, j)))
    }

    /// Canonical JSON: cells in row-major order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&SelectionJson {
            m: self.m,
            selected: self.cells().map(|c| [c.row, c.col]).collect(),
        })
        .expect("selection serializes")
    }

    pub fn classify(&self, cell: Cell) -> Label {
        if self.contains(cell) {
            Label::Real
        } else {
            Label::Bogus
        }
    }
}

/// Real iff the stamp's map cell is selected.
pub fn classify_stamp(model: &DesomModel, sel: &PvSelection, pixels: &[f32]) -> Result<Label> {
    check_side(model, sel)?;
    Ok(sel.classify(model.assign_cell(pixels)?))
}

fn check_side(model: &DesomModel, sel: &PvSelection) -> Result<()> {
    if sel.m() != model.m() {
        return Err(Error::shape("selection map side", model.m(), sel.m()));
    }
    Ok(())
}

/// Map cells of the real and bogus stamps of a dataset (unlabeled stamps are skipped).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCells {
    pub m: usize,
    pub real: Vec<Cell>,
    pub bogus: Vec<Cell>,
}

impl LabeledCells {
    pub fn from_stamps(model: &DesomModel, stamps: &[Stamp]) -> Result<Self> {
        let cells = model.assign_cells(&stamps_tensor(stamps)?)?;
        Ok(Self::from_assignments(model.m(), stamps, &cells))
    }

    pub fn from_assignments(m: usize, stamps: &[Stamp], cells: &[Cell]) -> Self {
        let mut out = LabeledCells {
            m,
            real: Vec::new(),
            bogus: Vec::new(),
        };
        for (s, &c) in stamps.iter().zip(cells) {
            match s.label {
                Label::Real => out.real.push(c),
                Label::Bogus => out.bogus.push(c),
                Label::Unlabeled => {}
            }
        }
        out
    }

    /// Per-cell (real, bogus) member counts, row-major.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.m * self.m];
        for c in &self.real {
            counts[c.index(self.m)].0 += 1;
        }
        for c in &self.bogus {
            counts[c.index(self.m)].1 += 1;
        }
        counts
    }
}

/// Missed detection rate and false positive rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub mdr: f64,
    pub fpr: f64,
}

/// MDR = real stamps outside the selection / real stamps;
/// FPR = bogus stamps inside the selection / bogus stamps.
pub fn confusion_rates(sel: &PvSelection, cells: &LabeledCells) -> Result<Rates> {
    if sel.m() != cells.m {
        return Err(Error::shape("selection map side", cells.m, sel.m()));
    }
    if cells.real.is_empty() || cells.bogus.is_empty() {
        return Err(Error::invalid(format!(
            "rates need both classes: {} real, {} bogus",
            cells.real.len(),
            cells.bogus.len()
        )));
    }
    let missed = cells.real.iter().filter(|c| !sel.contains(**c)).count();
    let false_pos = cells.bogus.iter().filter(|c| sel.contains(**c)).count();
    Ok(Rates {
        mdr: missed as f64 / cells.real.len() as f64,
        fpr: false_pos as f64 / cells.bogus.len() as f64,
    })
}

/// Assigns `stamps` through `model` and computes the selection's rates.
pub fn evaluate_selection(model: &DesomModel, sel: &PvSelection, stamps: &[Stamp]) -> Result<Rates> {
    check_side(model, sel)?;
    confusion_rates(sel, &LabeledCells::from_stamps(model, stamps)?)
}

/// Cells where real members strictly outnumber bogus members.
pub fn majority_selection(cells: &LabeledCells) -> PvSelection {
    let m = cells.m;
    let chosen = cells
        .counts()
        .into_iter()
        .enumerate()
        .filter(|(_, (r, b))| r > b)
        .map(|(i, _)| Cell::from_index(i, m));
    PvSelection::new(m, chosen).expect("cells in bounds")
}

/// Indices of the members of each cell, row-major.
pub fn members_by_cell(cells: &[Cell], m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); m * m];
    for (i, c) in cells.iter().enumerate() {
        out[c.index(m)].push(i);
    }
    out
}

/// One cell of a [`RatioMap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ratio {
    Value(f64),
    /// Real members but no bogus ones: the ratio is unbounded.
    NoBogus,
    /// No members of either class.
    Empty,
}

/// Per-cell class probabilities `P(real -> cell)` and `P(bogus -> cell)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioMap {
    pub m: usize,
    pub p_real: Vec<f64>,
    pub p_bogus: Vec<f64>,
}

impl RatioMap {
    pub fn ratio(&self, cell: Cell) -> Ratio {
        let i = cell.index(self.m);
        match (self.p_real[i], self.p_bogus[i]) {
            (r, b) if b > 0.0 => Ratio::Value(r / b),
            (r, _) if r > 0.0 => Ratio::NoBogus,
            _ => Ratio::Empty,
        }
    }

    /// `m x m` rows of ratios; cells without bogus members are `None`.
    pub fn grid(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.m)
            .map(|r| {
                (0..self.m)
                    .map(|c| match self.ratio(Cell::new(r, c)) {
                        Ratio::Value(v) => Some(v),
                        _ => None,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Ratio of the real and bogus landing probabilities of every cell.
pub fn ratio_map(cells: &LabeledCells) -> Result<RatioMap> {
    if cells.real.is_empty() || cells.bogus.is_empty() {
        return Err(Error::invalid("ratio map needs both real and bogus stamps"));
    }
    let (nr, nb) = (cells.real.len() as f64, cells.bogus.len() as f64);
    let counts = cells.counts();
    Ok(RatioMap {
        m: cells.m,
        p_real: counts.iter().map(|&(r, _)| r as f64 / nr).collect(),
        p_bogus: counts.iter().map(|&(_, b)| b as f64 / nb).collect(),
    })
}
