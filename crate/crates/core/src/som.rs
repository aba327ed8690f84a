//! Kohonen self-organizing map over a d-dimensional latent space.
//!
//! The map is an `m x m` grid of prototype vectors (PVs) stored row-major.
//! Training follows the usual three steps per sample: competition (find the
//! best matching unit), cooperation (Gaussian neighbourhood around it on the
//! grid) and adaptation (move every PV toward the sample, scaled by the
//! neighbourhood weight and a decaying learning rate).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid position of a map cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    pub const fn index(self, m: usize) -> usize {
        self.row * m + self.col
    }

    pub const fn from_index(index: usize, m: usize) -> Self {
        Cell::new(index / m, index % m)
    }

    /// Squared Euclidean distance between grid coordinates.
    pub fn grid_distance_sq(self, other: Cell) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        dr * dr + dc * dc
    }
}

/// Winner of the competition step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bmu {
    pub cell: Cell,
    /// Euclidean distance from the input to the winning PV.
    pub distance: f64,
}

/// Where the neighbourhood distance between two cells is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodDistance {
    /// Distance between cell coordinates on the map grid.
    #[default]
    Grid,
    /// Distance between the two cells' prototype vectors.
    Weight,
}

/// `v0 * exp(-t / tau)` with `tau = n_iters / ln(v0 / v_min)`, so the value
/// decays from `v0` at `t = 0` to `v_min` at `t = n_iters`.
pub fn decay_value(v0: f64, v_min: f64, t: f64, n_iters: usize) -> Result<f64> {
    let tau = decay_constant(v0, v_min, n_iters)?;
    Ok(v0 * (-t / tau).exp())
}

fn decay_constant(v0: f64, v_min: f64, n_iters: usize) -> Result<f64> {
    if !(v_min > 0.0) || !v_min.is_finite() {
        return Err(Error::Config(format!("final value must be positive, got {v_min}")));
    }
    if !(v0 > v_min) || !v0.is_finite() {
        return Err(Error::Config(format!(
            "initial value {v0} must exceed final value {v_min}"
        )));
    }
    if n_iters == 0 {
        return Err(Error::Config("schedule needs at least one iteration".into()));
    }
    Ok(n_iters as f64 / (v0 / v_min).ln())
}

/// Exponential decay of the neighbourhood temperature and the learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub t0: f64,
    pub t_min: f64,
    pub eta0: f64,
    pub eta_min: f64,
    pub n_iters: usize,
}

impl Default for DecaySchedule {
    fn default() -> Self {
        DecaySchedule {
            t0: 10.0,
            t_min: 0.01,
            eta0: 0.5,
            eta_min: 0.01,
            n_iters: 15_000,
        }
    }
}

impl DecaySchedule {
    pub fn validate(&self) -> Result<()> {
        decay_constant(self.t0, self.t_min, self.n_iters)?;
        decay_constant(self.eta0, self.eta_min, self.n_iters)?;
        if self.eta0 > 1.0 {
            return Err(Error::Config(format!(
                "initial learning rate {} exceeds 1",
                self.eta0
            )));
        }
        Ok(())
    }

    pub fn tau_t(&self) -> f64 {
        self.n_iters as f64 / (self.t0 / self.t_min).ln()
    }

    pub fn tau_eta(&self) -> f64 {
        self.n_iters as f64 / (self.eta0 / self.eta_min).ln()
    }

    pub fn temperature(&self, t: usize) -> f64 {
        self.t0 * (-(t as f64) / self.tau_t()).exp()
    }

    pub fn learning_rate(&self, t: usize) -> f64 {
        self.eta0 * (-(t as f64) / self.tau_eta()).exp()
    }
}

/// Gaussian kernel `exp(-delta_sq / T^2)`.
#[inline]
pub fn gaussian_kernel(delta_sq: f64, temperature: f64) -> f64 {
    (-delta_sq / (temperature * temperature)).exp()
}

/// How prototype vectors are initialized before training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SomInit {
    /// Each PV is a randomly drawn data vector.
    #[default]
    Sample,
    /// Uniform in the per-dimension bounding box of the data.
    BoundingBox,
}

/// An `m x m` map of `d`-dimensional prototype vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SomMap {
    m: usize,
    d: usize,
    weights: Vec<f32>,
}

impl SomMap {
    pub fn new(m: usize, d: usize, weights: Vec<f32>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::Config(format!("map size {m} and dimension {d} must be positive")));
        }
        if weights.len() != m * m * d {
            return Err(Error::shape("som weights", m * m * d, weights.len()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("som weight for cell {}", i / d)));
        }
        Ok(SomMap { m, d, weights })
    }

    /// Initializes PVs from `data` (rows of length `d`) with the given strategy.
    pub fn initialize(m: usize, d: usize, data: &[f32], init: SomInit, seed: u64) -> Result<Self> {
        check_dataset(data, d)?;
        let n = data.len() / d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(m * m * d);
        match init {
            SomInit::Sample => {
                for _ in 0..m * m {
                    let r = rng.random_range(0..n);
                    weights.extend_from_slice(&data[r * d..(r + 1) * d]);
                }
            }
            SomInit::BoundingBox => {
                let mut lo = vec![f32::INFINITY; d];
                let mut hi = vec![f32::NEG_INFINITY; d];
                for row in data.chunks_exact(d) {
                    for k in 0..d {
                        lo[k] = lo[k].min(row[k]);
                        hi[k] = hi[k].max(row[k]);
                    }
                }
                for _ in 0..m * m {
                    for k in 0..d {
                        let u: f64 = rng.random();
                        weights.push((lo[k] as f64 + u * (hi[k] as f64 - lo[k] as f64)) as f32);
                    }
                }
            }
        }
        SomMap::new(m, d, weights)
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_cells(&self) -> usize {
        self.m * self.m
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn prototype(&self, cell: Cell) -> &[f32] {
        let i = cell.index(self.m);
        &self.weights[i * self.d..(i + 1) * self.d]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(move |i| Cell::from_index(i, self.m))
    }

    fn check_cell(&self, cell: Cell) -> Result<()> {
        if cell.row >= self.m || cell.col >= self.m {
            return Err(Error::invalid(format!(
                "cell ({}, {}) outside {}x{} map",
                cell.row, cell.col, self.m, self.m
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.d {
            return Err(Error::shape("latent vector", self.d, z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent vector contains non-finite values"));
        }
        Ok(())
    }

    fn distance_sq_to(&self, index: usize, z: &[f32]) -> f64 {
        self.weights[index * self.d..(index + 1) * self.d]
            .iter()
            .zip(z)
            .map(|(&w, &v)| {
                let diff = w as f64 - v as f64;
                diff * diff
            })
            .sum()
    }

    /// Nearest PV to `z`; ties go to the first cell in row-major order.
    pub fn best_matching_unit(&self, z: &[f32]) -> Result<Bmu> {
        self.check_latent(z)?;
        Ok(self.bmu_unchecked(z))
    }

    fn bmu_unchecked(&self, z: &[f32]) -> Bmu {
        let (best, best_d) = self.nearest(z);
        Bmu {
            cell: Cell::from_index(best, self.m),
            distance: best_d.sqrt(),
        }
    }

    /// Index and squared distance of the nearest PV.
    fn nearest(&self, z: &[f32]) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.n_cells() {
            let dist = self.distance_sq_to(i, z);
            if dist < best_d {
                best_d = dist;
                best = i;
            }
        }
        (best, best_d)
    }

    fn delta_sq(&self, a: Cell, b: Cell, mode: NeighborhoodDistance) -> f64 {
        match mode {
            NeighborhoodDistance::Grid => a.grid_distance_sq(b),
            NeighborhoodDistance::Weight => {
                let wb = self.prototype(b);
                self.prototype(a)
                    .iter()
                    .zip(wb)
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum()
            }
        }
    }

    /// Neighbourhood weight `h = exp(-delta(i, k)^2 / T(t)^2)`.
    pub fn neighborhood_weight(
        &self,
        cell_i: Cell,
        cell_k: Cell,
        t: usize,
        schedule: &DecaySchedule,
        mode: NeighborhoodDistance,
    ) -> Result<f64> {
        self.check_cell(cell_i)?;
        self.check_cell(cell_k)?;
        Ok(gaussian_kernel(
            self.delta_sq(cell_i, cell_k, mode),
            schedule.temperature(t),
        ))
    }

    /// One competition/cooperation/adaptation step:
    /// `w_i <- w_i + eta(t) * h_ik(t) * (z - w_i)` for every cell `i`.
    pub fn train_step(
        &mut self,
        z: &[f32],
        t: usize,
        schedule: &DecaySchedule,
        mode: NeighborhoodDistance,
    ) -> Result<Bmu> {
        self.check_latent(z)?;
        if t >= schedule.n_iters {
            return Err(Error::invalid(format!(
                "iteration {t} outside schedule of {} iterations",
                schedule.n_iters
            )));
        }
        let bmu = self.bmu_unchecked(z);
        let eta = schedule.learning_rate(t);
        let temp = schedule.temperature(t);
        // Kernel weights from pre-update PVs (matters for weight-space distance).
        let factors: Vec<f64> = (0..self.n_cells())
            .map(|i| eta * gaussian_kernel(self.delta_sq(Cell::from_index(i, self.m), bmu.cell, mode), temp))
            .collect();
        for (i, &f) in factors.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let w = &mut self.weights[i * self.d..(i + 1) * self.d];
            for (w, &v) in w.iter_mut().zip(z) {
                let w64 = *w as f64;
                let next = (w64 + f * (v as f64 - w64)) as f32;
                if !next.is_finite() {
                    return Err(Error::NonFinite(format!("som update of cell {i}")));
                }
                *w = next;
            }
        }
        Ok(bmu)
    }

    /// Mean squared distance from each row of `data` to its BMU.
    pub fn quantization_error(&self, data: &[f32]) -> Result<f64> {
        check_dataset(data, self.d)?;
        let n = data.len() / self.d;
        let mut total = 0.0;
        for z in data.chunks_exact(self.d) {
            self.check_latent(z)?;
            total += self.nearest(z).1;
        }
        Ok(total / n as f64)
    }

    /// BMU cell of every row of `data`.
    pub fn assign(&self, data: &[f32]) -> Result<Vec<Cell>> {
        if data.len() % self.d != 0 {
            return Err(Error::shape("latent rows", format!("multiple of {}", self.d), data.len()));
        }
        data.chunks_exact(self.d)
            .map(|z| self.best_matching_unit(z).map(|b| b.cell))
            .collect()
    }
}

fn check_dataset(data: &[f32], d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Config("latent dimension must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::invalid("latent dataset is empty"));
    }
    if data.len() % d != 0 {
        return Err(Error::shape("latent rows", format!("multiple of {d}"), data.len()));
    }
    Ok(())
}

/// Settings for [`fit_som`] beyond the decay schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SomTrainConfig {
    pub seed: u64,
    /// Quantization error is recorded every this many iterations (and at the end).
    pub report_every: usize,
    #[serde(default)]
    pub distance: NeighborhoodDistance,
}

impl Default for SomTrainConfig {
    fn default() -> Self {
        SomTrainConfig {
            seed: 0,
            report_every: 1000,
            distance: NeighborhoodDistance::Grid,
        }
    }
}

/// Quantization error recorded at iteration `iteration`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QePoint {
    pub iteration: usize,
    pub quantization_error: f64,
}

/// Runs `schedule.n_iters` single-sample steps, drawing rows of `data`
/// uniformly with replacement from a seeded RNG.
pub fn fit_som(
    map: &mut SomMap,
    data: &[f32],
    schedule: &DecaySchedule,
    config: &SomTrainConfig,
) -> Result<Vec<QePoint>> {
    schedule.validate()?;
    check_dataset(data, map.dim())?;
    let d = map.dim();
    let n = data.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let every = config.report_every.max(1);
    let mut history = vec![QePoint {
        iteration: 0,
        quantization_error: map.quantization_error(data)?,
    }];
    for t in 0..schedule.n_iters {
        let r = rng.random_range(0..n);
        map.train_step(&data[r * d..(r + 1) * d], t, schedule, config.distance)?;
        let done = t + 1;
        if done % every == 0 || done == schedule.n_iters {
            history.push(QePoint {
                iteration: done,
                quantization_error: map.quantization_error(data)?,
            });
        }
    }
    Ok(history)
}
