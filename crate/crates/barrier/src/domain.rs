//! Boxes, lattices, level-band sampling, expanding-box schedules, and
//! connected components of sign sets on a grid.
//!
//! Boundedness of a component is decided by "does not touch a box face and
//! persists under one 2x expansion". This is a finite stand-in for reasoning
//! over all of R^n and is reported as evidence, not proof.

use crate::expr::ExprError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum DomainError {
    #[error("empty band")]
    EmptyBand,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] ExprError),
}

/// Axis-aligned box, per-dimension `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(bounds: &[(f64, f64)]) -> Result<BoxRegion, DomainError> {
        if bounds.is_empty() {
            return Err(DomainError::Config("box needs at least one dimension".into()));
        }
        for (lo, hi) in bounds {
            if !(lo < hi) {
                return Err(DomainError::Config(format!("box bound [{lo}, {hi}] is empty")));
            }
        }
        Ok(BoxRegion {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Scale about the box center by `factor`.
    pub fn scale_centered(&self, factor: f64) -> BoxRegion {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| 0.5 * (lo + hi) - 0.5 * factor * (hi - lo))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| 0.5 * (lo + hi) + 0.5 * factor * (hi - lo))
            .collect();
        BoxRegion { lo, hi }
    }
}

/// Lattice over a box; points include the box corners, so every dimension has
/// at least two points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    bounds: BoxRegion,
    counts: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: BoxRegion, counts: &[usize]) -> Result<Grid, DomainError> {
        if counts.len() != bounds.dim() {
            return Err(DomainError::Config("grid counts must match box dimension".into()));
        }
        if counts.iter().any(|c| *c < 2) {
            return Err(DomainError::Config("grid needs at least 2 points per dimension".into()));
        }
        Ok(Grid {
            bounds,
            counts: counts.to_vec(),
        })
    }

    pub fn bounds(&self) -> &BoxRegion {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, dim: usize) -> f64 {
        (self.bounds.hi[dim] - self.bounds.lo[dim]) / (self.counts[dim] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|d| self.spacing(d)).fold(0.0, f64::max)
    }

    /// Same counts over a different box.
    pub fn with_bounds(&self, bounds: BoxRegion) -> Result<Grid, DomainError> {
        Grid::new(bounds, &self.counts)
    }

    /// Multi-index of a flat lattice index; dimension 0 varies slowest.
    pub fn unflatten(&self, flat: usize, out: &mut [usize]) {
        let mut rem = flat;
        for d in (0..self.counts.len()).rev() {
            out[d] = rem % self.counts[d];
            rem /= self.counts[d];
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for d in 0..self.counts.len() {
            flat = flat * self.counts[d] + idx[d];
        }
        flat
    }

    pub fn coord(&self, dim: usize, k: usize) -> f64 {
        if k == self.counts[dim] - 1 {
            self.bounds.hi[dim] // exact corner
        } else {
            self.bounds.lo[dim] + k as f64 * self.spacing(dim)
        }
    }

    pub fn point(&self, flat: usize, out: &mut Vec<f64>) {
        out.clear();
        let mut rem = flat;
        let mut tmp = [0usize; 8];
        let idx = &mut tmp[..self.counts.len()];
        for d in (0..self.counts.len()).rev() {
            idx[d] = rem % self.counts[d];
            rem /= self.counts[d];
        }
        for d in 0..self.counts.len() {
            out.push(self.coord(d, idx[d]));
        }
    }

    pub fn point_vec(&self, flat: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.point(flat, &mut out);
        out
    }

    /// Evaluate `f` at every lattice point, in parallel, returning values in
    /// lattice order.
    pub fn eval_all<F>(&self, f: F) -> Result<Vec<f64>, ExprError>
    where
        F: Fn(&[f64]) -> Result<f64, ExprError> + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut buf = Vec::with_capacity(self.dim());
                self.point(i, &mut buf);
                f(&buf)
            })
            .collect()
    }

    /// Nearest lattice multi-index to a point (clamped to the box).
    pub fn nearest_index(&self, x: &[f64], out: &mut [usize]) {
        for d in 0..self.dim() {
            let t = (x[d] - self.bounds.lo[d]) / self.spacing(d);
            let k = t.round().max(0.0) as usize;
            out[d] = k.min(self.counts[d] - 1);
        }
    }
}

/// Geometrically growing boxes centered like `base`; the first entry is the
/// base itself.
pub fn expansion_schedule(
    base: &BoxRegion,
    factor: f64,
    steps: usize,
) -> Result<Vec<BoxRegion>, DomainError> {
    if factor <= 1.0 {
        return Err(DomainError::Config(format!("expansion factor must exceed 1, got {factor}")));
    }
    if steps < 1 {
        return Err(DomainError::Config("expansion needs at least 1 step".into()));
    }
    let mut out = Vec::with_capacity(steps);
    let mut scale = 1.0;
    for _ in 0..steps {
        out.push(base.scale_centered(scale));
        scale *= factor;
    }
    Ok(out)
}

/// All grid points x with `0 <= h(x) <= r`, in lattice order. For `r = 0`
/// only exact zeros qualify; callers widen to a tolerance band when that
/// comes back empty.
pub fn sample_band<F>(h: F, grid: &Grid, r: f64) -> Result<Vec<Vec<f64>>, DomainError>
where
    F: Fn(&[f64]) -> Result<f64, ExprError> + Sync,
{
    let values = grid.eval_all(h)?;
    let pts: Vec<Vec<f64>> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= 0.0 && **v <= r)
        .map(|(i, _)| grid.point_vec(i))
        .collect();
    if pts.is_empty() {
        return Err(DomainError::EmptyBand);
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Nonnegative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Component {
    pub cells: usize,
    pub representative: Vec<f64>,
    pub touches_boundary: bool,
    /// Whether the touches-boundary status is unchanged on a 2x expanded box.
    pub stable_under_expansion: bool,
}

impl Component {
    /// Grid-certified boundedness: off every face and still off every face
    /// after one expansion.
    pub fn bounded(&self) -> bool {
        !self.touches_boundary && self.stable_under_expansion
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentReport {
    pub sign: Sign,
    pub components: Vec<Component>,
}

impl ComponentReport {
    pub fn any_bounded(&self) -> bool {
        self.components.iter().any(|c| c.bounded())
    }
}

/// Label connected components of the sign set of `h` over grid cells (sign
/// taken at cell centers, face-adjacency flood fill), then re-run on a 2x
/// expanded box to mark stability.
pub fn flood_fill<F>(h: F, grid: &Grid, sign: Sign) -> Result<ComponentReport, DomainError>
where
    F: Fn(&[f64]) -> Result<f64, ExprError> + Sync,
{
    let base = label_components(&h, grid, sign)?;

    let expanded_bounds = grid.bounds().scale_centered(2.0);
    let expanded_counts: Vec<usize> = grid.counts().iter().map(|c| 2 * (c - 1) + 1).collect();
    let expanded = Grid::new(expanded_bounds, &expanded_counts)?;
    let big = label_components(&h, &expanded, sign)?;

    let mut components = Vec::with_capacity(base.comps.len());
    for comp in &base.comps {
        // locate the representative cell in the expanded labeling
        let stable = match big.label_at(&expanded, &comp.representative) {
            Some(label) => big.comps[label].touches_boundary == comp.touches_boundary,
            None => false, // sign flipped at this resolution; treat as unstable
        };
        components.push(Component {
            cells: comp.cells,
            representative: comp.representative.clone(),
            touches_boundary: comp.touches_boundary,
            stable_under_expansion: stable,
        });
    }
    Ok(ComponentReport { sign, components })
}

struct RawComponent {
    cells: usize,
    representative: Vec<f64>,
    touches_boundary: bool,
}

struct Labeling {
    cell_counts: Vec<usize>,
    labels: Vec<Option<usize>>,
    comps: Vec<RawComponent>,
}

impl Labeling {
    fn label_at(&self, grid: &Grid, x: &[f64]) -> Option<usize> {
        let dim = grid.dim();
        let mut idx = vec![0usize; dim];
        for d in 0..dim {
            let t = (x[d] - grid.bounds().lo()[d]) / grid.spacing(d) - 0.5;
            let k = t.round().max(0.0) as usize;
            idx[d] = k.min(self.cell_counts[d] - 1);
        }
        let mut flat = 0;
        for d in 0..dim {
            flat = flat * self.cell_counts[d] + idx[d];
        }
        self.labels[flat]
    }
}

fn label_components<F>(h: &F, grid: &Grid, sign: Sign) -> Result<Labeling, DomainError>
where
    F: Fn(&[f64]) -> Result<f64, ExprError> + Sync,
{
    let dim = grid.dim();
    let cell_counts: Vec<usize> = grid.counts().iter().map(|c| c - 1).collect();
    let n_cells: usize = cell_counts.iter().product();

    let center = |flat: usize, out: &mut Vec<f64>| {
        out.clear();
        let mut rem = flat;
        let mut idx = [0usize; 8];
        for d in (0..dim).rev() {
            idx[d] = rem % cell_counts[d];
            rem /= cell_counts[d];
        }
        for d in 0..dim {
            out.push(grid.bounds().lo()[d] + (idx[d] as f64 + 0.5) * grid.spacing(d));
        }
    };

    let in_set: Vec<bool> = (0..n_cells)
        .into_par_iter()
        .map(|i| {
            let mut buf = Vec::with_capacity(dim);
            center(i, &mut buf);
            let v = h(&buf)?;
            Ok(match sign {
                Sign::Negative => v < 0.0,
                Sign::Nonnegative => v >= 0.0,
            })
        })
        .collect::<Result<_, ExprError>>()?;

    let mut labels: Vec<Option<usize>> = vec![None; n_cells];
    let mut comps: Vec<RawComponent> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut idx_buf = vec![0usize; dim];
    let mut pt_buf = Vec::with_capacity(dim);

    for start in 0..n_cells {
        if !in_set[start] || labels[start].is_some() {
            continue;
        }
        let label = comps.len();
        let mut cells = 0usize;
        let mut touches = false;
        stack.push(start);
        labels[start] = Some(label);
        while let Some(cur) = stack.pop() {
            cells += 1;
            let mut rem = cur;
            for d in (0..dim).rev() {
                idx_buf[d] = rem % cell_counts[d];
                rem /= cell_counts[d];
            }
            for d in 0..dim {
                if idx_buf[d] == 0 || idx_buf[d] == cell_counts[d] - 1 {
                    touches = true;
                }
            }
            // face neighbors
            for d in 0..dim {
                let stride: usize = cell_counts[d + 1..].iter().product();
                if idx_buf[d] > 0 {
                    let nb = cur - stride;
                    if in_set[nb] && labels[nb].is_none() {
                        labels[nb] = Some(label);
                        stack.push(nb);
                    }
                }
                if idx_buf[d] + 1 < cell_counts[d] {
                    let nb = cur + stride;
                    if in_set[nb] && labels[nb].is_none() {
                        labels[nb] = Some(label);
                        stack.push(nb);
                    }
                }
            }
        }
        center(start, &mut pt_buf);
        comps.push(RawComponent {
            cells,
            representative: pt_buf.clone(),
            touches_boundary: touches,
        });
    }

    Ok(Labeling {
        cell_counts,
        labels,
        comps,
    })
}
