//! Control systems `xdot = f(x, u)`, optional affine splits
//! `f = a(x) + g(x) u`, scalar fields over the state, and Lie derivatives.

use crate::domain::Grid;
use crate::expr::{ExprError, Expression, Node};
use rand::{Rng, SeedableRng};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SystemError {
    #[error("system has no affine split")]
    NotAffine,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("declared affine split disagrees with f at x={x:?}, u={u:?} (error {err:.3e})")]
    AffineMismatch { x: Vec<f64>, u: Vec<f64>, err: f64 },
    #[error(transparent)]
    Eval(#[from] ExprError),
}

/// Affine structure `f(x, u) = a(x) + g(x) u`; `a` has one expression per
/// state, `g` is row-major n x m, all over the state variables only.
#[derive(Debug, Clone)]
pub struct AffineSplit {
    pub a: Vec<Expression>,
    pub g: Vec<Vec<Expression>>,
}

#[derive(Debug, Clone)]
pub struct ControlSystem {
    state_vars: Vec<String>,
    input_vars: Vec<String>,
    f: Vec<Expression>,
    affine: Option<AffineSplit>,
    input_box: Option<Vec<(f64, f64)>>,
}

pub const DEFAULT_INPUT_BOUND: f64 = 10.0;

impl ControlSystem {
    /// Build and validate. A declared affine split is checked against `f` on
    /// 1000 seeded random samples (states in [-5,5]^n, inputs in the input
    /// box) rather than inferred symbolically.
    pub fn new(
        state_vars: Vec<String>,
        input_vars: Vec<String>,
        f: Vec<Expression>,
        affine: Option<AffineSplit>,
        input_box: Option<Vec<(f64, f64)>>,
    ) -> Result<ControlSystem, SystemError> {
        let n = state_vars.len();
        let m = input_vars.len();
        if f.len() != n {
            return Err(SystemError::Dimension(format!(
                "expected {n} dynamics expressions, got {}",
                f.len()
            )));
        }
        if let Some(b) = &input_box {
            if b.len() != m {
                return Err(SystemError::Dimension(format!(
                    "input box has {} dimensions, expected {m}",
                    b.len()
                )));
            }
        }
        if let Some(split) = &affine {
            if split.a.len() != n || split.g.len() != n || split.g.iter().any(|row| row.len() != m)
            {
                return Err(SystemError::Dimension("affine split shape mismatch".into()));
            }
        }
        let sys = ControlSystem {
            state_vars,
            input_vars,
            f,
            affine,
            input_box,
        };
        sys.validate_affine()?;
        Ok(sys)
    }

    fn validate_affine(&self) -> Result<(), SystemError> {
        let Some(split) = &self.affine else {
            return Ok(());
        };
        let n = self.state_dim();
        let m = self.input_dim();
        let ubox = self.input_box_or_default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_a11e);
        let mut xu = vec![0.0; n + m];
        for _ in 0..1000 {
            for v in xu[..n].iter_mut() {
                *v = rng.gen_range(-5.0..5.0);
            }
            for (v, (lo, hi)) in xu[n..].iter_mut().zip(&ubox) {
                *v = rng.gen_range(*lo..*hi);
            }
            let mut f_inf: f64 = 0.0;
            let mut err_inf: f64 = 0.0;
            for i in 0..n {
                let fv = self.f[i].eval_slice(&xu)?;
                let mut av = split.a[i].eval_slice(&xu[..n])?;
                for j in 0..m {
                    av += split.g[i][j].eval_slice(&xu[..n])? * xu[n + j];
                }
                f_inf = f_inf.max(fv.abs());
                err_inf = err_inf.max((fv - av).abs());
            }
            if err_inf > 1e-9 * (1.0 + f_inf) {
                return Err(SystemError::AffineMismatch {
                    x: xu[..n].to_vec(),
                    u: xu[n..].to_vec(),
                    err: err_inf,
                });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_vars.len()
    }

    pub fn state_vars(&self) -> &[String] {
        &self.state_vars
    }

    pub fn input_vars(&self) -> &[String] {
        &self.input_vars
    }

    pub fn dynamics(&self) -> &[Expression] {
        &self.f
    }

    pub fn affine(&self) -> Option<&AffineSplit> {
        self.affine.as_ref()
    }

    pub fn input_box_or_default(&self) -> Vec<(f64, f64)> {
        self.input_box.clone().unwrap_or_else(|| {
            vec![(-DEFAULT_INPUT_BOUND, DEFAULT_INPUT_BOUND); self.input_dim()]
        })
    }

    /// f(x, u) into `out`.
    pub fn eval_f(&self, x: &[f64], u: &[f64], out: &mut Vec<f64>) -> Result<(), SystemError> {
        let mut xu = Vec::with_capacity(x.len() + u.len());
        xu.extend_from_slice(x);
        xu.extend_from_slice(u);
        out.clear();
        for fi in &self.f {
            out.push(fi.eval_slice(&xu)?);
        }
        Ok(())
    }

    /// Dynamics with inputs substituted by feedback expressions over the
    /// state, giving the closed-loop vector field as expressions over x.
    pub fn closed_loop(&self, feedback: &[Expression]) -> Result<Vec<Expression>, SystemError> {
        if feedback.len() != self.input_dim() {
            return Err(SystemError::Dimension(format!(
                "feedback has {} components, expected {}",
                feedback.len(),
                self.input_dim()
            )));
        }
        let roots: Vec<&Node> = feedback.iter().map(|e| e.root()).collect();
        Ok(self
            .f
            .iter()
            .map(|fi| fi.substitute_tail(self.state_dim(), &roots))
            .collect())
    }
}

/// A differentiable scalar function of the state with gradient access:
/// either a parsed expression or grid data with multilinear interpolation and
/// central-difference gradients.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Expr(Expression),
    Grid(GridField),
}

impl ScalarField {
    pub fn from_expression(expr: Expression) -> ScalarField {
        ScalarField::Expr(expr)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        match self {
            ScalarField::Expr(e) => e.eval_slice(x),
            ScalarField::Grid(g) => Ok(g.interpolate(x)),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        match self {
            ScalarField::Expr(e) => {
                let seeds: Vec<usize> = (0..x.len()).collect();
                e.gradient_slice(x, &seeds)
            }
            ScalarField::Grid(g) => Ok(g.gradient(x)),
        }
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        match self {
            ScalarField::Expr(e) => {
                let seeds: Vec<usize> = (0..x.len()).collect();
                e.value_and_gradient(x, &seeds)
            }
            ScalarField::Grid(g) => Ok((g.interpolate(x), g.gradient(x))),
        }
    }
}

/// Scalar field sampled on a lattice. Values between nodes come from
/// multilinear interpolation (clamped outside the box); gradients are central
/// differences of the interpolant at half-cell steps.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> GridField {
        assert_eq!(grid.len(), values.len());
        GridField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for d in 0..dim {
            let t = (x[d] - self.grid.bounds().lo()[d]) / self.grid.spacing(d);
            let t = t.clamp(0.0, (self.grid.counts()[d] - 1) as f64);
            let k = (t.floor() as usize).min(self.grid.counts()[d] - 2);
            base[d] = k;
            frac[d] = t - k as f64;
        }
        // accumulate over the 2^dim cell corners
        let mut acc = 0.0;
        let corners = 1usize << dim;
        let mut idx = [0usize; 8];
        for c in 0..corners {
            let mut w = 1.0;
            for d in 0..dim {
                if c >> d & 1 == 1 {
                    idx[d] = base[d] + 1;
                    w *= frac[d];
                } else {
                    idx[d] = base[d];
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.flatten(&idx[..dim])];
            }
        }
        acc
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut g = Vec::with_capacity(dim);
        let mut xp = x.to_vec();
        for d in 0..dim {
            let step = 0.5 * self.grid.spacing(d);
            let orig = xp[d];
            xp[d] = orig + step;
            let up = self.interpolate(&xp);
            xp[d] = orig - step;
            let dn = self.interpolate(&xp);
            xp[d] = orig;
            g.push((up - dn) / (2.0 * step));
        }
        g
    }
}

/// Lie derivatives along the affine split: `La = grad(field)^T a(x)` and
/// `Lg = g(x)^T grad(field)` (an m-vector).
pub fn lie_derivatives(
    sys: &ControlSystem,
    field: &ScalarField,
    x: &[f64],
) -> Result<(f64, Vec<f64>), SystemError> {
    let split = sys.affine().ok_or(SystemError::NotAffine)?;
    let grad = field.grad(x)?;
    let mut la = 0.0;
    for (gi, ai) in grad.iter().zip(&split.a) {
        la += gi * ai.eval_slice(x)?;
    }
    let mut lg = vec![0.0; sys.input_dim()];
    for (i, gi) in grad.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (j, lg_j) in lg.iter_mut().enumerate() {
            *lg_j += gi * split.g[i][j].eval_slice(x)?;
        }
    }
    Ok((la, lg))
}

/// `grad(field)(x)^T f(x, u)`; works for affine and general dynamics.
pub fn directional_rate(
    sys: &ControlSystem,
    field: &ScalarField,
    x: &[f64],
    u: &[f64],
) -> Result<f64, SystemError> {
    let grad = field.grad(x)?;
    directional_rate_with_grad(sys, &grad, x, u)
}

/// Same as [`directional_rate`] with a precomputed gradient, for callers that
/// sweep many inputs at a fixed state.
pub fn directional_rate_with_grad(
    sys: &ControlSystem,
    grad: &[f64],
    x: &[f64],
    u: &[f64],
) -> Result<f64, SystemError> {
    let mut xu = Vec::with_capacity(x.len() + u.len());
    xu.extend_from_slice(x);
    xu.extend_from_slice(u);
    let mut rate = 0.0;
    for (gi, fi) in grad.iter().zip(sys.dynamics()) {
        if *gi != 0.0 {
            rate += gi * fi.eval_slice(&xu)?;
        }
    }
    Ok(rate)
}
