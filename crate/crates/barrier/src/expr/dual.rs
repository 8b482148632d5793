//! Dual numbers carrying one partial per differentiation seed.

use smallvec::SmallVec;

/// Value plus forward-mode partials. Arithmetic follows the chain rule
/// exactly for all supported primitives; nonsmooth primitives (`abs`, `min`,
/// `max`) take the derivative from the right at ties via the identity
/// `max(a,b) = (a + b + abs(a-b)) / 2` (so `max` keeps the first argument's
/// derivative at a tie and `min` the second's).
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub partials: SmallVec<[f64; 4]>,
}

impl DualValue {
    pub fn constant(value: f64, n_seeds: usize) -> DualValue {
        DualValue {
            value,
            partials: smallvec::smallvec![0.0; n_seeds],
        }
    }

    pub fn seeded(value: f64, n_seeds: usize, seed: usize) -> DualValue {
        let mut d = DualValue::constant(value, n_seeds);
        d.partials[seed] = 1.0;
        d
    }

    fn map(&self, value: f64, scale: f64) -> DualValue {
        DualValue {
            value,
            partials: self.partials.iter().map(|d| d * scale).collect(),
        }
    }

    pub fn neg(&self) -> DualValue {
        self.map(-self.value, -1.0)
    }

    pub fn add(&self, o: &DualValue) -> DualValue {
        DualValue {
            value: self.value + o.value,
            partials: self
                .partials
                .iter()
                .zip(&o.partials)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, o: &DualValue) -> DualValue {
        DualValue {
            value: self.value - o.value,
            partials: self
                .partials
                .iter()
                .zip(&o.partials)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mul(&self, o: &DualValue) -> DualValue {
        DualValue {
            value: self.value * o.value,
            partials: self
                .partials
                .iter()
                .zip(&o.partials)
                .map(|(a, b)| a * o.value + b * self.value)
                .collect(),
        }
    }

    /// Caller checks o.value != 0.
    pub fn div(&self, o: &DualValue) -> DualValue {
        let inv = 1.0 / o.value;
        DualValue {
            value: self.value * inv,
            partials: self
                .partials
                .iter()
                .zip(&o.partials)
                .map(|(a, b)| (a * o.value - b * self.value) * inv * inv)
                .collect(),
        }
    }

    /// General power with positive base (caller checks).
    pub fn pow(&self, o: &DualValue) -> DualValue {
        let value = self.value.powf(o.value);
        let ln = self.value.ln();
        DualValue {
            value,
            partials: self
                .partials
                .iter()
                .zip(&o.partials)
                .map(|(a, b)| value * (b * ln + o.value * a / self.value))
                .collect(),
        }
    }

    /// Power with a constant exponent; valid for negative bases when the
    /// exponent is an integer. Returns None when the value or derivative is
    /// not a real number.
    pub fn powi_like(&self, k: f64) -> Option<DualValue> {
        let value = self.value.powf(k);
        if value.is_nan() {
            return None;
        }
        let dbase = if k == 0.0 {
            0.0
        } else {
            k * self.value.powf(k - 1.0)
        };
        if dbase.is_nan() || (dbase.is_infinite() && self.partials.iter().any(|d| *d != 0.0)) {
            return None;
        }
        let dbase = if dbase.is_infinite() { 0.0 } else { dbase };
        Some(self.map(value, dbase))
    }

    pub fn sin(&self) -> DualValue {
        self.map(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> DualValue {
        self.map(self.value.cos(), -self.value.sin())
    }

    pub fn exp(&self) -> DualValue {
        let v = self.value.exp();
        self.map(v, v)
    }

    pub fn tanh(&self) -> DualValue {
        let v = self.value.tanh();
        self.map(v, 1.0 - v * v)
    }

    /// Caller checks value > 0.
    pub fn log(&self) -> DualValue {
        self.map(self.value.ln(), 1.0 / self.value)
    }

    /// None when differentiating sqrt at exactly 0 with nonzero inner
    /// partials (one-sided derivative is unbounded).
    pub fn sqrt(&self) -> Option<DualValue> {
        if self.value == 0.0 {
            if self.partials.iter().all(|d| *d == 0.0) {
                return Some(DualValue::constant(0.0, self.partials.len()));
            }
            return None;
        }
        let v = self.value.sqrt();
        Some(self.map(v, 0.5 / v))
    }

    pub fn abs(&self) -> DualValue {
        // right derivative at 0 is +1
        let sign = if self.value >= 0.0 { 1.0 } else { -1.0 };
        self.map(self.value.abs(), sign)
    }

    pub fn max(self, o: DualValue) -> DualValue {
        if self.value >= o.value {
            self
        } else {
            o
        }
    }

    pub fn min(self, o: DualValue) -> DualValue {
        if self.value < o.value {
            self
        } else {
            o
        }
    }

    /// Euclidean norm of the arguments. At the origin the subgradient 0 is
    /// used for every partial.
    pub fn norm(parts: &[DualValue]) -> DualValue {
        let n_seeds = parts.first().map(|p| p.partials.len()).unwrap_or(0);
        let value = parts.iter().map(|p| p.value * p.value).sum::<f64>().sqrt();
        if value == 0.0 {
            return DualValue::constant(0.0, n_seeds);
        }
        let mut partials: SmallVec<[f64; 4]> = smallvec::smallvec![0.0; n_seeds];
        for p in parts {
            for (acc, d) in partials.iter_mut().zip(&p.partials) {
                *acc += p.value * d;
            }
        }
        for d in partials.iter_mut() {
            *d /= value;
        }
        DualValue { value, partials }
    }
}
