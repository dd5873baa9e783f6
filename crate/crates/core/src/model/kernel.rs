use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Point};

pub type AFn = dyn Fn(&Point, &Point, f64, f64) -> f64 + Send + Sync;
pub type BFn = dyn Fn(&Point, &Point) -> f64 + Send + Sync;
pub type Modulus = dyn Fn(f64) -> f64 + Send + Sync;

/// Coefficients `a(x, y, w, z)` and `b(x, y)` with the continuity modulus
/// `omega` of `a` in `(w, z)`.
#[derive(Clone)]
pub struct KernelPair {
    a: Arc<AFn>,
    b: Arc<BFn>,
    omega: Arc<Modulus>,
    pub symmetry_declared: bool,
    pub a_depends_on_u: bool,
    pub b_is_zero: bool,
    /// Declared `||b||_inf`.
    pub b_sup: f64,
    pub label: String,
}

impl fmt::Debug for KernelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelPair")
            .field("label", &self.label)
            .field("a_depends_on_u", &self.a_depends_on_u)
            .field("b_is_zero", &self.b_is_zero)
            .field("b_sup", &self.b_sup)
            .finish()
    }
}

impl KernelPair {
    pub fn new<A, B, W>(label: impl Into<String>, a: A, b: B, omega: W, b_sup: f64) -> Self
    where
        A: Fn(&Point, &Point, f64, f64) -> f64 + Send + Sync + 'static,
        B: Fn(&Point, &Point) -> f64 + Send + Sync + 'static,
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        KernelPair {
            a: Arc::new(a),
            b: Arc::new(b),
            omega: Arc::new(omega),
            symmetry_declared: true,
            a_depends_on_u: true,
            b_is_zero: b_sup == 0.0,
            b_sup,
            label: label.into(),
        }
    }

    /// `a = value`, `b = 0`.
    pub fn constant(value: f64) -> Self {
        KernelSpec {
            a: ACoef::Constant { value },
            b: BCoef::Zero,
        }
        .build()
    }

    #[inline]
    pub fn a(&self, x: &Point, y: &Point, w: f64, z: f64) -> f64 {
        (self.a)(x, y, w, z)
    }

    #[inline]
    pub fn b(&self, x: &Point, y: &Point) -> f64 {
        (self.b)(x, y)
    }

    #[inline]
    pub fn omega(&self, r: f64) -> f64 {
        (self.omega)(r)
    }

    pub fn a_fn(&self) -> Arc<AFn> {
        self.a.clone()
    }

    pub fn b_fn(&self) -> Arc<BFn> {
        self.b.clone()
    }

    pub fn with_a<A>(&self, label: impl Into<String>, a: A, depends_on_u: bool) -> Self
    where
        A: Fn(&Point, &Point, f64, f64) -> f64 + Send + Sync + 'static,
    {
        KernelPair {
            a: Arc::new(a),
            a_depends_on_u: depends_on_u,
            label: label.into(),
            ..self.clone()
        }
    }

    pub fn with_b<B>(&self, label: impl Into<String>, b: B, b_sup: f64) -> Self
    where
        B: Fn(&Point, &Point) -> f64 + Send + Sync + 'static,
    {
        KernelPair {
            b: Arc::new(b),
            b_sup,
            b_is_zero: b_sup == 0.0,
            label: label.into(),
            ..self.clone()
        }
    }

    pub fn with_omega<W>(&self, omega: W) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        KernelPair {
            omega: Arc::new(omega),
            ..self.clone()
        }
    }

    /// Random spot checks of symmetry, ellipticity bounds and the modulus of
    /// continuity, on points of `[-extent, extent]^N` and values in `[-m, m]`.
    pub fn check_assumptions<R: Rng>(
        &self,
        lambda: f64,
        dim: usize,
        extent: f64,
        m: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<(), ModelError> {
        let pt = |rng: &mut R| -> Point {
            let mut x = [0.0; 2];
            for c in x.iter_mut().take(dim) {
                *c = rng.gen_range(-extent..extent);
            }
            x
        };
        for _ in 0..samples {
            let x = pt(rng);
            let y = pt(rng);
            let w = rng.gen_range(-m..=m);
            let z = rng.gen_range(-m..=m);
            let axy = self.a(&x, &y, w, z);
            let ayx = self.a(&y, &x, z, w);
            if (axy - ayx).abs() > 1e-12 * axy.abs().max(1.0) {
                return Err(ModelError::Kernel(format!(
                    "a(x,y,w,z) != a(y,x,z,w) at x={x:?}, y={y:?}: {axy} vs {ayx}"
                )));
            }
            if !(axy >= 1.0 / lambda - 1e-14 && axy <= lambda + 1e-14) {
                return Err(ModelError::Kernel(format!(
                    "a = {axy} outside [1/lambda, lambda] with lambda = {lambda}"
                )));
            }
            let bxy = self.b(&x, &y);
            let byx = self.b(&y, &x);
            if (bxy - byx).abs() > 1e-12 * bxy.abs().max(1.0) {
                return Err(ModelError::Kernel(format!("b(x,y) != b(y,x): {bxy} vs {byx}")));
            }
            if !(bxy >= -1e-14 && bxy <= lambda + 1e-14 && bxy <= self.b_sup + 1e-12) {
                return Err(ModelError::Kernel(format!(
                    "b = {bxy} outside [0, min(lambda, declared sup {})]",
                    self.b_sup
                )));
            }
            let w2 = rng.gen_range(-m..=m);
            let z2 = rng.gen_range(-m..=m);
            let change = (self.a(&x, &y, w, z) - self.a(&x, &y, w2, z2)).abs();
            let r = 0.5 * ((w - w2).abs() + (z - z2).abs());
            if change > self.omega(r) + 1e-12 {
                return Err(ModelError::Kernel(format!(
                    "|a(.,w,z) - a(.,w',z')| = {change} exceeds omega({r}) = {}",
                    self.omega(r)
                )));
            }
        }
        Ok(())
    }
}

/// Named coefficient `a` for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ACoef {
    Constant {
        value: f64,
    },
    /// `low` or `high` according to the parity of `sum floor(x_i/side) + sum floor(y_i/side)`.
    Checkerboard {
        side: f64,
        low: f64,
        high: f64,
    },
    /// `mid + amplitude sin(ln(1 - ln min(|x - y|, 1)))`, a VMO function with no modulus of continuity.
    LogOscillating {
        mid: f64,
        amplitude: f64,
    },
    /// `base + amplitude sin(w + z)`, so `omega(r) = 2 amplitude r`.
    USmooth {
        base: f64,
        amplitude: f64,
    },
}

/// Named coefficient `b` for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BCoef {
    Zero,
    Constant {
        value: f64,
    },
    /// `base (1 + amplitude sin(frequency sum(x_i + y_i)))`.
    Smooth {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    Checkerboard {
        side: f64,
        low: f64,
        high: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub a: ACoef,
    #[serde(default = "zero_b")]
    pub b: BCoef,
}

fn zero_b() -> BCoef {
    BCoef::Zero
}

pub fn checker_parity(x: &Point, y: &Point, side: f64) -> bool {
    let f = |v: f64| (v / side).floor() as i64;
    (f(x[0]) + f(x[1]) + f(y[0]) + f(y[1])).rem_euclid(2) == 1
}

impl KernelSpec {
    pub fn build(&self) -> KernelPair {
        let (a_label, a, depends, omega): (String, Arc<AFn>, bool, Arc<Modulus>) = match self.a {
            ACoef::Constant { value } => (
                format!("a=const({value})"),
                Arc::new(move |_: &Point, _: &Point, _, _| value),
                false,
                Arc::new(|_| 0.0),
            ),
            ACoef::Checkerboard { side, low, high } => (
                format!("a=checker({side},{low},{high})"),
                Arc::new(move |x: &Point, y: &Point, _, _| {
                    if checker_parity(x, y, side) {
                        high
                    } else {
                        low
                    }
                }),
                false,
                Arc::new(|_| 0.0),
            ),
            ACoef::LogOscillating { mid, amplitude } => (
                format!("a=logosc({mid},{amplitude})"),
                Arc::new(move |x: &Point, y: &Point, _, _| {
                    let r = super::dist(x, y).min(1.0).max(f64::MIN_POSITIVE);
                    mid + amplitude * (1.0 - r.ln()).ln().sin()
                }),
                false,
                Arc::new(|_| 0.0),
            ),
            ACoef::USmooth { base, amplitude } => (
                format!("a=usmooth({base},{amplitude})"),
                Arc::new(move |_: &Point, _: &Point, w: f64, z: f64| base + amplitude * (w + z).sin()),
                true,
                Arc::new(move |r| 2.0 * amplitude.abs() * r),
            ),
        };
        let (b_label, b, b_sup): (String, Arc<BFn>, f64) = match self.b {
            BCoef::Zero => ("b=0".into(), Arc::new(|_: &Point, _: &Point| 0.0), 0.0),
            BCoef::Constant { value } => (
                format!("b=const({value})"),
                Arc::new(move |_: &Point, _: &Point| value),
                value.abs(),
            ),
            BCoef::Smooth {
                base,
                amplitude,
                frequency,
            } => (
                format!("b=smooth({base},{amplitude},{frequency})"),
                Arc::new(move |x: &Point, y: &Point| {
                    base * (1.0 + amplitude * (frequency * (x[0] + x[1] + y[0] + y[1])).sin())
                }),
                base.abs() * (1.0 + amplitude.abs()),
            ),
            BCoef::Checkerboard { side, low, high } => (
                format!("b=checker({side},{low},{high})"),
                Arc::new(move |x: &Point, y: &Point| {
                    if checker_parity(x, y, side) {
                        high
                    } else {
                        low
                    }
                }),
                low.abs().max(high.abs()),
            ),
        };
        KernelPair {
            a,
            b,
            omega,
            symmetry_declared: true,
            a_depends_on_u: depends,
            b_is_zero: b_sup == 0.0,
            b_sup,
            label: format!("{a_label};{b_label}"),
        }
    }
}
