use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// Default stand-in for the Sobolev conjugate when `N <= ps`.
pub const DEFAULT_P_SOB_SENTINEL: f64 = 1.0e6;

/// Exponents and structural constants of a double-phase problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
    /// Integrability of the forcing; `f64::INFINITY` encodes `gamma = inf`.
    #[serde(
        default = "infinite",
        serialize_with = "ser_extended",
        deserialize_with = "de_extended"
    )]
    pub gamma: f64,
    pub delta0: f64,
    pub dim: usize,
    #[serde(default = "default_sentinel")]
    pub p_sob_sentinel: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

fn default_sentinel() -> f64 {
    DEFAULT_P_SOB_SENTINEL
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) => match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
            other => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{other}\""
            ))),
        },
    }
}

impl ProblemSpec {
    /// Spec with `lambda = 2`, `gamma = inf`, `delta0 = 0.1`.
    pub fn new(dim: usize, p: f64, q: f64, s: f64, t: f64) -> Self {
        ProblemSpec {
            p,
            q,
            s,
            t,
            lambda: 2.0,
            gamma: f64::INFINITY,
            delta0: 0.1,
            dim,
            p_sob_sentinel: DEFAULT_P_SOB_SENTINEL,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_delta0(mut self, delta0: f64) -> Self {
        self.delta0 = delta0;
        self
    }

    pub fn n(&self) -> f64 {
        self.dim as f64
    }

    /// Kernel order of the p-phase, `ps`.
    pub fn sigma_p(&self) -> f64 {
        self.p * self.s
    }

    /// Kernel order of the q-phase, `qt`.
    pub fn sigma_q(&self) -> f64 {
        self.q * self.t
    }
}

/// Regimes whose hypotheses can be asserted on top of basic validity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `2 <= p <= q <= ps/t`.
    SelfImproving,
    /// `q < min{p*_s, ps/t}` and `gamma > max{1, N/(ps)}`.
    Holder,
    /// `q < p*_s` and `qt <= ps`.
    Boundedness,
}

/// Quantities derived from a validated [`ProblemSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedExponents {
    pub p_star: f64,
    pub frak_a: f64,
    pub p_sob: f64,
    pub theta: f64,
    pub p_prime: f64,
    pub qt_le_ps: bool,
    pub holder_regime: bool,
    pub forcing_admissible: bool,
}

impl DerivedExponents {
    /// Checks the hypotheses of `regime`, naming the first one that fails.
    pub fn require(&self, spec: &ProblemSpec, regime: Regime) -> Result<(), ModelError> {
        let (ps, qt) = (spec.sigma_p(), spec.sigma_q());
        match regime {
            Regime::SelfImproving => {
                if !self.qt_le_ps {
                    return Err(ModelError::Regime(format!(
                        "qt > ps ({qt} > {ps}) violates the self-improving regime 2 <= p <= q <= ps/t"
                    )));
                }
            }
            Regime::Holder => {
                if !self.holder_regime {
                    return Err(ModelError::Regime(format!(
                        "q = {} >= min{{p*_s, ps/t}} = {} violates the Hölder regime q < min{{p*_s, ps/t}}",
                        spec.q,
                        self.p_sob.min(ps / spec.t)
                    )));
                }
                if !self.forcing_admissible {
                    return Err(ModelError::Regime(format!(
                        "gamma = {} violates the forcing hypothesis gamma > max{{1, N/(ps)}}",
                        spec.gamma
                    )));
                }
            }
            Regime::Boundedness => {
                if spec.q >= self.p_sob {
                    return Err(ModelError::Regime(format!(
                        "q = {} >= p*_s = {} violates the boundedness hypothesis q < p*_s",
                        spec.q, self.p_sob
                    )));
                }
                if !self.qt_le_ps {
                    return Err(ModelError::Regime(format!(
                        "qt > ps ({qt} > {ps}) violates the boundedness hypothesis qt <= ps"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn range(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ModelError> {
    if ok && (value.is_finite() || name == "gamma") {
        Ok(())
    } else {
        Err(ModelError::Range {
            name,
            value,
            reason,
        })
    }
}

/// Validates the parameter ranges and computes `p*`, `A`, `p*_s`, `Theta`, `p'`.
pub fn validate_spec(spec: &ProblemSpec) -> Result<DerivedExponents, ModelError> {
    let ProblemSpec {
        p,
        q,
        s,
        t,
        lambda,
        gamma,
        delta0,
        dim,
        p_sob_sentinel,
    } = *spec;
    if dim != 1 && dim != 2 {
        return Err(ModelError::Range {
            name: "dim",
            value: dim as f64,
            reason: "dimension must be 1 or 2",
        });
    }
    range("p", p, p >= 2.0, "growth exponent p must satisfy p >= 2")?;
    range("q", q, q >= p, "growth exponent q must satisfy q >= p")?;
    range("s", s, s > 0.0 && s < 1.0, "order s must lie in (0,1)")?;
    range("t", t, t > 0.0 && t < 1.0, "order t must lie in (0,1)")?;
    range("lambda", lambda, lambda >= 1.0, "ellipticity bound must satisfy lambda >= 1")?;
    range("gamma", gamma, gamma > 1.0 && !gamma.is_nan(), "gamma must lie in (1, inf]")?;
    range("delta0", delta0, delta0 > 0.0, "delta0 must be positive")?;
    range(
        "p_sob_sentinel",
        p_sob_sentinel,
        p_sob_sentinel > q,
        "the p*_s sentinel must exceed q",
    )?;

    let n = dim as f64;
    let ps = p * s;
    let qt = q * t;
    let p_prime = p / (p - 1.0);
    let (p_star, frak_a) = if ps < n {
        (n * p_prime / (n + s * p_prime), 0.0)
    } else {
        (1.0, 0.5 * delta0.min(1.0 / p))
    };
    let p_sob = if n > ps { n * p / (n - ps) } else { p_sob_sentinel };
    let n_over_gamma = if gamma.is_infinite() { 0.0 } else { n / gamma };
    let forcing_admissible = gamma > 1.0f64.max(n / ps);
    if !forcing_admissible {
        return Err(ModelError::Regime(format!(
            "gamma = {gamma} violates the forcing hypothesis gamma > max{{1, N/(ps)}} = {}",
            1.0f64.max(n / ps)
        )));
    }
    let theta = ((ps - n_over_gamma) / (p - 1.0)).min(qt / (q - 1.0)).min(1.0);
    Ok(DerivedExponents {
        p_star,
        frak_a,
        p_sob,
        theta,
        p_prime,
        qt_le_ps: qt <= ps,
        holder_regime: q < p_sob.min(ps / t),
        forcing_admissible,
    })
}

/// `[xi]^{ell-1} = |xi|^{ell-2} xi`.
pub fn bracket_power(xi: f64, ell: f64) -> f64 {
    abs_pow(xi, ell - 2.0) * xi
}

/// `|x|^e` with exact fast paths for small integer exponents.
#[inline]
pub fn abs_pow(x: f64, e: f64) -> f64 {
    let a = x.abs();
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        a
    } else if e == 2.0 {
        a * a
    } else if e == 3.0 {
        a * a * a
    } else if e.fract() == 0.0 && e.abs() < 64.0 {
        a.powi(e as i32)
    } else {
        a.powf(e)
    }
}

fn sample_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    loop {
        let xi = rng.gen_range(-10.0..10.0);
        // half the draws land near the antidiagonal where the infimum sits
        let zeta = if rng.gen_bool(0.5) {
            -xi + rng.gen_range(-0.5..0.5)
        } else {
            rng.gen_range(-10.0..10.0)
        };
        if xi != zeta {
            return (xi, zeta);
        }
    }
}

/// Empirical infimum of `([xi]^{ell-1} - [zeta]^{ell-1})(xi - zeta) / |xi - zeta|^ell`.
pub fn monotonicity_constant<R: Rng>(ell: f64, trials: usize, rng: &mut R) -> f64 {
    assert!(ell >= 2.0 && ell.is_finite(), "ell must be finite and >= 2");
    let mut best = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let (xi, zeta) = sample_pair(rng);
        best = best.min(monotonicity_ratio(xi, zeta, ell));
    }
    best
}

/// The ratio whose infimum is the monotonicity constant.
pub fn monotonicity_ratio(xi: f64, zeta: f64, ell: f64) -> f64 {
    let d = xi - zeta;
    (bracket_power(xi, ell) - bracket_power(zeta, ell)) * d / abs_pow(d, ell)
}

/// Smallest `c` with `|[xi-w]^{l-1} - [zeta-w]^{l-1}| <= c|xi-zeta|^{l-1} + c|xi-zeta||xi-w|^{l-2}`
/// over random triples.
pub fn kkp2_constant<R: Rng>(ell: f64, trials: usize, rng: &mut R) -> f64 {
    let mut c: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let (xi, zeta) = sample_pair(rng);
        let w = rng.gen_range(-10.0..10.0);
        c = c.max(kkp2_ratio(xi, zeta, w, ell));
    }
    c
}

pub fn kkp2_ratio(xi: f64, zeta: f64, w: f64, ell: f64) -> f64 {
    let lhs = (bracket_power(xi - w, ell) - bracket_power(zeta - w, ell)).abs();
    let d = (xi - zeta).abs();
    let rhs = abs_pow(d, ell - 1.0) + d * abs_pow(xi - w, ell - 2.0);
    if rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_examples() {
        let d = validate_spec(&ProblemSpec::new(2, 2.0, 2.0, 0.5, 0.5)).unwrap();
        assert_eq!(d.theta, 1.0);
        let d = validate_spec(&ProblemSpec::new(2, 2.0, 3.0, 0.8, 0.5)).unwrap();
        assert!((d.theta - 0.75).abs() < 1e-15);
        let d = validate_spec(&ProblemSpec::new(2, 2.0, 2.0, 0.5, 0.5)).unwrap();
        assert!((d.p_star - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.frak_a, 0.0);
    }

    #[test]
    fn supercritical_branch() {
        let spec = ProblemSpec::new(1, 2.0, 2.0, 0.6, 0.5).with_delta0(0.2);
        let d = validate_spec(&spec).unwrap();
        assert_eq!(d.p_star, 1.0);
        assert!((d.frak_a - 0.1).abs() < 1e-15);
        assert_eq!(d.p_sob, DEFAULT_P_SOB_SENTINEL);
    }

    #[test]
    fn finite_gamma_enters_theta() {
        let spec = ProblemSpec::new(1, 2.0, 2.0, 0.75, 0.75).with_gamma(4.0);
        let d = validate_spec(&spec).unwrap();
        assert_eq!(d.theta, 1.0);
        let spec = ProblemSpec::new(1, 3.0, 3.0, 0.5, 0.5).with_gamma(2.0);
        let d = validate_spec(&spec).unwrap();
        assert!((d.theta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regime_errors_name_hypothesis() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.3, 0.5);
        let d = validate_spec(&spec).unwrap();
        let err = d.require(&spec, Regime::SelfImproving).unwrap_err().to_string();
        assert!(err.contains("qt > ps"), "{err}");
        assert!(validate_spec(&ProblemSpec::new(1, 1.5, 3.0, 0.3, 0.5)).is_err());
        assert!(validate_spec(&ProblemSpec::new(3, 2.0, 3.0, 0.3, 0.5)).is_err());
        assert!(validate_spec(&ProblemSpec::new(2, 2.0, 2.0, 0.25, 0.25).with_gamma(3.0)).is_err());
    }

    #[test]
    fn bracket_examples() {
        assert_eq!(bracket_power(-2.0, 3.0), -4.0);
        assert_eq!(bracket_power(0.0, 3.7), 0.0);
        assert_eq!(bracket_power(1.5, 2.0), 1.5);
    }

    #[test]
    fn monotonicity_constant_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(monotonicity_constant(2.0, 1000, &mut rng), 1.0);
        let c3 = monotonicity_constant(3.0, 20000, &mut rng);
        assert!(c3 >= 0.5 - 1e-12 && c3 < 0.51, "{c3}");
        let c4 = monotonicity_constant(4.0, 20000, &mut rng);
        assert!(c4 >= 0.25 - 1e-12 && c4 < 0.26, "{c4}");
    }

    #[test]
    fn serde_gamma_roundtrip() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
