//! Exact rational arithmetic helpers shared across the crate.
//!
//! Probabilities and counts on correctness-critical paths are exact; random
//! draws against rational weights are made by sampling a uniform big integer
//! below a common denominator, so sampling distributions are exact as well.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use std::fmt;

pub type Rat = BigRational;

/// Small-integer rational constructor.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_zero() -> Rat {
    Rat::zero()
}

pub fn rat_one() -> Rat {
    Rat::one()
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Serialize a rational as `"num/den"` in lowest terms.
pub fn rat_to_string(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parse `"a/b"`, a plain integer, or a decimal like `"0.01"` exactly.
pub fn rat_from_str(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|e| format!("bad numerator: {e}"))?;
        let d: BigInt = d.trim().parse().map_err(|e| format!("bad denominator: {e}"))?;
        if d.is_zero() {
            return Err("zero denominator".into());
        }
        return Ok(Rat::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let int_part: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().map_err(|e| format!("bad integer part: {e}"))?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad fractional part in {s:?}"));
        }
        let scale = BigInt::from(10u32).pow(frac.len() as u32);
        let frac_num: BigInt = frac.parse().map_err(|e| format!("bad fractional part: {e}"))?;
        let negative = s.starts_with('-');
        let magnitude = int_part.abs() * &scale + frac_num;
        let signed = if negative { -magnitude } else { magnitude };
        return Ok(Rat::new(signed, scale));
    }
    let n: BigInt = s.parse().map_err(|e| format!("bad rational {s:?}: {e}"))?;
    Ok(Rat::from_integer(n))
}

/// `base^exp` for a non-negative integer exponent.
pub fn pow_rat(base: &Rat, exp: u32) -> Rat {
    let mut acc = Rat::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// `2^exp` as a big integer.
pub fn pow2(exp: usize) -> BigUint {
    BigUint::one() << exp
}

/// Ceiling of a non-negative rational.
pub fn rat_ceil(r: &Rat) -> BigInt {
    r.ceil().to_integer()
}

/// An exact probability in `[0, 1]`, stored in lowest terms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Probability(Rat);

impl Probability {
    pub fn new(r: Rat) -> Result<Self, String> {
        if r < Rat::zero() || r > Rat::one() {
            return Err(format!("probability out of range: {r}"));
        }
        Ok(Probability(r))
    }

    pub fn zero() -> Self {
        Probability(Rat::zero())
    }

    pub fn one() -> Self {
        Probability(Rat::one())
    }

    pub fn half() -> Self {
        Probability(rat(1, 2))
    }

    /// Ratio of two counts, `num / den`. Requires `num <= den`, `den > 0`.
    pub fn from_counts(num: &BigUint, den: &BigUint) -> Result<Self, String> {
        if den.is_zero() {
            return Err("zero denominator".into());
        }
        if num > den {
            return Err("count ratio above one".into());
        }
        Ok(Probability(Rat::new(
            BigInt::from(num.clone()),
            BigInt::from(den.clone()),
        )))
    }

    pub fn complement(&self) -> Self {
        Probability(Rat::one() - &self.0)
    }

    pub fn as_rat(&self) -> &Rat {
        &self.0
    }

    pub fn into_rat(self) -> Rat {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        rat_to_f64(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", rat_to_string(&self.0))
    }
}

/// An exact non-negative assignment count.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExactCount(pub BigUint);

impl ExactCount {
    pub fn zero() -> Self {
        ExactCount(BigUint::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn to_rat(&self) -> Rat {
        Rat::from_integer(BigInt::from(self.0.clone()))
    }
}

impl fmt::Display for ExactCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Rigorous enclosure `(lo, hi)` of `exp(q)` for rational `q >= 0`, via the
/// Taylor series with an explicit remainder bound.
pub fn exp_enclosure(q: &Rat) -> (Rat, Rat) {
    assert!(
        *q >= Rat::zero(),
        "exp_enclosure requires a non-negative argument"
    );
    // Choose enough terms that the remainder bound is valid and tiny.
    let terms: u32 = 48 + 8 * q.to_integer().to_u32().unwrap_or(0);
    let mut sum = Rat::one();
    let mut term = Rat::one();
    for i in 1..=terms {
        term = term * q / Rat::from_integer(BigInt::from(i));
        sum += &term;
    }
    // Remainder R = sum_{i>terms} q^i/i! <= term_next / (1 - q/(terms+2)),
    // valid because q < terms + 2 by the choice of `terms`.
    let next = term.clone() * q / Rat::from_integer(BigInt::from(terms + 1));
    let ratio = q / Rat::from_integer(BigInt::from(terms + 2));
    assert!(ratio < Rat::one());
    let remainder = next / (Rat::one() - ratio);
    (sum.clone(), sum + remainder)
}

/// Rigorous enclosure of Euler's number.
pub fn e_enclosure() -> (Rat, Rat) {
    exp_enclosure(&Rat::one())
}

/// Uniform big integer in `[0, n)`. Panics if `n` is zero.
pub fn uniform_below<R: Rng>(rng: &mut R, n: &BigUint) -> BigUint {
    assert!(!n.is_zero(), "uniform_below requires a positive bound");
    rng.gen_biguint_below(n)
}

/// Exact draw from a finite distribution given by non-negative rational
/// weights. Returns the index of the selected weight.
pub fn pick_weighted<R: Rng>(rng: &mut R, weights: &[Rat]) -> usize {
    assert!(!weights.is_empty());
    let mut denom = BigUint::one();
    for w in weights {
        assert!(!w.is_negative(), "negative weight");
        denom = denom.lcm(&w.denom().magnitude().clone());
    }
    let scaled: Vec<BigUint> = weights
        .iter()
        .map(|w| {
            let m = &denom / w.denom().magnitude();
            w.numer().magnitude() * m
        })
        .collect();
    let total: BigUint = scaled.iter().sum();
    assert!(!total.is_zero(), "all weights are zero");
    let mut draw = uniform_below(rng, &total);
    for (i, w) in scaled.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    unreachable!("weighted draw fell through")
}

/// Exact Bernoulli draw with success probability `p`.
pub fn bernoulli<R: Rng>(rng: &mut R, p: &Probability) -> bool {
    if p.is_zero() {
        return false;
    }
    if p.is_one() {
        return true;
    }
    let q = p.complement();
    pick_weighted(rng, &[p.as_rat().clone(), q.into_rat()]) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_rational_forms() {
        assert_eq!(rat_from_str("3/4").unwrap(), rat(3, 4));
        assert_eq!(rat_from_str("0.01").unwrap(), rat(1, 100));
        assert_eq!(rat_from_str("2").unwrap(), rat(2, 1));
        assert_eq!(rat_from_str("-0.5").unwrap(), rat(-1, 2));
        assert!(rat_from_str("1/0").is_err());
    }

    #[test]
    fn e_enclosure_is_tight_and_correct() {
        let (lo, hi) = e_enclosure();
        assert!(lo < hi);
        assert!(rat_to_f64(&lo) > 2.718281828);
        assert!(rat_to_f64(&hi) < 2.718281829);
        let width = hi - lo;
        assert!(width < rat(1, 1_000_000_000));
    }

    #[test]
    fn exp_enclosure_brackets_known_values() {
        let (lo, hi) = exp_enclosure(&rat(1, 2));
        let v = 0.5f64.exp();
        assert!(rat_to_f64(&lo) <= v && v <= rat_to_f64(&hi));
        let (lo, hi) = exp_enclosure(&rat(5, 1));
        let v = 5f64.exp();
        assert!(rat_to_f64(&lo) <= v + 1e-9 && v <= rat_to_f64(&hi) + 1e-9);
    }

    #[test]
    fn weighted_draw_matches_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let weights = [rat(1, 2), rat(2, 5), rat(1, 10)];
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[pick_weighted(&mut rng, &weights)] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
        assert!((freqs[0] - 0.5).abs() < 0.02);
        assert!((freqs[1] - 0.4).abs() < 0.02);
        assert!((freqs[2] - 0.1).abs() < 0.02);
    }

    #[test]
    fn probability_range_is_enforced() {
        assert!(Probability::new(rat(3, 2)).is_err());
        assert!(Probability::new(rat(-1, 2)).is_err());
        let p = Probability::new(rat(2, 3)).unwrap();
        assert_eq!(p.complement().as_rat(), &rat(1, 3));
    }
}
