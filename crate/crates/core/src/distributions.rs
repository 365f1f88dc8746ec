//! Mass vectors over bins or leaves, and the Easy/Hard random instances used
//! by the descent experiments.
//!
//! Random generation uses `Xoshiro256PlusPlus` seeded through
//! `SeedableRng::seed_from_u64`. Stream layout for a pair: the `n` raw entries
//! of `p` are drawn first, then the `n` raw entries of `q`, each as one
//! `f64` in `[0, 1)`. The Hard setting zeroes entries after drawing, so both
//! settings consume exactly `2n` values for the same seed.

use std::ops::Deref;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by the distance kernels.
pub const UNIT_MASS_TOL: f64 = 1e-9;
/// Tolerance on `|sum(p) - sum(q)|` accepted by the distance kernels.
pub const MASS_MISMATCH_TOL: f64 = 1e-9;

/// Non-negative mass vector with at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    values: Vec<f64>,
}

impl Distribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewBins(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry { index });
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        Ok(Self { values })
    }

    /// Builds a distribution and normalizes it to unit mass.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        normalize_l1(&Self::new(values)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Parses the distribution text format: one decimal value per line,
    /// blank lines and `#` comments ignored. The result is not normalized.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let value = line.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("'{line}': {e}"),
            })?;
            values.push(value);
        }
        Self::new(values)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}

impl Deref for Distribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => line[..pos].trim(),
        None => line.trim(),
    }
}

/// Divides every entry by the total mass.
pub fn normalize_l1(d: &Distribution) -> Result<Distribution> {
    if let Some((index, &value)) = d.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeEntry { index, value });
    }
    let mass = d.mass();
    if mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    // Sums within rounding of 1 are left untouched so that normalization is
    // exactly idempotent.
    if (mass - 1.0).abs() <= d.len() as f64 * f64::EPSILON {
        return Ok(d.clone());
    }
    let values = d.values.iter().map(|v| v / mass).collect();
    Ok(Distribution { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Every bin drawn i.i.d. uniform(0, 1).
    Easy,
    /// Right half of `p` and left half of `q` zeroed: all mass must cross the midpoint.
    Hard,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Setting::Easy),
            "hard" => Ok(Setting::Hard),
            other => Err(Error::BadConfig(format!("unknown setting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomInstanceSpec {
    pub n_bins: usize,
    pub setting: Setting,
    pub seed: u64,
}

/// Draws a deterministic `(p, q)` pair, both unit mass.
pub fn generate_pair(spec: &RandomInstanceSpec) -> Result<(Distribution, Distribution)> {
    let n = spec.n_bins;
    if n < 2 {
        return Err(Error::TooFewBins(n));
    }
    if spec.setting == Setting::Hard && !n.is_multiple_of(2) {
        return Err(Error::OddBins(n));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    if spec.setting == Setting::Hard {
        p[n / 2..].iter_mut().for_each(|v| *v = 0.0);
        q[..n / 2].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok((Distribution::normalized(p)?, Distribution::normalized(q)?))
}

/// Checks that `p` and `q` are a valid input pair for the closed-form and
/// oracle kernels: equal lengths, finite, unit mass, matching mass.
pub(crate) fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.len() < 2 {
        return Err(Error::TooFewBins(p.len()));
    }
    for v in [p, q] {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
    }
    let p_mass: f64 = p.iter().sum();
    let q_mass: f64 = q.iter().sum();
    if (p_mass - q_mass).abs() > MASS_MISMATCH_TOL {
        return Err(Error::MassMismatch { p_mass, q_mass });
    }
    if (p_mass - 1.0).abs() > UNIT_MASS_TOL {
        return Err(Error::NotNormalized(p_mass));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_l1(&dist(&[1.0, 1.0, 1.0, 1.0])).unwrap().values(),
            &[0.25; 4]
        );
        let already = dist(&[0.2, 0.4, 0.2, 0.2]);
        assert_eq!(normalize_l1(&already).unwrap(), already);
        assert_eq!(
            normalize_l1(&dist(&[2.0, 0.0, 0.0, 6.0])).unwrap().values(),
            &[0.25, 0.0, 0.0, 0.75]
        );
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        assert_eq!(normalize_l1(&dist(&[0.0, 0.0])), Err(Error::ZeroMass));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Distribution::new(vec![0.5, -0.1]),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert_eq!(Distribution::new(vec![1.0]), Err(Error::TooFewBins(1)));
        assert!(matches!(
            Distribution::new(vec![f64::NAN, 1.0]),
            Err(Error::NonFiniteEntry { index: 0 })
        ));
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let d = Distribution::parse("# header\n0.2\n\n0.4 # inline\n0.2\n0.2\n").unwrap();
        assert_eq!(d.values(), &[0.2, 0.4, 0.2, 0.2]);
        assert!(matches!(
            Distribution::parse("0.1\nabc\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = RandomInstanceSpec {
            n_bins: 64,
            setting: Setting::Easy,
            seed: 7,
        };
        assert_eq!(generate_pair(&spec).unwrap(), generate_pair(&spec).unwrap());
    }

    #[test]
    fn hard_setting_has_disjoint_halves() {
        let spec = RandomInstanceSpec {
            n_bins: 64,
            setting: Setting::Hard,
            seed: 1,
        };
        let (p, q) = generate_pair(&spec).unwrap();
        assert!(p[32..].iter().all(|&v| v == 0.0));
        assert!(q[..32].iter().all(|&v| v == 0.0));
        assert!((p.mass() - 1.0).abs() <= 1e-12);
        assert!((q.mass() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn hard_setting_needs_even_bins() {
        let spec = RandomInstanceSpec {
            n_bins: 5,
            setting: Setting::Hard,
            seed: 0,
        };
        assert_eq!(generate_pair(&spec), Err(Error::OddBins(5)));
    }

    #[test]
    fn check_pair_errors() {
        assert!(matches!(
            check_pair(&[0.5, 0.5], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            check_pair(&[0.5, 0.5], &[0.5, 0.6]),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            check_pair(&[1.0, 1.0], &[1.0, 1.0]),
            Err(Error::NotNormalized(_))
        ));
        assert!(check_pair(&[0.5, 0.5], &[0.25, 0.75]).is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn generated_pairs_are_valid(seed in any::<u64>(), half in 1usize..40, hard in any::<bool>()) {
                let spec = RandomInstanceSpec {
                    n_bins: 2 * half,
                    setting: if hard { Setting::Hard } else { Setting::Easy },
                    seed,
                };
                let (p, q) = generate_pair(&spec).unwrap();
                for d in [&p, &q] {
                    prop_assert!(d.iter().all(|&v| v >= 0.0 && v.is_finite()));
                    prop_assert!((d.mass() - 1.0).abs() <= 1e-12);
                }
            }

            #[test]
            fn normalize_is_idempotent(v in proptest::collection::vec(0.0f64..10.0, 2..50)) {
                prop_assume!(v.iter().sum::<f64>() > 0.0);
                let once = normalize_l1(&Distribution::new(v).unwrap()).unwrap();
                let twice = normalize_l1(&once).unwrap();
                prop_assert!((once.mass() - 1.0).abs() <= 1e-12);
                prop_assert_eq!(once, twice);
            }
        }
    }
}
