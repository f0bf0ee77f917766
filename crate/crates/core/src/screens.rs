//! Tender-based screens: distributional statistics of the bids submitted in
//! one tender.
//!
//! With sorted bids `b(1) <= ... <= b(n)`, mean `m` and sample standard
//! deviation `s` (divisor `n - 1`):
//!
//! | screen    | definition                                     | min n |
//! |-----------|------------------------------------------------|-------|
//! | `cv`      | `100 * s / m`                                  | 2     |
//! | `spread`  | `(b(n) - b(1)) / b(1)`                         | 2     |
//! | `diffp`   | `(b(2) - b(1)) / b(1)`                         | 2     |
//! | `absdiff` | `b(2) - b(1)`                                  | 2     |
//! | `skew`    | adjusted Fisher-Pearson sample skewness        | 3     |
//! | `rd`      | `(b(2) - b(1)) / s(b(2..n))`                   | 3     |
//! | `altrd`   | `(b(2) - b(1)) / s`                            | 2     |
//! | `normd`   | `(b(2) - b(1)) / (b(n) - b(1))`                | 3     |
//! | `ks`      | KS distance to uniform on `[b(1), b(n)]`       | 2     |
//!
//! A zero denominator yields 0 (1 for `ks`) and sets the screen's degenerate
//! flag.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScreenError {
    #[error("screen `{screen}` needs at least {needed} bids, got {got}")]
    Arity {
        screen: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("bids must be finite and strictly positive")]
    InvalidBid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Screen {
    Cv,
    Spread,
    Diffp,
    Absdiff,
    Skew,
    Rd,
    Altrd,
    Normd,
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScreenCategory {
    Variance,
    Asymmetry,
    Uniformity,
}

impl Screen {
    /// All screens in feature order.
    pub const ALL: [Screen; 9] = [
        Screen::Cv,
        Screen::Spread,
        Screen::Diffp,
        Screen::Absdiff,
        Screen::Skew,
        Screen::Rd,
        Screen::Altrd,
        Screen::Normd,
        Screen::Ks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Screen::Cv => "cv",
            Screen::Spread => "spread",
            Screen::Diffp => "diffp",
            Screen::Absdiff => "absdiff",
            Screen::Skew => "skew",
            Screen::Rd => "rd",
            Screen::Altrd => "altrd",
            Screen::Normd => "normd",
            Screen::Ks => "ks",
        }
    }

    pub fn from_name(name: &str) -> Option<Screen> {
        Screen::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn category(self) -> ScreenCategory {
        match self {
            Screen::Cv | Screen::Spread => ScreenCategory::Variance,
            Screen::Ks => ScreenCategory::Uniformity,
            _ => ScreenCategory::Asymmetry,
        }
    }

    pub fn min_bids(self) -> usize {
        match self {
            Screen::Skew | Screen::Rd | Screen::Normd => 3,
            _ => 2,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Evaluates this screen on bids in any order.
    pub fn evaluate(self, bids: &[f64]) -> Result<ScreenValue, ScreenError> {
        let sorted = SortedBids::new(bids)?;
        sorted.screen(self)
    }
}

/// A screen value and whether the zero-denominator convention applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenValue {
    pub value: f64,
    pub degenerate: bool,
}

impl ScreenValue {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Self::ok(num / den)
        } else {
            Self {
                value: 0.0,
                degenerate: true,
            }
        }
    }
}

/// The nine tender-based screens for one tender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenVector {
    values: [f64; 9],
    degenerate: [bool; 9],
}

impl ScreenVector {
    pub fn get(&self, screen: Screen) -> f64 {
        self.values[screen.index()]
    }

    pub fn is_degenerate(&self, screen: Screen) -> bool {
        self.degenerate[screen.index()]
    }

    pub fn values(&self) -> &[f64; 9] {
        &self.values
    }

    pub fn cv(&self) -> f64 {
        self.get(Screen::Cv)
    }
    pub fn spread(&self) -> f64 {
        self.get(Screen::Spread)
    }
    pub fn diffp(&self) -> f64 {
        self.get(Screen::Diffp)
    }
    pub fn absdiff(&self) -> f64 {
        self.get(Screen::Absdiff)
    }
    pub fn skew(&self) -> f64 {
        self.get(Screen::Skew)
    }
    pub fn rd(&self) -> f64 {
        self.get(Screen::Rd)
    }
    pub fn altrd(&self) -> f64 {
        self.get(Screen::Altrd)
    }
    pub fn normd(&self) -> f64 {
        self.get(Screen::Normd)
    }
    pub fn ks(&self) -> f64 {
        self.get(Screen::Ks)
    }
}

/// Bids sorted ascending, validated positive and finite.
struct SortedBids {
    b: Vec<f64>,
}

impl SortedBids {
    fn new(bids: &[f64]) -> Result<Self, ScreenError> {
        if bids.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(ScreenError::InvalidBid);
        }
        let mut b = bids.to_vec();
        b.sort_unstable_by(f64::total_cmp);
        Ok(Self { b })
    }

    fn n(&self) -> usize {
        self.b.len()
    }

    fn lowest_gap(&self) -> f64 {
        self.b[1] - self.b[0]
    }

    fn range(&self) -> f64 {
        self.b[self.n() - 1] - self.b[0]
    }

    fn screen(&self, screen: Screen) -> Result<ScreenValue, ScreenError> {
        if self.n() < screen.min_bids() {
            return Err(ScreenError::Arity {
                screen: screen.name(),
                needed: screen.min_bids(),
                got: self.n(),
            });
        }
        let b = &self.b;
        Ok(match screen {
            Screen::Cv => ScreenValue::ok(100.0 * sample_sd(b) / mean(b)),
            Screen::Spread => ScreenValue::ok(self.range() / b[0]),
            Screen::Diffp => ScreenValue::ok(self.lowest_gap() / b[0]),
            Screen::Absdiff => ScreenValue::ok(self.lowest_gap()),
            Screen::Skew => skewness(b),
            Screen::Rd => ScreenValue::ratio(self.lowest_gap(), sample_sd(&b[1..])),
            Screen::Altrd => ScreenValue::ratio(self.lowest_gap(), sample_sd(b)),
            Screen::Normd => ScreenValue::ratio(self.lowest_gap(), self.range()),
            Screen::Ks => ks_uniform(b),
        })
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; exactly 0 when all values coincide.
fn sample_sd(x: &[f64]) -> f64 {
    if x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

fn skewness(x: &[f64]) -> ScreenValue {
    if x.iter().all(|&v| v == x[0]) {
        return ScreenValue::ratio(0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = mean(x);
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in x {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let g1 = m3 / m2.powf(1.5);
    ScreenValue::ok(g1 * (n * (n - 1.0)).sqrt() / (n - 2.0))
}

/// One-sample Kolmogorov-Smirnov distance between the empirical CDF of
/// sorted `b` and the uniform CDF on `[b(1), b(n)]`.
fn ks_uniform(b: &[f64]) -> ScreenValue {
    let n = b.len();
    let (lo, hi) = (b[0], b[n - 1]);
    if hi <= lo {
        return ScreenValue {
            value: 1.0,
            degenerate: true,
        };
    }
    let nf = n as f64;
    let d = b.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = (x - lo) / (hi - lo);
        let above = (i + 1) as f64 / nf - f;
        let below = f - i as f64 / nf;
        acc.max(above.abs()).max(below.abs())
    });
    ScreenValue::ok(d)
}

/// `(cv, spread)`.
pub fn variance_screens(bids: &[f64]) -> Result<(ScreenValue, ScreenValue), ScreenError> {
    let s = SortedBids::new(bids)?;
    Ok((s.screen(Screen::Cv)?, s.screen(Screen::Spread)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymmetryScreens {
    pub diffp: ScreenValue,
    pub absdiff: ScreenValue,
    pub skew: ScreenValue,
    pub rd: ScreenValue,
    pub altrd: ScreenValue,
    pub normd: ScreenValue,
}

/// All six asymmetry screens; needs at least three bids.
pub fn asymmetry_screens(bids: &[f64]) -> Result<AsymmetryScreens, ScreenError> {
    let s = SortedBids::new(bids)?;
    Ok(AsymmetryScreens {
        diffp: s.screen(Screen::Diffp)?,
        absdiff: s.screen(Screen::Absdiff)?,
        skew: s.screen(Screen::Skew)?,
        rd: s.screen(Screen::Rd)?,
        altrd: s.screen(Screen::Altrd)?,
        normd: s.screen(Screen::Normd)?,
    })
}

pub fn uniformity_screen(bids: &[f64]) -> Result<ScreenValue, ScreenError> {
    SortedBids::new(bids)?.screen(Screen::Ks)
}

/// All nine screens for one tender's bids (at least three).
pub fn screen_vector(bids: &[f64]) -> Result<ScreenVector, ScreenError> {
    let sorted = SortedBids::new(bids)?;
    let mut values = [0.0; 9];
    let mut degenerate = [false; 9];
    for screen in Screen::ALL {
        let v = sorted.screen(screen)?;
        values[screen.index()] = v.value;
        degenerate[screen.index()] = v.degenerate;
    }
    Ok(ScreenVector { values, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn variance_example() {
        let (cv, spread) = variance_screens(&[100.0, 101.0, 102.0]).unwrap();
        assert!(close(cv.value, 100.0 / 101.0, 1e-12));
        assert!(close(spread.value, 0.02, 1e-15));
    }

    #[test]
    fn asymmetry_example() {
        let a = asymmetry_screens(&[100.0, 101.0, 102.0]).unwrap();
        assert!(close(a.diffp.value, 0.01, 1e-15));
        assert_eq!(a.absdiff.value, 1.0);
        assert_eq!(a.skew.value, 0.0);
        assert!(close(a.rd.value, 2f64.sqrt(), 1e-12));
        assert!(close(a.altrd.value, 1.0, 1e-12));
        assert!(close(a.normd.value, 0.5, 1e-15));

        let clustered = asymmetry_screens(&[100.0, 118.0, 120.0]).unwrap();
        assert!(close(clustered.normd.value, 0.9, 1e-15));
    }

    #[test]
    fn ks_examples() {
        assert!(close(uniformity_screen(&[100.0, 110.0, 120.0]).unwrap().value, 1.0 / 3.0, 1e-15));
        assert!(close(
            uniformity_screen(&[100.0, 119.0, 120.0]).unwrap().value,
            0.95 - 1.0 / 3.0,
            1e-12
        ));
    }

    #[test]
    fn constant_bids() {
        for c in [0.1, 3.0, 1234.5] {
            let v = screen_vector(&[c, c, c]).unwrap();
            for s in [Screen::Cv, Screen::Spread, Screen::Diffp, Screen::Absdiff] {
                assert_eq!(v.get(s), 0.0);
                assert!(!v.is_degenerate(s));
            }
            for s in [Screen::Skew, Screen::Rd, Screen::Altrd, Screen::Normd] {
                assert_eq!(v.get(s), 0.0);
                assert!(v.is_degenerate(s), "{s:?}");
            }
            assert_eq!(v.ks(), 1.0);
            assert!(v.is_degenerate(Screen::Ks));
        }
    }

    #[test]
    fn tied_losing_bids_flag_rd_only() {
        let v = screen_vector(&[100.0, 110.0, 110.0]).unwrap();
        assert!(v.is_degenerate(Screen::Rd));
        assert_eq!(v.rd(), 0.0);
        assert!(!v.is_degenerate(Screen::Altrd));
        assert_eq!(v.normd(), 1.0);
    }

    #[test]
    fn order_and_scale() {
        let a = screen_vector(&[100.0, 101.0, 102.0]).unwrap();
        assert_eq!(a, screen_vector(&[102.0, 100.0, 101.0]).unwrap());
        let b = screen_vector(&[700.0, 707.0, 714.0]).unwrap();
        assert!(close(a.cv(), b.cv(), 1e-12));
        assert!(close(a.spread(), b.spread(), 1e-12));
        assert!(close(b.absdiff(), 7.0, 1e-12));
    }

    #[test]
    fn four_bids_are_supported() {
        let v = screen_vector(&[10.0, 12.0, 13.0, 20.0]).unwrap();
        assert!(v.values().iter().all(|x| x.is_finite()));
        assert!(close(v.normd(), 0.2, 1e-15));
    }

    #[test]
    fn arity_errors() {
        assert!(matches!(
            screen_vector(&[1.0, 2.0]),
            Err(ScreenError::Arity { needed: 3, got: 2, .. })
        ));
        assert!(variance_screens(&[5.0]).is_err());
        assert!(uniformity_screen(&[5.0]).is_err());
        assert!(Screen::Altrd.evaluate(&[1.0, 2.0]).is_ok());
        assert!(Screen::Rd.evaluate(&[1.0, 2.0]).is_err());
        assert_eq!(screen_vector(&[1.0, -2.0, 3.0]), Err(ScreenError::InvalidBid));
    }

    #[test]
    fn names_round_trip() {
        for s in Screen::ALL {
            assert_eq!(Screen::from_name(s.name()), Some(s));
        }
        assert_eq!(
            Screen::ALL
                .iter()
                .filter(|s| s.category() == ScreenCategory::Asymmetry)
                .count(),
            6
        );
    }
}
