//! Scalar abstraction over `f64` and software extended precision.
//!
//! Every recursion, classifier and expansion in this crate is generic over
//! [`Real`]. Standard precision is plain `f64`; extended precision is
//! [`ExtReal`], a wrapper around `astro_float::BigFloat` with the working
//! precision carried in the value. New values are always derived from an
//! existing one (`lit`, `from_decimal`) so the precision propagates without
//! a global context.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign};

const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

/// Precision mode for model arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    /// Native `f64` (~15.9 significant decimal digits).
    #[default]
    Standard,
    /// Software floating point with the given number of significant decimal digits.
    Extended { digits: u32 },
}

impl Precision {
    /// Mantissa bits backing the requested decimal digit count.
    pub fn bits(&self) -> usize {
        match self {
            Precision::Standard => 53,
            Precision::Extended { digits } => {
                (*digits as f64 * std::f64::consts::LOG2_10).ceil() as usize + 16
            }
        }
    }

    /// Significant decimal digits resolvable at this precision.
    pub fn decimal_digits(&self) -> u32 {
        match self {
            Precision::Standard => 17,
            Precision::Extended { digits } => *digits,
        }
    }
}

/// Scalar type the model arithmetic is written against.
///
/// Implementors must provide field operations by value and by reference, the
/// handful of transcendentals the recursions need, and conversions. Values of
/// a given precision produce values of the same precision.
pub trait Real:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
{
    /// A constant with the same precision as `self`.
    fn lit(&self, v: f64) -> Self;

    /// Parse a decimal literal at the precision of `self`.
    /// Returns `None` if the string is not a valid decimal number.
    #[allow(clippy::wrong_self_convention)] // self supplies the precision
    fn from_decimal(&self, s: &str) -> Option<Self>;

    /// Nearest `f64` (for reporting; may overflow to ±inf or underflow to 0).
    fn to_f64(&self) -> f64;

    fn abs(&self) -> Self;
    fn ln(&self) -> Self;
    /// `ln(1 + x)` accurate for small `x`.
    fn ln_1p(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    /// Integer power by repeated squaring.
    fn powi(&self, n: i64) -> Self;

    fn is_finite(&self) -> bool;
    fn is_nan(&self) -> bool;

    /// Unit roundoff at the active precision (2^(1-p)).
    fn epsilon(&self) -> f64;

    /// Significant decimal digits of the active precision.
    fn decimal_digits(&self) -> u32;

    /// Scientific-notation string with `digits` significant digits.
    fn format_sig(&self, digits: usize) -> String;
}

impl Real for f64 {
    fn lit(&self, v: f64) -> Self {
        v
    }

    fn from_decimal(&self, s: &str) -> Option<Self> {
        s.trim().parse::<f64>().ok()
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }

    fn ln(&self) -> Self {
        f64::ln(*self)
    }

    fn ln_1p(&self) -> Self {
        f64::ln_1p(*self)
    }

    fn exp(&self) -> Self {
        f64::exp(*self)
    }

    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }

    fn powi(&self, n: i64) -> Self {
        f64::powi(*self, n as i32)
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn is_nan(&self) -> bool {
        f64::is_nan(*self)
    }

    fn epsilon(&self) -> f64 {
        f64::EPSILON
    }

    fn decimal_digits(&self) -> u32 {
        17
    }

    fn format_sig(&self, digits: usize) -> String {
        format!("{:.*e}", digits.saturating_sub(1), self)
    }
}

/// Extended-precision scalar backed by `astro_float::BigFloat`.
///
/// The working precision (mantissa bits) travels with the value; binary
/// operations use the larger of the two operand precisions.
#[derive(Clone)]
pub struct ExtReal {
    x: BigFloat,
    bits: usize,
}

impl ExtReal {
    /// A value from `f64` at `digits` significant decimal digits.
    pub fn with_digits(v: f64, digits: u32) -> Self {
        let bits = Precision::Extended { digits }.bits();
        ExtReal {
            x: BigFloat::from_f64(v, bits),
            bits,
        }
    }

    /// Parse a decimal string at `digits` significant decimal digits.
    pub fn parse_with_digits(s: &str, digits: u32) -> Option<Self> {
        let bits = Precision::Extended { digits }.bits();
        let x = CONSTS.with(|cc| BigFloat::parse(s, Radix::Dec, bits, RM, &mut cc.borrow_mut()));
        if x.is_nan() {
            None
        } else {
            Some(ExtReal { x, bits })
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    fn wrap(&self, x: BigFloat) -> ExtReal {
        ExtReal { x, bits: self.bits }
    }

    fn bin(
        &self,
        rhs: &ExtReal,
        f: impl FnOnce(&BigFloat, &BigFloat, usize) -> BigFloat,
    ) -> ExtReal {
        let bits = self.bits.max(rhs.bits);
        ExtReal {
            x: f(&self.x, &rhs.x, bits),
            bits,
        }
    }
}

impl fmt::Debug for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExtReal({}, {} bits)", self.x, self.bits)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.x)
    }
}

impl PartialEq for ExtReal {
    fn eq(&self, other: &Self) -> bool {
        self.x.cmp(&other.x) == Some(0)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.x.cmp(&other.x).map(|c| c.cmp(&0))
    }
}

macro_rules! ext_binop {
    ($trait:ident, $method:ident, $bf:ident) => {
        impl $trait for ExtReal {
            type Output = ExtReal;
            fn $method(self, rhs: ExtReal) -> ExtReal {
                self.bin(&rhs, |a, b, p| a.$bf(b, p, RM))
            }
        }
        impl<'a> $trait<&'a ExtReal> for ExtReal {
            type Output = ExtReal;
            fn $method(self, rhs: &'a ExtReal) -> ExtReal {
                self.bin(rhs, |a, b, p| a.$bf(b, p, RM))
            }
        }
        impl<'a> $trait<ExtReal> for &'a ExtReal {
            type Output = ExtReal;
            fn $method(self, rhs: ExtReal) -> ExtReal {
                self.bin(&rhs, |a, b, p| a.$bf(b, p, RM))
            }
        }
        impl<'a, 'b> $trait<&'b ExtReal> for &'a ExtReal {
            type Output = ExtReal;
            fn $method(self, rhs: &'b ExtReal) -> ExtReal {
                self.bin(rhs, |a, b, p| a.$bf(b, p, RM))
            }
        }
    };
}

ext_binop!(Add, add, add);
ext_binop!(Sub, sub, sub);
ext_binop!(Mul, mul, mul);
ext_binop!(Div, div, div);

impl Neg for ExtReal {
    type Output = ExtReal;
    fn neg(self) -> ExtReal {
        let mut x = self.x.clone();
        x.inv_sign();
        ExtReal { x, bits: self.bits }
    }
}

impl Neg for &ExtReal {
    type Output = ExtReal;
    fn neg(self) -> ExtReal {
        let mut x = self.x.clone();
        x.inv_sign();
        self.wrap(x)
    }
}

impl Real for ExtReal {
    fn lit(&self, v: f64) -> Self {
        ExtReal {
            x: BigFloat::from_f64(v, self.bits),
            bits: self.bits,
        }
    }

    fn from_decimal(&self, s: &str) -> Option<Self> {
        let x =
            CONSTS.with(|cc| BigFloat::parse(s, Radix::Dec, self.bits, RM, &mut cc.borrow_mut()));
        if x.is_nan() {
            None
        } else {
            Some(self.wrap(x))
        }
    }

    fn to_f64(&self) -> f64 {
        if self.x.is_nan() {
            return f64::NAN;
        }
        if self.x.is_inf_pos() {
            return f64::INFINITY;
        }
        if self.x.is_inf_neg() {
            return f64::NEG_INFINITY;
        }
        if self.x.is_zero() {
            return 0.0;
        }
        // value = sign * 0.m * 2^e with the mantissa MSB set
        let (words, _n, sign, e, _inexact) = match self.x.as_raw_parts() {
            Some(parts) => parts,
            None => return f64::NAN,
        };
        let hi = *words.last().unwrap_or(&0);
        let lo = if words.len() >= 2 {
            words[words.len() - 2]
        } else {
            0
        };
        let frac = (hi as f64) * (2f64).powi(-64) + (lo as f64) * (2f64).powi(-128);
        let mag = if e > 1100 {
            f64::INFINITY
        } else if e < -1120 {
            0.0
        } else {
            frac * f64::exp2(e as f64)
        };
        match sign {
            Sign::Pos => mag,
            Sign::Neg => -mag,
        }
    }

    fn abs(&self) -> Self {
        let mut x = self.x.clone();
        x.set_sign(Sign::Pos);
        self.wrap(x)
    }

    fn ln(&self) -> Self {
        let x = CONSTS.with(|cc| self.x.ln(self.bits, RM, &mut cc.borrow_mut()));
        self.wrap(x)
    }

    fn ln_1p(&self) -> Self {
        // For |x| below ~2^(-p/2) a three-term series is already exact at
        // precision p; otherwise evaluate ln(1+x) with guard bits.
        let one = BigFloat::from_f64(1.0, self.bits);
        let small = self.abs().to_f64() < (0.5f64).powi((self.bits / 2) as i32);
        if small {
            // x - x^2/2 + x^3/3
            let guard = self.bits + 64;
            let x = &self.x;
            let x2 = x.mul(x, guard, RM);
            let x3 = x2.mul(x, guard, RM);
            let half = BigFloat::from_f64(0.5, guard);
            let third =
                BigFloat::from_f64(1.0, guard).div(&BigFloat::from_f64(3.0, guard), guard, RM);
            let mut res = x.sub(&x2.mul(&half, guard, RM), guard, RM);
            res = res.add(&x3.mul(&third, guard, RM), self.bits, RM);
            self.wrap(res)
        } else {
            let guard = self.bits + 64;
            let y = one.add(&self.x, guard, RM);
            let l = CONSTS.with(|cc| y.ln(guard, RM, &mut cc.borrow_mut()));
            let mut l2 = l;
            if l2.set_precision(self.bits, RM).is_err() {
                return self.wrap(BigFloat::nan(None));
            }
            self.wrap(l2)
        }
    }

    fn exp(&self) -> Self {
        let x = CONSTS.with(|cc| self.x.exp(self.bits, RM, &mut cc.borrow_mut()));
        self.wrap(x)
    }

    fn sqrt(&self) -> Self {
        self.wrap(self.x.sqrt(self.bits, RM))
    }

    fn powi(&self, n: i64) -> Self {
        if n == 0 {
            return self.lit(1.0);
        }
        let neg = n < 0;
        let mut e = n.unsigned_abs();
        let mut base = self.clone();
        let mut acc = self.lit(1.0);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * &base;
            }
            base = base.clone() * &base;
            e >>= 1;
        }
        if neg {
            self.lit(1.0) / acc
        } else {
            acc
        }
    }

    fn is_finite(&self) -> bool {
        !self.x.is_nan() && !self.x.is_inf()
    }

    fn is_nan(&self) -> bool {
        self.x.is_nan()
    }

    fn epsilon(&self) -> f64 {
        (2f64).powi(1 - self.bits as i32)
    }

    fn decimal_digits(&self) -> u32 {
        ((self.bits.saturating_sub(16)) as f64 / std::f64::consts::LOG2_10).floor() as u32
    }

    fn format_sig(&self, digits: usize) -> String {
        if self.x.is_nan() {
            return "nan".into();
        }
        if self.x.is_inf_pos() {
            return "inf".into();
        }
        if self.x.is_inf_neg() {
            return "-inf".into();
        }
        if self.x.is_zero() {
            return "0.0".into();
        }
        let conv = CONSTS.with(|cc| {
            self.x
                .convert_to_radix(Radix::Dec, RM, &mut cc.borrow_mut())
        });
        let (sign, mut m, e) = match conv {
            Ok(t) => t,
            Err(_) => return "nan".into(),
        };
        // value = 0.m * 10^e; round the digit string to `digits` significant digits
        while m.len() > 1 && *m.last().unwrap() == 0 && m.len() > digits {
            m.pop();
        }
        let mut exp10 = e as i64 - 1; // scientific exponent for d.ddd form
        if m.len() > digits {
            let round_up = m[digits] >= 5;
            m.truncate(digits);
            if round_up {
                let mut i = digits;
                loop {
                    if i == 0 {
                        m.insert(0, 1);
                        m.truncate(digits);
                        exp10 += 1;
                        break;
                    }
                    i -= 1;
                    if m[i] == 9 {
                        m[i] = 0;
                    } else {
                        m[i] += 1;
                        break;
                    }
                }
            }
        }
        let mut s = String::new();
        if sign == Sign::Neg {
            s.push('-');
        }
        s.push((b'0' + m[0]) as char);
        s.push('.');
        if m.len() == 1 {
            s.push('0');
        } else {
            for d in &m[1..] {
                s.push((b'0' + d) as char);
            }
        }
        s.push('e');
        s.push_str(&exp10.to_string());
        s
    }
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp<R: Real>(a: &R, b: &R) -> R {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if !lo.is_finite() {
        return hi.clone();
    }
    let d = lo.clone() - hi;
    hi.clone() + d.exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext(v: f64) -> ExtReal {
        ExtReal::with_digits(v, 50)
    }

    #[test]
    fn f64_roundtrip_and_ops() {
        let x = ext(0.8);
        assert!((x.to_f64() - 0.8).abs() < 1e-16);
        let y = x.lit(0.25);
        assert_eq!((x.clone() + &y).to_f64(), 1.05);
        assert_eq!((x.clone() * &y).to_f64(), 0.2);
        assert_eq!((-x.clone()).to_f64(), -0.8);
    }

    #[test]
    fn ln_exp_inverse() {
        let x = ext(0.37);
        let r = x.ln().exp();
        let err = (r - &x).abs();
        assert!(err.to_f64() < 1e-48, "err {}", err);
    }

    #[test]
    fn ln_1p_small_argument() {
        let x = ext(1e-40);
        let l = x.ln_1p();
        // ln(1+x) = x - x^2/2 + ...; relative error of the leading term ~ x/2
        let rel = ((l.clone() - &x) / &x).abs().to_f64();
        assert!(rel < 1e-39, "rel {rel}");

        let f: f64 = 1e-40;
        assert_eq!(Real::ln_1p(&f), f64::ln_1p(1e-40));
    }

    #[test]
    fn powi_matches_repeated_product() {
        let g = ext(0.45289076384339);
        let direct = g.powi(80);
        let mut acc = g.lit(1.0);
        for _ in 0..80 {
            acc = acc * &g;
        }
        let rel = ((direct - &acc) / &acc).abs().to_f64();
        assert!(rel < 1e-45);
        let inv = g.powi(-3);
        let rel2 = ((inv * g.powi(3)) - g.lit(1.0)).abs().to_f64();
        assert!(rel2 < 1e-45);
    }

    #[test]
    fn parse_decimal_beyond_f64() {
        let x = ExtReal::parse_with_digits("0.866975097870454192161560058594", 50).unwrap();
        let lo = ext(0.866_975_097_870_454_2);
        let d = (x.clone() - &lo).abs().to_f64();
        assert!(d < 1e-16);
        assert!(d > 0.0 || x != lo);
        assert!(ExtReal::parse_with_digits("not a number", 50).is_none());
    }

    #[test]
    fn format_sig_digit_control() {
        let x = ext(2.0) / ext(3.0);
        let s = x.format_sig(30);
        assert_eq!(s, "6.66666666666666666666666666667e-1");
        let f: f64 = 1.0 / 3.0;
        assert_eq!(f.format_sig(17), "3.3333333333333331e-1");
    }

    #[test]
    fn to_f64_extreme_exponents() {
        let tiny = ExtReal::parse_with_digits("1e-5000", 50).unwrap();
        assert_eq!(tiny.to_f64(), 0.0);
        let huge = ExtReal::parse_with_digits("1e5000", 50).unwrap();
        assert_eq!(huge.to_f64(), f64::INFINITY);
        let neg = ExtReal::parse_with_digits("-2.5", 50).unwrap();
        assert_eq!(neg.to_f64(), -2.5);
    }

    #[test]
    fn log_add_exp_basic() {
        let a: f64 = -700.0;
        let b: f64 = -700.0 + (2f64).ln();
        let r = log_add_exp(&a, &b);
        // exp(a) + exp(b) = 3*exp(-700)
        assert!((r - (-700.0 + 3f64.ln())).abs() < 1e-12);
    }
}
