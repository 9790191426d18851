//! Double-double arithmetic: an unevaluated sum `hi + lo` of two f64 values
//! carrying about 106 significant bits.
//!
//! Addition, multiplication, division, square root, `exp`, `ln` and `tanh`
//! are accurate to roughly 1e-30 relative. The remaining [`Float`] methods
//! round through f64 and exist only to satisfy the trait.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct F64x2 {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: F64x2 = F64x2 { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

impl F64x2 {
    pub const fn from_f64(x: f64) -> Self {
        F64x2 { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    /// Nearest f64.
    pub fn as_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Normalizes an arbitrary pair.
    pub fn from_pair(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        F64x2 { hi, lo }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return F64x2::from_f64(hi);
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        F64x2 { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    fn exp_dd(self) -> Self {
        if !self.hi.is_finite() {
            return F64x2::from_f64(self.hi.exp());
        }
        if self.hi > 709.0 {
            return F64x2::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return F64x2::zero();
        }
        // exp(x) = 2^k exp(r)^(2^8) with |r| <= ln2 / 2^9
        const SQUARINGS: i32 = 8;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).mul_f64(2f64.powi(-SQUARINGS));
        let mut sum = F64x2::zero();
        let mut term = F64x2::one();
        for n in 1..=12 {
            term = (term * r) / F64x2::from_f64(n as f64);
            sum = sum + term;
        }
        // track exp(r) - 1 through the squarings to keep its low bits
        for _ in 0..SQUARINGS {
            sum = sum * (sum + F64x2::from_f64(2.0));
        }
        let y = sum + F64x2::one();
        let half = (k / 2.0).trunc();
        y.mul_f64(2f64.powi(half as i32)).mul_f64(2f64.powi((k - half) as i32))
    }

    fn ln_dd(self) -> Self {
        if !(self.hi > 0.0) || self.hi.is_infinite() {
            return F64x2::from_f64(self.hi.ln());
        }
        let mut y = F64x2::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp_dd() - F64x2::one();
        }
        y
    }

    fn tanh_dd(self) -> Self {
        let a = self.abs();
        let y = if a.hi > 40.0 {
            F64x2::one()
        } else if a.hi < 1e-3 {
            // series avoids cancellation in 1 - exp(-2a)
            let a2 = a * a;
            let mut sum = a;
            let mut pow = a;
            let coef = [(-1.0, 3.0), (2.0, 15.0), (-17.0, 315.0), (62.0, 2835.0), (-1382.0, 155_925.0)];
            for (num, den) in coef {
                pow = pow * a2;
                sum = sum + pow * F64x2::from_f64(num) / F64x2::from_f64(den);
            }
            sum
        } else {
            let t = (a.mul_f64(-2.0)).exp_dd();
            (F64x2::one() - t) / (F64x2::one() + t)
        };
        if self.hi < 0.0 {
            -y
        } else {
            y
        }
    }

    fn sqrt_dd(self) -> Self {
        if !(self.hi > 0.0) {
            return F64x2::from_f64(self.hi.sqrt());
        }
        let x = self.hi.sqrt();
        let (p, e) = two_prod(x, x);
        let rem = (self - F64x2 { hi: p, lo: e }).hi;
        Self::renorm(x, rem / (2.0 * x))
    }
}

impl From<f64> for F64x2 {
    fn from(x: f64) -> Self {
        F64x2::from_f64(x)
    }
}

impl PartialOrd for F64x2 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl fmt::Display for F64x2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl Neg for F64x2 {
    type Output = Self;

    fn neg(self) -> Self {
        F64x2 { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for F64x2 {
    type Output = Self;

    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return F64x2::from_f64(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Sub for F64x2 {
    type Output = Self;

    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for F64x2 {
    type Output = Self;

    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        Self::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for F64x2 {
    type Output = Self;

    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() {
            return F64x2::from_f64(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        F64x2::renorm(q1, q2) + F64x2::from_f64(q3)
    }
}

impl Rem for F64x2 {
    type Output = Self;

    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

impl Zero for F64x2 {
    fn zero() -> Self {
        F64x2::from_f64(0.0)
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for F64x2 {
    fn one() -> Self {
        F64x2::from_f64(1.0)
    }
}

impl Num for F64x2 {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(F64x2::from_f64)
    }
}

impl ToPrimitive for F64x2 {
    fn to_i64(&self) -> Option<i64> {
        self.hi.to_i64()
    }

    fn to_u64(&self) -> Option<u64> {
        self.hi.to_u64()
    }

    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for F64x2 {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(F64x2::from_pair(hi, (n - hi as i64) as f64))
    }

    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        Some(F64x2::from_pair(hi, (n as i128 - hi as i128) as f64))
    }

    fn from_f64(x: f64) -> Option<Self> {
        Some(F64x2::from_f64(x))
    }
}

impl NumCast for F64x2 {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(F64x2::from_f64)
    }
}

macro_rules! through_f64 {
    ($($name:ident),*) => {
        $(fn $name(self) -> Self {
            F64x2::from_f64(self.as_f64().$name())
        })*
    };
}

impl Float for F64x2 {
    fn nan() -> Self {
        F64x2::from_f64(f64::NAN)
    }

    fn infinity() -> Self {
        F64x2::from_f64(f64::INFINITY)
    }

    fn neg_infinity() -> Self {
        F64x2::from_f64(f64::NEG_INFINITY)
    }

    fn neg_zero() -> Self {
        F64x2::from_f64(-0.0)
    }

    fn min_value() -> Self {
        F64x2::from_f64(f64::MIN)
    }

    fn min_positive_value() -> Self {
        F64x2::from_f64(f64::MIN_POSITIVE)
    }

    fn max_value() -> Self {
        F64x2::from_f64(f64::MAX)
    }

    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }

    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }

    fn classify(self) -> FpCategory {
        self.hi.classify()
    }

    fn floor(self) -> Self {
        let f = self.hi.floor();
        if f == self.hi {
            F64x2::renorm(f, self.lo.floor())
        } else {
            F64x2::from_f64(f)
        }
    }

    fn ceil(self) -> Self {
        -(-self).floor()
    }

    fn round(self) -> Self {
        (self + F64x2::from_f64(0.5)).floor()
    }

    fn trunc(self) -> Self {
        if self.hi < 0.0 {
            self.ceil()
        } else {
            self.floor()
        }
    }

    fn fract(self) -> Self {
        self - self.trunc()
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn signum(self) -> Self {
        F64x2::from_f64(self.hi.signum())
    }

    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }

    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        F64x2::one() / self
    }

    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = F64x2::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    fn powf(self, n: Self) -> Self {
        (n * self.ln_dd()).exp_dd()
    }

    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }

    fn exp(self) -> Self {
        self.exp_dd()
    }

    fn exp2(self) -> Self {
        (self * LN2).exp_dd()
    }

    fn ln(self) -> Self {
        self.ln_dd()
    }

    fn log(self, base: Self) -> Self {
        self.ln_dd() / base.ln_dd()
    }

    fn log2(self) -> Self {
        self.ln_dd() / LN2
    }

    fn log10(self) -> Self {
        self.ln_dd() / F64x2::from_f64(10.0).ln_dd()
    }

    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }

    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            F64x2::zero()
        }
    }

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt_dd()
    }

    fn atan2(self, other: Self) -> Self {
        F64x2::from_f64(self.as_f64().atan2(other.as_f64()))
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn exp_m1(self) -> Self {
        self.exp_dd() - F64x2::one()
    }

    fn ln_1p(self) -> Self {
        (self + F64x2::one()).ln_dd()
    }

    fn tanh(self) -> Self {
        self.tanh_dd()
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }

    through_f64!(cbrt, sin, cos, tan, asin, acos, atan, sinh, cosh, asinh, acosh, atanh);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: F64x2, b: f64) -> bool {
        (a.as_f64() - b).abs() <= 4e-16 * b.abs().max(1e-300)
    }

    #[test]
    fn agrees_with_f64() {
        for i in 0..2000 {
            let x = -20.0 + 40.0 * i as f64 / 2000.0 + 1e-7;
            let d = F64x2::from_f64(x);
            assert!(close(d.exp(), x.exp()), "exp {x}");
            assert!(close(d.tanh(), x.tanh()), "tanh {x}");
            assert!(close(d.abs().ln(), x.abs().ln()), "ln {x}");
            assert!(close(d.abs().sqrt(), x.abs().sqrt()), "sqrt {x}");
        }
    }

    #[test]
    fn beyond_f64() {
        let one = F64x2::one();
        let third = one / F64x2::from_f64(3.0);
        assert!(third.lo() != 0.0);
        assert!(((third * F64x2::from_f64(3.0) - one).abs()).as_f64() < 1e-31);
        let e = one.exp();
        let want = F64x2 { hi: std::f64::consts::E, lo: 1.445_646_891_729_250_2e-16 };
        assert!(((e - want).abs()).as_f64() < 1e-31, "{:?}", e - want);
        let x = F64x2::from_pair(1.5, 1e-20);
        assert!(((x.ln().exp() - x).abs()).as_f64() < 1e-30);
        let r = F64x2::from_f64(2.0).sqrt();
        assert!(((r * r - F64x2::from_f64(2.0)).abs()).as_f64() < 1e-31);
        let t = F64x2::from_f64(0.5).tanh();
        let via_exp = (F64x2::one() - (-one).exp()) / (F64x2::one() + (-one).exp());
        assert!(((t - via_exp).abs()).as_f64() < 1e-31);
        let small = F64x2::from_f64(1e-4);
        let series = small.tanh();
        let direct = {
            let t = F64x2::from_f64(-2e-4).exp();
            (F64x2::one() - t) / (F64x2::one() + t)
        };
        assert!(((series - direct).abs()).as_f64() < 1e-31);
    }
}
