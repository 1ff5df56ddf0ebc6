use rug::float::Special;
use rug::ops::CompleteRound;
use rug::{Float, Integer, Rational};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Complex number carried as a pair of MPFR reals at an explicit precision.
///
/// Arithmetic is componentwise MPFR arithmetic; every operation is correct to
/// within a few ulps at the precision of its operands (each primitive MPFR
/// operation is correctly rounded, and no operation here chains more than a
/// handful of them).
#[derive(Clone, PartialEq)]
pub struct PrecComplex {
    pub re: Float,
    pub im: Float,
}

impl PrecComplex {
    pub fn new(re: Float, im: Float) -> Self {
        PrecComplex { re, im }
    }

    pub fn zero(prec: u32) -> Self {
        PrecComplex {
            re: Float::new(prec),
            im: Float::new(prec),
        }
    }

    pub fn from_f64(prec: u32, re: f64, im: f64) -> Self {
        PrecComplex {
            re: Float::with_val(prec, re),
            im: Float::with_val(prec, im),
        }
    }

    pub fn from_int(prec: u32, n: i64) -> Self {
        PrecComplex {
            re: Float::with_val(prec, n),
            im: Float::new(prec),
        }
    }

    pub fn from_real(re: Float) -> Self {
        let prec = re.prec();
        PrecComplex {
            re,
            im: Float::new(prec),
        }
    }

    pub fn from_rationals(prec: u32, re: &Rational, im: &Rational) -> Self {
        PrecComplex {
            re: Float::with_val(prec, re),
            im: Float::with_val(prec, im),
        }
    }

    pub fn i(prec: u32) -> Self {
        PrecComplex {
            re: Float::new(prec),
            im: Float::with_val(prec, 1),
        }
    }

    pub fn prec(&self) -> u32 {
        self.re.prec().max(self.im.prec())
    }

    /// Returns a copy rounded to `prec` bits.
    pub fn with_prec(&self, prec: u32) -> Self {
        PrecComplex {
            re: Float::with_val(prec, &self.re),
            im: Float::with_val(prec, &self.im),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        PrecComplex {
            re: self.re.clone(),
            im: (-&self.im).complete(self.im.prec()),
        }
    }

    pub fn norm_sqr(&self) -> Float {
        let prec = self.prec();
        let mut s = self.re.clone().square();
        s += self.im.clone().square();
        Float::with_val(prec, s)
    }

    pub fn abs(&self) -> Float {
        let prec = self.prec();
        Float::with_val(prec, self.re.clone().hypot(&self.im))
    }

    pub fn recip(&self) -> Self {
        let prec = self.prec();
        let n = self.norm_sqr();
        if n.is_zero() {
            return PrecComplex {
                re: Float::with_val(prec, Special::Infinity),
                im: Float::with_val(prec, Special::Infinity),
            };
        }
        PrecComplex {
            re: Float::with_val(prec, &self.re / &n),
            im: Float::with_val(prec, -(&self.im / &n).complete(prec)),
        }
    }

    /// e^z = e^re (cos im + i sin im).
    pub fn exp(&self) -> Self {
        let prec = self.prec();
        let r = self.re.clone().exp();
        let (sin, cos) = self.im.clone().sin_cos(Float::new(prec));
        PrecComplex {
            re: Float::with_val(prec, &r * &cos),
            im: Float::with_val(prec, &r * &sin),
        }
    }

    pub fn square(&self) -> Self {
        self * self
    }

    pub fn powi(&self, n: u32) -> Self {
        let prec = self.prec();
        let mut acc = PrecComplex::from_int(prec, 1);
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn scale(&self, f: &Float) -> Self {
        let prec = self.prec();
        PrecComplex {
            re: Float::with_val(prec, &self.re * f),
            im: Float::with_val(prec, &self.im * f),
        }
    }

    pub fn scale_int(&self, n: &Integer) -> Self {
        let prec = self.prec();
        PrecComplex {
            re: Float::with_val(prec, &self.re * n),
            im: Float::with_val(prec, &self.im * n),
        }
    }

    /// Multiplication by i.
    pub fn mul_i(&self) -> Self {
        PrecComplex {
            re: (-&self.im).complete(self.im.prec()),
            im: self.re.clone(),
        }
    }

    /// Parses "a", "bi", "a+bi" or "a-bi" with decimal reals.
    pub fn parse(prec: u32, s: &str) -> Option<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t.is_empty() {
            return None;
        }
        let parse_real = |x: &str| -> Option<Float> {
            Float::parse(x).ok().map(|p| Float::with_val(prec, p))
        };
        // split at the last +/- that is not a leading sign or exponent sign
        let bytes = t.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            let c = bytes[k] as char;
            if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                split = Some(k);
                break;
            }
        }
        if t.ends_with('i') {
            let (re_str, im_str) = match split {
                Some(k) => (&t[..k], &t[k..t.len() - 1]),
                None => ("0", &t[..t.len() - 1]),
            };
            let im = match im_str {
                "" | "+" => Float::with_val(prec, 1),
                "-" => Float::with_val(prec, -1),
                x => parse_real(x)?,
            };
            Some(PrecComplex {
                re: parse_real(re_str)?,
                im,
            })
        } else {
            Some(PrecComplex {
                re: parse_real(&t)?,
                im: Float::new(prec),
            })
        }
    }
}

impl fmt::Debug for PrecComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}i)", self.re, self.im)
    }
}

impl fmt::Display for PrecComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", self.re)
        } else if self.im.is_sign_positive() {
            write!(f, "{}+{}i", self.re, self.im)
        } else {
            write!(f, "{}{}i", self.re, self.im)
        }
    }
}

impl<'a, 'b> Add<&'b PrecComplex> for &'a PrecComplex {
    type Output = PrecComplex;
    fn add(self, rhs: &'b PrecComplex) -> PrecComplex {
        let prec = self.prec().max(rhs.prec());
        PrecComplex {
            re: (&self.re + &rhs.re).complete(prec),
            im: (&self.im + &rhs.im).complete(prec),
        }
    }
}

impl<'a, 'b> Sub<&'b PrecComplex> for &'a PrecComplex {
    type Output = PrecComplex;
    fn sub(self, rhs: &'b PrecComplex) -> PrecComplex {
        let prec = self.prec().max(rhs.prec());
        PrecComplex {
            re: (&self.re - &rhs.re).complete(prec),
            im: (&self.im - &rhs.im).complete(prec),
        }
    }
}

impl<'a, 'b> Mul<&'b PrecComplex> for &'a PrecComplex {
    type Output = PrecComplex;
    fn mul(self, rhs: &'b PrecComplex) -> PrecComplex {
        let prec = self.prec().max(rhs.prec());
        let re = (&self.re * &rhs.re).complete(prec) - (&self.im * &rhs.im).complete(prec);
        let im = (&self.re * &rhs.im).complete(prec) + (&self.im * &rhs.re).complete(prec);
        PrecComplex {
            re: Float::with_val(prec, re),
            im: Float::with_val(prec, im),
        }
    }
}

impl<'a, 'b> Div<&'b PrecComplex> for &'a PrecComplex {
    type Output = PrecComplex;
    fn div(self, rhs: &'b PrecComplex) -> PrecComplex {
        self * &rhs.recip()
    }
}

impl<'a> Neg for &'a PrecComplex {
    type Output = PrecComplex;
    fn neg(self) -> PrecComplex {
        PrecComplex {
            re: (-&self.re).complete(self.re.prec()),
            im: (-&self.im).complete(self.im.prec()),
        }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<PrecComplex> for PrecComplex {
            type Output = PrecComplex;
            fn $m(self, rhs: PrecComplex) -> PrecComplex {
                (&self).$m(&rhs)
            }
        }
        impl<'a> $tr<&'a PrecComplex> for PrecComplex {
            type Output = PrecComplex;
            fn $m(self, rhs: &'a PrecComplex) -> PrecComplex {
                (&self).$m(rhs)
            }
        }
        impl<'a> $tr<PrecComplex> for &'a PrecComplex {
            type Output = PrecComplex;
            fn $m(self, rhs: PrecComplex) -> PrecComplex {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);
forward_owned!(Div, div);

impl Neg for PrecComplex {
    type Output = PrecComplex;
    fn neg(self) -> PrecComplex {
        -&self
    }
}

/// pi at `prec` bits.
pub fn pi(prec: u32) -> Float {
    Float::with_val(prec, rug::float::Constant::Pi)
}

/// 2*pi*i at `prec` bits.
pub fn two_pi_i(prec: u32) -> PrecComplex {
    let p = pi(prec);
    PrecComplex {
        re: Float::new(prec),
        im: Float::with_val(prec, 2 * &p),
    }
}

/// 2^e as a Float at `prec` bits (e may be negative).
pub fn pow2(prec: u32, e: i32) -> Float {
    Float::with_val(prec, Float::i_exp(1, e))
}

/// sqrt of a nonnegative integer at `prec` bits.
pub fn sqrt_int(prec: u32, n: u32) -> Float {
    Float::with_val(prec, n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_basics() {
        let a = PrecComplex::from_f64(128, 1.0, 2.0);
        let b = PrecComplex::from_f64(128, -3.0, 0.5);
        let s = &a + &b;
        assert_eq!(s.re.to_f64(), -2.0);
        assert_eq!(s.im.to_f64(), 2.5);
        let p = &a * &b;
        // (1+2i)(-3+0.5i) = -3 + 0.5i - 6i + i^2 = -4 - 5.5i
        assert_eq!(p.re.to_f64(), -4.0);
        assert_eq!(p.im.to_f64(), -5.5);
        let q = &p / &b;
        assert!((&q - &a).abs().to_f64() < 1e-30);
    }

    #[test]
    fn exp_of_i_pi_is_minus_one() {
        let prec = 256;
        let z = PrecComplex::new(Float::new(prec), pi(prec));
        let e = z.exp();
        let one = PrecComplex::from_int(prec, -1);
        assert!((&e - &one).abs() < pow2(prec, -250));
    }

    #[test]
    fn exp_against_doubled_precision() {
        // contract spot-check: recompute at 2x precision and compare
        let z = PrecComplex::from_f64(128, 0.3, -1.7);
        let lo = z.exp();
        let hi = z.with_prec(256).exp();
        assert!((&lo - &hi).abs() < pow2(128, -120));
    }

    #[test]
    fn parse_forms() {
        let p = 64;
        assert_eq!(PrecComplex::parse(p, "i").unwrap().im.to_f64(), 1.0);
        assert_eq!(PrecComplex::parse(p, "2i").unwrap().im.to_f64(), 2.0);
        let z = PrecComplex::parse(p, "1.5-2e-1i").unwrap();
        assert_eq!(z.re.to_f64(), 1.5);
        assert_eq!(z.im.to_f64(), -0.2);
        let w = PrecComplex::parse(p, "-3").unwrap();
        assert_eq!(w.re.to_f64(), -3.0);
        assert!(w.im.is_zero());
    }
}
