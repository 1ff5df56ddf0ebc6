use rug::{Float, Integer};

use crate::error::{Error, Result};

use super::complex::pow2;

/// Working-precision policy shared by every numeric operation.
///
/// `tol` defaults to `2^(-bits/2)` and is recomputed whenever `bits`
/// changes, unless it was overridden explicitly.
#[derive(Clone, Debug)]
pub struct PrecisionContext {
    bits: u32,
    pub tol: Float,
    pub height_bound: Integer,
    pub nmax: u32,
}

impl PrecisionContext {
    pub const DEFAULT_BITS: u32 = 256;
    pub const DEFAULT_HEIGHT: u64 = 1_000_000;
    pub const DEFAULT_NMAX: u32 = 8;

    pub fn new(bits: u32) -> Result<Self> {
        if bits < 64 {
            return Err(Error::InvalidArgument(
                "precision must be at least 64 bits".into(),
            ));
        }
        Ok(PrecisionContext {
            bits,
            tol: pow2(bits, -((bits / 2) as i32)),
            height_bound: Integer::from(Self::DEFAULT_HEIGHT),
            nmax: Self::DEFAULT_NMAX,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Internal evaluations carry guard bits beyond the requested precision.
    pub fn working_prec(&self) -> u32 {
        self.bits + 64
    }

    pub fn with_tol(mut self, tol: Float) -> Result<Self> {
        if !(tol.is_finite() && tol.is_sign_positive() && tol < 1u32) {
            return Err(Error::InvalidArgument("tol must lie in (0, 1)".into()));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_height_bound(mut self, h: Integer) -> Result<Self> {
        if h < 1 {
            return Err(Error::InvalidArgument("height_bound must be >= 1".into()));
        }
        self.height_bound = h;
        Ok(self)
    }

    pub fn with_nmax(mut self, nmax: u32) -> Result<Self> {
        if nmax < 1 {
            return Err(Error::InvalidArgument("nmax must be >= 1".into()));
        }
        self.nmax = nmax;
        Ok(self)
    }

    /// A fresh context at doubled precision, with the derived tolerance.
    pub fn doubled(&self) -> Self {
        let mut c = PrecisionContext::new(self.bits * 2).expect("bits already validated");
        c.height_bound = self.height_bound.clone();
        c.nmax = self.nmax;
        c
    }
}

impl Default for PrecisionContext {
    fn default() -> Self {
        PrecisionContext::new(Self::DEFAULT_BITS).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tol_derivation_is_deterministic() {
        let a = PrecisionContext::new(128).unwrap();
        let b = PrecisionContext::new(128).unwrap();
        assert_eq!(a.tol, b.tol);
        assert_eq!(a.tol, pow2(128, -64));
    }

    #[test]
    fn rejects_tiny_precision() {
        assert!(PrecisionContext::new(32).is_err());
    }

    #[test]
    fn rejects_bad_tol() {
        let c = PrecisionContext::new(64).unwrap();
        assert!(c.clone().with_tol(Float::with_val(64, 2)).is_err());
        assert!(c.with_tol(Float::with_val(64, -0.5)).is_err());
    }
}
