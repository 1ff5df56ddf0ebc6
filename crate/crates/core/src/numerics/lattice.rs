//! Exact LLL lattice reduction and integer-relation detection.
//!
//! Relations are found by reducing the lattice spanned by rows
//! `(e_i, round(2^bits * Re v_i), round(2^bits * Im v_i))` with LLL at
//! delta = 0.99 and exact rational Gram-Schmidt bookkeeping. Deterministic:
//! identical inputs and context give identical output. A `None` result is
//! heuristic only; it never proves independence.

use rug::ops::CompleteRound;
use rug::{Assign, Complete, Float, Integer, Rational};

use super::complex::PrecComplex;
use super::context::PrecisionContext;
use crate::error::{Error, Result};

/// A detected integer relation `sum coeffs[i] * values[i] ~ 0`.
#[derive(Clone, Debug)]
pub struct IntRelation {
    pub coeffs: Vec<Integer>,
    pub residual: Float,
}


/// In-place LLL reduction with delta = 99/100. Rows must be linearly
/// independent.
pub fn lll(basis: &mut [Vec<Integer>]) {
    let n = basis.len();
    if n <= 1 {
        return;
    }
    let delta = Rational::from((99u32, 100u32));

    // Gram-Schmidt data: mu[i][j] for j < i, bnorm[i] = |b_i*|^2.
    let mut mu = vec![vec![Rational::new(); n]; n];
    let mut bnorm = vec![Rational::new(); n];

    let compute_gso = |basis: &[Vec<Integer>],
                       mu: &mut Vec<Vec<Rational>>,
                       bnorm: &mut Vec<Rational>| {
        // b_i* = b_i - sum_{j<i} mu_ij b_j*; all inner products exact.
        let mut star: Vec<Vec<Rational>> = Vec::with_capacity(basis.len());
        for i in 0..basis.len() {
            let mut v: Vec<Rational> = basis[i].iter().map(|x| Rational::from(x)).collect();
            for j in 0..i {
                let mut num = Rational::new();
                for (x, y) in basis[i].iter().zip(&star[j]) {
                    num += (y * x).complete();
                }
                let m = num / bnorm[j].clone();
                mu[i][j].assign(&m);
                for (vk, sk) in v.iter_mut().zip(&star[j]) {
                    *vk -= (&m * sk).complete();
                }
            }
            let mut nrm = Rational::new();
            for x in &v {
                nrm += (x * x).complete();
            }
            bnorm[i].assign(&nrm);
            star.push(v);
        }
    };

    compute_gso(basis, &mut mu, &mut bnorm);

    // Cohen, "A Course in Computational Algebraic Number Theory", Alg. 2.6.3.
    let red = |basis: &mut [Vec<Integer>], mu: &mut Vec<Vec<Rational>>, k: usize, l: usize| {
        let half = Rational::from((1u32, 2u32));
        if mu[k][l].clone().abs() > half {
            let q = mu[k][l].clone().round();
            let qi = q.numer().clone();
            let (bl, bk) = {
                let (lo, hi) = basis.split_at_mut(k);
                (&lo[l], &mut hi[0])
            };
            for (x, y) in bk.iter_mut().zip(bl.iter()) {
                *x -= (&qi * y).complete();
            }
            for j in 0..l {
                let t = (&q * &mu[l][j]).complete();
                mu[k][j] -= t;
            }
            mu[k][l] -= q;
        }
    };

    let mut k = 1;
    while k < n {
        red(basis, &mut mu, k, k - 1);
        let lhs = bnorm[k].clone();
        let rhs = (delta.clone() - (&mu[k][k - 1] * &mu[k][k - 1]).complete()) * &bnorm[k - 1];
        if lhs < rhs {
            // swap b_k and b_{k-1}, update GSO incrementally
            let m = mu[k][k - 1].clone();
            let big_b = bnorm[k].clone() + (&m * &m).complete() * &bnorm[k - 1];
            mu[k][k - 1] = (&m * &bnorm[k - 1]).complete() / big_b.clone();
            bnorm[k] = (&bnorm[k - 1] * &bnorm[k]).complete() / big_b.clone();
            bnorm[k - 1] = big_b;
            basis.swap(k, k - 1);
            for j in 0..k - 1 {
                let (a, b) = (mu[k][j].clone(), mu[k - 1][j].clone());
                mu[k - 1][j] = a;
                mu[k][j] = b;
            }
            for i in k + 1..n {
                let t = mu[i][k].clone();
                mu[i][k] = mu[i][k - 1].clone() - (&m * &t).complete();
                mu[i][k - 1] = t + (&mu[k][k - 1] * &mu[i][k]).complete();
            }
            k = k.max(2) - 1;
        } else {
            for j in (0..k.saturating_sub(1)).rev() {
                red(basis, &mut mu, k, j);
            }
            k += 1;
        }
    }
}

fn scaled_round(v: &Float, bits: u32) -> Integer {
    let mut f = v.clone();
    f <<= bits;
    f.round().to_integer().unwrap_or_default()
}

fn check_finite(values: &[Float]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty value list".into()));
    }
    for v in values {
        if !v.is_finite() {
            return Err(Error::InvalidArgument("non-finite input value".into()));
        }
    }
    Ok(())
}

/// Residual and the scale `sum |c_i v_i|` of a candidate relation.
fn relation_residual(coeffs: &[Integer], values: &[PrecComplex], prec: u32) -> (Float, Float) {
    let mut acc = PrecComplex::zero(prec);
    let mut scale = Float::new(prec);
    for (c, v) in coeffs.iter().zip(values) {
        let t = v.scale_int(c);
        scale += t.abs();
        acc = &acc + &t;
    }
    (acc.abs(), scale)
}

fn best_relation(
    basis: &[Vec<Integer>],
    nvals: usize,
    values: &[PrecComplex],
    ctx: &PrecisionContext,
) -> Option<IntRelation> {
    let prec = ctx.working_prec();
    let mut best: Option<(Integer, IntRelation)> = None;
    for row in basis {
        let coeffs = &row[..nvals];
        if coeffs.iter().all(|c| *c == 0) {
            continue;
        }
        let height: Integer = coeffs.iter().map(|c| c.clone().abs()).max().unwrap();
        if height > ctx.height_bound {
            continue;
        }
        let (residual, scale) = relation_residual(coeffs, values, prec);
        let mut bound = (&ctx.tol * &scale).complete(prec);
        if bound.is_zero() {
            bound = ctx.tol.clone();
        }
        if residual > bound {
            continue;
        }
        let rel = IntRelation {
            coeffs: coeffs.to_vec(),
            residual,
        };
        match &best {
            Some((h, _)) if *h <= height => {}
            _ => best = Some((height, rel)),
        }
    }
    best.map(|(_, r)| r)
}

/// Searches for a small integer relation among complex values. Real and
/// imaginary parts contribute one scaled lattice column each.
pub fn integer_relation_complex(
    values: &[PrecComplex],
    ctx: &PrecisionContext,
) -> Result<Option<IntRelation>> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::InvalidArgument("non-finite input value".into()));
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty value list".into()));
    }
    let n = values.len();
    let any_imag = values.iter().any(|v| !v.im.is_zero());
    let extra = if any_imag { 2 } else { 1 };
    let mut basis: Vec<Vec<Integer>> = Vec::with_capacity(n);
    for (i, v) in values.iter().enumerate() {
        let mut row = vec![Integer::new(); n + extra];
        row[i] = Integer::from(1);
        row[n] = scaled_round(&v.re, ctx.bits());
        if any_imag {
            row[n + 1] = scaled_round(&v.im, ctx.bits());
        }
        basis.push(row);
    }
    lll(&mut basis);
    Ok(best_relation(&basis, n, values, ctx))
}

/// Integer relation among real values (see module docs).
pub fn integer_relation(values: &[Float], ctx: &PrecisionContext) -> Result<Option<IntRelation>> {
    check_finite(values)?;
    if ctx.bits() < 64 {
        return Err(Error::InvalidArgument("need at least 64 bits".into()));
    }
    let complex: Vec<PrecComplex> = values
        .iter()
        .map(|v| PrecComplex::from_real(v.clone()))
        .collect();
    integer_relation_complex(&complex, ctx)
}

/// An integer polynomial in one variable, stored low degree first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntPolynomial {
    pub coeffs: Vec<Integer>,
}

impl IntPolynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: &PrecComplex) -> PrecComplex {
        let prec = x.prec();
        let mut acc = PrecComplex::zero(prec);
        for c in self.coeffs.iter().rev() {
            let cc = PrecComplex::from_real(Float::with_val(prec, c));
            acc = &(&acc * x) + &cc;
        }
        acc
    }

    /// Divides by the content and fixes the leading coefficient positive.
    fn normalize(mut self) -> Self {
        while self.coeffs.len() > 1 && *self.coeffs.last().unwrap() == 0 {
            self.coeffs.pop();
        }
        let mut content = Integer::new();
        for c in &self.coeffs {
            content = content.gcd(c);
        }
        if content > 1 {
            for c in &mut self.coeffs {
                *c /= &content;
            }
        }
        if self.coeffs.last().map(|c| *c < 0).unwrap_or(false) {
            for c in &mut self.coeffs {
                *c = (-&*c).complete();
            }
        }
        self
    }
}

impl std::fmt::Display for IntPolynomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if *c == 0 && self.coeffs.len() > 1 {
                continue;
            }
            if !first {
                write!(f, " {} ", if *c < 0 { "-" } else { "+" })?;
            } else if *c < 0 {
                write!(f, "-")?;
            }
            let a = c.clone().abs();
            match k {
                0 => write!(f, "{}", a)?,
                1 if a == 1 => write!(f, "X")?,
                1 => write!(f, "{}*X", a)?,
                _ if a == 1 => write!(f, "X^{}", k)?,
                _ => write!(f, "{}*X^{}", a, k)?,
            }
            first = false;
        }
        Ok(())
    }
}

/// Guesses the minimal integer polynomial of `x` up to `degree_bound`,
/// returning the lowest-degree candidate whose value at `x` is below the
/// context tolerance. Heuristic in both directions of failure.
pub fn min_poly_guess(
    x: &PrecComplex,
    degree_bound: usize,
    ctx: &PrecisionContext,
) -> Result<Option<IntPolynomial>> {
    if degree_bound < 1 {
        return Err(Error::InvalidArgument("degree_bound must be >= 1".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument("non-finite input value".into()));
    }
    let prec = ctx.working_prec();
    let mut powers = vec![PrecComplex::from_int(prec, 1)];
    for _ in 0..degree_bound {
        powers.push(&powers[powers.len() - 1].clone() * &x.with_prec(prec));
    }
    for d in 1..=degree_bound {
        if let Some(rel) = integer_relation_complex(&powers[..=d], ctx)? {
            let poly = IntPolynomial { coeffs: rel.coeffs }.normalize();
            if poly.degree() == 0 {
                continue;
            }
            let val = poly.eval(&x.with_prec(prec)).abs();
            if val <= ctx.tol {
                return Ok(Some(poly));
            }
        }
    }
    Ok(None)
}
