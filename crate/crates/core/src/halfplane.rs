//! Points of the union of upper and lower half-planes, the rational Moebius
//! action, matrix normalization, fundamental-domain reduction and special
//! point detection.

use rug::{Complete, Float, Integer, Rational};
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{integer_relation_complex, pow2, PrecComplex, PrecisionContext};

/// A point of the half-plane union: nonzero imaginary part.
#[derive(Clone, Debug, PartialEq)]
pub struct HPoint {
    value: PrecComplex,
}

impl HPoint {
    pub fn new(value: PrecComplex) -> Result<Self> {
        if !value.is_finite() || value.im.is_zero() {
            return Err(Error::InvalidArgument(
                "half-plane point must have nonzero imaginary part".into(),
            ));
        }
        Ok(HPoint { value })
    }

    pub fn from_f64(prec: u32, re: f64, im: f64) -> Result<Self> {
        HPoint::new(PrecComplex::from_f64(prec, re, im))
    }

    pub fn value(&self) -> &PrecComplex {
        &self.value
    }

    pub fn is_upper(&self) -> bool {
        self.value.im.is_sign_positive()
    }

    pub fn conj(&self) -> HPoint {
        HPoint {
            value: self.value.conj(),
        }
    }

    pub fn prec(&self) -> u32 {
        self.value.prec()
    }
}

impl fmt::Display for HPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// A rational 2x2 matrix with nonzero determinant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GL2Q {
    pub a: Rational,
    pub b: Rational,
    pub c: Rational,
    pub d: Rational,
}

impl GL2Q {
    pub fn new(a: Rational, b: Rational, c: Rational, d: Rational) -> Result<Self> {
        let g = GL2Q { a, b, c, d };
        if g.det() == 0 {
            return Err(Error::InvalidArgument("matrix has zero determinant".into()));
        }
        Ok(g)
    }

    pub fn from_ints(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        GL2Q::new(
            Rational::from(a),
            Rational::from(b),
            Rational::from(c),
            Rational::from(d),
        )
    }

    pub fn identity() -> Self {
        GL2Q::from_ints(1, 0, 0, 1).unwrap()
    }

    pub fn det(&self) -> Rational {
        ((&self.a * &self.d).complete() - (&self.b * &self.c).complete()).into()
    }

    pub fn compose(&self, rhs: &GL2Q) -> GL2Q {
        GL2Q {
            a: ((&self.a * &rhs.a).complete() + (&self.b * &rhs.c).complete()).into(),
            b: ((&self.a * &rhs.b).complete() + (&self.b * &rhs.d).complete()).into(),
            c: ((&self.c * &rhs.a).complete() + (&self.d * &rhs.c).complete()).into(),
            d: ((&self.c * &rhs.b).complete() + (&self.d * &rhs.d).complete()).into(),
        }
    }

    pub fn inverse(&self) -> GL2Q {
        let det = self.det();
        GL2Q {
            a: (&self.d / &det).complete(),
            b: (-(&self.b / &det).complete()).into(),
            c: (-(&self.c / &det).complete()).into(),
            d: (&self.a / &det).complete(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.b == 0 && self.c == 0 && self.a == self.d
    }
}

impl fmt::Display for GL2Q {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

/// `red(g)`: the positive rational rescaling of g with coprime integer
/// entries; `n` is the absolute determinant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimitiveIntMatrix {
    pub a: Integer,
    pub b: Integer,
    pub c: Integer,
    pub d: Integer,
    pub n: Integer,
}

impl PrimitiveIntMatrix {
    pub fn to_gl2q(&self) -> GL2Q {
        GL2Q {
            a: Rational::from(&self.a),
            b: Rational::from(&self.b),
            c: Rational::from(&self.c),
            d: Rational::from(&self.d),
        }
    }

    pub fn det(&self) -> Integer {
        ((&self.a * &self.d).complete() - (&self.b * &self.c).complete()).into()
    }
}

impl fmt::Display for PrimitiveIntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

/// The Moebius action (az+b)/(cz+d). The imaginary sign flips iff det < 0.
pub fn act(g: &GL2Q, z: &HPoint) -> HPoint {
    let prec = z.prec();
    let zv = z.value();
    let to_c = |r: &Rational| PrecComplex::from_rationals(prec, r, &Rational::new());
    let num = &(&to_c(&g.a) * zv) + &to_c(&g.b);
    let den = &(&to_c(&g.c) * zv) + &to_c(&g.d);
    HPoint {
        value: &num / &den,
    }
}

/// Scales g to coprime integer entries with a positive rational factor.
pub fn red(g: &GL2Q) -> Result<PrimitiveIntMatrix> {
    if g.det() == 0 {
        return Err(Error::InvalidArgument("matrix has zero determinant".into()));
    }
    let mut l = Integer::from(1);
    for r in [&g.a, &g.b, &g.c, &g.d] {
        l = l.lcm(r.denom());
    }
    let mut e: Vec<Integer> = [&g.a, &g.b, &g.c, &g.d]
        .iter()
        .map(|r| {
            let s = ((*r) * &l).complete();
            s.numer().clone()
        })
        .collect();
    let mut gcd = Integer::new();
    for x in &e {
        gcd = gcd.gcd(x);
    }
    for x in &mut e {
        *x /= &gcd;
    }
    let m = PrimitiveIntMatrix {
        a: e[0].clone(),
        b: e[1].clone(),
        c: e[2].clone(),
        d: e[3].clone(),
        n: Integer::new(),
    };
    let n = m.det().abs();
    Ok(PrimitiveIntMatrix { n, ..m })
}

const REDUCE_CAP: usize = 1_000_000;

/// Reduces an upper-half-plane point into the standard fundamental domain.
/// Returns (z0, gamma) with z = gamma * z0, |Re z0| <= 1/2, |z0| >= 1 - tol.
pub fn reduce_fundamental(z: &HPoint, ctx: &PrecisionContext) -> Result<(HPoint, PrimitiveIntMatrix)> {
    if !z.is_upper() {
        return Err(Error::InvalidArgument(
            "fundamental-domain reduction expects an upper-half-plane point".into(),
        ));
    }
    let prec = z.prec().max(ctx.working_prec());
    let mut cur = z.value().with_prec(prec);
    // gamma accumulates so that z = gamma * cur at all times
    let mut ga = Integer::from(1);
    let mut gb = Integer::from(0);
    let mut gc = Integer::from(0);
    let mut gd = Integer::from(1);
    let one_minus = Float::with_val(prec, 1) - pow2(prec, -(ctx.bits() as i32));
    let half = Float::with_val(prec, 0.5);
    for _ in 0..REDUCE_CAP {
        let n = cur.re.clone().round();
        if !n.is_zero() {
            let ni = n.to_integer().unwrap_or_default();
            cur.re -= &n;
            // z = gamma * (cur + n) => gamma <- gamma * T^n
            gb += (&ga * &ni).complete();
            gd += (&gc * &ni).complete();
        }
        let norm = cur.norm_sqr();
        if norm < one_minus {
            // cur <- -1/cur; gamma <- gamma * S^{-1}, S^{-1} = [[0,1],[-1,0]]
            cur = -cur.recip();
            let (na, nc) = (gb.clone(), gd.clone());
            gb = (-&ga).complete();
            gd = (-&gc).complete();
            ga = na;
            gc = nc;
        } else if cur.re.clone().abs() <= half {
            let m = PrimitiveIntMatrix {
                a: ga,
                b: gb,
                c: gc,
                d: gd,
                n: Integer::from(1),
            };
            return Ok((HPoint { value: cur }, m));
        }
    }
    Err(Error::NumericInstability(
        "fundamental-domain reduction exceeded the iteration cap".into(),
    ))
}

/// Searches for a primitive integer quadratic a z^2 + b z + c = 0 with a > 0
/// and negative discriminant. `None` is heuristic, not a proof.
pub fn is_special(z: &HPoint, ctx: &PrecisionContext) -> Result<Option<(Integer, Integer, Integer)>> {
    let prec = ctx.working_prec();
    let zv = z.value().with_prec(prec);
    let values = [
        zv.square(),
        zv.clone(),
        PrecComplex::from_int(prec, 1),
    ];
    let rel = match integer_relation_complex(&values, ctx)? {
        Some(r) => r,
        None => return Ok(None),
    };
    let (mut a, mut b, mut c) = (
        rel.coeffs[0].clone(),
        rel.coeffs[1].clone(),
        rel.coeffs[2].clone(),
    );
    if a == 0 {
        return Ok(None);
    }
    if a < 0 {
        a = -a;
        b = -b;
        c = -c;
    }
    let disc = (&b * &b).complete() - 4u32 * (&a * &c).complete();
    if disc >= 0 {
        return Ok(None);
    }
    Ok(Some((a, b, c)))
}

/// Hecke representatives of determinant n: upper-triangular (a, b, d) with
/// ad = n, 0 <= b < d, gcd(a, b, d) = 1, in lexicographic order.
pub fn hecke_representatives(n: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for a in 1..=n {
        if n % a != 0 {
            continue;
        }
        let d = n / a;
        for b in 0..d {
            let g = gcd3(a, b, d);
            if g == 1 {
                out.push((a, b, d));
            }
        }
    }
    out
}

fn gcd3(a: u32, b: u32, c: u32) -> u32 {
    fn gcd(mut x: u32, mut y: u32) -> u32 {
        while y != 0 {
            let t = x % y;
            x = y;
            y = t;
        }
        x
    }
    gcd(gcd(a, b), c)
}

/// The Hecke index psi(n): degree in X of the level-n modular polynomial.
pub fn hecke_index(n: u32) -> usize {
    hecke_representatives(n).len()
}

fn close(a: &PrecComplex, b: &PrecComplex, eps: &Float) -> bool {
    (a - b).abs() <= *eps
}

/// Small SL2(Z) elements used to absorb fundamental-domain boundary
/// ambiguity when comparing representatives.
fn boundary_moves() -> Vec<GL2Q> {
    let m = |a, b, c, d| GL2Q::from_ints(a, b, c, d).unwrap();
    vec![
        m(1, 0, 0, 1),
        m(1, 1, 0, 1),
        m(1, -1, 0, 1),
        m(0, -1, 1, 0),
        m(0, -1, 1, 1),
        m(0, -1, 1, -1),
        m(1, 0, 1, 1),
        m(1, 0, -1, 1),
    ]
}

/// Finds the minimal-determinant modular relation `act(g, z2) ~ z1` with
/// N = det(red(g)) <= ctx.nmax, enumerating Hecke representatives in
/// increasing N then lexicographic order. Lower-half-plane inputs are
/// conjugated into the upper half-plane first.
pub fn find_modular_relation(
    z1: &HPoint,
    z2: &HPoint,
    ctx: &PrecisionContext,
) -> Result<Option<(GL2Q, u32)>> {
    let z1 = if z1.is_upper() { z1.clone() } else { z1.conj() };
    let z2 = if z2.is_upper() { z2.clone() } else { z2.conj() };
    let prec = ctx.working_prec();
    let (r1, g1) = reduce_fundamental(&z1, ctx)?;
    let (r2, g2) = reduce_fundamental(&z2, ctx)?;
    let g1q = g1.to_gl2q();
    let g2q_inv = g2.to_gl2q().inverse();
    // comparison tolerance: half the working bits, scaled by the point size
    let eps: Float = pow2(prec, -((ctx.bits() / 4) as i32))
        * (Float::with_val(prec, 1) + r1.value().abs());
    let moves = boundary_moves();
    for n in 1..=ctx.nmax {
        for (a, b, d) in hecke_representatives(n) {
            let t = GL2Q::from_ints(a as i64, b as i64, 0, d as i64).unwrap();
            let w = act(&t, &r2);
            let (w0, gw) = reduce_fundamental(&w, ctx)?;
            for mu in &moves {
                let cand = act(mu, &w0);
                if close(cand.value(), r1.value(), &eps) {
                    // z1 = g1 * mu * gw^{-1} * t * g2^{-1} * z2
                    let g = g1q
                        .compose(mu)
                        .compose(&gw.to_gl2q().inverse())
                        .compose(&t)
                        .compose(&g2q_inv);
                    // final verification on the original points
                    let img = act(&g, &z2);
                    if close(img.value(), &z1.value().with_prec(prec), &eps) {
                        return Ok(Some((g, n)));
                    }
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(256).unwrap()
    }

    fn pt(re: f64, im: f64) -> HPoint {
        HPoint::from_f64(320, re, im).unwrap()
    }

    #[test]
    fn act_translation_inversion_and_flip() {
        let i = pt(0.0, 1.0);
        let t = GL2Q::from_ints(1, 1, 0, 1).unwrap();
        let r = act(&t, &i);
        assert!((r.value().re.to_f64() - 1.0).abs() < 1e-50);
        assert!((r.value().im.to_f64() - 1.0).abs() < 1e-50);

        let s = GL2Q::from_ints(0, -1, 1, 0).unwrap();
        let half_i = pt(0.0, 0.5);
        let r = act(&s, &half_i);
        assert!((r.value().im.to_f64() - 2.0).abs() < 1e-50);
        assert!(r.value().re.to_f64().abs() < 1e-50);

        let f = GL2Q::from_ints(1, 0, 0, -1).unwrap();
        let r = act(&f, &i);
        assert!((r.value().im.to_f64() + 1.0).abs() < 1e-50);
    }

    #[test]
    fn red_examples() {
        let g = GL2Q::from_ints(2, 0, 0, 2).unwrap();
        let m = red(&g).unwrap();
        assert_eq!((m.a.to_i64().unwrap(), m.d.to_i64().unwrap()), (1, 1));
        assert_eq!(m.n, 1);

        let g = GL2Q::new(
            Rational::from((1, 2)),
            Rational::new(),
            Rational::new(),
            Rational::from(1),
        )
        .unwrap();
        let m = red(&g).unwrap();
        assert_eq!((m.a.to_i64().unwrap(), m.d.to_i64().unwrap()), (1, 2));
        assert_eq!(m.n, 2);

        let g = GL2Q::from_ints(2, 0, 0, 1).unwrap();
        let m = red(&g).unwrap();
        assert_eq!((m.a.to_i64().unwrap(), m.d.to_i64().unwrap()), (2, 1));
        assert_eq!(m.n, 2);
    }

    #[test]
    fn red_invariant_under_positive_scaling() {
        let g = GL2Q::from_ints(3, -6, 9, 12).unwrap();
        let scaled = GL2Q::new(
            (&g.a * &Rational::from((7, 5))).complete(),
            (&g.b * &Rational::from((7, 5))).complete(),
            (&g.c * &Rational::from((7, 5))).complete(),
            (&g.d * &Rational::from((7, 5))).complete(),
        )
        .unwrap();
        assert_eq!(red(&g).unwrap(), red(&scaled).unwrap());
    }

    #[test]
    fn reduce_translation_and_inversion() {
        let c = ctx();
        let z = pt(5.0, 1.0);
        let (z0, g) = reduce_fundamental(&z, &c).unwrap();
        assert!(z0.value().re.to_f64().abs() < 1e-60);
        assert!((z0.value().im.to_f64() - 1.0).abs() < 1e-60);
        assert_eq!(g.b, 5);

        let z = pt(0.0, 0.5);
        let (z0, _) = reduce_fundamental(&z, &c).unwrap();
        assert!((z0.value().im.to_f64() - 2.0).abs() < 1e-60);
    }

    #[test]
    fn reduce_generic_and_verify_identity() {
        let c = ctx();
        let z = pt(0.1, 0.1);
        let (z0, g) = reduce_fundamental(&z, &c).unwrap();
        assert!(z0.value().norm_sqr().to_f64() >= 1.0 - 1e-30);
        assert!(z0.value().re.to_f64().abs() <= 0.5 + 1e-30);
        assert!(z0.value().im.to_f64() >= 0.866 - 1e-3);
        let back = act(&g.to_gl2q(), &z0);
        assert!((back.value() - z.value()).abs().to_f64() < 1e-60);
        assert_eq!(g.det(), 1);
    }

    #[test]
    fn special_points() {
        let c = ctx();
        let i = pt(0.0, 1.0);
        let (a, b, q) = is_special(&i, &c).unwrap().unwrap();
        assert_eq!((a.to_i64().unwrap(), b.to_i64().unwrap(), q.to_i64().unwrap()), (1, 0, 1));

        // (1 + i sqrt(163)) / 2 satisfies z^2 - z + 41 = 0
        let prec = 320;
        let s163 = Float::with_val(prec, 163).sqrt() / 2u32;
        let z = HPoint::new(PrecComplex::new(Float::with_val(prec, 0.5), s163)).unwrap();
        let (a, b, q) = is_special(&z, &c).unwrap().unwrap();
        assert_eq!((a.to_i64().unwrap(), b.to_i64().unwrap(), q.to_i64().unwrap()), (1, -1, 41));

        let generic = pt(0.5, 0.7);
        let mut small = ctx();
        small.height_bound = Integer::from(10_000);
        assert!(is_special(&generic, &small).unwrap().is_none());
    }

    #[test]
    fn special_generic_exhaustive_oracle() {
        // small-height scan: no quadratic with |a|,|b|,|c| <= 60 gets below
        // the scaled tolerance at z = 0.5 + 0.7i (the binary double 0.7 is
        // ~5e-17 away from 7/10, so the (50,-50,37) quadratic of (5+7i)/10
        // leaves a ~1e-15 residual, orders of magnitude above 2^-128)
        let prec = 128;
        let z = PrecComplex::from_f64(prec, 0.5, 0.7);
        let z2 = z.square();
        let mut best = Float::with_val(prec, 1e30);
        for a in -60i64..=60 {
            for b in -60i64..=60 {
                for c in -60i64..=60 {
                    if a == 0 && b == 0 && c == 0 {
                        continue;
                    }
                    let mut v = z2.scale(&Float::with_val(prec, a));
                    v = &v + &z.scale(&Float::with_val(prec, b));
                    v.re += Float::with_val(prec, c);
                    let m = v.abs();
                    if m < best {
                        best = m;
                    }
                }
            }
        }
        assert!(best.to_f64() > 1e-16);
        assert!(best.to_f64() < 1e-4);
    }

    #[test]
    fn modular_relation_scaling() {
        let c = ctx();
        let z1 = pt(0.0, 2.0);
        let z2 = pt(0.0, 1.0);
        let (g, n) = find_modular_relation(&z1, &z2, &c).unwrap().unwrap();
        assert_eq!(n, 2);
        let img = act(&g, &z2);
        assert!((img.value() - z1.value()).abs().to_f64() < 1e-30);
    }

    #[test]
    fn modular_relation_det_six() {
        let c = ctx();
        let z1 = pt(0.0, 3.0);
        let z2 = pt(0.0, 2.0);
        let (g, n) = find_modular_relation(&z1, &z2, &c).unwrap().unwrap();
        assert_eq!(n, 6);
        let r = red(&g).unwrap();
        assert_eq!(r.n, 6);
    }

    #[test]
    fn modular_relation_distinct_cm_orbits() {
        let c = ctx();
        let prec = 320;
        let i = pt(0.0, 1.0);
        let rho = HPoint::new(PrecComplex::new(
            Float::with_val(prec, 0.5),
            Float::with_val(prec, 3).sqrt() / 2u32,
        ))
        .unwrap();
        assert!(find_modular_relation(&i, &rho, &c).unwrap().is_none());
    }

    #[test]
    fn action_is_group_action() {
        let c = ctx();
        let g = GL2Q::from_ints(3, 1, 2, 1).unwrap();
        let h = GL2Q::from_ints(1, -2, 1, 5).unwrap();
        let z = pt(0.3, 1.7);
        let lhs = act(&g.compose(&h), &z);
        let rhs = act(&g, &act(&h, &z));
        assert!((lhs.value() - rhs.value()).abs().to_f64() < 1e-60);
        let id = act(&GL2Q::identity(), &z);
        assert_eq!(id.value(), z.value());
        let _ = c;
    }

    #[test]
    fn specialness_is_orbit_invariant() {
        let c = ctx();
        let i = pt(0.0, 1.0);
        for gamma in [
            GL2Q::from_ints(1, 3, 0, 1).unwrap(),
            GL2Q::from_ints(2, 1, 1, 1).unwrap(),
            GL2Q::from_ints(0, -1, 1, 0).unwrap(),
        ] {
            let w = act(&gamma, &i);
            assert!(is_special(&w, &c).unwrap().is_some(), "gamma {}", gamma);
        }
        let generic = pt(0.37, 1.21);
        let mut small = ctx();
        small.height_bound = Integer::from(10_000);
        for gamma in [
            GL2Q::from_ints(1, 3, 0, 1).unwrap(),
            GL2Q::from_ints(2, 1, 1, 1).unwrap(),
        ] {
            let w = act(&gamma, &generic);
            assert!(is_special(&w, &small).unwrap().is_none());
        }
    }

    #[test]
    fn hecke_reps_counts() {
        assert_eq!(hecke_index(1), 1);
        assert_eq!(hecke_index(2), 3);
        assert_eq!(hecke_index(3), 4);
        assert_eq!(hecke_index(6), 12);
        assert_eq!(hecke_index(12), 24);
    }
}
