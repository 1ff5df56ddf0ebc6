//! q-expansion machinery for the j-function and its first three derivatives,
//! plus the order-3 differential expression Psi and its solved form eta.
//!
//! Coefficients are exact integers built from Eisenstein series divisor sums;
//! the jet is evaluated at a fundamental-domain representative and chain-ruled
//! back through the reducing matrix. Derivatives are with respect to z, with
//! all 2*pi*i factors included in the values.

use rug::ops::Pow;
use rug::{Complete, Float, Integer};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::halfplane::{reduce_fundamental, HPoint};
use crate::numerics::{pow2, two_pi_i, PrecComplex, PrecisionContext};

/// Values of j, j', j'', j''' at a point.
#[derive(Clone, Debug)]
pub struct JJet {
    pub j: PrecComplex,
    pub j1: PrecComplex,
    pub j2: PrecComplex,
    pub j3: PrecComplex,
}

fn series_mul(a: &[Integer], b: &[Integer], len: usize) -> Vec<Integer> {
    let mut out = vec![Integer::new(); len];
    for (i, ai) in a.iter().enumerate().take(len) {
        if *ai == 0 {
            continue;
        }
        for (k, bk) in b.iter().enumerate().take(len - i) {
            out[i + k] += (ai * bk).complete();
        }
    }
    out
}

/// Inverse of a power series with leading coefficient 1.
fn series_inv(a: &[Integer], len: usize) -> Vec<Integer> {
    debug_assert!(a[0] == 1);
    let mut out = vec![Integer::new(); len];
    out[0] = Integer::from(1);
    for n in 1..len {
        let mut s = Integer::new();
        for k in 1..=n.min(a.len() - 1) {
            s += (&a[k] * &out[n - k]).complete();
        }
        out[n] = -s;
    }
    out
}

fn divisor_power_sums(power: u32, len: usize) -> Vec<Integer> {
    let mut out = vec![Integer::new(); len];
    for d in 1..len {
        let dp = Integer::from(d).pow(power);
        let mut m = d;
        while m < len {
            out[m] += &dp;
            m += d;
        }
    }
    out
}

/// Coefficients of j from q^-1: index k holds the q^(k-1) coefficient.
fn compute_j_coeffs(terms: usize) -> Vec<Integer> {
    let len = terms + 1;
    let s3 = divisor_power_sums(3, len);
    let s5 = divisor_power_sums(5, len);
    let mut e4 = vec![Integer::new(); len];
    let mut e6 = vec![Integer::new(); len];
    e4[0] = Integer::from(1);
    e6[0] = Integer::from(1);
    for n in 1..len {
        e4[n] = (&s3[n] * &Integer::from(240)).complete();
        e6[n] = -(&s5[n] * &Integer::from(504)).complete();
    }
    let e4sq = series_mul(&e4, &e4, len);
    let e4cubed = series_mul(&e4sq, &e4, len);
    let e6sq = series_mul(&e6, &e6, len);
    // Delta = (E4^3 - E6^2)/1728 = q * disc, disc has leading coefficient 1
    let mut disc = vec![Integer::new(); len];
    for n in 1..len {
        let d = ((&e4cubed[n] - &e6sq[n]).complete()) / 1728u32;
        disc[n - 1] = d;
    }
    debug_assert!(disc[0] == 1);
    // j = q^-1 * E4^3 / disc
    series_mul(&e4cubed, &series_inv(&disc, len), len)
}

static J_COEFFS: RwLock<Option<Arc<Vec<Integer>>>> = RwLock::new(None);

/// j-series coefficients from q^-1 with at least `terms` entries, cached.
pub fn j_coefficients(terms: usize) -> Arc<Vec<Integer>> {
    {
        let guard = J_COEFFS.read().unwrap();
        if let Some(c) = guard.as_ref() {
            if c.len() >= terms {
                return Arc::clone(c);
            }
        }
    }
    let fresh = Arc::new(compute_j_coeffs(terms.max(16)));
    let mut guard = J_COEFFS.write().unwrap();
    match guard.as_ref() {
        Some(c) if c.len() >= fresh.len() => Arc::clone(c),
        _ => {
            *guard = Some(Arc::clone(&fresh));
            fresh
        }
    }
}

/// Smallest truncation order M >= 8 with
/// exp(-2 pi M y) * exp(4 pi sqrt(M)) <= 2^-(bits+16),
/// using the coefficient-growth bound |a_k| <= e^(4 pi sqrt(k)).
pub fn truncation_order(ctx: &PrecisionContext, im_reduced: &Float) -> usize {
    let y = im_reduced.to_f64();
    let target = -((ctx.bits() + 16) as f64) * std::f64::consts::LN_2;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut m = 8usize;
    while -two_pi * (m as f64) * y + 2.0 * two_pi * (m as f64).sqrt() > target {
        m += 1;
        if m > 1_000_000 {
            break;
        }
    }
    m
}

/// Evaluates sum_k k^t c_{k} q^k for t = 0..3 over k = -1..=M.
fn derivative_sums(coeffs: &[Integer], m: usize, q: &PrecComplex) -> [PrecComplex; 4] {
    let prec = q.prec();
    let qinv = q.recip();
    let mut sums = [
        PrecComplex::zero(prec),
        PrecComplex::zero(prec),
        PrecComplex::zero(prec),
        PrecComplex::zero(prec),
    ];
    // positive-power part by Horner on reversed coefficients, per power of k
    for t in 0..4usize {
        let mut acc = PrecComplex::zero(prec);
        for k in (0..=m).rev() {
            // c_{k} stored at index k+1
            let mut c = coeffs[k + 1].clone();
            for _ in 0..t {
                c *= Integer::from(k);
            }
            let cc = PrecComplex::from_real(Float::with_val(prec, &c));
            acc = &(&acc * q) + &cc;
        }
        // k = -1 term: (-1)^t * q^-1, coefficient c_{-1} = 1
        let lead = if t % 2 == 0 {
            qinv.clone()
        } else {
            -&qinv
        };
        sums[t] = &lead + &acc;
    }
    sums
}

/// Evaluates the jet of j at any half-plane point: reduce to the fundamental
/// domain, sum the q-series and its termwise q-derivatives, transport back
/// through the reducing matrix, and conjugate for lower-half-plane inputs.
pub fn jet(z: &HPoint, ctx: &PrecisionContext) -> Result<JJet> {
    let conjugate = !z.is_upper();
    let zp = if conjugate { z.conj() } else { z.clone() };
    let prec = ctx.working_prec();
    let (z0, gamma) = reduce_fundamental(&zp, ctx)?;
    let m = truncation_order(ctx, &z0.value().im);
    let coeffs = j_coefficients(m + 2);
    let tpi = two_pi_i(prec);
    let q = (&tpi * &z0.value().with_prec(prec)).exp();
    let sums = derivative_sums(&coeffs, m, &q);
    let j0 = sums[0].clone();
    // d/dz = 2 pi i * (q d/dq)
    let tpi2 = &tpi * &tpi;
    let tpi3 = &tpi2 * &tpi;
    let j1 = &sums[1] * &tpi;
    let j2 = &sums[2] * &tpi2;
    let j3 = &sums[3] * &tpi3;

    // transport through z = gamma z0: phi = c z0 + d
    let c = PrecComplex::from_real(Float::with_val(prec, &gamma.c));
    let phi = &(&c * &z0.value().with_prec(prec))
        + &PrecComplex::from_real(Float::with_val(prec, &gamma.d));
    let phi2 = phi.square();
    let phi3 = &phi2 * &phi;
    let phi4 = &phi2 * &phi2;
    let six = PrecComplex::from_int(prec, 6);
    let two = PrecComplex::from_int(prec, 2);
    let t1 = &j1 * &phi2;
    let t2 = &(&j2 * &phi4) + &(&(&two * &c) * &(&j1 * &phi3));
    let c2 = c.square();
    let t3 = &(&(&j3 * &phi4) * &phi2)
        + &(&(&six * &c) * &(&j2 * &(&phi4 * &phi)))
        + &(&(&six * &c2) * &(&j1 * &phi4));

    let jet = JJet {
        j: j0,
        j1: t1,
        j2: t2,
        j3: t3,
    };
    Ok(if conjugate {
        JJet {
            j: jet.j.conj(),
            j1: jet.j1.conj(),
            j2: jet.j2.conj(),
            j3: jet.j3.conj(),
        }
    } else {
        jet
    })
}

fn degeneracy(y0: &PrecComplex, y1: &PrecComplex) -> Option<String> {
    let prec = y0.prec();
    let eps = pow2(prec, -((prec / 2) as i32));
    if y1.abs() <= eps {
        return Some("j'(z) = 0".into());
    }
    if y0.abs() <= eps {
        return Some("j(z) = 0".into());
    }
    let prec2 = prec;
    let y0m = y0 - &PrecComplex::from_int(prec2, 1728);
    if y0m.abs() <= eps {
        return Some("j(z) = 1728".into());
    }
    None
}

/// The rational prefactor (y0^2 - 1968 y0 + 2654208) / (2 y0^2 (y0-1728)^2).
fn psi_prefactor(y0: &PrecComplex) -> PrecComplex {
    let prec = y0.prec();
    let c1968 = PrecComplex::from_int(prec, 1968);
    let c2654208 = PrecComplex::from_int(prec, 2654208);
    let c1728 = PrecComplex::from_int(prec, 1728);
    let num = &(&y0.square() - &(&c1968 * y0)) + &c2654208;
    let den = &(&PrecComplex::from_int(prec, 2) * &y0.square()) * &(y0 - &c1728).square();
    &num / &den
}

/// Psi(y0,y1,y2,y3) = y3/y1 - (3/2)(y2/y1)^2 + prefactor * y1^2.
/// Errors on the excluded values y1 = 0, y0 in {0, 1728}.
pub fn psi(
    y0: &PrecComplex,
    y1: &PrecComplex,
    y2: &PrecComplex,
    y3: &PrecComplex,
) -> Result<PrecComplex> {
    if let Some(cond) = degeneracy(y0, y1) {
        return Err(Error::Domain(format!(
            "Psi is not defined where {cond}"
        )));
    }
    let prec = y0.prec();
    let half3 = PrecComplex::from_real(Float::with_val(prec, 1.5f32));
    let r = &(y2 / y1).square() * &half3;
    Ok(&(&(y3 / y1) - &r) + &(&psi_prefactor(y0) * &y1.square()))
}

/// eta(y0,y1,y2) = (3/2) y2^2/y1 - prefactor * y1^3; the j''' value solved
/// from Psi = 0. Same exclusions as psi.
pub fn eta_j3(y0: &PrecComplex, y1: &PrecComplex, y2: &PrecComplex) -> Result<PrecComplex> {
    if let Some(cond) = degeneracy(y0, y1) {
        return Err(Error::Domain(format!(
            "eta is not defined where {cond}"
        )));
    }
    let prec = y0.prec();
    let half3 = PrecComplex::from_real(Float::with_val(prec, 1.5f32));
    let a = &(&y2.square() / y1) * &half3;
    let b = &psi_prefactor(y0) * &(&y1.square() * y1);
    Ok(&a - &b)
}

/// Writes the cached j coefficients as "SERIES j k numerator denominator"
/// lines (denominator always 1; the series is integral).
pub fn write_series_cache<W: Write>(mut w: W, terms: usize) -> Result<()> {
    let coeffs = j_coefficients(terms);
    for (idx, c) in coeffs.iter().enumerate().take(terms) {
        let k = idx as i64 - 1;
        writeln!(w, "SERIES j {} {} 1", k, c)?;
    }
    Ok(())
}

/// Reads a series cache and returns the named series keyed by exponent.
pub fn read_series_cache<R: BufRead>(r: R) -> Result<HashMap<String, HashMap<i64, Integer>>> {
    let mut out: HashMap<String, HashMap<i64, Integer>> = HashMap::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "SERIES" {
            return Err(Error::Parse(format!("bad series cache line: {line}")));
        }
        let k: i64 = parts[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad exponent in: {line}")))?;
        let num = Integer::from_str_radix(parts[3], 10)
            .map_err(|_| Error::Parse(format!("bad numerator in: {line}")))?;
        let den = Integer::from_str_radix(parts[4], 10)
            .map_err(|_| Error::Parse(format!("bad denominator in: {line}")))?;
        if den != 1 {
            return Err(Error::Parse("non-integral series coefficient".into()));
        }
        out.entry(parts[1].to_string()).or_default().insert(k, num);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::min_poly_guess;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(256).unwrap()
    }

    fn pt(re: f64, im: f64) -> HPoint {
        HPoint::from_f64(320, re, im).unwrap()
    }

    #[test]
    fn first_j_coefficients() {
        let c = j_coefficients(6);
        let expect: [i64; 6] = [1, 744, 196884, 21493760, 864299970, 20245856256];
        for (k, e) in expect.iter().enumerate() {
            assert_eq!(c[k], *e, "coefficient q^{}", k as i64 - 1);
        }
    }

    #[test]
    fn truncation_order_cases() {
        let c128 = PrecisionContext::new(128).unwrap();
        let c256 = PrecisionContext::new(256).unwrap();
        let c64 = PrecisionContext::new(64).unwrap();
        let root32 = Float::with_val(64, 3).sqrt() / 2u32;
        let m128 = truncation_order(&c128, &root32);
        assert!((20..60).contains(&m128), "m128 = {m128}");
        assert_eq!(truncation_order(&c64, &Float::with_val(64, 10)), 8);
        assert!(truncation_order(&c256, &root32) > m128);
    }

    #[test]
    fn j_special_values() {
        let c = ctx();
        let j_i = jet(&pt(0.0, 1.0), &c).unwrap();
        let target = PrecComplex::from_int(320, 1728);
        assert!((&j_i.j - &target).abs() < pow2(320, -120));
        assert!(j_i.j1.abs() < pow2(320, -120));

        let prec = 320;
        let rho = HPoint::new(PrecComplex::new(
            Float::with_val(prec, 0.5),
            Float::with_val(prec, 3).sqrt() / 2u32,
        ))
        .unwrap();
        let j_rho = jet(&rho, &c).unwrap();
        assert!(j_rho.j.abs() < pow2(320, -120));

        let j_2i = jet(&pt(0.0, 2.0), &c).unwrap();
        let target = PrecComplex::from_int(320, 287496);
        assert!((&j_2i.j - &target).abs() < pow2(320, -110));
    }

    #[test]
    fn j_sqrt2_minpoly() {
        // dual-precision oracle for j(i sqrt 2) = 8000
        for bits in [256u32, 320] {
            let c = PrecisionContext::new(bits).unwrap();
            let prec = c.working_prec();
            let z = HPoint::new(PrecComplex::new(
                Float::new(prec),
                Float::with_val(prec, 2).sqrt(),
            ))
            .unwrap();
            let jz = jet(&z, &c).unwrap();
            let p = min_poly_guess(&jz.j, 2, &c).unwrap().unwrap();
            assert_eq!(p.coeffs.len(), 2);
            assert_eq!(p.coeffs[0], -8000);
            assert_eq!(p.coeffs[1], 1);
        }
    }

    #[test]
    fn periodicity() {
        let c = ctx();
        let z = pt(0.3, 1.2);
        let shifted = HPoint::new(PrecComplex::new(
            z.value().re.clone() + 1u32,
            z.value().im.clone(),
        ))
        .unwrap();
        let a = jet(&z, &c).unwrap();
        let b = jet(&shifted, &c).unwrap();
        for (x, y) in [(&a.j, &b.j), (&a.j1, &b.j1), (&a.j2, &b.j2), (&a.j3, &b.j3)] {
            assert!((x - y).abs() < pow2(320, -110), "component differs");
        }
    }

    #[test]
    fn schwarz_reflection() {
        let c = ctx();
        let up = jet(&pt(0.27, 1.3), &c).unwrap();
        let down = jet(&pt(0.27, -1.3), &c).unwrap();
        assert!((&down.j - &up.j.conj()).abs() < pow2(320, -110));
        assert!((&down.j1 - &up.j1.conj()).abs().to_f64() < 1e-25);
    }

    #[test]
    fn psi_vanishes_on_the_jet() {
        let c = ctx();
        let jj = jet(&pt(0.5, 2.0), &c).unwrap();
        let r = psi(&jj.j, &jj.j1, &jj.j2, &jj.j3).unwrap();
        // scale by the size of the largest term in Psi
        let scale = jj.j3.abs() / jj.j1.abs();
        assert!(r.abs() / scale < pow2(320, -100));
    }

    #[test]
    fn psi_eta_rational_point() {
        let prec = 256;
        let y0 = PrecComplex::from_int(prec, 2);
        let y1 = PrecComplex::from_int(prec, 1);
        let y2 = PrecComplex::zero(prec);
        let y3 = PrecComplex::zero(prec);
        let v = psi(&y0, &y1, &y2, &y3).unwrap();
        // 2650276 / 23832608 by direct evaluation of the displayed formula
        let expect = Float::with_val(prec, 2650276u32) / Float::with_val(prec, 23832608u32);
        assert!((v.re.clone() - expect.clone()).abs() < pow2(prec, -200));
        let e = eta_j3(&y0, &y1, &y2).unwrap();
        assert!((e.re.clone() + expect).abs() < pow2(prec, -200));
        // psi(y0,y1,y2,eta(y0,y1,y2)) = 0 identically
        let back = psi(&y0, &y1, &y2, &e).unwrap();
        assert!(back.abs() < pow2(prec, -200));
    }

    #[test]
    fn psi_domain_errors() {
        let prec = 256;
        let bad = psi(
            &PrecComplex::from_int(prec, 1728),
            &PrecComplex::from_int(prec, 1),
            &PrecComplex::zero(prec),
            &PrecComplex::zero(prec),
        );
        assert!(matches!(bad, Err(Error::Domain(_))));
        let bad = eta_j3(
            &PrecComplex::from_int(prec, 5),
            &PrecComplex::zero(prec),
            &PrecComplex::from_int(prec, 1),
        );
        assert!(matches!(bad, Err(Error::Domain(_))));
    }

    #[test]
    fn eta_matches_series_j3() {
        let c = ctx();
        let jj = jet(&pt(0.5, 2.0), &c).unwrap();
        let e = eta_j3(&jj.j, &jj.j1, &jj.j2).unwrap();
        let rel = (&e - &jj.j3).abs() / jj.j3.abs();
        assert!(rel < pow2(320, -100));
    }

    #[test]
    fn gradient_check_j1() {
        let c = ctx();
        let bits = c.bits() as i32;
        let h = pow2(c.working_prec(), -(bits / 3));
        let z = pt(0.21, 1.37);
        let zp = HPoint::new(PrecComplex::new(
            z.value().re.clone() + &h,
            z.value().im.clone(),
        ))
        .unwrap();
        let zm = HPoint::new(PrecComplex::new(
            z.value().re.clone() - &h,
            z.value().im.clone(),
        ))
        .unwrap();
        let jp = jet(&zp, &c).unwrap();
        let jm = jet(&zm, &c).unwrap();
        let jc = jet(&z, &c).unwrap();
        let fd = (&jp.j - &jm.j).scale(&(Float::with_val(c.working_prec(), 0.5) / &h));
        let rel = (&fd - &jc.j1).abs() / jc.j1.abs();
        assert!(rel < pow2(c.working_prec(), -(bits / 4)), "rel = {}", rel);
    }

    #[test]
    fn sl2_invariance_random_heights() {
        use crate::halfplane::{act, GL2Q};
        let c = ctx();
        let z = pt(0.13, 1.42);
        let base = jet(&z, &c).unwrap();
        for g in [
            GL2Q::from_ints(1, 7, 0, 1).unwrap(),
            GL2Q::from_ints(2, 1, 1, 1).unwrap(),
            GL2Q::from_ints(5, 2, 2, 1).unwrap(),
        ] {
            let w = act(&g, &z);
            let moved = jet(&w, &c).unwrap();
            let scale = Float::with_val(320, 1) + base.j.abs();
            assert!((&moved.j - &base.j).abs() / scale < pow2(320, -110));
        }
    }

    #[test]
    fn series_cache_roundtrip() {
        let mut buf = Vec::new();
        write_series_cache(&mut buf, 10).unwrap();
        let parsed = read_series_cache(&buf[..]).unwrap();
        let j = &parsed["j"];
        assert_eq!(j[&-1], 1);
        assert_eq!(j[&0], 744);
        assert_eq!(j[&1], 196884);
    }
}
