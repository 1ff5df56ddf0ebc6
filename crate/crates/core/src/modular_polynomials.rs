//! Classical modular polynomials Phi_N: construction by q-expansion of the
//! product over Hecke representatives, integer rounding with verification,
//! scaled-tolerance vanishing tests, and the orbit count dim_G.

use rug::ops::Pow;
use rug::{Complete, Float, Integer};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::halfplane::{find_modular_relation, hecke_representatives, GL2Q, HPoint};
use crate::modular_forms::{j_coefficients, jet};
use crate::numerics::{pow2, two_pi_i, PrecComplex, PrecisionContext};

/// Default ceiling on levels computed from scratch; larger levels must come
/// from an imported cache file.
pub const LEVEL_CEILING: u32 = 12;

/// An integer bivariate polynomial, sparse over (x-degree, y-degree).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModularPolynomial {
    pub level: u32,
    pub coeffs: BTreeMap<(u32, u32), Integer>,
}

impl ModularPolynomial {
    pub fn deg_x(&self) -> u32 {
        self.coeffs.keys().map(|k| k.0).max().unwrap_or(0)
    }

    pub fn deg_y(&self) -> u32 {
        self.coeffs.keys().map(|k| k.1).max().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.coeffs.keys().map(|k| k.0 + k.1).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.coeffs
            .iter()
            .all(|(&(i, j), c)| self.coeffs.get(&(j, i)) == Some(c))
    }

    /// Exact integer evaluation.
    pub fn eval_int(&self, x: &Integer, y: &Integer) -> Integer {
        let mut acc = Integer::new();
        for (&(i, j), c) in &self.coeffs {
            acc += c * x.clone().pow(i) * y.clone().pow(j);
        }
        acc
    }

    /// Horner evaluation in x, inner Horner in y, at the precision of the
    /// inputs.
    pub fn eval(&self, x: &PrecComplex, y: &PrecComplex) -> PrecComplex {
        let prec = x.prec().max(y.prec());
        let degx = self.deg_x();
        let mut acc = PrecComplex::zero(prec);
        for i in (0..=degx).rev() {
            // row i as a polynomial in y, Horner from the top
            let degy_i = self
                .coeffs
                .keys()
                .filter(|k| k.0 == i)
                .map(|k| k.1)
                .max();
            let mut row = PrecComplex::zero(prec);
            if let Some(degy_i) = degy_i {
                for j in (0..=degy_i).rev() {
                    row = &row * y;
                    if let Some(c) = self.coeffs.get(&(i, j)) {
                        row = &row + &PrecComplex::from_real(Float::with_val(prec, c));
                    }
                }
            }
            acc = &(&acc * x) + &row;
        }
        acc
    }

    /// The scale 1 + sum |c_ij| max(|x|,1)^i max(|y|,1)^j used for tolerance
    /// tests; a term-wise bound on the evaluation magnitude.
    pub fn eval_scale(&self, x: &PrecComplex, y: &PrecComplex) -> Float {
        let prec = x.prec().max(y.prec());
        let one = Float::with_val(prec, 1);
        let xm = x.abs().max(&one);
        let ym = y.abs().max(&one);
        let mut acc = Float::with_val(prec, 1);
        for (&(i, j), c) in &self.coeffs {
            let t = Float::with_val(prec, c.clone().abs())
                * xm.clone().pow(i)
                * ym.clone().pow(j);
            acc += t;
        }
        acc
    }
}

/// Laurent series in Q = q^(1/N): coefficient k corresponds to exponent
/// min + k.
struct QSeries {
    min: i64,
    c: Vec<PrecComplex>,
}

impl QSeries {
    fn zero(prec: u32) -> Self {
        QSeries {
            min: 0,
            c: vec![PrecComplex::zero(prec)],
        }
    }

    fn one(prec: u32) -> Self {
        QSeries {
            min: 0,
            c: vec![PrecComplex::from_int(prec, 1)],
        }
    }

    fn coeff(&self, e: i64) -> Option<&PrecComplex> {
        let idx = e - self.min;
        if idx < 0 {
            None
        } else {
            self.c.get(idx as usize)
        }
    }

    fn sub(&self, rhs: &QSeries, prec: u32) -> QSeries {
        let min = self.min.min(rhs.min);
        let max = (self.min + self.c.len() as i64).max(rhs.min + rhs.c.len() as i64);
        let mut c = Vec::with_capacity((max - min) as usize);
        for e in min..max {
            let z = PrecComplex::zero(prec);
            let a = self.coeff(e).unwrap_or(&z);
            let b = rhs.coeff(e).unwrap_or(&z);
            c.push(a - b);
        }
        QSeries { min, c }
    }

    /// Product truncated to exponents <= hi.
    fn mul_trunc(&self, rhs: &QSeries, hi: i64, prec: u32) -> QSeries {
        let min = self.min + rhs.min;
        let len = ((hi - min + 1).max(1)) as usize;
        let mut c = vec![PrecComplex::zero(prec); len];
        for (i, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let ea = self.min + i as i64;
            for (k, b) in rhs.c.iter().enumerate() {
                let e = ea + rhs.min + k as i64;
                if e > hi {
                    break;
                }
                let idx = (e - min) as usize;
                c[idx] = &c[idx] + &(a * b);
            }
        }
        QSeries { min, c }
    }
}

/// q^(1/N)-expansion of j((a tau + b)/d) for a Hecke triple, to exponents
/// <= hi.
fn hecke_j_series(n: u32, a: u32, b: u32, d: u32, hi: i64, prec: u32) -> QSeries {
    debug_assert_eq!(a * d, n);
    let step = (a as i64) * (a as i64);
    let kmax = (hi / step).max(0) as usize;
    let coeffs = j_coefficients(kmax + 2);
    // roots of unity zeta_d^t
    let mut zetas = Vec::with_capacity(d as usize);
    let tpi = two_pi_i(prec);
    for t in 0..d {
        let arg = tpi.scale(&(Float::with_val(prec, t) / Float::with_val(prec, d)));
        zetas.push(arg.exp());
    }
    let min = -step;
    let len = (hi - min + 1) as usize;
    let mut c = vec![PrecComplex::zero(prec); len];
    for k in -1i64..=(kmax as i64) {
        let e = k * step;
        if e > hi {
            break;
        }
        let ck = &coeffs[(k + 1) as usize];
        let t = (k.rem_euclid(d as i64) * b as i64).rem_euclid(d as i64) as usize;
        let z = zetas[t].scale_int(ck);
        let idx = (e - min) as usize;
        c[idx] = &c[idx] + &z;
    }
    QSeries { min, c }
}

/// Exact integer q-series of j^e for e = 0..=emax; out[p] starts at q^-p and
/// entry f is the coefficient of q^(f - p), kept through q^headroom so later
/// powers stay exact down to the constant term.
fn j_power_series(emax: usize, headroom: usize) -> Vec<Vec<Integer>> {
    let base = j_coefficients(emax + headroom + 2);
    let mut out: Vec<Vec<Integer>> = Vec::with_capacity(emax + 1);
    out.push(vec![Integer::from(1)]); // j^0 = 1 at q^0
    for p in 1..=emax {
        let prev = &out[p - 1];
        let keep = p + headroom;
        let mut next = vec![Integer::new(); keep + 1];
        for (i, pi_) in prev.iter().enumerate() {
            // prev exponent i - (p-1); base exponent k - 1; next exponent f - p
            for (k, bk) in base.iter().enumerate() {
                let f = i as i64 + k as i64;
                if f > keep as i64 {
                    break;
                }
                next[f as usize] += (pi_ * bk).complete();
            }
        }
        out.push(next);
    }
    out
}

fn working_prec_for(n: u32, psi: usize, hi: i64, ctx: &PrecisionContext) -> u32 {
    let logn = (n.max(2) as f64).log2();
    let coeff_bits = 16.0 * psi as f64 * logn;
    let series_bits = 4.0 * std::f64::consts::PI * (hi.max(1) as f64).sqrt() / std::f64::consts::LN_2;
    ctx.working_prec().max(256 + (coeff_bits + series_bits) as u32)
}

static PHI_CACHE: RwLock<Option<HashMap<u32, Arc<ModularPolynomial>>>> = RwLock::new(None);

fn cache_get(n: u32) -> Option<Arc<ModularPolynomial>> {
    PHI_CACHE
        .read()
        .unwrap()
        .as_ref()
        .and_then(|m| m.get(&n).cloned())
}

fn cache_put(p: ModularPolynomial) -> Arc<ModularPolynomial> {
    let n = p.level;
    let arc = Arc::new(p);
    let mut guard = PHI_CACHE.write().unwrap();
    guard
        .get_or_insert_with(HashMap::new)
        .entry(n)
        .or_insert_with(|| Arc::clone(&arc))
        .clone()
}

/// Installs an externally computed polynomial (e.g. from a cache file) so
/// phi_eval can use levels above the computation ceiling.
pub fn install_phi(p: ModularPolynomial) {
    cache_put(p);
}

fn round_to_integer(f: &Float) -> Integer {
    f.clone().round().to_integer().unwrap_or_default()
}

/// Computes Phi_N by expanding prod over Hecke representatives of
/// (X - j((a tau + b)/d)) in Q = q^(1/N), eliminating leading terms against
/// integer powers of the j-series, and rounding. Verifies symmetry, the
/// rounding budget, and numeric vanishing on (j(Nz), j(z)) pairs.
pub fn compute_phi(n: u32, ctx: &PrecisionContext) -> Result<Arc<ModularPolynomial>> {
    if n == 0 {
        return Err(Error::InvalidArgument("level must be positive".into()));
    }
    if let Some(p) = cache_get(n) {
        return Ok(p);
    }
    if n > LEVEL_CEILING {
        return Err(Error::UnsupportedLevel(n));
    }
    if n == 1 {
        let mut coeffs = BTreeMap::new();
        coeffs.insert((1, 0), Integer::from(1));
        coeffs.insert((0, 1), Integer::from(-1));
        return Ok(cache_put(ModularPolynomial { level: 1, coeffs }));
    }

    let reps = hecke_representatives(n);
    let psi = reps.len();
    let s_total: i64 = reps.iter().map(|r| (r.0 as i64) * (r.0 as i64)).sum();
    let hi = s_total + n as i64 + 1;
    let prec = working_prec_for(n, psi, hi, ctx);

    // polynomial in X with QSeries coefficients, low X-degree first
    let mut poly: Vec<QSeries> = vec![QSeries::one(prec)];
    for &(a, b, d) in &reps {
        let ji = hecke_j_series(n, a, b, d, hi, prec);
        let mut next: Vec<QSeries> = Vec::with_capacity(poly.len() + 1);
        for m in 0..=poly.len() {
            let shifted = if m >= 1 {
                Some(&poly[m - 1])
            } else {
                None
            };
            let prod = if m < poly.len() {
                Some(poly[m].mul_trunc(&ji, hi, prec))
            } else {
                None
            };
            next.push(match (shifted, prod) {
                (Some(s), Some(p)) => s.sub(&p, prec),
                (Some(s), None) => QSeries {
                    min: s.min,
                    c: s.c.clone(),
                },
                (None, Some(p)) => QSeries::zero(prec).sub(&p, prec),
                (None, None) => unreachable!(),
            });
        }
        poly = next;
    }

    // eliminate each X-coefficient against integer powers of the j-series
    let e_cap = (s_total / n as i64) as usize + 1;
    let jpows = j_power_series(e_cap, e_cap + 2);
    let mut coeffs: BTreeMap<(u32, u32), Integer> = BTreeMap::new();
    coeffs.insert((psi as u32, 0), Integer::from(1));
    let mut max_residual = Float::new(prec);
    let budget = pow2(prec, -16);
    for (m, series) in poly.iter().enumerate().take(psi) {
        // read off q-coefficients (exponents divisible by n); other slots
        // must vanish within the budget
        let e_low = (-series.min).div_euclid(n as i64).max(0) as usize;
        let mut t: Vec<PrecComplex> = (0..=e_low)
            .map(|e| {
                series
                    .coeff(-(e as i64) * n as i64)
                    .cloned()
                    .unwrap_or_else(|| PrecComplex::zero(prec))
            })
            .collect();
        for (idx, v) in series.c.iter().enumerate() {
            let exp = series.min + idx as i64;
            if exp <= 0 && exp.rem_euclid(n as i64) != 0 {
                max_residual = max_residual.max(&v.abs());
            }
        }
        for e in (0..=e_low).rev() {
            let alpha = &t[e];
            max_residual = max_residual.max(&alpha.im.clone().abs());
            let u = round_to_integer(&alpha.re);
            let frac = (alpha.re.clone() - Float::with_val(prec, &u)).abs();
            max_residual = max_residual.max(&frac);
            if u != 0 {
                for f in 0..=e {
                    // j^e coefficient of q^-f sits at index e - f
                    let jc = &jpows[e][e - f];
                    if *jc != 0 {
                        let delta = PrecComplex::from_real(Float::with_val(prec, (&u * jc).complete()));
                        t[f] = &t[f] - &delta;
                    }
                }
                coeffs.insert((m as u32, e as u32), u);
            }
        }
    }

    if max_residual > budget {
        return Err(Error::PrecisionExhausted(format!(
            "Phi_{} rounding residual {:e} exceeds budget; retry with more bits",
            n, max_residual
        )));
    }
    let phi = ModularPolynomial { level: n, coeffs };
    if !phi.is_symmetric() {
        return Err(Error::Validation(format!("Phi_{} failed symmetry", n)));
    }
    if phi.deg_x() as usize != psi {
        return Err(Error::Validation(format!(
            "Phi_{} X-degree {} != psi(N) = {}",
            n,
            phi.deg_x(),
            psi
        )));
    }
    // numeric vanishing at three points
    for (re, im) in [(0.11, 1.05), (-0.23, 1.31), (0.41, 0.93)] {
        let z = HPoint::from_f64(ctx.working_prec(), re, im)?;
        let nz = HPoint::new(z.value().scale(&Float::with_val(ctx.working_prec(), n)))?;
        let jz = jet(&z, ctx)?.j;
        let jnz = jet(&nz, ctx)?.j;
        let v = phi.eval(&jnz, &jz);
        let scale = phi.eval_scale(&jnz, &jz);
        if v.abs() > ctx.tol.clone() * &scale {
            return Err(Error::Validation(format!(
                "Phi_{} does not vanish on (j(Nz), j(z)) at z = {}",
                n, z
            )));
        }
    }
    Ok(cache_put(phi))
}

/// Evaluates Phi_N(x, y) at working precision; levels above the ceiling must
/// already be cached (e.g. imported).
pub fn phi_eval(
    n: u32,
    x: &PrecComplex,
    y: &PrecComplex,
    ctx: &PrecisionContext,
) -> Result<PrecComplex> {
    let phi = match cache_get(n) {
        Some(p) => p,
        None if n <= LEVEL_CEILING => compute_phi(n, ctx)?,
        None => return Err(Error::UnsupportedLevel(n)),
    };
    let prec = ctx.working_prec();
    Ok(phi.eval(&x.with_prec(prec), &y.with_prec(prec)))
}

/// Tests |Phi_N(x,y)| <= tol * (1 + sum|coeff| * max(|x|,|y|,1)^deg).
pub fn phi_vanishes(
    n: u32,
    x: &PrecComplex,
    y: &PrecComplex,
    ctx: &PrecisionContext,
) -> Result<bool> {
    let phi = match cache_get(n) {
        Some(p) => p,
        None if n <= LEVEL_CEILING => compute_phi(n, ctx)?,
        None => return Err(Error::UnsupportedLevel(n)),
    };
    let prec = ctx.working_prec();
    let xv = x.with_prec(prec);
    let yv = y.with_prec(prec);
    let v = phi.eval(&xv, &yv);
    Ok(v.abs() <= ctx.tol.clone() * &phi.eval_scale(&xv, &yv))
}

/// One-sided modular independence test: scans N = 1..nmax for a vanishing
/// Phi_N; returns (true, None) when none vanishes ("independent up to nmax").
pub fn modularly_independent(
    x: &PrecComplex,
    y: &PrecComplex,
    ctx: &PrecisionContext,
) -> Result<(bool, Option<u32>)> {
    for n in 1..=ctx.nmax {
        if phi_vanishes(n, x, y, ctx)? {
            return Ok((false, Some(n)));
        }
    }
    Ok((true, None))
}

/// Orbit partition produced by dim_G: blocks of point indices (indices into
/// points followed by base) and verified pair witnesses.
#[derive(Clone, Debug)]
pub struct OrbitPartition {
    pub blocks: Vec<Vec<usize>>,
    pub witnesses: Vec<((usize, usize), (GL2Q, u32))>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let r = self.find(self.parent[i]);
            self.parent[i] = r;
        }
        self.parent[i]
    }
    fn union(&mut self, i: usize, j: usize) {
        let (ri, rj) = (self.find(i), self.find(j));
        if ri != rj {
            self.parent[ri.max(rj)] = ri.min(rj);
        }
    }
}

/// Number of GL2(Q)-orbits among `points` that contain no point of `base`,
/// with the partition over points ++ base and the modular witnesses found.
pub fn dim_g(
    points: &[HPoint],
    base: &[HPoint],
    ctx: &PrecisionContext,
) -> Result<(usize, OrbitPartition)> {
    let all: Vec<&HPoint> = points.iter().chain(base.iter()).collect();
    let n = all.len();
    let mut uf = UnionFind::new(n);
    let mut witnesses = Vec::new();
    for i in 0..n {
        for k in (i + 1)..n {
            if uf.find(i) == uf.find(k) {
                continue;
            }
            if let Some((g, level)) = find_modular_relation(all[i], all[k], ctx)? {
                uf.union(i, k);
                witnesses.push(((i, k), (g, level)));
            }
        }
    }
    let mut blocks_map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        blocks_map.entry(uf.find(i)).or_default().push(i);
    }
    let blocks: Vec<Vec<usize>> = blocks_map.into_values().collect();
    let count = blocks
        .iter()
        .filter(|b| {
            b.iter().any(|&i| i < points.len()) && b.iter().all(|&i| i < points.len())
        })
        .count();
    Ok((count, OrbitPartition { blocks, witnesses }))
}

/// Writes one polynomial in the bit-exact cache format.
pub fn write_phi_cache<W: Write>(mut w: W, phi: &ModularPolynomial) -> Result<()> {
    writeln!(w, "PHI {} {} {}", phi.level, phi.deg_x(), phi.deg_y())?;
    for (&(i, j), c) in &phi.coeffs {
        writeln!(w, "{} {} {}", i, j, c)?;
    }
    writeln!(w, "END")?;
    Ok(())
}

/// Reads any number of cache blocks.
pub fn read_phi_cache<R: BufRead>(r: R) -> Result<Vec<ModularPolynomial>> {
    let mut out = Vec::new();
    let mut current: Option<ModularPolynomial> = None;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("PHI ") {
            if current.is_some() {
                return Err(Error::Parse("PHI header inside unterminated block".into()));
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("bad PHI header: {line}")));
            }
            let level: u32 = parts[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad level: {line}")))?;
            current = Some(ModularPolynomial {
                level,
                coeffs: BTreeMap::new(),
            });
        } else if line == "END" {
            match current.take() {
                Some(p) => out.push(p),
                None => return Err(Error::Parse("END without PHI header".into())),
            }
        } else {
            let p = current
                .as_mut()
                .ok_or_else(|| Error::Parse("coefficient line outside block".into()))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("bad coefficient line: {line}")));
            }
            let i: u32 = parts[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad x-degree: {line}")))?;
            let j: u32 = parts[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad y-degree: {line}")))?;
            let c = Integer::from_str_radix(parts[2], 10)
                .map_err(|_| Error::Parse(format!("bad coefficient: {line}")))?;
            p.coeffs.insert((i, j), c);
        }
    }
    if current.is_some() {
        return Err(Error::Parse("unterminated PHI block".into()));
    }
    Ok(out)
}
