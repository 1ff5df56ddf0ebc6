//! Khovanskii systems of j-polynomials: formal Jacobians with a numeric
//! nonsingularity gate, damped multi-start Newton solving over the half-plane,
//! certificate verification, iterated-j system construction, and
//! argument-principle EC solvers for plane curves under j and exp.

use rug::Float;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::halfplane::{find_modular_relation, GL2Q, HPoint};
use crate::jpolynomial::{jp_diff, jp_parse_xy, GaussRat, Gen, JAssignment, JPoly};
use crate::modular_forms::jet;
use crate::numerics::{pow2, PrecComplex, PrecisionContext};

/// A square system of j-polynomials in X1..Xn.
#[derive(Clone, Debug)]
pub struct KhovanskiiSystem {
    pub n: usize,
    pub polys: Vec<JPoly>,
}

impl KhovanskiiSystem {
    pub fn new(polys: Vec<JPoly>) -> Result<Self> {
        let n = polys.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty system".into()));
        }
        for p in &polys {
            if let Some(&k) = p.variables().iter().max() {
                if k >= n {
                    return Err(Error::InvalidArgument(format!(
                        "system of {} equations references X{}",
                        n,
                        k + 1
                    )));
                }
            }
        }
        let polys = polys
            .into_iter()
            .map(|mut p| {
                p.nvars = n;
                p
            })
            .collect();
        Ok(KhovanskiiSystem { n, polys })
    }

    /// True when the system is a single equation in j(X1) and constants only.
    fn is_pure_j_single(&self) -> bool {
        self.n == 1
            && self.polys[0]
                .terms
                .keys()
                .flat_map(|m| m.keys())
                .all(|g| matches!(g, Gen::J(0, 0, None)))
    }
}

/// A certified or singular numeric solution.
#[derive(Clone, Debug)]
pub struct Solution {
    pub points: Vec<PrecComplex>,
    pub residual: Float,
    pub jac_smallest_sv: Float,
    pub nonsingular: bool,
}

/// Search-region and iteration parameters shared by the solvers.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub im_min: f64,
    pub im_max: f64,
    pub grid_density: usize,
    pub damping: f64,
    pub max_iter: usize,
    /// extra start regions for Newton, as images of the base strip
    pub translates: Vec<GL2Q>,
    /// horizontal strip shifts searched by the curve solvers
    pub strip_shifts: Vec<i64>,
    /// half-width of the square search box for the exp solver
    pub exp_halfwidth: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            im_min: 0.25,
            im_max: 10.0,
            grid_density: 3,
            damping: 1.0,
            max_iter: 80,
            translates: vec![GL2Q::identity()],
            strip_shifts: vec![0],
            exp_halfwidth: 4.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.im_min <= 0.0 || self.im_max <= self.im_min {
            return Err(Error::InvalidArgument(
                "strip requires 0 < im_min < im_max".into(),
            ));
        }
        if self.grid_density == 0 {
            return Err(Error::InvalidArgument("grid density must be >= 1".into()));
        }
        if self.damping <= 0.0 || self.damping > 1.0 {
            return Err(Error::InvalidArgument("damping must be in (0, 1]".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// small dense linear algebra at working precision

/// Solves A x = b by Gaussian elimination with partial pivoting; None when a
/// pivot vanishes outright.
fn solve_linear(
    mut a: Vec<Vec<PrecComplex>>,
    mut b: Vec<PrecComplex>,
) -> Option<Vec<PrecComplex>> {
    let n = a.len();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col][col].abs();
        for (r, row) in a.iter().enumerate().skip(col + 1) {
            let v = row[col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best.is_zero() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for r in (col + 1)..n {
            let factor = &a[r][col] * &inv;
            if factor.is_zero() {
                continue;
            }
            for c in col..n {
                let t = &factor * &a[col][c];
                a[r][c] = &a[r][c] - &t;
            }
            let t = &factor * &b[col];
            b[r] = &b[r] - &t;
        }
    }
    let prec = b[0].prec();
    let mut x = vec![PrecComplex::zero(prec); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for c in (row + 1)..n {
            let t = &a[row][c] * &x[c];
            acc = &acc - &t;
        }
        x[row] = &acc / &a[row][row];
    }
    Some(x)
}

fn determinant(mut a: Vec<Vec<PrecComplex>>, prec: u32) -> PrecComplex {
    let n = a.len();
    let mut det = PrecComplex::from_int(prec, 1);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col][col].abs();
        for (r, row) in a.iter().enumerate().skip(col + 1) {
            let v = row[col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best.is_zero() {
            return PrecComplex::zero(prec);
        }
        if piv != col {
            a.swap(col, piv);
            det = -&det;
        }
        det = &det * &a[col][col];
        let inv = a[col][col].recip();
        for r in (col + 1)..n {
            let factor = &a[r][col] * &inv;
            for c in col..n {
                let t = &factor * &a[col][c];
                a[r][c] = &a[r][c] - &t;
            }
        }
    }
    det
}

/// All singular values of a complex r x n matrix via cyclic Jacobi on the
/// real symmetric embedding of A^H A, sorted descending. Each complex
/// singular value appears twice (the embedding doubles multiplicities).
pub(crate) fn embedded_singular_values(a: &[Vec<PrecComplex>], prec: u32) -> Vec<Float> {
    let n = a[0].len();
    // H = A^H A (Hermitian)
    let mut h = vec![vec![PrecComplex::zero(prec); n]; n];
    for (i, hrow) in h.iter_mut().enumerate() {
        for (k, hik) in hrow.iter_mut().enumerate() {
            let mut acc = PrecComplex::zero(prec);
            for arow in a {
                acc = &acc + &(&arow[i].conj() * &arow[k]);
            }
            *hik = acc;
        }
    }
    // real symmetric embedding M = [[X, -Y], [Y, X]] for H = X + iY
    let m2 = 2 * n;
    let mut m = vec![vec![Float::new(prec); m2]; m2];
    for i in 0..n {
        for k in 0..n {
            m[i][k] = h[i][k].re.clone();
            m[i + n][k + n] = h[i][k].re.clone();
            m[i][k + n] = -h[i][k].im.clone();
            m[i + n][k] = h[i][k].im.clone();
        }
    }
    // cyclic Jacobi sweeps
    let eps = pow2(prec, -(prec as i32) + 8);
    for _sweep in 0..40 {
        let mut off = Float::new(prec);
        for p in 0..m2 {
            for q in (p + 1)..m2 {
                off += m[p][q].clone().square();
            }
        }
        if off.sqrt() < eps {
            break;
        }
        for p in 0..m2 {
            for q in (p + 1)..m2 {
                if m[p][q].clone().abs().is_zero() {
                    continue;
                }
                let theta: Float =
                    (m[q][q].clone() - &m[p][p]) / (Float::with_val(prec, 2) * &m[p][q]);
                // t = sign(theta) / (|theta| + sqrt(theta^2 + 1))
                let t: Float = {
                    let root = (theta.clone().square() + 1u32).sqrt();
                    let denom = theta.clone().abs() + root;
                    let raw = denom.recip();
                    if theta < 0 {
                        -raw
                    } else {
                        raw
                    }
                };
                let c = (t.clone().square() + 1u32).sqrt().recip();
                let s = t.clone() * &c;
                for k in 0..m2 {
                    let mpk = m[p][k].clone();
                    let mqk = m[q][k].clone();
                    m[p][k] = c.clone() * &mpk - s.clone() * &mqk;
                    m[q][k] = s.clone() * &mpk + c.clone() * &mqk;
                }
                for k in 0..m2 {
                    let mkp = m[k][p].clone();
                    let mkq = m[k][q].clone();
                    m[k][p] = c.clone() * &mkp - s.clone() * &mkq;
                    m[k][q] = s.clone() * &mkp + c.clone() * &mkq;
                }
            }
        }
    }
    let mut svs: Vec<Float> = m
        .iter()
        .enumerate()
        .map(|(i, row)| row[i].clone().max(&Float::new(prec)).sqrt())
        .collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    svs
}

/// (smallest, largest) singular value of a square complex matrix.
fn singular_value_range(a: &[Vec<PrecComplex>], prec: u32) -> (Float, Float) {
    let svs = embedded_singular_values(a, prec);
    (svs.last().unwrap().clone(), svs[0].clone())
}

// ---------------------------------------------------------------------------
// Jacobians and certificates

fn assignment_from(points: &[PrecComplex]) -> Result<JAssignment> {
    let mut a = JAssignment::new();
    for (k, z) in points.iter().enumerate() {
        a.set(k, HPoint::new(z.clone())?);
    }
    Ok(a)
}

fn formal_jacobian(s: &KhovanskiiSystem) -> Result<Vec<Vec<JPoly>>> {
    s.polys
        .iter()
        .map(|p| (0..s.n).map(|k| jp_diff(p, k)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Evaluates the Jacobian matrix [df_i/dX_k] at an assignment, returning the
/// matrix, its determinant and its smallest singular value.
pub fn jacobian(
    s: &KhovanskiiSystem,
    a: &JAssignment,
    ctx: &PrecisionContext,
) -> Result<(Vec<Vec<PrecComplex>>, PrecComplex, Float)> {
    let prec = ctx.working_prec();
    let diffs = formal_jacobian(s)?;
    let mut mat = Vec::with_capacity(s.n);
    for row in &diffs {
        let mut out = Vec::with_capacity(s.n);
        for d in row {
            out.push(crate::jpolynomial::jp_eval(d, a, ctx)?);
        }
        mat.push(out);
    }
    let det = determinant(mat.clone(), prec);
    let (smin, _) = singular_value_range(&mat, prec);
    Ok((mat, det, smin))
}

fn residual_of(s: &KhovanskiiSystem, a: &JAssignment, ctx: &PrecisionContext) -> Result<Float> {
    let prec = ctx.working_prec();
    let mut res = Float::new(prec);
    for p in &s.polys {
        res = res.max(&crate::jpolynomial::jp_eval(p, a, ctx)?.abs());
    }
    Ok(res)
}

fn nonsingular_gate(smin: &Float, smax: &Float, ctx: &PrecisionContext) -> bool {
    let prec = smin.prec();
    // tol^(1/4): at a multiple zero Newton stalls with smin ~ sqrt(tol),
    // while honest derivatives stay well above this
    let thresh = pow2(prec, -((ctx.bits() / 8) as i32));
    let scale = smax.clone().max(&Float::with_val(prec, 1));
    smin.clone() > thresh * scale
}

/// True iff the assignment satisfies the system to tolerance with a
/// nonsingular Jacobian: a numeric kcl-membership certificate.
pub fn verify_certificate(s: &KhovanskiiSystem, a: &JAssignment, ctx: &PrecisionContext) -> bool {
    let res = match residual_of(s, a, ctx) {
        Ok(r) => r,
        Err(_) => return false,
    };
    if res > ctx.tol {
        return false;
    }
    let diffs = match formal_jacobian(s) {
        Ok(d) => d,
        Err(_) => return false,
    };
    let prec = ctx.working_prec();
    let mut mat = Vec::with_capacity(s.n);
    for row in &diffs {
        let mut out = Vec::with_capacity(s.n);
        for d in row {
            match crate::jpolynomial::jp_eval(d, a, ctx) {
                Ok(v) => out.push(v),
                Err(_) => return false,
            }
        }
        mat.push(out);
    }
    let (smin, smax) = singular_value_range(&mat, prec);
    nonsingular_gate(&smin, &smax, ctx)
}

/// The flattened iterated-j system: X1 = j(Xn) + a, X_k = j(X_{k-1}).
pub fn build_iterated_system(n: usize, a: &GaussRat) -> Result<KhovanskiiSystem> {
    if n < 1 {
        return Err(Error::InvalidArgument(
            "iterated system needs n >= 1".into(),
        ));
    }
    let mut polys = Vec::with_capacity(n);
    let gen_var = |k: usize| JPoly::generator(n, Gen::Var(k));
    let gen_j = |k: usize| JPoly::generator(n, Gen::J(0, k, None));
    polys.push(
        gen_var(0)
            .sub(&gen_j(n - 1))
            .sub(&JPoly::constant(n, a.clone())),
    );
    for k in 1..n {
        polys.push(gen_var(k).sub(&gen_j(k - 1)));
    }
    KhovanskiiSystem::new(polys)
}

// ---------------------------------------------------------------------------
// Newton solving

struct NewtonState<'a> {
    s: &'a KhovanskiiSystem,
    diffs: Vec<Vec<JPoly>>,
    ctx: &'a PrecisionContext,
    im_floor: Float,
}

impl<'a> NewtonState<'a> {
    fn eval_all(&self, z: &[PrecComplex]) -> Result<(Vec<PrecComplex>, Float)> {
        let a = assignment_from(z)?;
        let prec = self.ctx.working_prec();
        let mut f = Vec::with_capacity(self.s.n);
        let mut res = Float::new(prec);
        for p in &self.s.polys {
            let v = crate::jpolynomial::jp_eval(p, &a, self.ctx)?;
            res = res.max(&v.abs());
            f.push(v);
        }
        Ok((f, res))
    }

    fn jac_at(&self, z: &[PrecComplex]) -> Result<Vec<Vec<PrecComplex>>> {
        let a = assignment_from(z)?;
        let mut mat = Vec::with_capacity(self.s.n);
        for row in &self.diffs {
            let mut out = Vec::with_capacity(self.s.n);
            for d in row {
                out.push(crate::jpolynomial::jp_eval(d, &a, self.ctx)?);
            }
            mat.push(out);
        }
        Ok(mat)
    }

    fn in_domain(&self, z: &[PrecComplex]) -> bool {
        z.iter().all(|c| {
            c.is_finite() && c.im.clone().abs() >= self.im_floor && c.abs().to_f64() < 1.0e6
        })
    }

    /// One damped Newton run; Ok(Some) when converged to residual <= tol.
    fn run(&self, start: Vec<PrecComplex>, cfg: &SolveConfig) -> Option<Vec<PrecComplex>> {
        let mut z = start;
        if !self.in_domain(&z) {
            return None;
        }
        let (_, mut res) = self.eval_all(&z).ok()?;
        for _ in 0..cfg.max_iter {
            if res <= self.ctx.tol {
                return Some(z);
            }
            let (f, _) = self.eval_all(&z).ok()?;
            let jac = self.jac_at(&z).ok()?;
            let dz = solve_linear(jac, f)?;
            let mut lambda = cfg.damping;
            let mut stepped = false;
            for _ in 0..16 {
                let prec = self.ctx.working_prec();
                let lam = Float::with_val(prec, lambda);
                let cand: Vec<PrecComplex> = z
                    .iter()
                    .zip(dz.iter())
                    .map(|(zi, di)| zi - &di.scale(&lam))
                    .collect();
                if self.in_domain(&cand) {
                    if let Ok((_, cres)) = self.eval_all(&cand) {
                        if cres < res {
                            z = cand;
                            res = cres;
                            stepped = true;
                            break;
                        }
                    }
                }
                lambda /= 2.0;
            }
            if !stepped {
                return None;
            }
        }
        if res <= self.ctx.tol {
            Some(z)
        } else {
            None
        }
    }
}

/// j-values per coordinate, used for SL2(Z)-orbit-aware deduplication.
fn coordinate_j_values(z: &[PrecComplex], ctx: &PrecisionContext) -> Result<Vec<PrecComplex>> {
    z.iter()
        .map(|c| Ok(jet(&HPoint::new(c.clone())?, ctx)?.j))
        .collect()
}

fn same_j_tuple(a: &[PrecComplex], b: &[PrecComplex], ctx: &PrecisionContext) -> bool {
    let eps_exp = -((ctx.bits() / 4) as i32);
    a.iter().zip(b.iter()).all(|(x, y)| {
        let prec = x.prec();
        let scale = Float::with_val(prec, 1) + x.abs();
        (x - y).abs() <= pow2(prec, eps_exp) * scale
    })
}

/// Result of a Newton search: certified nonsingular solutions and converged
/// but singular points (never certificates).
#[derive(Clone, Debug, Default)]
pub struct NewtonOutcome {
    pub solutions: Vec<Solution>,
    pub singular: Vec<Solution>,
}

/// Damped multi-start Newton over the strip and its translates, with
/// per-coordinate SL2(Z) deduplication (by j-value) and, for pure-j single
/// equations, modular-relation deduplication.
pub fn newton_solve(
    s: &KhovanskiiSystem,
    cfg: &SolveConfig,
    ctx: &PrecisionContext,
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let prec = ctx.working_prec();
    let d = cfg.grid_density;
    // per-variable starts: d real offsets x d geometric heights, per translate
    let mut var_starts: Vec<PrecComplex> = Vec::new();
    let im_top = cfg.im_max.min(4.0).max(cfg.im_min * 1.5);
    for g in &cfg.translates {
        for i in 0..d {
            for k in 0..d {
                let re = -0.5 + (i as f64 + 0.5) / d as f64;
                let ratio = (im_top / cfg.im_min.max(0.4)).max(1.001);
                let im = cfg.im_min.max(0.4)
                    * ratio.powf(if d == 1 { 0.5 } else { k as f64 / (d - 1).max(1) as f64 });
                let base = HPoint::from_f64(prec, re, im)?;
                let moved = crate::halfplane::act(g, &base);
                var_starts.push(moved.value().clone());
            }
        }
    }
    let per_var = var_starts.len();
    let total = per_var.pow(s.n as u32);
    if total > 200_000 {
        return Err(Error::SizeLimit(format!(
            "{} Newton starts requested; reduce grid density or translates",
            total
        )));
    }
    let state = NewtonState {
        s,
        diffs: formal_jacobian(s)?,
        ctx,
        im_floor: Float::with_val(prec, cfg.im_min / 4.0),
    };
    let pure_j = s.is_pure_j_single();
    let mut out = NewtonOutcome::default();
    let mut j_tuples: Vec<Vec<PrecComplex>> = Vec::new();
    let mut singular_j_tuples: Vec<Vec<PrecComplex>> = Vec::new();
    let doubled = ctx.doubled();
    for idx in 0..total {
        let mut rem = idx;
        let mut start = Vec::with_capacity(s.n);
        for _ in 0..s.n {
            start.push(var_starts[rem % per_var].clone());
            rem /= per_var;
        }
        let Some(z) = state.run(start, cfg) else {
            continue;
        };
        // re-verify at doubled precision
        let a2 = match assignment_from(&z) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let res2 = match residual_of(s, &a2, &doubled) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if res2 > ctx.tol.clone() * 8u32 {
            continue;
        }
        let Ok(jvals) = coordinate_j_values(&z, ctx) else {
            continue;
        };
        let jac = match state.jac_at(&z) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let (smin, smax) = singular_value_range(&jac, prec);
        let nonsingular = nonsingular_gate(&smin, &smax, ctx);
        let seen = if nonsingular {
            &mut j_tuples
        } else {
            &mut singular_j_tuples
        };
        if seen.iter().any(|t| same_j_tuple(t, &jvals, ctx)) {
            continue;
        }
        if pure_j && nonsingular {
            // drop points modularly related to an already-returned solution
            let mut related = false;
            for sol in out.solutions.iter() {
                let za = HPoint::new(sol.points[0].clone())?;
                let zb = HPoint::new(z[0].clone())?;
                if find_modular_relation(&za, &zb, ctx)?.is_some() {
                    related = true;
                    break;
                }
            }
            if related {
                continue;
            }
        }
        let (_, res) = state.eval_all(&z)?;
        if nonsingular {
            j_tuples.push(jvals);
        } else {
            singular_j_tuples.push(jvals);
        }
        let bucket_ref: &mut Vec<Solution> = if nonsingular {
            &mut out.solutions
        } else {
            &mut out.singular
        };
        bucket_ref.push(Solution {
            points: z,
            residual: res,
            jac_smallest_sv: smin,
            nonsingular,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// plane curves under j and exp

/// A plane curve p(X, Y) = 0 with exact Gaussian-rational coefficients.
#[derive(Clone, Debug)]
pub struct CurveSpec {
    pub coeffs: BTreeMap<(u32, u32), GaussRat>,
}

impl CurveSpec {
    pub fn parse(text: &str) -> Result<Self> {
        CurveSpec::from_jpoly(&jp_parse_xy(text)?)
    }

    pub fn from_jpoly(p: &JPoly) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for (mono, c) in &p.terms {
            let mut dx = 0u32;
            let mut dy = 0u32;
            for (g, e) in mono {
                match g {
                    Gen::Var(0) => dx = *e,
                    Gen::Var(1) => dy = *e,
                    _ => {
                        return Err(Error::InvalidArgument(
                            "curve polynomials admit only X and Y".into(),
                        ))
                    }
                }
            }
            coeffs.insert((dx, dy), c.clone());
        }
        let spec = CurveSpec { coeffs };
        if spec.deg_y() == 0 {
            // vertical lines and X-only polynomials carry no function graph
            return Err(Error::InvalidArgument(
                "curve must involve Y (vertical lines are excluded)".into(),
            ));
        }
        Ok(spec)
    }

    pub fn deg_x(&self) -> u32 {
        self.coeffs.keys().map(|k| k.0).max().unwrap_or(0)
    }

    pub fn deg_y(&self) -> u32 {
        self.coeffs.keys().map(|k| k.1).max().unwrap_or(0)
    }

    /// (p, dp/dX, dp/dY) at a point.
    fn eval_with_derivs(
        &self,
        x: &PrecComplex,
        y: &PrecComplex,
        prec: u32,
    ) -> (PrecComplex, PrecComplex, PrecComplex) {
        let mut p = PrecComplex::zero(prec);
        let mut px = PrecComplex::zero(prec);
        let mut py = PrecComplex::zero(prec);
        for (&(i, k), c) in &self.coeffs {
            let cc = c.to_complex(prec);
            let xi = x.powi(i);
            let yk = y.powi(k);
            p = &p + &(&cc * &(&xi * &yk));
            if i > 0 {
                let t = &cc.scale_int(&rug::Integer::from(i)) * &(&x.powi(i - 1) * &yk);
                px = &px + &t;
            }
            if k > 0 {
                let t = &cc.scale_int(&rug::Integer::from(k)) * &(&xi * &y.powi(k - 1));
                py = &py + &t;
            }
        }
        (p, px, py)
    }
}

#[derive(Clone, Copy, Debug)]
struct Box2 {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Box2 {
    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
    fn diam(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }
    fn quads(&self) -> [Box2; 4] {
        let (cx, cy) = self.center();
        [
            Box2 { x0: self.x0, x1: cx, y0: self.y0, y1: cy },
            Box2 { x0: cx, x1: self.x1, y0: self.y0, y1: cy },
            Box2 { x0: self.x0, x1: cx, y0: cy, y1: self.y1 },
            Box2 { x0: cx, x1: self.x1, y0: cy, y1: self.y1 },
        ]
    }
}

/// Winding number of F around a box boundary by adaptive phase tracking;
/// None when sampling cannot be made adequate (zero on or near the boundary).
fn winding_number<F>(f: &mut F, b: &Box2, prec: u32) -> Option<i64>
where
    F: FnMut(&PrecComplex) -> Option<PrecComplex>,
{
    let corners = [
        (b.x0, b.y0),
        (b.x1, b.y0),
        (b.x1, b.y1),
        (b.x0, b.y1),
        (b.x0, b.y0),
    ];
    let mut samples_per_edge = 16usize;
    while samples_per_edge <= 1024 {
        let mut total = Float::new(64);
        let mut prev_arg: Option<Float> = None;
        let mut ok = true;
        'edges: for w in corners.windows(2) {
            let (xa, ya) = w[0];
            let (xb, yb) = w[1];
            for t in 0..samples_per_edge {
                let lam = t as f64 / samples_per_edge as f64;
                let z = PrecComplex::from_f64(prec, xa + (xb - xa) * lam, ya + (yb - ya) * lam);
                let v = match f(&z) {
                    Some(v) if !v.is_zero() && v.is_finite() => v,
                    _ => return None,
                };
                let arg = Float::with_val(64, v.im.clone().atan2(&v.re));
                if let Some(prev) = prev_arg.take() {
                    let mut delta = arg.clone() - prev;
                    let two_pi = Float::with_val(64, rug::float::Constant::Pi) * 2u32;
                    while delta > two_pi.clone() / 2u32 {
                        delta -= &two_pi;
                    }
                    while delta < -(two_pi.clone() / 2u32) {
                        delta += &two_pi;
                    }
                    if delta.clone().abs() > two_pi.clone() / 4u32 {
                        ok = false;
                        break 'edges;
                    }
                    total += delta;
                }
                prev_arg = Some(arg);
            }
        }
        if ok {
            // close the loop back to the starting sample
            let z = PrecComplex::from_f64(prec, b.x0, b.y0);
            let v = f(&z)?;
            if v.is_zero() {
                return None;
            }
            let arg = Float::with_val(64, v.im.clone().atan2(&v.re));
            if let Some(prev) = prev_arg {
                let mut delta = arg - prev;
                let two_pi = Float::with_val(64, rug::float::Constant::Pi) * 2u32;
                while delta > two_pi.clone() / 2u32 {
                    delta -= &two_pi;
                }
                while delta < -(two_pi.clone() / 2u32) {
                    delta += &two_pi;
                }
                if delta.clone().abs() > two_pi.clone() / 4u32 {
                    samples_per_edge *= 2;
                    continue;
                }
                total += delta;
            }
            let two_pi = Float::with_val(64, rug::float::Constant::Pi) * 2u32;
            let turns = total / two_pi;
            let rounded = turns.to_f64().round();
            if (turns.to_f64() - rounded).abs() > 0.25 || rounded < -0.25 {
                return None;
            }
            return Some(rounded as i64);
        }
        samples_per_edge *= 2;
    }
    None
}

/// Generic 1-d zero finder: argument-principle box subdivision followed by
/// damped Newton polishing. `fd` returns (F, F').
fn boxed_zero_search<F>(
    fd: &mut F,
    regions: &[Box2],
    keep_upper: bool,
    cfg: &SolveConfig,
    ctx: &PrecisionContext,
) -> Result<Vec<Solution>>
where
    F: FnMut(&PrecComplex) -> Option<(PrecComplex, PrecComplex)>,
{
    let prec = ctx.working_prec();
    let mut pending: Vec<(Box2, usize)> = regions.iter().map(|b| (*b, 0usize)).collect();
    let mut roots: Vec<PrecComplex> = Vec::new();
    let mut out = Vec::new();
    while let Some((b, depth)) = pending.pop() {
        let mut f_only = |z: &PrecComplex| fd(z).map(|(v, _)| v);
        let Some(w) = winding_number(&mut f_only, &b, prec) else {
            // boundary trouble: jitter the box once, then give up on it
            if depth < 24 {
                let eps = b.diam() * 0.013;
                pending.push((
                    Box2 {
                        x0: b.x0 - eps,
                        x1: b.x1 + eps * 0.7,
                        y0: (b.y0 - eps).max(if keep_upper { 1e-3 } else { f64::MIN }),
                        y1: b.y1 + eps * 0.9,
                    },
                    depth + 1,
                ));
            }
            continue;
        };
        if w == 0 {
            continue;
        }
        if (w > 1 || b.diam() > 0.12) && depth < 24 {
            for q in b.quads() {
                pending.push((q, depth + 1));
            }
            continue;
        }
        // Newton polish from the box center, confined to a slightly
        // inflated copy of the box so distant roots cannot capture it
        let (cx, cy) = b.center();
        let pad = b.diam();
        let inside = |z: &PrecComplex| {
            let (x, y) = (z.re.to_f64(), z.im.to_f64());
            x >= b.x0 - pad
                && x <= b.x1 + pad
                && y >= b.y0 - pad
                && y <= b.y1 + pad
                && (!keep_upper || y > 1e-4)
        };
        let mut z = PrecComplex::from_f64(prec, cx, cy);
        let mut converged = false;
        for _ in 0..cfg.max_iter.max(120) {
            let Some((f, df)) = fd(&z) else { break };
            if f.abs() <= ctx.tol {
                converged = true;
                break;
            }
            if df.is_zero() {
                break;
            }
            let step = &f / &df;
            let mut lambda = 1.0f64;
            let mut stepped = false;
            for _ in 0..20 {
                let lam = Float::with_val(prec, lambda);
                let cand = &z - &step.scale(&lam);
                if cand.is_finite() && inside(&cand) {
                    z = cand;
                    stepped = true;
                    break;
                }
                lambda /= 2.0;
            }
            if !stepped {
                break;
            }
        }
        if !converged || !inside(&z) {
            continue;
        }
        if roots
            .iter()
            .any(|r| (r - &z).abs().to_f64() < 1e-8 * (1.0 + z.abs().to_f64()))
        {
            continue;
        }
        let (f, df) = fd(&z).ok_or_else(|| {
            Error::NumericInstability("zero lost during final evaluation".into())
        })?;
        let dfabs = df.abs();
        let nonsingular = {
            let thresh = pow2(prec, -((ctx.bits() / 8) as i32));
            dfabs.clone() > thresh * (Float::with_val(prec, 1) + dfabs.clone())
        };
        roots.push(z.clone());
        out.push(Solution {
            points: vec![z],
            residual: f.abs(),
            jac_smallest_sv: dfabs,
            nonsingular,
        });
    }
    // deterministic order: by real part then imaginary part
    out.sort_by(|a, b| {
        let za = &a.points[0];
        let zb = &b.points[0];
        za.re
            .partial_cmp(&zb.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(za.im.partial_cmp(&zb.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(out)
}

/// Zeros of p(z, j(z)) over the strip and its horizontal shifts.
pub fn ec_curve_solve(
    v: &CurveSpec,
    cfg: &SolveConfig,
    ctx: &PrecisionContext,
) -> Result<Vec<Solution>> {
    cfg.validate()?;
    let prec = ctx.working_prec();
    let mut fd = |z: &PrecComplex| -> Option<(PrecComplex, PrecComplex)> {
        let hp = HPoint::new(z.clone()).ok()?;
        let jj = jet(&hp, ctx).ok()?;
        let (p, px, py) = v.eval_with_derivs(&z.with_prec(prec), &jj.j, prec);
        let dp = &px + &(&py * &jj.j1);
        Some((p, dp))
    };
    // region edges avoid the common special points re in {0, 1/2}
    let mut regions = Vec::new();
    for s in &cfg.strip_shifts {
        let x0 = *s as f64 - 0.5 - 0.0137;
        let mut y = cfg.im_min;
        while y < cfg.im_max {
            let y1 = (y * 2.0).min(cfg.im_max);
            regions.push(Box2 {
                x0,
                x1: x0 + 1.0,
                y0: y,
                y1,
            });
            y = y1;
        }
    }
    boxed_zero_search(&mut fd, &regions, true, cfg, ctx)
}

/// Zeros of p(z, exp(z)) over a centered square box.
pub fn ec_exp_solve(
    v: &CurveSpec,
    cfg: &SolveConfig,
    ctx: &PrecisionContext,
) -> Result<Vec<Solution>> {
    cfg.validate()?;
    let prec = ctx.working_prec();
    let mut fd = |z: &PrecComplex| -> Option<(PrecComplex, PrecComplex)> {
        let e = z.with_prec(prec).exp();
        let (p, px, py) = v.eval_with_derivs(&z.with_prec(prec), &e, prec);
        let dp = &px + &(&py * &e);
        Some((p, dp))
    };
    let hw = cfg.exp_halfwidth;
    // slightly asymmetric edges so axis zeros sit in box interiors
    let region = Box2 {
        x0: -hw - 0.0171,
        x1: hw + 0.0093,
        y0: -hw - 0.0119,
        y1: hw + 0.0147,
    };
    boxed_zero_search(&mut fd, &[region], false, cfg, ctx)
}
