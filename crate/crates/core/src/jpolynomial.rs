//! The formal ring R[X]^J = R[X, j(X), j'(X), j''(X)] with exact
//! Gaussian-rational coefficients: parsing, the formal partial-derivative
//! operator, evaluation on half-plane tuples, and flattening of nested
//! j-expressions into systems with plain-variable arguments.
//!
//! j''' appears only transiently in derivative outputs; it is evaluated from
//! the series (cross-checked against eta) and cannot be differentiated again.

use rug::{Complete, Rational};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::halfplane::{act, GL2Q, HPoint};
use crate::modular_forms::{eta_j3, jet, JJet};
use crate::numerics::{PrecComplex, PrecisionContext};

/// Exact Gaussian rational a + b i.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GaussRat {
    pub re: Rational,
    pub im: Rational,
}

impl GaussRat {
    pub fn zero() -> Self {
        GaussRat {
            re: Rational::new(),
            im: Rational::new(),
        }
    }

    pub fn one() -> Self {
        GaussRat::from_int(1)
    }

    pub fn from_int(n: i64) -> Self {
        GaussRat {
            re: Rational::from(n),
            im: Rational::new(),
        }
    }

    pub fn from_rat(re: Rational) -> Self {
        GaussRat {
            re,
            im: Rational::new(),
        }
    }

    pub fn imag_unit() -> Self {
        GaussRat {
            re: Rational::new(),
            im: Rational::from(1),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re == 0 && self.im == 0
    }

    pub fn add(&self, rhs: &GaussRat) -> GaussRat {
        GaussRat {
            re: (&self.re + &rhs.re).complete(),
            im: (&self.im + &rhs.im).complete(),
        }
    }

    pub fn neg(&self) -> GaussRat {
        GaussRat {
            re: (-&self.re).complete(),
            im: (-&self.im).complete(),
        }
    }

    pub fn mul(&self, rhs: &GaussRat) -> GaussRat {
        GaussRat {
            re: ((&self.re * &rhs.re).complete() - (&self.im * &rhs.im).complete()).into(),
            im: ((&self.re * &rhs.im).complete() + (&self.im * &rhs.re).complete()).into(),
        }
    }

    pub fn mul_rat(&self, r: &Rational) -> GaussRat {
        GaussRat {
            re: (&self.re * r).complete(),
            im: (&self.im * r).complete(),
        }
    }

    pub fn to_complex(&self, prec: u32) -> PrecComplex {
        PrecComplex::from_rationals(prec, &self.re, &self.im)
    }

    fn leading_negative(&self) -> bool {
        if self.re != 0 {
            self.re < 0
        } else {
            self.im < 0
        }
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im == 0 {
            write!(f, "{}", self.re)
        } else if self.re == 0 {
            if self.im == 1 {
                write!(f, "i")
            } else if self.im == -1 {
                write!(f, "-i")
            } else {
                write!(f, "{}i", self.im)
            }
        } else if self.im > 0 {
            write!(f, "({}+{}i)", self.re, self.im)
        } else {
            write!(f, "({}{}i)", self.re, self.im)
        }
    }
}

/// Ring generators: variables, derivative symbols J_t(X_k) with optional
/// twist, and the inverse denominators 1/(c X_k + d) produced by twisted
/// chain rules.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Gen {
    Var(usize),
    J(u8, usize, Option<GL2Q>),
    InvDen(usize, GL2Q),
}

impl Gen {
    fn var_index(&self) -> usize {
        match self {
            Gen::Var(k) | Gen::J(_, k, _) | Gen::InvDen(k, _) => *k,
        }
    }
}

fn fmt_twisted_arg(f: &mut fmt::Formatter<'_>, k: usize, tw: &Option<GL2Q>) -> fmt::Result {
    match tw {
        None => write!(f, "X{}", k + 1),
        Some(g) => write!(f, "{}*X{}", g, k + 1),
    }
}

impl fmt::Display for Gen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gen::Var(k) => write!(f, "X{}", k + 1),
            Gen::J(t, k, tw) => {
                let name = match t {
                    0 => "j",
                    1 => "j1",
                    2 => "j2",
                    _ => "j3",
                };
                write!(f, "{}(", name)?;
                fmt_twisted_arg(f, *k, tw)?;
                write!(f, ")")
            }
            Gen::InvDen(k, g) => {
                write!(f, "invden(")?;
                fmt_twisted_arg(f, *k, &Some(g.clone()))?;
                write!(f, ")")
            }
        }
    }
}

/// A monomial: generator -> positive exponent.
pub type Monomial = BTreeMap<Gen, u32>;

/// Sparse j-polynomial over Gaussian rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JPoly {
    pub nvars: usize,
    pub terms: BTreeMap<Monomial, GaussRat>,
}

impl JPoly {
    pub fn zero(nvars: usize) -> Self {
        JPoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: GaussRat) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::new(), c);
        }
        JPoly { nvars, terms }
    }

    pub fn generator(nvars: usize, g: Gen) -> Self {
        let mut m = Monomial::new();
        m.insert(g, 1);
        let mut terms = BTreeMap::new();
        terms.insert(m, GaussRat::one());
        JPoly { nvars, terms }
    }

    fn insert_term(&mut self, m: Monomial, c: GaussRat) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(existing) => {
                *existing = existing.add(&c);
                if existing.is_zero() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn add(&self, rhs: &JPoly) -> JPoly {
        let mut out = self.clone();
        out.nvars = self.nvars.max(rhs.nvars);
        for (m, c) in &rhs.terms {
            out.insert_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> JPoly {
        JPoly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.neg()))
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &JPoly) -> JPoly {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &JPoly) -> JPoly {
        let mut out = JPoly::zero(self.nvars.max(rhs.nvars));
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                let mut m = ma.clone();
                for (g, e) in mb {
                    *m.entry(g.clone()).or_insert(0) += e;
                }
                out.insert_term(m, ca.mul(cb));
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> JPoly {
        let mut out = JPoly::constant(self.nvars, GaussRat::one());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    pub fn scale(&self, c: &GaussRat) -> JPoly {
        let mut out = JPoly::zero(self.nvars);
        for (m, v) in &self.terms {
            out.insert_term(m.clone(), v.mul(c));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains_j3(&self) -> bool {
        self.terms
            .keys()
            .any(|m| m.keys().any(|g| matches!(g, Gen::J(3, _, _))))
    }

    /// Variable indices actually used.
    pub fn variables(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .terms
            .keys()
            .flat_map(|m| m.keys().map(|g| g.var_index()))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl fmt::Display for JPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (m, c)) in self.terms.iter().enumerate() {
            let (lead, coeff) = if idx == 0 {
                (String::new(), c.clone())
            } else if c.leading_negative() {
                (" - ".to_string(), c.neg())
            } else {
                (" + ".to_string(), c.clone())
            };
            write!(f, "{}", lead)?;
            let coeff_is_one = coeff == GaussRat::one();
            if m.is_empty() {
                write!(f, "{}", coeff)?;
                continue;
            }
            let mut first = true;
            if !coeff_is_one {
                write!(f, "{}", coeff)?;
                first = false;
            }
            for (g, e) in m {
                if !first {
                    write!(f, "*")?;
                }
                first = false;
                write!(f, "{}", g)?;
                if *e > 1 {
                    write!(f, "^{}", e)?;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Rational),
    ImagUnit,
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Equals,
}

fn lex(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '+' => out.push(Tok::Plus),
            '-' => out.push(Tok::Minus),
            '*' => out.push(Tok::Star),
            '^' => out.push(Tok::Caret),
            '(' => out.push(Tok::LParen),
            ')' => out.push(Tok::RParen),
            '[' => out.push(Tok::LBracket),
            ']' => out.push(Tok::RBracket),
            ',' => out.push(Tok::Comma),
            '=' => out.push(Tok::Equals),
            _ if c.is_ascii_digit() => {
                let mut k = i;
                while k < chars.len() && chars[k].is_ascii_digit() {
                    k += 1;
                }
                let num: String = chars[i..k].iter().collect();
                let mut r = Rational::from(
                    rug::Integer::from_str_radix(&num, 10)
                        .map_err(|_| Error::Parse(format!("bad number: {num}")))?,
                );
                if k < chars.len()
                    && chars[k] == '/'
                    && k + 1 < chars.len()
                    && chars[k + 1].is_ascii_digit()
                {
                    let mut t = k + 1;
                    while t < chars.len() && chars[t].is_ascii_digit() {
                        t += 1;
                    }
                    let den: String = chars[k + 1..t].iter().collect();
                    let d = rug::Integer::from_str_radix(&den, 10)
                        .map_err(|_| Error::Parse(format!("bad denominator: {den}")))?;
                    if d == 0 {
                        return Err(Error::Parse("zero denominator".into()));
                    }
                    r /= d;
                    k = t;
                }
                out.push(Tok::Num(r));
                i = k;
                continue;
            }
            _ if c.is_ascii_alphabetic() => {
                let mut k = i;
                while k < chars.len() && chars[k].is_ascii_alphanumeric() {
                    k += 1;
                }
                let name: String = chars[i..k].iter().collect();
                if name == "i" {
                    out.push(Tok::ImagUnit);
                } else {
                    out.push(Tok::Ident(name));
                }
                i = k;
                continue;
            }
            _ => return Err(Error::Parse(format!("unexpected character '{c}'"))),
        }
        i += 1;
    }
    Ok(out)
}

/// Syntax tree for (possibly nested) j-expressions.
#[derive(Clone, Debug)]
enum Ast {
    Num(GaussRat),
    Var(String),
    Fresh(usize),
    Apply(u8, Arg),
    Add(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, u32),
    Neg(Box<Ast>),
}

#[derive(Clone, Debug)]
enum Arg {
    Plain(Box<Ast>),
    Twist(GL2Q, Box<Ast>),
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        match self.next() {
            Some(got) if got == t => Ok(()),
            other => Err(Error::Parse(format!("expected {:?}, found {:?}", t, other))),
        }
    }

    fn parse_expr(&mut self) -> Result<Ast> {
        let mut acc = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    acc = Ast::Add(Box::new(acc), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    acc = Ast::Add(Box::new(acc), Box::new(Ast::Neg(Box::new(rhs))));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Ast> {
        let mut acc = self.parse_factor()?;
        while matches!(self.peek(), Some(Tok::Star)) {
            self.pos += 1;
            let rhs = self.parse_factor()?;
            acc = Ast::Mul(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn parse_factor(&mut self) -> Result<Ast> {
        let base = self.parse_atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.pos += 1;
            match self.next() {
                Some(Tok::Num(r)) if r.denom().to_u32() == Some(1) && r >= 0 => {
                    let e = r
                        .numer()
                        .to_u32()
                        .ok_or_else(|| Error::Parse("exponent too large".into()))?;
                    return Ok(Ast::Pow(Box::new(base), e));
                }
                other => {
                    return Err(Error::Parse(format!(
                        "exponent must be a nonnegative integer, found {:?}",
                        other
                    )))
                }
            }
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Ast> {
        match self.next() {
            Some(Tok::LParen) => {
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Minus) => Ok(Ast::Neg(Box::new(self.parse_factor()?))),
            Some(Tok::Num(r)) => {
                if matches!(self.peek(), Some(Tok::ImagUnit)) {
                    self.pos += 1;
                    Ok(Ast::Num(GaussRat {
                        re: Rational::new(),
                        im: r,
                    }))
                } else {
                    Ok(Ast::Num(GaussRat::from_rat(r)))
                }
            }
            Some(Tok::ImagUnit) => Ok(Ast::Num(GaussRat::imag_unit())),
            Some(Tok::Ident(name)) => match name.as_str() {
                "j" | "j1" | "j2" => {
                    let t = match name.as_str() {
                        "j" => 0u8,
                        "j1" => 1,
                        _ => 2,
                    };
                    self.expect(Tok::LParen)?;
                    let arg = self.parse_arg()?;
                    self.expect(Tok::RParen)?;
                    Ok(Ast::Apply(t, arg))
                }
                _ if name.starts_with('X') && name[1..].chars().all(|c| c.is_ascii_digit()) => {
                    Ok(Ast::Var(name))
                }
                _ => Err(Error::Parse(format!("unknown identifier '{name}'"))),
            },
            other => Err(Error::Parse(format!("unexpected token {:?}", other))),
        }
    }

    fn parse_arg(&mut self) -> Result<Arg> {
        if matches!(self.peek(), Some(Tok::LBracket)) {
            let g = self.parse_matrix()?;
            self.expect(Tok::Star)?;
            let inner = self.parse_expr()?;
            Ok(Arg::Twist(g, Box::new(inner)))
        } else {
            Ok(Arg::Plain(Box::new(self.parse_expr()?)))
        }
    }

    fn parse_rat(&mut self) -> Result<Rational> {
        let neg = if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.next() {
            Some(Tok::Num(r)) => Ok(if neg { (-r).into() } else { r }),
            other => Err(Error::Parse(format!(
                "expected rational matrix entry, found {:?}",
                other
            ))),
        }
    }

    fn parse_matrix(&mut self) -> Result<GL2Q> {
        self.expect(Tok::LBracket)?;
        self.expect(Tok::LBracket)?;
        let a = self.parse_rat()?;
        self.expect(Tok::Comma)?;
        let b = self.parse_rat()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Comma)?;
        self.expect(Tok::LBracket)?;
        let c = self.parse_rat()?;
        self.expect(Tok::Comma)?;
        let d = self.parse_rat()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::RBracket)?;
        GL2Q::new(a, b, c, d)
    }
}

fn parse_ast(text: &str) -> Result<(Ast, Option<Ast>)> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let lhs = parser.parse_expr()?;
    let rhs = if matches!(parser.peek(), Some(Tok::Equals)) {
        parser.pos += 1;
        Some(parser.parse_expr()?)
    } else {
        None
    };
    if parser.pos != parser.toks.len() {
        return Err(Error::Parse(format!(
            "trailing input at token {:?}",
            parser.peek()
        )));
    }
    Ok((lhs, rhs))
}

fn var_number(name: &str) -> Result<Option<usize>> {
    // "X" is only legal in the extended (flatten) grammar
    if name == "X" {
        return Ok(None);
    }
    let k: usize = name[1..]
        .parse()
        .map_err(|_| Error::Parse(format!("bad variable '{name}'")))?;
    if k == 0 {
        return Err(Error::Parse("variable indices start at X1".into()));
    }
    Ok(Some(k - 1))
}

fn arg_as_var(arg: &Arg) -> Option<(Option<GL2Q>, &str)> {
    let (tw, inner) = match arg {
        Arg::Plain(inner) => (None, inner),
        Arg::Twist(g, inner) => (Some(g.clone()), inner),
    };
    match inner.as_ref() {
        Ast::Var(name) => Some((tw, name)),
        _ => None,
    }
}

fn ast_to_poly(ast: &Ast, resolve: &dyn Fn(&str) -> Result<usize>) -> Result<JPoly> {
    Ok(match ast {
        Ast::Num(c) => JPoly::constant(0, c.clone()),
        Ast::Var(name) => JPoly::generator(0, Gen::Var(resolve(name)?)),
        Ast::Fresh(_) => {
            return Err(Error::Parse("internal: unresolved fresh variable".into()))
        }
        Ast::Apply(t, arg) => match arg_as_var(arg) {
            Some((tw, name)) => {
                JPoly::generator(0, Gen::J(*t, resolve(name)?, tw))
            }
            None => {
                return Err(Error::Parse(
                    "nested or non-variable argument to a j-function; use flatten()".into(),
                ))
            }
        },
        Ast::Add(a, b) => ast_to_poly(a, resolve)?.add(&ast_to_poly(b, resolve)?),
        Ast::Mul(a, b) => ast_to_poly(a, resolve)?.mul(&ast_to_poly(b, resolve)?),
        Ast::Pow(a, e) => ast_to_poly(a, resolve)?.pow(*e),
        Ast::Neg(a) => ast_to_poly(a, resolve)?.neg(),
    })
}

fn max_var_index(ast: &Ast, acc: &mut usize) -> Result<()> {
    match ast {
        Ast::Var(name) => {
            let k = var_number(name)?
                .ok_or_else(|| Error::Parse("bare variable 'X' requires flatten()".into()))?;
            *acc = (*acc).max(k + 1);
            Ok(())
        }
        Ast::Fresh(_) | Ast::Num(_) => Ok(()),
        Ast::Apply(_, arg) => match arg {
            Arg::Plain(inner) | Arg::Twist(_, inner) => max_var_index(inner, acc),
        },
        Ast::Add(a, b) | Ast::Mul(a, b) => {
            max_var_index(a, acc)?;
            max_var_index(b, acc)
        }
        Ast::Pow(a, _) | Ast::Neg(a) => max_var_index(a, acc),
    }
}

/// Parses the strict grammar: variables X1..Xn, j/j1/j2 applied to a variable
/// or twisted variable only.
pub fn jp_parse(text: &str) -> Result<JPoly> {
    let (lhs, rhs) = parse_ast(text)?;
    if rhs.is_some() {
        return Err(Error::Parse(
            "'=' is not part of a polynomial; parse sides separately or use flatten()".into(),
        ));
    }
    let mut nv = 0usize;
    max_var_index(&lhs, &mut nv)?;
    let resolve = |name: &str| -> Result<usize> {
        var_number(name)?.ok_or_else(|| Error::Parse("bare variable 'X' requires flatten()".into()))
    };
    let mut p = ast_to_poly(&lhs, &resolve)?;
    p.nvars = nv;
    Ok(p)
}

/// Parses a plain bivariate polynomial over variables X and Y (mapped to X1
/// and X2); j-functions are not part of this grammar.
pub fn jp_parse_xy(text: &str) -> Result<JPoly> {
    let toks = lex(text)?
        .into_iter()
        .map(|t| match t {
            Tok::Ident(name) if name == "X" => Tok::Ident("X1".into()),
            Tok::Ident(name) if name == "Y" => Tok::Ident("X2".into()),
            other => other,
        })
        .collect();
    let mut parser = Parser { toks, pos: 0 };
    let ast = parser.parse_expr()?;
    if parser.pos != parser.toks.len() {
        return Err(Error::Parse("trailing input in curve polynomial".into()));
    }
    let resolve = |name: &str| -> Result<usize> {
        var_number(name)?.ok_or_else(|| Error::Parse(format!("unknown variable '{name}'")))
    };
    let mut p = ast_to_poly(&ast, &resolve)?;
    if p.terms
        .keys()
        .flat_map(|m| m.keys())
        .any(|g| !matches!(g, Gen::Var(0) | Gen::Var(1)))
    {
        return Err(Error::Parse(
            "curve polynomials admit only the plain variables X and Y".into(),
        ));
    }
    p.nvars = 2;
    Ok(p)
}

// ---------------------------------------------------------------------------
// differentiation

/// Formal partial derivative with respect to X_k. Twisted generators pick up
/// the chain-rule factor det(g) / (c X_k + d)^2, represented with invden
/// generators. Differentiating a transient J3 symbol is rejected.
pub fn jp_diff(p: &JPoly, k: usize) -> Result<JPoly> {
    if k >= p.nvars {
        return Err(Error::InvalidArgument(format!(
            "variable index {} out of range for {} variables",
            k, p.nvars
        )));
    }
    let mut out = JPoly::zero(p.nvars);
    for (mono, coeff) in &p.terms {
        for (g, &e) in mono {
            if g.var_index() != k {
                continue;
            }
            let mut m = mono.clone();
            if e == 1 {
                m.remove(g);
            } else {
                m.insert(g.clone(), e - 1);
            }
            let mut c = coeff.mul_rat(&Rational::from(e));
            match g {
                Gen::Var(_) => {}
                Gen::J(3, _, _) => {
                    return Err(Error::Domain(
                        "formal derivative of j3 is undefined; eliminate it via eta first".into(),
                    ))
                }
                Gen::J(t, _, None) => {
                    *m.entry(Gen::J(t + 1, k, None)).or_insert(0) += 1;
                }
                Gen::J(t, _, Some(tw)) => {
                    *m.entry(Gen::J(t + 1, k, Some(tw.clone()))).or_insert(0) += 1;
                    *m.entry(Gen::InvDen(k, tw.clone())).or_insert(0) += 2;
                    c = c.mul_rat(&tw.det());
                }
                Gen::InvDen(_, tw) => {
                    *m.entry(Gen::InvDen(k, tw.clone())).or_insert(0) += 2;
                    c = c.mul_rat(&(-tw.c.clone()).into());
                }
            }
            out.insert_term(m, c);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// evaluation

/// Assignment of half-plane points to variable indices.
#[derive(Clone, Debug, Default)]
pub struct JAssignment {
    points: BTreeMap<usize, HPoint>,
}

impl JAssignment {
    pub fn new() -> Self {
        JAssignment::default()
    }

    pub fn set(&mut self, k: usize, z: HPoint) {
        self.points.insert(k, z);
    }

    pub fn get(&self, k: usize) -> Option<&HPoint> {
        self.points.get(&k)
    }

    pub fn from_points(pts: &[HPoint]) -> Self {
        let mut a = JAssignment::new();
        for (k, z) in pts.iter().enumerate() {
            a.set(k, z.clone());
        }
        a
    }
}

struct EvalCache<'a> {
    ctx: &'a PrecisionContext,
    assignment: &'a JAssignment,
    jets: BTreeMap<(usize, Option<GL2Q>), JJet>,
}

impl<'a> EvalCache<'a> {
    fn point(&self, k: usize) -> Result<&HPoint> {
        self.assignment
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("variable X{} unassigned", k + 1)))
    }

    fn jet_at(&mut self, k: usize, tw: &Option<GL2Q>) -> Result<JJet> {
        let key = (k, tw.clone());
        if let Some(j) = self.jets.get(&key) {
            return Ok(j.clone());
        }
        let z = self.point(k)?.clone();
        let w = match tw {
            None => z,
            Some(g) => act(g, &z),
        };
        let j = jet(&w, self.ctx)?;
        self.jets.insert(key, j.clone());
        Ok(j)
    }

    fn j3_value(&mut self, k: usize, tw: &Option<GL2Q>) -> Result<PrecComplex> {
        let jj = self.jet_at(k, tw)?;
        let tol = &self.ctx.tol;
        let prec = jj.j.prec();
        if jj.j1.abs() <= *tol {
            return Err(Error::Domain(format!(
                "j3 undefined at X{}: j'(z) = 0 (axiom (e) exclusion)",
                k + 1
            )));
        }
        if jj.j.abs() <= *tol {
            return Err(Error::Domain(format!(
                "j3 undefined at X{}: j(z) = 0 (axiom (e) exclusion)",
                k + 1
            )));
        }
        let shift = &jj.j - &PrecComplex::from_int(prec, 1728);
        if shift.abs() <= *tol {
            return Err(Error::Domain(format!(
                "j3 undefined at X{}: j(z) = 1728 (axiom (e) exclusion)",
                k + 1
            )));
        }
        // the series value is authoritative; eta is a consistency gate
        let e = eta_j3(&jj.j, &jj.j1, &jj.j2)?;
        let scale = rug::Float::with_val(prec, 1) + jj.j3.abs();
        if (&e - &jj.j3).abs() > tol.clone() * 8u32 * &scale {
            return Err(Error::NumericInstability(format!(
                "series j3 and eta disagree at X{}",
                k + 1
            )));
        }
        Ok(jj.j3)
    }

    fn gen_value(&mut self, g: &Gen) -> Result<PrecComplex> {
        let prec = self.ctx.working_prec();
        match g {
            Gen::Var(k) => Ok(self.point(*k)?.value().with_prec(prec)),
            Gen::J(3, k, tw) => self.j3_value(*k, tw),
            Gen::J(t, k, tw) => {
                let jj = self.jet_at(*k, tw)?;
                Ok(match t {
                    0 => jj.j,
                    1 => jj.j1,
                    _ => jj.j2,
                })
            }
            Gen::InvDen(k, tw) => {
                let z = self.point(*k)?.value().with_prec(prec);
                let c = PrecComplex::from_rationals(prec, &tw.c, &Rational::new());
                let d = PrecComplex::from_rationals(prec, &tw.d, &Rational::new());
                Ok((&(&c * &z) + &d).recip())
            }
        }
    }
}

/// Evaluates a j-polynomial at an assignment, substituting jet values.
pub fn jp_eval(p: &JPoly, a: &JAssignment, ctx: &PrecisionContext) -> Result<PrecComplex> {
    let prec = ctx.working_prec();
    let mut cache = EvalCache {
        ctx,
        assignment: a,
        jets: BTreeMap::new(),
    };
    let mut acc = PrecComplex::zero(prec);
    for (mono, coeff) in &p.terms {
        let mut term = coeff.to_complex(prec);
        for (g, e) in mono {
            let v = cache.gen_value(g)?;
            term = &term * &v.powi(*e);
        }
        acc = &acc + &term;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// flattening

struct Flattener {
    fresh: usize,
    equations: Vec<(usize, Ast)>,
}

impl Flattener {
    fn tf(&mut self, ast: &Ast) -> Ast {
        match ast {
            Ast::Num(_) | Ast::Var(_) | Ast::Fresh(_) => ast.clone(),
            Ast::Apply(t, arg) => {
                if arg_as_var(arg).is_some() {
                    return ast.clone();
                }
                let (tw, inner) = match arg {
                    Arg::Plain(inner) => (None, inner),
                    Arg::Twist(g, inner) => (Some(g.clone()), inner),
                };
                self.fresh += 1;
                let id = self.fresh;
                let flat = self.tf(inner);
                self.equations.push((
                    id,
                    Ast::Add(
                        Box::new(flat),
                        Box::new(Ast::Neg(Box::new(Ast::Fresh(id)))),
                    ),
                ));
                let fresh_arg = Box::new(Ast::Fresh(id));
                Ast::Apply(
                    *t,
                    match tw {
                        None => Arg::Plain(fresh_arg),
                        Some(g) => Arg::Twist(g, fresh_arg),
                    },
                )
            }
            Ast::Add(a, b) => Ast::Add(Box::new(self.tf(a)), Box::new(self.tf(b))),
            Ast::Mul(a, b) => Ast::Mul(Box::new(self.tf(a)), Box::new(self.tf(b))),
            Ast::Pow(a, e) => Ast::Pow(Box::new(self.tf(a)), *e),
            Ast::Neg(a) => Ast::Neg(Box::new(self.tf(a))),
        }
    }
}

fn collect_names(ast: &Ast, out: &mut Vec<String>) {
    match ast {
        Ast::Var(name) => {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        Ast::Num(_) | Ast::Fresh(_) => {}
        Ast::Apply(_, arg) => match arg {
            Arg::Plain(inner) | Arg::Twist(_, inner) => collect_names(inner, out),
        },
        Ast::Add(a, b) | Ast::Mul(a, b) => {
            collect_names(a, out);
            collect_names(b, out);
        }
        Ast::Pow(a, _) | Ast::Neg(a) => collect_names(a, out),
    }
}

fn rewrite_fresh(ast: &Ast, numbering: &BTreeMap<usize, usize>) -> Ast {
    match ast {
        Ast::Fresh(id) => Ast::Var(format!("X{}", numbering[id] + 1)),
        Ast::Num(_) | Ast::Var(_) => ast.clone(),
        Ast::Apply(t, arg) => {
            let map_inner = |inner: &Ast| Box::new(rewrite_fresh(inner, numbering));
            Ast::Apply(
                *t,
                match arg {
                    Arg::Plain(inner) => Arg::Plain(map_inner(inner)),
                    Arg::Twist(g, inner) => Arg::Twist(g.clone(), map_inner(inner)),
                },
            )
        }
        Ast::Add(a, b) => Ast::Add(
            Box::new(rewrite_fresh(a, numbering)),
            Box::new(rewrite_fresh(b, numbering)),
        ),
        Ast::Mul(a, b) => Ast::Mul(
            Box::new(rewrite_fresh(a, numbering)),
            Box::new(rewrite_fresh(b, numbering)),
        ),
        Ast::Pow(a, e) => Ast::Pow(Box::new(rewrite_fresh(a, numbering)), *e),
        Ast::Neg(a) => Ast::Neg(Box::new(rewrite_fresh(a, numbering))),
    }
}

/// Flattens a nested j-expression (optionally an equation "lhs = rhs") into a
/// system in which every j/j1/j2 argument is a plain variable. Fresh
/// variables take the smallest indices not reserved by numbered originals;
/// bare originals ("X") are renumbered after them. Returns the equations
/// (each as lhs - rhs) and the number of fresh variables introduced.
pub fn flatten(text: &str) -> Result<(Vec<JPoly>, usize)> {
    let (lhs, rhs) = parse_ast(text)?;
    let whole = match rhs {
        Some(r) => Ast::Add(Box::new(lhs), Box::new(Ast::Neg(Box::new(r)))),
        None => lhs,
    };
    let mut fl = Flattener {
        fresh: 0,
        equations: Vec::new(),
    };
    let main = fl.tf(&whole);
    fl.equations.sort_by_key(|(id, _)| *id);

    // variable numbering: numbered originals keep their index; fresh fill the
    // smallest unused slots in creation order; bare originals come last
    let mut names = Vec::new();
    collect_names(&main, &mut names);
    for (_, eq) in &fl.equations {
        collect_names(eq, &mut names);
    }
    let mut reserved: Vec<usize> = Vec::new();
    let mut name_index: BTreeMap<String, usize> = BTreeMap::new();
    for name in &names {
        if let Some(k) = var_number(name)? {
            reserved.push(k);
            name_index.insert(name.clone(), k);
        }
    }
    let mut next_free = {
        let reserved = reserved.clone();
        let mut cursor = 0usize;
        move || {
            while reserved.contains(&cursor) {
                cursor += 1;
            }
            let k = cursor;
            cursor += 1;
            k
        }
    };
    let mut fresh_numbering: BTreeMap<usize, usize> = BTreeMap::new();
    for id in 1..=fl.fresh {
        fresh_numbering.insert(id, next_free());
    }
    for name in &names {
        if var_number(name)? .is_none() {
            name_index.insert(name.clone(), next_free());
        }
    }

    let total = name_index
        .values()
        .copied()
        .chain(fresh_numbering.values().copied())
        .map(|k| k + 1)
        .max()
        .unwrap_or(0);
    // rewritten fresh variables carry their final numbered names already
    let resolve = |name: &str| -> Result<usize> {
        if let Some(k) = name_index.get(name) {
            return Ok(*k);
        }
        var_number(name)?.ok_or_else(|| Error::Parse(format!("unknown variable '{name}'")))
    };

    let mut system = Vec::with_capacity(1 + fl.equations.len());
    let main = rewrite_fresh(&main, &fresh_numbering);
    let mut p = ast_to_poly(&main, &resolve)?;
    p.nvars = total;
    system.push(p);
    for (_, eq) in &fl.equations {
        let eq = rewrite_fresh(eq, &fresh_numbering);
        let mut p = ast_to_poly(&eq, &resolve)?;
        p.nvars = total;
        system.push(p);
    }
    Ok((system, fl.fresh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pow2;
    use rug::Float;

    fn ctx() -> PrecisionContext {
        PrecisionContext::new(256).unwrap()
    }

    fn pt(re: f64, im: f64) -> HPoint {
        HPoint::from_f64(320, re, im).unwrap()
    }

    #[test]
    fn parse_examples() {
        let p = jp_parse("j(X1) - 1728").unwrap();
        assert_eq!(p.terms.len(), 2);
        assert_eq!(p.nvars, 1);

        let p = jp_parse("X1*j1(X2) + 3/2").unwrap();
        assert_eq!(p.terms.len(), 2);
        assert_eq!(p.nvars, 2);
        let vars = p.variables();
        assert_eq!(vars, vec![0, 1]);

        let err = jp_parse("j(j1(X1))").unwrap_err();
        assert!(err.to_string().contains("flatten"));
    }

    #[test]
    fn parse_coefficients_and_twists() {
        let p = jp_parse("2i*j(X1) + (1/2 + 3/4i)*X1^2").unwrap();
        assert_eq!(p.terms.len(), 2);
        let p = jp_parse("j1([[2,0],[0,1]]*X1) - j(X2)").unwrap();
        assert!(p
            .terms
            .keys()
            .flat_map(|m| m.keys())
            .any(|g| matches!(g, Gen::J(1, 0, Some(_)))));
    }

    #[test]
    fn display_roundtrip() {
        for text in [
            "j(X1) - 1728",
            "X1*j1(X2) + 3/2",
            "2i*j2(X1) + X1^3*j(X2)^2 - 1/3",
            "j1([[2,0],[0,1]]*X1) + 7",
        ] {
            let p = jp_parse(text).unwrap();
            let q = jp_parse(&p.to_string()).unwrap();
            assert_eq!(p.terms, q.terms, "roundtrip failed for {text}");
        }
    }

    #[test]
    fn diff_examples() {
        // d(X1 * j(X1))/dX1 = j(X1) + X1*j1(X1)
        let p = jp_parse("X1*j(X1)").unwrap();
        let d = jp_diff(&p, 0).unwrap();
        let expect = jp_parse("j(X1) + X1*j1(X1)").unwrap();
        assert_eq!(d.terms, expect.terms);

        // d(j1(X2))/dX1 = 0
        let p = jp_parse("j1(X2)").unwrap();
        assert!(jp_diff(&p, 0).unwrap().is_zero());

        // d(j2(X1))/dX1 = j3(X1)
        let p = jp_parse("j2(X1)").unwrap();
        let d = jp_diff(&p, 0).unwrap();
        assert!(d.contains_j3());
        assert_eq!(d.terms.len(), 1);

        // differentiating j3 again is rejected
        assert!(matches!(jp_diff(&d, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn diff_commutes_on_low_j_degree() {
        let p = jp_parse("X1^2*j(X2)*j1(X1) + j2(X2)*X1 - 5*j(X1)*j(X2)").unwrap();
        let d01 = jp_diff(&jp_diff(&p, 0).unwrap(), 1).unwrap();
        let d10 = jp_diff(&jp_diff(&p, 1).unwrap(), 0).unwrap();
        assert_eq!(d01.terms, d10.terms);
    }

    #[test]
    fn eval_examples() {
        let c = ctx();
        let a = JAssignment::from_points(&[pt(0.0, 1.0)]);
        let p = jp_parse("j(X1) - 1728").unwrap();
        let v = jp_eval(&p, &a, &c).unwrap();
        assert!(v.abs() < pow2(320, -110));

        let a2 = JAssignment::from_points(&[pt(0.0, 2.0)]);
        let p = jp_parse("X1").unwrap();
        let v = jp_eval(&p, &a2, &c).unwrap();
        assert!((v.im.clone() - 2u32).abs() < pow2(320, -200));
        assert!(v.re.clone().abs() < pow2(320, -200));

        // j3 at i: domain error because j'(i) = 0
        let d = jp_diff(&jp_parse("j2(X1)").unwrap(), 0).unwrap();
        let err = jp_eval(&d, &a, &c).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(err.to_string().contains("j'"));
        // and evaluates fine at a generic point
        let a3 = JAssignment::from_points(&[pt(0.3, 1.4)]);
        assert!(jp_eval(&d, &a3, &c).unwrap().is_finite());
    }

    #[test]
    fn eval_is_ring_homomorphism() {
        let c = ctx();
        let a = JAssignment::from_points(&[pt(0.21, 1.13), pt(-0.37, 1.71)]);
        let p = jp_parse("j(X1)*X2 + 2").unwrap();
        let q = jp_parse("j1(X2) - X1^2").unwrap();
        let vp = jp_eval(&p, &a, &c).unwrap();
        let vq = jp_eval(&q, &a, &c).unwrap();
        let vpq = jp_eval(&p.mul(&q), &a, &c).unwrap();
        let scale = Float::with_val(320, 1) + vpq.abs();
        assert!((&vpq - &(&vp * &vq)).abs() / scale.clone() < pow2(320, -110));
        let vsum = jp_eval(&p.add(&q), &a, &c).unwrap();
        assert!((&vsum - &(&vp + &vq)).abs() / scale < pow2(320, -110));
    }

    #[test]
    fn chain_consistency_finite_difference() {
        let c = ctx();
        let p = jp_parse("X1*j(X1) + j1(X1)^2").unwrap();
        let dp = jp_diff(&p, 0).unwrap();
        let z = pt(0.23, 1.31);
        let h = pow2(320, -(256 / 3));
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
        let vp = jp_eval(&p, &JAssignment::from_points(&[zp]), &c).unwrap();
        let vm = jp_eval(&p, &JAssignment::from_points(&[zm]), &c).unwrap();
        let fd = (&vp - &vm).scale(&(Float::with_val(320, 0.5) / &h));
        let dv = jp_eval(&dp, &JAssignment::from_points(&[z]), &c).unwrap();
        let rel = (&fd - &dv).abs() / dv.abs();
        assert!(rel < pow2(320, -64), "rel = {rel}");
    }

    #[test]
    fn twisted_chain_rule_matches_finite_difference() {
        let c = ctx();
        let p = jp_parse("j([[2,1],[0,1]]*X1)").unwrap();
        let dp = jp_diff(&p, 0).unwrap();
        // derivative has the invden^2 factor and det = 2
        assert!(dp
            .terms
            .keys()
            .flat_map(|m| m.keys())
            .any(|g| matches!(g, Gen::InvDen(0, _))));
        let z = pt(0.17, 1.21);
        let h = pow2(320, -(256 / 3));
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
        let vp = jp_eval(&p, &JAssignment::from_points(&[zp]), &c).unwrap();
        let vm = jp_eval(&p, &JAssignment::from_points(&[zm]), &c).unwrap();
        let fd = (&vp - &vm).scale(&(Float::with_val(320, 0.5) / &h));
        let dv = jp_eval(&dp, &JAssignment::from_points(&[z]), &c).unwrap();
        let rel = (&fd - &dv).abs() / dv.abs();
        assert!(rel < pow2(320, -64), "rel = {rel}");
    }

    #[test]
    fn flatten_remark_example() {
        let (sys, fresh) = flatten("j(j1(X^2) + 4) = 1").unwrap();
        assert_eq!(fresh, 2);
        assert_eq!(sys.len(), 3);
        let expect = [
            jp_parse("j(X1) - 1").unwrap(),
            jp_parse("j1(X2) + 4 - X1").unwrap(),
            jp_parse("X3^2 - X2").unwrap(),
        ];
        for (got, want) in sys.iter().zip(expect.iter()) {
            assert_eq!(got.terms, want.terms);
        }
        assert!(sys.iter().all(|p| p.nvars == 3));
    }

    #[test]
    fn flatten_already_flat() {
        let (sys, fresh) = flatten("j(X1) = 5").unwrap();
        assert_eq!(fresh, 0);
        assert_eq!(sys.len(), 1);
        let expect = jp_parse("j(X1) - 5").unwrap();
        assert_eq!(sys[0].terms, expect.terms);
    }

    #[test]
    fn flatten_double_application() {
        let (sys, fresh) = flatten("j(j(X1)) = 5").unwrap();
        assert_eq!(fresh, 1);
        assert_eq!(sys.len(), 2);
        let expect = [
            jp_parse("j(X2) - 5").unwrap(),
            jp_parse("j(X1) - X2").unwrap(),
        ];
        for (got, want) in sys.iter().zip(expect.iter()) {
            assert_eq!(got.terms, want.terms);
        }
    }
}
