//! Dense linear-program solver: minimization with ≤/≥/= row constraints and
//! finite per-variable bounds.
//!
//! Two-phase primal simplex over binary64 with a 1e-9 feasibility and
//! reduced-cost tolerance. Pivoting uses Dantzig's rule until the objective
//! stalls, then switches permanently to Bland's rule so cycling cannot
//! occur. Problem sizes here are small (hundreds of variables), so a dense
//! tableau is the simplest thing that works.

use std::fmt;

/// Feasibility, reduced-cost, and pivot tolerance.
pub const TOL: f64 = 1e-9;

/// Consecutive non-improving pivots tolerated before switching to Bland's
/// rule.
const STALL_LIMIT: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// min c·x subject to row constraints and box bounds l ≤ x ≤ u.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub minimize: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    pub fn new(minimize: Vec<f64>, bounds: Vec<(f64, f64)>) -> Self {
        LinearProgram {
            minimize,
            constraints: Vec::new(),
            bounds,
        }
    }

    pub fn push(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { coeffs, sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.minimize.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpError {
    /// Mismatched coefficient/bound lengths, or a bad bound pair.
    Dimension(String),
    /// The pivot loop exceeded its iteration cap (should not happen with
    /// Bland's rule; kept as a hard backstop).
    IterationLimit,
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpError::Dimension(e) => write!(f, "malformed program: {e}"),
            LpError::IterationLimit => write!(f, "simplex iteration limit exceeded"),
        }
    }
}

impl std::error::Error for LpError {}

#[derive(Clone, Debug)]
pub enum LpOutcome {
    Optimal { values: Vec<f64>, objective: f64 },
    Infeasible,
}

impl LpOutcome {
    /// The optimal values, panicking on infeasibility (for callers that
    /// have already established feasibility).
    pub fn optimal(&self) -> (&[f64], f64) {
        match self {
            LpOutcome::Optimal { values, objective } => (values, *objective),
            LpOutcome::Infeasible => panic!("expected a feasible program"),
        }
    }
}

/// Dense simplex tableau in canonical form: basis columns are unit vectors
/// and `obj` holds reduced costs. `rows × cols` constraint part plus a
/// right-hand-side column.
struct Tableau {
    cols: usize,
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    obj: Vec<f64>,
    obj_rhs: f64,
    basis: Vec<usize>,
    banned: Vec<bool>,
    bland: bool,
    stall: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[row][col];
        debug_assert!(piv.abs() > TOL);
        let inv = 1.0 / piv;
        for v in self.a[row].iter_mut() {
            *v *= inv;
        }
        self.rhs[row] *= inv;
        self.a[row][col] = 1.0; // exact unit, no roundoff residue
        for r in 0..self.a.len() {
            if r == row {
                continue;
            }
            let factor = self.a[r][col];
            if factor == 0.0 {
                continue;
            }
            for c in 0..self.cols {
                self.a[r][c] -= factor * self.a[row][c];
            }
            self.a[r][col] = 0.0;
            self.rhs[r] -= factor * self.rhs[row];
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            for c in 0..self.cols {
                self.obj[c] -= factor * self.a[row][c];
            }
            self.obj[col] = 0.0;
            self.obj_rhs -= factor * self.rhs[row];
        }
        self.basis[row] = col;
    }

    fn entering(&self) -> Option<usize> {
        if self.bland {
            (0..self.cols).find(|&c| !self.banned[c] && self.obj[c] < -TOL)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..self.cols {
                if self.banned[c] || self.obj[c] >= -TOL {
                    continue;
                }
                match best {
                    Some((_, v)) if self.obj[c] >= v => {}
                    _ => best = Some((c, self.obj[c])),
                }
            }
            best.map(|(c, _)| c)
        }
    }

    fn leaving(&self, col: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.a.len() {
            let coef = self.a[r][col];
            if coef <= TOL {
                continue;
            }
            let ratio = self.rhs[r] / coef;
            let better = match best {
                None => true,
                Some((br, bratio)) => {
                    if (ratio - bratio).abs() <= TOL {
                        if self.bland {
                            self.basis[r] < self.basis[br]
                        } else {
                            coef > self.a[br][col]
                        }
                    } else {
                        ratio < bratio
                    }
                }
            };
            if better {
                best = Some((r, ratio));
            }
        }
        best.map(|(r, _)| r)
    }

    /// Pivot until no reduced cost is negative. Returns false when some
    /// entering column has no positive row (unbounded ray).
    fn run(&mut self, budget: &mut usize) -> Result<bool, LpError> {
        while let Some(col) = self.entering() {
            if *budget == 0 {
                return Err(LpError::IterationLimit);
            }
            *budget -= 1;
            let Some(row) = self.leaving(col) else {
                return Ok(false);
            };
            let before = self.obj_rhs;
            self.pivot(row, col);
            if !self.bland {
                if (self.obj_rhs - before).abs() <= 1e-12 {
                    self.stall += 1;
                    if self.stall > STALL_LIMIT {
                        self.bland = true;
                    }
                } else {
                    self.stall = 0;
                }
            }
        }
        Ok(true)
    }
}

/// Solve min c·x over the constraints and box bounds. All bounds must be
/// finite, which also rules out unbounded objectives.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    let n = lp.num_vars();
    if lp.bounds.len() != n {
        return Err(LpError::Dimension(format!(
            "{} bounds for {} variables",
            lp.bounds.len(),
            n
        )));
    }
    for (j, (lo, hi)) in lp.bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(LpError::Dimension(format!("bound of variable {j} not finite")));
        }
        if lo > hi {
            return Err(LpError::Dimension(format!(
                "variable {j} has lower bound {lo} above upper bound {hi}"
            )));
        }
    }
    for (r, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(LpError::Dimension(format!(
                "constraint {r} has {} coefficients for {} variables",
                c.coeffs.len(),
                n
            )));
        }
    }

    // Shift to y = x − lower ≥ 0; upper bounds become rows y_j ≤ hi − lo.
    let lower: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
    for c in &lp.constraints {
        let shift: f64 = c.coeffs.iter().zip(&lower).map(|(a, l)| a * l).sum();
        rows.push((c.coeffs.clone(), c.sense, c.rhs - shift));
    }
    for (j, (lo, hi)) in lp.bounds.iter().enumerate() {
        let span = hi - lo;
        let mut coeffs = vec![0.0; n];
        coeffs[j] = 1.0;
        rows.push((coeffs, Sense::Le, span));
    }

    // Normalize to rhs ≥ 0, then attach slack/surplus/artificial columns.
    let m = rows.len();
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            for v in row.0.iter_mut() {
                *v = -*v;
            }
            row.2 = -row.2;
            row.1 = match row.1 {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }
    let slack_count = rows
        .iter()
        .filter(|r| matches!(r.1, Sense::Le | Sense::Ge))
        .count();
    let art_count = rows
        .iter()
        .filter(|r| matches!(r.1, Sense::Ge | Sense::Eq))
        .count();
    let cols = n + slack_count + art_count;
    let mut a = vec![vec![0.0; cols]; m];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut artificial = vec![false; cols];
    let mut next_slack = n;
    let mut next_art = n + slack_count;
    for (r, (coeffs, sense, b)) in rows.iter().enumerate() {
        a[r][..n].copy_from_slice(coeffs);
        rhs[r] = *b;
        match sense {
            Sense::Le => {
                a[r][next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                a[r][next_slack] = -1.0;
                next_slack += 1;
                a[r][next_art] = 1.0;
                artificial[next_art] = true;
                basis[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                a[r][next_art] = 1.0;
                artificial[next_art] = true;
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificials.
    let mut obj = vec![0.0; cols];
    let mut obj_rhs = 0.0;
    for c in 0..cols {
        if artificial[c] {
            obj[c] = 1.0;
        }
    }
    for r in 0..m {
        if artificial[basis[r]] {
            for c in 0..cols {
                obj[c] -= a[r][c];
            }
            obj_rhs -= rhs[r];
        }
    }
    let mut t = Tableau {
        cols,
        a,
        rhs,
        obj,
        obj_rhs,
        basis,
        banned: vec![false; cols],
        bland: false,
        stall: 0,
    };
    let mut budget = 20_000 + 200 * (m + cols);
    let bounded = t.run(&mut budget)?;
    debug_assert!(bounded, "phase-1 objective is bounded below by zero");
    if -t.obj_rhs > 1e-7 {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive any leftover (zero-valued) artificials out of the basis, then
    // ban every artificial column from re-entering.
    for r in 0..m {
        if !artificial[t.basis[r]] {
            continue;
        }
        if let Some(col) = (0..n).find(|&c| t.a[r][c].abs() > TOL) {
            t.pivot(r, col);
        }
        // A row with no eligible pivot is redundant; its artificial stays
        // basic at value zero, which is harmless once banned.
    }
    for c in 0..cols {
        if artificial[c] {
            t.banned[c] = true;
        }
    }

    // Phase 2: original objective expressed over the current basis.
    t.obj = vec![0.0; cols];
    t.obj[..n].copy_from_slice(&lp.minimize);
    t.obj_rhs = 0.0;
    t.bland = false;
    t.stall = 0;
    for r in 0..m {
        let b = t.basis[r];
        let factor = t.obj[b];
        if factor != 0.0 {
            for c in 0..cols {
                t.obj[c] -= factor * t.a[r][c];
            }
            t.obj[b] = 0.0;
            t.obj_rhs -= factor * t.rhs[r];
        }
    }
    let bounded = t.run(&mut budget)?;
    debug_assert!(bounded, "box bounds keep the feasible region bounded");

    // Read off, unshift, clamp residual float dust into the box.
    let mut values = lower;
    for r in 0..m {
        if t.basis[r] < n {
            values[t.basis[r]] += t.rhs[r];
        }
    }
    for (j, v) in values.iter_mut().enumerate() {
        *v = v.clamp(lp.bounds[j].0, lp.bounds[j].1);
    }
    let objective = lp
        .minimize
        .iter()
        .zip(&values)
        .map(|(c, x)| c * x)
        .sum();
    Ok(LpOutcome::Optimal { values, objective })
}
