//! Self-contained linear-program solver: two-phase primal simplex with
//! Bland's anti-cycling rule on a dense tableau, in float64 or exact
//! rational arithmetic. Deterministic over speed; problem sizes here are
//! a few thousand columns at most.

use num_traits::{One, Signed, Zero};

use crate::num::{rat_f64, rat_from_f64, Rat};
use crate::Error;

pub const FEAS_TOL: f64 = 1e-9;
pub const OPT_TOL: f64 = 1e-9;
pub const REPORT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub lower: Option<Rat>,
    pub upper: Option<Rat>,
}

#[derive(Debug, Clone)]
pub struct RowDef {
    pub name: String,
    pub terms: Vec<(usize, Rat)>,
    pub rel: Rel,
    pub rhs: Rat,
}

/// A maximization LP over named variables with optional bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub vars: Vec<VarDef>,
    pub rows: Vec<RowDef>,
    pub objective: Vec<(usize, Rat)>,
}

impl LinearProgram {
    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<Rat>, upper: Option<Rat>) -> usize {
        self.vars.push(VarDef {
            name: name.into(),
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    pub fn add_nonneg(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, Some(Rat::zero()), None)
    }

    pub fn add_row(&mut self, name: impl Into<String>, terms: Vec<(usize, Rat)>, rel: Rel, rhs: Rat) {
        self.rows.push(RowDef {
            name: name.into(),
            terms,
            rel,
            rhs,
        });
    }

    pub fn validate(&self) -> Result<(), Error> {
        for row in &self.rows {
            for (v, _) in &row.terms {
                if *v >= self.vars.len() {
                    return Err(Error::InvalidArgument(format!(
                        "row {} references unknown variable {v}",
                        row.name
                    )));
                }
            }
        }
        for (v, _) in &self.objective {
            if *v >= self.vars.len() {
                return Err(Error::InvalidArgument(format!(
                    "objective references unknown variable {v}"
                )));
            }
        }
        Ok(())
    }

    /// Plain-text dump in an LP-format-like layout, for debugging only.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "maximize");
        let terms: Vec<String> = self
            .objective
            .iter()
            .map(|(v, c)| format!("{} {}", crate::num::rat_str(c), self.vars[*v].name))
            .collect();
        let _ = writeln!(out, "  {}", terms.join(" + "));
        let _ = writeln!(out, "subject to");
        for row in &self.rows {
            let terms: Vec<String> = row
                .terms
                .iter()
                .map(|(v, c)| format!("{} {}", crate::num::rat_str(c), self.vars[*v].name))
                .collect();
            let rel = match row.rel {
                Rel::Le => "<=",
                Rel::Eq => "=",
                Rel::Ge => ">=",
            };
            let _ = writeln!(
                out,
                "  {}: {} {} {}",
                row.name,
                terms.join(" + "),
                rel,
                crate::num::rat_str(&row.rhs)
            );
        }
        let _ = writeln!(out, "bounds");
        for v in &self.vars {
            let lo = v
                .lower
                .as_ref()
                .map_or("-inf".to_string(), crate::num::rat_str);
            let hi = v
                .upper
                .as_ref()
                .map_or("+inf".to_string(), crate::num::rat_str);
            let _ = writeln!(out, "  {} <= {} <= {}", lo, v.name, hi);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithMode {
    Float,
    Rational,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Optimal point in original variable space (exact values; in float mode
    /// these are the binary rationals of the f64 solution).
    pub point: Vec<Rat>,
    /// Objective re-evaluated exactly from `point`.
    pub objective: Rat,
    /// Row duals in original row order. For infeasible programs these form a
    /// Farkas certificate from phase one.
    pub row_duals: Vec<Rat>,
    pub used_rational_fallback: bool,
}

// ---------------------------------------------------------------------------
// Scalar abstraction
// ---------------------------------------------------------------------------

trait Scalar: Clone + PartialOrd + Sized {
    /// Exact arithmetic never drifts, so refactorization is skipped.
    const EXACT: bool;
    fn s_zero() -> Self;
    fn s_from_rat(r: &Rat) -> Self;
    fn s_to_rat(&self) -> Rat;
    fn s_add_assign(&mut self, o: &Self);
    fn s_sub_mul(&mut self, a: &Self, b: &Self);
    fn s_mul(&self, o: &Self) -> Self;
    fn s_div(&self, o: &Self) -> Self;
    fn s_is_zero(&self) -> bool;
    /// Strictly positive beyond tolerance.
    fn s_pos(&self) -> bool;
    /// Usable as a pivot element.
    fn s_pivot_ok(&self) -> bool;
    /// |self| > |other|, for refactorization pivot choice.
    fn s_abs_gt(&self, other: &Self) -> bool;
    /// Strong enough to divide by without amplifying drift.
    fn s_strong_pivot(&self) -> bool;
    /// Snap tiny negative right-hand sides back to zero after a rebuild.
    fn s_clamp_tiny_neg(&mut self);
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn s_zero() -> Self {
        0.0
    }
    fn s_from_rat(r: &Rat) -> Self {
        rat_f64(r)
    }
    fn s_to_rat(&self) -> Rat {
        rat_from_f64(*self)
    }
    fn s_add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn s_sub_mul(&mut self, a: &Self, b: &Self) {
        *self -= a * b;
    }
    fn s_mul(&self, o: &Self) -> Self {
        self * o
    }
    fn s_div(&self, o: &Self) -> Self {
        self / o
    }
    fn s_is_zero(&self) -> bool {
        self.abs() <= FEAS_TOL
    }
    fn s_pos(&self) -> bool {
        *self > OPT_TOL
    }
    fn s_pivot_ok(&self) -> bool {
        self.abs() > 1e-10
    }
    fn s_abs_gt(&self, other: &Self) -> bool {
        self.abs() > other.abs()
    }
    fn s_strong_pivot(&self) -> bool {
        self.abs() > 1e-9
    }
    fn s_clamp_tiny_neg(&mut self) {
        if *self < 0.0 && *self > -1e-7 {
            *self = 0.0;
        }
    }
}

impl Scalar for Rat {
    const EXACT: bool = true;
    fn s_zero() -> Self {
        <Rat as Zero>::zero()
    }
    fn s_from_rat(r: &Rat) -> Self {
        r.clone()
    }
    fn s_to_rat(&self) -> Rat {
        self.clone()
    }
    fn s_add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn s_sub_mul(&mut self, a: &Self, b: &Self) {
        if !a.is_zero() && !b.is_zero() {
            *self -= a * b;
        }
    }
    fn s_mul(&self, o: &Self) -> Self {
        self * o
    }
    fn s_div(&self, o: &Self) -> Self {
        self / o
    }
    fn s_is_zero(&self) -> bool {
        self.is_zero()
    }
    fn s_pos(&self) -> bool {
        self.is_positive()
    }
    fn s_pivot_ok(&self) -> bool {
        !self.is_zero()
    }
    fn s_abs_gt(&self, other: &Self) -> bool {
        self.abs() > other.abs()
    }
    fn s_strong_pivot(&self) -> bool {
        !self.is_zero()
    }
    fn s_clamp_tiny_neg(&mut self) {}
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

enum VarMap {
    /// x = lower + column
    Shift(usize, Rat),
    /// x = plus - minus
    Split(usize, usize),
}

struct Standardized {
    // Rows over structural columns, all with nonnegative rhs after sign flips.
    rows: Vec<(Vec<(usize, Rat)>, Rel, Rat)>,
    /// true when the original row was multiplied by -1.
    flipped: Vec<bool>,
    /// objective over structural columns (shift constants dropped; the
    /// public result re-evaluates the objective on the original point).
    objective: Vec<(usize, Rat)>,
    var_map: Vec<VarMap>,
    ncols: usize,
    /// original-row index for each standardized row; bound rows map to None.
    origin: Vec<Option<usize>>,
}

fn standardize(lp: &LinearProgram) -> Standardized {
    let mut var_map = Vec::with_capacity(lp.vars.len());
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(Vec<(usize, Rat)>, Rel, Rat)> = Vec::new();
    for v in &lp.vars {
        match (&v.lower, &v.upper) {
            (Some(l), u) => {
                let col = ncols;
                ncols += 1;
                if let Some(u) = u {
                    bound_rows.push((vec![(col, Rat::one())], Rel::Le, u - l));
                }
                var_map.push(VarMap::Shift(col, l.clone()));
            }
            (None, u) => {
                let plus = ncols;
                let minus = ncols + 1;
                ncols += 2;
                if let Some(u) = u {
                    bound_rows.push((
                        vec![(plus, Rat::one()), (minus, -Rat::one())],
                        Rel::Le,
                        u.clone(),
                    ));
                }
                var_map.push(VarMap::Split(plus, minus));
            }
        }
    }

    let expand = |terms: &[(usize, Rat)]| -> (Vec<(usize, Rat)>, Rat) {
        let mut cols: Vec<(usize, Rat)> = Vec::with_capacity(terms.len() + 2);
        let mut constant = Rat::zero();
        for (v, c) in terms {
            match &var_map[*v] {
                VarMap::Shift(col, l) => {
                    cols.push((*col, c.clone()));
                    constant += c * l;
                }
                VarMap::Split(p, mn) => {
                    cols.push((*p, c.clone()));
                    cols.push((*mn, -c.clone()));
                }
            }
        }
        (cols, constant)
    };

    let mut rows = Vec::new();
    let mut origin = Vec::new();
    let mut flipped = Vec::new();
    for (ridx, row) in lp.rows.iter().enumerate() {
        let (cols, constant) = expand(&row.terms);
        let rhs = &row.rhs - constant;
        rows.push((cols, row.rel, rhs));
        origin.push(Some(ridx));
        flipped.push(false);
    }
    for br in bound_rows {
        rows.push(br);
        origin.push(None);
        flipped.push(false);
    }
    // Make every rhs nonnegative.
    for (idx, (cols, rel, rhs)) in rows.iter_mut().enumerate() {
        if rhs.is_negative() {
            for (_, c) in cols.iter_mut() {
                *c = -c.clone();
            }
            *rhs = -rhs.clone();
            *rel = match *rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
            flipped[idx] = true;
        }
    }

    let (objective, _obj_const) = expand(&lp.objective);
    Standardized {
        rows,
        flipped,
        objective,
        var_map,
        ncols,
        origin,
    }
}

// ---------------------------------------------------------------------------
// Simplex core
// ---------------------------------------------------------------------------

enum SimplexOutcome<T> {
    Optimal {
        point: Vec<T>,
        duals: Vec<T>,
    },
    Infeasible {
        farkas: Vec<T>,
    },
    Unbounded,
    Stalled,
}

struct Tableau<T> {
    // rows x (total_cols + 1), last entry is rhs
    t: Vec<Vec<T>>,
    /// Pristine copy of the initial rows, the source for refactorization.
    init: Vec<Vec<T>>,
    basis: Vec<usize>,
    total_cols: usize,
    eligible: Vec<bool>,
    // column holding each standardized row's initial identity (for duals)
    identity_col: Vec<usize>,
}

/// Rebuilds the tableau for the current basis by Gauss-Jordan elimination on
/// the pristine rows, shedding accumulated float drift. Returns false when a
/// basis column has no usable pivot (numerically singular); the caller then
/// keeps the old tableau.
fn refactorize<T: Scalar>(tab: &mut Tableau<T>) -> bool {
    if T::EXACT {
        return true;
    }
    let nrows = tab.t.len();
    let total = tab.total_cols;
    let mut m = tab.init.clone();
    // Full pivoting over (unused row, pending basis column) pairs keeps the
    // elimination stable even when the basis is poorly conditioned.
    let mut row_of_basis_pos = vec![usize::MAX; nrows];
    let mut used_row = vec![false; nrows];
    let mut pending: Vec<usize> = (0..nrows).collect();
    while let Some((which, p)) = {
        let mut best: Option<(usize, usize)> = None;
        for (w, &bpos) in pending.iter().enumerate() {
            let col = tab.basis[bpos];
            for (pr, row) in m.iter().enumerate() {
                if used_row[pr] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bw, bp)) => {
                        let bcol = tab.basis[pending[bw]];
                        row[col].s_abs_gt(&m[bp][bcol])
                    }
                };
                if better {
                    best = Some((w, pr));
                }
            }
        }
        best
    } {
        let bpos = pending[which];
        let col = tab.basis[bpos];
        // A weak pivot means the basis matrix is near-singular; rebuilt rows
        // would be garbage, so give up and let the caller decide.
        if !m[p][col].s_strong_pivot() {
            return false;
        }
        pending.swap_remove(which);
        used_row[p] = true;
        row_of_basis_pos[bpos] = p;
        let pivot_val = m[p][col].clone();
        for j in 0..=total {
            m[p][j] = m[p][j].s_div(&pivot_val);
        }
        for q in 0..nrows {
            if q == p {
                continue;
            }
            let factor = m[q][col].clone();
            if factor.s_is_zero() {
                continue;
            }
            for j in 0..=total {
                let a = m[p][j].clone();
                let mut v = m[q][j].clone();
                v.s_sub_mul(&factor, &a);
                m[q][j] = v;
            }
            m[q][col] = T::s_zero();
        }
    }
    if row_of_basis_pos.iter().any(|&r| r == usize::MAX) {
        return false;
    }
    let mut fresh = Vec::with_capacity(nrows);
    for r in 0..nrows {
        let mut row = m[row_of_basis_pos[r]].clone();
        row[total].s_clamp_tiny_neg();
        fresh.push(row);
    }
    tab.t = fresh;
    true
}

fn simplex<T: Scalar>(std_lp: &Standardized, iter_cap: usize) -> SimplexOutcome<T> {
    let nrows = std_lp.rows.len();
    let ncols = std_lp.ncols;

    // Count extra columns: slack for Le, surplus for Ge, artificial for Ge/Eq.
    let mut total = ncols;
    let mut slack_col = vec![usize::MAX; nrows];
    let mut art_col = vec![usize::MAX; nrows];
    for (r, (_, rel, _)) in std_lp.rows.iter().enumerate() {
        match rel {
            Rel::Le => {
                slack_col[r] = total;
                total += 1;
            }
            Rel::Ge => {
                slack_col[r] = total;
                total += 1;
                art_col[r] = total;
                total += 1;
            }
            Rel::Eq => {
                art_col[r] = total;
                total += 1;
            }
        }
    }

    let mut tab = Tableau {
        t: vec![vec![T::s_zero(); total + 1]; nrows],
        init: Vec::new(),
        basis: vec![usize::MAX; nrows],
        total_cols: total,
        eligible: vec![true; total],
        identity_col: vec![usize::MAX; nrows],
    };
    let mut has_artificial = false;
    for (r, (cols, rel, rhs)) in std_lp.rows.iter().enumerate() {
        for (c, v) in cols {
            let mut s = tab.t[r][*c].clone();
            s.s_add_assign(&T::s_from_rat(v));
            tab.t[r][*c] = s;
        }
        tab.t[r][total] = T::s_from_rat(rhs);
        match rel {
            Rel::Le => {
                tab.t[r][slack_col[r]] = T::s_from_rat(&Rat::one());
                tab.basis[r] = slack_col[r];
                tab.identity_col[r] = slack_col[r];
            }
            Rel::Ge => {
                tab.t[r][slack_col[r]] = T::s_from_rat(&(-Rat::one()));
                tab.t[r][art_col[r]] = T::s_from_rat(&Rat::one());
                tab.basis[r] = art_col[r];
                tab.identity_col[r] = art_col[r];
                has_artificial = true;
            }
            Rel::Eq => {
                tab.t[r][art_col[r]] = T::s_from_rat(&Rat::one());
                tab.basis[r] = art_col[r];
                tab.identity_col[r] = art_col[r];
                has_artificial = true;
            }
        }
    }

    tab.init = tab.t.clone();

    let mut artificial_flag = vec![false; total];
    for r in 0..nrows {
        if art_col[r] != usize::MAX {
            artificial_flag[art_col[r]] = true;
        }
    }
    let is_artificial = |c: usize| -> bool { c < total && artificial_flag[c] };

    // Phase 1: maximize -(sum of artificials).
    if has_artificial {
        let mut cost1 = vec![T::s_zero(); total];
        for r in 0..nrows {
            if art_col[r] != usize::MAX {
                cost1[art_col[r]] = T::s_from_rat(&(-Rat::one()));
            }
        }
        let outcome = run_phase(&mut tab, &cost1, iter_cap);
        match outcome {
            PhaseOutcome::Done => {}
            PhaseOutcome::Unbounded => {
                // Phase-1 objective is bounded above by zero; cannot happen.
                return SimplexOutcome::Stalled;
            }
            PhaseOutcome::Stalled => return SimplexOutcome::Stalled,
        }
        if !refactorize(&mut tab) {
            return SimplexOutcome::Stalled;
        }
        let mut infeasibility = T::s_zero();
        for r in 0..nrows {
            if is_artificial(tab.basis[r]) {
                infeasibility.s_add_assign(&tab.t[r][total]);
            }
        }
        if infeasibility.s_pos() {
            if std::env::var("MECHKIT_LP_TRACE").is_ok() {
                eprintln!("phase-1 infeasibility: {:?}", infeasibility.s_to_rat());
            }
            let farkas = extract_duals(&tab, &cost1, nrows);
            return SimplexOutcome::Infeasible { farkas };
        }
        // Drive remaining artificials to nonbasic where possible.
        for r in 0..nrows {
            if is_artificial(tab.basis[r]) {
                let pivot_col = (0..total)
                    .find(|&c| !is_artificial(c) && tab.t[r][c].s_pivot_ok());
                if let Some(c) = pivot_col {
                    pivot(&mut tab, r, c);
                }
            }
        }
        for c in 0..total {
            if is_artificial(c) {
                tab.eligible[c] = false;
            }
        }
    }

    // Phase 2.
    let mut cost2 = vec![T::s_zero(); total];
    for (c, v) in &std_lp.objective {
        cost2[*c].s_add_assign(&T::s_from_rat(v));
    }
    match run_phase(&mut tab, &cost2, iter_cap) {
        PhaseOutcome::Done => {}
        PhaseOutcome::Unbounded => return SimplexOutcome::Unbounded,
        PhaseOutcome::Stalled => return SimplexOutcome::Stalled,
    }

    refactorize(&mut tab);
    let mut point = vec![T::s_zero(); ncols];
    for r in 0..nrows {
        if tab.basis[r] < ncols {
            point[tab.basis[r]] = tab.t[r][total].clone();
        }
    }
    let duals = extract_duals(&tab, &cost2, nrows);
    SimplexOutcome::Optimal { point, duals }
}

enum PhaseOutcome {
    Done,
    Unbounded,
    Stalled,
}

/// Maximizes `cost` over the current tableau with Bland's rule.
fn reduced_costs<T: Scalar>(tab: &Tableau<T>, cost: &[T]) -> Vec<T> {
    let total = tab.total_cols;
    let mut rc: Vec<T> = cost.to_vec();
    for r in 0..tab.t.len() {
        let cb = &cost[tab.basis[r]];
        if cb.s_is_zero() {
            continue;
        }
        for j in 0..total {
            let a = tab.t[r][j].clone();
            let mut v = rc[j].clone();
            v.s_sub_mul(cb, &a);
            rc[j] = v;
        }
    }
    rc
}

fn run_phase<T: Scalar>(tab: &mut Tableau<T>, cost: &[T], iter_cap: usize) -> PhaseOutcome {
    let nrows = tab.t.len();
    let total = tab.total_cols;

    // Reduced costs rc[j] = c_j - c_B . B^-1 A_j are updated incrementally;
    // in float mode both the tableau and rc are rebuilt from pristine data
    // periodically and before any terminal verdict, so drift never decides
    // the outcome.
    let mut rc: Vec<T> = reduced_costs(tab, cost);
    let mut dirty = 0usize;

    for _ in 0..iter_cap {
        if !T::EXACT && dirty >= 384 {
            if !refactorize(tab) {
                return PhaseOutcome::Stalled;
            }
            rc = reduced_costs(tab, cost);
            dirty = 0;
        }
        // Bland: entering = smallest-index eligible column with rc > 0.
        let mut entering = (0..total).find(|&j| tab.eligible[j] && rc[j].s_pos());
        if entering.is_none() && dirty > 0 {
            if !refactorize(tab) {
                return PhaseOutcome::Stalled;
            }
            rc = reduced_costs(tab, cost);
            dirty = 0;
            entering = (0..total).find(|&j| tab.eligible[j] && rc[j].s_pos());
        }
        let Some(col) = entering else {
            return PhaseOutcome::Done;
        };
        // Ratio test; tie-break on smallest basis variable index.
        let mut leave: Option<(usize, T)> = None;
        for r in 0..nrows {
            if !tab.t[r][col].s_pos() {
                continue;
            }
            let ratio = tab.t[r][total].s_div(&tab.t[r][col]);
            let replace = match &leave {
                None => true,
                Some((lr, lratio)) => {
                    ratio < *lratio
                        || (ratio == *lratio && tab.basis[r] < tab.basis[*lr])
                }
            };
            if replace {
                leave = Some((r, ratio));
            }
        }
        let Some((row, _)) = leave else {
            if dirty > 0 {
                // A missing leaving row can be drift; rebuilt state gets one
                // chance to produce a pivot before declaring unbounded.
                if !refactorize(tab) {
                    return PhaseOutcome::Stalled;
                }
                rc = reduced_costs(tab, cost);
                dirty = 0;
                continue;
            }
            return PhaseOutcome::Unbounded;
        };
        pivot(tab, row, col);
        dirty += 1;
        // Update reduced costs: rc -= rc[col] * (pivot row).
        let factor = rc[col].clone();
        if !factor.s_is_zero() {
            for j in 0..total {
                let a = tab.t[row][j].clone();
                let mut v = rc[j].clone();
                v.s_sub_mul(&factor, &a);
                rc[j] = v;
            }
        }
        rc[col] = T::s_zero();
    }
    PhaseOutcome::Stalled
}

fn pivot<T: Scalar>(tab: &mut Tableau<T>, row: usize, col: usize) {
    let total = tab.total_cols;
    tab.basis[row] = col;
    let pivot_val = tab.t[row][col].clone();
    for j in 0..=total {
        tab.t[row][j] = tab.t[row][j].s_div(&pivot_val);
    }
    for r in 0..tab.t.len() {
        if r == row {
            continue;
        }
        let factor = tab.t[r][col].clone();
        if factor.s_is_zero() {
            continue;
        }
        for j in 0..=total {
            let a = tab.t[row][j].clone();
            let mut v = tab.t[r][j].clone();
            v.s_sub_mul(&factor, &a);
            tab.t[r][j] = v;
        }
        tab.t[r][col] = T::s_zero();
    }
}

/// y_r = c_B . (B^-1)_{., r}, read through each row's initial identity column
/// (negated for surplus identities is not needed: identities are +1 columns).
fn extract_duals<T: Scalar>(tab: &Tableau<T>, cost: &[T], nrows: usize) -> Vec<T> {
    let mut duals = Vec::with_capacity(nrows);
    for r in 0..nrows {
        let idc = tab.identity_col[r];
        let mut y = T::s_zero();
        for i in 0..nrows {
            let cb = &cost[tab.basis[i]];
            if cb.s_is_zero() {
                continue;
            }
            y.s_add_assign(&cb.s_mul(&tab.t[i][idc]));
        }
        duals.push(y);
    }
    duals
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

pub fn solve_lp(lp: &LinearProgram, mode: ArithMode) -> Result<LpResult, Error> {
    lp.validate()?;
    let std_lp = standardize(lp);
    let iter_cap = 20_000 + 60 * (std_lp.rows.len() + std_lp.ncols);

    fn to_rat_outcome<T: Scalar>(o: SimplexOutcome<T>) -> SimplexOutcome<Rat> {
        match o {
            SimplexOutcome::Optimal { point, duals } => SimplexOutcome::Optimal {
                point: point.iter().map(Scalar::s_to_rat).collect(),
                duals: duals.iter().map(Scalar::s_to_rat).collect(),
            },
            SimplexOutcome::Infeasible { farkas } => SimplexOutcome::Infeasible {
                farkas: farkas.iter().map(Scalar::s_to_rat).collect(),
            },
            SimplexOutcome::Unbounded => SimplexOutcome::Unbounded,
            SimplexOutcome::Stalled => SimplexOutcome::Stalled,
        }
    }

    let (outcome, fallback) = match mode {
        ArithMode::Rational => (to_rat_outcome(simplex::<Rat>(&std_lp, iter_cap)), false),
        ArithMode::Float => match simplex::<f64>(&std_lp, iter_cap) {
            SimplexOutcome::Stalled => {
                if std::env::var("MECHKIT_LP_TRACE").is_ok() {
                    eprintln!("float simplex stalled; retrying in rational mode");
                }
                (to_rat_outcome(simplex::<Rat>(&std_lp, iter_cap)), true)
            }
            other => (to_rat_outcome(other), false),
        },
    };

    let finish = |raw_point: Vec<Rat>, raw_duals: Vec<Rat>, status: LpStatus| {
        let point: Vec<Rat> = std_lp
            .var_map
            .iter()
            .map(|vm| match vm {
                VarMap::Shift(c, l) => l + &raw_point[*c],
                VarMap::Split(p, m) => &raw_point[*p] - &raw_point[*m],
            })
            .collect();
        let objective = if status == LpStatus::Optimal {
            lp.objective.iter().map(|(v, c)| c * &point[*v]).sum::<Rat>()
        } else {
            Rat::zero()
        };
        // Map duals back to original rows, undoing sign flips.
        let mut row_duals = vec![Rat::zero(); lp.rows.len()];
        for (std_r, orig) in std_lp.origin.iter().enumerate() {
            if let Some(orig_r) = orig {
                let mut d = raw_duals.get(std_r).cloned().unwrap_or_else(Rat::zero);
                if std_lp.flipped[std_r] {
                    d = -d;
                }
                row_duals[*orig_r] = d;
            }
        }
        LpResult {
            status,
            point,
            objective,
            row_duals,
            used_rational_fallback: fallback,
        }
    };

    match outcome {
        SimplexOutcome::Optimal { point, duals } => {
            let point: Vec<Rat> = point.iter().map(Scalar::s_to_rat).collect();
            let duals: Vec<Rat> = duals.iter().map(Scalar::s_to_rat).collect();
            Ok(finish(point, duals, LpStatus::Optimal))
        }
        SimplexOutcome::Infeasible { farkas } => {
            let duals: Vec<Rat> = farkas.iter().map(Scalar::s_to_rat).collect();
            Ok(finish(vec![Rat::zero(); std_lp.ncols], duals, LpStatus::Infeasible))
        }
        SimplexOutcome::Unbounded => Ok(finish(
            vec![Rat::zero(); std_lp.ncols],
            vec![],
            LpStatus::Unbounded,
        )),
        SimplexOutcome::Stalled => Err(Error::Internal(
            "simplex stalled in both float and rational mode".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_violation: Rat,
    pub worst: Option<String>,
    pub row_violations: Vec<Rat>,
}

/// Max constraint/bound violation of `point`; zero iff feasible.
pub fn check_point(lp: &LinearProgram, point: &[Rat]) -> CheckReport {
    let mut max_violation = Rat::zero();
    let mut worst = None;
    let mut row_violations = Vec::with_capacity(lp.rows.len());
    for row in &lp.rows {
        let lhs: Rat = row.terms.iter().map(|(v, c)| c * &point[*v]).sum();
        let viol = match row.rel {
            Rel::Le => lhs - &row.rhs,
            Rel::Ge => &row.rhs - lhs,
            Rel::Eq => (lhs - &row.rhs).abs(),
        };
        let viol = if viol.is_negative() { Rat::zero() } else { viol };
        if viol > max_violation {
            max_violation = viol.clone();
            worst = Some(format!("row {} violated by {}", row.name, crate::num::rat_str(&viol)));
        }
        row_violations.push(viol);
    }
    for (idx, v) in lp.vars.iter().enumerate() {
        let mut bound_viol = Rat::zero();
        if let Some(l) = &v.lower {
            let d = l - &point[idx];
            if d > bound_viol {
                bound_viol = d;
            }
        }
        if let Some(u) = &v.upper {
            let d = &point[idx] - u;
            if d > bound_viol {
                bound_viol = d;
            }
        }
        if bound_viol > max_violation {
            worst = Some(format!(
                "bound on {} violated by {}",
                v.name,
                crate::num::rat_str(&bound_viol)
            ));
            max_violation = bound_viol;
        }
    }
    CheckReport {
        max_violation,
        worst,
        row_violations,
    }
}

/// Explicit dual program: bounds become rows, primal vars become free, and
/// `min b.y` is expressed as `max -b.y`.
pub fn dual_of(lp: &LinearProgram) -> LinearProgram {
    // Canonical primal: max c.x subject to rows only (bounds folded in).
    let mut rows: Vec<RowDef> = lp.rows.clone();
    for (idx, v) in lp.vars.iter().enumerate() {
        if let Some(l) = &v.lower {
            rows.push(RowDef {
                name: format!("lb_{}", v.name),
                terms: vec![(idx, Rat::one())],
                rel: Rel::Ge,
                rhs: l.clone(),
            });
        }
        if let Some(u) = &v.upper {
            rows.push(RowDef {
                name: format!("ub_{}", v.name),
                terms: vec![(idx, Rat::one())],
                rel: Rel::Le,
                rhs: u.clone(),
            });
        }
    }
    let mut dual = LinearProgram::default();
    for row in &rows {
        let (lower, upper) = match row.rel {
            Rel::Le => (Some(Rat::zero()), None),
            Rel::Ge => (None, Some(Rat::zero())),
            Rel::Eq => (None, None),
        };
        dual.add_var(format!("y_{}", row.name), lower, upper);
    }
    // Stationarity: for each primal var, sum_r A_rj y_r = c_j.
    let mut col_terms: Vec<Vec<(usize, Rat)>> = vec![Vec::new(); lp.vars.len()];
    for (r, row) in rows.iter().enumerate() {
        for (v, c) in &row.terms {
            col_terms[*v].push((r, c.clone()));
        }
    }
    let mut cost = vec![Rat::zero(); lp.vars.len()];
    for (v, c) in &lp.objective {
        cost[*v] += c;
    }
    for (v, terms) in col_terms.into_iter().enumerate() {
        dual.add_row(
            format!("stat_{}", lp.vars[v].name),
            terms,
            Rel::Eq,
            cost[v].clone(),
        );
    }
    dual.objective = rows
        .iter()
        .enumerate()
        .map(|(r, row)| (r, -row.rhs.clone()))
        .collect();
    dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rat, rat_i};

    fn simple_lp() -> LinearProgram {
        let mut lp = LinearProgram::default();
        let x1 = lp.add_nonneg("x1");
        let x2 = lp.add_nonneg("x2");
        lp.add_row("r1", vec![(x1, rat_i(1))], Rel::Le, rat_i(1));
        lp.add_row("r2", vec![(x2, rat_i(1))], Rel::Le, rat_i(2));
        lp.objective = vec![(x1, rat_i(1)), (x2, rat_i(1))];
        lp
    }

    #[test]
    fn small_optimum_both_modes() {
        let lp = simple_lp();
        for mode in [ArithMode::Float, ArithMode::Rational] {
            let res = solve_lp(&lp, mode).unwrap();
            assert_eq!(res.status, LpStatus::Optimal);
            assert_eq!(res.objective, rat_i(3));
            assert_eq!(res.point, vec![rat_i(1), rat_i(2)]);
        }
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::default();
        let x = lp.add_nonneg("x");
        lp.add_row("r", vec![(x, rat_i(1))], Rel::Le, rat_i(-1));
        lp.objective = vec![(x, rat_i(1))];
        let res = solve_lp(&lp, ArithMode::Rational).unwrap();
        assert_eq!(res.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::default();
        let x = lp.add_nonneg("x");
        lp.objective = vec![(x, rat_i(1))];
        let res = solve_lp(&lp, ArithMode::Float).unwrap();
        assert_eq!(res.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_rows_and_free_vars() {
        // max p subject to p = x, x <= 3, x >= 0, p free
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", Some(Rat::zero()), Some(rat_i(3)));
        let p = lp.add_var("p", None, None);
        lp.add_row(
            "tie",
            vec![(p, rat_i(1)), (x, rat_i(-1))],
            Rel::Eq,
            rat_i(0),
        );
        lp.objective = vec![(p, rat_i(1))];
        let res = solve_lp(&lp, ArithMode::Rational).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert_eq!(res.objective, rat_i(3));
    }

    #[test]
    fn check_point_reports_violations() {
        let lp = simple_lp();
        let report = check_point(&lp, &[rat(3, 2), rat_i(2)]);
        assert_eq!(report.max_violation, rat(1, 2));
        assert!(report.worst.unwrap().contains("r1"));

        let ok = check_point(&lp, &[rat_i(1), rat_i(2)]);
        assert!(ok.max_violation.is_zero());

        let empty = LinearProgram::default();
        assert!(check_point(&empty, &[]).max_violation.is_zero());
    }

    #[test]
    fn solved_point_passes_check() {
        let lp = simple_lp();
        let res = solve_lp(&lp, ArithMode::Float).unwrap();
        let report = check_point(&lp, &res.point);
        assert!(crate::num::rat_f64(&report.max_violation) <= FEAS_TOL);
    }

    #[test]
    fn dual_certifies_optimum() {
        let lp = simple_lp();
        let primal = solve_lp(&lp, ArithMode::Rational).unwrap();
        let dual = dual_of(&lp);
        let dres = solve_lp(&dual, ArithMode::Rational).unwrap();
        assert_eq!(dres.status, LpStatus::Optimal);
        // dual objective is max -b.y = -(min b.y) = -primal optimum
        assert_eq!(-dres.objective, primal.objective);
    }

    #[test]
    fn degenerate_lp_terminates() {
        // Many redundant constraints through the same vertex.
        let mut lp = LinearProgram::default();
        let x = lp.add_nonneg("x");
        let y = lp.add_nonneg("y");
        for k in 1..=6i64 {
            lp.add_row(
                format!("r{k}"),
                vec![(x, rat_i(k)), (y, rat_i(k))],
                Rel::Le,
                rat_i(0),
            );
        }
        lp.objective = vec![(x, rat_i(1)), (y, rat_i(1))];
        let res = solve_lp(&lp, ArithMode::Rational).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!(res.objective.is_zero());
    }
}
