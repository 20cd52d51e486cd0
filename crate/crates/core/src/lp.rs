//! Dense two-phase simplex for the small LPs of hull clipping.
//!
//! Entering columns follow Dantzig's most-negative reduced cost; after a run
//! of degenerate pivots the solver switches to Bland's rule until the
//! objective moves again, which rules out cycling.

use crate::error::{ReachError, Result};

const COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 100_000;

/// `coefficients · x (= or ≤) rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// `min objective · x` subject to equalities, `≤` inequalities and
/// per-variable bounds (defaults `0 ≤ x < ∞`; infinite bounds allowed).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn equal(&mut self, coefficients: Vec<f64>, rhs: f64) -> &mut Self {
        self.equalities.push(Constraint { coefficients, rhs });
        self
    }

    pub fn at_most(&mut self, coefficients: Vec<f64>, rhs: f64) -> &mut Self {
        self.inequalities.push(Constraint { coefficients, rhs });
        self
    }

    pub fn at_least(&mut self, coefficients: Vec<f64>, rhs: f64) -> &mut Self {
        let negated = coefficients.into_iter().map(|v| -v).collect();
        self.at_most(negated, -rhs)
    }

    pub fn bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(ReachError::dim("variable bounds", n, self.lower.len().min(self.upper.len())));
        }
        for c in self.equalities.iter().chain(&self.inequalities) {
            if c.coefficients.len() != n {
                return Err(ReachError::dim("constraint row", n, c.coefficients.len()));
            }
            if !c.rhs.is_finite() || c.coefficients.iter().any(|v| !v.is_finite()) {
                return Err(ReachError::InvalidData("non-finite constraint".into()));
            }
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(ReachError::Infeasible);
            }
        }
        let standard = StandardForm::build(self);
        let values = standard.solve()?;
        let x = standard.recover(&values);
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: standard.pivots.get(),
        })
    }
}

/// How an original variable maps onto non-negative columns:
/// `x = offset + sign · p[col] − p[neg]`.
#[derive(Clone, Copy)]
struct VarMap {
    col: usize,
    sign: f64,
    offset: f64,
    neg: Option<usize>,
}

struct Row {
    coefs: Vec<f64>,
    rhs: f64,
    equality: bool,
}

struct StandardForm {
    columns: usize,
    cost: Vec<f64>,
    rows: Vec<Row>,
    maps: Vec<VarMap>,
    pivots: std::cell::Cell<usize>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut maps = Vec::with_capacity(lp.num_vars());
        let mut columns = 0;
        for i in 0..lp.num_vars() {
            let (lo, hi) = (lp.lower[i], lp.upper[i]);
            let map = if lo.is_finite() {
                VarMap { col: columns, sign: 1.0, offset: lo, neg: None }
            } else if hi.is_finite() {
                VarMap { col: columns, sign: -1.0, offset: hi, neg: None }
            } else {
                columns += 1;
                VarMap { col: columns - 1, sign: 1.0, offset: 0.0, neg: Some(columns) }
            };
            columns += 1;
            maps.push(map);
        }

        let mut cost = vec![0.0; columns];
        for (c, m) in lp.objective.iter().zip(&maps) {
            cost[m.col] += c * m.sign;
            if let Some(neg) = m.neg {
                cost[neg] -= c;
            }
        }

        let translate = |coefficients: &[f64], rhs: f64, equality: bool| {
            let mut coefs = vec![0.0; columns];
            let mut rhs = rhs;
            for (a, m) in coefficients.iter().zip(&maps) {
                coefs[m.col] += a * m.sign;
                if let Some(neg) = m.neg {
                    coefs[neg] -= a;
                }
                rhs -= a * m.offset;
            }
            Row { coefs, rhs, equality }
        };
        let mut rows: Vec<Row> = lp
            .equalities
            .iter()
            .map(|c| translate(&c.coefficients, c.rhs, true))
            .chain(lp.inequalities.iter().map(|c| translate(&c.coefficients, c.rhs, false)))
            .collect();
        for (i, m) in maps.iter().enumerate() {
            if lp.lower[i].is_finite() && lp.upper[i].is_finite() {
                let mut coefs = vec![0.0; columns];
                coefs[m.col] = 1.0;
                rows.push(Row { coefs, rhs: lp.upper[i] - lp.lower[i], equality: false });
            }
        }
        StandardForm {
            columns,
            cost,
            rows,
            maps,
            pivots: std::cell::Cell::new(0),
        }
    }

    fn recover(&self, p: &[f64]) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| m.offset + m.sign * p[m.col] - m.neg.map_or(0.0, |j| p[j]))
            .collect()
    }

    /// Optimal values of the non-negative columns.
    fn solve(&self) -> Result<Vec<f64>> {
        let m = self.rows.len();
        let slacks: Vec<usize> = (0..m).filter(|&r| !self.rows[r].equality).collect();
        let artificial_rows: Vec<usize> = (0..m)
            .filter(|&r| self.rows[r].equality || self.rows[r].rhs < 0.0)
            .collect();
        let n_struct = self.columns;
        let n_slack = slacks.len();
        let n_art = artificial_rows.len();
        let width = n_struct + n_slack + n_art + 1;
        let art_start = n_struct + n_slack;

        let mut data = SCRATCH.with(|s| std::mem::take(&mut *s.borrow_mut()));
        data.clear();
        data.resize((m + 2) * width, 0.0);
        let mut t = Tableau {
            width,
            data,
            basis: vec![0; m],
            rows: m,
        };
        let mut slack_of_row = vec![usize::MAX; m];
        for (k, &r) in slacks.iter().enumerate() {
            slack_of_row[r] = n_struct + k;
        }
        let mut art_of_row = vec![usize::MAX; m];
        for (k, &r) in artificial_rows.iter().enumerate() {
            art_of_row[r] = art_start + k;
        }
        for (r, row) in self.rows.iter().enumerate() {
            let flip = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let line = t.row_mut(r);
            for (j, a) in row.coefs.iter().enumerate() {
                line[j] = flip * a;
            }
            if slack_of_row[r] != usize::MAX {
                line[slack_of_row[r]] = flip;
            }
            if art_of_row[r] != usize::MAX {
                line[art_of_row[r]] = 1.0;
            }
            line[width - 1] = flip * row.rhs;
            t.basis[r] = if art_of_row[r] != usize::MAX { art_of_row[r] } else { slack_of_row[r] };
        }

        // Row m: phase-two reduced costs; row m + 1: phase-one reduced costs.
        let (body, objectives) = t.data.split_at_mut(m * width);
        let (phase2, phase1) = objectives.split_at_mut(width);
        phase2[..n_struct].copy_from_slice(&self.cost);
        for &r in &artificial_rows {
            let line = &body[r * width..(r + 1) * width];
            for j in 0..art_start {
                phase1[j] -= line[j];
            }
            phase1[width - 1] -= line[width - 1];
        }

        if n_art > 0 {
            t.optimize(m + 1, width - 1, &self.pivots)?;
            let scale = self.rows.iter().fold(1.0f64, |s, r| s.max(r.rhs.abs()));
            if -t.at(m + 1, width - 1) > 1e-9 * scale {
                return Err(ReachError::Infeasible);
            }
            for r in 0..m {
                if t.basis[r] < art_start {
                    continue;
                }
                let replacement = (0..art_start)
                    .filter(|&j| t.at(r, j).abs() > 1e-9)
                    .max_by(|&p, &q| t.at(r, p).abs().total_cmp(&t.at(r, q).abs()));
                if let Some(j) = replacement {
                    t.pivot(r, j);
                    self.pivots.set(self.pivots.get() + 1);
                }
            }
        }
        t.optimize(m, art_start, &self.pivots)?;

        let mut values = vec![0.0; n_struct];
        for r in 0..m {
            if t.basis[r] < n_struct {
                values[t.basis[r]] = t.at(r, width - 1).max(0.0);
            }
        }
        Ok(values)
    }
}

impl Drop for Tableau {
    fn drop(&mut self) {
        let data = std::mem::take(&mut self.data);
        SCRATCH.with(|s| *s.borrow_mut() = data);
    }
}

thread_local! {
    // Tableau storage reused across solves on the same thread.
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

struct Tableau {
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    rows: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.width..(r + 1) * self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for v in self.row_mut(r) {
            *v /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for line in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = line[c];
            if f != 0.0 {
                for (v, q) in line.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * q;
                }
                line[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes the cost row `cost_row` over columns `< allowed`.
    fn optimize(&mut self, cost_row: usize, allowed: usize, counter: &std::cell::Cell<usize>) -> Result<()> {
        let rhs = self.width - 1;
        let mut degenerate = 0;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..allowed {
                let d = self.at(cost_row, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = entering else {
                return Ok(());
            };

            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.at(r, rhs).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * lratio.abs().max(1.0);
                        let better = if tie {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a > self.at(lr, c)
                            }
                        } else {
                            ratio < lratio
                        };
                        if better { Some((r, ratio)) } else { Some((lr, lratio)) }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Err(ReachError::Unbounded);
            };
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(r, c);
            counter.set(counter.get() + 1);
            if counter.get() > MAX_PIVOTS {
                return Err(ReachError::Numerical("simplex pivot limit exceeded".into()));
            }
        }
    }
}
