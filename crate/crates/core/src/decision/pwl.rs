//! Minimisation of a convex piecewise-linear function over a box.
//!
//! The objective is `sum_r max_p (g_rp . z + h_rp)`. It is solved in epigraph
//! form with a Mehrotra predictor-corrector interior-point method. The
//! epigraph variables are eliminated from every Newton system, so each step
//! only factors an `n x n` matrix where `n` is the number of decision
//! variables.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(n: usize, c: f64) -> Self {
        Self { coef: vec![0.0; n], constant: c }
    }

    pub fn variable(n: usize, i: usize) -> Self {
        let mut coef = vec![0.0; n];
        coef[i] = 1.0;
        Self { coef, constant: 0.0 }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + dot(&self.coef, z)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            coef: self.coef.iter().map(|c| c * k).collect(),
            constant: self.constant * k,
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, k: f64) {
        for (a, b) in self.coef.iter_mut().zip(&other.coef) {
            *a += k * b;
        }
        self.constant += k * other.constant;
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Range of the expression over the box.
    fn bounds(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        let mut min = self.constant;
        let mut max = self.constant;
        for ((c, l), h) in self.coef.iter().zip(lo).zip(hi) {
            let (a, b) = (c * l, c * h);
            min += a.min(b);
            max += a.max(b);
        }
        (min, max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pointwise maximum of affine pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlTerm {
    pub pieces: Vec<Affine>,
}

impl PwlTerm {
    pub fn abs(e: Affine) -> Self {
        let neg = e.scaled(-1.0);
        Self { pieces: vec![e, neg] }
    }

    pub fn hinge(e: Affine) -> Self {
        let n = e.coef.len();
        Self { pieces: vec![e, Affine::constant(n, 0.0)] }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.pieces.iter().map(|p| p.eval(z)).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct PwlProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub terms: Vec<PwlTerm>,
}

#[derive(Debug, Clone)]
pub struct PwlSolution {
    pub z: Vec<f64>,
    pub value: f64,
    pub newton_steps: usize,
}

/// Relative duality gap and dual residual at which iterations stop.
const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100;
/// Fraction of the distance to the boundary a step may cover.
const STEP_FRACTION: f64 = 0.99;

/// One inequality `coef . z + constant <= t[term]`, or a box side when
/// `term` is `None` (`coef . z + constant <= 0`).
struct Row<'a> {
    term: Option<usize>,
    coef: RowCoef<'a>,
    constant: f64,
}

enum RowCoef<'a> {
    Dense(&'a [f64]),
    /// `sign * z[i]`
    Unit(usize, f64),
}

impl Row<'_> {
    fn dot(&self, z: &[f64]) -> f64 {
        match self.coef {
            RowCoef::Dense(c) => dot(c, z),
            RowCoef::Unit(i, sign) => sign * z[i],
        }
    }

    /// Slack `h - g . x` of the row at `(z, t)`.
    fn slack(&self, z: &[f64], t: &[f64]) -> f64 {
        let lhs = self.dot(z) + self.constant;
        match self.term {
            Some(r) => t[r] - lhs,
            None => -lhs,
        }
    }

    /// `g . dx`, with `g = [coef, -e_term]`.
    fn apply(&self, dz: &[f64], dt: &[f64]) -> f64 {
        self.dot(dz) - self.term.map_or(0.0, |r| dt[r])
    }

    /// `out_z += k * coef`, `out_t[term] -= k`.
    fn scatter(&self, k: f64, out_z: &mut [f64], out_t: &mut [f64]) {
        match self.coef {
            RowCoef::Dense(c) => out_z.iter_mut().zip(c).for_each(|(o, ci)| *o += k * ci),
            RowCoef::Unit(i, sign) => out_z[i] += k * sign,
        }
        if let Some(r) = self.term {
            out_t[r] -= k;
        }
    }
}

/// `lower += k v v'` on the lower triangle of a row-major `n x n` matrix.
fn rank_one(lower: &mut [f64], n: usize, k: f64, v: &[f64]) {
    for i in 0..n {
        let vi = k * v[i];
        if vi == 0.0 {
            continue;
        }
        let row = &mut lower[i * n..i * n + i + 1];
        for (l, vj) in row.iter_mut().zip(v) {
            *l += vi * vj;
        }
    }
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(xi, d)| -xi / d)
        .fold(1.0 / STEP_FRACTION, f64::min)
}

impl PwlProblem {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(z)).sum()
    }

    /// Minimise from `start`, which only needs to lie near the box.
    pub fn minimize(&self, start: &[f64]) -> PwlSolution {
        let n = self.dim();
        let (lo, hi) = (&self.lower, &self.upper);

        // Terms with one piece dominant over the whole box are affine there
        // and go straight into the objective.
        let mut linear = Affine::constant(n, 0.0);
        let mut active: Vec<&PwlTerm> = Vec::new();
        for term in &self.terms {
            let ranges: Vec<(f64, f64)> = term.pieces.iter().map(|p| p.bounds(lo, hi)).collect();
            let dominant = (0..term.pieces.len())
                .find(|&i| ranges.iter().enumerate().all(|(j, r)| j == i || r.1 <= ranges[i].0));
            match dominant {
                Some(i) => linear.add_scaled(&term.pieces[i], 1.0),
                None => active.push(term),
            }
        }

        let free: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
        let mut z: Vec<f64> = (0..n)
            .map(|i| {
                let w = hi[i] - lo[i];
                if w <= 0.0 {
                    lo[i]
                } else {
                    start.get(i).copied().unwrap_or(0.5 * (lo[i] + hi[i])).clamp(lo[i] + 0.05 * w, hi[i] - 0.05 * w)
                }
            })
            .collect();
        if active.is_empty() && free.iter().all(|&i| linear.coef[i] == 0.0) {
            let value = self.value(&z);
            return PwlSolution { z, value, newton_steps: 0 };
        }

        let mut rows: Vec<Row<'_>> = Vec::new();
        for (r, term) in active.iter().enumerate() {
            for p in &term.pieces {
                rows.push(Row { term: Some(r), coef: RowCoef::Dense(&p.coef), constant: p.constant });
            }
        }
        for &i in &free {
            rows.push(Row { term: None, coef: RowCoef::Unit(i, 1.0), constant: -hi[i] });
            rows.push(Row { term: None, coef: RowCoef::Unit(i, -1.0), constant: lo[i] });
        }
        let m = active.len();
        let rows_n = rows.len();
        let box_start = rows_n - 2 * free.len();
        let mut spans = Vec::with_capacity(m);
        let mut offset = 0;
        for term in &active {
            spans.push(offset..offset + term.pieces.len());
            offset += term.pieces.len();
        }
        let mut lower = vec![0.0; n * n];
        let mut hzt = vec![0.0; m * n];
        let mut dtt = vec![0.0; m];
        let mut diff = vec![0.0; n];

        // Primal-feasible start; duals split evenly over each term's pieces.
        let mut t: Vec<f64> = active.iter().map(|term| term.eval(&z) + 1.0).collect();
        let mut s: Vec<f64> = rows.iter().map(|row| row.slack(&z, &t)).collect();
        let mut lam: Vec<f64> = rows
            .iter()
            .map(|row| row.term.map_or(1.0, |r| 1.0 / active[r].pieces.len() as f64))
            .collect();
        let mut fixed_z = vec![false; n];
        for i in 0..n {
            fixed_z[i] = !free.contains(&i);
        }

        let mut iterations = 0;
        let mut rd_z = vec![0.0; n];
        let mut rd_t = vec![0.0; m];
        while iterations < MAX_ITERATIONS {
            // Dual residual c + G^T lambda.
            rd_z.copy_from_slice(&linear.coef);
            rd_t.fill(1.0);
            for (row, l) in rows.iter().zip(&lam) {
                row.scatter(*l, &mut rd_z, &mut rd_t);
            }
            for i in 0..n {
                if fixed_z[i] {
                    rd_z[i] = 0.0;
                }
            }
            let gap: f64 = s.iter().zip(&lam).map(|(a, b)| a * b).sum();
            let objective = linear.eval(&z) + t.iter().sum::<f64>();
            let dual_res = rd_z.iter().chain(&rd_t).fold(0.0f64, |a, b| a.max(b.abs()));
            if gap <= TOLERANCE * (1.0 + objective.abs()) && dual_res <= TOLERANCE * (1.0 + objective.abs()) {
                break;
            }
            iterations += 1;

            // Normal equations G^T W G, with the epigraph block eliminated.
            // A term contributes sum_k w_k a_k a_k' - h h' / D with
            // h = sum_k w_k a_k and D = sum_k w_k; for two pieces this is
            // the rank-one w_1 w_2 / D (a_1 - a_2)(a_1 - a_2)'.
            let w: Vec<f64> = lam.iter().zip(&s).map(|(l, si)| l / si).collect();
            lower.fill(0.0);
            for (r, span) in spans.iter().enumerate() {
                let h = &mut hzt[r * n..(r + 1) * n];
                h.fill(0.0);
                let mut d_sum = 0.0;
                for j in span.clone() {
                    let RowCoef::Dense(c) = rows[j].coef else { unreachable!() };
                    d_sum += w[j];
                    for (hi_, ci) in h.iter_mut().zip(c) {
                        *hi_ -= w[j] * ci;
                    }
                }
                dtt[r] = d_sum;
                if span.len() == 2 {
                    let (RowCoef::Dense(a1), RowCoef::Dense(a2)) = (&rows[span.start].coef, &rows[span.start + 1].coef)
                    else {
                        unreachable!()
                    };
                    let k = w[span.start] * w[span.start + 1] / d_sum;
                    for (i, diff_i) in diff.iter_mut().enumerate() {
                        *diff_i = a1[i] - a2[i];
                    }
                    rank_one(&mut lower, n, k, &diff);
                } else {
                    for j in span.clone() {
                        let RowCoef::Dense(c) = rows[j].coef else { unreachable!() };
                        rank_one(&mut lower, n, w[j], c);
                    }
                    diff.copy_from_slice(h);
                    rank_one(&mut lower, n, -1.0 / d_sum, &diff);
                }
            }
            for (row, wj) in rows[box_start..].iter().zip(&w[box_start..]) {
                if let RowCoef::Unit(i, _) = row.coef {
                    lower[i * n + i] += wj;
                }
            }
            let mut schur = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    schur[(i, j)] = lower[i * n + j];
                    schur[(j, i)] = lower[i * n + j];
                }
            }
            for i in 0..n {
                if fixed_z[i] {
                    for j in 0..n {
                        schur[(i, j)] = 0.0;
                        schur[(j, i)] = 0.0;
                    }
                    schur[(i, i)] = 1.0;
                }
                schur[(i, i)] += 1e-13 * schur[(i, i)].abs().max(1e-300);
            }
            let Some(chol) = schur.cholesky() else { break };

            // Solve for a direction given the complementarity residual.
            let solve = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
                // q = W r_p - r_c / s, with r_p = 0 on the feasible path
                let q: Vec<f64> = rc.iter().zip(&s).map(|(c, si)| -c / si).collect();
                let mut rhs_z: Vec<f64> = rd_z.iter().map(|v| -v).collect();
                let mut rhs_t: Vec<f64> = rd_t.iter().map(|v| -v).collect();
                for (row, qj) in rows.iter().zip(&q) {
                    row.scatter(-qj, &mut rhs_z, &mut rhs_t);
                }
                let mut reduced = DVector::from_vec(rhs_z);
                for r in 0..m {
                    let k = rhs_t[r] / dtt[r];
                    for (ri, h) in reduced.iter_mut().zip(&hzt[r * n..(r + 1) * n]) {
                        *ri -= h * k;
                    }
                }
                for i in 0..n {
                    if fixed_z[i] {
                        reduced[i] = 0.0;
                    }
                }
                let dz = chol.solve(&reduced);
                let dz = dz.as_slice().to_vec();
                let dt: Vec<f64> = (0..m).map(|r| (rhs_t[r] - dot(&hzt[r * n..(r + 1) * n], &dz)) / dtt[r]).collect();
                let gdx: Vec<f64> = rows.iter().map(|row| row.apply(&dz, &dt)).collect();
                let ds: Vec<f64> = gdx.iter().map(|g| -g).collect();
                let dl: Vec<f64> = (0..rows_n).map(|j| w[j] * gdx[j] + q[j]).collect();
                (dz, dt, ds, dl)
            };

            // Mehrotra predictor-corrector.
            let mu = gap / rows_n as f64;
            let rc_aff: Vec<f64> = s.iter().zip(&lam).map(|(a, b)| a * b).collect();
            let (_, _, ds_a, dl_a) = solve(&rc_aff);
            let (ap, ad) = (max_step(&s, &ds_a).min(1.0), max_step(&lam, &dl_a).min(1.0));
            let mu_aff: f64 = (0..rows_n)
                .map(|j| (s[j] + ap * ds_a[j]) * (lam[j] + ad * dl_a[j]))
                .sum::<f64>()
                / rows_n as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc: Vec<f64> = (0..rows_n)
                .map(|j| s[j] * lam[j] + ds_a[j] * dl_a[j] - sigma * mu)
                .collect();
            let (dz, dt, ds, dl) = solve(&rc);
            let ap = (STEP_FRACTION * max_step(&s, &ds)).min(1.0);
            let ad = (STEP_FRACTION * max_step(&lam, &dl)).min(1.0);
            for i in 0..n {
                z[i] += ap * dz[i];
            }
            for r in 0..m {
                t[r] += ap * dt[r];
            }
            for j in 0..rows_n {
                s[j] += ap * ds[j];
                lam[j] += ad * dl[j];
            }
            // Keep the primal slacks consistent with (z, t) to stop drift.
            for (sj, row) in s.iter_mut().zip(&rows) {
                let exact = row.slack(&z, &t);
                if exact > 0.0 {
                    *sj = exact;
                }
            }
        }

        for (i, zi) in z.iter_mut().enumerate() {
            *zi = zi.clamp(lo[i], hi[i]);
        }
        let value = self.value(&z);
        PwlSolution { z, value, newton_steps: iterations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_abs() {
        // |z - 0.3| + 0.1 |z| over [-1, 1]: minimum at 0.3
        let p = PwlProblem {
            lower: vec![-1.0],
            upper: vec![1.0],
            terms: vec![
                PwlTerm::abs(Affine { coef: vec![1.0], constant: -0.3 }),
                PwlTerm::abs(Affine { coef: vec![0.1], constant: 0.0 }),
            ],
        };
        let s = p.minimize(&[0.0]);
        assert!((s.z[0] - 0.3).abs() < 1e-6, "{:?}", s);
        assert!((s.value - 0.03).abs() < 1e-8);
    }

    #[test]
    fn optimum_on_box_boundary() {
        let p = PwlProblem {
            lower: vec![-4.5, -4.5],
            upper: vec![2.6, 2.6],
            terms: vec![PwlTerm::hinge(Affine { coef: vec![1.0, 1.0], constant: 10.0 })],
        };
        let s = p.minimize(&[0.0, 0.0]);
        assert!((s.value - 1.0).abs() < 1e-8, "{:?}", s);
    }

    #[test]
    fn matches_grid_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 2;
            let terms: Vec<PwlTerm> = (0..6)
                .map(|_| {
                    let e = Affine {
                        coef: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        constant: rng.random_range(-2.0..2.0),
                    };
                    if rng.random_bool(0.5) { PwlTerm::abs(e) } else { PwlTerm::hinge(e) }
                })
                .collect();
            let p = PwlProblem { lower: vec![-1.0; n], upper: vec![1.0; n], terms };
            let s = p.minimize(&[0.0; 2]);
            let mut best = f64::INFINITY;
            for i in 0..=200 {
                for j in 0..=200 {
                    let z = [-1.0 + i as f64 / 100.0, -1.0 + j as f64 / 100.0];
                    best = best.min(p.value(&z));
                }
            }
            assert!(s.value <= best + 1e-7, "solver {} grid {}", s.value, best);
        }
    }
}
