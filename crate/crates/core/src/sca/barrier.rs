//! Log-barrier interior-point solver for [`ConvexProgram`].
//!
//! Newton systems are assembled on the program's fixed sparsity pattern and
//! factored with a sparse LDLᵀ decomposition. A phase-I problem with one
//! shared slack finds a strictly feasible start when the supplied guess is
//! not.

use std::cell::RefCell;

use serde::Serialize;
use sprs::{CsMatI, FillInReduction, SymmetryCheck};
use sprs_ldl::{Ldl, LdlNumeric};

use super::program::{Atom, ConvexProgram, VarId};
use super::SolveError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Largest accepted constraint violation of a returned point.
    pub eps_feas: f64,
    /// Relative duality-gap target.
    pub eps_opt: f64,
    /// Cap on the total number of Newton steps.
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { eps_feas: 1e-8, eps_opt: 1e-6, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub status: SolveStatus,
}

/// Minimizes `program`. Returns the final point with status `Optimal`, or
/// `MaxIter` when the Newton budget ran out on a strictly feasible point.
/// A program without a strictly feasible point yields [`SolveError::Infeasible`].
pub fn solve_convex(program: &ConvexProgram, settings: &SolverSettings) -> Result<(Vec<f64>, SolveReport), SolveError> {
    program.check_structure()?;
    for c in &program.constraints {
        if c.vars().is_empty() && c.value(&[]) > 0.0 {
            return Err(SolveError::Infeasible(c.label.clone()));
        }
    }
    let mut x = interior_start(program);
    let mut iterations = 0;

    if !strictly_feasible(program, &x) {
        let (phase1, s) = phase_one_program(program, &x);
        let mut x1 = x.clone();
        x1.push(phase1.start[s]);
        let mut budget = settings.max_iter;
        let stop = |y: &[f64]| y[s] < 0.0;
        // A large initial weight heads straight for a negative slack instead of
        // first drifting to the analytic center.
        let barrier = Barrier::new(&phase1);
        let t0 = barrier.num_barrier_terms as f64 / phase1.start[s].max(1e-9);
        let outcome = barrier.run(&mut x1, t0, settings.eps_opt, &mut budget, Some(&stop));
        iterations += settings.max_iter - budget;
        if x1[s] >= 0.0 {
            let label = program
                .constraints
                .iter()
                .max_by(|a, b| a.value(&x1).total_cmp(&b.value(&x1)))
                .map_or("bounds".to_string(), |c| c.label.clone());
            return Err(SolveError::Infeasible(match outcome {
                Outcome::Converged => label,
                Outcome::Budget => format!("{label} (phase one ran out of iterations)"),
            }));
        }
        x1.pop();
        x = x1;
    }

    let mut budget = settings.max_iter.saturating_sub(iterations);
    let outcome = Barrier::new(program).run(&mut x, 1.0, settings.eps_opt, &mut budget, None);
    iterations = settings.max_iter - budget;
    let max_violation = program.max_violation(&x);
    let status = match outcome {
        Outcome::Converged if max_violation <= settings.eps_feas => SolveStatus::Optimal,
        _ => SolveStatus::MaxIter,
    };
    Ok((x.clone(), SolveReport { objective: program.objective_value(&x), iterations, max_violation, status }))
}

/// The supplied start pulled strictly inside every finite bound.
fn interior_start(p: &ConvexProgram) -> Vec<f64> {
    p.vars
        .iter()
        .zip(&p.start)
        .map(|(v, &s)| {
            let width = v.upper - v.lower;
            let margin = |b: f64| {
                let m = 1e-4 * b.abs().max(1.0);
                if width.is_finite() { m.min(1e-3 * width) } else { m }
            };
            let lo = if v.lower.is_finite() { v.lower + margin(v.lower) } else { f64::NEG_INFINITY };
            let hi = if v.upper.is_finite() { v.upper - margin(v.upper) } else { f64::INFINITY };
            if lo >= hi {
                0.5 * (v.lower + v.upper)
            } else {
                s.clamp(lo, hi)
            }
        })
        .collect()
}

fn strictly_feasible(p: &ConvexProgram, x: &[f64]) -> bool {
    p.constraints.iter().all(|c| c.vars().is_empty() || c.value(x) < 0.0)
}

/// Copy of `p` minimizing a shared slack `s` added to every constraint.
fn phase_one_program(p: &ConvexProgram, x: &[f64]) -> (ConvexProgram, VarId) {
    let worst = p.constraints.iter().map(|c| c.value(x)).fold(0.0, f64::max);
    // Unbounded variables get a temporary box so the slack problem stays
    // bounded; it is wide enough for an epigraph variable to absorb the
    // largest violation.
    let vars = p
        .vars
        .iter()
        .zip(x)
        .map(|(v, &xi)| {
            let reach = 10.0 * xi.abs().max(worst).max(1.0);
            let mut v = v.clone();
            v.lower = v.lower.max(xi - reach);
            v.upper = v.upper.min(xi + reach);
            v
        })
        .collect();
    let mut q = ConvexProgram { vars, start: x.to_vec(), objective: Vec::new(), constraints: Vec::new() };
    let s = q.add_var_at("phase1_slack", -1.0, f64::INFINITY, 2.0 * worst + 1.0);
    q.minimize(s, 1.0);
    for c in &p.constraints {
        if c.vars().is_empty() {
            continue;
        }
        let mut atoms = c.atoms.clone();
        atoms.push(Atom::linear(s, -1.0));
        q.add_constraint(c.label.clone(), atoms);
    }
    (q, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Converged,
    Budget,
}

enum Centering {
    Centered,
    Stopped,
    Budget,
}

const HUB_DEGREE: usize = 12;
const MAX_CENTERING_STEPS: usize = 100;

struct ConsInfo {
    index: usize,
    vars: Vec<VarId>,
    /// Position in the Hessian value array of each local (row, col) pair.
    slots: Vec<usize>,
}

struct Barrier<'a> {
    p: &'a ConvexProgram,
    cons: Vec<ConsInfo>,
    cost: Vec<f64>,
    num_barrier_terms: usize,
    /// Position of each variable in the factored matrix.
    pos: Vec<usize>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    diag_slots: Vec<usize>,
    factor: RefCell<Option<LdlNumeric<f64, usize>>>,
}

impl<'a> Barrier<'a> {
    fn new(p: &'a ConvexProgram) -> Self {
        let n = p.vars.len();
        let mut cons = Vec::new();
        let mut degree = vec![0usize; n];
        for (index, c) in p.constraints.iter().enumerate() {
            let vars = c.vars();
            if vars.is_empty() {
                continue;
            }
            for &a in &vars {
                degree[a] += 1;
            }
            cons.push(ConsInfo { index, vars, slots: Vec::new() });
        }
        // Variables shared by many constraints are eliminated last, which keeps
        // the arrow-shaped coupling of epigraph and budget variables from
        // filling in the factor. The rest keep their (block-local) build order.
        let hub = |v: usize| degree[v] > HUB_DEGREE;
        let mut order: Vec<usize> = (0..n).filter(|&v| !hub(v)).collect();
        order.extend((0..n).filter(|&v| hub(v)));
        let mut pos = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        let mut columns: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for ci in &cons {
            for &a in &ci.vars {
                columns[pos[a]].extend(ci.vars.iter().map(|&b| pos[b]));
            }
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            indices.extend_from_slice(col);
            indptr.push(indices.len());
        }
        let slot = |row: usize, col: usize| {
            let range = indptr[col]..indptr[col + 1];
            range.start + indices[range].binary_search(&row).expect("pattern covers pair")
        };
        for ci in &mut cons {
            ci.slots = ci
                .vars
                .iter()
                .flat_map(|&a| ci.vars.iter().map(move |&b| (a, b)))
                .map(|(a, b)| slot(pos[a], pos[b]))
                .collect();
        }
        let diag_slots = (0..n).map(|i| slot(pos[i], pos[i])).collect();
        let mut cost = vec![0.0; n];
        for &(v, c) in &p.objective {
            cost[v] += c;
        }
        let bounds = p.vars.iter().map(|v| v.lower.is_finite() as usize + v.upper.is_finite() as usize).sum::<usize>();
        let num_barrier_terms = cons.len() + bounds;
        Self { p, cons, cost, num_barrier_terms, pos, indptr, indices, diag_slots, factor: RefCell::new(None) }
    }

    /// Barrier value `t·cᵀx − Σ ln(−g) − Σ ln(bound gaps)`; `None` outside the domain.
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut f = t * self.cost.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>();
        for (v, &xi) in self.p.vars.iter().zip(x) {
            if v.lower.is_finite() {
                let gap = xi - v.lower;
                if !(gap > 0.0) {
                    return None;
                }
                f -= gap.ln();
            }
            if v.upper.is_finite() {
                let gap = v.upper - xi;
                if !(gap > 0.0) {
                    return None;
                }
                f -= gap.ln();
            }
        }
        for ci in &self.cons {
            let g = self.p.constraints[ci.index].value(x);
            if !(g < 0.0) {
                return None;
            }
            f -= (-g).ln();
        }
        f.is_finite().then_some(f)
    }

    /// Gradient and Hessian values (on the fixed pattern) of the barrier at `x`.
    fn derivatives(&self, x: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut grad: Vec<f64> = self.cost.iter().map(|c| t * c).collect();
        let mut hess = vec![0.0; self.indices.len()];
        for (v, var) in self.p.vars.iter().enumerate() {
            if var.lower.is_finite() {
                let gap = x[v] - var.lower;
                grad[v] -= 1.0 / gap;
                hess[self.diag_slots[v]] += 1.0 / (gap * gap);
            }
            if var.upper.is_finite() {
                let gap = var.upper - x[v];
                grad[v] += 1.0 / gap;
                hess[self.diag_slots[v]] += 1.0 / (gap * gap);
            }
        }
        let mut g_loc = Vec::new();
        let mut h_loc = Vec::new();
        for ci in &self.cons {
            let c = &self.p.constraints[ci.index];
            let n = ci.vars.len();
            g_loc.resize(n, 0.0);
            h_loc.resize(n * n, 0.0);
            c.local_derivatives(x, &ci.vars, &mut g_loc, &mut h_loc);
            let neg_g = -c.value(x);
            for i in 0..n {
                grad[ci.vars[i]] += g_loc[i] / neg_g;
                for j in 0..n {
                    hess[ci.slots[i * n + j]] += g_loc[i] * g_loc[j] / (neg_g * neg_g) + h_loc[i * n + j] / neg_g;
                }
            }
        }
        (grad, hess)
    }

    /// Newton direction and the directional derivative along it.
    ///
    /// The system is symmetrically scaled to a unit diagonal before factoring;
    /// barrier curvature spans many orders of magnitude near the boundary.
    fn newton_step(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64), SolveError> {
        let (grad, hess) = self.derivatives(x, t);
        let n = x.len();
        let mut scale = vec![1.0; n];
        for v in 0..n {
            let d = hess[self.diag_slots[v]];
            if d > 0.0 && d.is_finite() {
                scale[self.pos[v]] = 1.0 / d.sqrt();
            }
        }
        let mut scaled = hess;
        for col in 0..n {
            for idx in self.indptr[col]..self.indptr[col + 1] {
                scaled[idx] *= scale[self.indices[idx]] * scale[col];
            }
        }
        let mut rhs = vec![0.0; n];
        for (v, g) in grad.iter().enumerate() {
            rhs[self.pos[v]] = -g * scale[self.pos[v]];
        }
        let mut shift = 0.0;
        for attempt in 0..12 {
            let mat = CsMatI::new_csc((n, n), self.indptr.clone(), self.indices.clone(), scaled.clone());
            let mut factor = self.factor.borrow_mut();
            let ok = match factor.as_mut() {
                Some(f) => f.update(mat.view()).is_ok(),
                None => match Ldl::new()
                    .fill_in_reduction(FillInReduction::NoReduction)
                    .check_symmetry(SymmetryCheck::DontCheckSymmetry)
                    .numeric(mat.view())
                {
                    Ok(f) => {
                        *factor = Some(f);
                        true
                    }
                    Err(_) => false,
                },
            };
            let f = factor.as_ref();
            if ok && f.is_some_and(|f| f.d().iter().all(|&d| d > 0.0 && d.is_finite())) {
                let y: Vec<f64> = f.expect("factor present").solve(&rhs);
                let dir: Vec<f64> = self.pos.iter().map(|&i| y[i] * scale[i]).collect();
                if dir.iter().all(|d| d.is_finite()) {
                    let slope = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                    return Ok((dir, slope));
                }
            }
            let next = 1e-12 * 100f64.powi(attempt);
            for &s in &self.diag_slots {
                scaled[s] += next - shift;
            }
            shift = next;
        }
        Err(SolveError::Numerical("Newton system is not positive definite".into()))
    }

    /// Path-following loop. `stop` ends the run early after any Newton step.
    fn run(
        &self,
        x: &mut Vec<f64>,
        t0: f64,
        eps_opt: f64,
        budget: &mut usize,
        stop: Option<&dyn Fn(&[f64]) -> bool>,
    ) -> Outcome {
        let m = self.num_barrier_terms.max(1) as f64;
        let mut t = t0;
        loop {
            match self.center(x, t, budget, stop) {
                Centering::Budget => return Outcome::Budget,
                Centering::Stopped => return Outcome::Converged,
                Centering::Centered => {}
            }
            let obj = self.p.objective_value(x);
            if m / t <= eps_opt * obj.abs().max(1.0) {
                return Outcome::Converged;
            }
            t *= 20.0;
        }
    }

    /// Damped Newton centering at barrier weight `t`.
    fn center(&self, x: &mut Vec<f64>, t: f64, budget: &mut usize, stop: Option<&dyn Fn(&[f64]) -> bool>) -> Centering {
        let mut fx = self.value(x, t).expect("iterate stays in the domain");
        let mut trial = vec![0.0; x.len()];
        let mut steps = 0;
        loop {
            if stop.is_some_and(|f| f(x)) {
                return Centering::Stopped;
            }
            if *budget == 0 {
                return Centering::Budget;
            }
            *budget -= 1;
            let Ok((dir, slope)) = self.newton_step(x, t) else { return Centering::Centered };
            if -slope / 2.0 <= 1e-10 {
                return Centering::Centered;
            }
            steps += 1;
            if steps > MAX_CENTERING_STEPS {
                return Centering::Centered;
            }
            let before = fx;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                for i in 0..x.len() {
                    trial[i] = x[i] + alpha * dir[i];
                }
                if let Some(ft) = self.value(&trial, t) {
                    if ft <= fx + 0.01 * alpha * slope {
                        fx = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Centering::Centered;
            }
            std::mem::swap(x, &mut trial);
            // Progress below rounding noise means the iterate is as centered as it gets.
            if before - fx <= 1e-13 * before.abs().max(1.0) {
                return Centering::Centered;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sca::program::Atom;
    use proptest::prelude::*;

    #[test]
    fn reciprocal_epigraph() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 1e-9, 1.0);
        let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        p.minimize(t, 1.0);
        p.add_constraint("epi", vec![Atom::reciprocal(x, 1.0), Atom::linear(t, -1.0)]);
        let (sol, report) = solve_convex(&p, &SolverSettings::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!((sol[t] - 1.0).abs() < 1e-5 && (sol[x] - 1.0).abs() < 1e-5, "{sol:?}");
    }

    #[test]
    fn square_epigraph() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", -1.0, 1.0);
        let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        p.minimize(t, 1.0);
        p.add_constraint("epi", vec![Atom::square(1.0, vec![(x, 1.0)], 0.0), Atom::linear(t, -1.0)]);
        let (sol, report) = solve_convex(&p, &SolverSettings::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!(sol[t].abs() < 1e-5 && sol[x].abs() < 1e-3, "{sol:?} {report:?}");
    }

    #[test]
    fn infeasible_program() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.minimize(x, 1.0);
        p.add_constraint("too big", vec![Atom::Constant(2.0), Atom::linear(x, -1.0)]);
        assert!(matches!(solve_convex(&p, &SolverSettings::default()), Err(SolveError::Infeasible(l)) if l == "too big"));
    }

    #[test]
    fn shared_budget() {
        // Two epigraphs share a budget on y: minimize Σ 1/x_b s.t. x_b ≤ y_b, y_0 + y_1 ≤ 3.
        let mut p = ConvexProgram::new();
        let y0 = p.add_var("y0", 0.0, 10.0);
        let y1 = p.add_var("y1", 0.0, 10.0);
        let x0 = p.add_var("x0", 0.1, 10.0);
        let x1 = p.add_var("x1", 0.1, 10.0);
        let t0 = p.add_var("t0", f64::NEG_INFINITY, f64::INFINITY);
        let t1 = p.add_var("t1", f64::NEG_INFINITY, f64::INFINITY);
        p.minimize(t0, 1.0);
        p.minimize(t1, 1.0);
        p.add_constraint("epi0", vec![Atom::reciprocal(x0, 1.0), Atom::linear(t0, -1.0)]);
        p.add_constraint("epi1", vec![Atom::reciprocal(x1, 4.0), Atom::linear(t1, -1.0)]);
        p.add_constraint("cap0", vec![Atom::linear(x0, 1.0), Atom::linear(y0, -1.0)]);
        p.add_constraint("cap1", vec![Atom::linear(x1, 1.0), Atom::linear(y1, -1.0)]);
        p.add_constraint("budget", vec![Atom::linear(y0, 1.0), Atom::linear(y1, 1.0), Atom::Constant(-3.0)]);
        let (sol, report) = solve_convex(&p, &SolverSettings::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        // Optimum of 1/a + 4/b with a + b = 3 is a = 1, b = 2, value 3.
        assert!((report.objective - 3.0).abs() < 1e-5, "{report:?}");
        assert!((sol[x0] - 1.0).abs() < 1e-3 && (sol[x1] - 2.0).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_programs_end_feasible(
            coefs in proptest::collection::vec(0.1f64..5.0, 3),
            centers in proptest::collection::vec(-2.0f64..2.0, 3),
            cap in 0.5f64..4.0,
        ) {
            // min t s.t. Σ c_i (x_i − m_i)² ≤ t, Σ x_i ≤ cap, 1/x_0 ≤ 10
            let mut p = ConvexProgram::new();
            let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
            let xs: Vec<_> = (0..3).map(|i| p.add_var(format!("x{i}"), if i == 0 { 0.05 } else { -5.0 }, 5.0)).collect();
            p.minimize(t, 1.0);
            let mut atoms: Vec<Atom> = xs.iter().zip(&coefs).zip(&centers)
                .map(|((&x, &c), &m)| Atom::square(c, vec![(x, 1.0)], -m)).collect();
            atoms.push(Atom::linear(t, -1.0));
            p.add_constraint("epi", atoms);
            p.add_constraint("cap", xs.iter().map(|&x| Atom::linear(x, 1.0)).chain([Atom::Constant(-cap)]).collect());
            p.add_constraint("recip", vec![Atom::reciprocal(xs[0], 1.0), Atom::Constant(-10.0)]);
            let (sol, report) = solve_convex(&p, &SolverSettings::default()).unwrap();
            prop_assert_eq!(report.status, SolveStatus::Optimal);
            prop_assert!(report.max_violation <= 1e-8);
            prop_assert!(p.max_violation(&sol) <= 1e-8);
        }
    }
}
