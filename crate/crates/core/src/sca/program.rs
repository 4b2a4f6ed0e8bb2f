//! Solver-agnostic description of a smooth convex program.
//!
//! A program has bounded variables, a linear objective, and constraints of
//! the form `Σ atoms ≤ 0` where every atom is convex by construction.

use std::fmt::Write as _;

use super::SolveError;

pub type VarId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// One convex term of a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    /// `coef · var`
    Linear { var: VarId, coef: f64 },
    /// A constant offset.
    Constant(f64),
    /// `coef · (Σ w·var + offset)²` with `coef ≥ 0`.
    Square { coef: f64, terms: Vec<(VarId, f64)>, offset: f64 },
    /// `coef / var` with `coef ≥ 0`, valid for `var > 0`.
    Reciprocal { var: VarId, coef: f64 },
}

impl Atom {
    pub fn linear(var: VarId, coef: f64) -> Self {
        Atom::Linear { var, coef }
    }

    pub fn square(coef: f64, terms: Vec<(VarId, f64)>, offset: f64) -> Self {
        Atom::Square { coef, terms, offset }
    }

    pub fn reciprocal(var: VarId, coef: f64) -> Self {
        Atom::Reciprocal { var, coef }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Atom::Linear { var, coef } => coef * x[*var],
            Atom::Constant(c) => *c,
            Atom::Square { coef, terms, offset } => {
                let s = terms.iter().map(|&(v, w)| w * x[v]).sum::<f64>() + offset;
                coef * s * s
            }
            Atom::Reciprocal { var, coef } => coef / x[*var],
        }
    }

    fn vars(&self, out: &mut Vec<VarId>) {
        match self {
            Atom::Linear { var, .. } | Atom::Reciprocal { var, .. } => out.push(*var),
            Atom::Constant(_) => {}
            Atom::Square { terms, .. } => out.extend(terms.iter().map(|t| t.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub atoms: Vec<Atom>,
}

impl Constraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.atoms.iter().map(|a| a.value(x)).sum()
    }

    /// Distinct variables referenced by this constraint, in first-use order.
    pub fn vars(&self) -> Vec<VarId> {
        let mut all = Vec::new();
        self.atoms.iter().for_each(|a| a.vars(&mut all));
        let mut seen = Vec::with_capacity(all.len());
        for v in all {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    }

    /// Gradient and Hessian restricted to `vars` (as returned by [`Constraint::vars`]).
    pub(crate) fn local_derivatives(&self, x: &[f64], vars: &[VarId], grad: &mut [f64], hess: &mut [f64]) {
        let n = vars.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let pos = |v: VarId| vars.iter().position(|&w| w == v).expect("variable listed");
        for atom in &self.atoms {
            match atom {
                Atom::Linear { var, coef } => grad[pos(*var)] += coef,
                Atom::Constant(_) => {}
                Atom::Square { coef, terms, offset } => {
                    let s = terms.iter().map(|&(v, w)| w * x[v]).sum::<f64>() + offset;
                    for &(v, w) in terms {
                        let i = pos(v);
                        grad[i] += 2.0 * coef * s * w;
                        for &(v2, w2) in terms {
                            hess[i * n + pos(v2)] += 2.0 * coef * w * w2;
                        }
                    }
                }
                Atom::Reciprocal { var, coef } => {
                    let i = pos(*var);
                    let v = x[*var];
                    grad[i] -= coef / (v * v);
                    hess[i * n + i] += 2.0 * coef / (v * v * v);
                }
            }
        }
    }
}

/// A convex program `min Σ c·x  s.t.  constraints ≤ 0, lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexProgram {
    pub vars: Vec<Variable>,
    /// Starting guess handed to the solver; it need not be feasible.
    pub start: Vec<f64>,
    pub objective: Vec<(VarId, f64)>,
    pub constraints: Vec<Constraint>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        let guess = match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower + 1.0,
            (false, true) => upper - 1.0,
            (false, false) => 0.0,
        };
        self.vars.push(Variable { name: name.into(), lower, upper });
        self.start.push(guess);
        self.vars.len() - 1
    }

    /// Adds a variable with an explicit starting guess.
    pub fn add_var_at(&mut self, name: impl Into<String>, lower: f64, upper: f64, start: f64) -> VarId {
        let v = self.add_var(name, lower, upper);
        self.start[v] = start;
        v
    }

    pub fn add_constraint(&mut self, label: impl Into<String>, atoms: Vec<Atom>) {
        self.constraints.push(Constraint { label: label.into(), atoms });
    }

    pub fn minimize(&mut self, var: VarId, coef: f64) {
        self.objective.push((var, coef));
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * x[v]).sum()
    }

    /// Largest constraint or bound violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let cons = self.constraints.iter().map(|c| c.value(x)).fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper))
            .fold(0.0, f64::max);
        cons.max(bounds)
    }

    /// Checks the structural convexity rules.
    pub fn check_structure(&self) -> Result<(), SolveError> {
        for (i, v) in self.vars.iter().enumerate() {
            if !(v.lower < v.upper) {
                return Err(SolveError::Structure(format!("variable {i} ({}) has an empty interior", v.name)));
            }
        }
        for c in &self.constraints {
            if let Some(v) = c.vars().into_iter().find(|&v| v >= self.vars.len()) {
                return Err(SolveError::Structure(format!("{}: unknown variable {v}", c.label)));
            }
            for atom in &c.atoms {
                match atom {
                    Atom::Square { coef, .. } if *coef < 0.0 => {
                        return Err(SolveError::Structure(format!("{}: negative square coefficient", c.label)));
                    }
                    Atom::Reciprocal { coef, var } => {
                        if *coef < 0.0 {
                            return Err(SolveError::Structure(format!("{}: negative reciprocal coefficient", c.label)));
                        }
                        if self.vars[*var].lower <= 0.0 {
                            return Err(SolveError::Structure(format!(
                                "{}: reciprocal of {} needs a positive lower bound",
                                c.label, self.vars[*var].name
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Deterministic text form, one variable or constraint per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vars {
            let _ = writeln!(out, "var {} in [{:e}, {:e}]", v.name, v.lower, v.upper);
        }
        let obj: Vec<String> = self.objective.iter().map(|&(v, c)| format!("{c:e}*{}", self.vars[v].name)).collect();
        let _ = writeln!(out, "minimize {}", obj.join(" + "));
        for c in &self.constraints {
            let terms: Vec<String> = c.atoms.iter().map(|a| self.atom_text(a)).collect();
            let _ = writeln!(out, "{}: {} <= 0", c.label, terms.join(" + "));
        }
        out
    }

    fn atom_text(&self, atom: &Atom) -> String {
        let name = |v: VarId| self.vars[v].name.as_str();
        match atom {
            Atom::Linear { var, coef } => format!("{coef:e}*{}", name(*var)),
            Atom::Constant(c) => format!("{c:e}"),
            Atom::Square { coef, terms, offset } => {
                let inner: Vec<String> = terms.iter().map(|&(v, w)| format!("{w:e}*{}", name(v))).collect();
                format!("{coef:e}*({} + {offset:e})^2", inner.join(" + "))
            }
            Atom::Reciprocal { var, coef } => format!("{coef:e}/{}", name(*var)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let mut p = ConvexProgram::new();
        let a = p.add_var("a", 0.1, 10.0);
        let b = p.add_var("b", -5.0, 5.0);
        let c = Constraint {
            label: "mix".into(),
            atoms: vec![
                Atom::linear(a, 0.7),
                Atom::Constant(-2.0),
                Atom::square(1.5, vec![(a, 1.0), (b, -2.0)], 0.3),
                Atom::reciprocal(a, 0.4),
            ],
        };
        let x = [1.3, 0.6];
        let vars = c.vars();
        assert_eq!(vars, vec![a, b]);
        let mut g = [0.0; 2];
        let mut h = [0.0; 4];
        c.local_derivatives(&x, &vars, &mut g, &mut h);
        let eps = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (c.value(&xp) - c.value(&xm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6, "grad {i}: {fd} vs {}", g[i]);
            let mut gp = [0.0; 2];
            let mut gm = [0.0; 2];
            let mut scratch = [0.0; 4];
            c.local_derivatives(&xp, &vars, &mut gp, &mut scratch);
            c.local_derivatives(&xm, &vars, &mut gm, &mut scratch);
            for j in 0..2 {
                let fd = (gp[j] - gm[j]) / (2.0 * eps);
                assert!((fd - h[j * 2 + i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn structure_rules() {
        let mut p = ConvexProgram::new();
        let a = p.add_var("a", 0.0, 1.0);
        p.add_constraint("ok", vec![Atom::linear(a, 1.0)]);
        assert!(p.check_structure().is_ok());
        p.add_constraint("recip", vec![Atom::reciprocal(a, 1.0)]);
        assert!(p.check_structure().is_err());
        p.constraints.pop();
        p.add_constraint("unknown", vec![Atom::linear(7, 1.0)]);
        assert!(p.check_structure().is_err());
        p.constraints.pop();
        p.add_constraint("concave", vec![Atom::square(-1.0, vec![(a, 1.0)], 0.0)]);
        assert!(p.check_structure().is_err());
    }

    #[test]
    fn dump_is_line_per_item() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.5, 1.0);
        let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        p.minimize(t, 1.0);
        p.add_constraint("epi", vec![Atom::reciprocal(x, 1.0), Atom::linear(t, -1.0)]);
        let text = p.dump();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("epi: 1e0/x + -1e0*t <= 0"));
        assert_eq!(text, p.clone().dump());
    }
}
