//! Per-UAV energy budget rows shared by the sub-problems.
//!
//! With several rounds each round's energy is bounded by a slack
//! `ẽ_ku = e_ku / e_max` and the slacks of a UAV sum to at most one, which
//! keeps every row local to one round. A single round bounds the energy directly.

use crate::scenario::ScenarioConfig;

use super::{Atom, ConvexProgram, VarId};

pub(crate) struct EnergyRows {
    single_round: bool,
    e_max: f64,
    slacks: Vec<Vec<VarId>>,
}

impl EnergyRows {
    pub(crate) fn new(cfg: &ScenarioConfig) -> Self {
        Self { single_round: cfg.num_rounds == 1, e_max: cfg.e_max, slacks: vec![Vec::new(); cfg.num_uavs] }
    }

    /// Adds the row `Σ atoms ≤ ẽ_ku`; `atoms` are already divided by `e_max`
    /// and `incumbent` is the current energy in joules.
    pub(crate) fn add(&mut self, prog: &mut ConvexProgram, k: usize, u: usize, mut atoms: Vec<Atom>, incumbent: f64) {
        if self.single_round {
            if atoms.iter().all(|a| matches!(a, Atom::Constant(_))) {
                return;
            }
            atoms.push(Atom::Constant(-1.0));
        } else {
            let share = incumbent.max(0.0) / self.e_max;
            let slack = prog.add_var_at(format!("energy share[{k},{u}]"), 0.0, f64::INFINITY, share);
            self.slacks[u].push(slack);
            atoms.push(Atom::linear(slack, -1.0));
        }
        prog.add_constraint(format!("energy[{k},{u}]"), atoms);
    }

    pub(crate) fn finish(self, prog: &mut ConvexProgram) {
        for (u, slacks) in self.slacks.into_iter().enumerate() {
            if slacks.is_empty() {
                continue;
            }
            let mut atoms: Vec<Atom> = slacks.into_iter().map(|v| Atom::linear(v, 1.0)).collect();
            atoms.push(Atom::Constant(-1.0));
            prog.add_constraint(format!("energy budget[{u}]"), atoms);
        }
    }
}
