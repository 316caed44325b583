//! Finite-difference Jacobian oracle evaluated in double-double arithmetic.
#![allow(dead_code)]

use eit3d_core::forward::{assemble_cem_system, ConductivityField, ElectrodeModel, FactoredSystem, StimulationPattern};
use eit3d_core::mesh::Mesh;
use eit3d_core::protocol::ProtocolRow;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = two_sum(s, e + self.lo + o.lo);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    /// `self * a` for a plain double `a`.
    pub fn scale(self, a: f64) -> Dd {
        let (p, e) = two_prod(self.hi, a);
        let (hi, lo) = two_sum(p, e + self.lo * a);
        Dd { hi, lo }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Solves the factored system with residuals accumulated in double-double,
/// so the solution is correct well beyond plain double precision.
pub fn solve_wide(sys: &FactoredSystem, b: &[f64], sweeps: usize) -> Vec<Dd> {
    let a = &sys.system.matrix;
    let mut x: Vec<Dd> = sys.factor().solve(b).into_iter().map(Dd::from).collect();
    for _ in 0..sweeps {
        let r: Vec<f64> = (0..a.rows())
            .map(|i| {
                let mut acc = Dd::from(b[i]);
                for (j, v) in a.row(i) {
                    acc = acc.sub(x[j].scale(v));
                }
                acc.value()
            })
            .collect();
        let d = sys.factor().solve(&r);
        for (xi, di) in x.iter_mut().zip(d) {
            *xi = xi.add(Dd::from(di));
        }
    }
    x
}

/// Measured voltage of `row` for the conductivity `sigma`, in double-double.
pub fn wide_voltage(mesh: &Mesh, sigma: &ConductivityField, electrodes: &ElectrodeModel, row: &ProtocolRow, amplitude: f64) -> Dd {
    let sys = assemble_cem_system(mesh, sigma, electrodes).unwrap().factorize().unwrap();
    let stim = StimulationPattern { inject_pos: row.inject_pos, inject_neg: row.inject_neg, amplitude };
    let b = sys.system.rhs(&stim).unwrap();
    let x = solve_wide(&sys, &b, 4);
    let n = sys.system.n_nodes;
    x[n + row.meas_pos].sub(x[n + row.meas_neg])
}

/// Central difference `∂V_row/∂σ_element` with step `h`.
pub fn fd_entry(
    mesh: &Mesh,
    sigma: &ConductivityField,
    electrodes: &ElectrodeModel,
    row: &ProtocolRow,
    element: usize,
    h: f64,
    amplitude: f64,
) -> f64 {
    let mut plus = sigma.clone();
    plus.per_element[element] += h;
    let mut minus = sigma.clone();
    minus.per_element[element] -= h;
    let vp = wide_voltage(mesh, &plus, electrodes, row, amplitude);
    let vm = wide_voltage(mesh, &minus, electrodes, row, amplitude);
    vp.sub(vm).value() / (2.0 * h)
}
