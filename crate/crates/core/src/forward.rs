//! Complete electrode model solved with linear tetrahedral elements.
//!
//! Unknowns are the nodal potentials followed by one potential per
//! electrode. The weak form couples them through the contact impedance on
//! each electrode patch; elsewhere the boundary is insulating. The system
//! is singular on constants, so the reference `Σ U_l = 0` is imposed by
//! adding `α·𝟙𝟙ᵀ` on the electrode block: for a current pattern with zero
//! net current the solution of the augmented system is exactly the grounded
//! solution of the original one, and the augmented matrix is positive
//! definite.

use crate::mesh::Mesh;
use crate::protocol::{Protocol, ProtocolError};
use crate::sparse::{norm2, CsrMatrix, EnvelopeCholesky, FactorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BACKGROUND_SIGMA: f64 = 1.0;
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 1e-3;
pub const DEFAULT_AMPLITUDE: f64 = 1e-3;

/// Relative residual every solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;
const MAX_REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("conductivity of element {element} is {value}; must be positive and finite")]
    Conductivity { element: usize, value: f64 },
    #[error("conductivity field has {got} values but the mesh has {expected} elements")]
    ElementCount { got: usize, expected: usize },
    #[error("contact impedance of electrode {electrode} is {value}; must be positive and finite")]
    ContactImpedance { electrode: usize, value: f64 },
    #[error("electrode model has {got} electrodes but the mesh has {expected}")]
    ElectrodeCount { got: usize, expected: usize },
    #[error("invalid stimulation: {0}")]
    Stimulation(String),
    #[error("system factorization failed: {0}")]
    Factor(#[from] FactorError),
    #[error("solve did not reach relative residual {tolerance:e}: got {residual:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField {
    pub per_element: Vec<f64>,
    pub background: f64,
}

impl ConductivityField {
    pub fn homogeneous(elements: usize, sigma: f64) -> Self {
        Self {
            per_element: vec![sigma; elements],
            background: sigma,
        }
    }

    pub fn validate(&self, elements: usize) -> Result<(), ForwardError> {
        if self.per_element.len() != elements {
            return Err(ForwardError::ElementCount {
                got: self.per_element.len(),
                expected: elements,
            });
        }
        if let Some((element, &value)) = self
            .per_element
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(ForwardError::Conductivity { element, value });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            per_element: self.per_element.iter().map(|s| s * c).collect(),
            background: self.background * c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeModel {
    /// Z_l in Ω·m², one per electrode.
    pub contact_impedance: Vec<f64>,
}

impl ElectrodeModel {
    pub fn uniform(count: usize, z: f64) -> Self {
        Self {
            contact_impedance: vec![z; count],
        }
    }

    pub fn count(&self) -> usize {
        self.contact_impedance.len()
    }

    fn validate(&self, expected: usize) -> Result<(), ForwardError> {
        if self.count() != expected {
            return Err(ForwardError::ElectrodeCount {
                got: self.count(),
                expected,
            });
        }
        if let Some((electrode, &value)) = self
            .contact_impedance
            .iter()
            .enumerate()
            .find(|(_, z)| !(z.is_finite() && **z > 0.0))
        {
            return Err(ForwardError::ContactImpedance { electrode, value });
        }
        Ok(())
    }
}

/// `+amplitude` enters at `inject_pos`, `-amplitude` at `inject_neg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StimulationPattern {
    pub inject_pos: usize,
    pub inject_neg: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub nodal_u: Vec<f64>,
    pub electrode_u: Vec<f64>,
}

impl PotentialField {
    /// Gradient of the piecewise linear potential on element `t`.
    pub fn element_gradient(&self, mesh: &Mesh, t: usize) -> [f64; 3] {
        let g = mesh.tet_geometry(t);
        let mut grad = [0.0; 3];
        for (a, &n) in mesh.tets[t].iter().enumerate() {
            let u = self.nodal_u[n as usize];
            for k in 0..3 {
                grad[k] += u * g.grads[a][k];
            }
        }
        grad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub values: Vec<f64>,
    pub protocol_id: String,
}

/// Assembled CEM operator over `n_nodes + n_electrodes` unknowns, grounding
/// term included.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    pub matrix: CsrMatrix,
    pub n_nodes: usize,
    pub n_electrodes: usize,
    pub grounding_weight: f64,
}

/// Pure conduction block `∫ σ ∇φ_i·∇φ_j` over nodes only.
pub fn assemble_stiffness(mesh: &Mesh, sigma: &ConductivityField) -> Result<CsrMatrix, ForwardError> {
    sigma.validate(mesh.tet_count())?;
    let n = mesh.node_count();
    let mut triplets = Vec::with_capacity(16 * mesh.tet_count());
    push_stiffness(mesh, sigma, &mut triplets);
    Ok(CsrMatrix::from_triplets(n, n, triplets))
}

fn push_stiffness(mesh: &Mesh, sigma: &ConductivityField, triplets: &mut Vec<(usize, usize, f64)>) {
    for (t, tet) in mesh.tets.iter().enumerate() {
        let g = mesh.tet_geometry(t);
        let s = sigma.per_element[t] * g.volume;
        for a in 0..4 {
            for b in 0..4 {
                let d = g.grads[a][0] * g.grads[b][0]
                    + g.grads[a][1] * g.grads[b][1]
                    + g.grads[a][2] * g.grads[b][2];
                triplets.push((tet[a] as usize, tet[b] as usize, s * d));
            }
        }
    }
}

pub fn assemble_cem_system(
    mesh: &Mesh,
    sigma: &ConductivityField,
    electrodes: &ElectrodeModel,
) -> Result<SystemMatrix, ForwardError> {
    sigma.validate(mesh.tet_count())?;
    electrodes.validate(mesh.electrode_count())?;
    let n_nodes = mesh.node_count();
    let n_el = mesh.electrode_count();
    let dim = n_nodes + n_el;
    let mut triplets = Vec::with_capacity(16 * mesh.tet_count() + n_el * (n_el + 64));
    push_stiffness(mesh, sigma, &mut triplets);

    let mut electrode_diag = vec![0.0; n_el];
    for (l, patch) in mesh.electrode_patch.iter().enumerate() {
        let y = 1.0 / electrodes.contact_impedance[l];
        let el = n_nodes + l;
        for &tri in patch {
            let area = mesh.triangle_area(tri);
            let nodes = mesh.boundary_tris[tri];
            for a in 0..3 {
                let na = nodes[a] as usize;
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    triplets.push((na, nodes[b] as usize, y * m));
                }
                triplets.push((na, el, -y * area / 3.0));
                triplets.push((el, na, -y * area / 3.0));
            }
            electrode_diag[l] += y * area;
        }
    }
    for (l, d) in electrode_diag.iter().enumerate() {
        triplets.push((n_nodes + l, n_nodes + l, *d));
    }
    let grounding_weight = electrode_diag.iter().sum::<f64>() / n_el as f64;
    for a in 0..n_el {
        for b in 0..n_el {
            triplets.push((n_nodes + a, n_nodes + b, grounding_weight));
        }
    }
    Ok(SystemMatrix {
        matrix: CsrMatrix::from_triplets(dim, dim, triplets),
        n_nodes,
        n_electrodes: n_el,
        grounding_weight,
    })
}

impl SystemMatrix {
    pub fn dim(&self) -> usize {
        self.n_nodes + self.n_electrodes
    }

    pub fn factorize(self) -> Result<FactoredSystem, ForwardError> {
        let factor = EnvelopeCholesky::factor(&self.matrix)?;
        Ok(FactoredSystem {
            system: self,
            factor,
        })
    }

    pub fn rhs(&self, stim: &StimulationPattern) -> Result<Vec<f64>, ForwardError> {
        let n_el = self.n_electrodes;
        if stim.inject_pos == stim.inject_neg {
            return Err(ForwardError::Stimulation(
                "injection electrodes must differ".into(),
            ));
        }
        if stim.inject_pos >= n_el || stim.inject_neg >= n_el {
            return Err(ForwardError::Stimulation(format!(
                "electrode index out of range for {n_el} electrodes"
            )));
        }
        if !(stim.amplitude.is_finite() && stim.amplitude >= 0.0) {
            return Err(ForwardError::Stimulation(format!(
                "amplitude {} must be finite and non-negative",
                stim.amplitude
            )));
        }
        let mut b = vec![0.0; self.dim()];
        b[self.n_nodes + stim.inject_pos] = stim.amplitude;
        b[self.n_nodes + stim.inject_neg] = -stim.amplitude;
        Ok(b)
    }
}

/// Assembled system together with its Cholesky factor. Read-only after
/// construction, so solves may run concurrently.
#[derive(Clone, Debug)]
pub struct FactoredSystem {
    pub system: SystemMatrix,
    factor: EnvelopeCholesky,
}

impl FactoredSystem {
    pub fn factor(&self) -> &EnvelopeCholesky {
        &self.factor
    }

    /// Solves `A x = b` with up to three steps of iterative refinement and
    /// returns the solution with its relative residual.
    pub fn solve_rhs(&self, b: &[f64]) -> Result<(Vec<f64>, f64), ForwardError> {
        let bn = norm2(b);
        if bn == 0.0 {
            return Ok((vec![0.0; b.len()], 0.0));
        }
        let a = &self.system.matrix;
        let mut x = self.factor.solve(b);
        let mut residual = f64::INFINITY;
        for step in 0..=MAX_REFINEMENT_STEPS {
            let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ax)| bi - ax).collect();
            residual = norm2(&r) / bn;
            if residual <= SOLVE_TOLERANCE || step == MAX_REFINEMENT_STEPS {
                break;
            }
            let dx = self.factor.solve(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        if residual > SOLVE_TOLERANCE {
            return Err(ForwardError::Residual {
                residual,
                tolerance: SOLVE_TOLERANCE,
            });
        }
        Ok((x, residual))
    }

    pub fn solve_stimulation(&self, stim: &StimulationPattern) -> Result<PotentialField, ForwardError> {
        let b = self.system.rhs(stim)?;
        let (x, _) = self.solve_rhs(&b)?;
        Ok(self.split(x))
    }

    fn split(&self, mut x: Vec<f64>) -> PotentialField {
        let electrode_u = x.split_off(self.system.n_nodes);
        PotentialField {
            nodal_u: x,
            electrode_u,
        }
    }

    /// Differential voltages for every protocol row, one solve per distinct
    /// injection pair.
    pub fn simulate(&self, protocol: &Protocol, amplitude: f64) -> Result<MeasurementFrame, ForwardError> {
        protocol.check_electrode_count(self.system.n_electrodes)?;
        let injections = protocol.injections();
        let mut fields = Vec::with_capacity(injections.len());
        for &(p, n) in &injections {
            fields.push(self.solve_stimulation(&StimulationPattern {
                inject_pos: p,
                inject_neg: n,
                amplitude,
            })?);
        }
        let values = protocol
            .rows
            .iter()
            .map(|r| {
                let k = injections.iter().position(|&i| i == r.injection()).unwrap();
                let u = &fields[k].electrode_u;
                u[r.meas_pos] - u[r.meas_neg]
            })
            .collect();
        Ok(MeasurementFrame {
            values,
            protocol_id: protocol.id.clone(),
        })
    }
}

pub fn simulate_frame(
    mesh: &Mesh,
    sigma: &ConductivityField,
    electrodes: &ElectrodeModel,
    protocol: &Protocol,
    amplitude: f64,
) -> Result<MeasurementFrame, ForwardError> {
    assemble_cem_system(mesh, sigma, electrodes)?
        .factorize()?
        .simulate(protocol, amplitude)
}
