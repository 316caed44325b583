//! Linearized time-difference reconstruction: sensitivity Jacobian by the
//! adjoint-field method and a one-step regularized Gauss-Newton solve.

use crate::forward::{
    assemble_cem_system, ConductivityField, ElectrodeModel, ForwardError, PotentialField,
    StimulationPattern,
};
use crate::mesh::Mesh;
use crate::metrics::{ReconstructError, Reconstructor};
use crate::protocol::Protocol;
use crate::sparse::{dot, CsrMatrix, EnvelopeCholesky, FactorError};
use crate::voxel::{voxel_coords, voxel_index, VoxelMap, VoxelVolume, GRID_X, GRID_Y, GRID_Z};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

/// Above this many unknowns the normal equations are solved in data space.
pub const DENSE_LIMIT: usize = 4096;

/// Scale factor of the default regularization weight.
pub const DEFAULT_LAMBDA_FACTOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    Lambda(f64),
    #[error("normal matrix is singular at lambda = {lambda}; use lambda > 0")]
    SingularNormalMatrix { lambda: f64 },
    #[error("regularizer is not invertible: {0}")]
    Regularizer(#[from] FactorError),
    #[error("data-space solve needs a symmetric regularizer")]
    NonSymmetricRegularizer,
    #[error("reference frame entry {row} is zero")]
    ZeroReference { row: usize },
}

/// Dense row-major sensitivity matrix. Column `c` belongs to voxel
/// `columns[c]` (or to element `c` for element-level Jacobians).
#[derive(Clone, Debug)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub columns: Vec<usize>,
    pub reference_sigma: Option<ConductivityField>,
}

impl Jacobian {
    pub fn from_dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, InverseError> {
        if data.len() != rows * cols {
            return Err(InverseError::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            columns: (0..cols).collect(),
            reference_sigma: None,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    pub fn column_norm(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c).powi(2)).sum::<f64>().sqrt()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Maps the Jacobian into the units of normalized data: rows divided by
    /// `|v_ref|`, columns multiplied by the conductivity of a unit contrast.
    pub fn normalized(&self, v_ref: &[f64], contrast_scale: f64) -> Result<Jacobian, InverseError> {
        if v_ref.len() != self.rows {
            return Err(InverseError::Dimension {
                expected: self.rows,
                got: v_ref.len(),
            });
        }
        if let Some(row) = v_ref.iter().position(|v| *v == 0.0) {
            return Err(InverseError::ZeroReference { row });
        }
        let mut out = self.clone();
        for (r, chunk) in out.data.chunks_mut(self.cols).enumerate() {
            let s = contrast_scale / v_ref[r].abs();
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }
}

/// Nodal fields for every injection (at `amplitude`) and every measurement
/// pair (unit current), sharing one factorization.
struct AdjointFields {
    drive: Vec<PotentialField>,
    measure: Vec<PotentialField>,
    injections: Vec<(usize, usize)>,
    measurements: Vec<(usize, usize)>,
}

fn adjoint_fields(
    mesh: &Mesh,
    sigma: &ConductivityField,
    electrodes: &ElectrodeModel,
    protocol: &Protocol,
    amplitude: f64,
) -> Result<AdjointFields, InverseError> {
    let system = assemble_cem_system(mesh, sigma, electrodes)?.factorize()?;
    protocol
        .check_electrode_count(system.system.n_electrodes)
        .map_err(ForwardError::from)?;
    let injections = protocol.injections();
    let measurements = protocol.measurements();
    let solve = |pairs: &[(usize, usize)], amp: f64| -> Result<Vec<PotentialField>, ForwardError> {
        pairs
            .par_iter()
            .map(|&(p, n)| {
                system.solve_stimulation(&StimulationPattern {
                    inject_pos: p,
                    inject_neg: n,
                    amplitude: amp,
                })
            })
            .collect()
    };
    Ok(AdjointFields {
        drive: solve(&injections, amplitude)?,
        measure: solve(&measurements, 1.0)?,
        injections,
        measurements,
    })
}

fn gradients(mesh: &Mesh, fields: &[PotentialField]) -> Vec<Vec<[f64; 3]>> {
    fields
        .par_iter()
        .map(|f| (0..mesh.tet_count()).map(|t| f.element_gradient(mesh, t)).collect())
        .collect()
}

/// Element sensitivities `∂V_row/∂σ_t = −∫_t ∇u_drive·∇u_meas`, one column
/// per tetrahedron.
pub fn compute_element_jacobian(
    mesh: &Mesh,
    sigma_ref: &ConductivityField,
    electrodes: &ElectrodeModel,
    protocol: &Protocol,
    amplitude: f64,
) -> Result<Jacobian, InverseError> {
    let f = adjoint_fields(mesh, sigma_ref, electrodes, protocol, amplitude)?;
    let gd = gradients(mesh, &f.drive);
    let gm = gradients(mesh, &f.measure);
    let cols = mesh.tet_count();
    let mut data = vec![0.0; protocol.len() * cols];
    data.par_chunks_mut(cols)
        .zip(protocol.rows.par_iter())
        .for_each(|(out, row)| {
            let d = &gd[f.injections.iter().position(|&i| i == row.injection()).unwrap()];
            let m = &gm[f.measurements.iter().position(|&i| i == row.measurement()).unwrap()];
            for (t, o) in out.iter_mut().enumerate() {
                let (a, b) = (d[t], m[t]);
                *o = -mesh.tet_geometry(t).volume * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
            }
        });
    Ok(Jacobian {
        rows: protocol.len(),
        cols,
        data,
        columns: (0..cols).collect(),
        reference_sigma: Some(sigma_ref.clone()),
    })
}

/// Voxel sensitivities: a unit change on one voxel is treated as a change
/// of its containing element over the voxel's volume, so each column is the
/// element column scaled by `V_voxel / V_element`. Columns follow
/// `vmap.inside_voxels`.
pub fn compute_jacobian(
    mesh: &Mesh,
    sigma_ref: &ConductivityField,
    electrodes: &ElectrodeModel,
    protocol: &Protocol,
    amplitude: f64,
    vmap: &VoxelMap,
) -> Result<Jacobian, InverseError> {
    let el = compute_element_jacobian(mesh, sigma_ref, electrodes, protocol, amplitude)?;
    let vv = vmap.voxel_volume();
    let cols = vmap.inside_count();
    let mapping: Vec<(usize, f64)> = vmap
        .inside_voxels
        .iter()
        .map(|&lin| {
            let t = vmap.tet_of_voxel[lin].expect("inside voxel without element") as usize;
            (t, vv / mesh.tet_geometry(t).volume)
        })
        .collect();
    let mut data = vec![0.0; el.rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, out)| {
        let src = el.row(r);
        for (o, &(t, w)) in out.iter_mut().zip(&mapping) {
            *o = src[t] * w;
        }
    });
    Ok(Jacobian {
        rows: el.rows,
        cols,
        data,
        columns: vmap.inside_voxels.clone(),
        reference_sigma: Some(sigma_ref.clone()),
    })
}

#[derive(Clone, Debug)]
pub struct Regularizer {
    pub matrix: CsrMatrix,
}

/// 6-neighbour Laplacian over the inside voxels (ordered as
/// `vmap.inside_voxels`). Every diagonal entry is 6; neighbours outside the
/// tank act as zero-valued ghosts, which keeps the matrix definite.
pub fn build_laplace_regularizer(vmap: &VoxelMap) -> Regularizer {
    let n = vmap.inside_count();
    let mut triplets = Vec::with_capacity(7 * n);
    for (p, &lin) in vmap.inside_voxels.iter().enumerate() {
        triplets.push((p, p, 6.0));
        let (i, j, k) = voxel_coords(lin);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        for (di, dj, dk) in [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)] {
            let (a, b, c) = (i + di, j + dj, k + dk);
            if a < 0 || b < 0 || c < 0 || a >= GRID_X as isize || b >= GRID_Y as isize || c >= GRID_Z as isize {
                continue;
            }
            if let Some(q) = vmap.inside_position[voxel_index(a as usize, b as usize, c as usize)] {
                triplets.push((p, q as usize, -1.0));
            }
        }
    }
    Regularizer {
        matrix: CsrMatrix::from_triplets(n, n, triplets),
    }
}

/// `λ = 1e-3 · tr(JᵀJ) / tr(LᵀL)`.
pub fn default_lambda(j: &Jacobian, reg: &Regularizer) -> f64 {
    DEFAULT_LAMBDA_FACTOR * j.frobenius_sq() / reg.matrix.frobenius_sq()
}

/// Which form of the normal equations to factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveRoute {
    /// Primal up to [`DENSE_LIMIT`] unknowns, data space above.
    Auto,
    /// Dense `n × n` Cholesky of `JᵀJ + λLᵀL`.
    Primal,
    /// `(LᵀL)⁻¹Jᵀ (J(LᵀL)⁻¹Jᵀ + λI)⁻¹`; needs `λ > 0` and an invertible `L`.
    DataSpace,
}

enum Route {
    /// Cholesky factor of `JᵀJ + λLᵀL`.
    Primal(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// `W = (LᵀL)⁻¹Jᵀ` stored row by row and the Cholesky factor of
    /// `J W + λI`.
    DataSpace {
        w: Arc<Vec<f64>>,
        /// `J(LᵀL)⁻¹Jᵀ` without the λ shift.
        gram: Arc<DMatrix<f64>>,
        factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
}

/// Precomputed solver for `Δσ = (JᵀJ + λLᵀL)⁻¹ Jᵀ ΔV`.
pub struct OneStepSolver {
    rows: usize,
    cols: usize,
    jt_source: Vec<f64>,
    columns: Vec<usize>,
    route: Route,
    pub lambda: f64,
}

impl OneStepSolver {
    pub fn new(j: &Jacobian, reg: &Regularizer, lambda: f64) -> Result<Self, InverseError> {
        Self::with_route(j, reg, lambda, SolveRoute::Auto)
    }

    pub fn with_route(
        j: &Jacobian,
        reg: &Regularizer,
        lambda: f64,
        route: SolveRoute,
    ) -> Result<Self, InverseError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(InverseError::Lambda(lambda));
        }
        let n = j.cols;
        if reg.matrix.rows() != n || reg.matrix.cols() != n {
            return Err(InverseError::Dimension {
                expected: n,
                got: reg.matrix.rows(),
            });
        }
        let singular = InverseError::SingularNormalMatrix { lambda };
        let primal = match route {
            SolveRoute::Auto => n <= DENSE_LIMIT,
            SolveRoute::Primal => true,
            SolveRoute::DataSpace => false,
        };
        let route = if primal {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for r in 0..j.rows {
                let row = j.row(r);
                for a in 0..n {
                    if row[a] == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        m[(a, b)] += row[a] * row[b];
                    }
                }
            }
            if lambda > 0.0 {
                let lt = reg.matrix.transpose();
                let ltl = lt.matmul(&reg.matrix);
                for a in 0..n {
                    for (b, v) in ltl.row(a) {
                        m[(a, b)] += lambda * v;
                    }
                }
            }
            let scale = (0..n).map(|a| m[(a, a)]).fold(0.0, f64::max);
            let chol = m.cholesky().ok_or(singular)?;
            let min_pivot = (0..n).map(|a| chol.l_dirty()[(a, a)].powi(2)).fold(f64::INFINITY, f64::min);
            if n > 0 && !(min_pivot > 1e-13 * scale) {
                return Err(InverseError::SingularNormalMatrix { lambda });
            }
            Route::Primal(chol)
        } else {
            // The data-space form needs λ > 0; with rows < n the primal
            // matrix is singular at λ = 0 anyway.
            if lambda == 0.0 {
                return Err(singular);
            }
            if reg.matrix.asymmetry() != 0.0 {
                return Err(InverseError::NonSymmetricRegularizer);
            }
            // With L symmetric, (LᵀL)⁻¹ = L⁻¹L⁻¹: M = L⁻¹Jᵀ, G = MᵀM,
            // W = L⁻¹M.
            let l = EnvelopeCholesky::factor(&reg.matrix)?;
            let w = solve_columns(&l, &j.data, j.rows, n);
            let m_cols = w.clone();
            let w = solve_columns(&l, &w, j.rows, n);
            let rows = j.rows;
            let mut g = DMatrix::<f64>::zeros(rows, rows);
            let entries: Vec<(usize, usize, f64)> = (0..rows)
                .into_par_iter()
                .flat_map_iter(|a| {
                    let ma = &m_cols[a * n..(a + 1) * n];
                    let m_cols = &m_cols;
                    (0..=a).map(move |b| (a, b, dot(&m_cols[b * n..(b + 1) * n], ma)))
                })
                .collect();
            for (a, b, v) in entries {
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
            let factor = shifted_cholesky(&g, lambda)?;
            Route::DataSpace {
                w: Arc::new(w),
                gram: Arc::new(g),
                factor,
            }
        };
        Ok(Self {
            rows: j.rows,
            cols: n,
            jt_source: if matches!(route, Route::Primal(_)) { j.data.clone() } else { Vec::new() },
            columns: j.columns.clone(),
            route,
            lambda,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// The same problem at another λ. In data space this reuses the
    /// λ-independent work and only refactors the small Gram matrix.
    pub fn with_lambda(&self, j: &Jacobian, reg: &Regularizer, lambda: f64) -> Result<Self, InverseError> {
        match &self.route {
            Route::Primal(_) => Self::with_route(j, reg, lambda, SolveRoute::Primal),
            Route::DataSpace { w, gram, .. } => {
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(if lambda == 0.0 {
                        InverseError::SingularNormalMatrix { lambda }
                    } else {
                        InverseError::Lambda(lambda)
                    });
                }
                Ok(Self {
                    rows: self.rows,
                    cols: self.cols,
                    jt_source: Vec::new(),
                    columns: self.columns.clone(),
                    route: Route::DataSpace {
                        w: Arc::clone(w),
                        gram: Arc::clone(gram),
                        factor: shifted_cholesky(gram, lambda)?,
                    },
                    lambda,
                })
            }
        }
    }

    /// Solution coefficients, one per Jacobian column.
    pub fn solve(&self, delta_v: &[f64]) -> Result<Vec<f64>, InverseError> {
        if delta_v.len() != self.rows {
            return Err(InverseError::Dimension {
                expected: self.rows,
                got: delta_v.len(),
            });
        }
        let n = self.cols;
        match &self.route {
            Route::Primal(chol) => {
                let mut rhs = nalgebra::DVector::<f64>::zeros(n);
                for (r, &dv) in delta_v.iter().enumerate() {
                    let row = &self.jt_source[r * n..(r + 1) * n];
                    for (x, &a) in rhs.iter_mut().zip(row) {
                        *x += a * dv;
                    }
                }
                Ok(chol.solve(&rhs).iter().copied().collect())
            }
            Route::DataSpace { w, factor, .. } => {
                let c = factor.solve(&nalgebra::DVector::from_column_slice(delta_v));
                let mut x = vec![0.0; n];
                for (r, &cr) in c.iter().enumerate() {
                    for (xi, &wv) in x.iter_mut().zip(&w[r * n..(r + 1) * n]) {
                        *xi += wv * cr;
                    }
                }
                Ok(x)
            }
        }
    }

    /// Solution scattered onto the voxel grid and clamped to `[-1, 1]`;
    /// outside voxels are zero.
    pub fn reconstruct(&self, delta_v: &[f64]) -> Result<VoxelVolume, InverseError> {
        let x = self.solve(delta_v)?;
        let mut vol = VoxelVolume::zeros();
        for (&lin, &v) in self.columns.iter().zip(&x) {
            vol.data[lin] = v.clamp(-1.0, 1.0) as f32;
        }
        Ok(vol)
    }
}

fn shifted_cholesky(g: &DMatrix<f64>, lambda: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, InverseError> {
    let mut g = g.clone();
    for a in 0..g.nrows() {
        g[(a, a)] += lambda;
    }
    g.cholesky().ok_or(InverseError::SingularNormalMatrix { lambda })
}

/// Applies `A⁻¹` to each of `count` row vectors of length `n` stored
/// back to back, in blocks of right-hand sides.
fn solve_columns(factor: &EnvelopeCholesky, rows: &[f64], count: usize, n: usize) -> Vec<f64> {
    const BLOCK: usize = 16;
    let mut out = vec![0.0; rows.len()];
    out.par_chunks_mut(BLOCK * n)
        .zip(rows.par_chunks(BLOCK * n))
        .for_each(|(dst, src)| {
            let k = src.len() / n;
            let mut block = vec![0.0; n * k];
            for c in 0..k {
                for i in 0..n {
                    block[i * k + c] = src[c * n + i];
                }
            }
            factor.solve_block_in_place(&mut block, k);
            for c in 0..k {
                for i in 0..n {
                    dst[c * n + i] = block[i * k + c];
                }
            }
        });
    debug_assert_eq!(out.len(), count * n);
    out
}

impl Reconstructor for OneStepSolver {
    fn label(&self) -> String {
        "one-step".into()
    }

    fn reconstruct(&self, frame: &[f32]) -> Result<VoxelVolume, ReconstructError> {
        let dv: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
        Ok(OneStepSolver::reconstruct(self, &dv)?)
    }
}

pub fn one_step_reconstruct(
    jacobian: &Jacobian,
    reg: &Regularizer,
    lambda: f64,
    delta_v: &[f64],
) -> Result<VoxelVolume, InverseError> {
    OneStepSolver::new(jacobian, reg, lambda)?.reconstruct(delta_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_frame, DEFAULT_AMPLITUDE, DEFAULT_CONTACT_IMPEDANCE};
    use crate::geometry::TankGeometry;
    use crate::mesh::build_tank_mesh;
    use crate::protocol::generate_adjacent_protocol;
    use crate::voxel::build_voxel_map;
    use std::sync::OnceLock;

    struct Fixture {
        mesh: Mesh,
        vmap: VoxelMap,
        protocol: Protocol,
        jac: Jacobian,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let g = TankGeometry::default();
            let mesh = build_tank_mesh(&g, 8).unwrap();
            let vmap = build_voxel_map(&mesh, &g);
            let protocol = generate_adjacent_protocol(16, 2).unwrap();
            let sigma = ConductivityField::homogeneous(mesh.tet_count(), 1.0);
            let el = ElectrodeModel::uniform(32, DEFAULT_CONTACT_IMPEDANCE);
            let jac = compute_jacobian(&mesh, &sigma, &el, &protocol, DEFAULT_AMPLITUDE, &vmap).unwrap();
            let v_ref = simulate_frame(&mesh, &sigma, &el, &protocol, DEFAULT_AMPLITUDE).unwrap();
            let jac = jac.normalized(&v_ref.values, 0.5).unwrap();
            Fixture {
                mesh,
                vmap,
                protocol,
                jac,
            }
        })
    }

    fn solver() -> &'static OneStepSolver {
        static S: OnceLock<OneStepSolver> = OnceLock::new();
        S.get_or_init(|| {
            let f = fixture();
            let reg = build_laplace_regularizer(&f.vmap);
            OneStepSolver::new(&f.jac, &reg, default_lambda(&f.jac, &reg)).unwrap()
        })
    }

    #[test]
    fn jacobian_shape_and_finiteness() {
        let f = fixture();
        assert_eq!(f.jac.rows, 208);
        assert_eq!(f.jac.cols, f.vmap.inside_count());
        assert!(f.jac.data.iter().all(|v| v.is_finite()));
        assert!(f.jac.mul_vec(&vec![0.0; f.jac.cols]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn element_jacobian_rows_sum_like_a_uniform_scaling() {
        // Scaling σ by (1 + ε) divides every voltage by (1 + ε) when the
        // contact impedance is scaled too; with Z fixed, the element
        // sensitivities alone account for the bulk part: Σ_t σ_t ∂V/∂σ_t
        // equals dV/dc at c = 1 for σ → cσ. Checked against a finite
        // difference of two forward solves.
        let f = fixture();
        let sigma = ConductivityField::homogeneous(f.mesh.tet_count(), 1.0);
        let el = ElectrodeModel::uniform(32, DEFAULT_CONTACT_IMPEDANCE);
        let je = compute_element_jacobian(&f.mesh, &sigma, &el, &f.protocol, DEFAULT_AMPLITUDE).unwrap();
        let h = 1e-3;
        let up = simulate_frame(&f.mesh, &sigma.scaled(1.0 + h), &el, &f.protocol, DEFAULT_AMPLITUDE).unwrap();
        let dn = simulate_frame(&f.mesh, &sigma.scaled(1.0 - h), &el, &f.protocol, DEFAULT_AMPLITUDE).unwrap();
        for r in (0..208).step_by(17) {
            let fd = (up.values[r] - dn.values[r]) / (2.0 * h);
            let an: f64 = je.row(r).iter().sum();
            assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-12), "row {r}: {fd} vs {an}");
        }
    }

    #[test]
    fn sensitivity_concentrates_near_electrodes() {
        let f = fixture();
        let mut norms: Vec<f64> = (0..f.jac.cols).map(|c| f.jac.column_norm(c)).collect();
        let g = &f.vmap.geometry;
        // voxel just inside the wall in front of electrode 0
        let (r, z) = (g.radius * 0.9, g.electrode_z(0));
        let s = crate::voxel::voxel_size(g);
        let i = ((r + g.radius) / s[0]) as usize;
        let j = (g.radius / s[1]) as usize;
        let k = (z / s[2]) as usize;
        let lin = voxel_index(i, j, k);
        let col = f.jac.columns.iter().position(|&c| c == lin).unwrap();
        let near = norms[col];
        norms.sort_by(f64::total_cmp);
        assert!(near >= norms[norms.len() / 2]);
    }

    #[test]
    fn laplacian_stencil_and_symmetry() {
        let f = fixture();
        let reg = build_laplace_regularizer(&f.vmap);
        assert_eq!(reg.matrix.asymmetry(), 0.0);
        let centre = voxel_index(16, 16, 20);
        let p = f.vmap.inside_position[centre].unwrap() as usize;
        let mut x = vec![0.0; f.vmap.inside_count()];
        x[p] = 1.0;
        let y = reg.matrix.mul_vec(&x);
        assert_eq!(y[p], 6.0);
        for (a, b, c) in [(15, 16, 20), (17, 16, 20), (16, 15, 20), (16, 17, 20), (16, 16, 19), (16, 16, 21)] {
            let q = f.vmap.inside_position[voxel_index(a, b, c)].unwrap() as usize;
            assert_eq!(y[q], -1.0);
        }
        assert_eq!(y.iter().filter(|v| **v != 0.0).count(), 7);
    }

    #[test]
    fn laplacian_kills_constants_in_the_interior() {
        let f = fixture();
        let reg = build_laplace_regularizer(&f.vmap);
        let y = reg.matrix.mul_vec(&vec![1.0; f.vmap.inside_count()]);
        for (p, &lin) in f.vmap.inside_voxels.iter().enumerate() {
            let (i, j, k) = voxel_coords(lin);
            let interior = k > 0
                && k + 1 < GRID_Z
                && i > 0
                && j > 0
                && i + 1 < GRID_X
                && j + 1 < GRID_Y
                && [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                    .iter()
                    .all(|&(a, b)| f.vmap.inside_position[voxel_index(a, b, k)].is_some());
            if interior {
                assert_eq!(y[p], 0.0);
            }
        }
    }

    #[test]
    fn identity_toy_problem() {
        let j = Jacobian::from_dense(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let reg = Regularizer {
            matrix: CsrMatrix::from_triplets(2, 2, vec![]),
        };
        let x = OneStepSolver::new(&j, &reg, 0.0).unwrap().solve(&[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_at_zero_lambda() {
        let j = Jacobian::from_dense(1, 2, vec![1.0, 1.0]).unwrap();
        let reg = Regularizer {
            matrix: CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]),
        };
        assert!(matches!(
            OneStepSolver::new(&j, &reg, 0.0),
            Err(InverseError::SingularNormalMatrix { .. })
        ));
        assert!(OneStepSolver::new(&j, &reg, 1e-3).is_ok());
        let f = fixture();
        let reg = build_laplace_regularizer(&f.vmap);
        assert!(matches!(
            OneStepSolver::new(&f.jac, &reg, 0.0),
            Err(InverseError::SingularNormalMatrix { .. })
        ));
    }

    #[test]
    fn dense_and_data_space_routes_agree() {
        // Small random problem solved both ways.
        let (m, n) = (7, 12);
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data: Vec<f64> = (0..m * n).map(|_| next()).collect();
        let j = Jacobian::from_dense(m, n, data).unwrap();
        let mut trip = Vec::new();
        for a in 0..n {
            trip.push((a, a, 3.0));
            if a + 1 < n {
                trip.push((a, a + 1, -1.0));
                trip.push((a + 1, a, -1.0));
            }
        }
        let reg = Regularizer {
            matrix: CsrMatrix::from_triplets(n, n, trip),
        };
        let dv: Vec<f64> = (0..m).map(|_| next()).collect();
        let lambda = 0.05;
        let primal = OneStepSolver::new(&j, &reg, lambda).unwrap().solve(&dv).unwrap();
        let dual = OneStepSolver::with_route(&j, &reg, lambda, SolveRoute::DataSpace)
            .unwrap()
            .solve(&dv)
            .unwrap();
        // data-space formula evaluated by hand with nalgebra
        let jm = DMatrix::from_row_slice(m, n, &j.data);
        let mut lm = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for (b, v) in reg.matrix.row(a) {
                lm[(a, b)] = v;
            }
        }
        let p = lm.transpose() * &lm;
        let pinv = p.try_inverse().unwrap();
        let g = &jm * &pinv * jm.transpose() + DMatrix::identity(m, m) * lambda;
        let x = &pinv * jm.transpose() * g.try_inverse().unwrap() * nalgebra::DVector::from_column_slice(&dv);
        for ((a, b), c) in primal.iter().zip(x.iter()).zip(&dual) {
            assert!((a - b).abs() <= 1e-9 * x.amax());
            assert!((c - b).abs() <= 1e-9 * x.amax());
        }
    }

    #[test]
    fn reconstruction_linear_and_damped() {
        let f = fixture();
        let reg = build_laplace_regularizer(&f.vmap);
        let lam = default_lambda(&f.jac, &reg);
        let solver = solver();
        let x: Vec<f64> = (0..208).map(|i| (((i * 37) % 11) as f64 - 5.0) * 1e-3).collect();
        let y: Vec<f64> = (0..208).map(|i| ((i * 13) % 7) as f64 * -1e-3).collect();
        let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let sx = solver.solve(&x).unwrap();
        let sy = solver.solve(&y).unwrap();
        let sc = solver.solve(&comb).unwrap();
        let norm = sc.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..sc.len() {
            assert!((sc[k] - (2.0 * sx[k] - 3.0 * sy[k])).abs() <= 1e-8 * norm);
        }
        assert!(solver.solve(&vec![0.0; 208]).unwrap().iter().all(|v| *v == 0.0));

        let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut last = f64::INFINITY;
        for factor in [0.1, 1.0, 10.0] {
            let s = solver.with_lambda(&f.jac, &reg, lam * factor).unwrap().solve(&x).unwrap();
            let n = norm2(&s);
            assert!(n <= last);
            last = n;
        }
        let big = solver.with_lambda(&f.jac, &reg, lam * 1e12).unwrap().solve(&x).unwrap();
        assert!(norm2(&big) < 1e-6 * norm2(&sx));
    }
}
