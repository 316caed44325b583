#[path = "support/wide.rs"]
mod wide;

use eit3d_core::forward::{ConductivityField, ElectrodeModel, DEFAULT_AMPLITUDE, DEFAULT_CONTACT_IMPEDANCE};
use eit3d_core::geometry::TankGeometry;
use eit3d_core::inverse::compute_element_jacobian;
use eit3d_core::mesh::build_tank_mesh;
use eit3d_core::protocol::generate_adjacent_protocol;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn double_double_arithmetic_is_exact_on_a_known_cancellation() {
    let a = wide::Dd::from(1.0).add(wide::Dd::from(1e-20));
    let b = a.sub(wide::Dd::from(1.0));
    assert_eq!(b.value(), 1e-20);
    assert_eq!(wide::Dd::from(1.0 + f64::EPSILON).scale(1.0 - f64::EPSILON).sub(wide::Dd::from(1.0)).value(), -f64::EPSILON * f64::EPSILON);
}

#[test]
fn element_jacobian_matches_central_differences() {
    let g = TankGeometry::default();
    let mesh = build_tank_mesh(&g, 12).unwrap();
    let protocol = generate_adjacent_protocol(16, 2).unwrap();
    let sigma = ConductivityField::homogeneous(mesh.tet_count(), 1.0);
    let el = ElectrodeModel::uniform(mesh.electrode_count(), DEFAULT_CONTACT_IMPEDANCE);
    let jac = compute_element_jacobian(&mesh, &sigma, &el, &protocol, DEFAULT_AMPLITUDE).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..24 {
        let r = rng.random_range(0..protocol.len());
        let t = rng.random_range(0..mesh.tet_count());
        let fd = wide::fd_entry(&mesh, &sigma, &el, &protocol.rows[r], t, 1e-4, DEFAULT_AMPLITUDE);
        let an = jac.get(r, t);
        let rel = (an - fd).abs() / an.abs().max(fd.abs());
        worst = worst.max(rel);
        assert!(rel < 1e-4, "row {r} element {t}: analytic {an:e}, finite difference {fd:e}, rel {rel:e}");
    }
    eprintln!("worst relative error {worst:e}");
}
