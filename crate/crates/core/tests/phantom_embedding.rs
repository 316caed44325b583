use eit3d_core::geometry::TankGeometry;
use eit3d_core::mesh::build_tank_mesh;
use eit3d_core::phantom::{embed_in_mesh, rasterize_phantom, sample_phantom, Category, PhantomConfig};
use eit3d_core::voxel::build_voxel_map;

#[test]
fn rasterized_voxels_land_in_embedded_elements() {
    let g = TankGeometry::default();
    let mesh = build_tank_mesh(&g, 48).unwrap();
    let vmap = build_voxel_map(&mesh, &g);
    let cfg = PhantomConfig::default();
    let (mut hits, mut total) = (0usize, 0usize);
    for (k, &cat) in Category::ALL.iter().enumerate() {
        for s in 0..3u64 {
            let p = sample_phantom(cat, 100 * k as u64 + s, &g, &cfg).unwrap();
            let vol = rasterize_phantom(&p, &vmap);
            let field = embed_in_mesh(&p, &mesh, 1.0, 0.5).unwrap();
            for (lin, &v) in vol.data.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                total += 1;
                let t = vmap.tet_of_voxel[lin].expect("nonzero voxel lies inside the tank") as usize;
                if field.per_element[t] != 1.0 {
                    hits += 1;
                }
            }
        }
    }
    let frac = hits as f64 / total as f64;
    assert!(frac >= 0.95, "{hits}/{total} = {frac}");
}
