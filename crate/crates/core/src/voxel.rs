//! The 32×32×40 reconstruction grid and its coupling to the FEM mesh.
//!
//! Voxels tile the tank's bounding box. Linear voxel indices run x fastest,
//! then y, then z.

use crate::geometry::TankGeometry;
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};

pub const GRID_X: usize = 32;
pub const GRID_Y: usize = 32;
pub const GRID_Z: usize = 40;
pub const VOXEL_COUNT: usize = GRID_X * GRID_Y * GRID_Z;

#[inline]
pub fn voxel_index(i: usize, j: usize, k: usize) -> usize {
    i + GRID_X * (j + GRID_Y * k)
}

#[inline]
pub fn voxel_coords(lin: usize) -> (usize, usize, usize) {
    (lin % GRID_X, (lin / GRID_X) % GRID_Y, lin / (GRID_X * GRID_Y))
}

/// Whether the centre of column `(i, j)` lies inside the inscribed circle.
/// Independent of the physical radius because the grid spans the bounding
/// box.
#[inline]
pub fn column_inside(i: usize, j: usize) -> bool {
    let u = (i as f64 + 0.5) / GRID_X as f64 * 2.0 - 1.0;
    let v = (j as f64 + 0.5) / GRID_Y as f64 * 2.0 - 1.0;
    u * u + v * v < 1.0
}

/// Mask over all voxels, `true` inside the tank.
pub fn inside_mask() -> Vec<bool> {
    (0..VOXEL_COUNT)
        .map(|lin| {
            let (i, j, _) = voxel_coords(lin);
            column_inside(i, j)
        })
        .collect()
}

/// Physical centre of a voxel.
pub fn voxel_center(geometry: &TankGeometry, lin: usize) -> [f64; 3] {
    let (i, j, k) = voxel_coords(lin);
    let r = geometry.radius;
    [
        -r + (i as f64 + 0.5) * 2.0 * r / GRID_X as f64,
        -r + (j as f64 + 0.5) * 2.0 * r / GRID_Y as f64,
        (k as f64 + 0.5) * geometry.height / GRID_Z as f64,
    ]
}

pub fn voxel_size(geometry: &TankGeometry) -> [f64; 3] {
    [
        2.0 * geometry.radius / GRID_X as f64,
        2.0 * geometry.radius / GRID_Y as f64,
        geometry.height / GRID_Z as f64,
    ]
}

/// Normalized conductivity change on the voxel grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelVolume {
    pub data: Vec<f32>,
}

impl Default for VoxelVolume {
    fn default() -> Self {
        Self::zeros()
    }
}

impl VoxelVolume {
    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; VOXEL_COUNT],
        }
    }

    pub fn filled(value: f32) -> Self {
        Self {
            data: vec![value; VOXEL_COUNT],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Option<Self> {
        (data.len() == VOXEL_COUNT).then_some(Self { data })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[voxel_index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        self.data[voxel_index(i, j, k)] = v;
    }

    /// Zero every voxel outside the tank.
    pub fn apply_mask(&mut self) {
        for (lin, v) in self.data.iter_mut().enumerate() {
            let (i, j, _) = voxel_coords(lin);
            if !column_inside(i, j) {
                *v = 0.0;
            }
        }
    }

    /// Values in `[-1, 1]` and exactly zero outside the tank.
    pub fn is_valid(&self) -> bool {
        self.data.len() == VOXEL_COUNT
            && self.data.iter().enumerate().all(|(lin, &v)| {
                let (i, j, _) = voxel_coords(lin);
                (-1.0..=1.0).contains(&v) && (column_inside(i, j) || v == 0.0)
            })
    }
}

/// Point-location coupling between voxels and mesh elements.
#[derive(Clone, Debug)]
pub struct VoxelMap {
    /// Element containing each voxel centre; `None` outside the tank.
    pub tet_of_voxel: Vec<Option<u32>>,
    voxel_ptr: Vec<usize>,
    voxel_idx: Vec<u32>,
    /// Linear indices of inside voxels, ascending.
    pub inside_voxels: Vec<usize>,
    /// Position of each voxel in `inside_voxels`.
    pub inside_position: Vec<Option<u32>>,
    /// Bounding box `[min, max]` in metres.
    pub voxel_extent: [[f64; 3]; 2],
    pub geometry: TankGeometry,
}

impl VoxelMap {
    pub fn voxels_of_tet(&self, t: usize) -> &[u32] {
        &self.voxel_idx[self.voxel_ptr[t]..self.voxel_ptr[t + 1]]
    }

    pub fn inside_count(&self) -> usize {
        self.inside_voxels.len()
    }

    pub fn voxel_volume(&self) -> f64 {
        let s = voxel_size(&self.geometry);
        s[0] * s[1] * s[2]
    }
}

fn barycentric(mesh: &Mesh, t: usize, x: [f64; 3]) -> [f64; 4] {
    let g = mesh.tet_geometry(t);
    let p0 = mesh.nodes[mesh.tets[t][0] as usize];
    let d = [x[0] - p0[0], x[1] - p0[1], x[2] - p0[2]];
    let mut l = [0.0; 4];
    for a in 1..4 {
        l[a] = g.grads[a][0] * d[0] + g.grads[a][1] * d[1] + g.grads[a][2] * d[2];
    }
    l[0] = 1.0 - l[1] - l[2] - l[3];
    l
}

pub fn build_voxel_map(mesh: &Mesh, geometry: &TankGeometry) -> VoxelMap {
    let size = voxel_size(geometry);
    let lo = [-geometry.radius, -geometry.radius, 0.0];
    let hi = [geometry.radius, geometry.radius, geometry.height];
    let dims = [GRID_X, GRID_Y, GRID_Z];
    let mut tet_of_voxel: Vec<Option<u32>> = vec![None; VOXEL_COUNT];
    let mut best_distance = vec![f64::INFINITY; VOXEL_COUNT];
    let inside = inside_mask();
    const TOL: f64 = 1e-10;

    for t in 0..mesh.tet_count() {
        let pts = mesh.tet_points(t);
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let mn = pts.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let mx = pts.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            // voxel centres c_i = lo + (i + 0.5) size within [mn, mx]
            let first = ((mn - lo[a]) / size[a] - 0.5).ceil().max(0.0) as usize;
            let last = ((mx - lo[a]) / size[a] - 0.5).floor();
            let last = if last < 0.0 { 0 } else { (last as usize + 1).min(dims[a]) };
            range[a] = (first, last);
        }
        for k in range[2].0..range[2].1 {
            for j in range[1].0..range[1].1 {
                for i in range[0].0..range[0].1 {
                    let lin = voxel_index(i, j, k);
                    if !inside[lin] {
                        continue;
                    }
                    let c = voxel_center(geometry, lin);
                    if barycentric(mesh, t, c).iter().all(|&l| l >= -TOL) {
                        // centres on shared faces go to the element whose
                        // centroid is closest
                        let g = mesh.tet_centroid(t);
                        let d = (g[0] - c[0]).powi(2) + (g[1] - c[1]).powi(2) + (g[2] - c[2]).powi(2);
                        if d < best_distance[lin] {
                            best_distance[lin] = d;
                            tet_of_voxel[lin] = Some(t as u32);
                        }
                    }
                }
            }
        }
    }

    // Centres between the polygonal wall and the true circle fall outside
    // every element; they take the element with the nearest centroid.
    let missing: Vec<usize> = (0..VOXEL_COUNT)
        .filter(|&lin| inside[lin] && tet_of_voxel[lin].is_none())
        .collect();
    if !missing.is_empty() {
        let centroids: Vec<[f64; 3]> = (0..mesh.tet_count()).map(|t| mesh.tet_centroid(t)).collect();
        for lin in missing {
            let c = voxel_center(geometry, lin);
            let best = centroids
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    (t, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(t, _)| t as u32);
            tet_of_voxel[lin] = best;
        }
    }

    let mut counts = vec![0usize; mesh.tet_count() + 1];
    for t in tet_of_voxel.iter().flatten() {
        counts[*t as usize + 1] += 1;
    }
    for t in 0..mesh.tet_count() {
        counts[t + 1] += counts[t];
    }
    let voxel_ptr = counts.clone();
    let mut fill = counts;
    let mut voxel_idx = vec![0u32; voxel_ptr[mesh.tet_count()]];
    for (lin, t) in tet_of_voxel.iter().enumerate() {
        if let Some(t) = t {
            voxel_idx[fill[*t as usize]] = lin as u32;
            fill[*t as usize] += 1;
        }
    }

    let inside_voxels: Vec<usize> = (0..VOXEL_COUNT).filter(|&l| inside[l]).collect();
    let mut inside_position = vec![None; VOXEL_COUNT];
    for (p, &lin) in inside_voxels.iter().enumerate() {
        inside_position[lin] = Some(p as u32);
    }

    VoxelMap {
        tet_of_voxel,
        voxel_ptr,
        voxel_idx,
        inside_voxels,
        inside_position,
        voxel_extent: [lo, hi],
        geometry: geometry.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_tank_mesh;
    use std::sync::OnceLock;

    fn fixture() -> &'static (Mesh, VoxelMap) {
        static F: OnceLock<(Mesh, VoxelMap)> = OnceLock::new();
        F.get_or_init(|| {
            let g = TankGeometry::default();
            let mesh = build_tank_mesh(&g, 16).unwrap();
            let map = build_voxel_map(&mesh, &g);
            (mesh, map)
        })
    }

    #[test]
    fn index_round_trip() {
        for lin in [0, 1, 31, 32, 1023, 1024, VOXEL_COUNT - 1] {
            let (i, j, k) = voxel_coords(lin);
            assert_eq!(voxel_index(i, j, k), lin);
        }
    }

    #[test]
    fn centre_voxel_maps_near_its_element() {
        let (mesh, map) = fixture();
        let lin = voxel_index(16, 16, 20);
        let t = map.tet_of_voxel[lin].unwrap() as usize;
        let c = voxel_center(&map.geometry, lin);
        let p = mesh.tet_centroid(t);
        let s = voxel_size(&map.geometry);
        let diag = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        assert!(d <= diag, "distance {d} > {diag}");
    }

    #[test]
    fn corner_voxels_are_outside() {
        let (_, map) = fixture();
        for (i, j) in [(0, 0), (31, 0), (0, 31), (31, 31)] {
            for k in [0, 20, 39] {
                assert_eq!(map.tet_of_voxel[voxel_index(i, j, k)], None);
            }
        }
    }

    #[test]
    fn inside_fraction_matches_disk_area() {
        // Monte-Carlo estimate of the unit-disk fill of the square, seeded
        // LCG, compared with the voxel count.
        let mut state = 12345u64;
        let mut hits = 0usize;
        let trials = 200_000;
        for _ in 0..trials {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let v = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            if u * u + v * v < 1.0 {
                hits += 1;
            }
        }
        let mc = hits as f64 / trials as f64;
        let (_, map) = fixture();
        let frac = map.inside_count() as f64 / VOXEL_COUNT as f64;
        assert!((frac - mc).abs() / mc < 0.05, "voxel {frac} vs mc {mc}");
        assert!((frac / std::f64::consts::FRAC_PI_4 - 1.0).abs() < 0.05);
    }

    #[test]
    fn inside_voxels_contained_in_their_element() {
        let (mesh, map) = fixture();
        let mut outside_polygon = 0;
        for &lin in &map.inside_voxels {
            let t = map.tet_of_voxel[lin].expect("inside voxel unmapped") as usize;
            let l = barycentric(mesh, t, voxel_center(&map.geometry, lin));
            if l.iter().any(|&x| x < -1e-10) {
                outside_polygon += 1;
            }
        }
        // only the thin sliver between the wall polygon and the circle
        assert!(outside_polygon < map.inside_count() / 100);
    }

    #[test]
    fn inverse_multimap_consistent() {
        let (mesh, map) = fixture();
        let mut total = 0;
        for t in 0..mesh.tet_count() {
            for &v in map.voxels_of_tet(t) {
                assert_eq!(map.tet_of_voxel[v as usize], Some(t as u32));
                total += 1;
            }
        }
        assert_eq!(total, map.inside_count());
    }

    #[test]
    fn mask_and_validity() {
        let mut v = VoxelVolume::filled(0.5);
        assert!(!v.is_valid());
        v.apply_mask();
        assert!(v.is_valid());
        assert_eq!(v.get(0, 0, 0), 0.0);
        assert_eq!(v.get(16, 16, 0), 0.5);
    }
}
