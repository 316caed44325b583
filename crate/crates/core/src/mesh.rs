//! Structured tetrahedral mesh of the cylindrical tank.
//!
//! The horizontal cross-section is an O-grid: an `n × n` square lattice whose
//! inner part stays Cartesian and whose outer rings are blended onto circles,
//! so the outermost ring of nodes lies exactly on the tank wall. Layers are
//! stacked in `z` and every hexahedral cell is cut into six tetrahedra along
//! a main diagonal (Kuhn subdivision).
//!
//! Wall nodes are distributed so that electrode edges coincide with mesh
//! lines whenever the wall node count is a multiple of the electrode count;
//! z-layers always align with the electrode bands.

use crate::geometry::{wrap_angle, GeometryError, TankGeometry};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};
use thiserror::Error;

/// Smallest accepted cells-per-axis count.
pub const MIN_RESOLUTION: usize = 6;

/// Fraction of the square half-width that stays Cartesian.
const CORE_FRACTION: f64 = 0.4;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooLow(usize),
    #[error("electrode {electrode} (ring {ring}, position {position}) has an empty patch at resolution {resolution}")]
    EmptyElectrode {
        electrode: usize,
        ring: usize,
        position: usize,
        resolution: usize,
    },
    #[error("tetrahedron {0} is degenerate")]
    Degenerate(usize),
}

/// Volume and barycentric gradients of one linear tetrahedron.
#[derive(Clone, Copy, Debug)]
pub struct TetGeometry {
    pub volume: f64,
    pub grads: [[f64; 3]; 4],
}

impl TetGeometry {
    pub fn new(p: [[f64; 3]; 4]) -> Self {
        let e = |a: usize| {
            [
                p[a][0] - p[0][0],
                p[a][1] - p[0][1],
                p[a][2] - p[0][2],
            ]
        };
        let (a, b, c) = (e(1), e(2), e(3));
        let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]);
        // Rows of the inverse of [a b c] (as columns) are the gradients of
        // the barycentric coordinates 1..3.
        let inv = 1.0 / det;
        let g1 = cross(b, c).map(|x| x * inv);
        let g2 = cross(c, a).map(|x| x * inv);
        let g3 = cross(a, b).map(|x| x * inv);
        let g0 = [
            -(g1[0] + g2[0] + g3[0]),
            -(g1[1] + g2[1] + g3[1]),
            -(g1[2] + g2[2] + g3[2]),
        ];
        Self {
            volume: det / 6.0,
            grads: [g0, g1, g2, g3],
        }
    }
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn signed_volume(p: [[f64; 3]; 4]) -> f64 {
    let d = |a: usize| [p[a][0] - p[0][0], p[a][1] - p[0][1], p[a][2] - p[0][2]];
    let c = cross(d(2), d(3));
    let a = d(1);
    (a[0] * c[0] + a[1] * c[1] + a[2] * c[2]) / 6.0
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub geometry: TankGeometry,
    pub resolution: usize,
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[u32; 4]>,
    /// All boundary faces, oriented with outward normals.
    pub boundary_tris: Vec<[u32; 3]>,
    /// Per electrode, indices into `boundary_tris`.
    pub electrode_patch: Vec<Vec<usize>>,
    tet_geometry: Vec<TetGeometry>,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub fn electrode_count(&self) -> usize {
        self.electrode_patch.len()
    }

    pub fn tet_geometry(&self, t: usize) -> &TetGeometry {
        &self.tet_geometry[t]
    }

    pub fn tet_points(&self, t: usize) -> [[f64; 3]; 4] {
        self.tets[t].map(|n| self.nodes[n as usize])
    }

    pub fn tet_centroid(&self, t: usize) -> [f64; 3] {
        let p = self.tet_points(t);
        let mut c = [0.0; 3];
        for q in p {
            for k in 0..3 {
                c[k] += 0.25 * q[k];
            }
        }
        c
    }

    pub fn total_volume(&self) -> f64 {
        self.tet_geometry.iter().map(|g| g.volume).sum()
    }

    pub fn triangle_points(&self, tri: usize) -> [[f64; 3]; 3] {
        self.boundary_tris[tri].map(|n| self.nodes[n as usize])
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangle_points(tri);
        let n = cross(
            [b[0] - a[0], b[1] - a[1], b[2] - a[2]],
            [c[0] - a[0], c[1] - a[1], c[2] - a[2]],
        );
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn electrode_area(&self, electrode: usize) -> f64 {
        self.electrode_patch[electrode]
            .iter()
            .map(|&t| self.triangle_area(t))
            .sum()
    }

    /// Plain-text listing: a header line per section followed by one entity
    /// per line. Indices are 0-based.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "nodes {}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{:.9e} {:.9e} {:.9e}", p[0], p[1], p[2])?;
        }
        writeln!(w, "tets {}", self.tets.len())?;
        for t in &self.tets {
            writeln!(w, "{} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        writeln!(w, "boundary_tris {}", self.boundary_tris.len())?;
        for t in &self.boundary_tris {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "electrodes {}", self.electrode_patch.len())?;
        for (e, patch) in self.electrode_patch.iter().enumerate() {
            write!(w, "{e}")?;
            for t in patch {
                write!(w, " {t}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Maps a wall-node parameter to an azimuth. Knots sit at integer
/// parameters; the map is periodic with period `knots.len()` and gains 2π
/// per period.
struct WallAngles {
    knots: Vec<f64>,
    /// Offset added to the perimeter parameter so that wall nodes land on
    /// integer knots.
    shift: f64,
}

impl WallAngles {
    fn new(geometry: &TankGeometry, n: usize) -> Self {
        let wall_nodes = 4 * n;
        let e = geometry.electrodes_per_ring;
        let parity = if n % 2 == 0 { 0.0 } else { -0.5 };
        if wall_nodes % e == 0 && wall_nodes / e >= 2 {
            let per = wall_nodes / e;
            let alpha = geometry.electrode_half_angle();
            let pitch = 2.0 * PI / e as f64;
            let on = ((per as f64 * 2.0 * alpha / pitch).round() as usize).clamp(1, per - 1);
            let off = per - on;
            let gap = pitch - 2.0 * alpha;
            let mut knots = Vec::with_capacity(wall_nodes);
            for k in 0..e {
                let centre = pitch * k as f64;
                for j in 0..on {
                    knots.push(centre - alpha + j as f64 * 2.0 * alpha / on as f64);
                }
                for j in 0..off {
                    knots.push(centre + alpha + j as f64 * gap / off as f64);
                }
            }
            Self {
                knots,
                shift: parity + (on / 2) as f64,
            }
        } else {
            let knots = (0..wall_nodes)
                .map(|t| 2.0 * PI * t as f64 / wall_nodes as f64)
                .collect();
            Self {
                knots,
                shift: parity,
            }
        }
    }

    /// `f` is the perimeter fraction in `[0, 1)`.
    fn angle(&self, f: f64) -> f64 {
        let m = self.knots.len();
        let t = f * m as f64 + self.shift;
        let base = t.floor();
        let frac = t - base;
        let i = base as i64;
        let at = |k: i64| {
            let wraps = k.div_euclid(m as i64);
            let idx = k.rem_euclid(m as i64) as usize;
            self.knots[idx] + 2.0 * PI * wraps as f64
        };
        let a = at(i);
        let b = at(i + 1);
        a + frac * (b - a)
    }
}

/// Perimeter fraction of `(u, v)` on the square of half-size
/// `max(|u|, |v|)`, counter-clockwise from the positive x axis.
fn perimeter_fraction(u: f64, v: f64) -> f64 {
    let s = u.abs().max(v.abs());
    let f = if u >= s && v > -s {
        v / (8.0 * s)
    } else if v >= s {
        0.25 - u / (8.0 * s)
    } else if u <= -s {
        0.5 - v / (8.0 * s)
    } else {
        0.75 + u / (8.0 * s)
    };
    f.rem_euclid(1.0)
}

fn disk_point(u: f64, v: f64, radius: f64, wall: &WallAngles) -> [f64; 2] {
    let s = u.abs().max(v.abs());
    if s == 0.0 {
        return [0.0, 0.0];
    }
    let square = [radius * u, radius * v];
    let w = ((s - CORE_FRACTION) / (1.0 - CORE_FRACTION)).clamp(0.0, 1.0);
    if w == 0.0 {
        return square;
    }
    // Ring s blends from the Cartesian square of half-size s·r towards the
    // circle of radius s·r, reaching it at the wall.
    let theta = wall.angle(perimeter_fraction(u, v));
    let circle = [radius * s * theta.cos(), radius * s * theta.sin()];
    [
        (1.0 - w) * square[0] + w * circle[0],
        (1.0 - w) * square[1] + w * circle[1],
    ]
}

fn z_levels(geometry: &TankGeometry, n: usize) -> Vec<f64> {
    let half = 0.5 * geometry.electrode_height;
    let [z0, z1] = geometry.ring_heights;
    let breaks = [
        0.0,
        z0 - half,
        z0 + half,
        z1 - half,
        z1 + half,
        geometry.height,
    ];
    let nominal = ((n as f64 * geometry.height / (2.0 * geometry.radius)).round() as usize).max(1);
    let step = geometry.height / nominal as f64;
    let mut levels = vec![0.0];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let cells = ((len / step).round() as usize).max(1);
        for c in 1..=cells {
            levels.push(if c == cells {
                w[1]
            } else {
                w[0] + len * c as f64 / cells as f64
            });
        }
    }
    levels
}

/// Tets of the Kuhn subdivision as corner bit patterns (x = 1, y = 2, z = 4).
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

pub fn build_tank_mesh(geometry: &TankGeometry, resolution: usize) -> Result<Mesh, MeshError> {
    geometry.validate()?;
    if resolution < MIN_RESOLUTION {
        return Err(MeshError::ResolutionTooLow(resolution));
    }
    let n = resolution;
    let wall = WallAngles::new(geometry, n);
    let zs = z_levels(geometry, n);
    let side = n + 1;
    let layer = side * side;

    let mut plane = Vec::with_capacity(layer);
    for j in 0..side {
        for i in 0..side {
            let u = -1.0 + 2.0 * i as f64 / n as f64;
            let v = -1.0 + 2.0 * j as f64 / n as f64;
            let mut p = disk_point(u, v, geometry.radius, &wall);
            // Snap wall nodes exactly onto the circle.
            if i == 0 || j == 0 || i == n || j == n {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                p = [p[0] * geometry.radius / r, p[1] * geometry.radius / r];
            }
            plane.push(p);
        }
    }
    let mut nodes = Vec::with_capacity(layer * zs.len());
    for &z in &zs {
        nodes.extend(plane.iter().map(|p| [p[0], p[1], z]));
    }

    let node = |i: usize, j: usize, k: usize| (k * layer + j * side + i) as u32;
    let nz = zs.len() - 1;
    let mut tets = Vec::with_capacity(6 * n * n * nz);
    // The subdivision is mirrored in each half of every axis. Faces on the
    // mirror planes get the same diagonal from both sides, so the mesh stays
    // conforming, and all four O-grid corner cells are cut through their
    // wall corner.
    let mirror = |c: usize, cells: usize| 2 * c + 1 > cells;
    for k in 0..nz {
        for j in 0..n {
            for i in 0..n {
                let flip = mirror(i, n) as usize
                    | (mirror(j, n) as usize) << 1
                    | (mirror(k, nz) as usize) << 2;
                let corner = |b: usize| {
                    let b = b ^ flip;
                    node(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1))
                };
                for pattern in KUHN {
                    let mut t = pattern.map(corner);
                    if signed_volume(t.map(|q| nodes[q as usize])) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }

    let mut tet_geometry = Vec::with_capacity(tets.len());
    for (idx, t) in tets.iter().enumerate() {
        let g = TetGeometry::new(t.map(|q| nodes[q as usize]));
        if !(g.volume > 0.0) {
            return Err(MeshError::Degenerate(idx));
        }
        tet_geometry.push(g);
    }

    let boundary_tris = boundary_faces(&tets);
    let mut mesh = Mesh {
        geometry: geometry.clone(),
        resolution,
        nodes,
        tets,
        boundary_tris,
        electrode_patch: Vec::new(),
        tet_geometry,
    };
    mesh.electrode_patch = electrode_patches(&mesh)?;
    Ok(mesh)
}

/// Faces used by exactly one tet, in first-seen order, oriented outward.
fn boundary_faces(tets: &[[u32; 4]]) -> Vec<[u32; 3]> {
    // Face opposite local vertex v, ordered so the normal points away from v
    // for a positively oriented tet.
    const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
    let mut seen: HashMap<[u32; 3], (usize, u32)> = HashMap::with_capacity(tets.len() * 2);
    let mut order = Vec::new();
    for t in tets {
        for f in FACES {
            let face = f.map(|l| t[l]);
            let mut key = face;
            key.sort_unstable();
            let entry = seen.entry(key).or_insert_with(|| {
                order.push(face);
                (order.len() - 1, 0)
            });
            entry.1 += 1;
        }
    }
    order
        .into_iter()
        .filter(|face| {
            let mut key = *face;
            key.sort_unstable();
            seen[&key].1 == 1
        })
        .collect()
}

fn electrode_patches(mesh: &Mesh) -> Result<Vec<Vec<usize>>, MeshError> {
    let g = &mesh.geometry;
    let r = g.radius;
    let tol = 1e-9 * r;
    let alpha = g.electrode_half_angle();
    let half_h = 0.5 * g.electrode_height;
    let mut patches = vec![Vec::new(); g.electrode_count()];
    for (idx, tri) in mesh.boundary_tris.iter().enumerate() {
        let pts = tri.map(|q| mesh.nodes[q as usize]);
        let on_wall = pts
            .iter()
            .all(|p| ((p[0] * p[0] + p[1] * p[1]).sqrt() - r).abs() < tol);
        if !on_wall {
            continue;
        }
        let c = [
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
            (pts[0][2] + pts[1][2] + pts[2][2]) / 3.0,
        ];
        let theta = c[1].atan2(c[0]);
        for (e, patch) in patches.iter_mut().enumerate() {
            if (c[2] - g.electrode_z(e)).abs() < half_h
                && wrap_angle(theta - g.electrode_angle(e)).abs() < alpha
            {
                patch.push(idx);
                break;
            }
        }
    }
    for (e, patch) in patches.iter().enumerate() {
        if patch.is_empty() {
            return Err(MeshError::EmptyElectrode {
                electrode: e,
                ring: e / g.electrodes_per_ring,
                position: e % g.electrodes_per_ring,
                resolution: mesh.resolution,
            });
        }
    }
    Ok(patches)
}
