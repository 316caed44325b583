//! Random multi-inclusion phantoms, their voxel rasterization and their
//! element-wise conductivity.

use crate::forward::ConductivityField;
use crate::geometry::TankGeometry;
use crate::mesh::Mesh;
use crate::seed;
use crate::voxel::{voxel_center, VoxelMap, VoxelVolume};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_CONTRAST_SCALE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("no admissible phantom for {category} after {retries} attempts")]
    RetriesExhausted { category: Category, retries: usize },
    #[error("element {element} would get conductivity {value}; must stay positive")]
    NonPositiveConductivity { element: usize, value: f64 },
    #[error("unknown category {0:?}; expected 2obj-, 2obj+-, 3obj- or 3obj+-")]
    UnknownCategory(String),
    #[error("invalid phantom configuration: {0}")]
    Config(String),
}

/// Object count and sign rule of a phantom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "2obj-")]
    TwoNegative,
    #[serde(rename = "2obj+-")]
    TwoMixed,
    #[serde(rename = "3obj-")]
    ThreeNegative,
    #[serde(rename = "3obj+-")]
    ThreeMixed,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::TwoNegative,
        Category::TwoMixed,
        Category::ThreeNegative,
        Category::ThreeMixed,
    ];

    pub fn object_count(self) -> usize {
        match self {
            Category::TwoNegative | Category::TwoMixed => 2,
            Category::ThreeNegative | Category::ThreeMixed => 3,
        }
    }

    pub fn mixed(self) -> bool {
        matches!(self, Category::TwoMixed | Category::ThreeMixed)
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::TwoNegative => "2obj-",
            Category::TwoMixed => "2obj+-",
            Category::ThreeNegative => "3obj-",
            Category::ThreeMixed => "3obj+-",
        }
    }

    /// Whether the contrasts obey this category's sign rule.
    pub fn admits(self, contrasts: &[f64]) -> bool {
        contrasts.len() == self.object_count()
            && if self.mixed() {
                contrasts.iter().any(|c| *c > 0.0) && contrasts.iter().any(|c| *c < 0.0)
            } else {
                contrasts.iter().all(|c| *c < 0.0)
            }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = PhantomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| PhantomError::UnknownCategory(s.to_string()))
    }
}

/// Shape with its dimensions in metres, in the object's local frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Cuboid { half_extents: [f64; 3] },
    VerticalCylinder { radius: f64, half_height: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
}

impl Shape {
    fn contains_local(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Sphere { radius } => p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= radius * radius,
            Shape::Cuboid { half_extents: h } => (0..3).all(|a| p[a].abs() <= h[a]),
            Shape::VerticalCylinder { radius, half_height } => {
                p[0] * p[0] + p[1] * p[1] <= radius * radius && p[2].abs() <= half_height
            }
            Shape::Ellipsoid { semi_axes: s } => {
                (0..3).map(|a| (p[a] / s[a]).powi(2)).sum::<f64>() <= 1.0
            }
        }
    }

    /// Radius of a vertical cylinder about the object axis enclosing it.
    fn horizontal_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } | Shape::VerticalCylinder { radius, .. } => radius,
            Shape::Cuboid { half_extents: h } => h[0].hypot(h[1]),
            Shape::Ellipsoid { semi_axes: s } => s[0].max(s[1]),
        }
    }

    fn vertical_half_extent(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { half_extents: h } => h[2],
            Shape::VerticalCylinder { half_height, .. } => half_height,
            Shape::Ellipsoid { semi_axes: s } => s[2],
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { half_extents: h } => (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt(),
            Shape::VerticalCylinder { radius, half_height } => radius.hypot(half_height),
            Shape::Ellipsoid { semi_axes: s } => s[0].max(s[1]).max(s[2]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomObject {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Rotation about the vertical axis, radians.
    pub rotation: f64,
    pub contrast: f64,
}

impl PhantomObject {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let (s, c) = self.rotation.sin_cos();
        // rotate by -rotation into the local frame
        let local = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
        self.shape.contains_local(local)
    }

    /// Whether the object stays `margin` away from the tank's wall, floor
    /// and lid.
    pub fn inside_tank(&self, geometry: &TankGeometry, margin: f64) -> bool {
        let radial = self.center[0].hypot(self.center[1]);
        let vz = self.shape.vertical_half_extent();
        radial + self.shape.horizontal_radius() <= geometry.radius - margin
            && self.center[2] - vz >= margin
            && self.center[2] + vz <= geometry.height - margin
    }

    fn separated_from(&self, other: &PhantomObject) -> bool {
        let d = (0..3)
            .map(|a| (self.center[a] - other.center[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        d > self.shape.bounding_radius() + other.shape.bounding_radius()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub category: Category,
    pub objects: Vec<PhantomObject>,
}

impl Phantom {
    /// Contrast at a point; later objects win where objects overlap.
    pub fn contrast_at(&self, p: [f64; 3]) -> f64 {
        self.objects
            .iter()
            .rev()
            .find(|o| o.contains(p))
            .map_or(0.0, |o| o.contrast)
    }
}

/// Sampling ranges, all relative to the tank radius where lengths are
/// concerned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Characteristic object radius range, fraction of tank radius.
    pub size_range: [f64; 2],
    /// Per-axis stretch applied to the characteristic radius.
    pub aspect_range: [f64; 2],
    /// Range of `|contrast|`.
    pub contrast_range: [f64; 2],
    /// Clearance to the tank boundary, fraction of tank radius.
    pub margin_fraction: f64,
    pub max_retries: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size_range: [0.08, 0.25],
            aspect_range: [0.6, 1.4],
            contrast_range: [0.2, 1.0],
            margin_fraction: 0.05,
            max_retries: 1000,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1];
        if !ordered(self.size_range) || !ordered(self.aspect_range) {
            return Err(PhantomError::Config("size and aspect ranges must be positive and ordered".into()));
        }
        if !(ordered(self.contrast_range) && self.contrast_range[1] <= 1.0) {
            return Err(PhantomError::Config("contrast range must lie in (0, 1]".into()));
        }
        if !(self.margin_fraction >= 0.0 && self.margin_fraction < 1.0) {
            return Err(PhantomError::Config("margin fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut seed::Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn sample_object(rng: &mut seed::Rng, geometry: &TankGeometry, cfg: &PhantomConfig, margin: f64) -> Option<PhantomObject> {
    let r = geometry.radius;
    let rho = uniform(rng, cfg.size_range) * r;
    let kind = rng.random_range(0..4u32);
    let mut stretch = || rho * uniform(rng, cfg.aspect_range);
    let shape = match kind {
        0 => Shape::Sphere { radius: rho },
        1 => Shape::Cuboid {
            half_extents: [stretch(), stretch(), stretch()],
        },
        2 => Shape::VerticalCylinder {
            radius: stretch(),
            half_height: stretch(),
        },
        _ => Shape::Ellipsoid {
            semi_axes: [stretch(), stretch(), stretch()],
        },
    };
    let rotation = rng.random_range(0.0..PI);
    let max_radial = r - margin - shape.horizontal_radius();
    let vz = shape.vertical_half_extent();
    let (z_lo, z_hi) = (margin + vz, geometry.height - margin - vz);
    if max_radial < 0.0 || z_hi < z_lo {
        return None;
    }
    // uniform over the admissible disk
    let rad = max_radial * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..2.0 * PI);
    let z = z_lo + (z_hi - z_lo) * rng.random::<f64>();
    let magnitude = uniform(rng, cfg.contrast_range);
    Some(PhantomObject {
        shape,
        center: [rad * phi.cos(), rad * phi.sin(), z],
        rotation,
        contrast: -magnitude,
    })
}

/// Draws a phantom of `category`. The same `(category, seed)` always gives
/// the same phantom.
pub fn sample_phantom(
    category: Category,
    seed: u64,
    geometry: &TankGeometry,
    cfg: &PhantomConfig,
) -> Result<Phantom, PhantomError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let margin = cfg.margin_fraction * geometry.radius;
    let count = category.object_count();
    let mut objects: Vec<PhantomObject> = Vec::with_capacity(count);
    let mut attempts = 0;
    while objects.len() < count {
        if attempts >= cfg.max_retries {
            return Err(PhantomError::RetriesExhausted {
                category,
                retries: cfg.max_retries,
            });
        }
        attempts += 1;
        let Some(obj) = sample_object(&mut rng, geometry, cfg, margin) else {
            continue;
        };
        if obj.inside_tank(geometry, margin) && objects.iter().all(|o| o.separated_from(&obj)) {
            objects.push(obj);
        }
    }
    if category.mixed() {
        for o in objects.iter_mut() {
            if rng.random::<bool>() {
                o.contrast = -o.contrast;
            }
        }
        let contrasts: Vec<f64> = objects.iter().map(|o| o.contrast).collect();
        if !category.admits(&contrasts) {
            let last = objects.last_mut().expect("at least two objects");
            last.contrast = -last.contrast;
        }
    }
    Ok(Phantom { category, objects })
}

/// Voxel ground truth: each inside voxel takes the contrast of the object
/// containing its centre.
pub fn rasterize_phantom(phantom: &Phantom, vmap: &VoxelMap) -> VoxelVolume {
    let mut vol = VoxelVolume::zeros();
    for &lin in &vmap.inside_voxels {
        vol.data[lin] = phantom.contrast_at(voxel_center(&vmap.geometry, lin)) as f32;
    }
    vol
}

/// Element conductivities: `background + contrast · contrast_scale` for
/// elements whose centroid lies in an object.
pub fn embed_in_mesh(
    phantom: &Phantom,
    mesh: &Mesh,
    background_sigma: f64,
    contrast_scale: f64,
) -> Result<ConductivityField, PhantomError> {
    let mut field = ConductivityField::homogeneous(mesh.tet_count(), background_sigma);
    for (t, s) in field.per_element.iter_mut().enumerate() {
        let c = phantom.contrast_at(mesh.tet_centroid(t));
        if c != 0.0 {
            *s = background_sigma + c * contrast_scale;
        }
        if !(s.is_finite() && *s > 0.0) {
            return Err(PhantomError::NonPositiveConductivity { element: t, value: *s });
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_tank_mesh;
    use crate::voxel::{build_voxel_map, voxel_index, voxel_size};
    use std::sync::OnceLock;

    fn geometry() -> TankGeometry {
        TankGeometry::default()
    }

    fn fixture() -> &'static (Mesh, VoxelMap) {
        static F: OnceLock<(Mesh, VoxelMap)> = OnceLock::new();
        F.get_or_init(|| {
            let mesh = build_tank_mesh(&geometry(), 8).unwrap();
            let vmap = build_voxel_map(&mesh, &geometry());
            (mesh, vmap)
        })
    }

    #[test]
    fn category_rules_hold() {
        let cfg = PhantomConfig::default();
        for cat in Category::ALL {
            for s in 0..200 {
                let p = sample_phantom(cat, s, &geometry(), &cfg).unwrap();
                assert_eq!(p.objects.len(), cat.object_count());
                let c: Vec<f64> = p.objects.iter().map(|o| o.contrast).collect();
                assert!(cat.admits(&c), "{cat} seed {s}: {c:?}");
                for o in &p.objects {
                    assert!((0.2..=1.0).contains(&o.contrast.abs()));
                    assert!(o.inside_tank(&geometry(), 0.05 * geometry().radius));
                }
                for a in 0..p.objects.len() {
                    for b in 0..a {
                        assert!(p.objects[a].separated_from(&p.objects[b]));
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = PhantomConfig::default();
        let a = sample_phantom(Category::ThreeMixed, 99, &geometry(), &cfg).unwrap();
        let b = sample_phantom(Category::ThreeMixed, 99, &geometry(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_phantom(Category::ThreeMixed, 100, &geometry(), &cfg).unwrap());
    }

    #[test]
    fn impossible_sizes_exhaust_retries() {
        let cfg = PhantomConfig {
            size_range: [2.0, 3.0],
            max_retries: 50,
            ..PhantomConfig::default()
        };
        assert_eq!(
            sample_phantom(Category::TwoNegative, 1, &geometry(), &cfg),
            Err(PhantomError::RetriesExhausted {
                category: Category::TwoNegative,
                retries: 50
            })
        );
    }

    #[test]
    fn category_labels_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.label().parse::<Category>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.label()));
        }
        assert!("4obj".parse::<Category>().is_err());
    }

    #[test]
    fn rotated_cuboid_containment() {
        let o = PhantomObject {
            shape: Shape::Cuboid {
                half_extents: [0.02, 0.005, 0.01],
            },
            center: [0.0, 0.0, 0.15],
            rotation: PI / 2.0,
            contrast: -0.5,
        };
        // the long axis now points along y
        assert!(o.contains([0.0, 0.015, 0.15]));
        assert!(!o.contains([0.015, 0.0, 0.15]));
    }

    fn centred_sphere(radius: f64) -> Phantom {
        let g = geometry();
        let s = voxel_size(&g);
        // centre of voxel (16, 16, 20)
        let c = [0.5 * s[0], 0.5 * s[1], 20.5 * s[2]];
        Phantom {
            category: Category::TwoNegative,
            objects: vec![PhantomObject {
                shape: Shape::Sphere { radius },
                center: c,
                rotation: 0.0,
                contrast: -0.5,
            }],
        }
    }

    #[test]
    fn rasterized_centre_and_far_field() {
        let (_, vmap) = fixture();
        let s = voxel_size(&geometry());
        let vol = rasterize_phantom(&centred_sphere(2.0 * s[0]), vmap);
        assert_eq!(vol.get(16, 16, 20), -0.5);
        assert_eq!(vol.get(16, 16, 2), 0.0);
        assert!(vol.is_valid());
    }

    #[test]
    fn rasterized_sphere_volume() {
        let (_, vmap) = fixture();
        let s = voxel_size(&geometry());
        let vv = s[0] * s[1] * s[2];
        for cells in [3.0, 4.0, 5.0] {
            let r = cells * s[0];
            let vol = rasterize_phantom(&centred_sphere(r), vmap);
            let count = vol.data.iter().filter(|v| **v != 0.0).count() as f64;
            let expected = 4.0 / 3.0 * PI * r.powi(3) / vv;
            assert!((count / expected - 1.0).abs() < 0.2, "{count} vs {expected}");
        }
    }

    #[test]
    fn embedding_arithmetic_and_positivity() {
        let (mesh, _) = fixture();
        let mut p = centred_sphere(0.03);
        p.objects[0].contrast = -1.0;
        let f = embed_in_mesh(&p, mesh, 1.0, 0.5).unwrap();
        assert!(f.per_element.contains(&0.5));
        assert!(f.per_element.iter().all(|s| *s == 0.5 || *s == 1.0));
        assert!(matches!(
            embed_in_mesh(&p, mesh, 1.0, 1.0),
            Err(PhantomError::NonPositiveConductivity { .. })
        ));
        let tiny = centred_sphere(1e-6);
        let f = embed_in_mesh(&tiny, mesh, 1.0, 0.5).unwrap();
        assert!(f.per_element.iter().all(|s| *s == 1.0));
    }

    #[test]
    fn voxel_lookup_of_centre_sphere_hits_an_inclusion_element() {
        let (mesh, vmap) = fixture();
        let p = centred_sphere(0.03);
        let f = embed_in_mesh(&p, mesh, 1.0, 0.5).unwrap();
        let t = vmap.tet_of_voxel[voxel_index(16, 16, 20)].unwrap() as usize;
        assert_ne!(f.per_element[t], 1.0);
    }
}
