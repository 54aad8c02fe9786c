//! Tabletop scenes built from boxes and cylinders, and ray casting against them.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unit_quaternion, RigidTransform};

/// Objects whose footprints come within this distance (m) count as touching.
pub const CONTACT_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    /// Full edge lengths along the object's x, y, z axes.
    Box { size: [f64; 3] },
    /// Axis along the object's z axis.
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub fn height(&self) -> f64 {
        match *self {
            Shape::Box { size } => size[2],
            Shape::Cylinder { height, .. } => height,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { size } => size.iter().all(|s| *s > 0.0 && s.is_finite()),
            Shape::Cylinder { radius, height } => {
                radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input("shape dimensions must be positive"))
        }
    }

    /// Outward surface normal at (or nearest to) an object-frame point.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Shape::Box { size } => {
                let axis = (0..3)
                    .max_by(|&a, &b| (p[a].abs() / size[a]).total_cmp(&(p[b].abs() / size[b])))
                    .unwrap_or(0);
                let mut n = Vector3::zeros();
                n[axis] = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
                n
            }
            Shape::Cylinder { radius, height } => {
                let radial = Vector2::new(p.x, p.y);
                if p.z.abs() / (height / 2.0) >= radial.norm() / radius {
                    Vector3::new(0.0, 0.0, p.z.signum())
                } else {
                    let r = radial.normalize();
                    Vector3::new(r.x, r.y, 0.0)
                }
            }
        }
    }

    /// Entry distance along a ray in the object frame, if it hits.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Box { size } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    let h = size[i] / 2.0;
                    if d[i] == 0.0 {
                        if o[i].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h - o[i]) / d[i];
                    let b = (h - o[i]) / d[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Shape::Cylinder { radius, height } => {
                let h = height / 2.0;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > 0.0 && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = d.x * d.x + d.y * d.y;
                if a > 0.0 {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        if (o.z + t * d.z).abs() <= h {
                            consider(t);
                        }
                    }
                }
                if d.z != 0.0 {
                    for cap in [-h, h] {
                        let t = (cap - o.z) / d.z;
                        let x = o.x + t * d.x;
                        let y = o.y + t * d.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Points on the footprint outline in the object frame (z = 0).
    fn outline(&self, n: usize) -> Vec<Vector2<f64>> {
        match *self {
            Shape::Box { size } => {
                let (hx, hy) = (size[0] / 2.0, size[1] / 2.0);
                let per_side = n.div_ceil(4).max(1);
                let corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)];
                (0..4)
                    .flat_map(|s| {
                        let (a, b) = (corners[s], corners[(s + 1) % 4]);
                        (0..per_side).map(move |k| {
                            let f = k as f64 / per_side as f64;
                            Vector2::new(a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
                        })
                    })
                    .collect()
            }
            Shape::Cylinder { radius, .. } => (0..n)
                .map(|k| {
                    let a = TAU * k as f64 / n as f64;
                    Vector2::new(radius * a.cos(), radius * a.sin())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrangement {
    #[default]
    Free,
    Touching,
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u8,
    pub epc: String,
    pub shape: Shape,
    /// World position of the shape's center, meters.
    pub position: [f64; 3],
    /// World orientation as a unit quaternion `[w, x, y, z]`.
    #[serde(default = "identity_wxyz")]
    pub orientation: [f64; 4],
    /// Tag location in the object frame, meters.
    pub tag: [f64; 3],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl SceneObject {
    /// Object-to-world transform. The orientation is renormalized.
    pub fn transform(&self) -> RigidTransform {
        let [w, x, y, z] = self.orientation;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        RigidTransform::new(q, Vector3::from(self.position))
    }

    pub fn tag_world(&self) -> Vector3<f64> {
        self.transform().apply(&Vector3::from(self.tag))
    }

    pub fn tag_normal_world(&self) -> Vector3<f64> {
        self.transform().rotation * self.shape.normal_at(&Vector3::from(self.tag))
    }

    fn base_z(&self) -> f64 {
        self.position[2] - self.shape.height() / 2.0
    }

    fn footprint(&self, n: usize) -> Vec<Vector2<f64>> {
        let t = self.transform();
        self.shape
            .outline(n)
            .iter()
            .map(|p| {
                let w = t.apply(&Vector3::new(p.x, p.y, 0.0));
                Vector2::new(w.x, w.y)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub arrangement: Arrangement,
    /// World z of the table top, meters.
    #[serde(default)]
    pub table_height: f64,
}

/// Half-width of the square table around the world origin, meters.
pub const TABLE_HALF_WIDTH: f64 = 0.6;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::input("scene has no objects"));
        }
        let mut ids = BTreeSet::new();
        let mut epcs = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 {
                return Err(Error::input("object id 0 is reserved for background"));
            }
            if !ids.insert(o.id) {
                return Err(Error::input(format!("duplicate object id {}", o.id)));
            }
            if o.epc.is_empty() || !epcs.insert(o.epc.as_str()) {
                return Err(Error::input(format!("missing or duplicate epc {:?}", o.epc)));
            }
            o.shape.validate()?;
            unit_quaternion(o.orientation, 1e-6)?;
            if o.position.iter().chain(&o.tag).any(|v| !v.is_finite()) {
                return Err(Error::input(format!("object {} has a non-finite coordinate", o.id)));
            }
        }
        Ok(())
    }

    pub fn instance_to_epc(&self) -> BTreeMap<u8, String> {
        self.objects.iter().map(|o| (o.id, o.epc.clone())).collect()
    }

    /// Mean object position, the default camera target.
    pub fn center(&self) -> Vector3<f64> {
        let sum = self
            .objects
            .iter()
            .fold(Vector3::zeros(), |a, o| a + Vector3::from(o.position));
        sum / self.objects.len() as f64
    }

    /// Pairs `(a, b)` with `a < b` resting on the same surface with touching
    /// footprints. These are the pairs a segmenter tends to fuse.
    pub fn laterally_adjacent_pairs(&self) -> BTreeSet<(u8, u8)> {
        let outlines: Vec<_> = self.objects.iter().map(|o| o.footprint(256)).collect();
        let mut pairs = BTreeSet::new();
        for i in 0..self.objects.len() {
            for j in i + 1..self.objects.len() {
                let (a, b) = (&self.objects[i], &self.objects[j]);
                if (a.base_z() - b.base_z()).abs() > 1e-3 {
                    continue;
                }
                let gap = outlines[i]
                    .iter()
                    .flat_map(|p| outlines[j].iter().map(move |q| (p - q).norm()))
                    .fold(f64::INFINITY, f64::min);
                if gap <= CONTACT_TOLERANCE {
                    pairs.insert((a.id.min(b.id), a.id.max(b.id)));
                }
            }
        }
        pairs
    }
}

/// Nearest hit of a world-frame ray: `(distance along d, object id or 0 for the table)`.
pub(crate) struct SceneCaster {
    objects: Vec<(u8, Shape, RigidTransform, Vector3<f64>, f64)>,
    table_height: f64,
}

impl SceneCaster {
    pub(crate) fn new(scene: &SceneSpec) -> Self {
        let objects = scene
            .objects
            .iter()
            .map(|o| {
                let t = o.transform();
                let bound = match o.shape {
                    Shape::Box { size } => Vector3::from(size).norm() / 2.0,
                    Shape::Cylinder { radius, height } => (radius * radius + height * height / 4.0).sqrt(),
                };
                (o.id, o.shape, t.inverse(), t.translation, bound)
            })
            .collect();
        SceneCaster {
            objects,
            table_height: scene.table_height,
        }
    }

    pub(crate) fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, u8)> {
        let mut best: Option<(f64, u8)> = None;
        let dd = d.norm_squared();
        for (id, shape, inv, center, bound) in &self.objects {
            // Bounding-sphere rejection.
            let oc = center - o;
            let along = oc.dot(d) / dd;
            if (oc - d * along).norm_squared() > bound * bound {
                continue;
            }
            let lo = inv.apply(o);
            let ld = inv.rotation * d;
            if let Some(t) = shape.intersect(&lo, &ld) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, *id));
                }
            }
        }
        if d.z < 0.0 {
            let t = (self.table_height - o.z) / d.z;
            let hit = o + d * t;
            if t > 0.0
                && hit.x.abs() <= TABLE_HALF_WIDTH
                && hit.y.abs() <= TABLE_HALF_WIDTH
                && best.is_none_or(|(bt, _)| t < bt)
            {
                best = Some((t, 0));
            }
        }
        best
    }
}

fn random_shape(rng: &mut ChaCha8Rng, box_only: bool) -> Shape {
    if box_only || rng.random_bool(0.75) {
        Shape::Box {
            size: [
                rng.random_range(0.05..0.09),
                rng.random_range(0.05..0.09),
                rng.random_range(0.06..0.12),
            ],
        }
    } else {
        Shape::Cylinder {
            radius: rng.random_range(0.025..0.04),
            height: rng.random_range(0.06..0.12),
        }
    }
}

/// A tag point on one of the shape's side faces, in the object frame.
fn random_tag(rng: &mut ChaCha8Rng, shape: &Shape) -> [f64; 3] {
    match *shape {
        Shape::Box { size } => {
            let axis = rng.random_range(0..2usize);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let other = 1 - axis;
            let mut p = [0.0; 3];
            p[axis] = sign * size[axis] / 2.0;
            p[other] = rng.random_range(-0.25..0.25) * size[other];
            p[2] = rng.random_range(-0.25..0.25) * size[2];
            p
        }
        Shape::Cylinder { radius, height } => {
            let a = rng.random_range(0.0..TAU);
            [
                radius * a.cos(),
                radius * a.sin(),
                rng.random_range(-0.25..0.25) * height,
            ]
        }
    }
}

fn footprint_radius(shape: &Shape) -> f64 {
    match *shape {
        Shape::Box { size } => (size[0] * size[0] + size[1] * size[1]).sqrt() / 2.0,
        Shape::Cylinder { radius, .. } => radius,
    }
}

fn yaw(angle: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
    [q.w, q.i, q.j, q.k]
}

/// Places `radii.len()` discs in a square of half-width `half` with at least
/// `gap` between their edges.
fn scatter(rng: &mut ChaCha8Rng, radii: &[f64], half: f64, gap: f64) -> Vec<Vector2<f64>> {
    'attempt: loop {
        let mut placed: Vec<Vector2<f64>> = Vec::new();
        for (i, r) in radii.iter().enumerate() {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 500 {
                    continue 'attempt;
                }
                let c = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
                if placed.iter().zip(radii).all(|(p, rp)| (p - c).norm() >= r + rp + gap) {
                    placed.push(c);
                    break;
                }
            }
            debug_assert_eq!(placed.len(), i + 1);
        }
        return placed;
    }
}

fn epc_for(rng: &mut ChaCha8Rng) -> String {
    format!("E28011606000{:012X}", rng.random::<u64>() & 0xFFFF_FFFF_FFFF)
}

/// Random scene of `n` objects (1..=8) in the given arrangement.
///
/// Free objects keep at least 8 cm between footprints. Touching objects stand
/// in a row with faces in contact. Stacked scenes pair objects into stacks of
/// two, the upper object shifted a couple of centimeters off the lower one's
/// center.
pub fn generate_scene(arrangement: Arrangement, n: usize, seed: u64) -> Result<SceneSpec> {
    if !(1..=8).contains(&n) {
        return Err(Error::input(format!(
            "scene generator supports 1 to 8 objects, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epcs = BTreeSet::new();
    while epcs.len() < n {
        epcs.insert(epc_for(&mut rng));
    }
    let mut epcs: Vec<String> = epcs.into_iter().collect();
    // Sorted order would correlate EPC with id; shuffle it away.
    for i in (1..epcs.len()).rev() {
        let j = rng.random_range(0..=i);
        epcs.swap(i, j);
    }

    let mut objects = Vec::with_capacity(n);
    match arrangement {
        Arrangement::Free => {
            let shapes: Vec<Shape> = (0..n).map(|_| random_shape(&mut rng, false)).collect();
            let radii: Vec<f64> = shapes.iter().map(footprint_radius).collect();
            let centers = scatter(&mut rng, &radii, 0.2, 0.08);
            for (i, (shape, c)) in shapes.into_iter().zip(centers).enumerate() {
                let tag = random_tag(&mut rng, &shape);
                objects.push(SceneObject {
                    id: i as u8 + 1,
                    epc: epcs[i].clone(),
                    position: [c.x, c.y, shape.height() / 2.0],
                    orientation: yaw(rng.random_range(0.0..PI)),
                    tag,
                    shape,
                });
            }
        }
        Arrangement::Touching => {
            let row_yaw = rng.random_range(0.0..PI);
            let dir = Vector2::new(row_yaw.cos(), row_yaw.sin());
            let shapes: Vec<Shape> = (0..n).map(|_| random_shape(&mut rng, false)).collect();
            // Extent of each shape along the row direction (object x axis).
            let extent: Vec<f64> = shapes
                .iter()
                .map(|s| match *s {
                    Shape::Box { size } => size[0] / 2.0,
                    Shape::Cylinder { radius, .. } => radius,
                })
                .collect();
            let total: f64 = extent.iter().map(|e| 2.0 * e).sum();
            let mut cursor = -total / 2.0;
            for (i, shape) in shapes.into_iter().enumerate() {
                let along = cursor + extent[i];
                cursor += 2.0 * extent[i];
                let c = dir * along;
                let tag = random_tag(&mut rng, &shape);
                objects.push(SceneObject {
                    id: i as u8 + 1,
                    epc: epcs[i].clone(),
                    position: [c.x, c.y, shape.height() / 2.0],
                    orientation: yaw(row_yaw),
                    tag,
                    shape,
                });
            }
        }
        Arrangement::Stacked => {
            let stacks = n.div_ceil(2);
            let mut columns: Vec<Vec<Shape>> = (0..stacks)
                .map(|s| {
                    let tall = if 2 * s + 1 < n { 2 } else { 1 };
                    (0..tall)
                        .map(|level| random_shape(&mut rng, level == 0 && tall == 2))
                        .collect()
                })
                .collect();
            let radii: Vec<f64> = columns.iter().map(|c| footprint_radius(&c[0]) + 0.02).collect();
            let centers = scatter(&mut rng, &radii, 0.15, 0.08);
            let mut id = 0u8;
            for (column, c) in columns.iter_mut().zip(centers) {
                let angle = rng.random_range(0.0..PI);
                let mut base = 0.0;
                for (level, shape) in column.iter().enumerate() {
                    let shift = if level == 0 {
                        Vector2::zeros()
                    } else {
                        let a = rng.random_range(0.0..TAU);
                        Vector2::new(a.cos(), a.sin()) * rng.random_range(0.01..0.02)
                    };
                    let tag = random_tag(&mut rng, shape);
                    objects.push(SceneObject {
                        id: id + 1,
                        epc: epcs[id as usize].clone(),
                        position: [c.x + shift.x, c.y + shift.y, base + shape.height() / 2.0],
                        orientation: yaw(angle),
                        tag,
                        shape: *shape,
                    });
                    base += shape.height();
                    id += 1;
                }
            }
        }
    }
    let scene = SceneSpec {
        objects,
        arrangement,
        table_height: 0.0,
    };
    scene.validate()?;
    Ok(scene)
}
