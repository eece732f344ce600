//! Parametric desk scenes: moving boxes over a ground plane, seen by the
//! radar (sampled scatterers) and by a LiDAR (dense surface samples).

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_iso, cart_to_sph, Pose};
use crate::io::{read_f64, read_u64, read_with_magic, truncated, write_f64, write_u64};
use crate::occupancy::{LabeledSweepSequence, ObjectBox, SweepFrame};
use crate::radar::{RadarConfig, Scatterer, SceneSpec};

pub const POINTS_MAGIC: &[u8; 8] = b"ROCCLPTS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    /// Annotated, tracked object.
    Foreground,
    /// Static structure that is not annotated.
    Background,
}

/// Box in world coordinates at time zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    pub kind: ObjectKind,
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_reflectivity")]
    pub reflectivity: f64,
}

fn default_reflectivity() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub height: f64,
    pub reflectivity: f64,
    /// Spacing of radar clutter scatterers on the ground, metres.
    pub clutter_spacing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub spacing: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            spacing: 0.2,
            max_range: 15.0,
        }
    }
}

/// Scene file: a JSON document with these fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub seed: u64,
    pub n_frames: usize,
    #[serde(default = "default_dt")]
    pub frame_dt: f64,
    #[serde(default)]
    pub ego_start: Pose,
    #[serde(default)]
    pub ego_velocity: [f64; 3],
    pub ground: Option<Ground>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Spacing of radar scatterers on object faces, metres.
    #[serde(default = "default_face_spacing")]
    pub face_spacing: f64,
    #[serde(default)]
    pub lidar: LidarSpec,
}

fn default_dt() -> f64 {
    0.1
}

fn default_face_spacing() -> f64 {
    0.4
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_dt > 0.0) || !(self.face_spacing > 0.0) || !(self.lidar.spacing > 0.0) {
            return Err(Error::invalid("frame_dt and sampling spacings must be positive"));
        }
        for o in &self.objects {
            if o.size.iter().any(|&s| !(s > 0.0)) || !(o.reflectivity >= 0.0) {
                return Err(Error::invalid(format!("object {} has invalid size or reflectivity", o.id)));
            }
        }
        if let Some(g) = self.ground {
            if !(g.clutter_spacing > 0.0) || !(g.reflectivity >= 0.0) {
                return Err(Error::invalid("ground needs positive clutter spacing"));
            }
        }
        let mut ids: Vec<u64> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("object ids must be unique"));
        }
        Ok(())
    }

    pub fn ego_pose(&self, frame: usize) -> Pose {
        let t = frame as f64 * self.frame_dt;
        let mut p = self.ego_start;
        for i in 0..3 {
            p.translation[i] += self.ego_velocity[i] * t;
        }
        p
    }

    /// World pose of an object's centre at a frame.
    pub fn object_pose(&self, o: &SceneObject, frame: usize) -> Pose {
        let t = frame as f64 * self.frame_dt;
        Pose::from_xyz_yaw(std::array::from_fn(|i| o.center[i] + o.velocity[i] * t), o.yaw)
    }
}

/// Grid of points over a box face `(axis, sign)` in box-local coordinates.
fn face_samples(size: [f64; 3], axis: usize, sign: f64, spacing: f64) -> Vec<[f64; 3]> {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let nu = (size[u] / spacing).ceil().max(1.0) as usize;
    let nv = (size[v] / spacing).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let mut p = [0.0; 3];
            p[axis] = sign * size[axis] / 2.0;
            p[u] = -size[u] / 2.0 + (i as f64 + 0.5) * size[u] / nu as f64;
            p[v] = -size[v] / 2.0 + (j as f64 + 0.5) * size[v] / nv as f64;
            out.push(p);
        }
    }
    out
}

const FACES: [(usize, f64); 6] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)];

fn inside_any(p: [f64; 3], boxes: &[(Pose, [f64; 3])]) -> bool {
    boxes.iter().any(|(pose, size)| {
        let local = apply_iso(&pose.isometry().inverse(), p);
        (0..3).all(|i| local[i].abs() <= size[i] / 2.0 + 1e-9)
    })
}

/// One simulated frame: radar scatterers and the LiDAR sweep, both in the
/// sensor frame.
pub struct Frame {
    pub scene: SceneSpec,
    pub sweep: SweepFrame,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Renders frame `f`; `rng` supplies per-scatterer amplitude fluctuation.
pub fn render_frame(scene: &SceneFile, radar: &RadarConfig, f: usize, rng: &mut ChaCha8Rng) -> Frame {
    let ego = scene.ego_pose(f);
    let world_from_sensor = ego.isometry();
    let sensor_from_world = world_from_sensor.inverse();
    let ego_vel_sensor = {
        let v = sensor_from_world.rotation * nalgebra::Vector3::from(scene.ego_velocity);
        [v.x, v.y, v.z]
    };
    let boxes_world: Vec<(Pose, [f64; 3])> = scene
        .objects
        .iter()
        .map(|o| (scene.object_pose(o, f), o.size))
        .collect();
    let (v_lo, v_hi) = radar.velocity_limits();
    let az_max = radar.az_half_span_deg.to_radians();
    let el_max = radar.el_half_span_deg.to_radians();
    let in_fov = |p: [f64; 3]| match cart_to_sph(p) {
        Ok(s) => s.range < radar.max_range() && s.azimuth.abs() <= az_max && s.elevation.abs() <= el_max && p[0] > 0.0,
        Err(_) => false,
    };

    let mut scatterers = Vec::new();
    // Rayleigh-distributed amplitude fluctuation with unit mean power
    let fluct = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random::<f64>().max(1e-300);
        (-u.ln()).sqrt()
    };
    let mut push = |p_sensor: [f64; 3], vel_sensor: [f64; 3], amp: f64, rng: &mut ChaCha8Rng| {
        let a = amp * fluct(rng);
        if !in_fov(p_sensor) {
            return;
        }
        let r = dot(p_sensor, p_sensor).sqrt();
        let los = p_sensor.map(|v| v / r);
        let v = dot(vel_sensor, los);
        if v >= v_lo && v < v_hi {
            scatterers.push(Scatterer {
                position: p_sensor,
                amplitude: a,
                radial_velocity: v,
            });
        }
    };
    for (o, (pose, size)) in scene.objects.iter().zip(&boxes_world) {
        let sensor_from_box = sensor_from_world * pose.isometry();
        let rel_vel = {
            let v = sensor_from_world.rotation * nalgebra::Vector3::from(o.velocity);
            [v.x - ego_vel_sensor[0], v.y - ego_vel_sensor[1], v.z - ego_vel_sensor[2]]
        };
        for (axis, sign) in FACES {
            let mut normal = [0.0; 3];
            normal[axis] = sign;
            let n_s = sensor_from_box.rotation * nalgebra::Vector3::from(normal);
            for p in face_samples(*size, axis, sign, scene.face_spacing) {
                let ps = apply_iso(&sensor_from_box, p);
                // visible faces point back at the sensor
                if n_s.x * ps[0] + n_s.y * ps[1] + n_s.z * ps[2] < 0.0 {
                    push(ps, rel_vel, o.reflectivity, rng);
                }
            }
        }
    }
    let static_vel = ego_vel_sensor.map(|v| -v);
    if let Some(gr) = scene.ground {
        let reach = radar.max_range().min(scene.lidar.max_range);
        let n = (reach / gr.clutter_spacing).ceil() as i64;
        for i in 1..=n {
            for j in -n..=n {
                let ps = [i as f64 * gr.clutter_spacing, j as f64 * gr.clutter_spacing, 0.0];
                let pw = apply_iso(&world_from_sensor, ps);
                let pw = [pw[0], pw[1], gr.height];
                if inside_any(pw, &boxes_world) {
                    continue;
                }
                push(apply_iso(&sensor_from_world, pw), static_vel, gr.reflectivity, rng);
            }
        }
    }

    // LiDAR: dense, unoccluded, range-limited surface samples
    let lidar = scene.lidar;
    let mut points = Vec::new();
    let in_range = |p: [f64; 3]| dot(p, p).sqrt() <= lidar.max_range;
    for (pose, size) in &boxes_world {
        let sensor_from_box = sensor_from_world * pose.isometry();
        for (axis, sign) in FACES {
            for p in face_samples(*size, axis, sign, lidar.spacing) {
                let ps = apply_iso(&sensor_from_box, p);
                if in_range(ps) {
                    points.push(ps);
                }
            }
        }
    }
    if let Some(gr) = scene.ground {
        let n = (lidar.max_range / lidar.spacing).ceil() as i64;
        for i in -n..=n {
            for j in -n..=n {
                let ps = [(i as f64 + 0.5) * lidar.spacing, (j as f64 + 0.5) * lidar.spacing, 0.0];
                let pw = apply_iso(&world_from_sensor, ps);
                let pw = [pw[0], pw[1], gr.height];
                if inside_any(pw, &boxes_world) {
                    continue;
                }
                let p = apply_iso(&sensor_from_world, pw);
                if in_range(p) {
                    points.push(p);
                }
            }
        }
    }
    let boxes = scene
        .objects
        .iter()
        .zip(&boxes_world)
        .filter(|(o, _)| o.kind == ObjectKind::Foreground)
        .map(|(o, (pose, size))| {
            let iso = sensor_from_world * pose.isometry();
            let (roll, pitch, yaw) = iso.rotation.euler_angles();
            ObjectBox {
                track_id: o.id,
                pose: Pose {
                    translation: [iso.translation.x, iso.translation.y, iso.translation.z],
                    rpy: [roll, pitch, yaw],
                },
                size: *size,
            }
        })
        .collect();
    Frame {
        scene: SceneSpec {
            frame_id: f,
            ego_pose: ego,
            scatterers,
        },
        sweep: SweepFrame {
            frame_id: f,
            ego_pose: Some(ego),
            boxes,
            points,
        },
    }
}

/// Renders every frame of a scene with its seeded amplitude stream.
pub fn simulate(scene: &SceneFile, radar: &RadarConfig) -> Result<(Vec<SceneSpec>, LabeledSweepSequence)> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut specs = Vec::with_capacity(scene.n_frames);
    let mut frames = Vec::with_capacity(scene.n_frames);
    for f in 0..scene.n_frames {
        let fr = render_frame(scene, radar, f, &mut rng);
        specs.push(fr.scene);
        frames.push(fr.sweep);
    }
    Ok((specs, LabeledSweepSequence { frames }))
}

/// Random desk scene: a ground plane, a few moving foreground boxes and
/// static background structures inside the desk region.
pub fn random_scene(seed: u64, n_frames: usize) -> SceneFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
    let mut objects = Vec::new();
    let n_fg = rng.random_range(1..=3);
    let n_bg = rng.random_range(1..=3);
    let ground = -0.5;
    for id in 0..(n_fg + n_bg) {
        let fg = id < n_fg;
        let size = if fg {
            [rng.random_range(1.2..3.6), rng.random_range(0.8..1.8), rng.random_range(1.0..1.8)]
        } else {
            [rng.random_range(0.4..1.6), rng.random_range(0.4..3.0), rng.random_range(1.2..2.4)]
        };
        let x = rng.random_range(3.0..11.5);
        let y = rng.random_range(-0.45..0.45) * x;
        let speed = if fg { rng.random_range(-1.5..1.5) } else { 0.0 };
        let heading: f64 = rng.random_range(0.0..2.0 * PI);
        objects.push(SceneObject {
            id: id as u64 + 1,
            kind: if fg { ObjectKind::Foreground } else { ObjectKind::Background },
            center: [x, y.clamp(-5.5, 5.5), ground + size[2] / 2.0],
            size,
            yaw: if fg { heading } else { 0.0 },
            velocity: [speed * heading.cos(), speed * heading.sin(), 0.0],
            reflectivity: rng.random_range(0.03..0.08),
        });
    }
    SceneFile {
        seed,
        n_frames,
        frame_dt: 0.2,
        ego_start: Pose::default(),
        ego_velocity: [rng.random_range(0.0..1.0), 0.0, 0.0],
        ground: Some(Ground {
            height: ground,
            reflectivity: 0.004,
            clutter_spacing: 0.8,
        }),
        objects,
        face_spacing: 0.4,
        lidar: LidarSpec::default(),
    }
}

/// `ROCCLPTS`, `u64 N`, then `N` xyz triples as `f64`.
pub fn save_points(path: &Path, points: &[[f64; 3]]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(POINTS_MAGIC)?;
    write_u64(&mut f, points.len() as u64)?;
    for p in points {
        for &v in p {
            write_f64(&mut f, v)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_points(path: &Path) -> Result<Vec<[f64; 3]>> {
    let bytes = read_with_magic(path, POINTS_MAGIC)?;
    let mut cur = bytes.as_slice();
    let err = truncated(path);
    let n = read_u64(&mut cur).map_err(&err)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = read_f64(&mut cur).map_err(&err)?;
        }
        out.push(p);
    }
    Ok(out)
}
