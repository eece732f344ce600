use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{OccupancyGrid, BACKGROUND, FOREGROUND};
use crate::error::{Error, Result};
use crate::geometry::{apply_iso, GridSpec, Pose};

/// Annotated object box; `pose` places the box centre in the sensor frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub track_id: u64,
    pub pose: Pose,
    pub size: [f64; 3],
}

impl ObjectBox {
    fn contains_local(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i].abs() <= self.size[i] / 2.0)
    }
}

/// One LiDAR sweep with points in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepFrame {
    pub frame_id: usize,
    /// Sensor-to-world transform.
    pub ego_pose: Option<Pose>,
    pub boxes: Vec<ObjectBox>,
    #[serde(skip)]
    pub points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSweepSequence {
    pub frames: Vec<SweepFrame>,
}

/// Aggregates every sweep of the sequence into the target frame and votes
/// per voxel. Static points accumulate in world coordinates; points inside
/// a box travel with its track id and are re-posed at the target frame's
/// box (tracks absent from the target frame are dropped). Only the front
/// half (`x > 0`) of each sweep contributes. Ties go to foreground.
pub fn build_gt(seq: &LabeledSweepSequence, target_frame: usize, g: &GridSpec) -> Result<OccupancyGrid> {
    let mut world_from = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        match f.ego_pose {
            Some(p) if p.is_valid() => world_from.push(p.isometry()),
            _ => return Err(Error::MissingPose(f.frame_id)),
        }
    }
    let t = seq
        .frames
        .iter()
        .position(|f| f.frame_id == target_frame)
        .ok_or_else(|| Error::invalid(format!("frame {target_frame} not in sequence")))?;
    let target_from_world = world_from[t].inverse();

    let mut background: Vec<[f64; 3]> = Vec::new();
    let mut objects: BTreeMap<u64, Vec<[f64; 3]>> = BTreeMap::new();
    for (f, frame) in seq.frames.iter().enumerate() {
        let box_from_sensor: Vec<_> = frame.boxes.iter().map(|b| b.pose.isometry().inverse()).collect();
        for &p in frame.points.iter().filter(|p| p[0] > 0.0) {
            let hit = frame.boxes.iter().zip(&box_from_sensor).find_map(|(b, inv)| {
                let local = apply_iso(inv, p);
                b.contains_local(local).then_some((b.track_id, local))
            });
            match hit {
                Some((id, local)) => objects.entry(id).or_default().push(local),
                None => background.push(apply_iso(&world_from[f], p)),
            }
        }
    }

    let mut grid = OccupancyGrid::free(*g)?;
    let n = grid.len();
    let mut votes = vec![[0u32; 2]; n];
    let mut vote = |p: [f64; 3], class: usize| {
        if let Some((ix, iy, iz)) = g.voxel_of(p) {
            votes[g.index(ix, iy, iz)][class] += 1;
        }
    };
    for &p in &background {
        vote(apply_iso(&target_from_world, p), 0);
    }
    for b in &seq.frames[t].boxes {
        let iso = b.pose.isometry();
        for &p in objects.get(&b.track_id).into_iter().flatten() {
            vote(apply_iso(&iso, p), 1);
        }
    }
    for (i, [bg, fg]) in votes.into_iter().enumerate() {
        if fg > 0 && fg >= bg {
            grid.labels[i] = FOREGROUND;
        } else if bg > 0 {
            grid.labels[i] = BACKGROUND;
        }
    }
    Ok(grid)
}
