//! Binary morphology on voxel grids: connected components, erosion and
//! dilation with the 6-connected cross, and component volumes.
//!
//! Everything here works in voxel space; anisotropic spacing only enters
//! through the mm³ volumes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::volume::{Geometry, LesionMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_l1 = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    if l1 > 0 && l1 <= max_l1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

/// Connected-component labeling of a mask.
///
/// `labels` is 0 for background and `1..=C` for components, numbered in
/// order of each component's first voxel in linear (x-fastest) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    geom: Geometry,
    labels: Vec<u32>,
    voxel_counts: Vec<usize>,
}

impl ComponentMap {
    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_components(&self) -> usize {
        self.voxel_counts.len()
    }

    /// Voxel count of component `id` (1-based).
    pub fn voxel_count(&self, id: u32) -> usize {
        self.voxel_counts[id as usize - 1]
    }

    pub fn volumes_mm3(&self) -> Vec<f64> {
        let vv = self.geom.voxel_volume_mm3();
        self.voxel_counts.iter().map(|&c| c as f64 * vv).collect()
    }

    pub fn volume_mm3(&self, id: u32) -> f64 {
        self.voxel_count(id) as f64 * self.geom.voxel_volume_mm3()
    }

    pub fn component_mask(&self, id: u32) -> LesionMask {
        Volume::new(self.geom.clone(), self.labels.iter().map(|&l| l == id).collect()).expect("same grid")
    }

    pub fn foreground(&self) -> LesionMask {
        Volume::new(self.geom.clone(), self.labels.iter().map(|&l| l != 0).collect()).expect("same grid")
    }

    /// Linear voxel indices of every component, in component order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.voxel_counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }

    /// Keep the components for which `keep(id)` holds, renumbering the
    /// survivors `1..` in their original order.
    pub fn retain(&self, mut keep: impl FnMut(u32) -> bool) -> ComponentMap {
        let mut remap = vec![0u32; self.n_components() + 1];
        let mut counts = Vec::new();
        for id in 1..=self.n_components() as u32 {
            if keep(id) {
                counts.push(self.voxel_count(id));
                remap[id as usize] = counts.len() as u32;
            }
        }
        ComponentMap {
            geom: self.geom.clone(),
            labels: self.labels.iter().map(|&l| remap[l as usize]).collect(),
            voxel_counts: counts,
        }
    }
}

pub fn connected_components(mask: &LesionMask, connectivity: Connectivity) -> ComponentMap {
    let geom = mask.geom().clone();
    let [nx, ny, nz] = geom.dims();
    let fg = mask.data();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; fg.len()];
    let mut counts = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let id = counts.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut count = 0usize;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let [x, y, z] = geom.coords(i);
            for o in &offsets {
                let (qx, qy, qz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                    continue;
                }
                let j = geom.index(qx as usize, qy as usize, qz as usize);
                if fg[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        counts.push(count);
    }
    ComponentMap {
        geom,
        labels,
        voxel_counts: counts,
    }
}

const CROSS: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

fn neighbours(dims: [usize; 3], x: usize, y: usize, z: usize) -> impl Iterator<Item = Option<usize>> {
    CROSS.iter().map(move |o| {
        let q = [x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]];
        if (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]) {
            Some(q[0] as usize + dims[0] * (q[1] as usize + dims[1] * q[2] as usize))
        } else {
            None
        }
    })
}

fn erode_once(dims: [usize; 3], src: &[bool]) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out[i] = src[i] && neighbours(dims, x, y, z).all(|n| matches!(n, Some(j) if src[j]));
                i += 1;
            }
        }
    }
    out
}

fn dilate_once(dims: [usize; 3], src: &[bool]) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out[i] = src[i] || neighbours(dims, x, y, z).any(|n| matches!(n, Some(j) if src[j]));
                i += 1;
            }
        }
    }
    out
}

/// `iterations` rounds of erosion by the 6-connected cross. Voxels on the
/// grid boundary count as exposed.
pub fn erode(set: &LesionMask, iterations: usize) -> LesionMask {
    let dims = set.dims();
    let mut cur = set.data().to_vec();
    for _ in 0..iterations {
        cur = erode_once(dims, &cur);
    }
    Volume::new(set.geom().clone(), cur).expect("same grid")
}

/// `iterations` rounds of dilation by the 6-connected cross, clipped to the
/// grid.
pub fn dilate(set: &LesionMask, iterations: usize) -> LesionMask {
    let dims = set.dims();
    let mut cur = set.data().to_vec();
    for _ in 0..iterations {
        cur = dilate_once(dims, &cur);
    }
    Volume::new(set.geom().clone(), cur).expect("same grid")
}

pub fn component_volume_mm3(voxel_count: usize, geom: &Geometry) -> f64 {
    voxel_count as f64 * geom.voxel_volume_mm3()
}

/// Inclusive-exclusive bounding box `[lo, hi)` of the given linear indices,
/// grown by `margin` and clipped to the grid.
pub fn bounding_box(geom: &Geometry, indices: &[usize], margin: usize) -> Option<([usize; 3], [usize; 3])> {
    let first = *indices.first()?;
    let mut lo = geom.coords(first);
    let mut hi = lo;
    for &i in indices {
        let c = geom.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let dims = geom.dims();
    let mut out_lo = [0; 3];
    let mut out_hi = [0; 3];
    for a in 0..3 {
        out_lo[a] = lo[a].saturating_sub(margin);
        out_hi[a] = (hi[a] + margin + 1).min(dims[a]);
    }
    Some((out_lo, out_hi))
}
