use super::{mat4_mul, Geometry, Mat4, Volume};

/// Axis permutation and flips that bring a grid closest to RAS.
///
/// Output axis `j` reads input axis `source_axis[j]`, reversed when
/// `flip[j]` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reorientation {
    pub source_axis: [usize; 3],
    pub flip: [bool; 3],
}

impl Reorientation {
    pub fn is_identity(&self) -> bool {
        self.source_axis == [0, 1, 2] && self.flip == [false; 3]
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Nearest signed-permutation alignment of the affine's voxel axes with the
/// world x/y/z axes.
pub fn ras_reorientation(geom: &Geometry) -> Reorientation {
    let a = geom.affine();
    let spacing = geom.spacing();
    // direction cosines: dir[i][j] = world component i of voxel axis j
    let dir = |i: usize, j: usize| a[i][j] / spacing[j];
    let mut best = (f64::NEG_INFINITY, [0usize, 1, 2]);
    for perm in PERMUTATIONS {
        // perm[j] = voxel axis assigned to world axis j
        let score: f64 = (0..3).map(|j| dir(j, perm[j]).abs()).sum();
        if score > best.0 + 1e-12 {
            best = (score, perm);
        }
    }
    let source_axis = best.1;
    let mut flip = [false; 3];
    for j in 0..3 {
        flip[j] = dir(j, source_axis[j]) < 0.0;
    }
    Reorientation { source_axis, flip }
}

/// Permute/flip voxel axes so each one points along +x, +y, +z as closely as
/// possible. World positions of voxel centres are unchanged.
pub fn reorient_ras<T: Clone>(vol: &Volume<T>) -> Volume<T> {
    let r = ras_reorientation(vol.geom());
    apply_reorientation(vol, &r)
}

pub(crate) fn reorient_geometry(geom: &Geometry, r: &Reorientation) -> Geometry {
    let in_dims = geom.dims();
    let mut out_dims = [0usize; 3];
    for j in 0..3 {
        out_dims[j] = in_dims[r.source_axis[j]];
    }
    // out index -> in index
    let mut t: Mat4 = [[0.0; 4]; 4];
    t[3][3] = 1.0;
    for j in 0..3 {
        let a = r.source_axis[j];
        if r.flip[j] {
            t[a][j] = -1.0;
            t[a][3] = (in_dims[a] - 1) as f64;
        } else {
            t[a][j] = 1.0;
        }
    }
    let affine = mat4_mul(geom.affine(), &t);
    Geometry::new(out_dims, affine).expect("signed permutation of a valid affine is valid")
}

pub(crate) fn apply_reorientation<T: Clone>(vol: &Volume<T>, r: &Reorientation) -> Volume<T> {
    if r.is_identity() {
        return vol.clone();
    }
    let in_geom = vol.geom();
    let in_dims = in_geom.dims();
    let out_geom = reorient_geometry(in_geom, r);
    let src = vol.data();
    Volume::from_fn(out_geom, |o| {
        let mut p = [0usize; 3];
        for j in 0..3 {
            let a = r.source_axis[j];
            p[a] = if r.flip[j] { in_dims[a] - 1 - o[j] } else { o[j] };
        }
        src[in_geom.index(p[0], p[1], p[2])].clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IDENTITY4;

    #[test]
    fn identity_is_fixed_point() {
        let g = Geometry::isotropic([3, 4, 5]);
        let v = Volume::from_fn(g, |[x, y, z]| (x + 10 * y + 100 * z) as f32);
        assert_eq!(reorient_ras(&v), v);
    }

    #[test]
    fn flipped_x_axis() {
        let mut a = IDENTITY4;
        a[0][0] = -1.0;
        a[0][3] = 10.0;
        let g = Geometry::new([4, 2, 2], a).unwrap();
        let v = Volume::from_fn(g.clone(), |[x, y, z]| (x + 10 * y + 100 * z) as f32);
        let r = reorient_ras(&v);
        assert_eq!(r.geom().affine()[0][0], 1.0);
        // last input voxel (x = 3) sits at world x = 7 and becomes the origin
        assert_eq!(r.geom().affine()[0][3], 7.0);
        assert_eq!(*r.get(0, 0, 0), 3.0);
        assert_eq!(*r.get(3, 1, 1), 110.0);
        for i in 0..g.n_voxels() {
            let c = g.coords(i);
            let w = g.voxel_to_world([c[0] as f64, c[1] as f64, c[2] as f64]);
            let o = r.geom().world_to_voxel(w);
            let oi = o.map(|v| v.round() as usize);
            assert_eq!(*r.get(oi[0], oi[1], oi[2]), v.data()[i]);
        }
    }
}
