//! Synthetic test shapes centered in the unit cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Vec3;
use crate::shape_io::Mesh;

fn cube_center() -> Vec3 {
    Vec3::repeat(0.5)
}

/// `n` points uniformly distributed on the sphere of `radius` around the cube
/// center.
pub fn sphere_samples(radius: f64, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let d = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            cube_center() + d.normalize() * radius
        })
        .collect()
}

/// Latitude/longitude sphere mesh.
pub fn sphere_mesh(radius: f64, rings: usize, segments: usize) -> Mesh {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices = vec![cube_center() + Vec3::new(0.0, 0.0, radius)];
    for ring in 1..rings {
        let theta = std::f64::consts::PI * ring as f64 / rings as f64;
        for seg in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * seg as f64 / segments as f64;
            vertices.push(
                cube_center()
                    + Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * radius,
            );
        }
    }
    vertices.push(cube_center() - Vec3::new(0.0, 0.0, radius));
    let south = vertices.len() - 1;
    let ring_start = |ring: usize| 1 + (ring - 1) * segments;
    let mut faces = Vec::new();
    for seg in 0..segments {
        let next = (seg + 1) % segments;
        faces.push([0, ring_start(1) + seg, ring_start(1) + next]);
        let last = ring_start(rings - 1);
        faces.push([south, last + next, last + seg]);
    }
    for ring in 1..rings - 1 {
        let (a, b) = (ring_start(ring), ring_start(ring + 1));
        for seg in 0..segments {
            let next = (seg + 1) % segments;
            faces.push([a + seg, b + seg, b + next]);
            faces.push([a + seg, b + next, a + next]);
        }
    }
    Mesh { vertices, faces }
}

/// Axis-aligned box with the given side lengths, centered in the cube, split
/// into `n × n` quads (two triangles each) per face.
pub fn box_mesh(size: Vec3, n: usize) -> Mesh {
    assert!(n >= 1);
    let lo = cube_center() - size * 0.5;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0.0, 1.0] {
            let base = vertices.len();
            for i in 0..=n {
                for j in 0..=n {
                    let mut p = lo;
                    p[axis] += side * size[axis];
                    p[a] += size[a] * i as f64 / n as f64;
                    p[b] += size[b] * j as f64 / n as f64;
                    vertices.push(p);
                }
            }
            let at = |i: usize, j: usize| base + i * (n + 1) + j;
            for i in 0..n {
                for j in 0..n {
                    let quad = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                    // Orient outward.
                    if side == 1.0 {
                        faces.push([quad[0], quad[1], quad[2]]);
                        faces.push([quad[0], quad[2], quad[3]]);
                    } else {
                        faces.push([quad[0], quad[2], quad[1]]);
                        faces.push([quad[0], quad[3], quad[2]]);
                    }
                }
            }
        }
    }
    Mesh { vertices, faces }
}

/// Uniform random points on the surface of a centered box.
pub fn box_samples(size: Vec3, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas = [size.y * size.z, size.x * size.z, size.x * size.y];
    let total = 2.0 * (areas[0] + areas[1] + areas[2]);
    let lo = cube_center() - size * 0.5;
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut axis = 0;
            while axis < 2 && pick >= 2.0 * areas[axis] {
                pick -= 2.0 * areas[axis];
                axis += 1;
            }
            let mut p = lo + Vec3::new(rng.random(), rng.random(), rng.random()).component_mul(&size);
            p[axis] = lo[axis] + if rng.random::<bool>() { size[axis] } else { 0.0 };
            p
        })
        .collect()
}
