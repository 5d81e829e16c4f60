//! Voxelized solid and interior shortest paths.
//!
//! The grid is cubic with a two-cell margin around the mesh bounding box, so
//! the outer layer is always exterior. Distances run over surface ∪ interior
//! cells with 26-connectivity; when the straight segment between the
//! endpoints stays inside the solid, the Euclidean length is returned
//! directly, which removes the grid-direction bias on convex parts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 8;
const MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Occupancy {
    Exterior,
    Surface,
    Interior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: usize,
    /// Corner of cell (0,0,0).
    pub origin: Vec3,
    pub cell_size: f64,
    cells: Vec<Occupancy>,
}

/// Result of a distance query; `fallback` marks endpoints with no interior
/// path between them, in which case `distance` is Euclidean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodesic {
    pub distance: f64,
    pub fallback: bool,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.resolution + c[1]) * self.resolution + c[2]
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let r = self.resolution;
        [i / (r * r), (i / r) % r, i % r]
    }

    pub fn occupancy(&self, c: [usize; 3]) -> Occupancy {
        self.cells[self.index(c)]
    }

    pub fn count(&self, which: Occupancy) -> usize {
        self.cells.iter().filter(|&&c| c == which).count()
    }

    pub fn is_solid(&self, i: usize) -> bool {
        self.cells[i] != Occupancy::Exterior
    }

    pub fn diagonal(&self) -> f64 {
        self.cell_size * 3f64.sqrt()
    }

    pub fn center(&self, i: usize) -> Vec3 {
        let c = self.coords(i);
        self.origin + Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.cell_size
    }

    fn contains(&self, p: &Vec3) -> bool {
        let ext = self.cell_size * self.resolution as f64;
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + ext)
    }

    /// Cell containing `p`, clamped to the grid.
    fn clamped_cell(&self, p: &Vec3) -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.cell_size).floor();
            c[a] = f.clamp(0.0, (self.resolution - 1) as f64) as usize;
        }
        c
    }

    /// Nearest non-exterior cell by centre distance; ties go to the lower index.
    pub fn snap(&self, p: &Vec3) -> Option<usize> {
        let c = self.clamped_cell(p);
        let r = self.resolution as i64;
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..r {
            if let Some((d, _)) = best {
                // every cell in this ring is at least (ring - 1/2) cells away
                if (ring as f64 - 0.5) * self.cell_size > d {
                    break;
                }
            }
            let lo = [c[0] as i64 - ring, c[1] as i64 - ring, c[2] as i64 - ring];
            for x in lo[0]..=lo[0] + 2 * ring {
                for y in lo[1]..=lo[1] + 2 * ring {
                    for z in lo[2]..=lo[2] + 2 * ring {
                        let on_shell = [x - c[0] as i64, y - c[1] as i64, z - c[2] as i64]
                            .iter()
                            .any(|d| d.abs() == ring);
                        if !on_shell || [x, y, z].iter().any(|&v| v < 0 || v >= r) {
                            continue;
                        }
                        let i = self.index([x as usize, y as usize, z as usize]);
                        if !self.is_solid(i) {
                            continue;
                        }
                        let d = (self.center(i) - p).norm();
                        if best.map_or(true, |(bd, bi)| d < bd || (d == bd && i < bi)) {
                            best = Some((d, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// True when every point of the segment lies in a non-exterior cell
    /// (checked at quarter-cell spacing).
    pub fn line_of_sight(&self, a: &Vec3, b: &Vec3) -> bool {
        if !self.contains(a) || !self.contains(b) {
            return false;
        }
        let (a, b) = ordered(a, b);
        let steps = (((b - a).norm() / (0.25 * self.cell_size)).ceil() as usize).max(1);
        (0..=steps).all(|s| {
            let p = a + (b - a) * (s as f64 / steps as f64);
            self.is_solid(self.index(self.clamped_cell(&p)))
        })
    }

    /// Shortest interior path lengths from `source` to every cell centre.
    pub fn distance_field(&self, source: &Vec3) -> Result<DistanceField> {
        if !self.contains(source) {
            return Err(Error::Geometry(format!("point {source:?} lies outside the voxel grid")));
        }
        let mut dist = vec![f64::INFINITY; self.cells.len()];
        let Some(start) = self.snap(source) else {
            return Ok(DistanceField { source: *source, resolution: self.resolution, dist });
        };
        let steps = neighbour_steps();
        let r = self.resolution as i64;
        dist[start] = (self.center(start) - source).norm();
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(dist[start], start));
        while let Some(HeapItem(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            let c = self.coords(i);
            for &(off, len) in &steps {
                let n = [c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]];
                if n.iter().any(|&v| v < 0 || v >= r) {
                    continue;
                }
                let j = self.index([n[0] as usize, n[1] as usize, n[2] as usize]);
                if !self.is_solid(j) {
                    continue;
                }
                let nd = d + len * self.cell_size;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(HeapItem(nd, j));
                }
            }
        }
        Ok(DistanceField { source: *source, resolution: self.resolution, dist })
    }

    /// Count of 6-connected interior components.
    pub fn interior_components(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut count = 0;
        for i in 0..self.cells.len() {
            if self.cells[i] != Occupancy::Interior || seen[i] {
                continue;
            }
            count += 1;
            flood(self, i, &mut seen, |o| o == Occupancy::Interior);
        }
        count
    }
}

fn ordered<'a>(a: &'a Vec3, b: &'a Vec3) -> (&'a Vec3, &'a Vec3) {
    let key = |p: &Vec3| [p.x, p.y, p.z];
    if key(a).partial_cmp(&key(b)) == Some(Ordering::Greater) {
        (b, a)
    } else {
        (a, b)
    }
}

fn neighbour_steps() -> Vec<([i64; 3], f64)> {
    let mut v = Vec::with_capacity(26);
    for x in -1i64..=1 {
        for y in -1i64..=1 {
            for z in -1i64..=1 {
                let n = x.abs() + y.abs() + z.abs();
                if n > 0 {
                    v.push(([x, y, z], (n as f64).sqrt()));
                }
            }
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then index, for a deterministic pop order
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 6-connected flood from `start` through cells accepted by `pass`.
fn flood(grid: &VoxelGrid, start: usize, seen: &mut [bool], pass: impl Fn(Occupancy) -> bool) {
    let r = grid.resolution as i64;
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        let c = grid.coords(i);
        for (a, d) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
            let v = c[a] as i64 + d;
            if v < 0 || v >= r {
                continue;
            }
            let mut n = c;
            n[a] = v as usize;
            let j = grid.index(n);
            if !seen[j] && pass(grid.cells[j]) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: Vec3,
    resolution: usize,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn distance_to(&self, grid: &VoxelGrid, p: &Vec3) -> Result<Geodesic> {
        if grid.resolution != self.resolution || grid.len() != self.dist.len() {
            return Err(Error::Geometry("distance field was computed on a different grid".into()));
        }
        if !grid.contains(p) {
            return Err(Error::Geometry(format!("point {p:?} lies outside the voxel grid")));
        }
        let euclid = (p - self.source).norm();
        if grid.line_of_sight(p, &self.source) {
            return Ok(Geodesic { distance: euclid, fallback: false });
        }
        match grid.snap(p).map(|i| (i, self.dist[i])) {
            Some((i, d)) if d.is_finite() => Ok(Geodesic { distance: d + (grid.center(i) - p).norm(), fallback: false }),
            _ => Ok(Geodesic { distance: euclid, fallback: true }),
        }
    }
}

/// Interior distance between two points; symmetric in its arguments.
pub fn geodesic_distance(grid: &VoxelGrid, a: &Vec3, b: &Vec3) -> Result<Geodesic> {
    let (a, b) = ordered(a, b);
    grid.distance_field(a)?.distance_to(grid, b)
}

pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<VoxelGrid> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Geometry(format!("voxel resolution {resolution} is below the minimum of {MIN_RESOLUTION}")));
    }
    mesh.validate()?;
    let (lo, hi) = mesh.bounds().ok_or_else(|| Error::Geometry("cannot voxelize an empty mesh".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::Geometry("mesh bounding box has zero extent".into()));
    }
    let cell_size = extent / (resolution - 2 * MARGIN) as f64;
    let origin = (lo + hi) * 0.5 - Vec3::repeat(cell_size * resolution as f64 * 0.5);
    let mut grid = VoxelGrid { resolution, origin, cell_size, cells: vec![Occupancy::Exterior; resolution.pow(3)] };

    let half = Vec3::repeat(cell_size * 0.5 * (1.0 + 1e-9));
    for f in &mesh.faces {
        let tri = [mesh.vertices[f[0] as usize], mesh.vertices[f[1] as usize], mesh.vertices[f[2] as usize]];
        let tlo = tri[0].inf(&tri[1]).inf(&tri[2]);
        let thi = tri[0].sup(&tri[1]).sup(&tri[2]);
        let a = grid.clamped_cell(&(tlo - half));
        let b = grid.clamped_cell(&(thi + half));
        for x in a[0]..=b[0] {
            for y in a[1]..=b[1] {
                for z in a[2]..=b[2] {
                    let i = grid.index([x, y, z]);
                    if grid.cells[i] != Occupancy::Surface && tri_box_overlap(&grid.center(i), &half, &tri) {
                        grid.cells[i] = Occupancy::Surface;
                    }
                }
            }
        }
    }

    let mut outside = vec![false; grid.cells.len()];
    let r = resolution;
    for i in 0..grid.cells.len() {
        let c = grid.coords(i);
        let boundary = c.iter().any(|&v| v == 0 || v == r - 1);
        if boundary && !outside[i] && grid.cells[i] != Occupancy::Surface {
            flood(&grid, i, &mut outside, |o| o != Occupancy::Surface);
        }
    }
    for (cell, out) in grid.cells.iter_mut().zip(&outside) {
        if *cell != Occupancy::Surface {
            *cell = if *out { Occupancy::Exterior } else { Occupancy::Interior };
        }
    }
    Ok(grid)
}

/// Separating-axis test between a triangle and an axis-aligned box.
fn tri_box_overlap(center: &Vec3, half: &Vec3, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }
    let separated = |axis: Vec3| {
        if axis.norm_squared() < 1e-30 {
            return false;
        }
        let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
        let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        p[0].min(p[1]).min(p[2]) > r || p[0].max(p[1]).max(p[2]) < -r
    };
    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    if separated(edges[0].cross(&edges[1])) {
        return false;
    }
    for e in &edges {
        for unit in [Vec3::x(), Vec3::y(), Vec3::z()] {
            if separated(unit.cross(e)) {
                return false;
            }
        }
    }
    true
}
