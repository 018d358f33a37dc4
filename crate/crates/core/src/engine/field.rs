//! Raster data shared by all runs on one geometry: a floor field (travel
//! time to the exit), its descent directions, region kinds and per-cell
//! wall candidate lists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{RailcarGeometry, Rect, RegionKind, Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Blocked,
    Floor,
    Stair,
    ExternalStair,
}

#[derive(Debug, Clone)]
pub struct FieldParams {
    pub resolution: f64,
    /// Distance from walls within which travel is penalised.
    pub wall_clearance: f64,
    /// Extra slowness at the wall itself.
    pub wall_penalty: f64,
    /// Wall lists cover walls within this distance of a coarse cell.
    pub wall_reach: f64,
}

#[derive(Debug, Clone)]
pub struct FloorField {
    origin: Vec2,
    h: f64,
    nx: usize,
    ny: usize,
    kind: Vec<CellKind>,
    phi: Vec<f64>,
    dir: Vec<Vec2>,
    walls: Vec<Segment>,
    coarse_h: f64,
    cnx: usize,
    cny: usize,
    wall_lists: Vec<Vec<u32>>,
    wall_reach: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl FloorField {
    pub fn new(geometry: &RailcarGeometry, p: &FieldParams) -> FloorField {
        let b = geometry.bounds();
        let h = p.resolution;
        let origin = Vec2::new(b.min.x - h, b.min.y - h);
        let nx = ((b.max.x - b.min.x) / h).ceil() as usize + 3;
        let ny = ((b.max.y - b.min.y) / h).ceil() as usize + 3;
        let n = nx * ny;
        let center = |i: usize, j: usize| Vec2::new(origin.x + (i as f64 + 0.5) * h, origin.y + (j as f64 + 0.5) * h);

        let mut kind = vec![CellKind::Blocked; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = center(i, j);
                if let Some(r) = geometry.region_at(c) {
                    kind[j * nx + i] = match geometry.regions[r].kind {
                        RegionKind::Stair { external: true, .. } => CellKind::ExternalStair,
                        RegionKind::Stair { .. } => CellKind::Stair,
                        _ => CellKind::Floor,
                    };
                }
            }
        }

        let walls = geometry.walls().to_vec();
        let coarse_h = 0.2;
        let cnx = ((nx as f64 * h) / coarse_h).ceil() as usize + 1;
        let cny = ((ny as f64 * h) / coarse_h).ceil() as usize + 1;
        let mut wall_lists = vec![Vec::new(); cnx * cny];
        for cj in 0..cny {
            for ci in 0..cnx {
                let r = Rect::new(
                    origin.x + ci as f64 * coarse_h,
                    origin.y + cj as f64 * coarse_h,
                    origin.x + (ci + 1) as f64 * coarse_h,
                    origin.y + (cj + 1) as f64 * coarse_h,
                );
                let mid = (r.min + r.max) * 0.5;
                let half_diag = coarse_h * std::f64::consts::FRAC_1_SQRT_2;
                for (k, w) in walls.iter().enumerate() {
                    if w.distance_to(mid) <= p.wall_reach + half_diag {
                        wall_lists[cj * cnx + ci].push(k as u32);
                    }
                }
            }
        }

        let mut field = FloorField {
            origin,
            h,
            nx,
            ny,
            kind,
            phi: vec![f64::INFINITY; n],
            dir: vec![Vec2::ZERO; n],
            walls,
            coarse_h,
            cnx,
            cny,
            wall_lists,
            wall_reach: p.wall_reach,
        };

        let sink_y = geometry.sink.a.y;
        let (sx0, sx1) = (geometry.sink.a.x.min(geometry.sink.b.x), geometry.sink.a.x.max(geometry.sink.b.x));
        let mut slowness = vec![1.0; n];
        let mut sources = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if field.kind[k] == CellKind::Blocked {
                    continue;
                }
                let c = center(i, j);
                let (wd, _) = field.wall_distance(c);
                if wd < p.wall_clearance {
                    slowness[k] = 1.0 + p.wall_penalty * (1.0 - wd / p.wall_clearance);
                }
                if c.y < sink_y && c.x > sx0 && c.x < sx1 {
                    sources.push(k);
                }
            }
        }
        field.solve_eikonal(&slowness, &sources);
        field.compute_directions();
        field
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    fn walkable(&self, k: usize) -> bool {
        self.kind[k] != CellKind::Blocked
    }

    fn solve_eikonal(&mut self, slowness: &[f64], sources: &[usize]) {
        let n = self.nx * self.ny;
        let mut known = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            self.phi[s] = 0.0;
            heap.push(Item(0.0, s));
        }
        while let Some(Item(d, k)) = heap.pop() {
            if known[k] || d > self.phi[k] {
                continue;
            }
            known[k] = true;
            let (i, j) = (k % self.nx, k / self.nx);
            let mut nbrs = [None; 4];
            if i > 0 {
                nbrs[0] = Some(k - 1);
            }
            if i + 1 < self.nx {
                nbrs[1] = Some(k + 1);
            }
            if j > 0 {
                nbrs[2] = Some(k - self.nx);
            }
            if j + 1 < self.ny {
                nbrs[3] = Some(k + self.nx);
            }
            for m in nbrs.into_iter().flatten() {
                if known[m] || !self.walkable(m) {
                    continue;
                }
                let v = self.local_update(m, slowness[m], &known);
                if v < self.phi[m] {
                    self.phi[m] = v;
                    heap.push(Item(v, m));
                }
            }
        }
    }

    fn local_update(&self, k: usize, s: f64, known: &[bool]) -> f64 {
        let (i, j) = (k % self.nx, k / self.nx);
        let val = |m: Option<usize>| m.filter(|&m| known[m]).map_or(f64::INFINITY, |m| self.phi[m]);
        let a = val((i > 0).then(|| k - 1)).min(val((i + 1 < self.nx).then(|| k + 1)));
        let b = val((j > 0).then(|| k - self.nx)).min(val((j + 1 < self.ny).then(|| k + self.nx)));
        let sh = s * self.h;
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if !b.is_finite() || b - a >= sh {
            a + sh
        } else {
            (a + b + (2.0 * sh * sh - (a - b) * (a - b)).sqrt()) / 2.0
        }
    }

    fn compute_directions(&mut self) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = self.idx(i, j);
                if !self.walkable(k) || !self.phi[k].is_finite() {
                    continue;
                }
                if self.phi[k] == 0.0 {
                    self.dir[k] = Vec2::new(0.0, -1.0);
                    continue;
                }
                let g = |m: Option<usize>| {
                    m.filter(|&m| self.walkable(m) && self.phi[m].is_finite())
                        .map(|m| self.phi[m])
                };
                let l = g((i > 0).then(|| k - 1));
                let r = g((i + 1 < self.nx).then(|| k + 1));
                let d = g((j > 0).then(|| k - self.nx));
                let u = g((j + 1 < self.ny).then(|| k + self.nx));
                let p = self.phi[k];
                let gx = match (l, r) {
                    (Some(l), Some(r)) => (r - l) / (2.0 * self.h),
                    (Some(l), None) => (p - l) / self.h,
                    (None, Some(r)) => (r - p) / self.h,
                    (None, None) => 0.0,
                };
                let gy = match (d, u) {
                    (Some(d), Some(u)) => (u - d) / (2.0 * self.h),
                    (Some(d), None) => (p - d) / self.h,
                    (None, Some(u)) => (u - p) / self.h,
                    (None, None) => 0.0,
                };
                self.dir[k] = Vec2::new(-gx, -gy).normalized();
            }
        }
    }

    fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fi = (p.x - self.origin.x) / self.h;
        let fj = (p.y - self.origin.y) / self.h;
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    pub fn kind_at(&self, p: Vec2) -> CellKind {
        self.cell_of(p)
            .map_or(CellKind::Blocked, |(i, j)| self.kind[self.idx(i, j)])
    }

    /// Bilinear blend over the four surrounding walkable cell centres.
    fn blend<T, F>(&self, p: Vec2, get: F) -> Option<(T, f64)>
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
        F: Fn(usize) -> Option<T>,
    {
        let fx = (p.x - self.origin.x) / self.h - 0.5;
        let fy = (p.y - self.origin.y) / self.h - 0.5;
        let (i0, j0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - i0, fy - j0);
        let mut acc = T::default();
        let mut wsum = 0.0;
        for (di, dj, w) in [
            (0, 0, (1.0 - tx) * (1.0 - ty)),
            (1, 0, tx * (1.0 - ty)),
            (0, 1, (1.0 - tx) * ty),
            (1, 1, tx * ty),
        ] {
            let (i, j) = (i0 as isize + di, j0 as isize + dj);
            if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize || w <= 0.0 {
                continue;
            }
            let k = self.idx(i as usize, j as usize);
            if !self.walkable(k) {
                continue;
            }
            if let Some(v) = get(k) {
                acc = acc + v * w;
                wsum += w;
            }
        }
        (wsum > 0.0).then_some((acc, wsum))
    }

    /// Desired walking direction at `p`.
    pub fn direction(&self, p: Vec2) -> Vec2 {
        self.blend(p, |k| Some(self.dir[k]))
            .map(|(v, _)| v.normalized())
            .unwrap_or(Vec2::ZERO)
    }

    /// Interpolated travel-time potential at `p`.
    pub fn potential(&self, p: Vec2) -> f64 {
        self.blend(p, |k| self.phi[k].is_finite().then_some(self.phi[k]))
            .map(|(v, w)| v / w)
            .unwrap_or(f64::INFINITY)
    }

    /// Distance to the nearest wall (capped at the wall reach) and the unit normal away from it.
    pub fn wall_distance(&self, p: Vec2) -> (f64, Vec2) {
        let ci = ((p.x - self.origin.x) / self.coarse_h).floor();
        let cj = ((p.y - self.origin.y) / self.coarse_h).floor();
        let mut best = self.wall_reach;
        let mut normal = Vec2::ZERO;
        if ci < 0.0 || cj < 0.0 || ci as usize >= self.cnx || cj as usize >= self.cny {
            return (0.0, normal);
        }
        for &w in &self.wall_lists[cj as usize * self.cnx + ci as usize] {
            let seg = &self.walls[w as usize];
            let c = seg.closest_point(p);
            let d = c.distance(p);
            if d < best {
                best = d;
                normal = (p - c).normalized();
            }
        }
        (best, normal)
    }

    /// Tangent of the nearest wall within reach, if any.
    pub fn wall_tangent(&self, p: Vec2) -> Option<Vec2> {
        let ci = ((p.x - self.origin.x) / self.coarse_h).floor();
        let cj = ((p.y - self.origin.y) / self.coarse_h).floor();
        if ci < 0.0 || cj < 0.0 || ci as usize >= self.cnx || cj as usize >= self.cny {
            return None;
        }
        let mut best = (self.wall_reach, None);
        for &w in &self.wall_lists[cj as usize * self.cnx + ci as usize] {
            let seg = &self.walls[w as usize];
            let d = seg.distance_to(p);
            if d < best.0 {
                best = (d, Some((seg.b - seg.a).normalized()));
            }
        }
        best.1
    }
}
