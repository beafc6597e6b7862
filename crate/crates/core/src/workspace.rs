//! Reachable-workspace sampling, voxelization and volume integration.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kinematics::{chain_position, JointConfig, JointLimits, SegmentParams};

/// How the translation axis acts on the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkspaceMode {
    /// Translation lengthens the first segment (`s = q1 + l1`).
    SemiActive,
    /// Fixed first-segment length; the whole chain slides along base z.
    General,
}

impl WorkspaceMode {
    pub fn name(&self) -> &'static str {
        match self {
            WorkspaceMode::SemiActive => "semi_active",
            WorkspaceMode::General => "general",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceOptions {
    pub voxel_size: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Half-width in voxels of the cubic closing applied after marking.
    /// Closes the gaps between neighbouring samples; 0 disables it.
    pub closing_radius: usize,
}

impl Default for WorkspaceOptions {
    fn default() -> Self {
        WorkspaceOptions {
            voxel_size: 1.0,
            n_samples: 1_000_000,
            seed: 0,
            closing_radius: 2,
        }
    }
}

/// Boolean occupancy over an axis-aligned box of cubic voxels.
///
/// Voxel `(i, j, k)` covers `min + voxel_size * [i, i+1) x [j, j+1) x [k, k+1)`
/// and is stored at `(k * ny + j) * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceGrid {
    pub voxel_size: f64,
    pub min: [f64; 3],
    pub dims: [usize; 3],
    cells: Vec<bool>,
}

impl WorkspaceGrid {
    pub fn empty(min: [f64; 3], dims: [usize; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(domain(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        Ok(WorkspaceGrid {
            voxel_size,
            min,
            dims,
            cells: vec![false; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Grid enclosing `points` with `pad` empty voxels on every side, each
    /// voxel containing a point marked.
    pub fn from_points(points: &[Vector3<f64>], voxel_size: f64, pad: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(domain("cannot build a workspace grid from zero samples"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let padf = pad as f64 * voxel_size;
        let min = std::array::from_fn(|a| ((lo[a] / voxel_size).floor() * voxel_size) - padf);
        let dims =
            std::array::from_fn(|a| ((hi[a] - min[a]) / voxel_size).floor() as usize + 1 + pad);
        let mut grid = Self::empty(min, dims, voxel_size)?;
        for p in points {
            let idx = grid.voxel_of(p).expect("point inside its own bounds");
            grid.cells[idx] = true;
        }
        Ok(grid)
    }

    /// Marks the voxels whose centres satisfy `inside`.
    pub fn rasterize<F: Fn(&Vector3<f64>) -> bool>(
        min: [f64; 3],
        max: [f64; 3],
        voxel_size: f64,
        inside: F,
    ) -> Result<Self> {
        let dims =
            std::array::from_fn(|a| ((max[a] - min[a]) / voxel_size).ceil().max(1.0) as usize);
        let mut grid = Self::empty(min, dims, voxel_size)?;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let c = grid.center(i, j, k);
                    let idx = grid.index(i, j, k);
                    grid.cells[idx] = inside(&c);
                }
            }
        }
        Ok(grid)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.voxel_size;
        Vector3::new(
            self.min[0] + (i as f64 + 0.5) * h,
            self.min[1] + (j as f64 + 0.5) * h,
            self.min[2] + (k as f64 + 0.5) * h,
        )
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.min[a]) / self.voxel_size).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            ijk[a] = f as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.cells[self.index(i, j, k)]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn max(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.min[a] + self.dims[a] as f64 * self.voxel_size)
    }

    /// Plain voxel-count volume in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.occupied() as f64 * self.voxel_size.powi(3)
    }

    /// Occupied area of z-slice `k` in mm².
    pub fn slice_area(&self, k: usize) -> f64 {
        let n = self.dims[0] * self.dims[1];
        let count = self.cells[k * n..(k + 1) * n]
            .iter()
            .filter(|&&c| c)
            .count();
        count as f64 * self.voxel_size * self.voxel_size
    }

    fn line_pass(&mut self, axis: usize, r: usize, dilate: bool) {
        let [nx, ny, nz] = self.dims;
        let stride = [1, nx, nx * ny][axis];
        let len = self.dims[axis];
        let starts: Vec<usize> = match axis {
            0 => (0..nz)
                .flat_map(|k| (0..ny).map(move |j| (k * ny + j) * nx))
                .collect(),
            1 => (0..nz)
                .flat_map(|k| (0..nx).map(move |i| k * nx * ny + i))
                .collect(),
            _ => (0..nx * ny).collect(),
        };
        let mut line = vec![false; len];
        let mut prefix = vec![0usize; len + 1];
        for s in starts {
            for t in 0..len {
                line[t] = self.cells[s + t * stride];
                prefix[t + 1] = prefix[t] + line[t] as usize;
            }
            for t in 0..len {
                let a = t.saturating_sub(r);
                let b = (t + r + 1).min(len);
                let count = prefix[b] - prefix[a];
                // Voxels beyond the grid count as empty.
                let out = if dilate {
                    count > 0
                } else {
                    count == 2 * r + 1
                };
                self.cells[s + t * stride] = out;
            }
        }
    }

    /// Morphological closing with a cube of half-width `r` voxels.
    pub fn close(&mut self, r: usize) {
        if r == 0 {
            return;
        }
        for axis in 0..3 {
            self.line_pass(axis, r, true);
        }
        for axis in 0..3 {
            self.line_pass(axis, r, false);
        }
    }

    /// Copy with every empty region not connected to the grid boundary
    /// marked occupied.
    pub fn fill_cavities(&self) -> WorkspaceGrid {
        let [nx, ny, nz] = self.dims;
        let mut outside = vec![false; self.cells.len()];
        let mut queue = VecDeque::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let border =
                        i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                    let idx = self.index(i, j, k);
                    if border && !self.cells[idx] {
                        outside[idx] = true;
                        queue.push_back((i, j, k));
                    }
                }
            }
        }
        while let Some((i, j, k)) = queue.pop_front() {
            let mut visit = |i: usize, j: usize, k: usize| {
                let idx = self.index(i, j, k);
                if !self.cells[idx] && !outside[idx] {
                    outside[idx] = true;
                    queue.push_back((i, j, k));
                }
            };
            if i > 0 {
                visit(i - 1, j, k);
            }
            if i + 1 < nx {
                visit(i + 1, j, k);
            }
            if j > 0 {
                visit(i, j - 1, k);
            }
            if j + 1 < ny {
                visit(i, j + 1, k);
            }
            if k > 0 {
                visit(i, j, k - 1);
            }
            if k + 1 < nz {
                visit(i, j, k + 1);
            }
        }
        WorkspaceGrid {
            cells: outside.iter().map(|&o| !o).collect(),
            ..self.clone()
        }
    }

    /// Run-length encoding of the occupancy in storage order, starting with
    /// a run of empty voxels (possibly of length zero).
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &c in &self.cells {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn to_dump(&self) -> VoxelDump {
        VoxelDump {
            voxel_size: self.voxel_size,
            min: self.min,
            max: self.max(),
            dims: self.dims,
            order: "x_fastest".into(),
            runs: self.run_lengths(),
        }
    }
}

/// Serializable voxel dump for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelDump {
    pub voxel_size: f64,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub dims: [usize; 3],
    pub order: String,
    /// Alternating empty/occupied run lengths, beginning with empty.
    pub runs: Vec<usize>,
}

/// Volume by composite Simpson integration of z-slice areas.
///
/// Slices are sampled at voxel centres one voxel apart. An even slice count
/// is padded with one empty slice so the rule applies.
pub fn simpson_volume(grid: &WorkspaceGrid) -> f64 {
    let mut areas: Vec<f64> = (0..grid.dims[2]).map(|k| grid.slice_area(k)).collect();
    if areas.iter().all(|&a| a == 0.0) {
        return 0.0;
    }
    // Bracket with empty slices so the end samples carry no volume.
    areas.insert(0, 0.0);
    areas.push(0.0);
    if areas.len() % 2 == 0 {
        areas.push(0.0);
    }
    let n = areas.len();
    let mut sum = areas[0] + areas[n - 1];
    for (i, a) in areas.iter().enumerate().take(n - 1).skip(1) {
        sum += if i % 2 == 1 { 4.0 * a } else { 2.0 * a };
    }
    sum * grid.voxel_size / 3.0
}

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Randomly shifted Halton point `index` in `[0, 1)^6`.
fn halton_point(index: u64, shift: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|d| (radical_inverse(index + 1, HALTON_BASES[d]) + shift[d]).fract())
}

/// Arcsine warp of `[0, 1)` onto itself, denser near both ends.
///
/// Occupancy only needs every reachable voxel hit once, and the workspace
/// boundary is the image of the joint-limit faces, so sampling the faces
/// more densely converges the volume with far fewer samples.
fn edge_warp(u: f64) -> f64 {
    0.5 - 0.5 * (PI * u).cos()
}

/// End-effector positions for `n` low-discrepancy samples of the joint box.
///
/// The first coordinate drives translation over `[0, q1_max]`; the other
/// five drive `q2..q6` over `limits`. For a given seed both modes use the
/// same sample coordinates, so they coincide when `q1_max` is zero.
pub fn sample_points(
    geom: &SegmentParams,
    limits: &JointLimits,
    q1_max: f64,
    mode: WorkspaceMode,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    if n == 0 {
        return Err(domain("workspace sampling needs at least one sample"));
    }
    if !(q1_max >= 0.0 && q1_max.is_finite()) {
        return Err(domain(format!("q1_max must be non-negative, got {q1_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 6] = std::array::from_fn(|_| rng.gen::<f64>());
    let points = (0..n)
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            let u = halton_point(i as u64, &shift).map(edge_warp);
            let mut q = JointConfig::ZERO;
            for (d, j) in (1..6).enumerate() {
                q[j] = limits.min(j) + u[d + 1] * (limits.max(j) - limits.min(j));
            }
            let t = u[0] * q1_max;
            match mode {
                WorkspaceMode::SemiActive => {
                    q[0] = t;
                    chain_position(&q, geom)
                }
                WorkspaceMode::General => chain_position(&q, geom) + Vector3::new(0.0, 0.0, t),
            }
        })
        .collect();
    Ok(points)
}

/// Samples and voxelizes the workspace, applying the configured closing.
pub fn sample_workspace(
    geom: &SegmentParams,
    limits: &JointLimits,
    q1_max: f64,
    mode: WorkspaceMode,
    opts: &WorkspaceOptions,
) -> Result<WorkspaceGrid> {
    let points = sample_points(geom, limits, q1_max, mode, opts.n_samples, opts.seed)?;
    let mut grid = WorkspaceGrid::from_points(&points, opts.voxel_size, opts.closing_radius + 1)?;
    grid.close(opts.closing_radius);
    Ok(grid)
}

/// Reachable volume, and total volume with enclosed unreachable cavities
/// counted as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePair {
    pub reachable: f64,
    pub total: f64,
}

pub fn grid_volumes(grid: &WorkspaceGrid) -> VolumePair {
    VolumePair {
        reachable: simpson_volume(grid),
        total: simpson_volume(&grid.fill_cavities()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRow {
    pub q1_max: f64,
    pub mode: WorkspaceMode,
    pub reachable_mm3: f64,
    pub total_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub rows: Vec<WorkspaceRow>,
    /// Total semi-active volume at the largest translation over the general
    /// manipulator's reachable volume.
    pub gain_ratio: f64,
}

pub const REPORT_TRANSLATIONS: [f64; 6] = [0.0, 25.0, 50.0, 75.0, 100.0, 125.0];

pub fn workspace_volumes(
    geom: &SegmentParams,
    limits: &JointLimits,
    q1_max: f64,
    mode: WorkspaceMode,
    opts: &WorkspaceOptions,
) -> Result<VolumePair> {
    Ok(grid_volumes(&sample_workspace(
        geom, limits, q1_max, mode, opts,
    )?))
}

/// Semi-active volumes over `translations` plus the general manipulator at
/// the largest one.
pub fn workspace_report(
    geom: &SegmentParams,
    limits: &JointLimits,
    translations: &[f64],
    opts: &WorkspaceOptions,
) -> Result<WorkspaceReport> {
    let q_top = translations
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| domain("workspace report needs at least one translation"))?;
    let mut rows = Vec::new();
    let mut top = None;
    for &q1 in translations {
        let v = workspace_volumes(geom, limits, q1, WorkspaceMode::SemiActive, opts)?;
        if q1 == q_top {
            top = Some(v);
        }
        rows.push(WorkspaceRow {
            q1_max: q1,
            mode: WorkspaceMode::SemiActive,
            reachable_mm3: v.reachable,
            total_mm3: v.total,
        });
    }
    let general = workspace_volumes(geom, limits, q_top, WorkspaceMode::General, opts)?;
    rows.push(WorkspaceRow {
        q1_max: q_top,
        mode: WorkspaceMode::General,
        reachable_mm3: general.reachable,
        total_mm3: general.total,
    });
    let top = top.expect("largest translation is in the list");
    Ok(WorkspaceReport {
        rows,
        gain_ratio: top.total / general.reachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_digits() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn simpson_on_sphere_and_cylinder() {
        let h = 0.5;
        let sphere =
            WorkspaceGrid::rasterize([-22.0; 3], [22.0; 3], h, |p| p.norm() <= 20.0).unwrap();
        let v = simpson_volume(&sphere);
        let exact = 4.0 / 3.0 * PI * 8000.0;
        assert!((v - exact).abs() / exact < 0.03, "{v} vs {exact}");

        let cyl = WorkspaceGrid::rasterize([-12.0, -12.0, -2.0], [12.0, 12.0, 32.0], h, |p| {
            p.x * p.x + p.y * p.y <= 100.0 && (0.0..=30.0).contains(&p.z)
        })
        .unwrap();
        let v = simpson_volume(&cyl);
        let exact = 3000.0 * PI;
        assert!((v - exact).abs() / exact < 0.03, "{v} vs {exact}");
    }

    #[test]
    fn empty_grid_has_zero_volume() {
        let g = WorkspaceGrid::empty([0.0; 3], [4, 4, 4], 1.0).unwrap();
        assert_eq!(simpson_volume(&g), 0.0);
    }

    #[test]
    fn zero_samples_are_rejected() {
        let r = sample_points(
            &SegmentParams::default(),
            &JointLimits::default(),
            0.0,
            WorkspaceMode::General,
            0,
            1,
        );
        assert!(r.is_err());
        assert!(WorkspaceGrid::from_points(&[], 1.0, 0).is_err());
    }

    #[test]
    fn grid_encloses_points() {
        let pts = vec![Vector3::new(-3.2, 0.1, 7.9), Vector3::new(4.0, -2.5, 1.0)];
        let g = WorkspaceGrid::from_points(&pts, 1.0, 1).unwrap();
        for p in &pts {
            assert!(g.voxel_of(p).is_some());
        }
        assert_eq!(g.occupied(), 2);
    }

    #[test]
    fn closing_fills_small_gaps_only() {
        let mut g = WorkspaceGrid::empty([0.0; 3], [20, 5, 5], 1.0).unwrap();
        for i in 3..17 {
            if i != 9 {
                let idx = g.index(i, 2, 2);
                g.cells[idx] = true;
            }
        }
        g.close(1);
        assert!(g.get(9, 2, 2));
        assert!(!g.get(1, 2, 2));
        assert!(!g.get(9, 0, 2));
    }

    #[test]
    fn cavity_fill_marks_enclosed_space() {
        let shell = WorkspaceGrid::rasterize([-6.0; 3], [6.0; 3], 1.0, |p| {
            let r = p.norm();
            (3.0..=5.0).contains(&r)
        })
        .unwrap();
        let filled = shell.fill_cavities();
        assert!(filled.occupied() > shell.occupied());
        let centre = filled.voxel_of(&Vector3::new(0.1, 0.1, 0.1)).unwrap();
        assert!(filled.cells()[centre]);
        assert!(!shell.cells()[centre]);
    }

    #[test]
    fn run_lengths_cover_grid() {
        let g = WorkspaceGrid::rasterize([-3.0; 3], [3.0; 3], 1.0, |p| p.norm() < 2.0).unwrap();
        let runs = g.run_lengths();
        assert_eq!(runs.iter().sum::<usize>(), g.cells().len());
        let occupied: usize = runs.iter().skip(1).step_by(2).sum();
        assert_eq!(occupied, g.occupied());
    }

    #[test]
    fn modes_agree_without_translation() {
        let g = SegmentParams::default();
        let l = JointLimits::default();
        let a = sample_points(&g, &l, 0.0, WorkspaceMode::SemiActive, 5000, 3).unwrap();
        let b = sample_points(&g, &l, 0.0, WorkspaceMode::General, 5000, 3).unwrap();
        assert_eq!(a, b);
    }
}
