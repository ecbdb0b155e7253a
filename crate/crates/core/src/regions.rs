//! Data-driven, overlapping region masks.
//!
//! Foreground voxels of the mean training image are merged bottom-up by
//! average linkage on their mean intensity, only ever joining 4-connected
//! clusters, until `R` clusters remain; each cluster is then dilated so that
//! neighbouring masks overlap.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::error::{invalid, Error, Result};
use crate::image::{Image, NormalizedSlice};

/// Label of voxels outside every cluster in [`RegionMaskSet::labels`].
pub const BACKGROUND: u32 = u32::MAX;
/// Voxels whose mean lies within this fraction of the 10th-90th percentile
/// spread above the 10th percentile count as background.
pub const BACKGROUND_MARGIN: f64 = 0.05;

/// Binary mask over an image grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                got: vec![bits.len()],
            });
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Linear indices of the set voxels.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn masked_sum(&self, image: &Image) -> Result<f64> {
        if image.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows, self.cols],
                got: vec![image.rows(), image.cols()],
            });
        }
        Ok(self
            .bits
            .iter()
            .zip(image.as_slice())
            .filter_map(|(&b, &v)| b.then_some(v))
            .sum())
    }

    /// Grows the mask by `steps` voxels in the 4-neighbourhood.
    pub fn dilate(&self, steps: usize) -> Self {
        let mut cur = self.bits.clone();
        for _ in 0..steps {
            let mut next = cur.clone();
            for r in 0..self.rows {
                for c in 0..self.cols {
                    if cur[r * self.cols + c] {
                        continue;
                    }
                    let hit = (r > 0 && cur[(r - 1) * self.cols + c])
                        || (r + 1 < self.rows && cur[(r + 1) * self.cols + c])
                        || (c > 0 && cur[r * self.cols + c - 1])
                        || (c + 1 < self.cols && cur[r * self.cols + c + 1]);
                    if hit {
                        next[r * self.cols + c] = true;
                    }
                }
            }
            cur = next;
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: cur,
        }
    }
}

/// The fixed region set used by the regional constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaskSet {
    masks: Vec<Mask>,
    labels: Vec<u32>,
    provenance: u64,
}

impl RegionMaskSet {
    /// Wraps masks loaded from storage. The undilated partition is not
    /// recoverable from dilated masks, so `labels` is left as background.
    pub fn from_masks(masks: Vec<Mask>, provenance: u64) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(invalid("a region set needs at least one mask"));
        };
        let shape = first.shape();
        if let Some(m) = masks.iter().find(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.0, shape.1],
                got: vec![m.rows, m.cols],
            });
        }
        if masks.iter().any(|m| m.count() == 0) {
            return Err(invalid("region masks must be non-empty"));
        }
        Ok(Self {
            labels: vec![BACKGROUND; shape.0 * shape.1],
            masks,
            provenance,
        })
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.masks[0].shape()
    }

    /// Undilated cluster label per voxel, [`BACKGROUND`] outside.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn provenance(&self) -> u64 {
        self.provenance
    }

    pub fn mean_mask_size(&self) -> f64 {
        self.masks.iter().map(Mask::count).sum::<usize>() as f64 / self.masks.len() as f64
    }
}

/// Per-voxel mean over the training slices.
pub fn mean_image(slices: &[NormalizedSlice]) -> Result<Image> {
    let Some(first) = slices.first() else {
        return Err(invalid("region building needs at least one training slice"));
    };
    let (rows, cols) = first.image().shape();
    let mut acc = vec![0.0; rows * cols];
    for s in slices {
        first.image().ensure_same_shape(s.image())?;
        for (a, v) in acc.iter_mut().zip(s.image().as_slice()) {
            *a += v;
        }
    }
    let n = slices.len() as f64;
    Image::from_vec(rows, cols, acc.into_iter().map(|v| v / n).collect())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Voxels of the mean image that belong to tissue.
pub fn foreground(mean: &Image) -> Vec<bool> {
    let mut sorted = mean.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let p10 = percentile(&sorted, 0.10);
    let p90 = percentile(&sorted, 0.90);
    let threshold = p10 + BACKGROUND_MARGIN * (p90 - p10);
    mean.as_slice().iter().map(|&v| v > threshold).collect()
}

fn fnv1a(slices: &[NormalizedSlice]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in slices {
        for v in s.image().as_slice() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

struct Cluster {
    /// Smallest linear voxel index; the cluster's identity.
    id: usize,
    members: Vec<usize>,
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    neighbours: BTreeSet<usize>,
    version: u32,
    alive: bool,
}

impl Cluster {
    fn singleton(voxel: usize, feature: f64) -> Self {
        Self {
            id: voxel,
            members: vec![voxel],
            sorted: vec![feature],
            prefix: vec![0.0, feature],
            neighbours: BTreeSet::new(),
            version: 0,
            alive: true,
        }
    }
}

/// Mean absolute feature difference over all cross pairs, in O(n + m) using
/// sorted features and prefix sums.
fn average_linkage(a: &Cluster, b: &Cluster) -> f64 {
    let m = b.sorted.len();
    let total_b = b.prefix[m];
    let mut k = 0;
    let mut sum = 0.0;
    for &x in &a.sorted {
        while k < m && b.sorted[k] <= x {
            k += 1;
        }
        let below = b.prefix[k];
        sum += x * k as f64 - below + (total_b - below) - x * (m - k) as f64;
    }
    sum / (a.sorted.len() * m) as f64
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    lo: usize,
    hi: usize,
    lo_version: u32,
    hi_version: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds `r` region masks from normalized training slices.
pub fn build_region_masks(
    training: &[NormalizedSlice],
    r: usize,
    dilation: usize,
) -> Result<RegionMaskSet> {
    if r < 2 {
        return Err(invalid(format!("need at least two regions, got {r}")));
    }
    let mean = mean_image(training)?;
    let fg = foreground(&mean);
    let mut set = cluster_regions(&mean, &fg, r, dilation)?;
    set.provenance = fnv1a(training);
    Ok(set)
}

/// Clusters the voxels flagged in `fg` into exactly `r` connected groups.
pub fn cluster_regions(
    feature: &Image,
    fg: &[bool],
    r: usize,
    dilation: usize,
) -> Result<RegionMaskSet> {
    let (rows, cols) = feature.shape();
    let n_fg = fg.iter().filter(|&&b| b).count();
    if r > n_fg {
        return Err(invalid(format!(
            "{r} regions requested but only {n_fg} foreground voxels"
        )));
    }
    // slot[v] = index into `clusters` of the cluster holding voxel v
    let mut clusters: Vec<Cluster> = Vec::with_capacity(n_fg);
    let mut slot = vec![usize::MAX; rows * cols];
    for (v, &on) in fg.iter().enumerate() {
        if on {
            slot[v] = clusters.len();
            clusters.push(Cluster::singleton(v, feature.as_slice()[v]));
        }
    }
    for v in 0..rows * cols {
        if slot[v] == usize::MAX {
            continue;
        }
        let (vr, vc) = (v / cols, v % cols);
        let right = (vc + 1 < cols).then_some(v + 1);
        let down = (vr + 1 < rows).then_some(v + cols);
        for u in [right, down].into_iter().flatten() {
            if slot[u] != usize::MAX {
                clusters[slot[v]].neighbours.insert(slot[u]);
                clusters[slot[u]].neighbours.insert(slot[v]);
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<Reverse<Candidate>>, cl: &[Cluster], i: usize, j: usize| {
        let (a, b) = (&cl[i], &cl[j]);
        let (lo, hi) = if a.id < b.id { (i, j) } else { (j, i) };
        heap.push(Reverse(Candidate {
            dist: average_linkage(a, b),
            lo,
            hi,
            lo_version: cl[lo].version,
            hi_version: cl[hi].version,
        }));
    };
    for i in 0..clusters.len() {
        let higher: Vec<usize> = clusters[i].neighbours.range(i + 1..).copied().collect();
        for j in higher {
            push(&mut heap, &clusters, i, j);
        }
    }

    let mut remaining = clusters.len();
    while remaining > r {
        let Some(Reverse(best)) = heap.pop() else {
            return Err(invalid(format!(
                "foreground splits into {remaining} disconnected parts, more than {r} regions"
            )));
        };
        let (lo, hi) = (best.lo, best.hi);
        if !clusters[lo].alive
            || !clusters[hi].alive
            || clusters[lo].version != best.lo_version
            || clusters[hi].version != best.hi_version
        {
            continue;
        }
        // absorb `hi` into `lo` (lo keeps the smaller voxel id)
        let absorbed = core::mem::replace(&mut clusters[hi], Cluster::singleton(0, 0.0));
        clusters[hi].alive = false;
        let keep = &mut clusters[lo];
        keep.members.extend(absorbed.members);
        keep.sorted = merge_sorted(&keep.sorted, &absorbed.sorted);
        keep.prefix = prefix_sums(&keep.sorted);
        keep.neighbours.extend(absorbed.neighbours);
        keep.neighbours.remove(&lo);
        keep.neighbours.remove(&hi);
        keep.version += 1;
        let neighbours: Vec<usize> = keep.neighbours.iter().copied().collect();
        for nb in neighbours {
            let set = &mut clusters[nb].neighbours;
            set.remove(&hi);
            set.insert(lo);
            push(&mut heap, &clusters, lo, nb);
        }
        remaining -= 1;
    }

    let mut alive: Vec<&Cluster> = clusters.iter().filter(|c| c.alive).collect();
    alive.sort_by_key(|c| c.id);
    let mut labels = vec![BACKGROUND; rows * cols];
    let mut masks = Vec::with_capacity(alive.len());
    for (label, c) in alive.iter().enumerate() {
        let mut bits = vec![false; rows * cols];
        for &v in &c.members {
            bits[v] = true;
            labels[v] = label as u32;
        }
        masks.push(Mask { rows, cols, bits }.dilate(dilation));
    }
    Ok(RegionMaskSet {
        masks,
        labels,
        provenance: 0,
    })
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    p.push(0.0);
    for x in v {
        acc += x;
        p.push(acc);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linkage_matches_brute_force() {
        let mk = |vals: &[f64]| {
            let mut c = Cluster::singleton(0, vals[0]);
            for &v in &vals[1..] {
                c.sorted = merge_sorted(&c.sorted, &[v]);
            }
            c.prefix = prefix_sums(&c.sorted);
            c
        };
        let a = [0.3, -1.0, 2.5, 0.3];
        let b = [1.0, 0.3, -0.2];
        let mut brute = 0.0;
        for x in a {
            for y in b {
                brute += f64::abs(x - y);
            }
        }
        brute /= 12.0;
        assert!((average_linkage(&mk(&a), &mk(&b)) - brute).abs() < 1e-12);
        assert!((average_linkage(&mk(&b), &mk(&a)) - brute).abs() < 1e-12);
    }

    #[test]
    fn dilation_grows_by_manhattan_ball() {
        let m = Mask::from_fn(5, 5, |r, c| r == 2 && c == 2);
        assert_eq!(m.dilate(1).count(), 5);
        assert_eq!(m.dilate(2).count(), 13);
        assert_eq!(m.dilate(0), m);
    }

    #[test]
    fn too_many_regions_is_rejected() {
        let img = Image::from_fn(4, 4, |r, c| if r == 1 && c < 2 { 1.0 } else { 0.0 });
        let fg: Vec<bool> = img.as_slice().iter().map(|&v| v > 0.0).collect();
        assert!(cluster_regions(&img, &fg, 3, 0).is_err());
        assert!(cluster_regions(&img, &fg, 2, 0).is_ok());
    }

    #[test]
    fn disconnected_parts_beyond_r_are_rejected() {
        let img = Image::from_fn(5, 5, |r, c| if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 });
        let fg: Vec<bool> = img.as_slice().iter().map(|&v| v > 0.0).collect();
        assert!(cluster_regions(&img, &fg, 2, 0).is_err());
    }

    #[test]
    fn adjacent_clusters_overlap_after_dilation() {
        // left half 0.2, right half 0.9: two clusters sharing a boundary
        let img = Image::from_fn(6, 6, |_, c| if c < 3 { 0.2 } else { 0.9 });
        let fg = vec![true; 36];
        let set = cluster_regions(&img, &fg, 2, 1).unwrap();
        assert_eq!(set.len(), 2);
        let overlap = set.masks()[0]
            .bits()
            .iter()
            .zip(set.masks()[1].bits())
            .filter(|(a, b)| **a && **b)
            .count();
        assert_eq!(overlap, 12);
        let undilated = cluster_regions(&img, &fg, 2, 0).unwrap();
        assert_eq!(undilated.masks()[0], Mask::from_fn(6, 6, |_, c| c < 3));
    }
}
