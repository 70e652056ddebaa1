//! Zeroth persistent homology of point clouds built from image patches.
//!
//! For the Rips 1-skeleton every component is born at `r = 0` and components
//! merge exactly at the edge lengths of a Euclidean minimum spanning tree, so
//! the barcode is the sorted list of MST edge weights.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum HomologyError {
    #[error("point cloud is empty")]
    Empty,
    #[error("point cloud has zero diameter")]
    ZeroDiameter,
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("image {index} is {shape:?}, smaller than patch size {patch}")]
    ImageTooSmall { index: usize, shape: (usize, usize), patch: usize },
    #[error("no source images")]
    NoImages,
    #[error("points have different dimensions")]
    Ragged,
}

/// Which family of patches a cloud was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Manifold {
    XyImage,
    XyResidual,
    SpatioTemporalImage,
    SpatioTemporalResidual,
}

impl Manifold {
    pub const ALL: [Manifold; 4] =
        [Manifold::XyImage, Manifold::XyResidual, Manifold::SpatioTemporalImage, Manifold::SpatioTemporalResidual];

    pub fn tag(&self) -> &'static str {
        match self {
            Manifold::XyImage => "xy_img",
            Manifold::XyResidual => "xy_res",
            Manifold::SpatioTemporalImage => "xtyt_img",
            Manifold::SpatioTemporalResidual => "xtyt_res",
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `n` points in `R^d`, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub manifold: Option<Manifold>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self, HomologyError> {
        if points.nrows() == 0 {
            return Err(HomologyError::Empty);
        }
        if let Some((i, _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(HomologyError::NonFinite(i.0));
        }
        Ok(Self { points, manifold: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, HomologyError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(HomologyError::Ragged);
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), d), flat).map_err(|_| HomologyError::Ragged)?)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

fn distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn pairwise_distances(cloud: &PointCloud) -> Array2<f64> {
    let n = cloud.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(cloud.points.row(i), cloud.points.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

pub fn diameter(cloud: &PointCloud) -> f64 {
    pairwise_distances(cloud).iter().copied().fold(0.0, f64::max)
}

/// Rescales the cloud so that its largest pairwise distance is one.
pub fn normalize_by_diameter(cloud: &PointCloud) -> Result<(PointCloud, f64), HomologyError> {
    let diam = diameter(cloud);
    if diam <= 0.0 {
        return Err(HomologyError::ZeroDiameter);
    }
    let scaled = PointCloud { points: &cloud.points / diam, manifold: cloud.manifold };
    Ok((scaled, diam))
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    components: usize,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n], components: n }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `true` when `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.components -= 1;
        true
    }

    pub fn components(&self) -> usize {
        self.components
    }
}

/// H0 barcode: all bars are born at zero and die at `deaths`.
#[derive(Debug, Clone, PartialEq)]
pub struct Barcode {
    pub deaths: Vec<f64>,
    /// Diameter the cloud was divided by, 1 if it was not normalized.
    pub scale: f64,
}

impl Barcode {
    pub fn n_points(&self) -> usize {
        self.deaths.len() + 1
    }
}

/// Barcode from single-linkage merges (Kruskal over all pairs).
pub fn h0_barcode(cloud: &PointCloud) -> Barcode {
    barcode_from_distances(&pairwise_distances(cloud).view())
}

pub fn barcode_from_distances(d: &ArrayView2<f64>) -> Barcode {
    let n = d.nrows();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((d[[i, j]], i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sets = DisjointSets::new(n);
    let mut deaths = Vec::with_capacity(n.saturating_sub(1));
    for (w, i, j) in edges {
        if sets.union(i, j) {
            deaths.push(w);
            if sets.components() == 1 {
                break;
            }
        }
    }
    Barcode { deaths, scale: 1.0 }
}

/// Number of connected components of the Rips graph at radius `r`.
pub fn betti0(barcode: &Barcode, r: f64) -> usize {
    barcode.n_points() - barcode.deaths.partition_point(|&d| d <= r)
}

pub fn betti0_curve(barcode: &Barcode, grid: &[f64]) -> Vec<usize> {
    grid.iter().map(|&r| betti0(barcode, r)).collect()
}

/// `n` uniformly spaced radii covering `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Draws `count` patches uniformly over (image, top-left corner), with replacement.
pub fn sample_patches(
    images: &[ArrayView2<f64>],
    count: usize,
    patch: usize,
    seed: u64,
) -> Result<PointCloud, HomologyError> {
    if images.is_empty() {
        return Err(HomologyError::NoImages);
    }
    for (index, img) in images.iter().enumerate() {
        if img.nrows() < patch || img.ncols() < patch || patch == 0 {
            return Err(HomologyError::ImageTooSmall { index, shape: img.dim(), patch });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((count, patch * patch));
    for mut row in points.rows_mut() {
        let img = &images[rng.random_range(0..images.len())];
        let i0 = rng.random_range(0..=img.nrows() - patch);
        let j0 = rng.random_range(0..=img.ncols() - patch);
        for a in 0..patch {
            for b in 0..patch {
                row[a * patch + b] = img[[i0 + a, j0 + b]];
            }
        }
    }
    PointCloud::new(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomologyProtocol {
    pub repeats: usize,
    pub count: usize,
    pub patch: usize,
    pub grid: Vec<f64>,
}

impl HomologyProtocol {
    pub fn desk() -> Self {
        Self { repeats: 10, count: 400, patch: 12, grid: unit_grid(200) }
    }

    pub fn full() -> Self {
        Self { repeats: 10, count: 1400, patch: 18, grid: unit_grid(200) }
    }
}

/// Mean β0 over independent repeats of sample → normalize → barcode.
pub fn averaged_betti_curve(
    images: &[ArrayView2<f64>],
    protocol: &HomologyProtocol,
    seed: u64,
) -> Result<Vec<f64>, HomologyError> {
    let curves: Vec<Vec<usize>> = (0..protocol.repeats as u64)
        .into_par_iter()
        .map(|rep| {
            let cloud = sample_patches(images, protocol.count, protocol.patch, derive_seed(seed, rep))?;
            let (unit, diam) = normalize_by_diameter(&cloud)?;
            let mut bars = h0_barcode(&unit);
            bars.scale = diam;
            Ok(betti0_curve(&bars, &protocol.grid))
        })
        .collect::<Result<_, HomologyError>>()?;
    let repeats = curves.len().max(1) as f64;
    Ok((0..protocol.grid.len()).map(|i| curves.iter().map(|c| c[i] as f64).sum::<f64>() / repeats).collect())
}
