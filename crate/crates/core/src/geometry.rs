//! Undeformed mesh geometry, pairwise distances and the distance-threshold
//! pruning mask.
//!
//! A flattened mesh vector of length `d = 3m` is laid out block-wise: all x
//! coordinates first, then all y, then all z. Point `i` therefore owns the
//! positions `i`, `m + i` and `2m + i`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered set of 3D points. Point order is meaningful: it fixes the output
/// positions of every network built on top of the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    points: Vec<[f64; 3]>,
}

impl Mesh {
    /// Rejects empty point lists and non-finite coordinates.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("mesh must contain at least one point".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "mesh point {i} ({}, {}, {})",
                    p[0], p[1], p[2]
                )));
            }
        }
        Ok(Self { points })
    }

    /// Rebuilds a mesh from a block-layout vector `[x.., y.., z..]`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(3) {
            return Err(Error::InvalidInput(format!(
                "flat mesh length {} is not a positive multiple of 3",
                coords.len()
            )));
        }
        let m = coords.len() / 3;
        let points = (0..m)
            .map(|i| [coords[i], coords[m + i], coords[2 * m + i]])
            .collect();
        Self::new(points)
    }

    /// Block-layout vector `[x.., y.., z..]` of length `3m`.
    pub fn to_flat(&self) -> Vec<f64> {
        let m = self.len();
        let mut out = vec![0.0; 3 * m];
        for (i, p) in self.points.iter().enumerate() {
            out[i] = p[0];
            out[m + i] = p[1];
            out[2 * m + i] = p[2];
        }
        out
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Number of points `m`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a `x,y,z` CSV file, one row per point.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x", "y", "z"] {
            return Err(Error::format(path, "expected header `x,y,z`"));
        }
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::format(path, format!("row {row} has {} fields", record.len())));
            }
            let mut p = [0.0; 3];
            for (c, field) in record.iter().enumerate() {
                p[c] = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(path, format!("row {row}: bad number `{field}`")))?;
            }
            points.push(p);
        }
        Self::new(points)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,y,z\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Dense symmetric matrix of Euclidean distances between mesh points.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

/// Computes all pairwise distances of the mesh. Each unordered pair is
/// evaluated once and mirrored, so the result is exactly symmetric.
pub fn pairwise_distances(mesh: &Mesh) -> DistanceMatrix {
    let m = mesh.len();
    let pts = mesh.points();
    let mut entries = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let dx = pts[i][0] - pts[j][0];
            let dy = pts[i][1] - pts[j][1];
            let dz = pts[i][2] - pts[j][2];
            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
            entries[i * m + j] = dist;
            entries[j * m + i] = dist;
        }
    }
    DistanceMatrix { m, entries }
}

/// Binary pruning mask `C(alpha)` in row-compressed form.
///
/// Row `i` lists, in ascending order, every column `j` with `D_ij <= alpha`.
/// The threshold is inclusive, so the diagonal is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    m: usize,
    alpha: f64,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl PruneMask {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of kept positions, `c(alpha)`.
    pub fn count(&self) -> usize {
        self.col_idx.len()
    }

    /// Fraction `c(alpha) / m^2`.
    pub fn density(&self) -> f64 {
        self.count() as f64 / (self.m as f64 * self.m as f64)
    }

    /// Sorted columns kept in row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Offsets into the value array, length `m + 1`.
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.m && self.row(i).binary_search(&j).is_ok()
    }

    /// (min, max) number of kept entries per row.
    pub fn degree_range(&self) -> (usize, usize) {
        self.row_ptr
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((usize::MAX, 0), |(lo, hi), n| (lo.min(n), hi.max(n)))
    }

    /// Iterator over kept `(i, j)` pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    /// Mask that keeps every position.
    pub fn full(m: usize) -> Self {
        let row_ptr = (0..=m).map(|i| i * m).collect();
        let col_idx = (0..m).flat_map(|_| 0..m).collect();
        Self {
            m,
            alpha: f64::INFINITY,
            row_ptr,
            col_idx,
        }
    }

    /// Rebuilds a mask from an explicit list of kept pairs, checking the
    /// symmetry and diagonal invariants.
    pub fn from_pairs(m: usize, alpha: f64, pairs: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("mask dimension must be positive".into()));
        }
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(i, j) in pairs {
            if i >= m || j >= m {
                return Err(Error::InvalidInput(format!("mask pair ({i}, {j}) out of range for m = {m}")));
            }
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut col_idx = Vec::with_capacity(pairs.len());
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let mask = Self {
            m,
            alpha,
            row_ptr,
            col_idx,
        };
        for i in 0..m {
            if !mask.contains(i, i) {
                return Err(Error::InvalidInput(format!("mask is missing diagonal entry {i}")));
            }
            for &j in mask.row(i) {
                if !mask.contains(j, i) {
                    return Err(Error::InvalidInput(format!("mask is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(mask)
    }

    /// Writes the kept pairs as `i,j` CSV rows, lexicographically sorted.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "i,j")?;
            for (i, j) in self.pairs() {
                writeln!(out, "{i},{j}")?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, m: usize, alpha: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |idx: usize| -> Result<usize> {
                record
                    .get(idx)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::format(path, "expected integer `i,j` rows"))
            };
            pairs.push((parse(0)?, parse(1)?));
        }
        Self::from_pairs(m, alpha, &pairs)
    }
}

/// Builds `C(alpha)`: position `(i, j)` is kept iff `D_ij <= alpha`.
pub fn build_mask(dist: &DistanceMatrix, alpha: f64) -> Result<PruneMask> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidInput(format!("pruning threshold must be >= 0, got {alpha}")));
    }
    let m = dist.dim();
    let mut row_ptr = Vec::with_capacity(m + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for i in 0..m {
        col_idx.extend(
            dist.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &d)| d <= alpha)
                .map(|(j, _)| j),
        );
        row_ptr.push(col_idx.len());
    }
    Ok(PruneMask {
        m,
        alpha,
        row_ptr,
        col_idx,
    })
}

/// `c(alpha)`, the number of kept weight positions.
pub fn mask_count(mask: &PruneMask) -> usize {
    mask.count()
}

/// Per-point mean of a set of flattened meshes.
pub fn reference_mesh<'a, I>(coords: I) -> Result<Mesh>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for c in coords {
        if n == 0 {
            sum = vec![0.0; c.len()];
        } else if c.len() != sum.len() {
            return Err(Error::Dimension {
                context: "reference_mesh",
                expected: sum.len(),
                actual: c.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(c) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("reference mesh needs at least one sample".into()));
    }
    let inv = 1.0 / n as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Mesh::from_flat(&sum)
}

/// Index-matched distance of every point of `coords` to its counterpart in
/// `reference`.
pub fn point_distances(coords: &[f64], reference: &Mesh) -> Result<Vec<f64>> {
    let m = reference.len();
    if coords.len() != 3 * m {
        return Err(Error::Dimension {
            context: "point_distances",
            expected: 3 * m,
            actual: coords.len(),
        });
    }
    Ok(reference
        .points()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let dx = coords[i] - r[0];
            let dy = coords[m + i] - r[1];
            let dz = coords[2 * m + i] - r[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect())
}
