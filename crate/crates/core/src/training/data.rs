use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synthcup::{Dataset, Label};

/// Row-major table of `rows x cols` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix storage",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Inputs and targets of one data split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Whole dataset as an input/target pair.
pub fn dataset_tables(ds: &Dataset) -> Result<Split> {
    let params: Vec<&[f64]> = ds.samples.iter().map(|s| s.params.as_slice()).collect();
    let coords: Vec<&[f64]> = ds.samples.iter().map(|s| s.coords.as_slice()).collect();
    Ok(Split {
        inputs: Matrix::from_rows(&params)?,
        targets: Matrix::from_rows(&coords)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct ColumnScaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl ColumnScaler {
    fn fit(m: &Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::InvalidInput("cannot fit standardizer on zero rows".into()));
        }
        let n = m.rows() as f64;
        let mut mean = vec![0.0; m.cols()];
        for row in m.iter_rows() {
            mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut var = vec![0.0; m.cols()];
        for row in m.iter_rows() {
            for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        // near-constant columns would otherwise be amplified rounding noise
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, mu)| {
                let sd = (s / n).sqrt();
                if sd <= 1e-12 * mu.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    fn forward(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        out
    }

    fn inverse(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * sd + mu;
            }
        }
        out
    }
}

/// Per-column z-scoring of inputs and targets, fitted on training data only.
/// Columns with (numerically) zero spread get a unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    input: ColumnScaler,
    output: ColumnScaler,
}

impl Standardizer {
    pub fn fit(train: &Split) -> Result<Self> {
        Ok(Self {
            input: ColumnScaler::fit(&train.inputs)?,
            output: ColumnScaler::fit(&train.targets)?,
        })
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input.mean
    }

    pub fn input_std(&self) -> &[f64] {
        &self.input.std
    }

    pub fn output_mean(&self) -> &[f64] {
        &self.output.mean
    }

    pub fn output_std(&self) -> &[f64] {
        &self.output.std
    }

    pub fn transform(&self, split: &Split) -> Split {
        Split {
            inputs: self.input.forward(&split.inputs),
            targets: self.output.forward(&split.targets),
        }
    }

    pub fn inverse_transform(&self, split: &Split) -> Split {
        Split {
            inputs: self.input.inverse(&split.inputs),
            targets: self.output.inverse(&split.targets),
        }
    }

    /// Maps standardized predictions back to mesh coordinates.
    pub fn inverse_outputs(&self, m: &Matrix) -> Matrix {
        self.output.inverse(m)
    }
}

/// Stratified split by class label with an explicit test-set size. Returns
/// sorted `(train, test)` index lists.
///
/// Each class contributes `round(n_class * n_test / n)` test samples; the
/// rounding surplus or deficit is then settled on the classes with the
/// largest (resp. smallest) fractional remainders.
pub fn stratified_split_count(labels: &[Label], n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidInput(format!("test size {n_test} must be in [1, {})", n)));
    }
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }

    let fraction = n_test as f64 / n as f64;
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.round() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    while assigned < n_test {
        let c = *order
            .iter()
            .find(|&&c| quota[c] < by_class[c].len())
            .ok_or_else(|| Error::Internal("no class can absorb extra test samples".into()))?;
        quota[c] += 1;
        assigned += 1;
        order.rotate_left(1);
    }
    while assigned > n_test {
        let c = *order
            .iter()
            .rev()
            .find(|&&c| quota[c] > 0)
            .ok_or_else(|| Error::Internal("no class can release test samples".into()))?;
        quota[c] -= 1;
        assigned -= 1;
        order.rotate_right(1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split with `round(n * test_fraction)` test samples.
pub fn stratified_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = (labels.len() as f64 * test_fraction).round() as usize;
    stratified_split_count(labels, n_test.max(1), seed)
}
