use super::data::Matrix;
use crate::error::{Error, Result};

fn check_congruent(pred: &Matrix, target: &Matrix, context: &'static str) -> Result<()> {
    if pred.cols() != target.cols() {
        return Err(Error::Dimension {
            context,
            expected: target.cols(),
            actual: pred.cols(),
        });
    }
    if pred.rows() != target.rows() {
        return Err(Error::Dimension {
            context,
            expected: target.rows(),
            actual: pred.rows(),
        });
    }
    Ok(())
}

/// Mean squared error over every sample and every output.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_congruent(pred, target, "mse_loss")?;
    if pred.rows() == 0 || pred.cols() == 0 {
        return Err(Error::InvalidInput("mse_loss on an empty batch".into()));
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.as_slice().len() as f64)
}

/// Uniform average over outputs of `1 - SS_res / SS_tot`.
///
/// Outputs whose targets are all identical have no defined score: they count
/// as 1 when predicted exactly and are left out of the average otherwise.
pub fn r2_score(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_congruent(pred, target, "r2_score")?;
    let n = target.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("r2_score needs at least 2 samples, got {n}")));
    }
    let cols = target.cols();
    let mut mean = vec![0.0; cols];
    let mut lo = vec![f64::INFINITY; cols];
    let mut hi = vec![f64::NEG_INFINITY; cols];
    for row in target.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    let mut ss_res = vec![0.0; cols];
    let mut ss_tot = vec![0.0; cols];
    for (p_row, t_row) in pred.iter_rows().zip(target.iter_rows()) {
        for j in 0..cols {
            let e = t_row[j] - p_row[j];
            let c = t_row[j] - mean[j];
            ss_res[j] += e * e;
            ss_tot[j] += c * c;
        }
    }

    let mut total = 0.0;
    let mut counted = 0usize;
    for j in 0..cols {
        if lo[j] == hi[j] {
            if ss_res[j] == 0.0 {
                total += 1.0;
                counted += 1;
            }
        } else {
            total += 1.0 - ss_res[j] / ss_tot[j];
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidInput("r2_score: no output has target variance".into()));
    }
    Ok(total / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_cases() {
        let t = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let shifted = mat(&[&[2.0, 3.0], &[4.0, 5.0]]);
        assert_eq!(mse_loss(&shifted, &t).unwrap(), 1.0);
        assert_eq!(mse_loss(&mat(&[&[1.0, 3.0]]), &mat(&[&[0.0, 0.0]])).unwrap(), 5.0);
        assert!(mse_loss(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn r2_cases() {
        let t = mat(&[&[0.0, 1.0], &[1.0, 5.0], &[2.0, 3.0]]);
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        let mean = mat(&[&[1.0, 3.0], &[1.0, 3.0], &[1.0, 3.0]]);
        assert_eq!(r2_score(&mean, &t).unwrap(), 0.0);
        let r = r2_score(&mat(&[&[0.0], &[1.0], &[1.0]]), &mat(&[&[0.0], &[1.0], &[2.0]])).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn r2_constant_outputs() {
        let t = mat(&[&[0.0, 7.0], &[2.0, 7.0]]);
        // exact constant prediction counts as 1
        assert_eq!(r2_score(&mat(&[&[0.0, 7.0], &[2.0, 7.0]]), &t).unwrap(), 1.0);
        // wrong constant prediction is left out, leaving only column 0
        let p = mat(&[&[1.0, 6.0], &[1.0, 6.5]]);
        assert_eq!(r2_score(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn r2_errors() {
        let one = mat(&[&[1.0]]);
        assert!(r2_score(&one, &one).is_err());
        let t = mat(&[&[1.0], &[2.0]]);
        assert!(r2_score(&mat(&[&[1.0, 2.0], &[1.0, 2.0]]), &t).is_err());
    }
}
