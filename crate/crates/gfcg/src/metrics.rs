//! Desk-scale analogues of the evaluation protocol: Precision, a Recall
//! proxy, and the closed-form Fréchet distance between Gaussian fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::classifier::{top_two, ClassifierModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub class: usize,
    pub count: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: Option<f64>,
    pub frechet: f64,
    pub per_class: Vec<ClassSummary>,
    pub nfe_mean: f64,
}

/// Fraction of samples whose classifier argmax equals the desired class.
pub fn precision(
    samples: &[(DVector<f64>, usize)],
    classifier: &ClassifierModel,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::argument("precision requires a non-empty sample list"));
    }
    let mut hits = 0usize;
    for (x, c_des) in samples {
        let probs = classifier.posterior(x)?;
        let (argmax, _) = top_two(&probs)?;
        if argmax == *c_des {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Per-class precision summaries alongside the pooled value.
pub fn per_class_precision(
    samples: &[(DVector<f64>, usize)],
    classifier: &ClassifierModel,
) -> Result<Vec<ClassSummary>> {
    if samples.is_empty() {
        return Err(Error::argument("precision requires a non-empty sample list"));
    }
    let n_classes = classifier.class_count();
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (x, c_des) in samples {
        let probs = classifier.posterior(x)?;
        let (argmax, _) = top_two(&probs)?;
        counts[*c_des] += 1;
        if argmax == *c_des {
            hits[*c_des] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|c| ClassSummary {
            class: c,
            count: counts[c],
            precision: if counts[c] == 0 {
                0.0
            } else {
                hits[c] as f64 / counts[c] as f64
            },
        })
        .collect())
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(points: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if points.len() < 2 {
        return Err(Error::argument("fit_gaussian requires at least 2 points"));
    }
    let dim = points[0].len();
    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p;
    }
    mean /= points.len() as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov /= (points.len() - 1) as f64;
    Ok((mean, cov))
}

/// Diversity proxy: fit one Gaussian per class on generated points, build the
/// induced uniform-prior Bayes classifier, report its accuracy on real points.
/// A collapsed generator yields near-singular fits and poor real accuracy.
pub fn recall_proxy(
    real: &[Vec<DVector<f64>>],
    generated: &[Vec<DVector<f64>>],
) -> Result<f64> {
    if real.len() != generated.len() || real.is_empty() {
        return Err(Error::argument(
            "recall_proxy requires matching non-empty per-class point sets",
        ));
    }
    let dim = real
        .iter()
        .flat_map(|pts| pts.first())
        .map(|p| p.len())
        .next()
        .ok_or_else(|| Error::argument("recall_proxy requires real points"))?;

    let mut fits = Vec::with_capacity(generated.len());
    for (class, points) in generated.iter().enumerate() {
        if points.len() < dim + 2 {
            return Err(Error::argument(format!(
                "class {class} has {} generated points; need at least {} for covariance estimation",
                points.len(),
                dim + 2
            )));
        }
        let (mean, mut cov) = fit_gaussian(points)?;
        // Regularize so collapsed fits stay invertible (and visibly bad).
        cov += DMatrix::identity(dim, dim) * 1e-6;
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Internal("regularized covariance not PD".into()))?;
        let log_det: f64 = (0..dim).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
        fits.push((mean, chol, log_det));
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for (class, points) in real.iter().enumerate() {
        for x in points {
            let mut best = 0usize;
            let mut best_log = f64::NEG_INFINITY;
            for (c, (mean, chol, log_det)) in fits.iter().enumerate() {
                let d = x - mean;
                let solved = chol.solve(&d);
                let lg = -0.5 * (log_det + d.dot(&solved));
                if lg > best_log {
                    best_log = lg;
                    best = c;
                }
            }
            total += 1;
            if best == class {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::argument("recall_proxy requires real points"));
    }
    Ok(correct as f64 / total as f64)
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let dim = m.nrows();
    let mut diag = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let ev = eig.eigenvalues[i];
        if ev < -1e-9 {
            return Err(Error::argument(
                "covariance is not positive semi-definite",
            ));
        }
        diag[(i, i)] = ev.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * diag * eig.eigenvectors.transpose())
}

/// Closed-form 2-Wasserstein distance (squared) between two Gaussians:
/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix square root
/// taken through the symmetric similarity transform S1^{1/2} S2 S1^{1/2}.
pub fn frechet_gaussian(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    if mean1.len() != mean2.len() {
        return Err(Error::argument("frechet_gaussian dimension mismatch"));
    }
    let check_sym = |m: &DMatrix<f64>| -> Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                    return Err(Error::argument("covariance is not symmetric"));
                }
            }
        }
        Ok(())
    };
    check_sym(cov1)?;
    check_sym(cov2)?;
    let root1 = symmetric_sqrt(cov1)?;
    let inner = &root1 * cov2 * &root1;
    let cross = symmetric_sqrt(&inner)?;
    let mean_term = (mean1 - mean2).norm_squared();
    let trace_term = (cov1 + cov2 - cross * 2.0).trace();
    Ok(mean_term + trace_term.max(0.0))
}
