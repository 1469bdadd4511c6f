use crate::error::{Error, Result};
use crate::model::{mean, Vec3};

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with the matching unit
/// eigenvectors.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A' = Jᵀ A J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }

    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = idx.map(|i| a[i][i]);
    let vectors = idx.map(|i| Vec3::new(v[0][i], v[1][i], v[2][i]));
    (values, vectors)
}

/// Least-squares plane through a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub centroid: Vec3,
    pub normal: Vec3,
    /// Ascending covariance eigenvalues.
    pub eigenvalues: [f64; 3],
}

impl PlaneFit {
    pub fn fit(points: &[Vec3]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate("degenerate segment"));
        }
        let centroid = mean(points).expect("non-empty");
        let mut cov = [[0.0f64; 3]; 3];
        for &p in points {
            let d = (p - centroid).to_array();
            for i in 0..3 {
                for j in i..3 {
                    cov[i][j] += d[i] * d[j];
                }
            }
        }
        let n = points.len() as f64;
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] /= n;
                cov[j][i] = cov[i][j];
            }
        }
        let (values, vectors) = symmetric_eigen3(cov);
        // Collinear or coincident points leave the plane undetermined.
        if !(values[2] > 0.0) || values[1] <= 1e-9 * values[2] {
            return Err(Error::Degenerate("degenerate segment"));
        }
        Ok(Self {
            centroid,
            normal: canonical_sign(vectors[0]),
            eigenvalues: values,
        })
    }

    /// Fraction of variance off the plane: 0 for a perfect plane.
    pub fn curvature(&self) -> f64 {
        let sum: f64 = self.eigenvalues.iter().sum();
        if sum > 0.0 {
            self.eigenvalues[0].max(0.0) / sum
        } else {
            0.0
        }
    }
}

/// Flips `n` so that its largest-magnitude component is positive.
fn canonical_sign(n: Vec3) -> Vec3 {
    let a = n.to_array();
    let mut best = 0;
    for i in 1..3 {
        if a[i].abs() > a[best].abs() {
            best = i;
        }
    }
    let n = n.normalized().unwrap_or(n);
    if a[best] < 0.0 {
        -n
    } else {
        n
    }
}

/// Unit normal of the best-fit plane (smallest-variance direction).
pub fn pca_normal(points: &[Vec3]) -> Result<Vec3> {
    PlaneFit::fit(points).map(|f| f.normal)
}
