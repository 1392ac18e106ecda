use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedder::Embedding;
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub points: Vec<PcaPoint>,
    /// Variance along the first and second component.
    pub variances: [f64; 2],
}

/// Projection onto the top two principal components of the mean-centered data.
/// Each component's sign is fixed so its largest-magnitude loading is positive.
pub fn pca2(embeddings: &[Embedding], counts: &[usize]) -> Result<Pca2> {
    if embeddings.len() < 3 || embeddings.len() != counts.len() {
        return Err(Error::InvalidConfig(
            "need at least three embeddings, each with a count".into(),
        ));
    }
    let n = embeddings.len();
    let d = embeddings[0].dim();
    if d < 2 {
        return Err(Error::DegenerateSpread);
    }
    let mut data = DMatrix::from_fn(n, d, |r, c| embeddings[r].as_slice()[c]);
    let mean = data.row_mean();
    for mut row in data.row_iter_mut() {
        row -= &mean;
    }
    let cov = data.transpose() * &data / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if l1.is_nan() || l2.is_nan() || l1 <= 0.0 || l2 <= RANK_TOL * l1 {
        return Err(Error::DegenerateSpread);
    }
    let component = |k: usize| {
        let mut v = eig.eigenvectors.column(order[k]).into_owned();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.neg_mut();
        }
        v
    };
    let (pc1, pc2) = (component(0), component(1));
    let xs = &data * pc1;
    let ys = &data * pc2;
    Ok(Pca2 {
        points: (0..n)
            .map(|i| PcaPoint {
                x: xs[i],
                y: ys[i],
                count: counts[i],
            })
            .collect(),
        variances: [l1, l2],
    })
}

impl Pca2 {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            out.serialize(p)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_plane_is_recovered() {
        // Centered 2-D points embedded in 5-D by a fixed orthonormal pair.
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                (3.0 * t.cos(), t.sin())
            })
            .collect();
        let (mx, my) = (
            pts.iter().map(|p| p.0).sum::<f64>() / 40.0,
            pts.iter().map(|p| p.1).sum::<f64>() / 40.0,
        );
        let pts: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x - mx, y - my)).collect();
        let s = 0.5f64.sqrt();
        let u = [s, s, 0.0, 0.0, 0.0];
        let v = [0.0, 0.0, s, -s, 0.0];
        let emb: Vec<Embedding> = pts
            .iter()
            .map(|&(x, y)| Embedding::new((0..5).map(|k| x * u[k] + y * v[k]).collect()))
            .collect();
        let out = pca2(&emb, &vec![0; 40]).unwrap();
        assert_eq!(out.points.len(), 40);
        assert!(out.variances[0] >= out.variances[1]);

        // Best rotation/reflection aligning the output to the planted coordinates
        // (orthogonal Procrustes in 2-D, solved in closed form).
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for (p, q) in out.points.iter().zip(&pts) {
            a += p.x * q.0;
            b += p.x * q.1;
            c += p.y * q.0;
            d += p.y * q.1;
        }
        let m = nalgebra::Matrix2::new(a, b, c, d);
        let svd = m.svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        let residual: f64 = out
            .points
            .iter()
            .zip(&pts)
            .map(|(p, q)| {
                let rp = r.transpose() * nalgebra::Vector2::new(p.x, p.y);
                (rp[0] - q.0).powi(2) + (rp[1] - q.1).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(residual <= 1e-8, "{residual}");
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Embedding> = (0..10)
            .map(|i| Embedding::new(vec![i as f64, 2.0 * i as f64, 0.0]))
            .collect();
        assert!(matches!(
            pca2(&line, &[0; 10]),
            Err(Error::DegenerateSpread)
        ));
        let two = vec![Embedding::new(vec![1.0, 0.0]); 2];
        assert!(pca2(&two, &[0; 2]).is_err());
    }
}
