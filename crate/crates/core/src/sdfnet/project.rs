use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Linear 2-D (or `dims`-D) view of a latent table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    /// One row of `dims` coordinates per latent.
    pub coords: Vec<Vec<f64>>,
    /// Principal directions, one row per component.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Principal-component projection of centred latents.
///
/// Identical latents give zero coordinates and zero ratios.
pub fn project_latents(latents: &[Vec<f64>], dims: usize) -> Result<Projection> {
    if latents.len() < 2 {
        return Err(Error::InvalidArgument("projection needs at least two latents".into()));
    }
    let d = latents[0].len();
    if let Some(bad) = latents.iter().find(|z| z.len() != d) {
        return Err(Error::shape("latent", &[d], &[bad.len()]));
    }
    if dims == 0 || dims > d {
        return Err(Error::InvalidArgument(format!("cannot project {d}-d latents to {dims} dims")));
    }
    let n = latents.len();
    let mut mean = vec![0.0; d];
    for z in latents {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| latents[i][j] - mean[j]);
    let cov = x.transpose() * &x;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(dims);
    let mut ratios = Vec::with_capacity(dims);
    for &k in order.iter().take(dims) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // deterministic sign: largest-magnitude entry positive
        let lead = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        ratios.push(if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 });
    }
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| if total > 0.0 { (0..d).map(|j| x[(i, j)] * c[j]).sum() } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Projection {
        coords,
        components,
        explained_variance_ratio: ratios,
    })
}
