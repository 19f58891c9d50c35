//! Measurements over trained models: reconstruction quality against the
//! analytic shapes and edit behaviour on probe latents.

use serde::Serialize;

use crate::editor::EditorParams;
use crate::error::{Error, Result};
use crate::geometry::{chamfer, measure_attributes, Mesh};
use crate::regressor::Regressor;
use crate::sdfnet::{reconstruct, Decoder, SdfModel};
use crate::synthcars::DatasetManifest;

/// Multiple of the analytic re-extraction error a reconstruction may reach.
pub const TAU_FACTOR: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChamferSettings {
    pub resolution: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for ChamferSettings {
    fn default() -> Self {
        Self {
            resolution: 64,
            points: 5000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconRow {
    pub id: String,
    pub chamfer: f64,
    /// Chamfer of the analytic field's own extraction at the same resolution.
    pub baseline: f64,
    pub tau: f64,
    pub pass: bool,
}

/// Reconstruct every training shape from its latent and compare with the
/// stored ground-truth mesh.
pub fn reconstruction_table(manifest: &DatasetManifest, model: &SdfModel, s: &ChamferSettings) -> Result<Vec<ReconRow>> {
    let mut rows = Vec::with_capacity(manifest.shapes.len());
    for (i, shape) in manifest.shapes.iter().enumerate() {
        let k = model.shape_ids.iter().position(|id| *id == shape.id).ok_or_else(|| Error::InvalidArgument(format!("shape `{}` has no latent", shape.id)))?;
        let gt = manifest.load_mesh(i)?;
        let rec = reconstruct(&model.decoder, model.latent(k), s.resolution)?;
        let c = if rec.is_empty() { f64::INFINITY } else { chamfer(&gt, &rec, s.points, s.seed)? };
        let baseline = chamfer(&gt, &manifest.normalized_car(i).mesh(s.resolution)?, s.points, s.seed)?;
        let tau = TAU_FACTOR * baseline;
        rows.push(ReconRow {
            id: shape.id.clone(),
            chamfer: c,
            baseline,
            tau,
            pass: c <= tau,
        });
    }
    Ok(rows)
}

/// Bounding-box height of the largest connected piece of `mesh`.
pub fn body_height(mesh: &Mesh) -> Result<f64> {
    Ok(measure_attributes(&mesh.largest_component())?.height)
}

/// Latents whose predicted value for every attribute in `attrs` leaves room
/// for a `+eps` edit inside `[0, 1]`, at most `limit` of them.
pub fn select_probes(regressor: &Regressor, latents: &[Vec<f64>], attrs: &[usize], eps: f64, limit: usize) -> Result<Vec<Vec<f64>>> {
    let pred = regressor.predict_batch(latents)?;
    Ok(latents
        .iter()
        .zip(&pred)
        .filter(|(_, a)| attrs.iter().all(|&k| a[k] + eps <= 1.0 && a[k] + eps >= 0.0))
        .take(limit)
        .map(|(z, _)| z.clone())
        .collect())
}

fn eps_for(n: usize, attrs: &[usize], eps: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &k in attrs {
        v[k] = eps;
    }
    v
}

/// Fraction of probes whose predicted `attr` strictly increases along
/// `steps` (taken in order).
pub fn monotone_fraction(editor: &EditorParams, regressor: &Regressor, probes: &[Vec<f64>], attr: usize, steps: &[f64]) -> Result<f64> {
    let n = editor.modules.len();
    let mut good = 0;
    for z in probes {
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for &e in steps {
            let v = regressor.predict(&editor.edit(z, &eps_for(n, &[attr], e))?)?[attr];
            ok &= v > prev;
            prev = v;
        }
        good += usize::from(ok);
    }
    Ok(fraction(good, probes.len()))
}

/// Fraction of probes on which every attribute in `attrs` rises under the
/// simultaneous edit `+eps` on all of them.
pub fn joint_increase_fraction(editor: &EditorParams, regressor: &Regressor, probes: &[Vec<f64>], attrs: &[usize], eps: f64) -> Result<f64> {
    let n = editor.modules.len();
    let mut good = 0;
    for z in probes {
        let before = regressor.predict(z)?;
        let after = regressor.predict(&editor.edit(z, &eps_for(n, attrs, eps))?)?;
        good += usize::from(attrs.iter().all(|&k| after[k] > before[k]));
    }
    Ok(fraction(good, probes.len()))
}

/// Mean absolute change in predicted attributes under an edit of `attrs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityStats {
    /// Mean over probes and edited attributes.
    pub edited: f64,
    /// Mean over probes and the remaining attributes.
    pub others: f64,
}

impl IdentityStats {
    pub fn ratio(&self) -> f64 {
        self.others / self.edited
    }
}

pub fn identity_stats(editor: &EditorParams, regressor: &Regressor, probes: &[Vec<f64>], attrs: &[usize], eps: f64) -> Result<IdentityStats> {
    let n = editor.modules.len();
    let (mut edited, mut others) = (0.0, 0.0);
    for z in probes {
        let before = regressor.predict(z)?;
        let after = regressor.predict(&editor.edit(z, &eps_for(n, attrs, eps))?)?;
        for k in 0..n {
            let d = (after[k] - before[k]).abs();
            if attrs.contains(&k) {
                edited += d;
            } else {
                others += d;
            }
        }
    }
    let p = probes.len().max(1) as f64;
    Ok(IdentityStats {
        edited: edited / (p * attrs.len().max(1) as f64),
        others: if n > attrs.len() { others / (p * (n - attrs.len()) as f64) } else { 0.0 },
    })
}

/// Fraction of probes whose reconstructed body height grows under `+eps`
/// on `attr`, plus the per-probe `(before, after)` heights.
pub fn height_increase(
    decoder: &Decoder,
    editor: &EditorParams,
    probes: &[Vec<f64>],
    attr: usize,
    eps: f64,
    resolution: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let n = editor.modules.len();
    let mut heights = Vec::with_capacity(probes.len());
    for z in probes {
        let before = body_height(&reconstruct(decoder, z, resolution)?)?;
        let after = body_height(&reconstruct(decoder, &editor.edit(z, &eps_for(n, &[attr], eps))?, resolution)?)?;
        heights.push((before, after));
    }
    let good = heights.iter().filter(|(b, a)| a > b).count();
    Ok((fraction(good, probes.len()), heights))
}

fn fraction(good: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        good as f64 / total as f64
    }
}
