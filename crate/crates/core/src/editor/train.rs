use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::direction::{EditorConfig, EditorParams};
use super::loss::{edit_loss_tape, EditLossVars};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::regressor::Regressor;

/// One training batch: source latents, edit strengths (zero for attributes
/// left alone) and the regressor's attributes of the source latents.
#[derive(Clone, Debug, PartialEq)]
pub struct EditBatch {
    pub z: Tensor,
    pub eps: Tensor,
    pub alpha: Tensor,
}

impl EditBatch {
    /// Pseudo ground truth `alpha + eps`.
    pub fn target(&self) -> Tensor {
        let mut t = self.alpha.clone();
        t.add_assign(&self.eps);
        t
    }
}

/// Draw a batch: `z` from the diagonal normal of the latent statistics,
/// a nonempty attribute subset per row and `eps ~ U(-1, 1)` resampled until
/// `alpha + eps` lands in `[0, 1]`.
pub fn sample_batch<R: Rng>(editor: &EditorParams, regressor: &Regressor, rng: &mut R) -> Result<EditBatch> {
    let cfg = &editor.config;
    let (b, d, n) = (cfg.batch_size, editor.latent_dim, editor.modules.len());
    let zs: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            editor
                .latent_mean
                .iter()
                .zip(&editor.latent_std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let alpha = regressor.predict_batch(&zs)?;
    let mut eps = vec![0.0; b * n];
    for (r, a) in alpha.iter().enumerate() {
        let k = if n == 1 || rng.gen_bool(cfg.single_prob) {
            1
        } else {
            rng.gen_range(2..=cfg.max_attributes.clamp(2, n))
        };
        for i in sample(rng, n, k) {
            eps[r * n + i] = loop {
                let e: f64 = rng.gen_range(-1.0..1.0);
                if (0.0..=1.0).contains(&(a[i] + e)) {
                    break e;
                }
            };
        }
    }
    Ok(EditBatch {
        z: Tensor::matrix(b, d, zs.concat()),
        eps: Tensor::matrix(b, n, eps),
        alpha: Tensor::matrix(b, n, alpha.concat()),
    })
}

/// Editing loss of `batch` with editor parameters bound as `bound` and the
/// regressor's parameters bound (normally frozen) as `reg_bound`.
pub fn batch_loss(
    tape: &mut Tape,
    editor: &EditorParams,
    bound: &[Var],
    regressor: &Regressor,
    reg_bound: &[Var],
    batch: &EditBatch,
) -> Result<EditLossVars> {
    if regressor.attribute_names.len() != editor.modules.len() || regressor.latent_dim != editor.latent_dim {
        return Err(Error::InvalidArgument("editor and regressor disagree on attributes or latent size".into()));
    }
    let z = tape.constant(batch.z.clone());
    let z_edit = editor.edit_tape(tape, bound, z, &batch.eps)?;
    let pred = regressor.forward(tape, reg_bound, z_edit)?;
    let target = tape.constant(batch.target());
    let c = &editor.config;
    Ok(edit_loss_tape(tape, pred, target, z, z_edit, c.lambda_reg, c.lambda_content, c.swapped_bce))
}

/// Train a fresh editor against a frozen regressor. Returns the editor with
/// its per-step loss curve filled in.
pub fn train_editor(regressor: &Regressor, latent_mean: &[f64], latent_std: &[f64], config: &EditorConfig) -> Result<EditorParams> {
    let mut editor = EditorParams::new(config, &regressor.attribute_names, latent_mean, latent_std)?;
    if regressor.latent_dim != editor.latent_dim {
        return Err(Error::shape("latent stats", &[regressor.latent_dim], &[editor.latent_dim]));
    }
    // the batch stream gets its own generator so it does not depend on how
    // many draws parameter initialization used
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ed17);
    let mut state = AdamState::new(editor.store.params());
    let adam = AdamConfig::with_lr(config.lr);
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sample_batch(&editor, regressor, &mut rng)?;
        let mut tape = Tape::new();
        let bound = editor.store.bind(&mut tape);
        let reg_bound = regressor.store.bind_frozen(&mut tape);
        let loss = batch_loss(&mut tape, &editor, &bound, regressor, &reg_bound, &batch)?;
        let lv = tape.value(loss.total).item();
        if !lv.is_finite() {
            return Err(Error::Diverged {
                stage: "train-editor",
                step,
                loss: lv,
            });
        }
        curve.push(lv);
        if step % 500 == 0 {
            log::info!(
                "editor step {step}: loss {lv:.5} (reg {:.5}, content {:.6})",
                tape.value(loss.reg).item(),
                tape.value(loss.content).item()
            );
        }
        let mut grads = tape.backward(loss.total);
        let g: Vec<Tensor> = bound
            .iter()
            .zip(editor.store.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        adam_step(editor.store.params_mut(), &g, &mut state, &adam)?;
    }
    editor.loss_curve = curve;
    Ok(editor)
}
