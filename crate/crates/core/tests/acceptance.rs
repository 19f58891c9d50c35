//! End-to-end acceptance suite. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance` runs everything; pass substrings
//! after `--` to run a subset, e.g. `-- gradient reconstruction`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdfedit::editor::{batch_loss, edit_loss, edit_loss_tape, sample_batch, train_editor, EditorConfig, EditorParams, Variant};
use sdfedit::eval::{height_increase, identity_stats, joint_increase_fraction, monotone_fraction, reconstruction_table, select_probes, ChamferSettings};
use sdfedit::geometry::{marching_cubes, signed_distance, Mesh, ScalarGrid, Vec3};
use sdfedit::numerics::{grad_check, Param, Tensor, GRAD_CHECK_STEP};
use sdfedit::regressor::{latent_stats, train_regressor, Regressor, RegressorConfig, RegressorMetrics};
use sdfedit::sdfnet::{position_features, train_autodecoder, Decoder, DecoderConfig, SdfModel, SdfTrainConfig};
use sdfedit::synthcars::{build_dataset, DatasetConfig, DatasetManifest};

/// Cars in the reconstruction and ablation corpus.
const RECON_CARS: usize = 8;
const RECON_EPOCHS: usize = 500;
const ABLATION_EPOCHS: usize = 700;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
/// Cars in the corpus the regressor and editors are trained on.
const EDIT_CARS: usize = 56;
const EDIT_SDF_EPOCHS: usize = 400;
const EDIT_POINTS_PER_SHAPE: usize = 512;
const PROBES: usize = 20;
const PROBE_STEPS: [f64; 3] = [0.1, 0.2, 0.3];
const PROBE_EPS: f64 = 0.3;
const HEIGHT_RESOLUTION: usize = 64;

type Check = Result<(bool, String), String>;
type Rows = Vec<Vec<f64>>;

struct Criterion {
    name: &'static str,
    run: fn() -> Vec<(String, Check)>,
}

fn single(name: &str, c: Check) -> Vec<(String, Check)> {
    vec![(name.to_string(), c)]
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { name: "gradient fidelity", run: || single("gradient fidelity", gradient_fidelity()) },
        Criterion { name: "geometry oracles", run: || single("geometry oracles", geometry_oracles()) },
        Criterion { name: "loss formulas", run: || single("loss formulas", loss_formulas()) },
        Criterion { name: "position-encoding ablation", run: || single("position-encoding ablation", ablation()) },
        Criterion { name: "reconstruction", run: || single("reconstruction", reconstruction()) },
        Criterion { name: "regressor", run: || single("regressor", regressor_mae()) },
        Criterion { name: "editing mlp", run: || editing(Variant::Mlp) },
        Criterion { name: "editing kan", run: || editing(Variant::Kan) },
        Criterion { name: "multi-attribute", run: multi_attribute },
        Criterion { name: "determinism", run: || single("determinism", determinism()) },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let results = (c.run)();
        let secs = t.elapsed().as_secs_f64();
        for (name, r) in results {
            ran += 1;
            let (tag, detail) = match r {
                Ok((true, d)) => ("PASS", d),
                Ok((false, d)) => ("FAIL", d),
                Err(e) => ("FAIL", format!("error: {e}")),
            };
            failed += usize::from(tag == "FAIL");
            println!("{tag} {name}: {detail} [{secs:.1}s]");
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

fn decoder_grad(seed: u64) -> Result<f64, String> {
    let cfg = DecoderConfig {
        latent_dim: 4,
        hidden_width: 8,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Decoder::new(cfg.clone(), &mut rng).map_err(err)?;
    let pts: Vec<Vec3> = (0..4).map(|_| [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]).collect();
    let pos = position_features(&pts, cfg.feature_bands());
    let mut params = d.store.params().to_vec();
    // Zero-initialized biases can put ReLU inputs exactly on the kink.
    for p in &mut params {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    params.push(Param {
        name: "z".into(),
        value: Tensor::randn(&[4, 4], 0.3, &mut rng),
    });
    grad_check(&mut params, GRAD_CHECK_STEP, |tape, vars| {
        let n = vars.len();
        let pv = tape.constant(pos.clone());
        let y = d.forward(tape, &vars[..n - 1], vars[n - 1], pv)?;
        let sq = tape.mul(y, y);
        Ok(tape.sum(sq))
    })
    .map_err(err)
}

/// Small regressor on 6-d latents with attributes smooth in the first coordinates.
fn toy_regressor(seed: u64, epochs: usize) -> Result<(Regressor, Rows, Rows), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.gen_range(-0.2..0.2)).collect()).collect();
    let y: Vec<Vec<f64>> = z.iter().map(|z| vec![0.5 + 2.0 * z[0], 0.5 + z[1] - z[0], 0.5 - z[2]]).collect();
    let ids: Vec<String> = (0..40).map(|i| format!("s{i}")).collect();
    let cfg = RegressorConfig {
        hidden: vec![8, 8, 4],
        epochs,
        lr: 3e-3,
        seed,
        ..Default::default()
    };
    let (r, _) = train_regressor(&ids, &z, &y, &["a".into(), "b".into(), "c".into()], &cfg).map_err(err)?;
    Ok((r, z, y))
}

fn regressor_grad(seed: u64) -> Result<f64, String> {
    let (r, z, y) = toy_regressor(seed, 30)?;
    let x = Tensor::matrix(8, 6, z[..8].concat());
    let t = Tensor::matrix(8, 3, y[..8].concat());
    let mut params = r.store.params().to_vec();
    grad_check(&mut params, GRAD_CHECK_STEP, |tape, vars| {
        let xv = tape.constant(x.clone());
        let tv = tape.constant(t.clone());
        let p = r.forward(tape, vars, xv)?;
        Ok(tape.mse(p, tv))
    })
    .map_err(err)
}

fn editor_grad(variant: Variant, seed: u64) -> Result<f64, String> {
    let (r, z, _) = toy_regressor(seed, 100)?;
    let (mean, std) = latent_stats(&z);
    let cfg = EditorConfig {
        variant,
        mlp_hidden: 8,
        kan_hidden: 3,
        steps: 30,
        batch_size: 4,
        lr: 3e-3,
        seed,
        ..Default::default()
    };
    // A few steps so no layer sits at its zero initialization.
    let e = train_editor(&r, &mean, &std, &cfg).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let batch = sample_batch(&e, &r, &mut rng).map_err(err)?;
    let mut params = e.store.params().to_vec();
    grad_check(&mut params, GRAD_CHECK_STEP, |tape, vars| {
        let rb = r.store.bind_frozen(tape);
        Ok(batch_loss(tape, &e, vars, &r, &rb, &batch)?.total)
    })
    .map_err(err)
}

fn edit_loss_grad(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d) = (4, 3, 5);
    let target = Tensor::matrix(b, n, (0..b * n).map(|_| rng.gen_range(0.0..1.0)).collect());
    let mut params = vec![
        Param {
            name: "pred".into(),
            value: Tensor::matrix(b, n, (0..b * n).map(|_| rng.gen_range(0.05..0.95)).collect()),
        },
        Param {
            name: "z".into(),
            value: Tensor::randn(&[b, d], 0.5, &mut rng),
        },
        Param {
            name: "z_edit".into(),
            value: Tensor::randn(&[b, d], 0.5, &mut rng),
        },
    ];
    grad_check(&mut params, GRAD_CHECK_STEP, |tape, vars| {
        let t = tape.constant(target.clone());
        Ok(edit_loss_tape(tape, vars[0], t, vars[1], vars[2], 1.0, 8.0, false).total)
    })
    .map_err(err)
}

fn gradient_fidelity() -> Check {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    type Probe = fn(u64) -> Result<f64, String>;
    let probes: [(&str, Probe); 5] = [
        ("decoder", decoder_grad),
        ("regressor", regressor_grad),
        ("mlp editor", |s| editor_grad(Variant::Mlp, s)),
        ("kan editor", |s| editor_grad(Variant::Kan, s)),
        ("edit loss", edit_loss_grad),
    ];
    for (name, f) in probes {
        let mut w: f64 = 0.0;
        for seed in 0..10 {
            w = w.max(f(seed)?);
        }
        worst.push((name, w));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((max < 1e-4, format!("max relative error over 10 seeds each < 1e-4 ({detail})")))
}

// ---------------------------------------------------------------- geometry

fn box_sdf(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let c: Vec<f64> = (0..3).map(|i| 0.5 * (lo[i] + hi[i])).collect();
    let h: Vec<f64> = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).collect();
    let q: Vec<f64> = (0..3).map(|i| (p[i] - c[i]).abs() - h[i]).collect();
    let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    outside + q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0)
}

fn geometry_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lo, hi) = ([-0.4, -0.3, -0.2], [0.5, 0.3, 0.25]);
    let cube = Mesh::cuboid(lo, hi);
    let mut cube_err: f64 = 0.0;
    for _ in 0..500 {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        cube_err = cube_err.max((signed_distance(&cube, p).map_err(err)?.value - box_sdf(p, lo, hi)).abs());
    }

    // Outside a polyhedron inscribed in the sphere, the nearest point along a
    // ray through a vertex is that vertex, so |p| - r is exact there.
    let r = 0.5;
    let sphere = Mesh::uv_sphere([0.0; 3], r, 24, 48);
    let mut sphere_err: f64 = 0.0;
    let mut sign_ok = true;
    for (i, v) in sphere.vertices.iter().enumerate().step_by(7) {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let t = 1.0 + 0.8 * ((i % 10) as f64 + 1.0) / 10.0;
        let p = [v[0] / n * r * t, v[1] / n * r * t, v[2] / n * r * t];
        sphere_err = sphere_err.max((signed_distance(&sphere, p).map_err(err)?.value - (r * t - r)).abs());
        let inside = [p[0] * 0.3 / t, p[1] * 0.3 / t, p[2] * 0.3 / t];
        sign_ok &= signed_distance(&sphere, inside).map_err(err)?.value < 0.0;
    }

    let grid = ScalarGrid::from_fn(64, -1.0, 1.0, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r);
    let mc = marching_cubes(&grid, 0.0).map_err(err)?;
    let diag = grid.cell_diagonal();
    let mc_dev = mc.vertices.iter().map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - r).abs()).fold(0.0, f64::max);
    let edges_ok = mc.edge_use_counts().values().all(|&c| c == 2);

    let pass = cube_err <= 1e-6 && sphere_err <= 1e-6 && sign_ok && mc_dev <= diag && edges_ok && !mc.is_empty();
    Ok((
        pass,
        format!(
            "cube max err {cube_err:.1e}, sphere max err {sphere_err:.1e} (<= 1e-6), interior signs {sign_ok}; \
             marching cubes r=0.5 @64: max deviation {mc_dev:.2e} <= cell diagonal {diag:.2e}, every edge shared by two triangles {edges_ok}"
        ),
    ))
}

// ---------------------------------------------------------------- losses

fn loss_formulas() -> Check {
    let defaults = EditorConfig::default();
    let (l1, l2) = (defaults.lambda_reg, defaults.lambda_content);

    let ln2 = edit_loss(&[0.5], &[0.5], &[0.2, -0.1], &[0.2, -0.1], l1, l2, false).map_err(err)?;
    let ln2_ok = (ln2.reg - std::f64::consts::LN_2).abs() <= 1e-9 && ln2.content == 0.0 && (ln2.total - l1 * std::f64::consts::LN_2).abs() <= 1e-9;

    // Predictions at 1 are clamped to 1 - 1e-7 before the log.
    let zero = edit_loss(&[1.0, 1.0], &[1.0, 1.0], &[0.0; 3], &[0.0; 3], l1, l2, false).map_err(err)?;
    let zero_expected = -(-1e-7f64).ln_1p();
    let zero_ok = (zero.reg - zero_expected).abs() <= 1e-9 && zero.reg < 1e-6;

    let z = [0.3, -0.2, 0.1, 0.0];
    let z2 = [0.4, -0.2, 0.1, 0.0];
    let c = edit_loss(&[0.5], &[0.5], &z, &z2, l1, l2, false).map_err(err)?;
    let content_ok = (c.content - 0.01).abs() <= 1e-9 && (c.total - c.reg - 0.08).abs() <= 1e-9;

    let defaults_ok = l1 == 1.0 && l2 == 8.0;
    Ok((
        ln2_ok && zero_ok && content_ok && defaults_ok,
        format!(
            "ln2 case reg {:.10}, perfect case reg {:.3e}, content case {:.10} (+{:.10}); defaults lambda_reg {l1}, lambda_content {l2}",
            ln2.reg,
            zero.reg,
            c.content,
            c.total - c.reg
        ),
    ))
}

// ---------------------------------------------------------------- corpora

fn scratch_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn corpus(name: &str, count: usize, seed: u64) -> Result<DatasetManifest, String> {
    let cfg = DatasetConfig {
        count,
        seed,
        ..Default::default()
    };
    build_dataset(&cfg, &scratch_dir().join(name)).map_err(err)
}

fn train(m: &DatasetManifest, cfg: &SdfTrainConfig) -> Result<SdfModel, String> {
    let samples = (0..m.shapes.len()).map(|i| m.load_samples(i)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    train_autodecoder(&m.ids(), &samples, cfg).map_err(err)
}

fn recon_corpus() -> Result<&'static DatasetManifest, String> {
    static M: OnceLock<Result<DatasetManifest, String>> = OnceLock::new();
    M.get_or_init(|| corpus("recon", RECON_CARS, 1)).as_ref().map_err(Clone::clone)
}

fn ablation() -> Check {
    let m = recon_corpus()?;
    let t = Instant::now();
    let mut means = [0.0; 2];
    let mut finals = [Vec::new(), Vec::new()];
    for (k, pe) in [true, false].into_iter().enumerate() {
        for seed in ABLATION_SEEDS {
            let mut cfg = SdfTrainConfig {
                epochs: ABLATION_EPOCHS,
                seed,
                ..Default::default()
            };
            cfg.decoder.positional_encoding = pe;
            let model = train(m, &cfg)?;
            finals[k].push(*model.loss_curve.last().expect("non-empty curve"));
        }
        means[k] = finals[k].iter().sum::<f64>() / finals[k].len() as f64;
    }
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    Ok((
        means[0] <= means[1] && minutes < 30.0,
        format!(
            "{RECON_CARS} cars, {} seeds, {ABLATION_EPOCHS} epochs in {minutes:.1} min (< 30): mean final loss with encoding {:.5} <= without {:.5} (per seed {:?} vs {:?})",
            ABLATION_SEEDS.len(),
            means[0],
            means[1],
            finals[0].iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
            finals[1].iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>()
        ),
    ))
}

fn reconstruction() -> Check {
    let m = recon_corpus()?;
    let model = train(
        m,
        &SdfTrainConfig {
            epochs: RECON_EPOCHS,
            ..Default::default()
        },
    )?;
    let rows = reconstruction_table(m, &model, &ChamferSettings::default()).map_err(err)?;
    let passed = rows.iter().filter(|r| r.pass).count();
    let worst = rows.iter().map(|r| r.chamfer / r.tau).fold(0.0, f64::max);
    Ok((
        passed == rows.len() && rows.len() == RECON_CARS,
        format!("{passed}/{} cars with chamfer <= tau (3x analytic re-extraction at 64^3); worst chamfer/tau {worst:.2}", rows.len()),
    ))
}

struct Pipeline {
    sdf: SdfModel,
    latents: Vec<Vec<f64>>,
    regressor: Regressor,
    metrics: RegressorMetrics,
    mlp: EditorParams,
    kan: EditorParams,
}

impl Pipeline {
    fn editor(&self, v: Variant) -> &EditorParams {
        match v {
            Variant::Mlp => &self.mlp,
            Variant::Kan => &self.kan,
        }
    }
}

fn build_pipeline() -> Result<Pipeline, String> {
    let t = Instant::now();
    let m = corpus("edit", EDIT_CARS, 11)?;
    let sdf = train(
        &m,
        &SdfTrainConfig {
            epochs: EDIT_SDF_EPOCHS,
            points_per_shape: EDIT_POINTS_PER_SHAPE,
            ..Default::default()
        },
    )?;
    let ids = m.ids();
    let latents: Vec<Vec<f64>> = ids.iter().map(|id| sdf.latent_by_id(id).expect("trained shape").to_vec()).collect();
    let (regressor, metrics) = train_regressor(&ids, &latents, &m.labels(), &m.attribute_names, &RegressorConfig::default()).map_err(err)?;
    let (mean, std) = latent_stats(&latents);
    let mlp = train_editor(&regressor, &mean, &std, &EditorConfig::default()).map_err(err)?;
    let kan = train_editor(
        &regressor,
        &mean,
        &std,
        &EditorConfig {
            variant: Variant::Kan,
            ..Default::default()
        },
    )
    .map_err(err)?;
    eprintln!("editing pipeline trained in {:.1}s", t.elapsed().as_secs_f64());
    Ok(Pipeline {
        sdf,
        latents,
        regressor,
        metrics,
        mlp,
        kan,
    })
}

fn pipeline() -> Result<&'static Pipeline, String> {
    static P: OnceLock<Result<Pipeline, String>> = OnceLock::new();
    P.get_or_init(build_pipeline).as_ref().map_err(Clone::clone)
}

fn regressor_mae() -> Check {
    let p = pipeline()?;
    let names = &p.regressor.attribute_names;
    let worst = p.metrics.val_mae.iter().copied().fold(0.0, f64::max);
    let detail = names.iter().zip(&p.metrics.val_mae).map(|(n, v)| format!("{n} {v:.3}")).collect::<Vec<_>>().join(", ");
    Ok((worst < 0.1 && p.metrics.val_mae.len() == names.len(), format!("held-out MAE < 0.1 per attribute ({detail})")))
}

fn editing(v: Variant) -> Vec<(String, Check)> {
    let tag = match v {
        Variant::Mlp => "mlp",
        Variant::Kan => "kan",
    };
    let p = match pipeline() {
        Ok(p) => p,
        Err(e) => return single(&format!("editing {tag}"), Err(e)),
    };
    let e = p.editor(v);
    let r = &p.regressor;
    let names = &r.attribute_names;
    let mut out = Vec::new();

    let a = (|| -> Check {
        let mut worst = (1.0, String::new());
        let mut parts = Vec::new();
        for (k, name) in names.iter().enumerate() {
            let probes = select_probes(r, &p.latents, &[k], PROBE_EPS, PROBES).map_err(err)?;
            if probes.len() < PROBES {
                return Err(format!("only {} probes for {name}", probes.len()));
            }
            let f = monotone_fraction(e, r, &probes, k, &PROBE_STEPS).map_err(err)?;
            parts.push(format!("{name} {f:.2}"));
            if f < worst.0 {
                worst = (f, name.clone());
            }
        }
        Ok((worst.0 >= 0.8, format!("strictly increasing over eps 0.1/0.2/0.3 on >= 80% of {PROBES} probes ({})", parts.join(", "))))
    })();
    out.push((format!("editing {tag} (a) monotone"), a));

    let b = (|| -> Check {
        let k = e.attribute_index("total_height").map_err(err)?;
        let probes = select_probes(r, &p.latents, &[k], PROBE_EPS, PROBES).map_err(err)?;
        let (f, h) = height_increase(&p.sdf.decoder, e, &probes, k, PROBE_EPS, HEIGHT_RESOLUTION).map_err(err)?;
        let mean_gain = h.iter().map(|(b, a)| a - b).sum::<f64>() / h.len().max(1) as f64;
        Ok((
            f >= 0.7 && probes.len() == PROBES,
            format!("measured height grows at eps 0.3 on {:.0}% of {} probes (>= 70%), mean gain {mean_gain:.4}", 100.0 * f, probes.len()),
        ))
    })();
    out.push((format!("editing {tag} (b) height"), b));

    let c = (|| -> Check {
        let mut worst = 0.0;
        let mut parts = Vec::new();
        for (k, name) in names.iter().enumerate() {
            let probes = select_probes(r, &p.latents, &[k], PROBE_EPS, PROBES).map_err(err)?;
            let s = identity_stats(e, r, &probes, &[k], PROBE_EPS).map_err(err)?;
            parts.push(format!("{name} {:.2}", s.ratio()));
            worst = f64::max(worst, s.ratio());
        }
        Ok((worst <= 0.5, format!("mean |d other| / |d edited| <= 0.5 at eps 0.3 ({})", parts.join(", "))))
    })();
    out.push((format!("editing {tag} (c) identity"), c));

    let d = (|| -> Check {
        let zero = vec![0.0; names.len()];
        let mut same = 0;
        for z in &p.latents {
            let z2 = e.edit(z, &zero).map_err(err)?;
            same += usize::from(z2.iter().zip(z).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        Ok((same == p.latents.len(), format!("eps = 0 returns z bit-exactly for {same}/{} latents", p.latents.len())))
    })();
    out.push((format!("editing {tag} (d) zero edit"), d));
    out
}

fn multi_attribute() -> Vec<(String, Check)> {
    let p = match pipeline() {
        Ok(p) => p,
        Err(e) => return single("multi-attribute", Err(e)),
    };
    [Variant::Mlp, Variant::Kan]
        .into_iter()
        .map(|v| {
            let e = p.editor(v);
            let r = &p.regressor;
            let check = (|| -> Check {
                let attrs = [e.attribute_index("hood_length").map_err(err)?, e.attribute_index("wheelbase").map_err(err)?];
                let probes = select_probes(r, &p.latents, &attrs, PROBE_EPS, PROBES).map_err(err)?;
                let f = joint_increase_fraction(e, r, &probes, &attrs, PROBE_EPS).map_err(err)?;
                let s = identity_stats(e, r, &probes, &attrs, PROBE_EPS).map_err(err)?;
                Ok((
                    probes.len() == PROBES && f >= 0.7 && s.ratio() <= 0.5,
                    format!(
                        "+0.3 hood_length and wheelbase both rise on {:.0}% of {} probes (>= 70%); other/edited change ratio {:.2} (<= 0.5)",
                        100.0 * f,
                        probes.len(),
                        s.ratio()
                    ),
                ))
            })();
            (format!("multi-attribute {v:?}").to_lowercase(), check)
        })
        .collect()
}

// ---------------------------------------------------------------- determinism

const TINY_RUN: &str = r#"{
    "dataset": {"count": 6, "mesh_resolution": 32, "sampling": {"n_surface": 2000, "n_uniform": 400}},
    "sdf": {"epochs": 40, "points_per_shape": 256, "batch_size": 512,
            "decoder": {"latent_dim": 8, "hidden_width": 32}},
    "regressor": {"epochs": 50},
    "editor": {"steps": 50, "batch_size": 16},
    "metrics": {"resolution": 24, "chamfer_points": 500, "probes": 3}
}"#;

fn run_pipeline(work: &Path) -> Result<(), String> {
    let cfg = work.join("run.json");
    std::fs::create_dir_all(work).map_err(err)?;
    std::fs::write(&cfg, TINY_RUN).map_err(err)?;
    let stages: [&[&str]; 7] = [
        &["gen-data"],
        &["train-sdf"],
        &["train-regressor"],
        &["train-editor", "--variant", "mlp"],
        &["train-editor", "--variant", "kan"],
        &["metrics"],
        &["embed"],
    ];
    for args in stages {
        let out = Command::new(env!("CARGO_BIN_EXE_sdfedit"))
            .arg("--config")
            .arg(&cfg)
            .arg("--work")
            .arg(work)
            .arg("--quiet")
            .args(args)
            .output()
            .map_err(err)?;
        if !out.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let a = scratch_dir().join("det_a");
    let b = scratch_dir().join("det_b");
    run_pipeline(&a)?;
    run_pipeline(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    if fa != fb {
        return Ok((false, "runs produced different file sets".into()));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two full pipeline runs", fa.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    ))
}
