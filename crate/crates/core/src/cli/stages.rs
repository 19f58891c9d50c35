use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sdfedit::editor::{train_editor, EditorParams, Variant};
use sdfedit::eval::{height_increase, identity_stats, monotone_fraction, reconstruction_table, select_probes};
use sdfedit::geometry::save_mesh;
use sdfedit::numerics::checkpoint::write_atomic;
use sdfedit::regressor::{latent_stats, train_regressor, Regressor};
use sdfedit::sdfnet::{project_latents, reconstruct, train_autodecoder, SdfModel};
use sdfedit::service::{self, CatalogEntry, SessionState};
use sdfedit::synthcars::{build_dataset, DatasetManifest, MANIFEST_FILE};
use sdfedit::Error;

use super::config::{config_hash, RunConfig};
use super::Command;

/// Attribute whose edits are checked against measured mesh height.
const HEIGHT_ATTRIBUTE: &str = "total_height";

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> anyhow::Result<()> {
    match cmd {
        Command::GenData { .. } => gen_data(cfg),
        Command::TrainSdf { .. } => train_sdf(cfg),
        Command::TrainRegressor { .. } => train_reg(cfg),
        Command::TrainEditor { .. } => train_edit(cfg),
        Command::Edit { shape, attrs, res, out, .. } => edit(cfg, shape, attrs, *res, out),
        Command::Reconstruct { shape, res, out } => recon(cfg, shape, *res, out),
        Command::Metrics { out, limit } => metrics(cfg, out.as_deref(), *limit),
        Command::Embed { out } => embed(cfg, out.as_deref()),
        Command::Serve { addr, .. } => serve(cfg, *addr),
    }
}

fn require(path: &Path, stage: &str) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage: stage.into(),
            path: path.to_path_buf(),
        })
    }
}

fn sidecar(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn load_manifest(cfg: &RunConfig) -> anyhow::Result<DatasetManifest> {
    let path = cfg.data_dir().join(MANIFEST_FILE);
    require(&path, "gen-data")?;
    Ok(DatasetManifest::load(&path)?)
}

fn load_sdf(cfg: &RunConfig) -> anyhow::Result<SdfModel> {
    let stem = cfg.sdf_stem();
    require(&sidecar(&stem), "train-sdf")?;
    Ok(SdfModel::load(&stem)?)
}

fn load_regressor(cfg: &RunConfig) -> anyhow::Result<Regressor> {
    let stem = cfg.regressor_stem();
    require(&sidecar(&stem), "train-regressor")?;
    Ok(Regressor::load(&stem)?.0)
}

fn load_editor(cfg: &RunConfig, v: Variant) -> anyhow::Result<EditorParams> {
    let stem = cfg.editor_stem_for(v);
    require(&sidecar(&stem), "train-editor")?;
    Ok(EditorParams::load(&stem)?)
}

fn announce<T: serde::Serialize>(stage: &str, config: &T, seed: u64) {
    log::info!("{stage}: config hash {} seed {seed}", config_hash(config));
}

fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    announce("gen-data", &cfg.dataset, cfg.dataset.seed);
    let m = build_dataset(&cfg.dataset, &cfg.data_dir())?;
    log::info!("wrote {} shapes to {}", m.shapes.len(), cfg.data_dir().display());
    Ok(())
}

fn train_sdf(cfg: &RunConfig) -> anyhow::Result<()> {
    let m = load_manifest(cfg)?;
    announce("train-sdf", &cfg.sdf, cfg.sdf.seed);
    let samples = (0..m.shapes.len()).map(|i| m.load_samples(i)).collect::<Result<Vec<_>, _>>()?;
    let model = train_autodecoder(&m.ids(), &samples, &cfg.sdf)?;
    fs::create_dir_all(&cfg.work_dir).with_context(|| format!("creating {}", cfg.work_dir.display()))?;
    model.save(&cfg.sdf_stem())?;
    log::info!("final loss {:.6}; saved {}", model.loss_curve.last().copied().unwrap_or(f64::NAN), cfg.sdf_stem().display());
    Ok(())
}

fn train_reg(cfg: &RunConfig) -> anyhow::Result<()> {
    let m = load_manifest(cfg)?;
    let sdf = load_sdf(cfg)?;
    announce("train-regressor", &cfg.regressor, cfg.regressor.seed);
    let ids = m.ids();
    let latents = ids
        .iter()
        .map(|id| sdf.latent_by_id(id).map(<[f64]>::to_vec).with_context(|| format!("shape `{id}` missing from the latent table")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (r, metrics) = train_regressor(&ids, &latents, &m.labels(), &m.attribute_names, &cfg.regressor)?;
    for (name, mae) in m.attribute_names.iter().zip(&metrics.val_mae) {
        log::info!("held-out MAE {name}: {mae:.4}");
    }
    r.save(&cfg.regressor_stem(), &metrics)?;
    Ok(())
}

fn train_edit(cfg: &RunConfig) -> anyhow::Result<()> {
    let r = load_regressor(cfg)?;
    let sdf = load_sdf(cfg)?;
    announce("train-editor", &cfg.editor, cfg.editor.seed);
    let (mean, std) = latent_stats(&sdf.latent_rows());
    let e = train_editor(&r, &mean, &std, &cfg.editor)?;
    e.save(&cfg.editor_stem())?;
    log::info!("saved {}", cfg.editor_stem().display());
    Ok(())
}

fn shape_latent(sdf: &SdfModel, shape: &str) -> anyhow::Result<Vec<f64>> {
    sdf.latent_by_id(shape).map(<[f64]>::to_vec).with_context(|| format!("unknown shape `{shape}`"))
}

fn edit(cfg: &RunConfig, shape: &str, attrs: &[(String, f64)], res: usize, out: &Path) -> anyhow::Result<()> {
    let sdf = load_sdf(cfg)?;
    let e = load_editor(cfg, cfg.editor.variant)?;
    let z = shape_latent(&sdf, shape)?;
    let eps = e.eps_vector(attrs)?;
    let z2 = e.edit(&z, &eps)?;
    save_mesh(&reconstruct(&sdf.decoder, &z2, res)?, out)?;
    let mut report = json!({ "shape": shape, "eps": eps, "latent": z2 });
    if sidecar(&cfg.regressor_stem()).exists() {
        let r = load_regressor(cfg)?;
        let names = &r.attribute_names;
        let pack = |v: Vec<f64>| Value::Object(names.iter().cloned().zip(v.into_iter().map(Value::from)).collect());
        report["before"] = pack(r.predict(&z)?);
        report["after"] = pack(r.predict(&z2)?);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn recon(cfg: &RunConfig, shape: &str, res: usize, out: &Path) -> anyhow::Result<()> {
    let sdf = load_sdf(cfg)?;
    let z = shape_latent(&sdf, shape)?;
    save_mesh(&reconstruct(&sdf.decoder, &z, res)?, out)?;
    Ok(())
}

fn metrics(cfg: &RunConfig, out: Option<&Path>, limit: Option<usize>) -> anyhow::Result<()> {
    let mut m = load_manifest(cfg)?;
    let sdf = load_sdf(cfg)?;
    if let Some(n) = limit {
        m.shapes.truncate(n);
    }
    let mc = &cfg.metrics;
    let table = reconstruction_table(&m, &sdf, &mc.chamfer())?;
    let mut report = json!({
        "reconstruction": {
            "settings": mc.chamfer(),
            "passed": table.iter().filter(|r| r.pass).count(),
            "total": table.len(),
            "shapes": table,
        },
    });
    if sidecar(&cfg.regressor_stem()).exists() {
        let (r, rm) = Regressor::load(&cfg.regressor_stem())?;
        report["regressor"] = json!({
            "attributes": r.attribute_names,
            "train_mae": rm.train_mae,
            "val_mae": rm.val_mae,
        });
        let latents = sdf.latent_rows();
        let mut editing = serde_json::Map::new();
        for v in [Variant::Mlp, Variant::Kan] {
            if !sidecar(&cfg.editor_stem_for(v)).exists() {
                continue;
            }
            let e = load_editor(cfg, v)?;
            let top = mc.probe_eps.iter().copied().fold(0.0, f64::max);
            let mut per_attr = serde_json::Map::new();
            for (k, name) in e.attribute_names.iter().enumerate() {
                let probes = select_probes(&r, &latents, &[k], top, mc.probes)?;
                let mut entry = json!({
                    "probes": probes.len(),
                    "monotone_fraction": monotone_fraction(&e, &r, &probes, k, &mc.probe_eps)?,
                    "identity": identity_stats(&e, &r, &probes, &[k], top)?,
                });
                if name == HEIGHT_ATTRIBUTE {
                    let (frac, _) = height_increase(&sdf.decoder, &e, &probes, k, top, mc.resolution)?;
                    entry["height_increase_fraction"] = json!(frac);
                }
                per_attr.insert(name.clone(), entry);
            }
            editing.insert(format!("{v:?}").to_lowercase(), Value::Object(per_attr));
        }
        report["editing"] = Value::Object(editing);
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.work_dir.join("metrics.json"));
    write_atomic(&path, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn embed(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let sdf = load_sdf(cfg)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.work_dir.join("embed"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows = sdf.latent_rows();
    let p = project_latents(&rows, 2)?;
    let mut coords = String::from("id,x,y\n");
    let mut raw = String::from("id");
    for j in 0..rows.first().map_or(0, Vec::len) {
        write!(raw, ",z{j}")?;
    }
    raw.push('\n');
    for ((id, c), z) in sdf.shape_ids.iter().zip(&p.coords).zip(&rows) {
        writeln!(coords, "{id},{},{}", c[0], c[1])?;
        raw.push_str(id);
        for v in z {
            write!(raw, ",{v}")?;
        }
        raw.push('\n');
    }
    write_atomic(&dir.join("coords.csv"), coords.as_bytes())?;
    write_atomic(&dir.join("latents.csv"), raw.as_bytes())?;
    log::info!("explained variance {:?}; wrote {}", p.explained_variance_ratio, dir.display());
    Ok(())
}

fn serve(cfg: &RunConfig, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let sdf = load_sdf(cfg)?;
    let r = load_regressor(cfg)?;
    let e = load_editor(cfg, cfg.editor.variant)?;
    if e.attribute_names != r.attribute_names {
        bail!("editor and regressor attribute lists differ");
    }
    let mut h = Sha256::new();
    for stem in [cfg.sdf_stem(), cfg.regressor_stem(), cfg.editor_stem()] {
        let p = sidecar(&stem);
        h.update(fs::read(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    let hash = hex::encode(h.finalize());
    let catalog = sdf
        .shape_ids
        .iter()
        .enumerate()
        .map(|(i, id)| CatalogEntry {
            id: id.clone(),
            name: id.clone(),
            latent: sdf.latent(i).to_vec(),
        })
        .collect();
    let state = SessionState::new(sdf.decoder, r, e, catalog, cfg.service.clone(), hash);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(state, addr))?;
    Ok(())
}
