use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use seaspeed_core::clustering::{ClusterName, ClusterSet};
use seaspeed_core::efficiency::score_corpus;
use seaspeed_core::eval::{
    build_corpus, emit_reports, evaluate_trained, prepare, rebuild_reports, records_to_csv, run_experiment,
    GainTable, Prepared, Trained, TrainedManifest, TRAINED_MANIFEST_FILE,
};
use seaspeed_core::efficiency::MODEL_FILE_SCHEMA;
use seaspeed_core::eval::ModelKind;
use seaspeed_core::ingest::{
    annotate_voyage, dataset_stats, read_records_file, read_voyages, resample_1min, tag_voyages, write_voyages,
    Schema, INDEX_FILE,
};
use seaspeed_core::io::{fmt_f64, write_atomic, write_json};
use seaspeed_core::model::{Voyage, VoyageId};
use seaspeed_core::synth::{generate, write_corpus};
use seaspeed_core::weather::{attach_weather, GridSet};

use crate::config::PipelineConfig;

pub const EFFICIENCY_MODEL_FILE: &str = "efficiency_model.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("missing input {}", path.display());
    }
    Ok(())
}

fn load_fused(cfg: &PipelineConfig) -> anyhow::Result<Vec<Voyage>> {
    let dir = cfg.paths.fused_dir();
    require(&dir.join(INDEX_FILE)).context("run `seaspeed fuse` first")?;
    Ok(read_voyages(&dir)?)
}

fn prepared(cfg: &PipelineConfig) -> anyhow::Result<(Vec<Voyage>, Prepared)> {
    let corpus = load_fused(cfg)?;
    let prep = prepare(&corpus, &cfg.experiment)?;
    Ok((corpus, prep))
}

fn model_dir(cfg: &PipelineConfig, model: ModelKind, cluster: ClusterName) -> PathBuf {
    cfg.paths.models_dir().join(format!("{}_{}", model.as_str(), cluster.as_str()))
}

pub fn synth(cfg: &PipelineConfig) -> anyhow::Result<()> {
    cfg.synth.check_route(&cfg.route)?;
    let (grids, corpus) = generate(&cfg.synth)?;
    write_corpus(&cfg.paths.data_dir, &cfg.synth, &grids, &corpus)?;
    log::info!(
        "wrote {} voyages ({} records) to {}",
        corpus.truth.len(),
        corpus.track.len(),
        cfg.paths.data_dir.display()
    );
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let path = cfg.paths.records();
    require(&path)?;
    let parsed = read_records_file(&path, &Schema::default())?;
    if parsed.dropped > 0 {
        log::warn!("dropped {} malformed rows from {}", parsed.dropped, path.display());
    }
    let tagged = tag_voyages(&resample_1min(&parsed.records)?, &cfg.route, 0);
    let voyages = tagged
        .into_iter()
        .map(|v| annotate_voyage(v, &cfg.route))
        .collect::<seaspeed_core::Result<Vec<_>>>()?;
    if voyages.is_empty() {
        bail!("no complete voyages found in {}", path.display());
    }
    write_voyages(&cfg.paths.voyages_dir(), &voyages)?;
    log::info!("ingested {} voyages", voyages.len());
    Ok(())
}

pub fn fuse(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let dir = cfg.paths.voyages_dir();
    require(&dir.join(INDEX_FILE)).context("run `seaspeed ingest` first")?;
    let manifest = cfg.paths.grids_manifest();
    require(&manifest)?;
    let grids = GridSet::load(&manifest)?;
    let mut fused = Vec::new();
    for v in read_voyages(&dir)? {
        let id = v.id();
        match attach_weather(v, &grids) {
            Ok(v) => fused.push(v),
            Err(e) => log::warn!("dropping voyage {id}: {e}"),
        }
    }
    if fused.is_empty() {
        bail!("no voyage lies inside the weather grids");
    }
    write_voyages(&cfg.paths.fused_dir(), &fused)?;
    log::info!("fused weather into {} voyages", fused.len());
    Ok(())
}

pub fn calibrate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let (_, prep) = prepared(cfg)?;
    let path = cfg.paths.out_dir.join(EFFICIENCY_MODEL_FILE);
    prep.efficiency_model().save(&path)?;
    let c = prep.coeffs;
    println!("c0,c1,c2,c3");
    println!("{},{},{},{}", fmt_f64(c.c0), fmt_f64(c.c1), fmt_f64(c.c2), fmt_f64(c.c3));
    Ok(())
}

pub fn score(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let corpus = load_fused(cfg)?;
    let stats = dataset_stats(&corpus, &cfg.route)?;
    let (scored, _) = score_corpus(corpus)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["voyage_id", "direction", "fuel_total_l", "time_total_h", "distance_total_km", "eff_score"])?;
    for v in &scored {
        let t = v.totals().context("scored voyage without totals")?;
        w.write_record([
            v.id().to_string(),
            format!("{:?}", v.direction()),
            fmt_f64(t.fuel_total_l),
            fmt_f64(t.time_total_h),
            fmt_f64(t.distance_total_km),
            v.eff_score().map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    write_atomic(&cfg.paths.out_dir.join(SCORES_FILE), &w.into_inner()?)?;
    let table = stats.to_csv()?;
    write_atomic(&cfg.paths.out_dir.join(STATS_FILE), &table)?;
    print!("{}", String::from_utf8(table)?);
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    train_ids: &'a [VoyageId],
    test_ids: &'a [VoyageId],
    clusters: &'a ClusterSet,
}

pub fn cluster(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let (_, prep) = prepared(cfg)?;
    write_json(
        &cfg.paths.out_dir.join(CLUSTERS_FILE),
        &ClusterReport {
            train_ids: &prep.train_ids,
            test_ids: &prep.test_ids,
            clusters: &prep.clusters,
        },
    )?;
    println!("cluster,size");
    for c in ClusterName::ALL {
        println!("{c},{}", prep.clusters.get(c).len());
    }
    Ok(())
}

pub fn train(cfg: &PipelineConfig, model: ModelKind, cluster: ClusterName) -> anyhow::Result<()> {
    let (_, prep) = prepared(cfg)?;
    let members = prep.members(cluster);
    let s = &cfg.experiment.settings;
    let trained = Trained::train(model, &members, s, cfg.experiment.seed)?;
    let dir = model_dir(cfg, model, cluster);
    trained.save(
        &dir,
        &TrainedManifest {
            schema_version: MODEL_FILE_SCHEMA,
            model,
            cluster,
            members: members.iter().map(|v| v.id()).collect(),
            seed: cfg.experiment.seed,
        },
    )?;
    log::info!("saved {model} trained on {cluster} ({} voyages) to {}", members.len(), dir.display());
    Ok(())
}

pub fn optimize(cfg: &PipelineConfig, model: ModelKind, cluster: ClusterName) -> anyhow::Result<()> {
    let (corpus, prep) = prepared(cfg)?;
    let dir = model_dir(cfg, model, cluster);
    require(&dir.join(TRAINED_MANIFEST_FILE)).context("run `seaspeed train` first")?;
    let (trained, manifest) = Trained::load(&dir, &prep.train, &cfg.experiment.settings)?;
    let members: Vec<VoyageId> = prep.members(cluster).iter().map(|v| v.id()).collect();
    if manifest.model != model || manifest.cluster != cluster || manifest.members != members {
        bail!("{} was trained on a different split or cluster; retrain it", dir.display());
    }
    let (cases, _) = prep.test_cases(&corpus, &cfg.experiment);
    let out = evaluate_trained(&trained, &cases, cluster, model, &prep, &cfg.experiment)?;

    let outdir = cfg.paths.out_dir.join("optimize").join(format!("{}_{}", model.as_str(), cluster.as_str()));
    write_atomic(&outdir.join("records.csv"), &records_to_csv(&out.records)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["voyage_id", "step", "position", "sog_measured", "sog_optimized"])?;
    for (tc, p) in cases.iter().zip(&out.profiles) {
        for (i, (x, v)) in p.positions.iter().zip(&p.sog).enumerate() {
            w.write_record([
                tc.voyage.id().to_string(),
                i.to_string(),
                fmt_f64(*x),
                fmt_f64(tc.measured.sog[i]),
                fmt_f64(*v),
            ])?;
        }
    }
    write_atomic(&outdir.join("profiles.csv"), &w.into_inner()?)?;
    let table = GainTable::from_records(&out.records, &[])?;
    print!("{table}");
    Ok(())
}

pub fn evaluate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let records = cfg.paths.records();
    let manifest = cfg.paths.grids_manifest();
    require(&records)?;
    require(&manifest)?;
    let parsed = read_records_file(&records, &Schema::default())?;
    if parsed.dropped > 0 {
        log::warn!("dropped {} malformed rows from {}", parsed.dropped, records.display());
    }
    let grids = GridSet::load(&manifest)?;
    let corpus = build_corpus(&parsed.records, &cfg.route, &grids)?;
    log::info!("evaluating on {} voyages", corpus.len());
    let exp = run_experiment(&corpus, &cfg.experiment)?;
    emit_reports(&exp, cfg.experiment.plot_cluster, &cfg.paths.out_dir)?;
    if exp.summary.partial {
        log::warn!("{} jobs failed; see experiment.json", exp.summary.failures.len());
    }
    print!("{}", exp.gain_table);
    Ok(())
}

pub fn report(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let out = &cfg.paths.out_dir;
    require(&out.join(seaspeed_core::eval::RECORDS_FILE)).context("run `seaspeed evaluate` first")?;
    let table = rebuild_reports(out, cfg.experiment.plot_cluster)?;
    print!("{table}");
    Ok(())
}
