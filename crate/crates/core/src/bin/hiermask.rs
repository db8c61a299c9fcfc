use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hiermask::config::{load_config, PipelineConfig};
use hiermask::eval::evaluate;
use hiermask::io::{
    feature_file_name, list_files, read_annotation_sets, read_feature_grid, write_annotation_sets, write_atomic,
};
use hiermask::pipeline::{conquer_image, divide_image, run_images, ImageJob};
use hiermask::postprocess::collect_pseudo_labels;
use hiermask::{self_train_merge, unsam_plus_fuse, AnnotationSet};

#[derive(Parser)]
#[command(name = "hiermask", version, about = "Hierarchical pseudo-masks from patch feature grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Coarse masks from normalised cuts (or filtered proposals).
    Divide(Common),
    /// Coarse masks plus every part mask of their hierarchies, unsuppressed.
    Conquer(Common),
    /// Divide, conquer, refine and suppress duplicates.
    Pipeline(Common),
    /// Ground truth plus unsupervised masks that overlap no ground truth.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Unsupervised annotation file.
        #[arg(long)]
        unsup: PathBuf,
    },
    /// Pseudo labels plus confident model predictions.
    SelftrainMerge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Recall, precision and point-prompt metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preds: PathBuf,
        /// Also print the report as a text table on stdout.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// A UFG1 file or a directory of them.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Directory of per-mask crop grids named <image_id>_<mask_id>.ufg.
    #[arg(long)]
    crops: Option<PathBuf>,
    /// Annotation file of coarse masks used instead of normalised cuts.
    #[arg(long)]
    proposals: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    over: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated, strictly descending.
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    #[arg(long)]
    tau_self_train: Option<f64>,
    #[arg(long)]
    selftrain_dedup_iou: Option<f64>,
    #[arg(long)]
    tau_plus: Option<f64>,
    #[arg(long)]
    tau_ncut: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    min_patches: Option<usize>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    k_point: Option<usize>,
    #[arg(long)]
    min_area: Option<u64>,
    #[arg(long)]
    refine_delta: Option<f64>,
    #[arg(long)]
    refine_before_nms: Option<bool>,
    #[arg(long)]
    crop_side: Option<u32>,
    #[arg(long)]
    crop_patch_size: Option<u32>,
    #[arg(long)]
    dense_eigen_limit: Option<usize>,
    #[arg(long)]
    max_dets: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $over:ident, $($field:ident),*) => {
        $(if let Some(v) = $over.$field.clone() { $cfg.$field = v; })*
    };
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => PipelineConfig::default(),
        };
        let o = &self.over;
        apply!(
            cfg, o, tau, thetas, tau_self_train, selftrain_dedup_iou, tau_plus, tau_ncut, epsilon, t_max,
            min_patches, nms_iou, k_point, min_area, refine_delta, refine_before_nms, crop_side,
            crop_patch_size, dense_eigen_limit, max_dets
        );
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        for (slot, flag) in [
            (&mut cfg.features, &self.features),
            (&mut cfg.crops, &self.crops),
            (&mut cfg.proposals, &self.proposals),
            (&mut cfg.gt, &self.gt),
            (&mut cfg.out, &self.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing --{flag}"))
}

/// Whole-image grids keyed by image id. In a directory, `<a>_<digits>.ufg`
/// is a crop when `<a>.ufg` is present too.
fn global_feature_files(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
    if !path.is_dir() {
        let id = stem(path).ok_or_else(|| anyhow!("{}: bad file name", path.display()))?;
        if !path.exists() {
            bail!("{}: no such file", path.display());
        }
        return Ok(BTreeMap::from([(id, path.to_path_buf())]));
    }
    let files = list_files(path, "ufg")?;
    let stems: BTreeSet<String> = files.iter().filter_map(|p| stem(p)).collect();
    let is_crop = |s: &str| {
        s.rsplit_once('_').is_some_and(|(base, id)| {
            !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()) && stems.contains(base)
        })
    };
    let out: BTreeMap<String, PathBuf> = files
        .into_iter()
        .filter_map(|p| stem(&p).map(|s| (s, p)))
        .filter(|(s, _)| !is_crop(s))
        .collect();
    if out.is_empty() {
        bail!("{}: no feature grids found", path.display());
    }
    Ok(out)
}

fn jobs(cfg: &PipelineConfig, needs_proposals: bool) -> Result<Vec<ImageJob<'static>>> {
    let features = required(&cfg.features, "features")?;
    let mut proposals: BTreeMap<String, AnnotationSet> = match &cfg.proposals {
        Some(p) => read_annotation_sets(p)?
            .into_iter()
            .map(|s| (s.image_id.clone(), s))
            .collect(),
        None if needs_proposals => bail!("missing --proposals"),
        None => BTreeMap::new(),
    };
    let crop_dir = cfg
        .crops
        .clone()
        .or_else(|| features.is_dir().then(|| features.to_path_buf()));
    let mut out = Vec::new();
    for (id, path) in global_feature_files(features)? {
        let grid = read_feature_grid(&path)?;
        let mut job = ImageJob::new(id.clone(), grid);
        job.proposals = proposals.remove(&id);
        if cfg.proposals.is_some() && job.proposals.is_none() {
            bail!("no proposals for image `{id}`");
        }
        if let Some(dir) = crop_dir.clone() {
            job.crop = Box::new(move |mask| {
                let p = dir.join(feature_file_name(&id, Some(mask)));
                if p.is_file() {
                    read_feature_grid(&p).map(Some)
                } else {
                    Ok(None)
                }
            });
        }
        out.push(job);
    }
    if !proposals.is_empty() {
        bail!("proposals for images without features: {:?}", proposals.keys().collect::<Vec<_>>());
    }
    Ok(out)
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?)
}

fn pair_by_id(
    left: Vec<AnnotationSet>,
    right: Vec<AnnotationSet>,
    what: (&str, &str),
) -> Result<Vec<(AnnotationSet, AnnotationSet)>> {
    let mut r: BTreeMap<String, AnnotationSet> = right.into_iter().map(|s| (s.image_id.clone(), s)).collect();
    let mut out = Vec::new();
    for l in left {
        let m = r
            .remove(&l.image_id)
            .ok_or_else(|| anyhow!("image `{}` has {} but no {}", l.image_id, what.0, what.1))?;
        out.push((l, m));
    }
    if let Some(id) = r.keys().next() {
        bail!("image `{id}` has {} but no {}", what.1, what.0);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    use rayon::prelude::*;
    match cli.cmd {
        Cmd::Divide(c) => {
            let cfg = c.config()?;
            let out = required(&cfg.out, "out")?;
            let jobs = jobs(&cfg, false)?;
            let sets: Vec<AnnotationSet> = pool(&cfg)?.install(|| {
                jobs.par_iter()
                    .map(|j| {
                        let masks = divide_image(j, &cfg)?;
                        let (h, w) = (j.grid.pixel_height(), j.grid.pixel_width());
                        Ok(AnnotationSet::new(j.image_id.clone(), h, w).with_masks(masks))
                    })
                    .collect::<Result<_>>()
            })?;
            write_annotation_sets(out, &sets)?;
        }
        Cmd::Conquer(c) => {
            let cfg = c.config()?;
            let out = required(&cfg.out, "out")?;
            let jobs = jobs(&cfg, false)?;
            let sets: Vec<AnnotationSet> = pool(&cfg)?.install(|| {
                jobs.par_iter()
                    .map(|j| {
                        let coarse = divide_image(j, &cfg)?;
                        let (hs, _) = conquer_image(j, &coarse, &cfg)?;
                        let (h, w) = (j.grid.pixel_height(), j.grid.pixel_width());
                        Ok(collect_pseudo_labels(&j.image_id, h, w, &coarse, &hs, cfg.min_area)?)
                    })
                    .collect::<Result<_>>()
            })?;
            write_annotation_sets(out, &sets)?;
        }
        Cmd::Pipeline(c) => {
            let cfg = c.config()?;
            let out = required(&cfg.out, "out")?;
            let jobs = jobs(&cfg, false)?;
            let sets: Vec<AnnotationSet> = run_images(&jobs, &cfg)?.into_iter().map(|o| o.set).collect();
            write_annotation_sets(out, &sets)?;
        }
        Cmd::Fuse { common, unsup } => {
            let cfg = common.config()?;
            let out = required(&cfg.out, "out")?;
            let gt = read_annotation_sets(required(&cfg.gt, "gt")?)?;
            let pairs = pair_by_id(gt, read_annotation_sets(&unsup)?, ("ground truth", "unsupervised masks"))?;
            let sets = pairs
                .iter()
                .map(|(g, u)| unsam_plus_fuse(g, u, cfg.tau_plus))
                .collect::<hiermask::Result<Vec<_>>>()?;
            write_annotation_sets(out, &sets)?;
        }
        Cmd::SelftrainMerge {
            common,
            pseudo,
            predictions,
        } => {
            let cfg = common.config()?;
            let out = required(&cfg.out, "out")?;
            let pairs = pair_by_id(
                read_annotation_sets(&pseudo)?,
                read_annotation_sets(&predictions)?,
                ("pseudo labels", "predictions"),
            )?;
            let sets = pairs
                .iter()
                .map(|(p, q)| self_train_merge(p, q, cfg.tau_self_train, cfg.selftrain_dedup_iou))
                .collect::<hiermask::Result<Vec<_>>>()?;
            write_annotation_sets(out, &sets)?;
        }
        Cmd::Eval { common, preds, table } => {
            let cfg = common.config()?;
            let gts = read_annotation_sets(required(&cfg.gt, "gt")?)?;
            let preds = read_annotation_sets(&preds)?;
            let report = evaluate(&preds, &gts, cfg.max_dets, cfg.k_point)?;
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            match &cfg.out {
                Some(out) => write_atomic(out, json.as_bytes())?,
                None if !table => print!("{json}"),
                None => {}
            }
            if table {
                print!("{}", report.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()).context("hiermask failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
