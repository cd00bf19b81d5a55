use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mitosis_core::classification::train_classifier;
use mitosis_core::detection::train_detector;
use mitosis_core::split::make_split;
use mitosis_core::translation::{train_translation, TranslationModel};
use mitosis_tools::checkpoint_io::{load_checkpoint, save_checkpoint};
use mitosis_tools::clock::SystemClock;
use mitosis_tools::config::AppConfig;
use mitosis_tools::crops::write_crop_dataset;
use mitosis_tools::manifest::{load_split, save_split, write_synth_dataset, ManifestFile};
use mitosis_tools::report::{format_table, write_report_csv};
use mitosis_tools::results::{group_by_slide, read_records, write_results};
use mitosis_tools::workflows::{self, Partition};

/// Stain-robust mitotic figure detection.
#[derive(Parser)]
#[command(name = "mitosis", version)]
struct Cli {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Data {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Split file; without it every annotated-scanner slide is used.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with manifest and PNG slides.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Partition the annotated slides into train, validation and test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the unpaired stain translation model.
    TranslateTrain {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the candidate detector.
    DetectTrain {
        #[command(flatten)]
        data: Data,
        /// Translation checkpoint applied to training slides.
        #[arg(long)]
        translation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the crop classifier; validation crops come from the split.
    ClassifyTrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        translation: Option<PathBuf>,
        /// Also write the augmented training crops here.
        #[arg(long)]
        crops_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write `slide_id,x,y,prob` records.
    Run {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum, default_value_t = Partition::Test)]
        partition: Partition,
        #[arg(long)]
        translation: Option<PathBuf>,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score result records against the manifest annotations.
    Evaluate {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum, default_value_t = Partition::Test)]
        partition: Partition,
        #[arg(long)]
        results: PathBuf,
        /// Per-slide and aggregate scores as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn open(data: &Data) -> Result<(ManifestFile, Option<mitosis_core::split::SplitSpec>)> {
    let mf = ManifestFile::load(&data.manifest)?;
    let split = data.split.as_deref().map(load_split).transpose()?;
    Ok((mf, split))
}

fn load_translation(path: Option<&Path>) -> Result<Option<TranslationModel>> {
    path.map(|p| -> Result<TranslationModel> {
        let ck = load_checkpoint(p, mitosis_core::checkpoint::Stage::Translation)?;
        TranslationModel::from_checkpoint(&ck).with_context(|| format!("{}", p.display()))
    })
    .transpose()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = AppConfig::load_or_default(cli.config.as_deref())?;
    let pipeline = cfg.pipeline();
    match cli.command {
        Command::SynthData { out, seed } => {
            let m = write_synth_dataset(&out, &cfg.synth, seed)?;
            println!("wrote {} slides, {} annotations to {}", m.slides.len(), m.annotations.len(), out.display());
        }
        Command::Split { manifest, out } => {
            let mf = ManifestFile::load(&manifest)?;
            let slides: Vec<_> = mf
                .manifest
                .slides
                .iter()
                .filter(|s| !s.scanner.is_reference())
                .map(|s| (s.slide_id.clone(), Some(s.scanner)))
                .collect();
            let s = make_split(&slides, &cfg.split)?;
            save_split(&out, &s)?;
            println!("train {} / val {} / test {}", s.train_ids.len(), s.val_ids.len(), s.test_ids.len());
        }
        Command::TranslateTrain { data, out } => {
            let (mf, split) = open(&data)?;
            let ids = workflows::select_slides(&mf, split.as_ref(), Partition::Train);
            let (a, b) = workflows::translation_patches(&mf, &ids, &pipeline, cfg.training.translation_patches_per_slide)?;
            if b.is_empty() {
                bail!("no reference-scanner patches with tissue in {}", data.manifest.display());
            }
            println!("training translation on {} + {} patches", a.len(), b.len());
            let (model, hist) = train_translation(&a, &b, &cfg.translation)?;
            let last = hist.epochs.last().map_or(hist.initial_cycle, |e| e.cycle);
            println!("cycle loss {:.4} -> {:.4}", hist.initial_cycle, last);
            save_checkpoint(&out, &model.to_checkpoint(Some(&hist), hist.epochs.len() as u64)?)?;
        }
        Command::DetectTrain { data, translation, out } => {
            let (mf, split) = open(&data)?;
            let ids = workflows::select_slides(&mf, split.as_ref(), Partition::Train);
            let tm = load_translation(translation.as_deref())?;
            let tm = tm.as_ref().filter(|_| cfg.training.translate_training_slides);
            let tiles = workflows::detector_training_set(&mf, &ids, tm, &pipeline)?;
            println!("training detector on {} tiles", tiles.len());
            let (model, hist) = train_detector(&tiles, &cfg.detector)?;
            if let Some(l) = hist.loss.last() {
                println!("final loss {l:.4}");
            }
            save_checkpoint(&out, &model.to_checkpoint(Some(&hist))?)?;
        }
        Command::ClassifyTrain {
            manifest,
            split,
            translation,
            crops_dir,
            out,
        } => {
            let mf = ManifestFile::load(&manifest)?;
            let split = load_split(&split)?;
            let tm = load_translation(translation.as_deref())?;
            let tm = tm.as_ref().filter(|_| cfg.training.translate_training_slides);
            let train = workflows::classifier_crops(&mf, &split.train_ids, tm, &pipeline, true)?;
            let val = workflows::classifier_crops(&mf, &split.val_ids, tm, &pipeline, false)?;
            if let Some(dir) = crops_dir {
                write_crop_dataset(&dir, &train)?;
            }
            println!("training classifier on {} crops, validating on {}", train.len(), val.len());
            let (model, hist) = train_classifier(&train, &val, &cfg.classifier)?;
            println!("best epoch {} of {}{}", hist.best_epoch, hist.epochs.len(), if hist.stopped_early { " (stopped early)" } else { "" });
            save_checkpoint(&out, &model.to_checkpoint(Some(&hist))?)?;
        }
        Command::Run {
            data,
            partition,
            translation,
            detector,
            classifier,
            out,
        } => {
            let (mf, split) = open(&data)?;
            let ids = workflows::select_slides(&mf, split.as_ref(), partition);
            let models = workflows::load_models(translation.as_deref(), &detector, &classifier)?;
            for w in workflows::threshold_mismatches(&models, &pipeline) {
                eprintln!("warning: {w}");
            }
            let results = workflows::run_slides(&mf, &ids, &models, &pipeline, &SystemClock::new())?;
            for r in &results {
                let t = &r.timings;
                println!(
                    "{}: {} mitoses from {} candidates, {}/{} patches with tissue, {:.2}s/{:.2}s/{:.2}s",
                    r.slide_id,
                    r.mitoses.len(),
                    r.candidates_total,
                    r.patches_with_tissue,
                    r.patches_total,
                    t.translation_s,
                    t.detection_s,
                    t.classification_s
                );
            }
            write_results(&out, &results)?;
        }
        Command::Evaluate {
            data,
            partition,
            results,
            report,
        } => {
            let (mf, split) = open(&data)?;
            let ids = workflows::select_slides(&mf, split.as_ref(), partition);
            let dets = group_by_slide(&read_records(&results)?);
            let rep = workflows::evaluate_points(&mf, &ids, &dets, &cfg.evaluation)?;
            print!("{}", format_table(&rep, cfg.evaluation.per_slide));
            if let Some(path) = report {
                write_report_csv(&path, &rep, cfg.evaluation.per_slide)?;
            }
        }
    }
    Ok(())
}
